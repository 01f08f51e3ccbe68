"""Feature attribution and perturbation-based evaluation for toy monocular depth models."""

from .attribution import (
    RelevanceMap,
    RolloutConfig,
    aggregate_heads,
    attention_rollout,
    column_sum,
    integrated_gradient_channels,
    integrated_gradients,
    rollout_layers,
    saliency_map,
    scalarize_depth,
)
from .metrics import asr, attribution_fidelity, faithfulness_estimate, rmse
from .models import ArchSpec, build_model, predict, train
from .scenes import generate_scene

__version__ = "0.1.0"
