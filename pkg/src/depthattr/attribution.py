"""Input feature attribution for depth models: Saliency, Integrated Gradients, Attention Rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .models import AttentionStack, Model, predict

METHOD_TAGS = ("saliency", "integrated_gradients", "attention_rollout", "random")
PSI_OPS = {"mean": np.mean, "min": np.min, "max": np.max}


@dataclass(frozen=True)
class RelevanceMap:
    scores: np.ndarray  # (H, W), non-negative
    method: str
    signed: np.ndarray | None = None  # IG only: channel-summed signed attributions

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ValueError(f"relevance scores must be (H, W), got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)) or np.any(self.scores < 0):
            raise ValueError("relevance scores must be finite and non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    @property
    def degenerate(self) -> bool:
        """True when every pixel has the same score, so ranking is tie-break only."""
        return bool(self.scores.max() == self.scores.min())


@dataclass(frozen=True)
class RolloutConfig:
    psi: str = "min"
    residual_weight: float = 0.5
    # "received": attention mass flowing into each input patch (column totals of M0).
    # "row": the literal row totals of M0.
    direction: str = "received"

    def __post_init__(self):
        if self.psi not in PSI_OPS:
            raise ValueError(f"psi must be one of {sorted(PSI_OPS)}, got {self.psi!r}")
        if self.residual_weight != 0.5:
            raise ValueError("residual_weight is fixed at 1/2")
        if self.direction not in ("received", "row"):
            raise ValueError(f"direction must be 'received' or 'row', got {self.direction!r}")


def scalarize_depth(depth):
    """Mean predicted depth; keeps the graph when given a Tensor."""
    if isinstance(depth, ad.Tensor):
        return ad.mean(depth)
    return float(np.mean(depth))


def input_gradients(model: Model, images: np.ndarray) -> np.ndarray:
    """d mean(depth) / d image for each image in a ``(B, H, W, 3)`` stack.

    Images are independent through the model, so the gradient of the summed
    per-image means gives every per-image gradient in one backward pass.
    """
    x = ad.Tensor(images)
    depth = model.forward(x).depth
    total = ad.sum(ad.mean(depth, axis=(-2, -1)))
    return ad.backward(total, x).values


def input_gradient(model: Model, image: np.ndarray) -> np.ndarray:
    return input_gradients(model, np.asarray(image, dtype=np.float64)[None])[0]


def saliency_map(model: Model, image: np.ndarray) -> RelevanceMap:
    g = input_gradient(model, image)
    return RelevanceMap(np.abs(g).max(axis=-1), "saliency")


def integrated_gradient_channels(
    model: Model,
    image: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = 200,
    batch_size: int = 50,
) -> np.ndarray:
    """Per-channel signed IG, shape (H, W, C), from a right Riemann sum on the straight path."""
    image = np.asarray(image, dtype=np.float64)
    baseline = np.zeros_like(image) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if baseline.shape != image.shape:
        raise ValueError(f"baseline shape {baseline.shape} does not match image {image.shape}")
    if steps < 1:
        raise ValueError(f"integrated_gradients needs steps >= 1, got {steps}")
    diff = image - baseline
    alphas = np.arange(1, steps + 1) / steps
    total = np.zeros_like(image)
    for start in range(0, steps, batch_size):
        a = alphas[start:start + batch_size]
        path = baseline + a[:, None, None, None] * diff
        total += input_gradients(model, path).sum(axis=0)
    return diff * total / steps


def integrated_gradients(
    model: Model,
    image: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = 200,
    batch_size: int = 50,
) -> RelevanceMap:
    """IG relevance map; ``signed`` holds the channel sum and ``scores`` its absolute value."""
    signed = integrated_gradient_channels(model, image, baseline, steps, batch_size).sum(axis=-1)
    return RelevanceMap(np.abs(signed), "integrated_gradients", signed=signed)


def aggregate_heads(layer_attn: np.ndarray, psi: str = "min") -> np.ndarray:
    """Combine one layer's ``(heads, n, n)`` attention into a single row-stochastic matrix."""
    layer_attn = np.asarray(layer_attn, dtype=np.float64)
    if layer_attn.ndim != 3 or layer_attn.shape[0] == 0:
        raise ValueError(f"expected (heads >= 1, n, n) attention, got {layer_attn.shape}")
    if psi not in PSI_OPS:
        raise ValueError(f"psi must be one of {sorted(PSI_OPS)}, got {psi!r}")
    b = PSI_OPS[psi](layer_attn, axis=0)
    if psi != "mean":
        rows = b.sum(axis=1, keepdims=True)
        n = b.shape[1]
        # a row with no mass left after min-aggregation carries no preference
        b = np.where(rows > 0, b / np.where(rows > 0, rows, 1.0), 1.0 / n)
    return b


def rollout_layers(b_list) -> np.ndarray:
    """Residual-aware product of per-layer matrices, first layer leftmost.

    Starts from the last layer's matrix unchanged and left-multiplies each
    earlier layer's ``B / 2 + I / 2``.
    """
    mats = [np.asarray(b, dtype=np.float64) for b in b_list]
    if not mats:
        raise ValueError("rollout_layers needs at least one layer")
    n = mats[0].shape[0]
    for i, b in enumerate(mats):
        if b.shape != (n, n):
            raise ValueError(f"layer {i} matrix has shape {b.shape}, expected ({n}, {n})")
    m = mats[-1]
    eye = np.eye(n)
    for b in reversed(mats[:-1]):
        m = (0.5 * b + 0.5 * eye) @ m
    return m


def column_sum(m0: np.ndarray, direction: str = "row") -> np.ndarray:
    """Per-patch totals of the rolled-out matrix.

    ``direction="row"`` sums each row (s_i = sum_j M0[i, j]); ``"received"``
    sums each column, i.e. the attention mass landing on each input patch.
    """
    m0 = np.asarray(m0, dtype=np.float64)
    if m0.ndim != 2 or m0.shape[0] != m0.shape[1]:
        raise ValueError(f"expected a square matrix, got {m0.shape}")
    if direction == "row":
        return m0.sum(axis=1)
    if direction == "received":
        return m0.sum(axis=0)
    raise ValueError(f"direction must be 'row' or 'received', got {direction!r}")


def patch_scores_to_pixels(scores: np.ndarray, image_dims: tuple[int, int]) -> np.ndarray:
    h, w = image_dims
    n = scores.size
    p = math.isqrt(h * w // n) if n else 0
    if p == 0 or h % p or w % p or (h // p) * (w // p) != n:
        raise ValueError(f"{n} patches do not tile an image of {h}x{w}")
    grid = scores.reshape(h // p, w // p)
    return np.repeat(np.repeat(grid, p, axis=0), p, axis=1)


def attention_rollout(
    attn: AttentionStack,
    config: RolloutConfig | None = None,
    image_dims: tuple[int, int] = (32, 32),
) -> RelevanceMap:
    config = config or RolloutConfig()
    b_list = [aggregate_heads(layer, config.psi) for layer in attn.matrices]
    s = column_sum(rollout_layers(b_list), config.direction)
    pixels = patch_scores_to_pixels(s, image_dims)
    return RelevanceMap(np.clip(pixels, 0.0, None), "attention_rollout")


def attention_rollout_map(model: Model, image: np.ndarray, config: RolloutConfig | None = None) -> RelevanceMap:
    if model.kind != "attention":
        raise ValueError(f"attention rollout needs an attention model, got kind {model.kind!r}")
    _, stack = predict(model, image)
    return attention_rollout(stack, config, image.shape[:2])


def random_relevance(image: np.ndarray, seed: int = 0) -> RelevanceMap:
    """Uniform random scores: the chance-level reference for the evaluation."""
    rng = np.random.default_rng(seed)
    return RelevanceMap(rng.uniform(0.0, 1.0, size=image.shape[:2]), "random")


@dataclass(frozen=True)
class AttributionSettings:
    ig_steps: int = 200
    rollout: RolloutConfig = RolloutConfig()
    seed: int = 0


def requires_attention(method: str) -> bool:
    return method == "attention_rollout"


def explain(model: Model, image: np.ndarray, method: str, settings: AttributionSettings | None = None) -> RelevanceMap:
    """Dispatch to one attribution method by its tag."""
    settings = settings or AttributionSettings()
    fns: dict[str, Callable[[], RelevanceMap]] = {
        "saliency": lambda: saliency_map(model, image),
        "integrated_gradients": lambda: integrated_gradients(model, image, steps=settings.ig_steps),
        "attention_rollout": lambda: attention_rollout_map(model, image, settings.rollout),
        "random": lambda: random_relevance(image, settings.seed),
    }
    if method not in fns:
        raise ValueError(f"unknown attribution method {method!r}; expected one of {METHOD_TAGS}")
    return fns[method]()


def save_relevance(relevance: RelevanceMap, path) -> None:
    """Text grid: header ``H W method`` then one line of ``W`` floats per row.

    Floats are written with Python's round-trip repr, so reloading is exact.
    """
    h, w = relevance.shape
    lines = [f"{h} {w} {relevance.method}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in relevance.scores]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def load_relevance(path) -> RelevanceMap:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    h, w, method = lines[0].split()
    h, w = int(h), int(w)
    scores = np.array([[float(v) for v in line.split()] for line in lines[1:1 + h]], dtype=np.float64)
    if scores.shape != (h, w):
        raise ValueError(f"{path}: grid is {scores.shape}, header says ({h}, {w})")
    return RelevanceMap(scores, method)
