"""Sweep configuration and execution: methods x perturbations x fractions over a dataset."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import attribution
from .attribution import AttributionSettings, RolloutConfig, requires_attention, save_relevance
from .dataset import SyntheticSource, load_dataset
from .metrics import (
    CellSummary,
    DepthErrorPair,
    EvalRecord,
    aggregate,
    aggregates_to_csv,
    aggregates_to_json,
    attribution_fidelity,
    faithfulness_estimate,
    records_to_csv,
    records_to_json,
    rmse,
)
from .models import ArchSpec, Model, build_model, load_model, predict, predict_batch, train
from .perturbation import PerturbSpec, make_perturber, select_pixels
from .render import render_depth, render_image, render_relevance
from .scenes import generate_dataset

log = logging.getLogger(__name__)

DEFAULT_METHODS = ("saliency", "integrated_gradients", "attention_rollout")
DEFAULT_FRACTIONS = (0.01, 0.05, 0.10)
DEFAULT_IG_STEPS = 200
DEFAULT_PSI = "min"
DEFAULT_GAUSSIAN_MU = 0.0
DEFAULT_GAUSSIAN_SIGMA = 0.8
DEFAULT_FGSM_EPSILON = 3.0
DEFAULT_FE_BINS = 16
DEFAULT_RENDER_COUNT = 8
DEFAULT_LEARNING_RATE = 0.01


def default_perturbations() -> list[dict]:
    return [
        {"kind": "black"},
        {"kind": "gaussian", "mu": DEFAULT_GAUSSIAN_MU, "sigma": DEFAULT_GAUSSIAN_SIGMA},
        {"kind": "fgsm", "epsilon": DEFAULT_FGSM_EPSILON},
    ]


class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    # model: a saved file, or a fresh seeded build optionally trained on synthetic scenes
    model_path: str | None = None
    model_kind: str = "attention"
    model_seed: int = 0
    arch: dict = field(default_factory=dict)
    train_epochs: int = 0
    train_count: int = 64
    train_seed: int = 1000
    learning_rate: float = DEFAULT_LEARNING_RATE
    # dataset: a directory of images, or the synthetic generator
    dataset_dir: str | None = None
    dataset_seed: int = 7
    dataset_count: int = 32
    methods: list[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    perturbations: list[dict] = field(default_factory=default_perturbations)
    fractions: list[float] = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    ig_steps: int = DEFAULT_IG_STEPS
    rollout_psi: str = DEFAULT_PSI
    rollout_direction: str = "received"
    fe_bins: int = DEFAULT_FE_BINS
    output_dir: str = "runs/sweep"
    seed: int = 0
    render_count: int = DEFAULT_RENDER_COUNT
    render_all: bool = False
    workers: int = 1

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in attribution.METHOD_TAGS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; expected some of {attribution.METHOD_TAGS}")
        if not self.perturbations:
            raise ConfigError("perturbations must be non-empty")
        if not self.fractions:
            raise ConfigError("fractions must be non-empty")
        for f in self.fractions:
            if not 0 < f <= 0.5:
                raise ConfigError(f"fraction {f} outside (0, 0.5]")
        if self.ig_steps < 1:
            raise ConfigError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if self.fe_bins < 2:
            raise ConfigError(f"fe_bins must be >= 2, got {self.fe_bins}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        try:
            self.perturb_specs()
            self.rollout_config()
            ArchSpec(**self.arch)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def perturb_specs(self) -> list[PerturbSpec]:
        return [PerturbSpec(**p) for p in self.perturbations]

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(psi=self.rollout_psi, direction=self.rollout_direction)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.update(overrides or {})
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with ``value`` parsed as JSON when possible, else kept as a string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not key=value")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def prepare_model(cfg: SweepConfig) -> Model:
    if cfg.model_path:
        return load_model(cfg.model_path)
    model = build_model(cfg.model_kind, ArchSpec(**cfg.arch), cfg.model_seed)
    if cfg.train_epochs > 0:
        a = model.arch
        scenes = generate_dataset(cfg.train_seed, cfg.train_count, a.height, a.width)
        model, history = train(model, scenes, cfg.train_epochs, cfg.learning_rate)
        log.info("trained %s model: loss %.4f -> %.4f", model.kind, history[0], history[-1])
    return model


@dataclass
class SweepResult:
    records: list[EvalRecord]
    cells: list[CellSummary]
    skipped: list[str]
    failures: list[tuple[str, str]]
    artifacts: list[Path]


def _image_seed(global_seed: int, index: int) -> int:
    return global_seed * 1_000_003 + index


def evaluate_image(model: Model, image_id: str, image: np.ndarray, index: int, cfg: SweepConfig, methods) -> tuple[list[EvalRecord], dict]:
    """All records for one image, plus its relevance maps for rendering."""
    seed = _image_seed(cfg.seed, index)
    settings = AttributionSettings(ig_steps=cfg.ig_steps, rollout=cfg.rollout_config(), seed=seed)
    specs = [replace(s, seed=seed) for s in cfg.perturb_specs()]
    base = predict_batch(model, image[None])[0]
    records, maps = [], {}
    for method in methods:
        relevance = attribution.explain(model, image, method, settings)
        maps[method] = relevance
        for spec in specs:
            perturb = make_perturber(spec, model, image)
            fe = faithfulness_estimate(model, image, relevance, perturb, cfg.fe_bins).value
            for fraction in cfg.fractions:
                x_rel = perturb(select_pixels(relevance, fraction, "top"))
                x_irr = perturb(select_pixels(relevance, fraction, "bottom"))
                d_rel, d_irr = predict_batch(model, np.stack([x_rel, x_irr]))
                pair = DepthErrorPair(rmse(d_rel, base), rmse(d_irr, base))
                records.append(
                    EvalRecord(image_id, method, spec.kind, fraction, pair.r_err, pair.i_err, attribution_fidelity(pair), fe)
                )
    return records, maps


def run_sweep(cfg: SweepConfig, model: Model | None = None, write: bool = True) -> SweepResult:
    cfg.validate()
    model = model or prepare_model(cfg)
    source = cfg.dataset_dir if cfg.dataset_dir else SyntheticSource(cfg.dataset_seed, cfg.dataset_count)
    scenes = load_dataset(source, model.arch.height, model.arch.width)

    methods, skipped = [], []
    for m in cfg.methods:
        if requires_attention(m) and model.kind != "attention":
            note = f"{m}: skipped, needs an attention model (got {model.kind})"
            log.warning(note)
            skipped.append(note)
        else:
            methods.append(m)

    def work(item):
        index, scene = item
        try:
            return evaluate_image(model, scene.name, scene.image, index, cfg, methods), None
        except Exception as exc:  # per-image failures are recorded, not fatal
            log.error("image %s failed: %s", scene.name, exc)
            return None, (scene.name, f"{type(exc).__name__}: {exc}")

    items = list(enumerate(scenes))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outcomes = list(pool.map(work, items))
    else:
        outcomes = [work(it) for it in items]

    records, failures, all_maps = [], [], []
    for (index, scene), (result, failure) in zip(items, outcomes):
        if failure:
            failures.append(failure)
            continue
        recs, maps = result
        records.extend(recs)
        all_maps.append((index, scene, maps))
    cells = aggregate(records)
    result = SweepResult(records, cells, skipped, failures, [])
    if write:
        result.artifacts = _write_outputs(cfg, model, result, all_maps)
    return result


def _write_outputs(cfg: SweepConfig, model: Model, result: SweepResult, all_maps) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "records.csv": records_to_csv(result.records),
        "records.json": records_to_json(result.records),
        "aggregate.csv": aggregates_to_csv(result.cells),
        "aggregate.json": aggregates_to_json(result.cells),
        "summary.json": json.dumps(
            {"config": asdict(cfg), "skipped": result.skipped, "failures": result.failures},
            indent=1,
            sort_keys=True,
        )
        + "\n",
    }
    written = []
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    limit = len(all_maps) if cfg.render_all else cfg.render_count
    renders = out / "renders"
    for index, scene, maps in all_maps[:limit]:
        stem = f"{index:04d}_{scene.name}"
        written.append(render_image(scene.image, renders / f"{stem}_input.png"))
        depth, _ = predict(model, scene.image)
        written.append(render_depth(depth, renders / f"{stem}_depth.png"))
        for method, relevance in maps.items():
            written.append(render_relevance(relevance, renders / f"{stem}_{method}.png"))
            path = renders / f"{stem}_{method}.txt"
            save_relevance(relevance, path)
            written.append(path)
    return written
