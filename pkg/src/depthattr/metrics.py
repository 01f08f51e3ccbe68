"""Depth errors under perturbation and the scores built on them."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .attribution import RelevanceMap
from .models import Model, predict_batch
from .perturbation import PixelMask, rank_pixels

RECORD_COLUMNS = ("image_id", "method", "perturbation", "fraction", "rRMSE", "iRMSE", "AF", "FE")
AGGREGATE_COLUMNS = ("method", "perturbation", "percent", "rRMSE", "iRMSE", "ASR", "FE", "AF")


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rmse: shapes {a.shape} and {b.shape} differ")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class DepthErrorPair:
    r_err: float
    i_err: float


def depth_error_pair(model: Model, x, x_rel, x_irr) -> DepthErrorPair:
    depths = predict_batch(model, np.stack([x, x_rel, x_irr]))
    return DepthErrorPair(rmse(depths[1], depths[0]), rmse(depths[2], depths[0]))


def attribution_fidelity(pair: DepthErrorPair) -> float:
    r, i = abs(pair.r_err), abs(pair.i_err)
    if r + i == 0:
        return 0.0
    return (r - i) / (r + i)


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    method: str
    perturbation: str
    fraction: float
    r_err: float
    i_err: float
    af: float
    fe: float

    @property
    def pair(self) -> DepthErrorPair:
        return DepthErrorPair(self.r_err, self.i_err)

    def row(self) -> dict:
        return {
            "image_id": self.image_id,
            "method": self.method,
            "perturbation": self.perturbation,
            "fraction": self.fraction,
            "rRMSE": self.r_err,
            "iRMSE": self.i_err,
            "AF": self.af,
            "FE": self.fe,
        }


def asr(records: Sequence[EvalRecord]) -> float:
    """Share of records whose relevant-pixel error strictly exceeds the irrelevant one."""
    if not records:
        raise ValueError("asr: empty record set")
    return sum(r.r_err > r.i_err for r in records) / len(records)


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation, or None when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return None
    return float(np.clip((dx @ dy) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class FaithfulnessResult:
    value: float
    degenerate: bool
    group_relevance: np.ndarray
    group_error: np.ndarray

    def __float__(self) -> float:
        return self.value


def rank_groups(relevance: RelevanceMap, bins: int) -> list[np.ndarray]:
    """Split the full descending ranking into ``bins`` contiguous groups of flat indices."""
    order = rank_pixels(relevance)
    if not 2 <= bins <= order.size:
        raise ValueError(f"bins must be in [2, {order.size}], got {bins}")
    return np.array_split(order, bins)


def faithfulness_estimate(
    model: Model,
    image: np.ndarray,
    relevance: RelevanceMap,
    perturb: Callable[[PixelMask], np.ndarray],
    bins: int = 16,
    batch_size: int = 64,
) -> FaithfulnessResult:
    """Correlation between each rank group's mean relevance and the depth error it causes.

    ``perturb`` maps a mask to a perturbed copy of ``image`` (see
    :func:`depthattr.perturbation.make_perturber`). Every group is perturbed
    on its own and compared with the unperturbed prediction.
    """
    h, w = relevance.shape
    flat_scores = relevance.scores.reshape(-1)
    groups = rank_groups(relevance, bins)
    fraction = 1.0 / bins
    variants = []
    for g in groups:
        sel = np.zeros(h * w, dtype=bool)
        sel[g] = True
        variants.append(perturb(PixelMask(sel.reshape(h, w), fraction, "group")))
    base = predict_batch(model, np.asarray(image)[None])[0]
    errors = []
    for start in range(0, len(variants), batch_size):
        for d in predict_batch(model, np.stack(variants[start:start + batch_size])):
            errors.append(rmse(d, base))
    group_rel = np.array([flat_scores[g].mean() for g in groups])
    group_err = np.array(errors)
    r = pearson(group_rel, group_err)
    return FaithfulnessResult(0.0 if r is None else r, r is None, group_rel, group_err)


@dataclass(frozen=True)
class CellSummary:
    method: str
    perturbation: str
    fraction: float
    r_rmse: float
    i_rmse: float
    asr: float
    fe: float
    af: float
    count: int

    @property
    def percent(self) -> float:
        return round(self.fraction * 100, 10)

    def row(self) -> dict:
        return {
            "method": self.method,
            "perturbation": self.perturbation,
            "percent": self.percent,
            "rRMSE": self.r_rmse,
            "iRMSE": self.i_rmse,
            "ASR": self.asr,
            "FE": self.fe,
            "AF": self.af,
        }


def aggregate_cell(records: Sequence[EvalRecord]) -> CellSummary:
    """Means of per-image values; AF is averaged per image, not recomputed from mean errors."""
    if not records:
        raise ValueError("aggregate_cell: empty record set")
    first = records[0]
    return CellSummary(
        method=first.method,
        perturbation=first.perturbation,
        fraction=first.fraction,
        r_rmse=float(np.mean([r.r_err for r in records])),
        i_rmse=float(np.mean([r.i_err for r in records])),
        asr=asr(records),
        fe=float(np.mean([r.fe for r in records])),
        af=float(np.mean([r.af for r in records])),
        count=len(records),
    )


def aggregate(records: Iterable[EvalRecord]) -> list[CellSummary]:
    """One summary per (method, perturbation, fraction), in first-seen order."""
    cells: dict[tuple, list[EvalRecord]] = {}
    for r in records:
        cells.setdefault((r.method, r.perturbation, r.fraction), []).append(r)
    return [aggregate_cell(v) for v in cells.values()]


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    return _to_csv([r.row() for r in records], RECORD_COLUMNS)


def records_to_json(records: Sequence[EvalRecord]) -> str:
    return json.dumps([r.row() for r in records], indent=1) + "\n"


def records_from_csv(text: str) -> list[EvalRecord]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(
            EvalRecord(
                image_id=row["image_id"],
                method=row["method"],
                perturbation=row["perturbation"],
                fraction=float(row["fraction"]),
                r_err=float(row["rRMSE"]),
                i_err=float(row["iRMSE"]),
                af=float(row["AF"]),
                fe=float(row["FE"]),
            )
        )
    return out


def aggregates_to_csv(cells: Sequence[CellSummary]) -> str:
    return _to_csv([c.row() for c in cells], AGGREGATE_COLUMNS)


def aggregates_to_json(cells: Sequence[CellSummary]) -> str:
    return json.dumps([{**c.row(), "count": c.count} for c in cells], indent=1) + "\n"

