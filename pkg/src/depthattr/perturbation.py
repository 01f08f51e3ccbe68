"""Pick the most/least relevant pixels and perturb them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attribution import RelevanceMap, input_gradient
from .models import Model

KINDS = ("black", "gaussian", "fgsm")


@dataclass(frozen=True)
class PixelMask:
    selected: np.ndarray  # (H, W) bool
    fraction: float
    which: str  # "top" | "bottom" | "group"

    @property
    def count(self) -> int:
        return int(self.selected.sum())


@dataclass(frozen=True)
class PerturbSpec:
    kind: str
    mu: float = 0.0
    sigma: float = 0.8
    epsilon: float = 3.0
    # FGSM step in [0, 1] pixel units is epsilon / epsilon_scale
    epsilon_scale: float = 255.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"perturbation kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError(f"gaussian perturbation needs sigma > 0, got {self.sigma}")
        if self.kind == "fgsm" and not (self.epsilon > 0 and self.epsilon_scale > 0):
            raise ValueError(f"fgsm perturbation needs epsilon > 0, got {self.epsilon}")

    @property
    def step(self) -> float:
        return self.epsilon / self.epsilon_scale


def rank_pixels(relevance: RelevanceMap) -> np.ndarray:
    """Row-major flat pixel indices, most relevant first; ties keep row-major order."""
    flat = relevance.scores.reshape(-1)
    return np.argsort(-flat, kind="stable")


def selection_count(fraction: float, n_pixels: int) -> int:
    # round half away from zero, not numpy's banker's rounding
    return int(np.floor(fraction * n_pixels + 0.5))


def select_pixels(relevance: RelevanceMap, fraction: float, which: str = "top") -> PixelMask:
    if not 0 < fraction <= 0.5:
        raise ValueError(f"fraction must be in (0, 0.5], got {fraction}")
    if which not in ("top", "bottom"):
        raise ValueError(f"which must be 'top' or 'bottom', got {which!r}")
    order = rank_pixels(relevance)
    k = selection_count(fraction, order.size)
    chosen = order[:k] if which == "top" else order[order.size - k:]
    selected = np.zeros(order.size, dtype=bool)
    selected[chosen] = True
    return PixelMask(selected.reshape(relevance.shape), fraction, which)


def _check(image: np.ndarray, mask: PixelMask) -> None:
    if mask.selected.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.selected.shape} does not match image {image.shape[:2]}")


def perturb_black(image: np.ndarray, mask: PixelMask) -> np.ndarray:
    _check(image, mask)
    out = np.array(image, dtype=np.float64)
    out[mask.selected] = 0.0
    return out


def gaussian_noise(shape, mu: float, sigma: float, seed: int) -> np.ndarray:
    """The raw (unclamped) noise field used by :func:`perturb_gaussian`."""
    return np.random.default_rng(seed).normal(mu, sigma, size=shape)


def perturb_gaussian(image: np.ndarray, mask: PixelMask, mu: float = 0.0, sigma: float = 0.8, seed: int = 0) -> np.ndarray:
    """Additive per-channel noise on masked pixels, clamped to [0, 1].

    The noise field covers the whole image and depends only on ``seed``, so
    two masks with the same seed see the same noise at shared pixels.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _check(image, mask)
    out = np.array(image, dtype=np.float64)
    noise = gaussian_noise(image.shape, mu, sigma, seed)
    sel = mask.selected
    out[sel] = np.clip(out[sel] + noise[sel], 0.0, 1.0)
    return out


def fgsm_from_gradient(image: np.ndarray, mask: PixelMask, gradient: np.ndarray, step: float) -> np.ndarray:
    _check(image, mask)
    out = np.array(image, dtype=np.float64)
    sel = mask.selected
    out[sel] = np.clip(out[sel] + step * np.sign(gradient[sel]), 0.0, 1.0)
    return out


def perturb_fgsm(model: Model, image: np.ndarray, mask: PixelMask, epsilon: float = 3.0, epsilon_scale: float = 255.0) -> np.ndarray:
    """One signed-gradient step that increases mean predicted depth, on masked pixels only.

    The gradient is taken once on the full image and then restricted to the mask.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return fgsm_from_gradient(image, mask, input_gradient(model, image), epsilon / epsilon_scale)


def make_perturber(spec: PerturbSpec, model: Model, image: np.ndarray) -> Callable[[PixelMask], np.ndarray]:
    """Bind a spec to one image; FGSM's gradient is computed once and reused for every mask."""
    if spec.kind == "black":
        return lambda mask: perturb_black(image, mask)
    if spec.kind == "gaussian":
        return lambda mask: perturb_gaussian(image, mask, spec.mu, spec.sigma, spec.seed)
    grad = input_gradient(model, image)
    return lambda mask: fgsm_from_gradient(image, mask, grad, spec.step)


def mask_to_rle(mask: PixelMask) -> str:
    """``H W which fraction`` header, then ``start:length`` runs of selected row-major pixels."""
    h, w = mask.selected.shape
    flat = mask.selected.reshape(-1).astype(np.int8)
    edges = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    runs = " ".join(f"{s}:{e - s}" for s, e in zip(starts, ends))
    return f"{h} {w} {mask.which} {mask.fraction!r}\n{runs}\n"


def mask_from_rle(text: str) -> PixelMask:
    header, _, body = text.partition("\n")
    h, w, which, fraction = header.split()
    flat = np.zeros(int(h) * int(w), dtype=bool)
    for run in body.split():
        start, length = (int(v) for v in run.split(":"))
        flat[start:start + length] = True
    return PixelMask(flat.reshape(int(h), int(w)), float(fraction), which)
