"""PNG rendering of relevance maps, depth maps and input images."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .attribution import RelevanceMap


@dataclass(frozen=True)
class RenderPalette:
    """Piecewise-linear ramp through ``stops`` (RGB in [0, 1]) at evenly spaced positions."""

    stops: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (1.0, 1.0, 0.0))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
        stops = np.asarray(self.stops)
        xp = np.linspace(0.0, 1.0, len(stops))
        return np.stack([np.interp(t, xp, stops[:, c]) for c in range(3)], axis=-1)


HOT = RenderPalette()


def luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb @ np.array([0.2126, 0.7152, 0.0722])


def normalize(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max scale to [0, 1]; a constant array maps to zeros and reports True."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64), True
    return (values - lo) / (hi - lo), False


def to_uint8(unit: np.ndarray) -> np.ndarray:
    return np.round(np.clip(unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def _write(array: np.ndarray, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(array).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def render_relevance(relevance: RelevanceMap, path, palette: RenderPalette = HOT) -> Path:
    """Write the colour-mapped map; returns the path actually written.

    Constant maps come out all black and get ``_degenerate`` appended to the
    file stem.
    """
    path = Path(path)
    unit, constant = normalize(relevance.scores)
    if constant:
        path = path.with_name(f"{path.stem}_degenerate{path.suffix or '.png'}")
    return _write(to_uint8(palette(unit)), path)


def render_depth(depth: np.ndarray, path) -> Path:
    """Grayscale PNG of min-max normalised depth; constant maps render black."""
    unit, _ = normalize(np.asarray(depth, dtype=np.float64))
    return _write(to_uint8(unit), Path(path))


def render_image(image: np.ndarray, path) -> Path:
    return _write(to_uint8(image), Path(path))
