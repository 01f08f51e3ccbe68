"""Dataset sources: a directory of 8-bit RGB images or the synthetic generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .scenes import Scene, generate_dataset

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class SyntheticSource:
    seed: int = 7
    count: int = 32


class EmptyDatasetError(ValueError):
    pass


def center_crop_resize(img: Image.Image, height: int, width: int) -> Image.Image:
    """Crop the largest centred window with the target aspect ratio, then resize bilinearly."""
    w, h = img.size
    target = width / height
    if w / h > target:
        cw, ch = round(h * target), h
    else:
        cw, ch = w, round(w / target)
    left = (w - cw) // 2
    top = (h - ch) // 2
    img = img.crop((left, top, left + cw, top + ch))
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    return img


def load_image(path, height: int, width: int) -> np.ndarray:
    with Image.open(path) as img:
        img.load()
        rgb = center_crop_resize(img.convert("RGB"), height, width)
    return np.asarray(rgb, dtype=np.float64) / 255.0


def load_dataset(source, height: int = 32, width: int = 32) -> list[Scene]:
    """Scenes from ``source``: a :class:`SyntheticSource` or a directory path.

    Directory images are read in filename order, normalised to [0, 1] and
    centre-cropped/resized to ``height x width``; they carry no ground-truth
    depth. Unreadable files are skipped with a warning.
    """
    if isinstance(source, SyntheticSource):
        scenes = generate_dataset(source.seed, source.count, height, width)
    else:
        root = Path(source)
        if not root.is_dir():
            raise EmptyDatasetError(f"dataset directory {root} does not exist")
        scenes = []
        for i, path in enumerate(sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)):
            try:
                image = load_image(path, height, width)
            except (OSError, UnidentifiedImageError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                continue
            scenes.append(Scene(image=image, depth_gt=None, seed=i, name=path.stem))
    if not scenes:
        raise EmptyDatasetError(f"no usable images in {source}")
    return scenes
