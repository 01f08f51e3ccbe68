"""Synthetic indoor-ish scenes: a receding floor plus a few boxes at distinct depths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

D_MAX = 10.0
D_NEAR = 1.0


@dataclass(frozen=True)
class Scene:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth_gt: np.ndarray | None  # (H, W) in [0, D_MAX]; None for loaded photos
    seed: int
    name: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"Scene image must be (H, W, 3), got {self.image.shape}")
        if self.depth_gt is not None and self.depth_gt.shape != self.image.shape[:2]:
            raise ValueError(f"depth {self.depth_gt.shape} does not match image {self.image.shape[:2]}")


def _shade(depth: np.ndarray) -> np.ndarray:
    # nearer surfaces are brighter
    return 1.0 - 0.75 * (depth / D_MAX)


def generate_scene(seed: int, height: int = 32, width: int = 32) -> Scene:
    """Render a deterministic scene for ``seed``.

    The floor depth grows linearly from ``D_NEAR`` at the bottom row to
    ``D_MAX`` at the top. Between two and five axis-aligned boxes with
    distinct constant depths are painted far-to-near, each with its own tint;
    image brightness falls off with depth so intensity carries depth signal.
    """
    if height < 16 or width < 16:
        raise ValueError(f"scene must be at least 16x16, got {height}x{width}")
    rng = np.random.default_rng(seed)
    rows = np.arange(height, dtype=np.float64)[:, None]
    depth = np.broadcast_to(D_NEAR + (D_MAX - D_NEAR) * (1.0 - rows / (height - 1)), (height, width)).copy()
    floor_tint = rng.uniform(0.5, 1.0, size=3)
    image = _shade(depth)[:, :, None] * floor_tint

    n_shapes = int(rng.integers(2, 6))
    depths = np.sort(rng.choice(np.linspace(D_NEAR + 0.5, D_MAX - 1.0, 32), size=n_shapes, replace=False))[::-1]
    for d in depths:
        sh = int(rng.integers(height // 6, height // 2 + 1))
        sw = int(rng.integers(width // 6, width // 2 + 1))
        top = int(rng.integers(0, height - sh + 1))
        left = int(rng.integers(0, width - sw + 1))
        tint = rng.uniform(0.3, 1.0, size=3)
        depth[top:top + sh, left:left + sw] = d
        image[top:top + sh, left:left + sw] = _shade(np.float64(d)) * tint

    image = image + rng.normal(0.0, 0.02, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    depth = np.clip(depth, 0.0, D_MAX)
    return Scene(image=image, depth_gt=depth, seed=seed, name=f"synthetic_{seed:05d}")


def generate_dataset(seed: int, count: int, height: int = 32, width: int = 32) -> list[Scene]:
    """``count`` scenes with seeds ``seed, seed + 1, ...``."""
    return [generate_scene(seed + i, height, width) for i in range(count)]
