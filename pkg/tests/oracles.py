"""Brute-force reference implementations kept separate from the package code paths."""

import math

import numpy as np


def ranking(scores):
    flat = [float(v) for v in np.asarray(scores).ravel()]
    return sorted(range(len(flat)), key=lambda i: (-flat[i], i))


def contiguous_groups(order, bins):
    n = len(order)
    base, extra = divmod(n, bins)
    groups, start = [], 0
    for b in range(bins):
        size = base + (1 if b < extra else 0)
        groups.append(order[start:start + size])
        start += size
    return groups


def loop_rmse(a, b):
    a, b = np.asarray(a).ravel().tolist(), np.asarray(b).ravel().tolist()
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))


def textbook_pearson(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(v * v for v in x)
    syy = sum(v * v for v in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def perturb_pixels(image, pixels, kind, *, noise=None, grad_sign=None, step=None):
    out = np.array(image, dtype=np.float64)
    w = image.shape[1]
    for idx in pixels:
        i, j = divmod(idx, w)
        for c in range(image.shape[2]):
            if kind == "black":
                out[i, j, c] = 0.0
            elif kind == "gaussian":
                out[i, j, c] = min(1.0, max(0.0, image[i, j, c] + noise[i, j, c]))
            else:
                out[i, j, c] = min(1.0, max(0.0, image[i, j, c] + step * grad_sign[i, j, c]))
    return out


def faithfulness_oracle(model, image, scores, bins, kind, *, seed=0, mu=0.0, sigma=0.8, grad=None, step=3.0 / 255):
    """Group pixels by rank, perturb each group from scratch, predict one image at a time."""
    noise = np.random.default_rng(seed).normal(mu, sigma, size=image.shape) if kind == "gaussian" else None
    sign = np.sign(grad) if grad is not None else None
    flat = np.asarray(scores).ravel()
    base = model.forward(image).depth.data
    rels, errs = [], []
    for group in contiguous_groups(ranking(scores), bins):
        x = perturb_pixels(image, group, kind, noise=noise, grad_sign=sign, step=step)
        errs.append(loop_rmse(model.forward(x).depth.data, base))
        rels.append(sum(float(flat[i]) for i in group) / len(group))
    return textbook_pearson(rels, errs)
