"""Toy monocular depth models built on :mod:`depthattr.autodiff`.

Two kinds are provided:

* ``conv``: three same-padded 3x3 convolutions, the lightweight stand-in.
* ``attention``: patch embedding, ``layers`` multi-head self-attention blocks
  with residual MLPs, and a per-patch depth head whose coarse value is block
  upsampled and refined by per-pixel offsets.

Both end in a softplus so predicted depth is never negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("conv", "attention")
MODEL_FILE_MAGIC = "depthattr-model 1"
INIT_DEPTH = 5.0


class ModelSpecError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    height: int = 32
    width: int = 32
    # attention kind
    patch: int = 8
    layers: int = 2
    heads: int = 2
    embed: int = 16
    mlp: int = 32
    # conv kind
    hidden: int = 8
    kernel: int = 3

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw


@dataclass(frozen=True)
class AttentionStack:
    """Post-softmax attention of one image, shaped (layers, heads, n, n)."""

    matrices: np.ndarray

    def __post_init__(self):
        m = self.matrices
        if m.ndim != 4 or m.shape[2] != m.shape[3]:
            raise ValueError(f"attention stack must be (L, H, n, n), got {m.shape}")

    @property
    def layers(self) -> int:
        return self.matrices.shape[0]

    @property
    def heads(self) -> int:
        return self.matrices.shape[1]

    @property
    def n(self) -> int:
        return self.matrices.shape[2]


@dataclass(frozen=True)
class ForwardResult:
    depth: Tensor  # (..., H, W)
    attention: list[Tensor] = field(default_factory=list)  # per layer (..., heads, n, n)


@dataclass(frozen=True)
class Model:
    kind: str
    params: dict[str, np.ndarray]
    arch: ArchSpec
    seed: int

    @property
    def attention_layers(self) -> int:
        return self.arch.layers if self.kind == "attention" else 0

    def forward(self, x, params: dict[str, Tensor] | None = None) -> ForwardResult:
        """Differentiable forward pass over ``(..., H, W, 3)`` input."""
        x = ad.tensor(x)
        if x.ndim < 3 or x.shape[-3:] != (self.arch.height, self.arch.width, 3):
            raise ModelSpecError(
                f"{self.kind} model bound to {self.arch.height}x{self.arch.width}x3, got input {x.shape}"
            )
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        if self.kind == "conv":
            return _conv_forward(x, p, self.arch)
        return _attention_forward(x, p, self.arch)


def validate_arch(kind: str, arch: ArchSpec) -> None:
    if kind not in KINDS:
        raise ModelSpecError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if arch.height < 1 or arch.width < 1:
        raise ModelSpecError(f"image dims must be positive, got {arch.height}x{arch.width}")
    if kind == "attention":
        if arch.patch < 1 or arch.height % arch.patch or arch.width % arch.patch:
            raise ModelSpecError(f"patch size {arch.patch} does not divide image {arch.height}x{arch.width}")
        if arch.layers < 1 or arch.heads < 1:
            raise ModelSpecError(f"need layers >= 1 and heads >= 1, got {arch.layers}, {arch.heads}")
        if arch.embed % arch.heads:
            raise ModelSpecError(f"heads={arch.heads} does not divide embedding width {arch.embed}")
    else:
        if arch.kernel < 1 or arch.kernel % 2 == 0:
            raise ModelSpecError(f"conv kernel must be odd and positive, got {arch.kernel}")
        if arch.hidden < 1:
            raise ModelSpecError(f"hidden channels must be positive, got {arch.hidden}")


def _param_shapes(kind: str, a: ArchSpec) -> dict[str, tuple[tuple[int, ...], int]]:
    """name -> (shape, fan_in); fan_in of 0 marks a zero-initialised bias."""
    if kind == "conv":
        k = a.kernel
        return {
            "conv1.weight": ((k, k, 3, a.hidden), k * k * 3),
            "conv1.bias": ((a.hidden,), 0),
            "conv2.weight": ((k, k, a.hidden, a.hidden), k * k * a.hidden),
            "conv2.bias": ((a.hidden,), 0),
            "conv3.weight": ((k, k, a.hidden, 1), k * k * a.hidden),
            "conv3.bias": ((1,), 0),
        }
    pd = a.patch * a.patch * 3
    e = a.embed
    shapes = {
        "embed.weight": ((pd, e), pd),
        "embed.bias": ((e,), 0),
        "embed.pos": ((a.n_patches, e), e),
    }
    for l in range(a.layers):
        for name in ("query", "key", "value", "out"):
            shapes[f"block{l}.{name}.weight"] = ((e, e), e)
        shapes[f"block{l}.out.bias"] = ((e,), 0)
        shapes[f"block{l}.mlp1.weight"] = ((e, a.mlp), e)
        shapes[f"block{l}.mlp1.bias"] = ((a.mlp,), 0)
        shapes[f"block{l}.mlp2.weight"] = ((a.mlp, e), a.mlp)
        shapes[f"block{l}.mlp2.bias"] = ((e,), 0)
    shapes["head.coarse.weight"] = ((e, 1), e)
    shapes["head.coarse.bias"] = ((1,), 0)
    shapes["head.fine.weight"] = ((e, a.patch * a.patch), e)
    shapes["head.fine.bias"] = ((a.patch * a.patch,), 0)
    return shapes


def build_model(kind: str = "attention", arch: ArchSpec | None = None, seed: int = 0) -> Model:
    """Seeded model: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero
    except the output bias, which puts the initial prediction at ``INIT_DEPTH``."""
    arch = arch or ArchSpec()
    validate_arch(kind, arch)
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in _param_shapes(kind, arch).items():
        if fan_in == 0:
            params[name] = np.zeros(shape)
        else:
            s = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-s, s, size=shape)
    # start predictions at mid-range depth so early gradients stay moderate
    out_bias = "conv3.bias" if kind == "conv" else "head.coarse.bias"
    params[out_bias] = np.full(params[out_bias].shape, _inv_softplus(INIT_DEPTH))
    return Model(kind=kind, params=params, arch=arch, seed=seed)


def _inv_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


def _conv_forward(x: Tensor, p: dict[str, Tensor], a: ArchSpec) -> ForwardResult:
    h = ad.relu(ad.conv2d(x, p["conv1.weight"], p["conv1.bias"]))
    h = ad.relu(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"]))
    z = ad.conv2d(h, p["conv3.weight"], p["conv3.bias"])
    z = ad.reshape(z, z.shape[:-1])
    return ForwardResult(depth=ad.softplus(z))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # (..., n, E) -> (..., heads, n, E // heads)
    *lead, n, e = t.shape
    t = ad.reshape(t, (*lead, n, heads, e // heads))
    nd = len(lead)
    return ad.transpose(t, (*range(nd), nd + 1, nd, nd + 2))


def _merge_heads(t: Tensor) -> Tensor:
    *lead, heads, n, dh = t.shape
    nd = len(lead)
    t = ad.transpose(t, (*range(nd), nd + 1, nd, nd + 2))
    return ad.reshape(t, (*lead, n, heads * dh))


def _swap_last(t: Tensor) -> Tensor:
    nd = t.ndim
    return ad.transpose(t, (*range(nd - 2), nd - 1, nd - 2))


def _attention_forward(x: Tensor, p: dict[str, Tensor], a: ArchSpec) -> ForwardResult:
    tokens = ad.patchify(x, a.patch) @ p["embed.weight"] + p["embed.bias"] + p["embed.pos"]
    scale = 1.0 / math.sqrt(a.embed // a.heads)
    attention = []
    for l in range(a.layers):
        pre = f"block{l}."
        q = _split_heads(tokens @ p[pre + "query.weight"], a.heads)
        k = _split_heads(tokens @ p[pre + "key.weight"], a.heads)
        v = _split_heads(tokens @ p[pre + "value.weight"], a.heads)
        attn = ad.softmax((q @ _swap_last(k)) * scale)
        attention.append(attn)
        mixed = _merge_heads(attn @ v) @ p[pre + "out.weight"] + p[pre + "out.bias"]
        tokens = tokens + mixed
        hidden = ad.relu(tokens @ p[pre + "mlp1.weight"] + p[pre + "mlp1.bias"])
        tokens = tokens + (hidden @ p[pre + "mlp2.weight"] + p[pre + "mlp2.bias"])
    gh, gw = a.grid
    lead = tokens.shape[:-2]
    coarse = tokens @ p["head.coarse.weight"] + p["head.coarse.bias"]
    coarse = ad.upsample_nearest(ad.reshape(coarse, (*lead, gh, gw)), a.patch)
    fine = ad.unpatchify(tokens @ p["head.fine.weight"] + p["head.fine.bias"], a.patch, a.height, a.width)
    # each offset only touches 1/p**2 of the pixels; the gain evens out its curvature
    fine = fine * float(a.patch)
    return ForwardResult(depth=ad.softplus(coarse + fine), attention=attention)


def predict(model: Model, image: np.ndarray) -> tuple[np.ndarray, AttentionStack | None]:
    """Depth map for one ``(H, W, 3)`` image, plus its attention stack for attention models."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ModelSpecError(f"predict expects a single (H, W, 3) image, got {image.shape}")
    out = model.forward(image)
    stack = None
    if out.attention:
        stack = AttentionStack(np.stack([t.numpy() for t in out.attention]))
    return out.depth.numpy(), stack


def predict_batch(model: Model, images: np.ndarray) -> np.ndarray:
    """Depth maps for a ``(B, H, W, 3)`` stack; no graph is kept beyond the call."""
    return model.forward(np.asarray(images, dtype=np.float64)).depth.numpy()


def train(
    model: Model,
    scenes: Sequence,
    epochs: int,
    learning_rate: float,
) -> tuple[Model, list[float]]:
    """Full-batch gradient descent on mean squared depth error.

    Returns the trained model and the loss recorded at the start of every
    epoch followed by the final loss (``epochs + 1`` values).
    """
    if not scenes:
        raise ValueError("train: no scenes given")
    if epochs < 1:
        raise ValueError(f"train: epochs must be >= 1, got {epochs}")
    if any(s.depth_gt is None for s in scenes):
        raise ValueError("train: every scene needs ground-truth depth")
    images = np.stack([s.image for s in scenes])
    targets = np.stack([s.depth_gt for s in scenes])
    params = {k: v.copy() for k, v in model.params.items()}
    names = sorted(params)
    history = []
    for epoch in range(epochs + 1):
        leaves = {k: Tensor(params[k]) for k in names}
        with np.errstate(over="ignore", invalid="ignore"):
            pred = model.forward(images, leaves).depth
            diff = pred - targets
            loss = ad.mean(diff * diff)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at epoch {epoch}")
        history.append(value)
        if epoch == epochs:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            grads = ad.backward(loss, [leaves[k] for k in names])
        for k, g in zip(names, grads):
            params[k] = params[k] - learning_rate * g.values
    return Model(kind=model.kind, params=params, arch=model.arch, seed=model.seed), history


def save_model(model: Model, path) -> None:
    """Write the text model file.

    Layout, one item per line::

        depthattr-model 1
        kind <conv|attention>
        seed <int>
        arch <json object, sorted keys>
        params <count>
        param <name> <ndim> <extent>...      # repeated per parameter,
        <row-major values, space separated>  # names in sorted order

    Values use Python's shortest round-trip float repr, so load(save(m))
    is exact and the bytes are stable for a fixed model.
    """
    lines = [
        MODEL_FILE_MAGIC,
        f"kind {model.kind}",
        f"seed {model.seed}",
        f"arch {json.dumps(asdict(model.arch), sort_keys=True)}",
        f"params {len(model.params)}",
    ]
    for name in sorted(model.params):
        arr = model.params[name]
        lines.append(" ".join(["param", name, str(arr.ndim), *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path) -> Model:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != MODEL_FILE_MAGIC:
        raise ModelSpecError(f"{path}: not a depthattr model file")
    header = {}
    for line in lines[1:5]:
        key, _, value = line.partition(" ")
        header[key] = value
    arch = ArchSpec(**json.loads(header["arch"]))
    count = int(header["params"])
    params = {}
    body = lines[5:]
    for i in range(count):
        meta = body[2 * i].split()
        if meta[0] != "param":
            raise ModelSpecError(f"{path}: malformed parameter record {body[2 * i]!r}")
        name, ndim = meta[1], int(meta[2])
        shape = tuple(int(s) for s in meta[3:3 + ndim])
        values = np.array([float(v) for v in body[2 * i + 1].split()], dtype=np.float64)
        params[name] = values.reshape(shape)
    kind = header["kind"]
    validate_arch(kind, arch)
    expected = _param_shapes(kind, arch)
    if set(expected) != set(params) or any(params[k].shape != expected[k][0] for k in expected):
        raise ModelSpecError(f"{path}: parameters do not match the {kind} architecture")
    return Model(kind=kind, params=params, arch=arch, seed=int(header["seed"]))

