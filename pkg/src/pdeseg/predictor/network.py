"""Miniature UNet-style encoder-decoder in plain numpy.

Topology per level: two 3x3 conv+ReLU blocks, 2x2 max-pool down; a bottleneck
block; on the way up, nearest-neighbour upsampling followed by a 3x3 conv,
concatenation with the matching encoder output, and two 3x3 conv+ReLU
blocks. A final 1x1 conv and sigmoid produce the field ``u`` in (0, 1).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..fidelity import CompositeWeights, LossBreakdown, composite_loss
from ..grid import GridSpec, as_field
from ..priors import PFParams, RDParams
from ..solver import sigmoid
from . import layers

PARAMS_FORMAT = "pdeseg-params"


@dataclass(frozen=True)
class ArchConfig:
    depth: int = 2
    base_channels: int = 8
    kernel: int = 3
    dropout_rate: float = 0.0
    # standardise each input image to zero mean, unit variance before the first conv
    normalize: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.kernel != 3:
            raise ValueError("only 3x3 kernels are supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def check_dims(self, shape) -> None:
        f = 2**self.depth
        h, w = shape[-2], shape[-1]
        if h % f or w % f:
            raise ValueError(
                f"image dims {h}x{w} must be divisible by 2**depth = {f} (depth={self.depth})"
            )


def param_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k=3):
        shapes[name + ".w"] = (cout, cin, k, k)
        shapes[name + ".b"] = (cout,)

    cin = 1
    for lvl in range(arch.depth):
        c = arch.channels(lvl)
        conv(f"enc{lvl}.conv1", cin, c)
        conv(f"enc{lvl}.conv2", c, c)
        cin = c
    c = arch.channels(arch.depth)
    conv("mid.conv1", cin, c)
    conv("mid.conv2", c, c)
    for lvl in reversed(range(arch.depth)):
        c = arch.channels(lvl)
        conv(f"dec{lvl}.up", arch.channels(lvl + 1), c)
        conv(f"dec{lvl}.conv1", 2 * c, c)
        conv(f"dec{lvl}.conv2", c, c)
    conv("out", arch.base_channels, 1, k=1)
    return shapes


class ParamSet:
    """Named parameter arrays with a flat-vector view."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def __eq__(self, other):
        if not isinstance(other, ParamSet) or list(self.arrays) != list(other.arrays):
            return NotImplemented
        return all(np.array_equal(self[k], other[k]) for k in self.arrays)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {self.size}")
        out, pos = {}, 0
        for k, a in self.arrays.items():
            out[k] = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return ParamSet(out)

    def copy(self) -> "ParamSet":
        return ParamSet({k: a.copy() for k, a in self.arrays.items()})

    def to_json(self, arch: ArchConfig | None = None) -> str:
        doc = {
            "format": PARAMS_FORMAT,
            "version": 1,
            "arch": asdict(arch) if arch is not None else None,
            "arrays": {
                k: {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}
                for k, a in self.arrays.items()
            },
        }
        return json.dumps(doc)

    def save(self, path, arch: ArchConfig | None = None) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(arch))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> tuple["ParamSet", ArchConfig | None]:
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != PARAMS_FORMAT:
            raise ValueError(f"{path}: not a {PARAMS_FORMAT} file")
        arrays = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
            for k, v in doc["arrays"].items()
        }
        arch = ArchConfig(**doc["arch"]) if doc.get("arch") else None
        return cls(arrays), arch


def init_params(arch: ArchConfig, seed: int, zero: bool = False) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and zero biases.

    ``zero=True`` returns an all-zero set (forward output is then exactly 0.5).
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(arch).items():
        if zero or name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParamSet(arrays)


def _forward(x: np.ndarray, params: ParamSet, arch: ArchConfig, drop: np.ndarray | None = None):
    """Batched forward pass on ``(B, 1, H, W)``; returns ``(u, tape)``."""
    tape = []

    def conv(name, h):
        out, cols = layers.conv_forward(h, params[name + ".w"], params[name + ".b"])
        tape.append(("conv", name, cols, h.shape))
        return out

    def relu(h):
        out, active = layers.relu_forward(h)
        tape.append(("relu", active))
        return out

    h = x
    skips = []
    for lvl in range(arch.depth):
        h = relu(conv(f"enc{lvl}.conv1", h))
        h = relu(conv(f"enc{lvl}.conv2", h))
        skips.append(h)
        h, arg = layers.maxpool_forward(h)
        tape.append(("pool", arg, lvl))
    h = relu(conv("mid.conv1", h))
    h = relu(conv("mid.conv2", h))
    if drop is not None:
        h = h * drop
        tape.append(("drop", drop))
    for lvl in reversed(range(arch.depth)):
        h = layers.upsample_forward(h)
        tape.append(("up",))
        h = conv(f"dec{lvl}.up", h)
        h = np.concatenate([h, skips[lvl]], axis=1)
        tape.append(("cat", lvl, arch.channels(lvl)))
        h = relu(conv(f"dec{lvl}.conv1", h))
        h = relu(conv(f"dec{lvl}.conv2", h))
    z = conv("out", h)
    u = sigmoid(z)
    return u, tape


def _backward(du: np.ndarray, u: np.ndarray, tape, params: ParamSet) -> ParamSet:
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    skip_grads: dict[int, np.ndarray] = {}
    g = du * u * (1.0 - u)
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "conv":
            _, name, cols, x_shape = entry
            g, dw, db = layers.conv_backward(g, cols, params[name + ".w"], x_shape)
            grads[name + ".w"] += dw
            grads[name + ".b"] += db
        elif kind == "relu":
            g = layers.relu_backward(g, entry[1])
        elif kind == "cat":
            _, lvl, c = entry
            skip_grads[lvl] = g[:, c:]
            g = g[:, :c]
        elif kind == "up":
            g = layers.upsample_backward(g)
        elif kind == "drop":
            g = g * entry[1]
        elif kind == "pool":
            _, arg, lvl = entry
            # the pool input also feeds the skip connection of this level
            g = layers.maxpool_backward(g, arg) + skip_grads.pop(lvl)
    return ParamSet(grads)


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=(2, 3), keepdims=True)
    std = x.std(axis=(2, 3), keepdims=True)
    return (x - mean) / np.maximum(std, 1e-6)


def _as_batch(images, arch: ArchConfig) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    x = x[:, None]
    return _standardize(x) if arch.normalize else x


def forward(image, params: ParamSet, arch: ArchConfig) -> np.ndarray:
    """Map one ``(H, W)`` image to a field ``u`` of the same shape."""
    image = as_field(image, "image")
    arch.check_dims(image.shape)
    u, _ = _forward(_as_batch(image, arch), params, arch)
    return u[0, 0]


def forward_batch(images, params: ParamSet, arch: ArchConfig) -> np.ndarray:
    x = _as_batch(images, arch)
    arch.check_dims(x.shape)
    return _forward(x, params, arch)[0][:, 0]


def batch_loss_and_grad(
    images,
    targets,
    params: ParamSet,
    arch: ArchConfig,
    weights: CompositeWeights,
    rd: RDParams,
    pf: PFParams,
    grid: GridSpec = GridSpec(),
    drop_rng: np.random.Generator | None = None,
) -> tuple[float, ParamSet, LossBreakdown]:
    """Mean composite loss over a batch, its parameter gradient, and the mean breakdown."""
    x = _as_batch(images, arch)
    arch.check_dims(x.shape)
    targets = np.asarray(targets)
    if targets.ndim == 2:
        targets = targets[None]
    if targets.shape != x.shape[:1] + x.shape[2:]:
        raise ValueError(f"targets shape {targets.shape} does not match images {x.shape}")
    drop = None
    if drop_rng is not None and arch.dropout_rate > 0:
        f = 2**arch.depth
        shape = (x.shape[0], arch.channels(arch.depth), x.shape[2] // f, x.shape[3] // f)
        keep = 1.0 - arch.dropout_rate
        drop = (drop_rng.random(shape) < keep) / keep
    u, tape = _forward(x, params, arch, drop)
    n = x.shape[0]
    du = np.empty_like(u)
    parts = []
    for b in range(n):
        _, g, br = composite_loss(u[b, 0], targets[b], weights, rd, pf, grid)
        du[b, 0] = g / n
        parts.append(br)
    mean = LossBreakdown(*(float(np.mean([getattr(p, f) for p in parts])) for f in ("dice", "bce", "rd", "pf", "total")))
    return mean.total, _backward(du, u, tape, params), mean


def backward(
    image,
    target,
    params: ParamSet,
    arch: ArchConfig,
    weights: CompositeWeights,
    rd: RDParams,
    pf: PFParams,
    grid: GridSpec = GridSpec(),
) -> tuple[float, ParamSet]:
    """Composite loss of ``forward(image)`` against ``target`` and its exact parameter gradient."""
    image = as_field(image, "image")
    loss, grads, _ = batch_loss_and_grad(image, target, params, arch, weights, rd, pf, grid)
    return loss, grads
