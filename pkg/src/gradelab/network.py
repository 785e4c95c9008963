"""Feed-forward network definitions: architectures, flat parameter vectors,
deterministic initialization, forward evaluation, and the experiment presets.

Conventions
-----------
A network with widths (d_0, ..., d_D) has D layers; layer j holds a weight
matrix of shape (d_j, d_{j-1}) and a bias of length d_j, and computes
``a_j = act(W_j @ a_{j-1} + b_j)`` with the activation skipped on layer D.
The flat parameter vector concatenates, per layer, the C-order flattened
weight matrix followed by the bias. ``frozen_depth`` marks how many leading
hidden layers are held fixed during training (the graded models use this).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng


# ---------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"  # "relu" | "softplus"
    beta: float = 1.0   # softplus sharpness; unused for relu

    def __post_init__(self):
        if self.kind not in ("relu", "softplus"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "softplus" and not self.beta > 0.0:
            raise ValueError("softplus beta must be positive")


RELU = Activation("relu")


def act_apply(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == "relu":
        return np.maximum(z, 0.0)
    # stable softplus: log(1 + exp(beta z)) / beta
    return np.logaddexp(0.0, act.beta * z) / act.beta


def act_deriv(act: Activation, z: np.ndarray) -> np.ndarray:
    """Pointwise derivative. For relu this is the indicator 1[z >= 0]:
    the kink is assigned to the active side."""
    if act.kind == "relu":
        return (z >= 0.0).astype(np.float64)
    # sigmoid(beta z), computed branch-free and overflow-safe
    return 0.5 * (1.0 + np.tanh(0.5 * act.beta * z))


# ---------------------------------------------------------------------------
# architectures


@dataclass(frozen=True)
class Arch:
    widths: tuple[int, ...]
    activation: Activation = RELU
    frozen_depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("widths must list at least input and output")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")
        if not 0 <= self.frozen_depth < self.depth:
            raise ValueError(
                f"frozen_depth {self.frozen_depth} out of range for depth {self.depth}"
            )

    @property
    def depth(self) -> int:
        """Number of layers D (hidden layers = D - 1)."""
        return len(self.widths) - 1

    @property
    def n_hidden(self) -> int:
        return self.depth - 1

    def trainable_tail(self) -> "Arch":
        """The sub-network actually trained: everything past the frozen prefix."""
        if self.frozen_depth == 0:
            return self
        return Arch(self.widths[self.frozen_depth:], self.activation, 0)


def layer_shapes(arch: Arch) -> list[tuple[int, int]]:
    w = arch.widths
    return [(w[j + 1], w[j]) for j in range(arch.depth)]


def param_count(arch: Arch) -> int:
    return sum(r * c + r for r, c in layer_shapes(arch))


def trainable_param_count(arch: Arch) -> int:
    shapes = layer_shapes(arch)[arch.frozen_depth:]
    return sum(r * c + r for r, c in shapes)


# ---------------------------------------------------------------------------
# flat parameter vectors


@dataclass(frozen=True)
class ParamVec:
    """Flat float64 parameter vector plus its per-layer (rows, cols) layout.

    Bias lengths are implied by the rows of each layer, so the layout alone
    determines the block structure of ``data``.
    """

    layout: tuple[tuple[int, int], ...]
    data: np.ndarray

    def __post_init__(self):
        layout = tuple((int(r), int(c)) for r, c in self.layout)
        object.__setattr__(self, "layout", layout)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 1:
            raise ValueError("ParamVec data must be 1-D")
        want = sum(r * c + r for r, c in layout)
        if data.shape[0] != want:
            raise ValueError(
                f"ParamVec data length {data.shape[0]} does not match layout ({want})"
            )
        object.__setattr__(self, "data", data)

    def copy(self) -> "ParamVec":
        return ParamVec(self.layout, self.data.copy())


def param_views(pv: ParamVec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (W, b) views into the flat data. Mutating them mutates pv."""
    out = []
    off = 0
    for r, c in pv.layout:
        W = pv.data[off:off + r * c].reshape(r, c)
        off += r * c
        b = pv.data[off:off + r]
        off += r
        out.append((W, b))
    return out


def pack_params(pairs) -> ParamVec:
    """Inverse of param_views: build a ParamVec from (W, b) arrays."""
    layout = []
    chunks = []
    for W, b in pairs:
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
            raise ValueError("each layer needs W (r, c) and b (r,)")
        layout.append(W.shape)
        chunks.append(W.reshape(-1))
        chunks.append(b)
    return ParamVec(tuple(layout), np.concatenate(chunks) if chunks else np.zeros(0))


def params_to_bytes(pv: ParamVec) -> bytes:
    """Serialize: u32-LE [n_layers, rows_1, cols_1, ...] then f64-LE data."""
    head = [len(pv.layout)]
    for r, c in pv.layout:
        head.extend((r, c))
    return (
        np.asarray(head, dtype="<u4").tobytes()
        + np.ascontiguousarray(pv.data, dtype="<f8").tobytes()
    )


def params_from_bytes(buf: bytes) -> ParamVec:
    if len(buf) < 4:
        raise ValueError("buffer too short for a ParamVec header")
    n_layers = int(np.frombuffer(buf[:4], dtype="<u4")[0])
    head_len = 4 + 8 * n_layers
    if len(buf) < head_len:
        raise ValueError("buffer too short for the declared layout")
    dims = np.frombuffer(buf[4:head_len], dtype="<u4").astype(int)
    layout = tuple((dims[2 * i], dims[2 * i + 1]) for i in range(n_layers))
    want = sum(r * c + r for r, c in layout)
    body = np.frombuffer(buf[head_len:], dtype="<f8")
    if body.shape[0] != want:
        raise ValueError(
            f"buffer holds {body.shape[0]} doubles, layout wants {want}"
        )
    return ParamVec(layout, body.copy())


def init_params(arch: Arch, seed: int) -> ParamVec:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases.

    Layer j draws from its own SplitMix64 substream keyed by (seed, j), so
    adding layers does not disturb earlier layers' draws.
    """
    pairs = []
    for j, (r, c) in enumerate(layer_shapes(arch)):
        std = np.sqrt(2.0 / c)
        w = std * rng.normals(rng.substream(seed, j), r * c)
        pairs.append((w.reshape(r, c), np.zeros(r)))
    return pack_params(pairs)


# ---------------------------------------------------------------------------
# evaluation


def batch_forward(arch: Arch, pv: ParamVec, X: np.ndarray) -> np.ndarray:
    """Evaluate on a batch. X is (N, d_0); returns (N, d_D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.widths[0]:
        raise ValueError(f"X must be (N, {arch.widths[0]}), got {X.shape}")
    views = param_views(pv)
    if len(views) != arch.depth:
        raise ValueError("params do not match architecture depth")
    A = X.T
    for j, (W, b) in enumerate(views):
        Z = W @ A + b[:, None]
        A = act_apply(arch.activation, Z) if j < arch.depth - 1 else Z
    return A.T


def forward(arch: Arch, pv: ParamVec, x: np.ndarray) -> np.ndarray:
    """Evaluate a single input vector; returns the output vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return batch_forward(arch, pv, x)[0]


def hidden_features(arch: Arch, pv: ParamVec, X: np.ndarray) -> np.ndarray:
    """Activations of the last hidden layer for a batch: (N, d_{D-1}).

    This is the feature map a later grade trains on top of.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.widths[0]:
        raise ValueError(f"X must be (N, {arch.widths[0]}), got {X.shape}")
    if arch.n_hidden == 0:
        raise ValueError("network has no hidden layer")
    views = param_views(pv)
    A = X.T
    for W, b in views[:-1]:
        A = act_apply(arch.activation, W @ A + b[:, None])
    return A.T


# ---------------------------------------------------------------------------
# multi-scale parallel model


@dataclass(frozen=True)
class MsdlArch:
    """S parallel subnets; subnet s sees scales[s] * x and outputs are summed."""

    subnets: tuple[Arch, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "subnets", tuple(self.subnets))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if len(self.subnets) == 0:
            raise ValueError("need at least one subnet")
        if len(self.subnets) != len(self.scales):
            raise ValueError("one scale per subnet required")
        d0 = self.subnets[0].widths[0]
        dD = self.subnets[0].widths[-1]
        for sub in self.subnets:
            if sub.widths[0] != d0 or sub.widths[-1] != dD:
                raise ValueError("subnets must share input and output widths")
            if sub.frozen_depth != 0:
                raise ValueError("subnets cannot have frozen layers")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")


def msdl_param_layout(march: MsdlArch) -> tuple[tuple[int, int], ...]:
    layout: list[tuple[int, int]] = []
    for sub in march.subnets:
        layout.extend(layer_shapes(sub))
    return tuple(layout)


def msdl_init_params(march: MsdlArch, seed: int) -> ParamVec:
    """Subnet s draws from substream (seed, s); concatenated flat layout."""
    chunks = []
    for s, sub in enumerate(march.subnets):
        chunks.append(init_params(sub, rng.substream(seed, s)).data)
    return ParamVec(msdl_param_layout(march), np.concatenate(chunks))


def msdl_split_params(march: MsdlArch, pv: ParamVec) -> list[ParamVec]:
    if pv.layout != msdl_param_layout(march):
        raise ValueError("params layout does not match the msdl architecture")
    out = []
    off = 0
    for sub in march.subnets:
        n = param_count(sub)
        out.append(
            ParamVec(tuple(layer_shapes(sub)), pv.data[off:off + n])
        )
        off += n
    return out


def msdl_forward(march: MsdlArch, pv: ParamVec, X: np.ndarray) -> np.ndarray:
    """Sum of subnet outputs on scaled inputs. X is (N, d_0)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be (N, d_0)")
    parts = msdl_split_params(march, pv)
    out = None
    for sub, scale, sub_pv in zip(march.subnets, march.scales, parts):
        y = batch_forward(sub, sub_pv, scale * X)
        out = y if out is None else out + y
    return out


# ---------------------------------------------------------------------------
# presets

_SGDL_PRESETS = {
    "SGDL-1": [1] + [32] * 4 + [1],
    "SGDL-2": [2] + [128] * 8 + [1],
    "SGDL-3": [2] + [128] * 12 + [1],
    "SGDL-4": [2] + [48] * 4 + [1],
}

# (input width, hidden width, hidden layers added per grade)
_MGDL_PRESETS = {
    "MGDL-1": (1, 32, 1),
    "MGDL-2": (2, 128, 2),
    "MGDL-3": (2, 128, 3),
    "MGDL-4": (2, 48, 1),
}

MGDL_GRADES = 4


def preset(name: str, grade: int | None = None):
    """Named experiment architectures.

    SGDL-*: plain stacks, grade must be omitted. MGDL-*: pass grade in 1..4;
    the returned Arch covers the full composition with the already-trained
    hidden layers marked frozen. MSDL: four width-8 subnets on input scales
    1, 2, 4, 8.
    """
    if name in _SGDL_PRESETS:
        if grade is not None:
            raise ValueError(f"{name} takes no grade")
        return Arch(tuple(_SGDL_PRESETS[name]))
    if name in _MGDL_PRESETS:
        if grade is None or not 1 <= grade <= MGDL_GRADES:
            raise ValueError(f"{name} needs grade in 1..{MGDL_GRADES}")
        d0, width, per = _MGDL_PRESETS[name]
        n_hidden = per * grade
        widths = (d0,) + (width,) * n_hidden + (1,)
        return Arch(widths, frozen_depth=per * (grade - 1))
    if name == "MSDL":
        if grade is not None:
            raise ValueError("MSDL takes no grade")
        sub = Arch((1, 8, 8, 8, 8, 1))
        return MsdlArch((sub,) * 4, (1.0, 2.0, 4.0, 8.0))
    raise ValueError(f"unknown preset {name!r}")
