"""Full-batch training loops: plain stacks, graded stacks, the multi-scale
parallel model, and learning-rate sweeps.

Each grade of a graded run is a fresh shallow network fitted to the current
residual through the frozen feature maps of the grades before it; its
scaled output is then subtracted from the residual. With every grade scale
at 1 the final residual equals the targets minus the stacked prediction
exactly (up to floating-point accumulation order).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .calculus import Dataset, _cache, _weighted_grad, mse_loss
from .network import (
    Arch,
    MsdlArch,
    ParamVec,
    batch_forward,
    hidden_features,
    init_params,
    layer_shapes,
    msdl_init_params,
    msdl_param_layout,
    msdl_split_params,
    param_views,
    preset,
)

DIVERGENCE_CAP = 1e12

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    epochs: int
    optimizer: str = "gd"  # "gd" | "adam"
    checkpoint_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1 when given")


@dataclass
class TrainTrace:
    """losses[k] is the loss at iterate k (so a finished run has epochs + 1
    entries); a diverged run stops at the first non-finite or capped loss.
    checkpoints hold (epoch, params) copies; val_losses, when present, are
    (epoch, loss) pairs sampled at the checkpoint epochs and the end."""

    losses: np.ndarray
    diverged: bool
    checkpoints: list = field(default_factory=list)
    val_losses: list | None = None

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


@dataclass
class GradeStack:
    """Trained grades: (tail architecture, tail parameters, output scale).

    Each tail's input width equals the previous tail's last hidden width.
    residual_norms[i] is the l2 norm of the training residual left after
    grade i+1 committed its scaled output.
    """

    grades: list
    residual_norms: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# single steps


def gd_step(pv: ParamVec, grad: ParamVec, eta: float) -> ParamVec:
    if pv.layout != grad.layout:
        raise ValueError("params and gradient layouts differ")
    return ParamVec(pv.layout, pv.data - eta * grad.data)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, pv: ParamVec, grad: ParamVec,
              eta: float) -> tuple[ParamVec, AdamState]:
    if pv.layout != grad.layout:
        raise ValueError("params and gradient layouts differ")
    t = state.t + 1
    m = ADAM_B1 * state.m + (1.0 - ADAM_B1) * grad.data
    v = ADAM_B2 * state.v + (1.0 - ADAM_B2) * grad.data * grad.data
    mhat = m / (1.0 - ADAM_B1 ** t)
    vhat = v / (1.0 - ADAM_B2 ** t)
    new = pv.data - eta * mhat / (np.sqrt(vhat) + ADAM_EPS)
    return ParamVec(pv.layout, new), AdamState(m, v, t)


# ---------------------------------------------------------------------------
# generic full-batch loop over a flat parameter vector


def _optimize(loss_grad, loss_only, w: np.ndarray, layout, cfg: TrainConfig,
              val_loss=None, checkpoint_cb=None) -> tuple[np.ndarray, TrainTrace]:
    """loss_grad(w) -> (loss, grad); loss_only(w) -> loss. Runs cfg.epochs
    steps, recording the loss at every iterate. checkpoint_cb, when given,
    is called as checkpoint_cb(epoch, w) at checkpoint epochs."""
    losses = []
    checkpoints: list = []
    vals: list | None = [] if val_loss is not None else None
    diverged = False
    every = cfg.checkpoint_every
    if cfg.optimizer == "adam":
        m = np.zeros_like(w)
        v = np.zeros_like(w)

    def take_checkpoint(epoch, wk):
        checkpoints.append((epoch, ParamVec(layout, wk.copy())))
        if vals is not None:
            vals.append((epoch, float(val_loss(wk))))
        if checkpoint_cb is not None:
            checkpoint_cb(epoch, wk)

    for k in range(cfg.epochs):
        L, g = loss_grad(w)
        losses.append(L)
        if not np.isfinite(L) or L > DIVERGENCE_CAP:
            diverged = True
            break
        if every is not None and k % every == 0:
            take_checkpoint(k, w)
        if cfg.optimizer == "gd":
            w = w - cfg.eta * g
        else:
            m = ADAM_B1 * m + (1.0 - ADAM_B1) * g
            v = ADAM_B2 * v + (1.0 - ADAM_B2) * g * g
            t = k + 1
            mhat = m / (1.0 - ADAM_B1 ** t)
            vhat = v / (1.0 - ADAM_B2 ** t)
            w = w - cfg.eta * mhat / (np.sqrt(vhat) + ADAM_EPS)
    if not diverged:
        losses.append(float(loss_only(w)))
        take_checkpoint(cfg.epochs, w)
    trace = TrainTrace(np.asarray(losses), diverged, checkpoints, vals)
    return w, trace


def _mse_closures(arch: Arch, data: Dataset):
    XT = np.ascontiguousarray(data.inputs.T)
    yT = np.ascontiguousarray(data.target_matrix.T)
    N = data.n
    layout = tuple(layer_shapes(arch))

    def loss_grad(w):
        views = param_views(ParamVec(layout, w))
        acts, derivs, out = _cache(arch, views, XT)
        e = out - yT
        L = float(np.sum(e * e)) / (2.0 * N)
        if not np.isfinite(L):
            return L, np.zeros_like(w)
        g = _weighted_grad(arch, views, acts, derivs, e[0] / N)
        return L, g

    def loss_only(w):
        views = param_views(ParamVec(layout, w))
        _, _, out = _cache(arch, views, XT)
        e = out - yT
        return float(np.sum(e * e)) / (2.0 * N)

    return loss_grad, loss_only, layout


def _val_closure(arch: Arch, val_data: Dataset | None):
    if val_data is None:
        return None
    XT = np.ascontiguousarray(val_data.inputs.T)
    yT = np.ascontiguousarray(val_data.target_matrix.T)
    N = val_data.n
    layout = tuple(layer_shapes(arch))

    def val_loss(w):
        views = param_views(ParamVec(layout, w))
        _, _, out = _cache(arch, views, XT)
        e = out - yT
        return float(np.sum(e * e)) / (2.0 * N)

    return val_loss


def _check_trainable_depth(arch: Arch, what: str):
    tail = arch.trainable_tail()
    if arch.activation.kind != "relu" or arch.widths[-1] != 1:
        raise ValueError(f"{what} trains scalar-output relu networks only")
    if tail.n_hidden not in (1, 4):
        raise ValueError(
            f"{what}: no explicit gradient path for a {tail.n_hidden}-hidden "
            "trainable tail (supported: 1 or 4); deeper presets are defined "
            "but not trainable here"
        )


def train_sgdl(arch: Arch, data: Dataset, cfg: TrainConfig,
               val_data: Dataset | None = None,
               init: ParamVec | None = None,
               checkpoint_cb=None) -> tuple[ParamVec, TrainTrace]:
    """Full-batch training of a plain stack from a seeded He init."""
    _check_trainable_depth(arch, "train_sgdl")
    if data.inputs.shape[1] != arch.widths[0]:
        raise ValueError("data input width does not match the architecture")
    pv0 = init if init is not None else init_params(arch, cfg.seed)
    loss_grad, loss_only, layout = _mse_closures(arch, data)
    w, trace = _optimize(
        loss_grad, loss_only, pv0.data.copy(), layout, cfg,
        val_loss=_val_closure(arch, val_data), checkpoint_cb=checkpoint_cb,
    )
    return ParamVec(layout, w), trace


def _as_grade_archs(grades, n_grades: int) -> list[Arch]:
    if isinstance(grades, str):
        return [preset(grades, grade=l) for l in range(1, n_grades + 1)]
    archs = list(grades)
    if not archs or not all(isinstance(a, Arch) for a in archs):
        raise ValueError("grades must be a preset family name or a list of Arch")
    return archs


def _grade_configs(cfg, n_grades: int) -> list[TrainConfig]:
    if isinstance(cfg, TrainConfig):
        per = max(1, cfg.epochs // n_grades)
        return [
            TrainConfig(cfg.eta, per, cfg.optimizer, cfg.checkpoint_every,
                        rng.substream(cfg.seed, l))
            for l in range(n_grades)
        ]
    cfgs = list(cfg)
    if len(cfgs) != n_grades:
        raise ValueError("need one TrainConfig per grade")
    return cfgs


def _grade_scales(eps, n_grades: int) -> list[float]:
    if np.isscalar(eps):
        return [float(eps)] * n_grades
    scales = [float(x) for x in eps]
    if len(scales) != n_grades:
        raise ValueError("need one epsilon per grade")
    return scales


def train_mgdl(grades, data: Dataset, cfg, n_grades: int = 4,
               eps=1.0, val_data: Dataset | None = None
               ) -> tuple[GradeStack, list[TrainTrace]]:
    """Sequential residual fitting.

    `grades` is a preset family name ("MGDL-1", ...) or explicit full
    architectures with frozen prefixes. A single TrainConfig splits its epoch
    budget evenly across the grades (each grade gets its own seed substream);
    pass a list of configs for full control. Divergence in a grade stops the
    run and returns the stack built so far.
    """
    archs = _as_grade_archs(grades, n_grades)
    n_grades = len(archs)
    cfgs = _grade_configs(cfg, n_grades)
    scales = _grade_scales(eps, n_grades)

    stack = GradeStack([])
    traces: list[TrainTrace] = []
    feats = data.inputs
    val_feats = val_data.inputs if val_data is not None else None
    resid = data.target_matrix.astype(np.float64).copy()
    val_resid = val_data.target_matrix.copy() if val_data is not None else None

    for l, (full_arch, gcfg, scale) in enumerate(zip(archs, cfgs, scales)):
        tail = full_arch.trainable_tail()
        if tail.widths[0] != feats.shape[1]:
            raise ValueError(
                f"grade {l + 1} input width {tail.widths[0]} does not match "
                f"the feature width {feats.shape[1]}"
            )
        gdata = Dataset(feats, resid)
        gval = Dataset(val_feats, val_resid) if val_data is not None else None
        params, trace = train_sgdl(tail, gdata, gcfg, val_data=gval)
        traces.append(trace)
        if trace.diverged:
            break
        stack.grades.append((tail, params, scale))
        pred = batch_forward(tail, params, feats)
        resid = resid - scale * pred
        stack.residual_norms.append(float(np.linalg.norm(resid)))
        if val_data is not None:
            val_resid = val_resid - scale * batch_forward(tail, params, val_feats)
        if l + 1 < n_grades:
            feats = hidden_features(tail, params, feats)
            if val_data is not None:
                val_feats = hidden_features(tail, params, val_feats)
    return stack, traces


def mgdl_predict(stack: GradeStack, X: np.ndarray) -> np.ndarray:
    """Sum of scaled grade outputs along the frozen feature chain; (N, 1)."""
    X = np.asarray(X, dtype=np.float64)
    out = None
    feats = X
    for i, (tail, params, scale) in enumerate(stack.grades):
        y = scale * batch_forward(tail, params, feats)
        out = y if out is None else out + y
        if i + 1 < len(stack.grades):
            feats = hidden_features(tail, params, feats)
    if out is None:
        raise ValueError("empty grade stack")
    return out


def mgdl_val_loss(stack: GradeStack, data: Dataset) -> float:
    pred = mgdl_predict(stack, data.inputs)
    r = pred - data.target_matrix
    return float(np.sum(r * r)) / (2.0 * data.n)


def _msdl_closures(march: MsdlArch, data: Dataset):
    N = data.n
    yT = np.ascontiguousarray(data.target_matrix.T)
    layout = msdl_param_layout(march)
    scaled_XT = [
        np.ascontiguousarray((scale * data.inputs).T) for scale in march.scales
    ]
    counts = []
    for sub in march.subnets:
        counts.append(sum(r * c + r for r, c in layer_shapes(sub)))
    offsets = np.concatenate([[0], np.cumsum(counts)])

    def split(w):
        return [
            ParamVec(tuple(layer_shapes(sub)), w[offsets[i]:offsets[i + 1]])
            for i, sub in enumerate(march.subnets)
        ]

    def loss_grad(w):
        parts = split(w)
        caches = []
        out = None
        for sub, XT, pv in zip(march.subnets, scaled_XT, parts):
            views = param_views(pv)
            acts, derivs, o = _cache(sub, views, XT)
            caches.append((sub, views, acts, derivs))
            out = o if out is None else out + o
        e = out - yT
        L = float(np.sum(e * e)) / (2.0 * N)
        if not np.isfinite(L):
            return L, np.zeros_like(w)
        wrow = e[0] / N
        g = np.concatenate([
            _weighted_grad(sub, views, acts, derivs, wrow)
            for sub, views, acts, derivs in caches
        ])
        return L, g

    def loss_only(w):
        parts = split(w)
        out = None
        for sub, XT, pv in zip(march.subnets, scaled_XT, parts):
            views = param_views(pv)
            _, _, o = _cache(sub, views, XT)
            out = o if out is None else out + o
        e = out - yT
        return float(np.sum(e * e)) / (2.0 * N)

    return loss_grad, loss_only, layout


def train_msdl(march: MsdlArch, data: Dataset, cfg: TrainConfig,
               val_data: Dataset | None = None
               ) -> tuple[ParamVec, TrainTrace]:
    """Joint full-batch training of all subnets on their scaled inputs."""
    for sub in march.subnets:
        _check_trainable_depth(sub, "train_msdl")
    loss_grad, loss_only, layout = _msdl_closures(march, data)
    val_loss = None
    if val_data is not None:
        _, vloss, _ = _msdl_closures(march, val_data)
        val_loss = vloss
    w0 = msdl_init_params(march, cfg.seed).data.copy()
    w, trace = _optimize(loss_grad, loss_only, w0, layout, cfg, val_loss=val_loss)
    return ParamVec(layout, w), trace


# ---------------------------------------------------------------------------
# learning-rate sweeps


@dataclass(frozen=True)
class SweepRow:
    eta: float
    train_loss: float
    val_loss: float
    diverged: bool


def lr_sweep(run_at_eta, etas) -> list[SweepRow]:
    """One independent run per eta (the callable must reuse the same seed and
    init across calls). run_at_eta(eta) -> (train_loss, val_loss, diverged)."""
    rows = []
    for eta in etas:
        train_loss, val_loss, diverged = run_at_eta(float(eta))
        rows.append(SweepRow(float(eta), float(train_loss), float(val_loss),
                             bool(diverged)))
    return rows


def best_eta(rows: list[SweepRow]) -> SweepRow:
    """Smallest validation loss; ties break toward the smaller eta; diverged
    rows never win."""
    alive = [r for r in rows if not r.diverged and np.isfinite(r.val_loss)]
    if not alive:
        raise ValueError("every eta diverged")
    return min(alive, key=lambda r: (r.val_loss, r.eta))


def sgdl_sweeper(arch: Arch, data: Dataset, val_data: Dataset, epochs: int,
                 seed: int, optimizer: str = "gd"):
    """run_at_eta callable for lr_sweep over a plain stack."""
    def run(eta):
        cfg = TrainConfig(eta, epochs, optimizer, None, seed)
        params, trace = train_sgdl(arch, data, cfg)
        if trace.diverged:
            return trace.losses[-1], float("inf"), True
        return trace.final_loss, mse_loss(arch, params, val_data), False
    return run


def mgdl_sweeper(family, data: Dataset, val_data: Dataset, epochs: int,
                 seed: int, n_grades: int = 4, eps=1.0,
                 optimizer: str = "gd"):
    """run_at_eta callable for lr_sweep over a graded stack. The epoch budget
    is the total across grades."""
    def run(eta):
        cfg = TrainConfig(eta, epochs, optimizer, None, seed)
        stack, traces = train_mgdl(family, data, cfg, n_grades=n_grades, eps=eps)
        if traces[-1].diverged or not stack.grades:
            bad = traces[-1].losses[-1] if len(traces[-1].losses) else float("nan")
            return bad, float("inf"), True
        train_loss = traces[-1].final_loss
        return train_loss, mgdl_val_loss(stack, val_data), False
    return run


# ---------------------------------------------------------------------------
# trace serialization


def format_float(x: float) -> str:
    """Shortest round-trip decimal form; deterministic for identical doubles."""
    return repr(float(x))


def train_trace_csv(trace: TrainTrace, eig_rows: dict | None = None) -> str:
    """CSV text: epoch, loss, then val_loss / eig_min / eig_max columns when
    that data exists. Rows without a sampled value leave the cell empty."""
    vals = dict(trace.val_losses) if trace.val_losses else None
    cols = ["epoch", "loss"]
    if vals is not None:
        cols.append("val_loss")
    if eig_rows is not None:
        cols.extend(["eig_min", "eig_max"])
    lines = [",".join(cols)]
    for k, L in enumerate(trace.losses):
        row = [str(k), format_float(L)]
        if vals is not None:
            row.append(format_float(vals[k]) if k in vals else "")
        if eig_rows is not None:
            if k in eig_rows:
                lo, hi = eig_rows[k]
                row.extend([format_float(lo), format_float(hi)])
            else:
                row.extend(["", ""])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
