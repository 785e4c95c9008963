"""Stability spectra of gradient descent and the linearized surrogate.

Along a training run this module records the spectrum of the iteration
matrix I - eta * H at checkpoints, the running curvature bound alpha_hat
(largest |eigenvalue| of H seen so far), and the running contraction factor
tau_hat (largest |eigenvalue| of I - eta * H seen so far). The linearized
surrogate replaces the gradient at step k by its first-order expansion
around the iterate two steps back:

    w~^{k+1} = w~^k - eta * [ g(w^{k-1}) + H(w^{k-1}) (w~^k - w^{k-1}) ],

seeded with w~^0 = w^0 and w~^1 = w^1 from the full run. With a constant
Hessian (a quadratic loss) this reproduces gradient descent identically; on
a smooth loss with tau_hat < 1 the two iterate sequences approach the same
limit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import Dataset, hess_mse_auto
from .network import Arch, ParamVec, layer_shapes, trainable_param_count
from .numerics import ConvergenceError, sym_eig
from .training import TrainConfig, TrainTrace, format_float, train_sgdl


@dataclass
class SpectrumTrace:
    """Spectra of I - eta * H at checkpoint epochs.

    eig_small / eig_large hold the k smallest (ascending) and k largest
    (descending) eigenvalues per record, NaN-padded when the matrix is
    smaller than k or the eigensolve failed (failures are recorded and the
    run continues). alpha[r] and tau[r] are that record's curvature bound
    max|eig(H)| and contraction factor max|eig(I - eta H)|.
    """

    eta: float
    k: int = 10
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    eig_small: list = field(default_factory=list)
    eig_large: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def record(self, epoch: int, loss: float, h_eigs: np.ndarray | None):
        self.epochs.append(int(epoch))
        self.losses.append(float(loss))
        if h_eigs is None:
            self.eig_small.append(np.full(self.k, np.nan))
            self.eig_large.append(np.full(self.k, np.nan))
            self.alpha.append(np.nan)
            self.tau.append(np.nan)
            self.failures.append(int(epoch))
            return
        a_eigs = 1.0 - self.eta * h_eigs  # exact affine spectral map
        a_sorted = np.sort(a_eigs)
        small = np.full(self.k, np.nan)
        large = np.full(self.k, np.nan)
        kk = min(self.k, a_sorted.shape[0])
        small[:kk] = a_sorted[:kk]
        large[:kk] = a_sorted[::-1][:kk]
        self.eig_small.append(small)
        self.eig_large.append(large)
        self.alpha.append(float(np.max(np.abs(h_eigs))))
        self.tau.append(float(np.max(np.abs(a_eigs))))

    @property
    def alpha_running(self) -> np.ndarray:
        return np.fmax.accumulate(np.asarray(self.alpha, dtype=np.float64))

    @property
    def tau_running(self) -> np.ndarray:
        return np.fmax.accumulate(np.asarray(self.tau, dtype=np.float64))


def iteration_matrix(H: np.ndarray, eta: float) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    return np.eye(H.shape[0]) - eta * H


def default_cadence(epochs: int) -> int:
    return max(1, epochs // 200)


def track_spectrum(arch: Arch, data: Dataset, cfg: TrainConfig, k: int = 10,
                   every: int | None = None,
                   val_data: Dataset | None = None
                   ) -> tuple[ParamVec, TrainTrace, SpectrumTrace]:
    """Train while recording the iteration-matrix spectrum at checkpoints.

    The Hessian is the explicit one over the trainable tail; its failure at
    a checkpoint (eigensolver breakdown) leaves a NaN record and the run
    keeps going.
    """
    every = default_cadence(cfg.epochs) if every is None else every
    cfg = TrainConfig(cfg.eta, cfg.epochs, cfg.optimizer, every, cfg.seed)
    spec = SpectrumTrace(eta=cfg.eta, k=k)
    layout = tuple(layer_shapes(arch))
    # loss at the checkpoint is recomputed cheaply from the trace afterwards;
    # the callback only owes the Hessian work
    pending: list[tuple[int, np.ndarray | None]] = []

    def cb(epoch, w):
        pv = ParamVec(layout, w.copy())
        try:
            H = hess_mse_auto(arch, pv, data)
            eigs = sym_eig(H, want_vectors=False).eigenvalues
        except (ConvergenceError, np.linalg.LinAlgError):
            eigs = None
        pending.append((epoch, eigs))

    params, trace = train_sgdl(arch, data, cfg, val_data=val_data,
                               checkpoint_cb=cb)
    loss_at = {k_: float(v) for k_, v in enumerate(trace.losses)}
    for epoch, eigs in pending:
        spec.record(epoch, loss_at.get(epoch, float("nan")), eigs)
    return params, trace, spec


def estimate_alpha_tau(spec: SpectrumTrace) -> tuple[float, float]:
    """Trajectory maxima (alpha_hat, tau_hat), skipping failed records.

    tau_hat >= |1 - eta * alpha_hat| always holds: the eigenvalue attaining
    alpha_hat maps affinely into the recorded spectrum of I - eta * H.
    """
    alpha = np.asarray(spec.alpha, dtype=np.float64)
    tau = np.asarray(spec.tau, dtype=np.float64)
    ok = np.isfinite(alpha)
    if not np.any(ok):
        raise ValueError("no successful spectrum records")
    return float(np.max(alpha[ok])), float(np.max(tau[ok]))


def spectrum_csv(spec: SpectrumTrace) -> str:
    cols = (
        ["epoch", "loss"]
        + [f"eig_small_{i + 1}" for i in range(spec.k)]
        + [f"eig_large_{i + 1}" for i in range(spec.k)]
        + ["alpha_running", "tau_running"]
    )
    lines = [",".join(cols)]
    a_run = spec.alpha_running
    t_run = spec.tau_running
    for r, epoch in enumerate(spec.epochs):
        row = [str(epoch), format_float(spec.losses[r])]
        row += [format_float(v) for v in spec.eig_small[r]]
        row += [format_float(v) for v in spec.eig_large[r]]
        row += [format_float(a_run[r]), format_float(t_run[r])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# linearized surrogate


@dataclass
class SurrogateState:
    """One step of surrogate bookkeeping: the surrogate iterate and the full
    iterate one step back (the expansion point of the next update)."""

    w_tilde: np.ndarray
    w_prev: np.ndarray


def linearized_step(state: SurrogateState, eta: float, grad_prev: np.ndarray,
                    hess_prev: np.ndarray) -> np.ndarray:
    """w~ <- w~ - eta [ g(w_prev) + H(w_prev) (w~ - w_prev) ]."""
    return state.w_tilde - eta * (
        grad_prev + hess_prev @ (state.w_tilde - state.w_prev)
    )


@dataclass
class SurrogateRun:
    w_full: np.ndarray
    w_tilde: np.ndarray
    gaps: np.ndarray          # ||w~^k - w^k|| at every step 0..K
    full_losses: np.ndarray | None
    diverged: bool


def run_surrogate(grad_fn, hess_fn, w0: np.ndarray, eta: float, K: int,
                  loss_fn=None) -> SurrogateRun:
    """Drive full GD and the linearized surrogate side by side for K steps.

    grad_fn / hess_fn take the flat iterate of the FULL run (the surrogate
    never feeds back into the expansion point). Divergence of the full run
    (non-finite iterates) stops both early.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    g = grad_fn(w)
    w_prevs = w.copy()
    wt = w.copy()                      # w~^0 = w^0
    gaps = [0.0]
    losses = [float(loss_fn(w))] if loss_fn is not None else None
    w = w - eta * g                    # w^1
    wt = w.copy()                      # w~^1 = w^1
    gaps.append(0.0)
    if losses is not None:
        losses.append(float(loss_fn(w)))
    diverged = False
    for k in range(1, K):
        g_prev = grad_fn(w_prevs)
        H_prev = hess_fn(w_prevs)
        wt_next = wt - eta * (g_prev + H_prev @ (wt - w_prevs))
        w_next = w - eta * grad_fn(w)
        if not (np.all(np.isfinite(w_next)) and np.all(np.isfinite(wt_next))):
            diverged = True
            break
        w_prevs = w
        w = w_next
        wt = wt_next
        gaps.append(float(np.linalg.norm(wt - w)))
        if losses is not None:
            losses.append(float(loss_fn(w)))
    return SurrogateRun(
        w_full=w,
        w_tilde=wt,
        gaps=np.asarray(gaps),
        full_losses=np.asarray(losses) if losses is not None else None,
        diverged=diverged,
    )


@dataclass(frozen=True)
class LimitReport:
    gap: float
    bound: float
    passed: bool
    tau_hat: float
    applicable: bool


def compare_limits(run: SurrogateRun, tau_hat: float,
                   tol: float = 1e-3) -> LimitReport:
    """Final-iterate agreement check: gap <= tol * (1 + ||w^K||).

    Only applicable when the full run stayed finite and tau_hat < 1; an
    inapplicable comparison never counts as passed.
    """
    gap = float(np.linalg.norm(run.w_tilde - run.w_full))
    bound = tol * (1.0 + float(np.linalg.norm(run.w_full)))
    applicable = (not run.diverged) and tau_hat < 1.0
    return LimitReport(gap, bound, applicable and gap <= bound, tau_hat,
                       applicable)
