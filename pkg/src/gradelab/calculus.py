"""Losses, explicit gradients and Hessians, and finite-difference oracles.

The explicit formulas all instantiate one structure. Write the per-sample
output Jacobian of a scalar-output network in layer blocks

    dN/dW_j = s_j kron a_{j-1},    dN/db_j = s_j,

where ``s_j`` is the suffix product of indicator and weight matrices from
layer j to the output and ``a_{j-1}`` is the layer input. For a piecewise
linear activation the second derivative of the output contributes, for layer
pair p < q, the factor ``s_q^T kron G_pq kron a_{p-1}`` (``s_q^T kron G_pq``
for a bias row), with ``G_pq`` the indicator/weight product strictly between
the two layers; pairs with a bias column or p = q contribute nothing. Mean
squared error then has

    H = (1/N) J^T J + (1/N) sum_l e_l * (curvature factor at sample l),

and the TV-regularized objective reuses the same pieces with difference
operators applied to the Jacobian rows and residual-derived sample weights.

Supported explicit families: trainable tails with 1 or 4 hidden ReLU layers
(plus the multi-scale parallel model built from them). Everything else goes
through the finite-difference oracles, which are authoritative whenever the
two routes disagree.

Gradients come back as full-length ParamVecs with exact zeros on frozen
blocks; Hessians cover only the trainable tail parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import (
    Arch,
    MsdlArch,
    ParamVec,
    act_apply,
    act_deriv,
    batch_forward,
    layer_shapes,
    msdl_forward,
    msdl_param_layout,
    msdl_split_params,
    param_views,
)

# trainable tails with an explicit derivative path (number of hidden layers)
_EXPLICIT_HIDDEN = (1, 4)


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Dataset:
    """Supervised pairs. inputs (N, d_in); targets (N,) or (N, d_out)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("inputs must be (N, d_in)")
        if y.ndim not in (1, 2):
            raise ValueError("targets must be (N,) or (N, d_out)")
        if y.shape[0] != X.shape[0]:
            raise ValueError("inputs and targets disagree on N")
        if X.size and not np.all(np.isfinite(X)):
            raise ValueError("inputs contain non-finite entries")
        if y.size and not np.all(np.isfinite(y)):
            raise ValueError("targets contain non-finite entries")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def target_matrix(self) -> np.ndarray:
        y = self.targets
        return y[:, None] if y.ndim == 1 else y


@dataclass(frozen=True)
class ActivationCache:
    """Forward pass intermediates, sample-in-columns orientation.

    activations[j] is (d_j, N) with activations[0] the transposed input;
    derivs[j] is the activation derivative at hidden layer j+1's
    preactivation (for relu: the 0/1 indicator, kink assigned to the active
    side); output is (d_D, N).
    """

    activations: tuple
    derivs: tuple
    output: np.ndarray


@dataclass
class TvState:
    """Network parameters plus the split variable of the TV objective.

    u stacks the horizontal block over the vertical block: u[:n] pairs with
    differences along the second (column) axis, u[n:] along the first.
    """

    theta: ParamVec
    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape[0] != 2 * self.u.shape[1]:
            raise ValueError("u must be (2n, n)")


# ---------------------------------------------------------------------------
# forward caches and suffix products


def _cache(arch: Arch, views, XT: np.ndarray):
    """XT is (d_0, N). Returns (activations, derivs, output)."""
    D = arch.depth
    acts = [XT]
    derivs = []
    A = XT
    out = None
    for j, (W, b) in enumerate(views):
        Z = W @ A + b[:, None]
        if j < D - 1:
            A = act_apply(arch.activation, Z)
            acts.append(A)
            derivs.append(act_deriv(arch.activation, Z))
        else:
            out = Z
    return acts, derivs, out


def activation_cache(arch: Arch, pv: ParamVec, X: np.ndarray) -> ActivationCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.widths[0]:
        raise ValueError(f"X must be (N, {arch.widths[0]})")
    acts, derivs, out = _cache(arch, param_views(pv), X.T)
    return ActivationCache(tuple(acts), tuple(derivs), out)


def _suffixes(views, derivs, n_samples: int):
    """T[l] = suffix product from hidden layer l (0-based) to the scalar
    output, shape (d_{l+1}, N); the output layer's suffix is all ones."""
    D = len(views)
    T = [None] * (D - 1)
    s = np.ones((1, n_samples))
    for l in range(D - 2, -1, -1):
        s = derivs[l] * (views[l + 1][0].T @ s)
        T[l] = s
    return T


def _suffix_for_layer(T, l, D, n_samples):
    return T[l] if l < D - 1 else np.ones((1, n_samples))


def _weighted_grad(arch: Arch, views, acts, derivs, w: np.ndarray) -> np.ndarray:
    """Gradient of sum_n w_n * N(x_n) in the full flat layout.

    Frozen blocks come back exactly zero. w is (N,).
    """
    D = arch.depth
    delta = w[None, :]
    grads_w = [None] * D
    grads_b = [None] * D
    for l in range(D - 1, -1, -1):
        if l < arch.frozen_depth:
            break
        grads_w[l] = delta @ acts[l].T
        grads_b[l] = delta.sum(axis=1)
        if l > 0:
            delta = derivs[l - 1] * (views[l][0].T @ delta)
    chunks = []
    for l, (r, c) in enumerate(layer_shapes(arch)):
        if grads_w[l] is None:
            chunks.append(np.zeros(r * c + r))
        else:
            chunks.append(grads_w[l].reshape(-1))
            chunks.append(grads_b[l])
    return np.concatenate(chunks)


def _tail_jacobian(arch: Arch, views, acts, derivs) -> np.ndarray:
    """Per-sample output Jacobian over the trainable tail, (N, M_tail)."""
    D = arch.depth
    N = acts[0].shape[1]
    T = _suffixes(views, derivs, N)
    blocks = []
    for l in range(arch.frozen_depth, D):
        s = _suffix_for_layer(T, l, D, N)
        a = acts[l]
        # entry order matches the flat layout: row r of W then column i
        blocks.append(
            np.einsum("rn,in->nri", s, a).reshape(N, s.shape[0] * a.shape[0])
        )
        blocks.append(s.T)
    return np.concatenate(blocks, axis=1)


def _tail_offsets(arch: Arch):
    """Flat offsets of each trainable layer's (W, b) inside the tail vector."""
    offs = {}
    off = 0
    for l, (r, c) in enumerate(layer_shapes(arch)):
        if l < arch.frozen_depth:
            continue
        offs[l] = (off, off + r * c)
        off += r * c + r
    return offs, off


def _add_curvature(H, arch: Arch, views, acts, derivs, w: np.ndarray):
    """Add the activation-curvature part sum_n w_n * d2N(x_n) into the upper
    triangle of H (trainable-tail indexing). Requires a piecewise linear
    activation: layer pairs (p < q) contribute through the indicator products
    only, and same-layer or bias-column pairs vanish.
    """
    D = arch.depth
    N = acts[0].shape[1]
    T = _suffixes(views, derivs, N)
    offs, _ = _tail_offsets(arch)
    shapes = layer_shapes(arch)
    for lp in range(arch.frozen_depth, D - 1):
        dp_out, dp_in = shapes[lp]
        # G starts as the sample-wise diagonal embed of layer lp's indicator
        G = np.zeros((dp_out, dp_out, N))
        idx = np.arange(dp_out)
        G[idx, idx, :] = derivs[lp]
        a_p = acts[lp]
        wp_off, bp_off = offs[lp]
        for lq in range(lp + 1, D):
            dq_out, dq_in = shapes[lq]
            s_q = _suffix_for_layer(T, lq, D, N)
            wq_off, _bq = offs[lq]
            # weighted middle product, flattened for one big GEMM
            P = (G * w[None, None, :]).reshape(dp_out * dq_in, N)
            # bias-row block: (dp_out, dq_out * dq_in)
            R2 = P @ s_q.T  # (dp_out * dq_in, dq_out)
            B2 = (
                R2.reshape(dp_out, dq_in, dq_out)
                .transpose(0, 2, 1)
                .reshape(dp_out, dq_out * dq_in)
            )
            H[bp_off:bp_off + dp_out, wq_off:wq_off + dq_out * dq_in] += B2
            # weight-row block: (dp_out * dp_in, dq_out * dq_in)
            U = (a_p[:, None, :] * s_q[None, :, :]).reshape(dp_in * dq_out, N)
            R1 = P @ U.T  # (dp_out * dq_in, dp_in * dq_out)
            B1 = (
                R1.reshape(dp_out, dq_in, dp_in, dq_out)
                .transpose(0, 2, 3, 1)
                .reshape(dp_out * dp_in, dq_out * dq_in)
            )
            H[wp_off:wp_off + dp_out * dp_in,
              wq_off:wq_off + dq_out * dq_in] += B1
            if lq < D - 1:
                # extend G across layer lq: right-multiply by W^T then the
                # next indicator, samplewise
                G = np.tensordot(G, views[lq][0], axes=([1], [1]))  # (dp,N,dq_out)
                G = G.transpose(0, 2, 1) * derivs[lq][None, :, :]


def _mirror_upper(H: np.ndarray) -> np.ndarray:
    """Symmetrize by construction: keep the upper triangle, mirror it down."""
    U = np.triu(H)
    return U + U.T - np.diag(np.diag(U))


def _require_explicit(arch: Arch, what: str, hidden: int | None = None):
    if arch.activation.kind != "relu":
        raise ValueError(f"{what} requires the relu activation")
    tail_hidden = arch.trainable_tail().n_hidden
    if hidden is not None and tail_hidden != hidden:
        raise ValueError(
            f"{what} expects a trainable tail with {hidden} hidden layers, "
            f"got {tail_hidden}"
        )
    if hidden is None and tail_hidden not in _EXPLICIT_HIDDEN:
        raise ValueError(
            f"no explicit derivative path for a {tail_hidden}-hidden tail "
            f"(supported: {_EXPLICIT_HIDDEN})"
        )
    if arch.widths[-1] != 1:
        raise ValueError(f"{what} requires a scalar output")


def _check_params(arch: Arch, pv: ParamVec):
    if pv.layout != tuple(layer_shapes(arch)):
        raise ValueError("params layout does not match the architecture")


# ---------------------------------------------------------------------------
# mean squared error family


def mse_loss(arch: Arch, pv: ParamVec, data: Dataset) -> float:
    """(1/2N) sum_l ||y_l - N(x_l)||^2."""
    _check_params(arch, pv)
    out = batch_forward(arch, pv, data.inputs)
    r = out - data.target_matrix
    return float(np.sum(r * r)) / (2.0 * data.n)


def _grad_mse(arch: Arch, pv: ParamVec, data: Dataset) -> ParamVec:
    _check_params(arch, pv)
    views = param_views(pv)
    acts, derivs, out = _cache(arch, views, data.inputs.T)
    e = (out - data.target_matrix.T)[0]  # scalar output
    flat = _weighted_grad(arch, views, acts, derivs, e / data.n)
    return ParamVec(pv.layout, flat)


def grad_mse_1h(arch: Arch, pv: ParamVec, data: Dataset) -> ParamVec:
    """Explicit MSE gradient for a 1-hidden trainable tail."""
    _require_explicit(arch, "grad_mse_1h", hidden=1)
    return _grad_mse(arch, pv, data)


def grad_mse_4h(arch: Arch, pv: ParamVec, data: Dataset) -> ParamVec:
    """Explicit MSE gradient for a 4-hidden trainable tail."""
    _require_explicit(arch, "grad_mse_4h", hidden=4)
    return _grad_mse(arch, pv, data)


def _hess_mse(arch: Arch, pv: ParamVec, data: Dataset) -> np.ndarray:
    _check_params(arch, pv)
    views = param_views(pv)
    acts, derivs, out = _cache(arch, views, data.inputs.T)
    e = (out - data.target_matrix.T)[0]
    N = data.n
    J = _tail_jacobian(arch, views, acts, derivs)
    H = (J.T @ J) / N
    _add_curvature(H, arch, views, acts, derivs, e / N)
    return _mirror_upper(H)


def hess_mse_1h(arch: Arch, pv: ParamVec, data: Dataset) -> np.ndarray:
    """Explicit MSE Hessian (trainable tail) for a 1-hidden tail."""
    _require_explicit(arch, "hess_mse_1h", hidden=1)
    return _hess_mse(arch, pv, data)


def hess_mse_4h(arch: Arch, pv: ParamVec, data: Dataset) -> np.ndarray:
    """Explicit MSE Hessian (trainable tail) for a 4-hidden tail."""
    _require_explicit(arch, "hess_mse_4h", hidden=4)
    return _hess_mse(arch, pv, data)


def grad_mse_auto(arch: Arch, pv: ParamVec, data: Dataset) -> ParamVec:
    """Dispatch on the trainable tail depth (1 or 4 hidden layers)."""
    _require_explicit(arch, "grad_mse_auto")
    return _grad_mse(arch, pv, data)


def hess_mse_auto(arch: Arch, pv: ParamVec, data: Dataset) -> np.ndarray:
    _require_explicit(arch, "hess_mse_auto")
    return _hess_mse(arch, pv, data)


# ---------------------------------------------------------------------------
# multi-scale parallel model


def msdl_mse_loss(march: MsdlArch, pv: ParamVec, data: Dataset) -> float:
    out = msdl_forward(march, pv, data.inputs)
    r = out - data.target_matrix
    return float(np.sum(r * r)) / (2.0 * data.n)


def _msdl_residual(march: MsdlArch, pv: ParamVec, data: Dataset):
    out = msdl_forward(march, pv, data.inputs)
    return (out - data.target_matrix)[:, 0]


def msdl_grad(march: MsdlArch, pv: ParamVec, data: Dataset) -> ParamVec:
    """Explicit MSE gradient of the summed parallel model.

    Every subnet sees the shared residual; blocks concatenate per subnet.
    """
    for sub in march.subnets:
        _require_explicit(sub, "msdl_grad")
    e = _msdl_residual(march, pv, data)
    w = e / data.n
    chunks = []
    for sub, scale, sub_pv in zip(
        march.subnets, march.scales, msdl_split_params(march, pv)
    ):
        views = param_views(sub_pv)
        acts, derivs, _ = _cache(sub, views, (scale * data.inputs).T)
        chunks.append(_weighted_grad(sub, views, acts, derivs, w))
    return ParamVec(msdl_param_layout(march), np.concatenate(chunks))


def msdl_hess(march: MsdlArch, pv: ParamVec, data: Dataset) -> np.ndarray:
    """Explicit MSE Hessian of the summed parallel model.

    Cross-subnet blocks are pure Jacobian outer products; the activation
    curvature only appears inside each subnet's diagonal block.
    """
    for sub in march.subnets:
        _require_explicit(sub, "msdl_hess")
    e = _msdl_residual(march, pv, data)
    N = data.n
    w = e / N
    jacs = []
    caches = []
    for sub, scale, sub_pv in zip(
        march.subnets, march.scales, msdl_split_params(march, pv)
    ):
        views = param_views(sub_pv)
        acts, derivs, _ = _cache(sub, views, (scale * data.inputs).T)
        caches.append((sub, views, acts, derivs))
        jacs.append(_tail_jacobian(sub, views, acts, derivs))
    J = np.concatenate(jacs, axis=1)
    H = (J.T @ J) / N
    off = 0
    for (sub, views, acts, derivs), Js in zip(caches, jacs):
        m = Js.shape[1]
        block = H[off:off + m, off:off + m].copy()
        _add_curvature(block, sub, views, acts, derivs, w)
        H[off:off + m, off:off + m] = block
        off += m
    return _mirror_upper(H)


# ---------------------------------------------------------------------------
# finite-difference oracles


def grad_fd(f, x0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.shape[0]):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def hess_fd(f, x0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central second differences of a scalar function; symmetric output."""
    x0 = np.asarray(x0, dtype=np.float64)
    m = x0.shape[0]
    H = np.zeros((m, m))
    f0 = f(x0)
    for i in range(m):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / (h * h)
    for i in range(m):
        for j in range(i + 1, m):
            xpp = x0.copy()
            xpm = x0.copy()
            xmp = x0.copy()
            xmm = x0.copy()
            xpp[i] += h
            xpp[j] += h
            xpm[i] += h
            xpm[j] -= h
            xmp[i] -= h
            xmp[j] += h
            xmm[i] -= h
            xmm[j] -= h
            H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h * h)
    return H


def hess_fd_from_grad(g, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a gradient function; symmetrized."""
    x0 = np.asarray(x0, dtype=np.float64)
    m = x0.shape[0]
    H = np.zeros((m, m))
    for i in range(m):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        H[:, i] = (g(xp) - g(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def admissible_kink_free(arch_or_march, pv: ParamVec, X: np.ndarray,
                         h: float = 1e-6, factor: float = 10.0) -> bool:
    """True when every hidden preactivation clears factor*h in magnitude.

    Finite-difference checks against the explicit relu formulas are only
    meaningful when no sample sits within a step of an activation kink; this
    is the admissibility filter the comparison tests use.
    """
    thresh = factor * h
    if isinstance(arch_or_march, MsdlArch):
        march = arch_or_march
        for sub, scale, sub_pv in zip(
            march.subnets, march.scales, msdl_split_params(march, pv)
        ):
            if not admissible_kink_free(sub, sub_pv, scale * np.asarray(X), h, factor):
                return False
        return True
    arch = arch_or_march
    views = param_views(pv)
    A = np.asarray(X, dtype=np.float64).T
    for j, (W, b) in enumerate(views):
        Z = W @ A + b[:, None]
        if j < arch.depth - 1:
            if float(np.min(np.abs(Z))) <= thresh:
                return False
            A = act_apply(arch.activation, Z)
    return True


# ---------------------------------------------------------------------------
# total-variation objective (elementwise difference form, identity data map)


def default_pixel_grid(n: int) -> np.ndarray:
    """Inputs for an n x n image in row-major pixel order: pixel (s, t) maps
    to ((s + 0.5)/n, (t + 0.5)/n) with 0-based indices."""
    s = (np.arange(n) + 0.5) / n
    rows, cols = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([rows.reshape(-1), cols.reshape(-1)])


def diff_h(V: np.ndarray) -> np.ndarray:
    """Forward difference along the second axis; first column zero."""
    out = np.zeros_like(V)
    out[:, 1:] = V[:, 1:] - V[:, :-1]
    return out


def diff_v(V: np.ndarray) -> np.ndarray:
    """Forward difference along the first axis; first row zero."""
    out = np.zeros_like(V)
    out[1:, :] = V[1:, :] - V[:-1, :]
    return out


def diff_h_adj(Y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(Y)
    out[:, 1:] += Y[:, 1:]
    out[:, :-1] -= Y[:, 1:]
    return out


def diff_v_adj(Y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(Y)
    out[1:, :] += Y[1:, :]
    out[:-1, :] -= Y[1:, :]
    return out


def _tv_setup(arch: Arch, state: TvState, observed: np.ndarray,
              inputs: np.ndarray | None, eps_scale: float,
              offset: np.ndarray | None):
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[0] != observed.shape[1]:
        raise ValueError("observed image must be square (n, n)")
    n = observed.shape[0]
    if state.u.shape != (2 * n, n):
        raise ValueError(f"u must be ({2 * n}, {n}) to match the image")
    if inputs is None:
        inputs = default_pixel_grid(n)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape != (n * n, arch.widths[0]):
        raise ValueError("inputs must be (n*n, d_in) in row-major pixel order")
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64)
        if offset.shape != (n, n):
            raise ValueError("offset must be (n, n)")
    return observed, n, inputs, offset


def _tv_residuals(arch, views, acts_out, state, observed, n, eps_scale, offset):
    """Common residual fields. acts_out is the (1, n*n) network output."""
    pred = eps_scale * acts_out[0].reshape(n, n)
    if offset is not None:
        pred = pred + offset
    u1 = state.u[:n]
    u2 = state.u[n:]
    e1 = pred - observed
    e2 = diff_h(pred) - u1
    e3 = diff_v(pred) - u2
    return e1, e2, e3, u1, u2


def tv_loss(arch: Arch, state: TvState, observed: np.ndarray, lam: float,
            beta: float, inputs: np.ndarray | None = None,
            eps_scale: float = 1.0, offset: np.ndarray | None = None) -> float:
    """(1/2)||N - f||^2 + lam*||u||_1 + (beta/2)||B(N) - u||^2, plain sums.

    B stacks forward differences along both axes with the first row/column
    convention: out-of-range neighbors repeat the boundary pixel, so those
    differences are identically zero. ``offset`` adds a fixed image to the
    (eps_scale-weighted) network output, which is how a graded model feeds
    its accumulated prediction through the same objective.
    """
    _check_params(arch, state.theta)
    observed, n, inputs, offset = _tv_setup(
        arch, state, observed, inputs, eps_scale, offset
    )
    views = param_views(state.theta)
    _, _, out = _cache(arch, views, inputs.T)
    e1, e2, e3, u1, u2 = _tv_residuals(
        arch, views, out, state, observed, n, eps_scale, offset
    )
    return float(
        0.5 * np.sum(e1 * e1)
        + lam * (np.sum(np.abs(u1)) + np.sum(np.abs(u2)))
        + 0.5 * beta * (np.sum(e2 * e2) + np.sum(e3 * e3))
    )


def _tv_weights(e1, e2, e3, beta):
    # d(loss)/d(pred) as an image: the data residual plus the adjoint
    # differences of the two split residuals
    return e1 + beta * (diff_h_adj(e2) + diff_v_adj(e3))


def _tv_grad(arch: Arch, state: TvState, observed, lam, beta, inputs,
             eps_scale, offset) -> ParamVec:
    observed, n, inputs, offset = _tv_setup(
        arch, state, observed, inputs, eps_scale, offset
    )
    views = param_views(state.theta)
    acts, derivs, out = _cache(arch, views, inputs.T)
    e1, e2, e3, _, _ = _tv_residuals(
        arch, views, out, state, observed, n, eps_scale, offset
    )
    w = _tv_weights(e1, e2, e3, beta).reshape(-1)
    flat = eps_scale * _weighted_grad(arch, views, acts, derivs, w)
    return ParamVec(state.theta.layout, flat)


def tv_grad_1h(arch: Arch, state: TvState, observed: np.ndarray, lam: float,
               beta: float, inputs: np.ndarray | None = None,
               eps_scale: float = 1.0,
               offset: np.ndarray | None = None) -> ParamVec:
    """Explicit TV gradient in theta for a 1-hidden trainable tail."""
    _require_explicit(arch, "tv_grad_1h", hidden=1)
    return _tv_grad(arch, state, observed, lam, beta, inputs, eps_scale, offset)


def tv_grad_4h(arch: Arch, state: TvState, observed: np.ndarray, lam: float,
               beta: float, inputs: np.ndarray | None = None,
               eps_scale: float = 1.0,
               offset: np.ndarray | None = None) -> ParamVec:
    """Explicit TV gradient in theta for a 4-hidden trainable tail."""
    _require_explicit(arch, "tv_grad_4h", hidden=4)
    return _tv_grad(arch, state, observed, lam, beta, inputs, eps_scale, offset)


def _diff_jacobian(J: np.ndarray, n: int, axis: int) -> np.ndarray:
    Jimg = J.reshape(n, n, J.shape[1])
    out = np.zeros_like(Jimg)
    if axis == 1:
        out[:, 1:, :] = Jimg[:, 1:, :] - Jimg[:, :-1, :]
    else:
        out[1:, :, :] = Jimg[1:, :, :] - Jimg[:-1, :, :]
    return out.reshape(n * n, J.shape[1])


def _tv_hess(arch: Arch, state: TvState, observed, lam, beta, inputs,
             eps_scale, offset) -> np.ndarray:
    observed, n, inputs, offset = _tv_setup(
        arch, state, observed, inputs, eps_scale, offset
    )
    views = param_views(state.theta)
    acts, derivs, out = _cache(arch, views, inputs.T)
    e1, e2, e3, _, _ = _tv_residuals(
        arch, views, out, state, observed, n, eps_scale, offset
    )
    J = _tail_jacobian(arch, views, acts, derivs)
    Jh = _diff_jacobian(J, n, axis=1)
    Jv = _diff_jacobian(J, n, axis=0)
    H = J.T @ J + beta * (Jh.T @ Jh + Jv.T @ Jv)
    H *= eps_scale * eps_scale
    w = _tv_weights(e1, e2, e3, beta).reshape(-1)
    Hc = np.zeros_like(H)
    _add_curvature(Hc, arch, views, acts, derivs, w)
    H += eps_scale * Hc
    return _mirror_upper(H)


def tv_hess_1h(arch: Arch, state: TvState, observed: np.ndarray, lam: float,
               beta: float, inputs: np.ndarray | None = None,
               eps_scale: float = 1.0,
               offset: np.ndarray | None = None) -> np.ndarray:
    """Explicit TV Hessian in theta (trainable tail) for a 1-hidden tail."""
    _require_explicit(arch, "tv_hess_1h", hidden=1)
    return _tv_hess(arch, state, observed, lam, beta, inputs, eps_scale, offset)


def tv_hess_4h(arch: Arch, state: TvState, observed: np.ndarray, lam: float,
               beta: float, inputs: np.ndarray | None = None,
               eps_scale: float = 1.0,
               offset: np.ndarray | None = None) -> np.ndarray:
    """Explicit TV Hessian in theta (trainable tail) for a 4-hidden tail."""
    _require_explicit(arch, "tv_hess_4h", hidden=4)
    return _tv_hess(arch, state, observed, lam, beta, inputs, eps_scale, offset)
