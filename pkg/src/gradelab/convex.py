"""Exact convex reformulation of two-layer ReLU regression.

A two-layer ReLU network with squared loss and squared-norm regularization
has the same optimal value as a finite convex program indexed by the
activation patterns the data admits: each pattern i contributes a pair of
cone-constrained blocks (u_i, v_i), the fit term is built from the masked
data matrices D_i X, and the regularizer is a group norm. Optimal networks
are read off the nonzero blocks by the square-root splitting w = u/sqrt(|u|),
alpha = +-sqrt(|u|).

Pattern enumeration works over generic directions (open cells of the
hyperplane arrangement). Closures of the open cells cover all of R^d, so a
boundary-sitting neuron is always representable inside an adjacent open
pattern with the same masked fit; dropping boundary patterns loses nothing
while keeping the count equal to the number of arrangement regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng

FEAS_TOL = 1e-8
_FEAS_TARGET = 1e-9  # internal mu-schedule target; leaves margin under FEAS_TOL
_ZERO_BLOCK = 1e-10
_MASK_TOL = 1e-12


@dataclass(frozen=True)
class ArrangementPattern:
    """Activation mask over the data rows plus a direction realizing it."""

    mask: np.ndarray
    witness: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        w = np.asarray(self.witness, dtype=np.float64)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "witness", w)


def _mask_of(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    # entries within tolerance of the hyperplane count as active (>= 0 side)
    return (X @ w) >= -_MASK_TOL


def _dedup(X: np.ndarray, candidates) -> list[ArrangementPattern]:
    seen = {}
    for w in candidates:
        mask = _mask_of(X, w)
        key = np.packbits(mask).tobytes()
        if key not in seen:
            seen[key] = ArrangementPattern(mask, w)
    return sorted(seen.values(), key=lambda p: p.mask.tobytes())


def enumerate_patterns(X: np.ndarray, seed: int = 0) -> list[ArrangementPattern]:
    """Distinct activation masks 1[Xw >= 0] over generic directions w.

    d = 1: both signs. d = 2: exact sweep, one direction per open sector of
    the angle arrangement. d = 3: seeded random directions (at least
    10*N*(N-1)) plus perturbed pairwise cross products, deduplicated; larger
    d is rejected.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D (N, d)")
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    n, d = X.shape
    if d < 1 or n < 1:
        raise ValueError("X must be nonempty")
    if d > 3:
        raise ValueError(f"pattern enumeration supports d <= 3, got d={d}")

    if d == 1:
        cands = [np.array([1.0]), np.array([-1.0])]
        return _dedup(X, cands)

    if d == 2:
        angles = []
        for row in X:
            nr = float(np.hypot(row[0], row[1]))
            if nr == 0.0:
                continue
            phi = math.atan2(row[1], row[0])
            for a in (phi + 0.5 * math.pi, phi - 0.5 * math.pi):
                angles.append(a % (2.0 * math.pi))
        if not angles:
            return _dedup(X, [np.array([1.0, 0.0])])
        angles = sorted(angles)
        uniq = [angles[0]]
        for a in angles[1:]:
            if a - uniq[-1] > 1e-12:
                uniq.append(a)
        if uniq[0] + 2.0 * math.pi - uniq[-1] <= 1e-12 and len(uniq) > 1:
            uniq.pop()
        mids = []
        for i, a in enumerate(uniq):
            b = uniq[(i + 1) % len(uniq)] + (2.0 * math.pi if i + 1 == len(uniq) else 0.0)
            mids.append(0.5 * (a + b))
        if len(uniq) == 1:
            mids = [uniq[0] + 0.5 * math.pi, uniq[0] + 1.5 * math.pi]
        cands = [np.array([math.cos(a), math.sin(a)]) for a in mids]
        return _dedup(X, cands)

    # d == 3: sampling plus structured directions near two-plane edges
    cands = []
    n_random = max(3000, 10 * n * (n - 1))
    raw = rng.normals(rng.substream(seed, 0), 3 * n_random).reshape(n_random, 3)
    norms = np.linalg.norm(raw, axis=1)
    keep = norms > 1e-12
    cands.extend(raw[keep] / norms[keep, None])
    deltas = rng.uniforms(rng.substream(seed, 1), 4 * n * n).reshape(-1, 4)
    di = 0
    for i in range(n):
        for j in range(i + 1, n):
            c = np.cross(X[i], X[j])
            nc = float(np.linalg.norm(c))
            if nc < 1e-12:
                continue
            c = c / nc
            d4 = deltas[di % deltas.shape[0]]
            di += 1
            # wedge cells meeting the edge span both antipodes and several
            # opening scales
            for s0 in (1.0, -1.0):
                for eps in (1e-6, 1e-3):
                    for s1 in (1.0, -1.0):
                        for s2 in (1.0, -1.0):
                            w = s0 * c + eps * (
                                s1 * (0.5 + d4[0]) * X[i]
                                + s2 * (0.5 + d4[1]) * X[j]
                            )
                            nw = float(np.linalg.norm(w))
                            if nw > 1e-12:
                                cands.append(w / nw)
    for i in range(n):
        nr = float(np.linalg.norm(X[i]))
        if nr > 1e-12:
            cands.append(X[i] / nr)
            cands.append(-X[i] / nr)
    s = X.sum(axis=0)
    ns = float(np.linalg.norm(s))
    if ns > 1e-12:
        cands.append(s / ns)
        cands.append(-s / ns)
    return _dedup(X, cands)


# ---------------------------------------------------------------------------
# the convex program


@dataclass(frozen=True)
class ConvexSolution:
    us: np.ndarray                 # (P, d) positive-branch blocks
    vs: np.ndarray                 # (P, d) negative-branch blocks
    objective: float               # true objective, no penalty
    constraint_residual: float     # max cone violation
    converged: bool
    iterations: int
    mu_final: float
    penalized_history: tuple       # per mu stage: (mu, tuple of F values)


def _blocks_prox(Z: np.ndarray, kappa: float) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1)
    scale = np.zeros_like(norms)
    nz = norms > 0.0
    scale[nz] = np.maximum(0.0, 1.0 - kappa / norms[nz])
    return Z * scale[:, None]


def solve_convex_program(X: np.ndarray, e: np.ndarray, beta_reg: float,
                         patterns, max_iters: int = 100_000
                         ) -> ConvexSolution:
    """Penalty-based proximal gradient for the pattern-indexed program.

    minimize 0.5 ||sum_i D_i X (u_i - v_i) - e||^2 + beta * sum_i (|u_i| + |v_i|)
    over the cones (2 D_i - I) X u_i >= 0 (and the same for v_i), handled by
    a squared-hinge penalty whose weight doubles until the worst violation is
    below 1e-8. The squared hinge keeps the smooth part differentiable, so
    the prox steps cannot jam against a cone wall the way a raw hinge does;
    the price is that feasibility is enforced by the mu schedule rather than
    at finite mu. Each mu stage is monotone in the penalized objective; the
    true objective and the final residual are reported either way.
    """
    X = np.asarray(X, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    n, d = X.shape
    if e.shape[0] != n:
        raise ValueError("e must have one entry per data row")
    if beta_reg < 0:
        raise ValueError("beta_reg must be nonnegative")
    if not patterns:
        raise ValueError("need at least one pattern")
    P = len(patterns)
    masks = np.stack([p.mask for p in patterns]).astype(np.float64)
    M = X[None, :, :] * masks[:, :, None]                  # D_i X
    A = X[None, :, :] * (2.0 * masks - 1.0)[:, :, None]    # (2 D_i - I) X

    us = np.zeros((P, d))
    vs = np.zeros((P, d))

    def residual(u, v):
        return np.einsum("pnd,pd->n", M, u - v) - e

    def violations(u, v):
        cu = np.einsum("pnd,pd->pn", A, u)
        cv = np.einsum("pnd,pd->pn", A, v)
        return np.maximum(0.0, -cu), np.maximum(0.0, -cv)

    def norms_term(u, v):
        return beta_reg * float(
            np.linalg.norm(u, axis=1).sum() + np.linalg.norm(v, axis=1).sum()
        )

    def true_objective(u, v):
        r = residual(u, v)
        return 0.5 * float(r @ r) + norms_term(u, v)

    def smooth_value(u, v, mu):
        r = residual(u, v)
        hu, hv = violations(u, v)
        return 0.5 * float(r @ r) + mu * float(
            np.sum(hu * hu) + np.sum(hv * hv)
        )

    def smooth_grads(u, v, mu):
        r = residual(u, v)
        gu = np.einsum("pnd,n->pd", M, r)
        gv = -gu.copy()
        hu, hv = violations(u, v)
        gu -= 2.0 * mu * np.einsum("pnd,pn->pd", A, hu)
        gv -= 2.0 * mu * np.einsum("pnd,pn->pd", A, hv)
        return gu, gv

    def prox_from(pu, pv, gu, gv, fy, t):
        """Backtracked prox step anchored at (pu, pv) with gradient there.
        Returns (un, vn, fn, t) with the smooth quadratic bound satisfied."""
        while True:
            un = _blocks_prox(pu - t * gu, t * beta_reg)
            vn = _blocks_prox(pv - t * gv, t * beta_reg)
            fn = smooth_value(un, vn, mu)
            du = un - pu
            dv = vn - pv
            quad = float(np.sum(gu * du) + np.sum(gv * dv)) + (
                float(np.sum(du * du) + np.sum(dv * dv)) / (2.0 * t)
            )
            if fn <= fy + quad + 1e-12:
                return un, vn, fn, t
            t *= 0.5
            if t < 1e-20:
                return None, None, fn, t

    mu = 1.0
    total = 0
    history = []
    converged = False
    while True:
        F = smooth_value(us, vs, mu) + norms_term(us, vs)
        stage = [F]
        t = 1.0
        up, vp = us.copy(), vs.copy()
        k_mom = 0
        while total < max_iters:
            # accelerated candidate from the extrapolated point, falling back
            # to a plain descent step whenever momentum would break
            # monotonicity of the penalized objective
            w = k_mom / (k_mom + 3.0)
            yu = us + w * (us - up)
            yv = vs + w * (vs - vp)
            gu, gv = smooth_grads(yu, yv, mu)
            fy = smooth_value(yu, yv, mu)
            un, vn, fn, t = prox_from(yu, yv, gu, gv, fy, t)
            total += 1
            accepted = False
            if un is not None:
                Fn = fn + norms_term(un, vn)
                if Fn <= F + 1e-12:
                    accepted = True
                    k_mom += 1
            if not accepted:
                gu, gv = smooth_grads(us, vs, mu)
                f0 = smooth_value(us, vs, mu)
                un, vn, fn, t = prox_from(us, vs, gu, gv, f0, t)
                k_mom = 0
                if un is None:
                    break  # no descent step exists at any size: stage done
                Fn = fn + norms_term(un, vn)
            moved = F - Fn
            up, vp = us, vs
            us, vs, F = un, vn, Fn
            stage.append(F)
            if abs(moved) < 1e-10:
                break
        history.append((mu, tuple(stage)))
        hu, hv = violations(us, vs)
        worst = float(max(hu.max(initial=0.0), hv.max(initial=0.0)))
        if worst < FEAS_TOL:
            converged = True
            break
        if total >= max_iters or mu > 1e12:
            break
        mu *= 2.0

    hu, hv = violations(us, vs)
    worst = float(max(hu.max(initial=0.0), hv.max(initial=0.0)))
    return ConvexSolution(
        us=us,
        vs=vs,
        objective=true_objective(us, vs),
        constraint_residual=worst,
        converged=converged and worst < FEAS_TOL,
        iterations=total,
        mu_final=mu,
        penalized_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# network reconstruction and the nonconvex oracle


@dataclass(frozen=True)
class TwoLayerNet:
    """Hidden weights (m, d) and signed output weights (m,)."""

    weights: np.ndarray
    out_weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        a = np.asarray(self.out_weights, dtype=np.float64)
        if W.ndim != 2 or a.ndim != 1 or W.shape[0] != a.shape[0]:
            raise ValueError("weights (m, d) and out_weights (m,) required")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "out_weights", a)

    @property
    def m(self) -> int:
        return self.weights.shape[0]


def reconstruct_network(sol: ConvexSolution) -> tuple[TwoLayerNet, int]:
    """Square-root splitting of the nonzero blocks; m_star counts them."""
    rows = []
    outs = []
    for block, sign in ((sol.us, 1.0), (sol.vs, -1.0)):
        for b in block:
            nb = float(np.linalg.norm(b))
            if nb <= _ZERO_BLOCK:
                continue
            rows.append(b / math.sqrt(nb))
            outs.append(sign * math.sqrt(nb))
    d = sol.us.shape[1]
    W = np.array(rows).reshape(len(rows), d)
    a = np.asarray(outs, dtype=np.float64)
    return TwoLayerNet(W, a), len(rows)


def nonconvex_fit(X: np.ndarray, e: np.ndarray, net: TwoLayerNet) -> float:
    X = np.asarray(X, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    pred = np.maximum(X @ net.weights.T, 0.0) @ net.out_weights
    r = pred - e
    return 0.5 * float(r @ r)


def nonconvex_objective(X: np.ndarray, e: np.ndarray, beta_reg: float,
                        net: TwoLayerNet) -> float:
    reg = float(np.sum(net.weights * net.weights) +
                net.out_weights @ net.out_weights)
    return nonconvex_fit(X, e, net) + 0.5 * beta_reg * reg


def _nc_loss_grad(X, e, beta_reg, W, a):
    Z = X @ W.T
    pos = np.maximum(Z, 0.0)
    r = pos @ a - e
    L = 0.5 * float(r @ r) + 0.5 * beta_reg * (
        float(np.sum(W * W)) + float(a @ a)
    )
    ga = pos.T @ r + beta_reg * a
    gW = ((r[:, None] * a[None, :]) * (Z > 0.0)).T @ X + beta_reg * W
    return L, gW, ga


def nonconvex_best_of_restarts(X: np.ndarray, e: np.ndarray, beta_reg: float,
                               m: int, restarts: int = 50, steps: int = 4000,
                               eta: float = 1e-2, seed: int = 0
                               ) -> tuple[float, TwoLayerNet]:
    """Best final value of Adam-trained two-layer nets over seeded He inits."""
    X = np.asarray(X, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    n, d = X.shape
    if m < 1:
        raise ValueError("m must be >= 1")
    best = math.inf
    best_net = None
    b1, b2, beps = 0.9, 0.999, 1e-8
    for rstart in range(restarts):
        W = rng.normals(rng.substream(seed, 2 * rstart), m * d)
        W = W.reshape(m, d) * math.sqrt(2.0 / d)
        a = rng.normals(rng.substream(seed, 2 * rstart + 1), m) / math.sqrt(m)
        mW = np.zeros_like(W); vW = np.zeros_like(W)
        ma = np.zeros_like(a); va = np.zeros_like(a)
        for t in range(1, steps + 1):
            L, gW, ga = _nc_loss_grad(X, e, beta_reg, W, a)
            if not np.isfinite(L):
                break
            mW = b1 * mW + (1 - b1) * gW; vW = b2 * vW + (1 - b2) * gW * gW
            ma = b1 * ma + (1 - b1) * ga; va = b2 * va + (1 - b2) * ga * ga
            c1 = 1 - b1 ** t; c2 = 1 - b2 ** t
            W = W - eta * (mW / c1) / (np.sqrt(vW / c2) + beps)
            a = a - eta * (ma / c1) / (np.sqrt(va / c2) + beps)
        net = TwoLayerNet(W, a)
        val = nonconvex_objective(X, e, beta_reg, net)
        if val < best:
            best, best_net = val, net
    return best, best_net
