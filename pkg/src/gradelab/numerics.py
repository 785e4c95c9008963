"""Dense linear algebra primitives: Kronecker products and symmetric eigensolves.

Matrices are plain float64 numpy arrays in C (row-major) order; vectors are
1-D arrays. Validation happens at the public boundaries so the inner loops
can assume clean inputs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Results larger than this are almost certainly a mistake at desk scale and
# would silently eat memory, so kron refuses them.
MAX_KRON_ELEMENTS = 1 << 26

# Crossover between the cyclic Jacobi path and the LAPACK path.
JACOBI_MAX_N = 64

_JACOBI_MAX_SWEEPS = 100
_ASYMMETRY_WARN_REL = 1e-6


class ConvergenceError(RuntimeError):
    """An iterative routine failed to meet its tolerance within its budget."""


@dataclass(frozen=True)
class EigenResult:
    """Eigenvalues in ascending order; eigenvectors (if requested) as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name: str = "vector") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def kron(a, b) -> np.ndarray:
    """Kronecker product with an element-count guard."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    out_elems = a.shape[0] * b.shape[0] * a.shape[1] * b.shape[1]
    if out_elems > MAX_KRON_ELEMENTS:
        raise ValueError(
            f"kron result would hold {out_elems} elements "
            f"(cap {MAX_KRON_ELEMENTS}); refusing"
        )
    return np.kron(a, b)


def kron_matvec(a, b, v) -> np.ndarray:
    """(a kron b) @ v without materializing the product.

    v is read as the column-stacked form of a matrix V with b.shape[1] rows
    and a.shape[1] columns; the result is the column stacking of B V A^T.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    v = as_vector(v, "v")
    ra, ca = a.shape
    rb, cb = b.shape
    if v.shape[0] != ca * cb:
        raise ValueError(
            f"v has length {v.shape[0]}, expected {ca * cb} = cols(a)*cols(b)"
        )
    # column-stacked vec: entry q*cb + i belongs to V[i, q]
    V = v.reshape(ca, cb).T
    R = b @ V @ a.T
    return R.T.reshape(ra * rb)


def _jacobi_eig(S: np.ndarray, want_vectors: bool):
    """Cyclic Jacobi on a symmetric matrix. Returns (diag, vectors or None)."""
    n = S.shape[0]
    A = S.copy()
    V = np.eye(n) if want_vectors else None
    fro = float(np.linalg.norm(S))
    if fro == 0.0:
        return np.zeros(n), V
    tol = 1e-11 * fro
    for _ in range(_JACOBI_MAX_SWEEPS):
        # summed directly: subtracting the diagonal from the full Frobenius
        # norm cancels catastrophically once the off-diagonal is tiny
        off = A.copy()
        np.fill_diagonal(off, 0.0)
        off_sq = float(np.sum(off * off))
        if off_sq <= tol * tol:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app, aqq = A[p, p], A[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau  # asymptotic; tau*tau would overflow
                elif tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                new_p = c * cp - s * cq
                new_q = s * cp + c * cq
                A[:, p] = new_p
                A[p, :] = new_p
                A[:, q] = new_q
                A[q, :] = new_q
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                if want_vectors:
                    vp = V[:, p].copy()
                    vq = V[:, q].copy()
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
    raise ConvergenceError(
        f"Jacobi eigensolve did not reach tolerance in {_JACOBI_MAX_SWEEPS} sweeps"
    )


def sym_eig(S, want_vectors: bool = True) -> EigenResult:
    """Full eigendecomposition of a symmetric matrix.

    The input is forcibly symmetrized; a relative asymmetry beyond 1e-6
    triggers a warning because it usually means the caller assembled the
    matrix wrong. Small matrices go through cyclic Jacobi, large ones through
    LAPACK. Eigenvalues come back ascending and are sanity-checked against
    the Gershgorin bounds of the symmetrized input.
    """
    S = as_matrix(S, "S")
    n, m = S.shape
    if n != m:
        raise ValueError(f"S must be square, got {S.shape}")
    if n == 0:
        empty = np.zeros(0)
        return EigenResult(empty, np.zeros((0, 0)) if want_vectors else None)
    fro = float(np.linalg.norm(S))
    asym = float(np.linalg.norm(S - S.T))
    if fro > 0.0 and asym > _ASYMMETRY_WARN_REL * fro:
        warnings.warn(
            f"sym_eig input asymmetry {asym / fro:.3e} relative; symmetrizing",
            RuntimeWarning,
            stacklevel=2,
        )
    Ssym = 0.5 * (S + S.T)

    if n <= JACOBI_MAX_N:
        vals, vecs = _jacobi_eig(Ssym, want_vectors)
    elif want_vectors:
        vals, vecs = np.linalg.eigh(Ssym)
    else:
        vals, vecs = np.linalg.eigvalsh(Ssym), None

    order = np.argsort(vals, kind="stable")
    vals = np.ascontiguousarray(vals[order])
    if vecs is not None:
        vecs = np.ascontiguousarray(vecs[:, order])

    # Gershgorin post-check: every eigenvalue must sit inside the disc union.
    radii = np.sum(np.abs(Ssym), axis=1) - np.abs(np.diag(Ssym))
    d = np.diag(Ssym)
    slack = 1e-8 * max(1.0, fro)
    lo = float(np.min(d - radii)) - slack
    hi = float(np.max(d + radii)) + slack
    if vals[0] < lo or vals[-1] > hi:
        raise ConvergenceError(
            f"eigenvalues [{vals[0]:.6e}, {vals[-1]:.6e}] escape the "
            f"Gershgorin interval [{lo:.6e}, {hi:.6e}]"
        )
    return EigenResult(vals, vecs)


def spectral_norm(S) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    res = sym_eig(S, want_vectors=False)
    if res.eigenvalues.size == 0:
        return 0.0
    return float(max(abs(res.eigenvalues[0]), abs(res.eigenvalues[-1])))
