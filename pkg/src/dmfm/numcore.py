"""Dense linear-algebra kernels used throughout the package.

Conventions
-----------
``vec`` stacks columns (Fortran order), so that
``vec(A1 @ F @ A2.T) == kron(A2, A1) @ vec(F)``.  A series of matrices is an
array of shape ``(T, r1, r2)``; its vectorisation is ``(T, r1 * r2)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptySeries, NotCausal

# eigenvalues above POS_TOL * ||M||_F count as strictly positive
POS_TOL = 1e-10

_DIRECT_LYAPUNOV_MAX = 64


def vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape(rows, cols, order="F")


def vec_series(f: np.ndarray) -> np.ndarray:
    """Vectorise every frame of a ``(T, r1, r2)`` array -> ``(T, r1*r2)``."""
    f = np.asarray(f, dtype=float)
    T = f.shape[0]
    return f.transpose(0, 2, 1).reshape(T, -1)


def unvec_series(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape[0], cols, rows).transpose(0, 2, 1)


def bilinear(a1: np.ndarray, f: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """``a1 @ f @ a2.T``, broadcasting over a leading time axis of ``f``."""
    return a1 @ f @ a2.T


def autocov(series, k: int) -> np.ndarray:
    """Lag-``k`` sample autocovariance of ``vec(F_t)`` with divisor ``T``.

    ``(1/T) * sum_{t=k+1}^{T} vec(F_t) vec(F_{t-k})^T``.  No mean is removed.
    Accepts a ``(T, r1, r2)`` array, a ``(T, n)`` array of vectors or a
    1-d scalar series.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim == 3:
        x = vec_series(x)
    elif x.ndim != 2:
        raise DimensionMismatch(f"cannot interpret array of shape {x.shape} as a series")
    T = x.shape[0]
    if k < 0:
        raise ValueError("lag must be non-negative")
    if T <= k:
        raise EmptySeries(f"series of length {T} has no pairs at lag {k}")
    return x[k:].T @ x[: T - k] / T


def normalize_pair(a1: np.ndarray, a2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Move all scale into ``a2`` so that ``||a1||_F = 1`` and fix the sign.

    The sign is chosen so the largest-magnitude entry of ``a1`` (first one in
    row-major order on ties) is positive.  ``kron(a2, a1)`` is unchanged.
    """
    a1 = np.array(a1, dtype=float)
    a2 = np.array(a2, dtype=float)
    scale = np.linalg.norm(a1)
    if scale == 0.0:
        return a1, a2 * 0.0
    a1 /= scale
    a2 *= scale
    if a1.flat[np.argmax(np.abs(a1))] < 0:
        a1 = -a1
        a2 = -a2
    return a1, a2


def kron_rearrange(m: np.ndarray, r1: int, r2: int) -> np.ndarray:
    """Rearrange an ``(r1 r2) x (r1 r2)`` matrix into ``r2^2 x r1^2``.

    Under this map ``kron(B, A)`` becomes the rank-one matrix
    ``outer(B.ravel(), A.ravel())``.
    """
    n = r1 * r2
    m = np.asarray(m, dtype=float)
    if m.shape != (n, n):
        raise DimensionMismatch(f"expected a {n}x{n} matrix, got {m.shape}")
    return m.reshape(r2, r1, r2, r1).transpose(0, 2, 1, 3).reshape(r2 * r2, r1 * r1)


def nearest_kron(m: np.ndarray, r1: int, r2: int) -> tuple[np.ndarray, np.ndarray]:
    """Best Frobenius approximation ``m ~ kron(A2, A1)``.

    Uses the leading singular pair of the rearranged matrix.  Returns
    ``(A1, A2)`` normalised by :func:`normalize_pair`.
    """
    r = kron_rearrange(m, r1, r2)
    u, s, vt = np.linalg.svd(r)
    a2 = s[0] * u[:, 0].reshape(r2, r2)
    a1 = vt[0].reshape(r1, r1)
    return normalize_pair(a1, a2)


def psd_project(s: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) positive semi-definite matrix to ``s``.

    Symmetrises, then zeroes the negative eigenvalues.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatch(f"psd_project needs a square matrix, got {s.shape}")
    sym = 0.5 * (s + s.T)
    w, q = np.linalg.eigh(sym)
    out = (q * np.clip(w, 0.0, None)) @ q.T
    return 0.5 * (out + out.T)


def is_strictly_positive(s: np.ndarray, rel_tol: float = POS_TOL) -> bool:
    """True iff the smallest eigenvalue exceeds ``rel_tol * ||s||_F``."""
    s = np.asarray(s, dtype=float)
    scale = np.linalg.norm(s)
    if scale == 0.0:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (s + s.T))[0] > rel_tol * scale)


def sqrtm_psd(s: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root of the symmetrised ``s``."""
    s = np.asarray(s, dtype=float)
    w, q = np.linalg.eigh(0.5 * (s + s.T))
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


def spectral_radius(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"spectral_radius needs a square matrix, got {m.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def stationary_cov(phi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Solve the discrete Lyapunov equation ``G = phi G phi^T + sigma``.

    Direct Kronecker solve up to side 64, squared Smith iteration beyond.
    """
    phi = np.asarray(phi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = phi.shape[0]
    if phi.shape != (n, n) or sigma.shape != (n, n):
        raise DimensionMismatch(f"phi {phi.shape} and sigma {sigma.shape} must be square and equal")
    rho = spectral_radius(phi)
    if rho >= 1.0 - 1e-8:
        raise NotCausal(f"spectral radius {rho:.12g} is not below 1")
    if n <= _DIRECT_LYAPUNOV_MAX:
        lhs = np.eye(n * n) - np.kron(phi, phi)
        g = unvec(np.linalg.solve(lhs, vec(sigma)), n, n)
    else:
        g = sigma.copy()
        a = phi.copy()
        for _ in range(200):
            step = a @ g @ a.T
            g = g + step
            a = a @ a
            if np.linalg.norm(step) <= 1e-16 * np.linalg.norm(g):
                break
    return 0.5 * (g + g.T)
