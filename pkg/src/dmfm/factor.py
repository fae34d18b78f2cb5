"""Loading estimation (iterative TIPUP), factor extraction and rank selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankTooLarge, SeriesTooShort


@dataclass(frozen=True)
class LoadingPair:
    """Orthonormal loadings ``u1`` (d1 x r1) and ``u2`` (d2 x r2)."""

    u1: np.ndarray
    u2: np.ndarray

    @property
    def ranks(self) -> tuple[int, int]:
        return self.u1.shape[1], self.u2.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.u1.shape[0], self.u2.shape[0]

    def rotated(self, r1: np.ndarray, r2: np.ndarray) -> "LoadingPair":
        """Loadings ``(u1 @ r1, u2 @ r2)``; no sign normalisation applied."""
        return LoadingPair(self.u1 @ r1, self.u2 @ r2)


@dataclass(frozen=True)
class RankSelection:
    r1: int
    r2: int
    ratios1: np.ndarray
    ratios2: np.ndarray


def fix_column_signs(u: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive."""
    u = np.array(u, dtype=float)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise DimensionMismatch(f"expected a (T, d1, d2) series, got shape {x.shape}")
    return x


def _tipup_matrix(x: np.ndarray, h0: int) -> np.ndarray:
    """``[sum_t X_t X_{t-h}^T / (T-h)]_{h=1..h0}`` stacked horizontally."""
    T = x.shape[0]
    blocks = [np.einsum("tij,tkj->ik", x[h:], x[: T - h]) / (T - h) for h in range(1, h0 + 1)]
    return np.hstack(blocks)


def _top_left(w: np.ndarray, r: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(w, full_matrices=False)
    return fix_column_signs(u[:, :r])


def subspace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral norm of ``a a^T - b b^T`` for orthonormal column blocks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"subspace bases differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a @ a.T - b @ b.T, ord=2))


def _check_lag(T: int, h0: int) -> None:
    if h0 < 1:
        raise ValueError("h0 must be at least 1")
    if T <= h0 or h0 > T / 4:
        raise SeriesTooShort(f"series of length {T} is too short for lag h0={h0} (need h0 <= T/4)")


def tipup_loadings(x, r1: int, r2: int, h0: int = 1, max_iter: int = 50, tol: float = 1e-8) -> LoadingPair:
    """Iterative TIPUP estimate of the loading spaces.

    Initial loadings come from the leading left singular vectors of the
    stacked lag cross-moments ``sum_t X_t X_{t-h}^T`` (mode 1) and of the
    same moments of ``X_t^T`` (mode 2).  Each sweep then re-estimates mode 1
    from ``X_t U2`` and mode 2 from ``X_t^T U1`` until neither subspace moves
    by more than ``tol`` in spectral projector distance.
    """
    x = _frames(x)
    T, d1, d2 = x.shape
    if not (1 <= r1 <= d1 and 1 <= r2 <= d2):
        raise RankTooLarge(f"ranks ({r1}, {r2}) must lie within the dimensions ({d1}, {d2})")
    _check_lag(T, h0)
    xt = x.transpose(0, 2, 1)
    u1 = _top_left(_tipup_matrix(x, h0), r1)
    u2 = _top_left(_tipup_matrix(xt, h0), r2)
    for _ in range(max_iter):
        new1 = _top_left(_tipup_matrix(x @ u2, h0), r1)
        new2 = _top_left(_tipup_matrix(xt @ new1, h0), r2)
        moved = max(subspace_distance(new1, u1), subspace_distance(new2, u2))
        u1, u2 = new1, new2
        if moved < tol:
            break
    return LoadingPair(u1, u2)


def extract_factors(x, loadings: LoadingPair) -> np.ndarray:
    """``F_t = U1^T X_t U2`` for every frame; returns ``(T, r1, r2)``."""
    x = _frames(x)
    if x.shape[1:] != loadings.dims:
        raise DimensionMismatch(f"loadings are for {loadings.dims} frames, series has {x.shape[1:]}")
    return loadings.u1.T @ x @ loadings.u2


def er_select(eigs: np.ndarray, rmax: int) -> tuple[int, np.ndarray]:
    """Eigenvalue-ratio choice ``argmax_{i<=rmax} eig_i / eig_{i+1}``.

    ``eigs`` must be sorted decreasingly and hold at least ``rmax + 1`` values.
    Ties go to the smallest index.
    """
    eigs = np.asarray(eigs, dtype=float)
    floor = max(eigs[0], 1.0) * np.finfo(float).eps
    num = eigs[:rmax]
    den = np.maximum(eigs[1 : rmax + 1], floor)
    ratios = np.maximum(num, floor) / den
    return int(np.argmax(ratios)) + 1, ratios


def select_rank_er(x, h0: int = 1, rmax1: int | None = None, rmax2: int | None = None) -> RankSelection:
    """Choose ``(r1, r2)`` by eigenvalue ratios of the one-step TIPUP matrices."""
    x = _frames(x)
    T, d1, d2 = x.shape
    _check_lag(T, h0)
    rmax1 = min(math.ceil(d1 / 2), d1 - 1) if rmax1 is None else rmax1
    rmax2 = min(math.ceil(d2 / 2), d2 - 1) if rmax2 is None else rmax2
    if not (1 <= rmax1 <= d1 - 1 and 1 <= rmax2 <= d2 - 1):
        raise RankTooLarge(f"rmax ({rmax1}, {rmax2}) must lie in [1, d-1] for dims ({d1}, {d2})")
    out = []
    for series, rmax in ((x, rmax1), (x.transpose(0, 2, 1), rmax2)):
        w = _tipup_matrix(series, h0)
        eigs = np.sort(np.linalg.eigvalsh(w @ w.T))[::-1]
        out.append(er_select(np.clip(eigs, 0.0, None), rmax))
    (r1, ratios1), (r2, ratios2) = out
    return RankSelection(r1, r2, ratios1, ratios2)
