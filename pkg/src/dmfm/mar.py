"""MAR(1) coefficient estimation on a factor series.

Three estimators of ``F_t = A1 F_{t-1} A2^T + xi_t``:

* ``proj`` -- nearest Kronecker product to the VAR Yule-Walker matrix
  ``G1 G0^{-1}``;
* ``lse``  -- iterated least squares (lag-1 moments);
* ``l2e``  -- lag-2 moment estimator, robust to white measurement error in
  the observed factors.

All returned models are normalised with ``||A1||_F = 1`` and the
largest-magnitude entry of ``A1`` positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import numcore
from .errors import (
    DimensionMismatch,
    SeriesTooShort,
    SingularGamma0,
    SingularGamma1,
    SingularH,
    SingularUpdate,
)

METHODS = ("proj", "lse", "l2e")
COND_MAX = 1e12


@dataclass(frozen=True)
class MarModel:
    a1: np.ndarray
    a2: np.ndarray
    method: str
    iterations: int = 0
    converged: bool = True
    ridge: float = 0.0

    @property
    def r1(self) -> int:
        return self.a1.shape[0]

    @property
    def r2(self) -> int:
        return self.a2.shape[0]

    @property
    def phi(self) -> np.ndarray:
        """VAR(1) coefficient ``kron(A2, A1)`` acting on ``vec(F_t)``."""
        return np.kron(self.a2, self.a1)

    @property
    def causality(self) -> float:
        """``rho(A1) * rho(A2)``; below one for a stationary fit."""
        return numcore.spectral_radius(self.a1) * numcore.spectral_radius(self.a2)

    def to_dict(self) -> dict:
        d = {
            "r1": self.r1,
            "r2": self.r2,
            "a1": self.a1.ravel().tolist(),
            "a2": self.a2.ravel().tolist(),
            "method": self.method,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }
        if self.ridge:
            d["ridge"] = self.ridge
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarModel":
        r1, r2 = int(d["r1"]), int(d["r2"])
        return cls(
            a1=np.asarray(d["a1"], dtype=float).reshape(r1, r1),
            a2=np.asarray(d["a2"], dtype=float).reshape(r2, r2),
            method=d["method"],
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            ridge=float(d.get("ridge", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "MarModel":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class AsymCov:
    """Asymptotic covariance of ``sqrt(T) * (vec(A1), vec(A2^T))``."""

    xi: np.ndarray
    kind: str

    def stderr(self, T: int) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.xi), 0.0, None) / T)


def theta(a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """Parameter vector ``(vec(A1), vec(A2^T))`` used by the asymptotic theory."""
    return np.concatenate([numcore.vec(a1), numcore.vec(np.asarray(a2).T)])


def _factor_frames(f, min_T: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None, None]
    if f.ndim != 3:
        raise DimensionMismatch(f"expected a (T, r1, r2) factor series, got shape {f.shape}")
    if f.shape[0] < min_T:
        raise SeriesTooShort(f"need at least {min_T} frames, got {f.shape[0]}")
    return f


def _solve_right(num: np.ndarray, gram: np.ndarray, what: str) -> np.ndarray:
    """``num @ inv(gram)`` with a conditioning guard."""
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > COND_MAX:
        raise SingularUpdate(f"{what} Gram matrix is numerically singular")
    return np.linalg.solve(gram.T, num.T).T


def _inv_checked(m: np.ndarray, exc, what: str, ridge: float = 0.0) -> np.ndarray:
    if ridge:
        m = m + ridge * np.linalg.norm(m) * np.eye(m.shape[0])
    if np.linalg.cond(m) > COND_MAX:
        raise exc(f"{what} is numerically singular (condition number > {COND_MAX:g})")
    return np.linalg.inv(m)


def bilinear_objective(y: np.ndarray, x: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> float:
    """``sum_i ||Y_i - A1 X_i A2^T||_F^2``."""
    return float(np.sum((y - a1 @ x @ a2.T) ** 2))


def lse_objective(f, a1: np.ndarray, a2: np.ndarray) -> float:
    """Least-squares criterion ``sum_{t>=2} ||F_t - A1 F_{t-1} A2^T||_F^2``."""
    f = _factor_frames(f, 2)
    return bilinear_objective(f[1:], f[:-1], a1, a2)


def bilinear_als(y, x, a1, a2, max_iter=200, tol=1e-8, trace=None):
    """Alternating least squares for ``min sum_i ||Y_i - A1 X_i A2^T||_F^2``.

    Each sweep solves exactly for ``A2`` given ``A1`` and then for ``A1``
    given ``A2``.  Stops when the relative Frobenius change of
    ``kron(A2, A1)`` drops below ``tol``.  Returns ``(a1, a2, iterations,
    converged)``; if ``trace`` is a list the objective after every half-step
    is appended to it.
    """
    a1, a2 = numcore.normalize_pair(a1, a2)
    phi = np.kron(a2, a1)
    for it in range(1, max_iter + 1):
        b = a1 @ x
        a2 = _solve_right(
            np.einsum("tji,tjk->ik", y, b), np.einsum("tji,tjk->ik", b, b), "A2-update"
        )
        if trace is not None:
            trace.append(bilinear_objective(y, x, a1, a2))
        c = x @ a2.T
        a1 = _solve_right(
            np.einsum("tij,tkj->ik", y, c), np.einsum("tij,tkj->ik", c, c), "A1-update"
        )
        if trace is not None:
            trace.append(bilinear_objective(y, x, a1, a2))
        a1, a2 = numcore.normalize_pair(a1, a2)
        new_phi = np.kron(a2, a1)
        scale = max(np.linalg.norm(phi), np.finfo(float).tiny)
        change = np.linalg.norm(new_phi - phi) / scale
        phi = new_phi
        if change < tol:
            return a1, a2, it, True
    return a1, a2, max_iter, False


def proj_estimate(f) -> MarModel:
    """Project ``G1 G0^{-1}`` onto Kronecker products (unweighted)."""
    f = _factor_frames(f, 3)
    _, r1, r2 = f.shape
    g0 = numcore.autocov(f, 0)
    g1 = numcore.autocov(f, 1)
    phi = g1 @ _inv_checked(g0, SingularGamma0, "lag-0 autocovariance")
    a1, a2 = numcore.nearest_kron(phi, r1, r2)
    return MarModel(a1, a2, "proj")


def lse_estimate(f, init: MarModel | None = None, max_iter: int = 200, tol: float = 1e-8) -> MarModel:
    """Iterated least-squares (lag-1) estimate, initialised by ``proj``."""
    f = _factor_frames(f, 3)
    if init is None:
        init = proj_estimate(f)
    a1, a2, it, ok = bilinear_als(f[1:], f[:-1], init.a1, init.a2, max_iter, tol)
    return MarModel(a1, a2, "lse", it, ok)


def l2e_targets(f, ridge: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Column-matrices ``(mat(y_i), mat(v_i))`` of the lag-2 criterion.

    ``V = (G1 G0^{-1} G1^T)^{1/2}`` (symmetrised PSD root) and
    ``Y = G2 G1^{-1} V``; both returned as ``(r1 r2, r1, r2)`` stacks.
    ``ridge`` adds ``ridge * ||G1||_F * I`` to ``G1`` before inversion.
    """
    f = _factor_frames(f, 4)
    _, r1, r2 = f.shape
    g0, g1, g2 = (numcore.autocov(f, k) for k in range(3))
    g0_inv = _inv_checked(g0, SingularGamma0, "lag-0 autocovariance")
    g1_inv = _inv_checked(g1, SingularGamma1, "lag-1 autocovariance", ridge)
    v = numcore.sqrtm_psd(g1 @ g0_inv @ g1.T)
    y = g2 @ g1_inv @ v
    # column i of Y / V -> r1 x r2 matrix
    return numcore.unvec_series(y.T, r1, r2), numcore.unvec_series(v.T, r1, r2)


def l2e_estimate(
    f, init: MarModel | None = None, max_iter: int = 200, tol: float = 1e-8, ridge: float = 0.0
) -> MarModel:
    """Lag-2 moment estimator.

    Minimises ``||(kron(A2, A1) - G2 G1^{-1}) (G1 G0^{-1} G1^T)^{1/2}||_F^2``
    through its column-wise bilinear form.  Without ``init`` the start is the
    unweighted Kronecker projection of ``G2 G1^{-1}``.
    """
    f = _factor_frames(f, 4)
    _, r1, r2 = f.shape
    ys, vs = l2e_targets(f, ridge)
    if init is None:
        g1 = numcore.autocov(f, 1)
        g1_inv = _inv_checked(g1, SingularGamma1, "lag-1 autocovariance", ridge)
        a1, a2 = numcore.nearest_kron(numcore.autocov(f, 2) @ g1_inv, r1, r2)
        init = MarModel(a1, a2, "proj")
    a1, a2, it, ok = bilinear_als(ys, vs, init.a1, init.a2, max_iter, tol)
    return MarModel(a1, a2, "l2e", it, ok, ridge)


def fit(f, method: str, **kw) -> MarModel:
    if method == "proj":
        return proj_estimate(f)
    if method == "lse":
        return lse_estimate(f, **kw)
    if method == "l2e":
        return l2e_estimate(f, **kw)
    raise ValueError(f"unknown MAR method {method!r}; expected one of {METHODS}")


def residual_cov(f, model: MarModel) -> np.ndarray:
    """Sample covariance of ``vec(F_t - A1 F_{t-1} A2^T)``, divisor ``T - 1``."""
    f = _factor_frames(f, 2)
    e = numcore.vec_series(f[1:] - model.a1 @ f[:-1] @ model.a2.T)
    return e.T @ e / e.shape[0]


def regressor_blocks(x: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """Batched ``W_t^T = [(A2 X_t^T) kron I_r1, I_r2 kron (A1 X_t)]``.

    ``x`` is ``(n, r1, r2)``; the result is ``(n, r1 r2, r1^2 + r2^2)`` and
    equals the Jacobian of ``vec(A1 X_t A2^T)`` in ``(vec(A1), vec(A2^T))``.
    """
    r1, r2 = a1.shape[0], a2.shape[0]
    n = x.shape[0]
    left = np.einsum("tpq,ab->tpaqb", a2 @ x.transpose(0, 2, 1), np.eye(r1)).reshape(n, r1 * r2, r1 * r1)
    right = np.einsum("pq,tab->tpaqb", np.eye(r2), a1 @ x).reshape(n, r1 * r2, r2 * r2)
    return np.concatenate([left, right], axis=2)


def asym_cov(f, model: MarModel, sigma_xi: np.ndarray, kind: str = "xi1") -> AsymCov:
    """Plug-in sandwich covariance for the LSE (``xi1``) or L2E (``xi2``).

    ``H = mean(W_t W_t^T) + gamma gamma^T`` with ``gamma = (vec(A1), 0)``
    and ``Xi = H^{-1} mean(W_t Sigma W_t^T) H^{-1}``.  For ``xi2`` the
    regressor frame is ``G_t = A1 F_t A2^T`` in place of ``F_t``.  Only
    meaningful at high SNR, where the factors may be treated as observed.
    """
    f = _factor_frames(f, 3)
    a1, a2 = numcore.normalize_pair(model.a1, model.a2)
    r1, r2 = a1.shape[0], a2.shape[0]
    sigma_xi = np.asarray(sigma_xi, dtype=float)
    if sigma_xi.shape != (r1 * r2, r1 * r2):
        raise DimensionMismatch(f"sigma_xi must be {r1 * r2}x{r1 * r2}, got {sigma_xi.shape}")
    x = f[:-1]
    if kind == "xi2":
        x = a1 @ x @ a2.T
    elif kind != "xi1":
        raise ValueError("kind must be 'xi1' or 'xi2'")
    d = regressor_blocks(x, a1, a2)
    gamma = np.concatenate([numcore.vec(a1), np.zeros(r2 * r2)])
    h = np.einsum("tki,tkj->ij", d, d) / len(d) + np.outer(gamma, gamma)
    meat = np.einsum("tki,kl,tlj->ij", d, sigma_xi, d) / len(d)
    h_inv = _inv_checked(h, SingularH, "H")
    xi = h_inv @ meat @ h_inv
    return AsymCov(0.5 * (xi + xi.T), kind)
