"""Measurement-error state-space model on the estimated factors.

    vec(F~_t) = vec(F_t) + vec(zeta_t)          (observation)
    vec(F_t)  = Phi vec(F_{t-1}) + vec(xi_t)    (state)

The noise covariances are recovered from the moments of the residual
``W_t = vec(F~_t) - Phi vec(F~_{t-1})``, then the filter gives ``F_{t|t}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import numcore
from .errors import DimensionMismatch, NotCausal, SeriesTooShort, SingularPhi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StateSpaceParams:
    phi: np.ndarray
    sigma_xi: np.ndarray
    sigma_zeta: np.ndarray

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "phi": self.phi.ravel().tolist(),
            "sigma_xi": self.sigma_xi.ravel().tolist(),
            "sigma_zeta": self.sigma_zeta.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceParams":
        n = int(d["dim"])
        return cls(*(np.asarray(d[k], dtype=float).reshape(n, n) for k in ("phi", "sigma_xi", "sigma_zeta")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "StateSpaceParams":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class FilterOutput:
    filtered_means: np.ndarray  # (T, r1, r2)
    filtered_covs: np.ndarray  # (T, n, n)
    predicted_covs: np.ndarray  # (T, n, n)
    innovations: np.ndarray  # (T, n)
    loglik: float

    @property
    def last(self) -> np.ndarray:
        return self.filtered_means[-1]


def residual_moments(fhat, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lag-0 and lag-1 second moments of ``W_t``, t = 2..T.

    Means are not removed.  Divisors are ``T - 1`` for ``G0`` and ``T - 2``
    for ``G1`` (the number of terms in each sum).
    """
    f = np.asarray(fhat, dtype=float)
    if f.shape[0] < 3:
        raise SeriesTooShort("residual moments need at least 3 frames")
    x = numcore.vec_series(f)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(f"phi is {phi.shape}, factors have dimension {x.shape[1]}")
    w = x[1:] - x[:-1] @ phi.T
    g0 = w.T @ w / w.shape[0]
    g1 = w[1:].T @ w[:-1] / (w.shape[0] - 1)
    return g0, g1


def noise_covariances(g0: np.ndarray, g1: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moment estimates ``(sigma_zeta, sigma_xi)``, each projected to PSD.

    ``sigma_zeta = P[-(Phi^{-1} G1 + G1^T Phi^{-T}) / 2]`` and
    ``sigma_xi = P[G0 - sigma_zeta - Phi sigma_zeta Phi^T]``.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)) or np.linalg.cond(phi) > 1e12:
        raise SingularPhi("Phi is numerically singular; measurement-noise moments are not identified")
    m = np.linalg.solve(phi, g1)
    sz = numcore.psd_project(-0.5 * (m + m.T))
    sx = numcore.psd_project(g0 - sz - phi @ sz @ phi.T)
    n = phi.shape[0]
    for name, s in (("sigma_zeta", sz), ("sigma_xi", sx)):
        rank = int(np.sum(np.linalg.eigvalsh(s) > numcore.POS_TOL * max(np.linalg.norm(s), 1e-300)))
        if rank < n:
            log.debug("%s is rank deficient (%d of %d)", name, rank, n)
    return sz, sx


def estimate_params(fhat, phi: np.ndarray) -> StateSpaceParams:
    g0, g1 = residual_moments(fhat, phi)
    sz, sx = noise_covariances(g0, g1, phi)
    return StateSpaceParams(np.asarray(phi, dtype=float), sx, sz)


def initial_cov(phi: np.ndarray, sigma_xi: np.ndarray) -> np.ndarray:
    """Stationary covariance when ``phi`` is stable, else a wide diagonal."""
    try:
        return numcore.stationary_cov(phi, sigma_xi)
    except NotCausal:
        n = phi.shape[0]
        return 10.0 * np.trace(sigma_xi) / n * np.eye(n)


def kalman_filter(fhat, params: StateSpaceParams) -> FilterOutput:
    """Linear-Gaussian filter started at ``x_{0|0} = 0``.

    Singular innovation covariances are inverted with the Moore-Penrose
    pseudoinverse; the covariance update uses the Joseph form so the
    filtered covariances stay symmetric PSD.
    """
    f = np.asarray(fhat, dtype=float)
    if f.ndim == 1:
        f = f[:, None, None]
    T, r1, r2 = f.shape
    n = r1 * r2
    phi, q, r = params.phi, params.sigma_xi, params.sigma_zeta
    if phi.shape != (n, n) or q.shape != (n, n) or r.shape != (n, n):
        raise DimensionMismatch(f"state-space parameters must be {n}x{n}")
    y = numcore.vec_series(f)
    eye = np.eye(n)
    x = np.zeros(n)
    p = initial_cov(phi, q)
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    pcovs = np.empty((T, n, n))
    innov = np.empty((T, n))
    loglik = 0.0
    for t in range(T):
        xp = phi @ x
        pp = phi @ p @ phi.T + q
        pp = 0.5 * (pp + pp.T)
        w, u = np.linalg.eigh(pp + r)
        keep = w > numcore.POS_TOL * max(w[-1], 1e-300)
        s_inv = (u[:, keep] / w[keep]) @ u[:, keep].T
        k = pp @ s_inv
        v = y[t] - xp
        x = xp + k @ v
        ik = eye - k
        p = ik @ pp @ ik.T + k @ r @ k.T
        p = 0.5 * (p + p.T)
        loglik -= 0.5 * (np.sum(np.log(w[keep])) + v @ s_inv @ v)
        means[t], covs[t], pcovs[t], innov[t] = x, p, pp, v
    return FilterOutput(numcore.unvec_series(means, r1, r2), covs, pcovs, innov, float(loglik))
