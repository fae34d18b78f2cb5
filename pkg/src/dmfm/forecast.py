"""One-step-ahead prediction, prediction error metrics and rolling evaluation."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import factor, mar, numcore, statespace
from .dataio import exp_smooth_detrend
from .errors import DMFMError, DimensionMismatch, PhiMismatch, SingularPhi, ValidationError
from .factor import LoadingPair

log = logging.getLogger(__name__)

METHODS = ("plugin-lse", "kf-l2e", "l2e-plus", "v-lse", "v-l2e", "rw", "mean")
FACTOR_METHODS = ("plugin-lse", "kf-l2e", "l2e-plus", "v-lse", "v-l2e")


@dataclass(frozen=True)
class Forecast:
    xhat: np.ndarray
    method: str
    factor_pred: np.ndarray | None = None
    branch: str | None = None

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "d1": self.xhat.shape[0],
            "d2": self.xhat.shape[1],
            "xhat": self.xhat.ravel().tolist(),
        }
        if self.factor_pred is not None:
            d["factor_pred"] = self.factor_pred.ravel().tolist()
            d["r1"], d["r2"] = self.factor_pred.shape
        if self.branch is not None:
            d["branch"] = self.branch
        return d


def _loadings_apply(loadings: LoadingPair, fpred: np.ndarray) -> np.ndarray:
    if fpred.shape != loadings.ranks:
        raise DimensionMismatch(f"factor prediction {fpred.shape} does not match loading ranks {loadings.ranks}")
    return loadings.u1 @ fpred @ loadings.u2.T


def _check_model(loadings: LoadingPair, model: mar.MarModel) -> None:
    if (model.r1, model.r2) != loadings.ranks:
        raise DimensionMismatch(f"model ranks {(model.r1, model.r2)} do not match loadings {loadings.ranks}")


def predict_plugin(fhat_T: np.ndarray, loadings: LoadingPair, model: mar.MarModel) -> Forecast:
    """``U1 A1 F_T A2^T U2^T`` with the last extracted factor frame."""
    _check_model(loadings, model)
    if model.method != "lse":
        warnings.warn(f"plug-in prediction is meant for the LSE, got a {model.method} model", stacklevel=2)
    fhat_T = np.asarray(fhat_T, dtype=float)
    fpred = model.a1 @ fhat_T @ model.a2.T
    return Forecast(_loadings_apply(loadings, fpred), "plugin-lse", fpred)


def predict_kf(fhat, loadings: LoadingPair, model: mar.MarModel, params: statespace.StateSpaceParams) -> Forecast:
    """Filter the factors, then push ``F_{T|T}`` through the model."""
    _check_model(loadings, model)
    if params.phi.shape != model.phi.shape or not np.allclose(params.phi, model.phi, rtol=0.0, atol=1e-10):
        raise PhiMismatch("state-space Phi differs from kron(A2, A1) of the model")
    out = statespace.kalman_filter(fhat, params)
    fpred = model.a1 @ out.last @ model.a2.T
    return Forecast(_loadings_apply(loadings, fpred), "kf-l2e", fpred)


def predict_l2e_plus(fhat, loadings, lse_model, l2e_model, rel_tol: float = numcore.POS_TOL) -> Forecast:
    """Filter-based L2E prediction when ``sigma_zeta`` is positive definite.

    Falls back to the LSE plug-in otherwise, including when ``Phi`` from the
    L2E is singular.  The returned forecast is exactly one of the two.
    """
    fhat = np.asarray(fhat, dtype=float)
    try:
        params = statespace.estimate_params(fhat, l2e_model.phi)
    except SingularPhi as exc:
        log.warning("l2e-plus: %s; using the plug-in branch", exc)
        params = None
    if params is not None and numcore.is_strictly_positive(params.sigma_zeta, rel_tol):
        fc = predict_kf(fhat, loadings, l2e_model, params)
        return Forecast(fc.xhat, "l2e-plus", fc.factor_pred, "kf")
    fc = predict_plugin(fhat[-1], loadings, lse_model)
    return Forecast(fc.xhat, "l2e-plus", fc.factor_pred, "plugin")


def predict_vector_baseline(fhat, loadings: LoadingPair, kind: str) -> Forecast:
    """Unrestricted VAR(1) on ``vec(F_t)`` by lag-1 or lag-2 Yule-Walker."""
    f = np.asarray(fhat, dtype=float)
    if f.shape[0] < 4:
        raise ValidationError("vector baselines need at least 4 frames")
    r1, r2 = f.shape[1:]
    g = [numcore.autocov(f, k) for k in range(3)]
    if kind == "v-lse":
        num, den, exc = g[1], g[0], mar.SingularGamma0
    elif kind == "v-l2e":
        num, den, exc = g[2], g[1], mar.SingularGamma1
    else:
        raise ValueError("kind must be 'v-lse' or 'v-l2e'")
    phi = num @ mar._inv_checked(den, exc, "autocovariance")
    fpred = numcore.unvec(phi @ numcore.vec(f[-1]), r1, r2)
    return Forecast(_loadings_apply(loadings, fpred), kind, fpred)


def pse(forecast, signal_next: np.ndarray, snr: float) -> float:
    """``||xhat - signal||_F^2 / (d1 d2 snr^2)``."""
    if snr <= 0:
        raise ValidationError("snr must be positive")
    xhat = forecast.xhat if isinstance(forecast, Forecast) else np.asarray(forecast)
    diff = xhat - np.asarray(signal_next)
    return float(np.sum(diff**2) / diff.size / snr**2)


def predict_all(
    x,
    r1: int,
    r2: int,
    methods: Sequence[str],
    h0: int = 1,
    loadings: LoadingPair | None = None,
    failures: dict | None = None,
) -> dict[str, Forecast]:
    """Fit what ``methods`` need on the whole of ``x`` and predict one step.

    Unknown loadings are estimated by iterative TIPUP.  Models are shared
    between methods so each estimator is fitted at most once.  When
    ``failures`` is a dict, a method whose fit raises is recorded there
    (method -> exception) instead of aborting the others.
    """
    x = np.asarray(x, dtype=float)
    out = {}
    if "rw" in methods:
        out["rw"] = Forecast(x[-1].copy(), "rw")
    if "mean" in methods:
        out["mean"] = Forecast(x.mean(axis=0), "mean")
    fmethods = [m for m in methods if m in FACTOR_METHODS]
    if not fmethods:
        return out

    def guard(names, fn):
        try:
            return fn()
        except DMFMError as exc:
            if failures is None:
                raise
            for n in names:
                failures[n] = exc
            return None

    if loadings is None:
        loadings = guard(fmethods, lambda: factor.tipup_loadings(x, r1, r2, h0))
        if loadings is None:
            return out
    fhat = factor.extract_factors(x, loadings)
    models: dict[str, mar.MarModel] = {}

    def get(name):
        if name not in models:
            models[name] = mar.fit(fhat, name)
        return models[name]

    def one(m):
        if m == "plugin-lse":
            return predict_plugin(fhat[-1], loadings, get("lse"))
        if m == "kf-l2e":
            model = get("l2e")
            return predict_kf(fhat, loadings, model, statespace.estimate_params(fhat, model.phi))
        if m == "l2e-plus":
            return predict_l2e_plus(fhat, loadings, get("lse"), get("l2e"))
        return predict_vector_baseline(fhat, loadings, m)

    for m in fmethods:
        fc = guard([m], lambda: one(m))
        if fc is not None:
            out[m] = fc
    return out


@dataclass
class RollingReport:
    """Per-origin squared errors for each method.

    ``sq_err[method]`` is aligned with ``origins``; a failed fit is stored
    as ``nan`` and counted in ``n_failed``.
    """

    origins: list[int]
    methods: list[str]
    sq_err: dict[str, list[float]] = field(default_factory=dict)

    def n_failed(self, method: str) -> int:
        return int(np.sum(~np.isfinite(self.sq_err[method])))

    def rmse(self, method: str) -> float:
        e = np.asarray(self.sq_err[method], dtype=float)
        e = e[np.isfinite(e)]
        return float(np.sqrt(np.mean(e))) if e.size else float("nan")

    def summary(self) -> dict:
        return {m: {"rmse": self.rmse(m), "n_failed": self.n_failed(m)} for m in self.methods}

    def rows(self):
        for i, t in enumerate(self.origins):
            for m in self.methods:
                yield t, m, self.sq_err[m][i]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin", "method", "sq_err"])
            for t, m, e in self.rows():
                w.writerow([t, m, repr(float(e))])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def rolling_forecast(
    series,
    start_origin: int,
    methods: Sequence[str] = ("plugin-lse", "rw", "mean"),
    ranks: tuple[int, int] = (1, 1),
    detrend_alpha: float | None = None,
    h0: int = 1,
    end_origin: int | None = None,
    jobs: int = 1,
) -> RollingReport:
    """Expanding-window one-step evaluation.

    For each origin ``t`` (1-based, ``start_origin <= t <= T - 1``) every
    method is fitted on frames ``1..t`` and scored by
    ``||X_hat_t(1) - X_{t+1}||_F^2 / (d1 d2)``.  The detrend, when requested,
    is applied to the whole series first; the trend at ``t`` only uses data
    up to ``t``.  ``jobs > 1`` spreads origins over worker processes; the
    report is assembled in origin order either way.
    """
    x = np.asarray(series, dtype=float)
    T = x.shape[0]
    if start_origin < 50 or start_origin >= T:
        raise ValidationError(f"start_origin must satisfy 50 <= start_origin < T={T}")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValidationError(f"unknown methods {sorted(unknown)}")
    if detrend_alpha is not None:
        x = np.asarray(exp_smooth_detrend(x, detrend_alpha)[0])
    end = T - 1 if end_origin is None else min(end_origin, T - 1)
    origins = list(range(start_origin, end + 1))
    report = RollingReport(origins, list(methods), {m: [] for m in methods})
    tasks = [(x[: t + 1], t, list(methods), ranks, h0) for t in origins]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_origin_errors, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_origin_errors(task) for task in tasks]
    for errs in results:
        for m in methods:
            report.sq_err[m].append(errs[m])
    return report


def _origin_errors(task) -> dict[str, float]:
    x, t, methods, ranks, h0 = task
    target = x[t]
    d = target.size
    failures: dict = {}
    preds = predict_all(x[:t], ranks[0], ranks[1], methods, h0, failures=failures)
    out = {}
    for m in methods:
        if m in failures:
            log.warning("origin %d: %s failed: %s", t, m, failures[m])
            out[m] = float("nan")
        else:
            out[m] = float(np.sum((preds[m].xhat - target) ** 2) / d)
    return out
