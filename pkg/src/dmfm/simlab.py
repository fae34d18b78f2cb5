"""Simulation of the dynamic matrix factor model and Monte Carlo studies.

Truth (loadings, coefficients, innovation covariance) is drawn once per
configuration from ``default_rng([seed, 0])``; replication ``rep`` draws its
series from ``default_rng([seed, 1, rep])``.  The SNR only enters through
the signal scale ``lambda``, so configurations that differ only in SNR share
the same truth and the same random numbers rep by rep.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import factor, forecast, mar, numcore, statespace
from .dataio import MatrixSeries
from .errors import BadConfig, DMFMError, DegenerateAlignment, DimensionMismatch
from .factor import LoadingPair

log = logging.getLogger(__name__)

LOG_SE_FLOOR = 1e-300
ALIGN_COND_MAX = 1e10
SIGMA_XI_RANGE = (1.0, 10.0)

ESTIMATORS = ("proj", "lse", "l2e", "oracle-proj", "oracle-lse", "oracle-l2e")
PREDICTORS = ("plugin-lse", "kf-l2e", "l2e-plus", "v-lse", "v-l2e")
METRICS = ("log_se", "pse", "branch")
CSV_HEADER = ("config_id", "snr", "rep", "estimator", "metric", "value")


@dataclass(frozen=True)
class SimConfig:
    d1: int
    d2: int
    r1: int
    r2: int
    T: int
    rho: float
    snr: float
    seed: int = 0
    burn_in: int = 200
    # optional fixed innovation covariance, replacing the random spectrum
    sigma_xi: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("d1", "d2", "r1", "r2", "T"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise BadConfig(f"{name} must be a positive integer, got {v!r}")
        if self.r1 > self.d1 or self.r2 > self.d2:
            raise BadConfig(f"ranks ({self.r1}, {self.r2}) exceed dimensions ({self.d1}, {self.d2})")
        if not (0.0 < float(self.rho) < 1.0):
            raise BadConfig(f"rho must lie in (0, 1), got {self.rho!r}")
        if not (math.isfinite(float(self.snr)) and float(self.snr) > 0.0):
            raise BadConfig(f"snr must be a positive real, got {self.snr!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise BadConfig(f"seed must be an unsigned integer, got {self.seed!r}")
        if isinstance(self.burn_in, bool) or not isinstance(self.burn_in, (int, np.integer)) or self.burn_in < 0:
            raise BadConfig(f"burn_in must be a nonnegative integer, got {self.burn_in!r}")
        if self.sigma_xi is not None:
            s = np.asarray(self.sigma_xi, dtype=float)
            n = self.r1 * self.r2
            if s.shape != (n, n):
                raise BadConfig(f"sigma_xi must be {n}x{n}, got {s.shape}")
            object.__setattr__(self, "sigma_xi", s)

    def with_snr(self, snr: float) -> "SimConfig":
        return replace(self, snr=snr)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.sigma_xi is None:
            d.pop("sigma_xi")
        else:
            d["sigma_xi"] = self.sigma_xi.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {"d1", "d2", "r1", "r2", "T", "rho", "snr", "seed", "burn_in", "sigma_xi"}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        missing = {"d1", "d2", "r1", "r2", "T", "rho", "snr"} - set(d)
        if missing:
            raise BadConfig(f"missing config keys: {sorted(missing)}")
        return cls(**d)


@dataclass(frozen=True)
class SimTruth:
    loadings: LoadingPair
    a1: np.ndarray
    a2: np.ndarray
    sigma_xi: np.ndarray
    gamma0: np.ndarray  # stationary covariance of vec(F_t)
    lam: float
    sigma: float = 1.0

    @property
    def phi(self) -> np.ndarray:
        return np.kron(self.a2, self.a1)

    def signal(self, f: np.ndarray) -> np.ndarray:
        """Noiseless observation ``lam U1 F U2^T`` for one or many frames."""
        return self.lam * self.loadings.u1 @ f @ self.loadings.u2.T

    def signal_next(self, f_t: np.ndarray) -> np.ndarray:
        """Conditional mean of ``X_{t+1}`` given ``F_t``."""
        return self.signal(self.a1 @ f_t @ self.a2.T)

    def to_dict(self) -> dict:
        return {
            "d1": self.loadings.dims[0],
            "d2": self.loadings.dims[1],
            "r1": self.loadings.ranks[0],
            "r2": self.loadings.ranks[1],
            "u1": self.loadings.u1.tolist(),
            "u2": self.loadings.u2.tolist(),
            "a1": self.a1.tolist(),
            "a2": self.a2.tolist(),
            "sigma_xi": self.sigma_xi.tolist(),
            "lambda": self.lam,
            "sigma": self.sigma,
        }


def _haar_columns(rng: np.random.Generator, d: int, r: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(rng.standard_normal((d, d)))
    return u[:, :r]


def _random_coefficient(rng: np.random.Generator, r: int) -> np.ndarray:
    left = _haar_columns(rng, r, r)
    right = _haar_columns(rng, r, r)
    return left @ np.diag(rng.uniform(0.5, 1.5, size=r)) @ right.T


def _sigma_xi_spectrum(n: int) -> np.ndarray:
    lo, hi = SIGMA_XI_RANGE
    if n == 1:
        return np.array([(lo + hi) / 2])
    return np.linspace(lo, hi, n)


def calibrate_lambda(snr: float, gamma0: np.ndarray, r1: int, r2: int, sigma: float = 1.0) -> float:
    """Signal scale giving ``sqrt(lam^2 tr(Gamma0) / (r1 r2 sigma^2)) = snr``."""
    return float(snr * sigma * math.sqrt(r1 * r2 / np.trace(gamma0)))


def generate_truth(cfg: SimConfig) -> SimTruth:
    rng = np.random.default_rng([cfg.seed, 0])
    u1 = _haar_columns(rng, cfg.d1, cfg.r1)
    u2 = _haar_columns(rng, cfg.d2, cfg.r2)
    a1 = _random_coefficient(rng, cfg.r1)
    a2 = _random_coefficient(rng, cfg.r2)
    a1 = a1 / np.linalg.norm(a1)
    a2 = a2 * cfg.rho / (numcore.spectral_radius(a1) * numcore.spectral_radius(a2))
    a1, a2 = numcore.normalize_pair(a1, a2)
    n = cfg.r1 * cfg.r2
    q = _haar_columns(rng, n, n)
    if cfg.sigma_xi is None:
        sigma_xi = q @ np.diag(_sigma_xi_spectrum(n)) @ q.T
        sigma_xi = 0.5 * (sigma_xi + sigma_xi.T)
    else:
        sigma_xi = cfg.sigma_xi.copy()
    gamma0 = numcore.stationary_cov(np.kron(a2, a1), sigma_xi)
    lam = calibrate_lambda(cfg.snr, gamma0, cfg.r1, cfg.r2)
    return SimTruth(LoadingPair(u1, u2), a1, a2, sigma_xi, gamma0, lam)


def _psd_factor(s: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = s`` for PSD ``s`` (rank-deficient allowed)."""
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def rep_rng(cfg: SimConfig, rep: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 1, rep])


def simulate(
    truth: SimTruth,
    cfg: SimConfig,
    rep: int = 0,
    rng: np.random.Generator | None = None,
    return_factors: bool = False,
    innovations: bool = True,
    noise: bool = True,
    f0: np.ndarray | None = None,
):
    """Draw one series ``X_1..X_T``.

    The factor process starts from its stationary law (or from ``f0``), runs
    ``cfg.burn_in`` discarded steps, then ``T`` kept steps.
    ``innovations=False`` / ``noise=False`` switch off ``xi_t`` / ``E_t``.
    With ``return_factors`` the result is ``(series, factors)`` where
    ``factors`` holds the kept ``F_1..F_T``.
    """
    r1, r2 = truth.loadings.ranks
    d1, d2 = truth.loadings.dims
    if (r1, r2, d1, d2) != (cfg.r1, cfg.r2, cfg.d1, cfg.d2):
        raise DimensionMismatch("truth and config disagree on dimensions")
    rng = rep_rng(cfg, rep) if rng is None else rng
    n = r1 * r2
    steps = cfg.burn_in + cfg.T
    if f0 is None:
        x = _psd_factor(truth.gamma0) @ rng.standard_normal(n)
    else:
        x = numcore.vec(np.asarray(f0, dtype=float))
    z = rng.standard_normal((steps, n))
    xi = z @ _psd_factor(truth.sigma_xi).T if innovations else np.zeros((steps, n))
    phi = truth.phi
    states = np.empty((steps, n))
    for t in range(steps):
        x = phi @ x + xi[t]
        states[t] = x
    f = numcore.unvec_series(states[cfg.burn_in :], r1, r2)
    xs = truth.signal(f)
    if noise:
        xs = xs + truth.sigma * rng.standard_normal(xs.shape)
    series = MatrixSeries(xs)
    return (series, f) if return_factors else series


def rotation_target(loadings_hat: LoadingPair, truth: SimTruth) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients identified through estimated loadings.

    ``A_i0 = H_i A_i H_i^{-1}`` with ``H_i = Uhat_i^T U_i``.  The singular
    values of ``H_i`` are cosines of principal angles, so the smallest one
    is compared with ``max(1, largest)``: a plain condition number would
    accept an ``H_i`` that is uniformly tiny.
    """
    out = []
    for uh, u, a in ((loadings_hat.u1, truth.loadings.u1, truth.a1), (loadings_hat.u2, truth.loadings.u2, truth.a2)):
        h = uh.T @ u
        if h.shape != a.shape:
            raise DimensionMismatch(f"estimated loadings have rank {h.shape[0]}, truth has {a.shape[0]}")
        if not np.all(np.isfinite(h)):
            raise DegenerateAlignment("non-finite loading overlap")
        sv = np.linalg.svd(h, compute_uv=False)
        if sv[-1] * ALIGN_COND_MAX < max(1.0, sv[0]):
            raise DegenerateAlignment("estimated and true loading spaces are nearly orthogonal")
        out.append(h @ a @ np.linalg.inv(h))
    return out[0], out[1]


def log_se(model, a10: np.ndarray, a20: np.ndarray) -> float:
    """``log ||kron(A2hat, A1hat) - kron(A20, A10)||_F^2``, floored at 1e-300.

    The Kronecker product does not depend on how scale is split between
    its factors, so both sides are compared in their common normalisation.
    """
    a1, a2 = (model.a1, model.a2) if isinstance(model, mar.MarModel) else model
    err = np.kron(a2, a1) - np.kron(a20, a10)
    return float(np.log(max(float(np.sum(err**2)), LOG_SE_FLOOR)))


# ---------------------------------------------------------------- studies


@dataclass(frozen=True)
class StudyRow:
    config_id: int
    snr: float
    rep: int
    estimator: str
    metric: str
    value: float

    def as_tuple(self) -> tuple:
        return (self.config_id, self.snr, self.rep, self.estimator, self.metric, self.value)


def _estimator_metrics(estimators: Iterable[str], metrics: Iterable[str]) -> list[tuple[str, str]]:
    """The (estimator, metric) pairs that make sense, in a fixed order."""
    metrics = set(metrics)
    pairs = []
    for e in estimators:
        if e in ESTIMATORS and "log_se" in metrics:
            pairs.append((e, "log_se"))
        elif e in PREDICTORS:
            if "pse" in metrics:
                pairs.append((e, "pse"))
            if e == "l2e-plus" and "branch" in metrics:
                pairs.append((e, "branch"))
    return pairs


def _validate_names(estimators, metrics) -> None:
    bad = set(estimators) - set(ESTIMATORS) - set(PREDICTORS)
    if bad:
        raise BadConfig(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS + PREDICTORS}")
    bad = set(metrics) - set(METRICS)
    if bad:
        raise BadConfig(f"unknown metrics {sorted(bad)}; choose from {METRICS}")


def run_rep(cfg: SimConfig, truth: SimTruth, rep: int, pairs: Sequence[tuple[str, str]], h0: int = 1) -> dict:
    """All requested metrics for one replication.

    Returns ``{(estimator, metric): value}``; a failed fit gives ``nan``.
    Fitted models are shared between the estimation and prediction metrics.
    """
    series, f = simulate(truth, cfg, rep, return_factors=True)
    x = series.frames
    out: dict[tuple[str, str], float] = {}
    cache: dict[str, object] = {}

    def cached(key, fn):
        if key not in cache:
            try:
                cache[key] = fn()
            except DMFMError as exc:
                cache[key] = exc
        if isinstance(cache[key], Exception):
            raise cache[key]
        return cache[key]

    loadings = lambda: cached("loadings", lambda: factor.tipup_loadings(x, cfg.r1, cfg.r2, h0))
    fhat = lambda: cached("fhat", lambda: factor.extract_factors(x, loadings()))
    model = lambda m: cached(m, lambda: mar.fit(fhat(), m))

    for est, metric in pairs:
        try:
            if metric == "log_se" and est.startswith("oracle-"):
                m = est.split("-", 1)[1]
                fit = cached(est, lambda: mar.fit(f, m))
                value = log_se(fit, truth.a1, truth.a2)
            elif metric == "log_se":
                a10, a20 = cached("target", lambda: rotation_target(loadings(), truth))
                value = log_se(model(est), a10, a20)
            else:
                fc = cached("fc:" + est, lambda: _predict(est, fhat(), loadings(), model))
                if metric == "pse":
                    value = forecast.pse(fc, truth.signal_next(f[-1]), cfg.snr)
                else:
                    value = 1.0 if fc.branch == "kf" else 0.0
        except DMFMError as exc:
            log.debug("config snr=%g rep %d: %s/%s failed: %s", cfg.snr, rep, est, metric, exc)
            value = float("nan")
        out[(est, metric)] = float(value)
    return out


def _predict(method, fhat, loadings, model):
    if method == "plugin-lse":
        return forecast.predict_plugin(fhat[-1], loadings, model("lse"))
    if method == "kf-l2e":
        m = model("l2e")
        return forecast.predict_kf(fhat, loadings, m, statespace.estimate_params(fhat, m.phi))
    if method == "l2e-plus":
        return forecast.predict_l2e_plus(fhat, loadings, model("lse"), model("l2e"))
    return forecast.predict_vector_baseline(fhat, loadings, method)


def _rep_task(args):
    cfg, truth, rep, pairs = args
    return run_rep(cfg, truth, rep, pairs)


def run_study(
    configs: Sequence[SimConfig],
    reps: int,
    estimators: Sequence[str] = ("lse", "l2e"),
    metrics: Sequence[str] = ("log_se",),
    jobs: int = 1,
) -> list[StudyRow]:
    """Monte Carlo over ``configs`` x ``reps``; rows ordered by (config, rep).

    Every config gets its own truth (drawn from its seed); reps are
    independent series.  Failures show up as ``nan`` values.
    """
    if reps < 1:
        raise BadConfig("reps must be at least 1")
    _validate_names(estimators, metrics)
    pairs = _estimator_metrics(estimators, metrics)
    tasks = []
    for cfg in configs:
        truth = generate_truth(cfg)
        tasks.extend((cfg, truth, rep, pairs) for rep in range(reps))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_rep_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_rep_task(t) for t in tasks]
    rows = []
    for i, ((cfg, _, rep, _), res) in enumerate(zip(tasks, results)):
        cid = i // reps
        for (est, metric), value in res.items():
            rows.append(StudyRow(cid, float(cfg.snr), rep, est, metric, value))
    return rows


def study_table(rows: Sequence[StudyRow], estimator: str, metric: str, config_id: int) -> np.ndarray:
    """Values of one (estimator, metric, config) cell ordered by rep."""
    sel = sorted((r.rep, r.value) for r in rows if r.config_id == config_id and r.estimator == estimator and r.metric == metric)
    return np.array([v for _, v in sel])


def write_study_csv(rows: Sequence[StudyRow], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r.config_id},{r.snr!r},{r.rep},{r.estimator},{r.metric},{r.value!r}\n")


def parse_study_config(d: dict) -> tuple[list[SimConfig], int, list[str], list[str]]:
    """Expand a study JSON object into one config per SNR grid value."""
    if not isinstance(d, dict):
        raise BadConfig("study config must be a JSON object")
    required = ("d1", "d2", "r1", "r2", "T", "rho", "snr_grid", "reps")
    missing = [k for k in required if k not in d]
    if missing:
        raise BadConfig(f"study config is missing keys {missing}")
    extra = set(d) - set(required) - {"seed", "estimators", "metrics", "burn_in"}
    if extra:
        raise BadConfig(f"study config has unknown keys {sorted(extra)}")
    grid = d["snr_grid"]
    if not isinstance(grid, list) or not grid:
        raise BadConfig("snr_grid must be a non-empty list")
    reps = d["reps"]
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise BadConfig(f"reps must be a positive integer, got {reps!r}")
    base = {k: d[k] for k in ("d1", "d2", "r1", "r2", "T", "rho")}
    base["seed"] = d.get("seed", 0)
    base["burn_in"] = d.get("burn_in", 200)
    cfgs = []
    for i, snr in enumerate(grid):
        try:
            cfgs.append(SimConfig(snr=snr, **base))
        except BadConfig as exc:
            raise BadConfig(f"snr_grid[{i}]: {exc}") from None
    estimators = list(d.get("estimators", ["lse", "l2e"]))
    metrics = list(d.get("metrics", ["log_se"]))
    _validate_names(estimators, metrics)
    return cfgs, reps, estimators, metrics


def bootstrap_order_confidence(
    a: np.ndarray, b: np.ndarray, n_boot: int = 2000, strict: bool = True, seed: int = 0
) -> float:
    """Share of paired bootstrap resamples with ``median(a) < median(b)``.

    ``a`` and ``b`` are per-rep values from the same replications (common
    random numbers), so reps are resampled jointly.  With ``strict=False``
    the comparison is ``<=``.  NaN reps are dropped pairwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    if a.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, a.size, size=(n_boot, a.size))
    ma = np.median(a[idx], axis=1)
    mb = np.median(b[idx], axis=1)
    hits = ma < mb if strict else ma <= mb
    return float(np.mean(hits))


def load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: line {exc.lineno}: {exc.msg}") from None
