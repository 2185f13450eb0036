"""Truncated-normal EMOS: link function, rolling training sets and CRPS fitting."""

from __future__ import annotations

import datetime as dt
import enum
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data import Dataset, EnsembleForecast, Observation, member_stats
from .tn import TruncNormal, crps_array

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-4
N_PARAMS = 6
MIN_CASES = 10 * N_PARAMS


class TrainingTooSmall(ValueError):
    pass


class NonFiniteObjective(FloatingPointError):
    pass


@dataclass(frozen=True)
class EmosParams:
    """Coefficients of mu = a0 + a1^2 HRES + a2^2 CTRL + a3^2 mean, sigma^2 = b0^2 + b1^2 S^2."""

    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 1.0
    b0: float = 1.0
    b1: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite EMOS coefficient in {self}")

    @classmethod
    def from_array(cls, x) -> "EmosParams":
        return cls(*(float(v) for v in x))

    def as_array(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2, self.a3, self.b0, self.b1], dtype=float)

    def canonical(self) -> "EmosParams":
        """Sign-equivalent form with the squared coefficients nonnegative."""
        return EmosParams(self.a0, abs(self.a1), abs(self.a2), abs(self.a3), abs(self.b0), abs(self.b1))


def ensemble_stats(forecast: EnsembleForecast) -> tuple[float, float]:
    """Mean and sample variance (divisor 49) of the 50 exchangeable members."""
    mean, var = member_stats(forecast.f_ens)
    return float(mean), float(var)


def link_arrays(params: EmosParams | np.ndarray, hres, ctrl, ens_mean, ens_var):
    a0, a1, a2, a3, b0, b1 = params.as_array() if isinstance(params, EmosParams) else params
    mu = a0 + a1 * a1 * hres + a2 * a2 * ctrl + a3 * a3 * ens_mean
    sigma = np.sqrt(b0 * b0 + b1 * b1 * ens_var)
    return mu, np.maximum(sigma, SIGMA_MIN)


def link(params: EmosParams, forecast: EnsembleForecast) -> TruncNormal:
    mean, var = ensemble_stats(forecast)
    mu, sigma = link_arrays(params, forecast.f_hres, forecast.f_ctrl, mean, var)
    return TruncNormal(float(mu), float(sigma))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Complete forecast/observation pairs from the ``window_length`` days before ``target_date``.

    The predictor arrays are kept alongside the case list; the objective only
    touches the arrays.
    """

    window_length: int
    target_date: dt.date
    lead_time: int
    station_ids: np.ndarray
    dates: np.ndarray
    hres: np.ndarray
    ctrl: np.ndarray
    ens_mean: np.ndarray
    ens_var: np.ndarray
    obs: np.ndarray
    _dataset: Dataset | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def cases(self) -> list[tuple[EnsembleForecast, Observation]]:
        if self._dataset is None:
            raise ValueError("training set was built from arrays; no records attached")
        ds = self._dataset
        return [
            (ds.forecasts[(sid, d, self.lead_time)], ds.observations[(sid, d)])
            for sid, d in zip(self.station_ids, self.dates)
        ]

    @classmethod
    def from_cases(
        cls,
        cases: Iterable[tuple[EnsembleForecast, Observation]],
        target_date: dt.date,
        window_length: int,
        lead_time: int | None = None,
    ) -> "TrainingSet":
        cases = list(cases)
        if lead_time is None:
            lead_time = cases[0][0].lead_time if cases else 1
        stats = np.array([ensemble_stats(f) for f, _ in cases]).reshape(-1, 2)
        return cls(
            window_length=window_length,
            target_date=target_date,
            lead_time=lead_time,
            station_ids=np.array([f.station_id for f, _ in cases], dtype=object),
            dates=np.array([f.valid_date for f, _ in cases], dtype=object),
            hres=np.array([f.f_hres for f, _ in cases], dtype=float),
            ctrl=np.array([f.f_ctrl for f, _ in cases], dtype=float),
            ens_mean=stats[:, 0].copy(),
            ens_var=stats[:, 1].copy(),
            obs=np.array([o.wind_speed for _, o in cases], dtype=float),
        )


def build_training_set(
    dataset: Dataset,
    station_ids: Iterable[str],
    target_date: dt.date,
    lead_time: int,
    n: int,
    min_cases: int = MIN_CASES,
) -> TrainingSet:
    """Pool the complete cases of ``station_ids`` over days ``target - n .. target - 1``.

    Ordering is by station id, then date, matching :func:`tnemos.data.complete_cases`.
    """
    if n < 1:
        raise ValueError("window length must be at least one day")
    arrays = dataset.arrays(lead_time)
    idx = dataset.station_index()
    ids = sorted(set(station_ids))
    rows = np.array([idx[s] for s in ids], dtype=int)
    last = dataset.day_index(target_date) - 1
    first = last - n + 1
    lo, hi = max(first, 0), min(last, arrays.obs.shape[1] - 1)
    if hi < lo or rows.size == 0:
        days = np.empty(0, dtype=int)
    else:
        days = np.arange(lo, hi + 1)
    sub = np.ix_(rows, days)
    ok = arrays.complete[sub]
    r, d = np.nonzero(ok)
    if len(r) < min_cases:
        raise TrainingTooSmall(
            f"{len(r)} complete cases before {target_date} (lead {lead_time}), need {min_cases}"
        )
    srow, sday = rows[r], days[d]
    return TrainingSet(
        window_length=n,
        target_date=target_date,
        lead_time=lead_time,
        station_ids=np.array([ids[i] for i in r], dtype=object),
        dates=np.array([dataset.date_of(k) for k in sday], dtype=object),
        hres=arrays.hres[srow, sday],
        ctrl=arrays.ctrl[srow, sday],
        ens_mean=arrays.ens_mean[srow, sday],
        ens_var=arrays.ens_var[srow, sday],
        obs=arrays.obs[srow, sday],
        _dataset=dataset,
    )


def mean_crps_objective(params: EmosParams | np.ndarray, training: TrainingSet) -> float:
    if len(training) == 0:
        raise ValueError("empty training set")
    # overflow at extreme trial parameters surfaces as a non-finite value, handled by callers
    with np.errstate(over="ignore", invalid="ignore"):
        mu, sigma = link_arrays(params, training.hres, training.ctrl, training.ens_mean, training.ens_var)
        return float(np.mean(crps_array(mu, sigma, training.obs)))


class Method(str, enum.Enum):
    SIMPLEX = "simplex"
    QUASI_NEWTON = "quasi_newton"


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method = Method.QUASI_NEWTON
    max_iterations: int = 500
    tolerance: float = 1e-6
    init: EmosParams = field(default_factory=EmosParams)

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class FitResult:
    params: EmosParams
    objective: float
    init_objective: float
    n_cases: int
    iterations: int
    history: tuple[float, ...]


def fit(training: TrainingSet, config: OptimizerConfig = OptimizerConfig(), init: EmosParams | None = None) -> FitResult:
    """Minimise mean CRPS over ``training`` starting from ``init`` (default ``config.init``).

    The returned objective never exceeds the starting one: if the optimiser
    wanders uphill the start is returned unchanged.
    """
    start = (init or config.init).as_array()

    def objective(x):
        value = mean_crps_objective(x, training)
        return value if np.isfinite(value) else np.inf

    f0 = objective(start)
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective not finite at initial parameters {start}")
    history = [f0]
    if config.max_iterations == 0:
        return FitResult(EmosParams.from_array(start), f0, f0, len(training), 0, tuple(history))

    quasi_newton = config.method is Method.QUASI_NEWTON

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))
        # the simplex often has non-improving iterations; it stops on vertex spread instead
        if quasi_newton and len(history) > 2 and history[-2] - history[-1] < config.tolerance:
            raise StopIteration

    if config.method is Method.SIMPLEX:
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            callback=record,
            options={"maxiter": config.max_iterations, "fatol": config.tolerance, "xatol": 1e-4},
        )
        x = np.asarray(res.x, dtype=float)
    else:
        # The objective is even in a1..b1, so its gradient vanishes whenever one of
        # them is 0 and a gradient method could never leave that value. Working in
        # the squared coefficients (bounded below by 0) removes the symmetry.
        res = optimize.minimize(
            lambda z: objective(_from_squared(z)),
            _to_squared(start),
            method="L-BFGS-B",
            jac="3-point",
            bounds=[(None, None)] + [(0.0, None)] * 5,
            callback=record,
            options={"maxiter": config.max_iterations, "ftol": 0.0, "gtol": 1e-10, "finite_diff_rel_step": 1e-6},
        )
        x = _from_squared(np.asarray(res.x, dtype=float))
    fx = float(res.fun)
    if not (np.all(np.isfinite(x)) and fx <= f0):
        x, fx = start, f0
    params = EmosParams.from_array(x).canonical()
    return FitResult(params, fx, f0, len(training), int(res.get("nit", len(history) - 1)), tuple(history))


def _to_squared(x: np.ndarray) -> np.ndarray:
    z = np.square(x)
    z[0] = x[0]
    return z


def _from_squared(z: np.ndarray) -> np.ndarray:
    x = np.sqrt(np.maximum(z, 0.0))
    x[0] = z[0]
    return x


def estimate_params(training: TrainingSet, config: OptimizerConfig = OptimizerConfig()) -> EmosParams:
    return fit(training, config).params


@dataclass(frozen=True)
class GroupFits:
    """Per-group outcome of :func:`fit_group_models`."""

    results: Mapping[object, FitResult]
    failures: Mapping[object, str]

    @property
    def params(self) -> dict[object, EmosParams]:
        return {g: r.params for g, r in self.results.items()}


def fit_group_models(
    dataset: Dataset,
    grouping: Mapping[str, object],
    target_date: dt.date,
    lead_time: int,
    n: int,
    config: OptimizerConfig = OptimizerConfig(),
    warm_start: Mapping[object, EmosParams] | None = None,
    min_cases: int = MIN_CASES,
) -> GroupFits:
    """Fit one parameter set per group on the pooled training data of its stations.

    A single group gives the regional model; singleton groups give local models.
    Groups with too little data land in ``failures`` instead of raising.
    """
    members: dict[object, list[str]] = {}
    for sid in sorted(grouping):
        members.setdefault(grouping[sid], []).append(sid)
    results, failures = {}, {}
    for gid in sorted(members, key=_sort_key):
        try:
            training = build_training_set(dataset, members[gid], target_date, lead_time, n, min_cases)
        except TrainingTooSmall as exc:
            log.debug("group %s unfitted: %s", gid, exc)
            failures[gid] = str(exc)
            continue
        init = warm_start.get(gid) if warm_start else None
        results[gid] = fit(training, config, init)
    return GroupFits(results, failures)


def _sort_key(g):
    return (0, g, "") if isinstance(g, (int, np.integer)) else (1, 0, str(g))
