"""Scores and calibration diagnostics for truncated-normal and raw-ensemble forecasts."""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .tn import TruncNormal, cdf_array, crps_array, mean_array, quantile_array

DEFAULT_ALPHA = 2.0 / 53.0
N_RANKS = 53


class ZeroReference(ZeroDivisionError):
    pass


@dataclass(frozen=True, eq=False)
class ForecastCase:
    key: tuple
    predictive: TruncNormal | np.ndarray
    obs: float

    def __post_init__(self):
        if not self.obs >= 0:
            raise ValueError("observation must be nonnegative")
        if not isinstance(self.predictive, TruncNormal):
            object.__setattr__(self, "predictive", np.asarray(self.predictive, dtype=float))

    @property
    def is_ensemble(self) -> bool:
        return not isinstance(self.predictive, TruncNormal)


# -- CRPS --------------------------------------------------------------------------------


def ensemble_crps(members, obs):
    """CRPS of the empirical CDF of ``members`` (last axis) at ``obs``.

    Uses the sorted-sample identity
    ``mean|X_i - y| - (1 / m^2) * sum_i (2i - m - 1) X_(i)``,
    which equals ``mean|X_i - y| - (1 / 2m^2) sum_ij |X_i - X_j|``.
    """
    y = np.asarray(obs, dtype=float)
    # the score is shift invariant; centring on obs keeps an exact hit exactly 0
    x = np.sort(np.asarray(members, dtype=float) - y[..., None], axis=-1)
    m = x.shape[-1]
    first = np.abs(x).mean(axis=-1)
    weights = 2.0 * np.arange(1, m + 1) - m - 1
    second = (x * weights).sum(axis=-1) / (m * m)
    out = np.maximum(first - second, 0.0)
    return float(out) if out.ndim == 0 else out


def mean_crps(cases: Sequence[ForecastCase]) -> float:
    if not cases:
        raise ValueError("no cases")
    return float(np.mean([case_crps(c) for c in cases]))


def case_crps(case: ForecastCase) -> float:
    if case.is_ensemble:
        return ensemble_crps(case.predictive, case.obs)
    d = case.predictive
    return float(np.maximum(crps_array(d.mu, d.sigma, case.obs), 0.0))


def crpss(mean_score: float, mean_score_ref: float) -> float:
    if mean_score_ref == 0:
        raise ZeroReference("reference mean CRPS is zero")
    return 1.0 - mean_score / mean_score_ref


# -- intervals, PIT, ranks -------------------------------------------------------------------


def ensemble_interval(members, alpha: float = DEFAULT_ALPHA):
    """Empirical central interval from order statistics.

    For ``m`` members the lower bound is order statistic
    ``j = max(1, round((m + 1) * alpha / 2))`` and the upper one ``m + 1 - j``;
    at the default alpha with 52 members these are the extremes.
    """
    x = np.sort(np.asarray(members, dtype=float), axis=-1)
    m = x.shape[-1]
    j = max(1, int(round((m + 1) * alpha / 2.0)))
    j = min(j, (m + 1) // 2)
    return x[..., j - 1], x[..., m - j]


def tn_interval(mu, sigma, alpha: float = DEFAULT_ALPHA):
    return quantile_array(mu, sigma, alpha / 2.0), quantile_array(mu, sigma, 1.0 - alpha / 2.0)


def central_interval(case: ForecastCase, alpha: float = DEFAULT_ALPHA) -> tuple[bool, float]:
    """Whether the observation falls in the (1 - alpha) central interval, and its width."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if case.is_ensemble:
        lo, hi = ensemble_interval(case.predictive, alpha)
    else:
        lo, hi = tn_interval(case.predictive.mu, case.predictive.sigma, alpha)
    lo, hi = float(lo), float(hi)
    return bool(lo <= case.obs <= hi), hi - lo


def ensemble_ranks(members, obs, rng: np.random.Generator) -> np.ndarray:
    """Rank of each observation in ``{obs} + members``, 1-based, ties broken at random."""
    x = np.atleast_2d(np.asarray(members, dtype=float))
    y = np.atleast_1d(np.asarray(obs, dtype=float))
    below = (x < y[:, None]).sum(axis=1)
    ties = (x == y[:, None]).sum(axis=1)
    return 1 + below + np.floor(rng.random(len(y)) * (ties + 1)).astype(int)


def rank_histogram(members, obs, seed: int = 0, n_ranks: int | None = None) -> np.ndarray:
    """Counts of observation ranks; bin ``i`` holds rank ``i + 1``."""
    x = np.atleast_2d(np.asarray(members, dtype=float))
    n_ranks = n_ranks or x.shape[1] + 1
    ranks = ensemble_ranks(x, obs, np.random.default_rng(seed))
    return np.bincount(ranks - 1, minlength=n_ranks)


def pit_values(mu, sigma, obs) -> np.ndarray:
    # exact zeros map to F(0) = 0, no randomisation
    return cdf_array(mu, sigma, obs)


def pit_histogram(pit, bins: int = 20) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(pit, dtype=float), bins=bins, range=(0.0, 1.0))
    return counts


# -- point forecasts --------------------------------------------------------------------------


def mae_median(medians, obs) -> float:
    return float(np.mean(np.abs(np.asarray(medians) - np.asarray(obs))))


def rmse_mean(means, obs) -> float:
    return float(math.sqrt(np.mean((np.asarray(means) - np.asarray(obs)) ** 2)))


# -- per-case score tables ----------------------------------------------------------------------


SCORE_COLUMNS = [
    "crps",
    "pit",
    "rank",
    "interval_hit",
    "interval_width",
    "abs_err_median",
    "sq_err_mean",
]


def score_tn(mu, sigma, obs, alpha: float = DEFAULT_ALPHA) -> pd.DataFrame:
    mu, sigma, obs = (np.asarray(a, dtype=float) for a in (mu, sigma, obs))
    lo, hi = tn_interval(mu, sigma, alpha)
    median = quantile_array(mu, sigma, 0.5)
    mean = mean_array(mu, sigma)
    return pd.DataFrame(
        {
            "crps": np.maximum(crps_array(mu, sigma, obs), 0.0),
            "pit": pit_values(mu, sigma, obs),
            "rank": np.full(obs.shape, -1, dtype=int),
            "interval_hit": (lo <= obs) & (obs <= hi),
            "interval_width": hi - lo,
            "abs_err_median": np.abs(median - obs),
            "sq_err_mean": (mean - obs) ** 2,
        }
    )


def score_ensemble(members, obs, alpha: float = DEFAULT_ALPHA, seed: int = 0) -> pd.DataFrame:
    x = np.atleast_2d(np.asarray(members, dtype=float))
    obs = np.asarray(obs, dtype=float)
    lo, hi = ensemble_interval(x, alpha)
    return pd.DataFrame(
        {
            "crps": ensemble_crps(x, obs) if len(obs) else np.empty(0),
            "pit": np.full(obs.shape, np.nan),
            "rank": ensemble_ranks(x, obs, np.random.default_rng(seed)) if len(obs) else np.empty(0, dtype=int),
            "interval_hit": (lo <= obs) & (obs <= hi),
            "interval_width": hi - lo,
            "abs_err_median": np.abs(np.median(x, axis=1) - obs),
            "sq_err_mean": (x.mean(axis=1) - obs) ** 2,
        }
    )


# -- stationary bootstrap ------------------------------------------------------------------------


def default_block_length(length: int) -> int:
    return max(1, math.ceil(length ** (1.0 / 3.0) - 1e-12))


def stationary_bootstrap_indices(length: int, B: int, mean_block_length: float, seed: int) -> np.ndarray:
    """``(B, length)`` resampling indices with geometric blocks, wrapping circularly."""
    rng = np.random.default_rng(seed)
    p = 1.0 / mean_block_length
    idx = np.empty((B, length), dtype=np.int64)
    idx[:, 0] = rng.integers(length, size=B)
    starts = rng.integers(length, size=(B, length))
    new_block = rng.random((B, length)) < p
    for t in range(1, length):
        idx[:, t] = np.where(new_block[:, t], starts[:, t], (idx[:, t - 1] + 1) % length)
    return idx


def stationary_bootstrap_ci(
    daily_series,
    B: int = 2000,
    level: float = 0.95,
    mean_block_length: float | None = None,
    seed: int = 0,
    statistic: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[float, float]:
    """Percentile interval of a statistic of a daily series under the stationary bootstrap.

    ``daily_series`` may be 2-D, in which case rows (days) are resampled
    jointly. ``statistic`` receives the resampled array of shape
    ``(B, L, ...)`` and returns ``B`` values; the default is the mean over days.
    """
    x = np.asarray(daily_series, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least two days")
    if B < 1:
        raise ValueError("B must be positive")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    L = x.shape[0]
    block = mean_block_length if mean_block_length is not None else default_block_length(L)
    idx = stationary_bootstrap_indices(L, B, block, seed)
    sample = x[idx]
    stats = statistic(sample) if statistic is not None else sample.mean(axis=1)
    stats = np.asarray(stats, dtype=float).reshape(B)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [tail, 1.0 - tail])
    return float(lo), float(hi)


def ratio_statistic(sample: np.ndarray) -> np.ndarray:
    """Pooled mean from resampled (sum, count) day rows."""
    return sample[..., 0].sum(axis=1) / sample[..., 1].sum(axis=1)


def skill_statistic(sample: np.ndarray) -> np.ndarray:
    """1 - pooled(score) / pooled(reference) from (score_sum, ref_sum, count) rows."""
    return 1.0 - sample[..., 0].sum(axis=1) / sample[..., 1].sum(axis=1)


def difference_statistic(sample: np.ndarray) -> np.ndarray:
    """pooled(score) - pooled(reference) from (score_sum, ref_sum, count) rows."""
    count = sample[..., 2].sum(axis=1)
    return (sample[..., 0].sum(axis=1) - sample[..., 1].sum(axis=1)) / count
