"""Normal distribution left-truncated at zero.

All array functions broadcast over ``mu``, ``sigma`` and the evaluation point,
and form every Phi ratio in log space (or from Mills ratios) so heavily
truncated laws, ``mu / sigma`` far below zero, stay accurate.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncNormal:
    """N(mu, sigma^2) restricted to [0, inf) and renormalised."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ValueError(f"location must be finite, got {self.mu}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"scale must be positive and finite, got {self.sigma}")

    def cdf(self, y):
        return tn_cdf(self, y)

    def quantile(self, p):
        return tn_quantile(self, p)

    def crps(self, obs):
        return tn_crps(self, obs)

    def mean(self) -> float:
        return tn_mean(self)

    def median(self) -> float:
        return tn_median(self)


# -- vectorised kernels ---------------------------------------------------------

# below this value of mu/sigma the Phi ratios are formed from Mills ratios
HEAVY_TRUNCATION = -6.0


def _mills(x):
    """Mills ratio Phi(-x) / phi(x), accurate for large positive x."""
    return special.erfcx(x / _SQRT2) * math.sqrt(0.5 * math.pi)


def _heavy_parts(mu, sigma, y):
    # u = -mu/sigma > 6, w = y/sigma, z = w + u; exp(-(z^2 - u^2)/2) without cancellation
    u = -mu / sigma
    w = y / sigma
    e = np.exp(-0.5 * w * (w + 2.0 * u))
    return u, w, e


def cdf_array(mu, sigma, y):
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, y)))
    t = mu / sigma
    z = (y - mu) / sigma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # survival ratio P(X > y) = Phi(-z) / Phi(t); accurate whenever F is not tiny
        surv = np.exp(special.log_ndtr(-z) - special.log_ndtr(t))
        # direct difference is accurate when mass sits well inside the support
        direct = (special.ndtr(z) - special.ndtr(-t)) / special.ndtr(t)
        u, w, e = _heavy_parts(mu, sigma, np.maximum(y, 0.0))
        heavy = 1.0 - e * _mills(w + u) / _mills(u)
    out = np.where(t > 0, direct, 1.0 - surv)
    out = np.where(t < HEAVY_TRUNCATION, heavy, out)
    out = np.clip(out, 0.0, 1.0)
    return np.where(y <= 0, 0.0, out)


def _heavy_quantile(mu, sigma, p, iterations=60):
    # solve log m(w+u) - w(w+2u)/2 - log m(u) = log(1-p) for w = q/sigma by
    # safeguarded Newton on a bracket; the left side is decreasing in w
    u = -mu / sigma
    target = np.log1p(-p)
    log_mu = np.log(_mills(u))

    def g(w):
        return np.log(_mills(w + u)) - 0.5 * w * (w + 2.0 * u) - log_mu - target

    lo = np.zeros_like(u)
    hi = np.maximum(-2.0 * target / u, 1.0 / u)
    while True:
        bad = g(hi) > 0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    w = np.clip(-target / u, lo, hi)
    for _ in range(iterations):
        gw = g(w)
        lo = np.where(gw > 0, w, lo)
        hi = np.where(gw <= 0, w, hi)
        step = w + gw * _mills(w + u)
        inside = (step > lo) & (step < hi)
        w_new = np.where(inside, step, 0.5 * (lo + hi))
        if np.all(np.abs(w_new - w) <= 1e-15 * np.maximum(w_new, 1e-300)):
            w = w_new
            break
        w = w_new
    return sigma * w


def quantile_array(mu, sigma, p):
    mu, sigma, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, p)))
    t = mu / sigma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # F(q) = p  <=>  Phi(-(q - mu)/sigma) = (1 - p) Phi(t)
        upper_form = mu - sigma * special.ndtri((1.0 - p) * special.ndtr(t))
        # equivalently Phi((q - mu)/sigma) = Phi(-t) + p Phi(t), better for small p, t > 0
        lower_form = mu + sigma * special.ndtri(special.ndtr(-t) + p * special.ndtr(t))
    q = np.where((t > 0) & (p < 0.5), lower_form, upper_form)
    heavy = (t < HEAVY_TRUNCATION) & (p > 0)
    if np.any(heavy):
        q = q.copy()
        q[heavy] = _heavy_quantile(mu[heavy], sigma[heavy], p[heavy])
    q = np.where(p <= 0, 0.0, q)
    return np.maximum(q, 0.0)


def mean_array(mu, sigma):
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    t = mu / sigma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # inverse Mills ratio phi(t) / Phi(t)
        inv_mills = np.exp(-0.5 * t * t - _LOG_SQRT_2PI - special.log_ndtr(t))
        inv_mills = np.where(t < HEAVY_TRUNCATION, 1.0 / _mills(-t), inv_mills)
    return np.maximum(mu + sigma * inv_mills, 0.0)


def crps_array(mu, sigma, y):
    """Closed-form CRPS of N0(mu, sigma^2) at observations ``y >= 0``.

    With t = mu/sigma and z = (y - mu)/sigma the score is

        sigma * [ z (1 - 2 Phi(-z)/Phi(t)) + 2 phi(z)/Phi(t)
                  - Phi(sqrt(2) t) / (sqrt(pi) Phi(t)^2) ]

    Phi ratios are taken in log space, or through Mills ratios once
    t < HEAVY_TRUNCATION, where log Phi itself loses relative accuracy.
    """
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, y)))
    t = mu / sigma
    z = (y - mu) / sigma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_p = special.log_ndtr(t)
        surv_ratio = np.exp(special.log_ndtr(-z) - log_p)
        dens_ratio = np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_p)
        spread = np.exp(special.log_ndtr(_SQRT2 * t) - 2.0 * log_p) * _INV_SQRT_PI
        heavy = t < HEAVY_TRUNCATION
        if np.any(heavy):
            u, w, e = _heavy_parts(mu, sigma, y)
            m_u = _mills(u)
            surv_ratio = np.where(heavy, e * _mills(w + u) / m_u, surv_ratio)
            dens_ratio = np.where(heavy, e / m_u, dens_ratio)
            spread = np.where(heavy, _SQRT2 * _mills(_SQRT2 * u) / (m_u * m_u), spread)
    return sigma * (z * (1.0 - 2.0 * surv_ratio) + 2.0 * dens_ratio - spread)


# -- scalar API ---------------------------------------------------------------------


def _check_point(y, name="y"):
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def tn_cdf(dist: TruncNormal, y):
    return _scalar(cdf_array(dist.mu, dist.sigma, _check_point(y)))


def tn_quantile(dist: TruncNormal, p):
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p >= 1):
        raise ValueError("probability must lie in [0, 1)")
    return _scalar(quantile_array(dist.mu, dist.sigma, p))


def tn_pit(dist: TruncNormal, obs):
    obs = _check_point(obs, "obs")
    if np.any(obs < 0):
        raise ValueError("observation must be nonnegative")
    return tn_cdf(dist, obs)


def tn_mean(dist: TruncNormal) -> float:
    return float(mean_array(dist.mu, dist.sigma))


def tn_median(dist: TruncNormal) -> float:
    return float(quantile_array(dist.mu, dist.sigma, 0.5))


def tn_crps(dist: TruncNormal, obs):
    obs = _check_point(obs, "obs")
    if np.any(obs < 0):
        raise ValueError("observation must be nonnegative")
    score = crps_array(dist.mu, dist.sigma, obs)
    if not np.all(np.isfinite(score)):
        raise FloatingPointError(f"non-finite CRPS for mu={dist.mu}, sigma={dist.sigma}")
    # rounding can leave a -1e-17 remainder at a near point mass
    return _scalar(np.maximum(score, 0.0))


def crps_numeric(
    cdf: Callable[[float], float],
    obs: float,
    lower: float,
    upper: float,
    breakpoints: Sequence[float] = (),
    rtol: float = 1e-10,
) -> float:
    """CRPS of an arbitrary CDF by adaptive quadrature of the defining integral.

    ``cdf`` must be 0 below ``lower`` and 1 above ``upper``. The range is split
    at ``obs`` and at any ``breakpoints`` (jump locations of step CDFs) so each
    piece is smooth.
    """
    if not lower <= obs <= upper:
        raise ValueError("obs must lie inside [lower, upper]")
    knots = sorted({lower, upper, obs, *(b for b in breakpoints if lower < b < upper)})
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b <= a:
            continue
        if b <= obs:
            integrand = lambda u: cdf(u) ** 2  # noqa: E731
        else:
            integrand = lambda u: (1.0 - cdf(u)) ** 2  # noqa: E731
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                value, err = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=rtol, limit=200)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"quadrature failed on [{a}, {b}]: {exc}") from None
        total += value
    return total
