"""Independent reference computations used as test oracles.

Nothing here calls into the package's numerical kernels.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, stats


def bisect(f, lo, hi, tol=1e-14, max_iter=400):
    """Root of an increasing function on [lo, hi] by plain bisection."""
    flo = f(lo)
    if flo > 0:
        raise ValueError("f(lo) > 0")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) <= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def tn_cdf_scipy(mu, sigma, y):
    """Truncated-normal CDF from scipy's normal survival function."""
    if y <= 0:
        return 0.0
    return 1.0 - stats.norm.sf((y - mu) / sigma) / stats.norm.sf(-mu / sigma)


def tn_cdf_quad(mu, sigma, y):
    """CDF by integrating the normal density over [0, y] and [0, inf)."""
    if y <= 0:
        return 0.0
    pdf = lambda u: math.exp(-0.5 * ((u - mu) / sigma) ** 2)  # noqa: E731
    hi = max(mu, 0.0) + 40 * sigma
    num = integrate.quad(pdf, 0.0, min(y, hi), points=[mu] if 0 < mu < min(y, hi) else None, epsabs=0, epsrel=1e-13, limit=200)[0]
    den = integrate.quad(pdf, 0.0, hi, points=[mu] if 0 < mu < hi else None, epsabs=0, epsrel=1e-13, limit=200)[0]
    return num / den


def tn_mean_quad(mu, sigma):
    pdf = lambda u: math.exp(-0.5 * ((u - mu) / sigma) ** 2)  # noqa: E731
    hi = max(mu, 0.0) + 40 * sigma
    pts = [mu] if 0 < mu < hi else None
    num = integrate.quad(lambda u: u * pdf(u), 0.0, hi, points=pts, epsabs=0, epsrel=1e-13, limit=200)[0]
    den = integrate.quad(pdf, 0.0, hi, points=pts, epsabs=0, epsrel=1e-13, limit=200)[0]
    return num / den


def tn_sample(mu, sigma, size, rng):
    """Rejection sampling from N(mu, sigma^2) restricted to [0, inf)."""
    out = np.empty(0)
    while out.size < size:
        draw = rng.normal(mu, sigma, 2 * size)
        out = np.concatenate([out, draw[draw >= 0]])
    return out[:size]


def step_cdf(members):
    x = np.sort(np.asarray(members, dtype=float))
    m = len(x)
    return lambda u: np.searchsorted(x, u, side="right") / m


def ensemble_crps_pairs(members, obs):
    """Double-sum form of the ensemble CRPS."""
    x = np.asarray(members, dtype=float)
    m = len(x)
    return np.abs(x - obs).mean() - np.abs(x[:, None] - x[None, :]).sum() / (2 * m * m)


def brute_force_bipartition(points):
    """Minimum within-cluster sum of squares over all splits into two nonempty groups."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    best = math.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.min() == labels.max():
            continue
        total = 0.0
        for c in (0, 1):
            g = x[labels == c]
            total += ((g - g.mean(axis=0)) ** 2).sum()
        best = min(best, total)
    return best


def law_of_cosines_km(lat1, lon1, lat2, lon2, radius=6371.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return radius * math.acos(max(-1.0, min(1.0, c)))


def chi_square_stat(counts):
    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() / len(counts)
    return float(((counts - expected) ** 2 / expected).sum())


def tn_crps_direct(mu, sigma, y):
    """Closed-form TN CRPS written out with scipy's normal functions."""
    t = mu / sigma
    z = (y - mu) / sigma
    Pt = stats.norm.cdf(t)
    return sigma * (
        z * (1 - 2 * stats.norm.cdf(-z) / Pt)
        + 2 * stats.norm.pdf(z) / Pt
        - stats.norm.cdf(math.sqrt(2) * t) / (math.sqrt(math.pi) * Pt**2)
    )
