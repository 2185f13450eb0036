"""Station features, k-means, and cluster-based transfer of EMOS fits to unobserved stations."""

from __future__ import annotations

import datetime as dt
import enum
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Station
from .emos import MIN_CASES, EmosParams, GroupFits, OptimizerConfig, fit_group_models

EARTH_RADIUS_KM = 6371.0


class InsufficientData(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class FeatureKind(str, enum.Enum):
    OBS_QUANTILE = "obs_quantile"
    FCST_QUANTILE = "fcst_quantile"
    FCST_RAW = "fcst_raw"

    @property
    def forecast_based(self) -> bool:
        return self is not FeatureKind.OBS_QUANTILE


@dataclass(frozen=True, eq=False)
class FeatureVector:
    station_id: str
    kind: FeatureKind
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError(f"feature of {self.station_id} must be a finite 1-D vector")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _levels(n: int) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)


def _window_days(dataset: Dataset, target_date: dt.date, n: int) -> np.ndarray:
    last = dataset.day_index(target_date) - 1
    return np.arange(last - n + 1, last + 1)


def _window_slice(a: np.ndarray, row: int, days: np.ndarray) -> np.ndarray:
    out = np.full(days.shape, np.nan)
    valid = (days >= 0) & (days < a.shape[1])
    out[valid] = a[row, days[valid]]
    return out


def obs_quantile_features(
    dataset: Dataset, station_id: str, target_date: dt.date, n: int, lead_time: int, N: int
) -> FeatureVector:
    """Quantiles of observed wind and of ensemble-mean errors over the training window.

    The first ``N // 2`` components are quantiles of the observations, the
    remaining ones quantiles of ``mean - obs``; levels are ``j / (N_b + 1)``.
    """
    n1 = N // 2
    n2 = N - n1
    arrays = dataset.arrays(lead_time)
    row = dataset.station_index()[station_id]
    days = _window_days(dataset, target_date, n)
    obs = _window_slice(arrays.obs, row, days)
    mean = _window_slice(arrays.ens_mean, row, days)
    ok = np.isfinite(obs) & np.isfinite(mean)
    if ok.sum() < n1 + 1:
        raise InsufficientData(f"{station_id}: {ok.sum()} complete cases, need {n1 + 1}")
    values = np.concatenate(
        [np.quantile(obs[ok], _levels(n1)), np.quantile(mean[ok] - obs[ok], _levels(n2))]
    )
    return FeatureVector(station_id, FeatureKind.OBS_QUANTILE, values)


def fcst_quantile_features(
    dataset: Dataset, station_id: str, target_date: dt.date, n: int, lead_time: int, N: int
) -> FeatureVector:
    """Quantiles of HRES, CTRL, ensemble mean and ensemble spread over the window."""
    n1 = N // 4
    sizes = (n1, n1, n1, N - 3 * n1)
    arrays = dataset.arrays(lead_time)
    row = dataset.station_index()[station_id]
    days = _window_days(dataset, target_date, n)
    series = [
        _window_slice(arrays.hres, row, days),
        _window_slice(arrays.ctrl, row, days),
        _window_slice(arrays.ens_mean, row, days),
        np.sqrt(_window_slice(arrays.ens_var, row, days)),
    ]
    ok = np.isfinite(series[0])
    if ok.sum() < max(sizes) + 1:
        raise InsufficientData(f"{station_id}: {ok.sum()} forecast days, need {max(sizes) + 1}")
    blocks = [np.quantile(s[ok], _levels(size)) if size else np.empty(0) for s, size in zip(series, sizes)]
    return FeatureVector(station_id, FeatureKind.FCST_QUANTILE, np.concatenate(blocks))


def fcst_raw_features(
    dataset: Dataset, station_id: str, target_date: dt.date, n: int, lead_time: int
) -> FeatureVector:
    """HRES, CTRL, ensemble mean and spread of the ``n`` window days, oldest first."""
    arrays = dataset.arrays(lead_time)
    row = dataset.station_index()[station_id]
    days = _window_days(dataset, target_date, n)
    hres = _window_slice(arrays.hres, row, days)
    if not np.all(np.isfinite(hres)):
        raise InsufficientData(f"{station_id}: forecasts missing on {np.sum(~np.isfinite(hres))} window days")
    values = np.concatenate(
        [
            hres,
            _window_slice(arrays.ctrl, row, days),
            _window_slice(arrays.ens_mean, row, days),
            np.sqrt(_window_slice(arrays.ens_var, row, days)),
        ]
    )
    return FeatureVector(station_id, FeatureKind.FCST_RAW, values)


def station_features(
    dataset: Dataset,
    station_id: str,
    kind: FeatureKind,
    target_date: dt.date,
    n: int,
    lead_time: int,
    N_oq: int = 24,
    N_fq: int = 40,
) -> FeatureVector:
    kind = FeatureKind(kind)
    if kind is FeatureKind.OBS_QUANTILE:
        return obs_quantile_features(dataset, station_id, target_date, n, lead_time, N_oq)
    if kind is FeatureKind.FCST_QUANTILE:
        return fcst_quantile_features(dataset, station_id, target_date, n, lead_time, N_fq)
    return fcst_raw_features(dataset, station_id, target_date, n, lead_time)


# -- k-means --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Clustering:
    k: int
    assignments: Mapping[str, int]
    means: np.ndarray
    feature_kind: FeatureKind | None
    inertia: float
    inertia_history: tuple[float, ...] = ()
    iterations: int = 0

    def members(self, cluster_id: int) -> list[str]:
        return sorted(s for s, c in self.assignments.items() if c == cluster_id)


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _seed_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++: each new center drawn with probability proportional to D^2
    chosen = [int(rng.integers(len(x)))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(len(x), p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(len(x)), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _repair_empty(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        centroid = x[members].mean(axis=0)
        far = members[int(np.argmax(((x[members] - centroid) ** 2).sum(axis=1)))]
        labels[far] = c
    return labels


def _canonical_labels(labels: np.ndarray, k: int) -> np.ndarray:
    # renumber clusters by their first member so labels do not depend on seeding order
    order = sorted(range(k), key=lambda c: int(np.flatnonzero(labels == c)[0]))
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[labels]


def _hartigan_pass(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> bool:
    """Move single points wherever that lowers the within-cluster sum of squares.

    Unlike a Lloyd reassignment, the gain accounts for how both centroids
    shift, so configurations that are Lloyd fixed points can still improve.
    """
    k = len(centers)
    counts = np.bincount(labels, minlength=k).astype(float)
    moved = False
    for i in range(len(x)):
        a = labels[i]
        if counts[a] <= 1:
            continue
        d2 = ((centers - x[i]) ** 2).sum(axis=1)
        removal = counts[a] / (counts[a] - 1.0) * d2[a]
        addition = counts / (counts + 1.0) * d2
        addition[a] = np.inf
        b = int(np.argmin(addition))
        if addition[b] < removal * (1.0 - 1e-12):
            centers[a] = (centers[a] * counts[a] - x[i]) / (counts[a] - 1.0)
            centers[b] = (centers[b] * counts[b] + x[i]) / (counts[b] + 1.0)
            counts[a] -= 1.0
            counts[b] += 1.0
            labels[i] = b
            moved = True
    return moved


def _inertia(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    centers = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
    return float(((x - centers[labels]) ** 2).sum()), centers


def _single_run(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    centers = _seed_centers(x, k, rng)
    labels = np.argmin(_sq_dist(x, centers), axis=1)
    history: list[float] = []
    it = 0
    lloyd_done = False
    while it < max_iter:
        it += 1
        labels = _repair_empty(x, labels, k)
        inertia, centers = _inertia(x, labels, k)
        history.append(inertia)
        if not lloyd_done:
            new = np.argmin(_sq_dist(x, centers), axis=1)
            if not np.array_equal(new, labels):
                labels = new
                continue
            lloyd_done = True
        # Lloyd has converged; refine with point moves until none helps
        if not _hartigan_pass(x, labels, centers.copy()):
            break
        lloyd_done = False
    labels = _repair_empty(x, labels, k)
    return labels, history, it


def kmeans(
    features: Sequence[FeatureVector],
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    n_init: int = 20,
) -> Clustering:
    """Lloyd's algorithm from k-means++ seeding, polished by Hartigan point moves.

    The best of ``n_init`` seeded runs is kept. Features are processed in
    station-id order. Empty clusters are refilled with the point farthest from
    the centroid of the largest cluster. Cluster ids are renumbered so cluster
    0 holds the first station, cluster 1 the first station not in cluster 0,
    and so on.
    """
    feats = sorted(features, key=lambda f: f.station_id)
    if not feats:
        raise ValueError("no features to cluster")
    kinds = {f.kind for f in feats}
    dims = {f.dim for f in feats}
    if len(kinds) > 1 or len(dims) > 1:
        raise DimensionMismatch("features differ in kind or dimension")
    if not 1 <= k <= len(feats):
        raise ValueError(f"k={k} must lie in 1..{len(feats)}")
    if max_iter < 1 or n_init < 1:
        raise ValueError("max_iter and n_init must be positive")
    x = np.stack([f.values for f in feats])
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, history, it = _single_run(x, k, rng, max_iter)
        inertia, _ = _inertia(x, labels, k)
        if best is None or inertia < best[0]:
            best = (inertia, labels, history, it)
    inertia, labels, history, it = best
    labels = _canonical_labels(labels, k)
    inertia, centers = _inertia(x, labels, k)
    return Clustering(
        k=k,
        assignments={f.station_id: int(c) for f, c in zip(feats, labels)},
        means=centers,
        feature_kind=next(iter(kinds)),
        inertia=inertia,
        inertia_history=tuple(history),
        iterations=it,
    )


def assign_to_cluster(feature: FeatureVector | np.ndarray, means) -> int:
    """Index of the nearest mean (squared Euclidean); ties go to the lowest index."""
    v = feature.values if isinstance(feature, FeatureVector) else np.asarray(feature, dtype=float)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if means.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"feature dim {v.shape[0]} vs mean dim {means.shape[1]}")
    return int(np.argmin(((means - v) ** 2).sum(axis=1)))


# -- geography ------------------------------------------------------------------------


def great_circle_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Haversine distance on a sphere of radius 6371 km."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlat = p2 - p1
    dlon = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dlat / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def assign_geographic(
    unobserved: Station,
    clustering: Clustering | Mapping[str, object],
    stations: Sequence[Station],
    candidates: Sequence[object] | None = None,
) -> object:
    """Cluster with the smallest mean great-circle distance to its members."""
    assignments = clustering.assignments if isinstance(clustering, Clustering) else clustering
    if not assignments:
        raise ValueError("empty clustering")
    coords = {s.id: (s.latitude, s.longitude) for s in stations}
    groups: dict[object, list[str]] = {}
    for sid, c in assignments.items():
        groups.setdefault(c, []).append(sid)
    best, best_d = None, math.inf
    for c in sorted(groups, key=_label_key):
        if candidates is not None and c not in candidates:
            continue
        lat = np.array([coords[s][0] for s in groups[c]])
        lon = np.array([coords[s][1] for s in groups[c]])
        d = float(np.mean(great_circle_km(unobserved.latitude, unobserved.longitude, lat, lon)))
        if d < best_d:
            best, best_d = c, d
    return best


def _label_key(c):
    return (0, c, "") if isinstance(c, (int, np.integer)) else (1, 0, str(c))


# -- interpolation ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Interpolation:
    """Outcome of fitting group models on observed stations and transferring them."""

    params: dict[str, EmosParams]
    station_group: dict[str, object]
    distance_to_mean: dict[str, float]
    fits: GroupFits
    clustering: Clustering | None = None
    uninterpolated: dict[str, str] = field(default_factory=dict)


def interpolate_grouping(
    dataset: Dataset,
    grouping: Mapping[str, object],
    unobserved_ids: Sequence[str],
    assignment_feature_kind: FeatureKind | str,
    target_date: dt.date,
    lead_time: int,
    n: int,
    optimizer_config: OptimizerConfig = OptimizerConfig(),
    *,
    warm_start: Mapping[object, EmosParams] | None = None,
    min_cases: int = MIN_CASES,
    N_fq: int = 40,
    geographic: bool = False,
    standardize: bool = False,
    clustering: Clustering | None = None,
) -> Interpolation:
    """Fit per-group models for a fixed grouping of observed stations, then place
    each unobserved station in the group whose assignment-space mean is nearest.
    """
    kind = FeatureKind(assignment_feature_kind)
    if not kind.forecast_based:
        raise ValueError("assignment features must be forecast based")
    fits = fit_group_models(
        dataset, grouping, target_date, lead_time, n, optimizer_config, warm_start, min_cases
    )
    fitted = fits.params
    params: dict[str, EmosParams] = {}
    station_group: dict[str, object] = {}
    distance: dict[str, float] = {}
    missing: dict[str, str] = {}

    for sid in sorted(grouping):
        g = grouping[sid]
        station_group[sid] = g
        if g in fitted:
            params[sid] = fitted[g]
        else:
            missing[sid] = f"group {g} unfitted: {fits.failures.get(g, '')}"

    feats: dict[str, np.ndarray] = {}
    for sid in sorted(set(grouping) | set(unobserved_ids)):
        try:
            feats[sid] = station_features(dataset, sid, kind, target_date, n, lead_time, N_fq=N_fq).values
        except InsufficientData as exc:
            if sid not in grouping:
                missing[sid] = str(exc)
    if standardize and feats:
        obs_x = np.stack([feats[s] for s in sorted(grouping) if s in feats])
        center, scale = obs_x.mean(axis=0), obs_x.std(axis=0)
        scale[scale == 0] = 1.0
        feats = {s: (v - center) / scale for s, v in feats.items()}

    labels = [g for g in sorted(set(grouping.values()), key=_label_key) if g in fitted]
    mean_rows, mean_labels = [], []
    for g in labels:
        member = [feats[s] for s in sorted(grouping) if grouping[s] == g and s in feats]
        if member:
            mean_rows.append(np.mean(member, axis=0))
            mean_labels.append(g)
    means = np.stack(mean_rows) if mean_rows else None
    for sid in sorted(grouping):
        g = grouping[sid]
        if means is not None and sid in feats and g in mean_labels:
            distance[sid] = float(np.linalg.norm(feats[sid] - means[mean_labels.index(g)]))

    stations = list(dataset.stations)
    for sid in sorted(unobserved_ids):
        if len(labels) == 1:
            # one fitted group leaves nothing to choose between
            g = labels[0]
        elif geographic:
            if not labels:
                missing[sid] = "no fitted group"
                continue
            g = assign_geographic(dataset.station(sid), grouping, stations, candidates=labels)
        else:
            if sid not in feats:
                continue
            if means is None:
                missing[sid] = "no fitted group with assignment features"
                continue
            g = mean_labels[assign_to_cluster(feats[sid], means)]
        station_group[sid] = g
        params[sid] = fitted[g]
        if sid in feats and means is not None and g in mean_labels:
            distance[sid] = float(np.linalg.norm(feats[sid] - means[mean_labels.index(g)]))
    return Interpolation(params, station_group, distance, fits, clustering, missing)


def interpolate_models(
    dataset: Dataset,
    observed_ids: Sequence[str],
    unobserved_ids: Sequence[str],
    cluster_feature_kind: FeatureKind | str,
    assignment_feature_kind: FeatureKind | str,
    k: int,
    target_date: dt.date,
    lead_time: int,
    n: int,
    optimizer_config: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    *,
    warm_start: Mapping[object, EmosParams] | None = None,
    min_cases: int = MIN_CASES,
    N_oq: int = 24,
    N_fq: int = 40,
    geographic: bool = False,
    standardize: bool = False,
    max_iter: int = 300,
) -> Interpolation:
    """Semi-local EMOS on observed stations, carried over to unobserved ones.

    1. cluster the observed stations on ``cluster_feature_kind`` features and
       fit one model per cluster;
    2. average the ``assignment_feature_kind`` features of each cluster's members;
    3. compute the same features at the unobserved stations;
    4. put each unobserved station in the cluster with the nearest mean;
    5. hand it that cluster's parameters.

    Observed stations whose clustering features cannot be built are left out
    of every cluster and reported in ``uninterpolated``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    ckind = FeatureKind(cluster_feature_kind)
    feats, skipped = [], {}
    for sid in sorted(observed_ids):
        try:
            feats.append(station_features(dataset, sid, ckind, target_date, n, lead_time, N_oq, N_fq))
        except InsufficientData as exc:
            skipped[sid] = str(exc)
    if not feats:
        raise InsufficientData("no observed station has clustering features")
    if standardize:
        x = np.stack([f.values for f in feats])
        center, scale = x.mean(axis=0), x.std(axis=0)
        scale[scale == 0] = 1.0
        feats = [FeatureVector(f.station_id, f.kind, (f.values - center) / scale) for f in feats]
    clustering = kmeans(feats, min(k, len(feats)), seed=seed, max_iter=max_iter)
    # observed stations without clustering features are placed like unobserved ones
    result = interpolate_grouping(
        dataset,
        clustering.assignments,
        sorted(set(unobserved_ids) | set(skipped)),
        assignment_feature_kind,
        target_date,
        lead_time,
        n,
        optimizer_config,
        warm_start=warm_start,
        min_cases=min_cases,
        N_fq=N_fq,
        geographic=geographic,
        standardize=standardize,
        clustering=clustering,
    )
    for sid, reason in skipped.items():
        if sid not in result.params:
            result.uninterpolated.setdefault(sid, reason)
    return result
