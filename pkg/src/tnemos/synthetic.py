"""Synthetic station networks with a known truncated-normal EMOS truth.

Each station belongs to a regime. A regime fixes how the forecast signal
behaves (climatology, persistence, ensemble spread) and which EMOS
coefficients turn a forecast into the law the observation is drawn from.

Observations depend on the date only, so they can be consistent with one
lead time only: they are drawn from the EMOS law of the shortest lead
(``reference lead``). Longer leads see the same signal plus an independent
error growing linearly with lead time, and their members spread more.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import N_MEMBERS, Dataset, EnsembleForecast, Observation, Role, Station, member_stats, write_dataset
from .emos import EmosParams, link_arrays
from .tn import quantile_array

GROUND_TRUTH_HEADER = ["station_id", "regime_id", "a0", "a1", "a2", "a3", "b0", "b1"]


@dataclass(frozen=True)
class RegimeSpec:
    true_params: EmosParams
    climatology_mean: float = 5.0
    climatology_sd: float = 2.0
    autocorrelation: float = 0.7
    spread: float = 1.0
    lat_range: tuple[float, float] = (45.0, 55.0)
    lon_range: tuple[float, float] = (0.0, 20.0)
    hres_noise: float = 0.5
    ctrl_noise: float = 1.0
    lead_error_growth: float = 0.15
    lead_spread_growth: float = 0.05

    def __post_init__(self):
        if not self.spread > 0:
            raise ValueError("member spread scale must be positive")
        if not -1 < self.autocorrelation < 1:
            raise ValueError("autocorrelation must lie in (-1, 1)")
        if self.climatology_sd < 0:
            raise ValueError("climatology sd must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeSpec":
        d = dict(d)
        p = d.pop("true_params")
        params = EmosParams(**p) if isinstance(p, dict) else EmosParams(*p)
        for key in ("lat_range", "lon_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(true_params=params, **d)


def default_regimes() -> tuple[RegimeSpec, ...]:
    """Two regimes differing in bias, spread and forecast climatology."""
    calm = RegimeSpec(
        true_params=EmosParams(a0=0.3, a1=0.0, a2=0.0, a3=0.9, b0=0.5, b1=0.7),
        climatology_mean=4.0,
        climatology_sd=1.5,
        spread=1.2,
        lat_range=(45.0, 52.0),
        lon_range=(0.0, 10.0),
    )
    windy = RegimeSpec(
        true_params=EmosParams(a0=-1.5, a1=0.0, a2=0.0, a3=1.2, b0=1.6, b1=0.3),
        climatology_mean=8.0,
        climatology_sd=2.5,
        spread=0.6,
        lat_range=(52.0, 60.0),
        lon_range=(10.0, 25.0),
    )
    return (calm, windy)


@dataclass(frozen=True)
class SyntheticConfig:
    n_stations: int = 52
    n_unobserved: int = 12
    n_days: int = 400
    lead_times: tuple[int, ...] = (1, 5, 10)
    regimes: tuple[RegimeSpec, ...] = field(default_factory=default_regimes)
    seed: int = 0
    missing_fraction: float = 0.0
    start_date: dt.date = dt.date(2020, 1, 1)
    # stations sharing a stream index (and regime) get identical forecasts
    forecast_streams: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_stations < 1 or not 0 <= self.n_unobserved < self.n_stations:
            raise ValueError("need 0 <= n_unobserved < n_stations")
        if self.n_days < 1:
            raise ValueError("n_days must be positive")
        if not self.regimes:
            raise ValueError("at least one regime required")
        if not self.lead_times or any(not 1 <= int(L) <= 10 for L in self.lead_times):
            raise ValueError("lead times must lie in 1..10")
        if not 0 <= self.missing_fraction < 1:
            raise ValueError("missing_fraction must lie in [0, 1)")
        if self.forecast_streams is not None and len(self.forecast_streams) != self.n_stations:
            raise ValueError("forecast_streams needs one entry per station")
        object.__setattr__(self, "lead_times", tuple(sorted(int(L) for L in self.lead_times)))
        object.__setattr__(self, "regimes", tuple(self.regimes))

    @property
    def reference_lead(self) -> int:
        return self.lead_times[0]

    def station_ids(self) -> list[str]:
        width = max(3, len(str(self.n_stations)))
        return [f"S{i:0{width}d}" for i in range(self.n_stations)]

    def regime_of(self, i: int) -> int:
        return i % len(self.regimes)


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: Dataset
    ground_truth: dict[str, RegimeSpec]
    regime_ids: dict[str, int]

    def __iter__(self):
        # allows ``dataset, truth = generate_dataset(cfg)``
        return iter((self.dataset, self.ground_truth))


def _signal(rng, regime: RegimeSpec, n_days: int) -> np.ndarray:
    rho, m, s = regime.autocorrelation, regime.climatology_mean, regime.climatology_sd
    eps = rng.standard_normal(n_days)
    x = np.empty(n_days)
    x[0] = m + s * eps[0]
    innov = s * np.sqrt(1.0 - rho * rho)
    for t in range(1, n_days):
        x[t] = m + rho * (x[t - 1] - m) + innov * eps[t]
    return np.maximum(x, 0.0)


def _forecasts(rng, regime: RegimeSpec, signal: np.ndarray, lead: int, reference_lead: int):
    n = len(signal)
    steps = lead - reference_lead
    centre = signal + regime.lead_error_growth * steps * regime.climatology_sd * rng.standard_normal(n)
    spread = regime.spread * (1.0 + regime.lead_spread_growth * steps)
    hres = np.maximum(centre + regime.hres_noise * spread * rng.standard_normal(n), 0.0)
    ctrl = np.maximum(centre + regime.ctrl_noise * spread * rng.standard_normal(n), 0.0)
    ens = np.maximum(centre[:, None] + spread * rng.standard_normal((n, N_MEMBERS)), 0.0)
    return hres, ctrl, ens


def generate_dataset(config: SyntheticConfig = SyntheticConfig()) -> SyntheticData:
    """Draw a network: AR(1) forecast signals, ensembles around them, TN observations.

    Every random stream is derived from ``config.seed`` so repeated calls give
    identical data.
    """
    root = np.random.SeedSequence(config.seed)
    s_roles, s_coords, s_missing, s_obs_root, s_fc_root = root.spawn(5)
    ids = config.station_ids()
    n_st = config.n_stations

    unobserved = set(np.random.default_rng(s_roles).permutation(n_st)[: config.n_unobserved].tolist())
    coord_rng = np.random.default_rng(s_coords)
    streams = list(config.forecast_streams) if config.forecast_streams is not None else list(range(n_st))
    fc_seeds = {s: np.random.SeedSequence([config.seed, 1, int(s)]) for s in sorted(set(streams))}
    obs_seeds = s_obs_root.spawn(n_st)

    stations, forecasts, observations = [], [], []
    truth, regime_ids = {}, {}
    dates = [config.start_date + dt.timedelta(days=d) for d in range(config.n_days)]
    for i, sid in enumerate(ids):
        r = config.regime_of(i)
        regime = config.regimes[r]
        lat = coord_rng.uniform(*regime.lat_range)
        lon = coord_rng.uniform(*regime.lon_range)
        role = Role.UNOBSERVED if i in unobserved else Role.OBSERVED
        stations.append(Station(sid, float(lat), float(lon), role))
        truth[sid] = regime
        regime_ids[sid] = r

        fc_rng = np.random.default_rng(fc_seeds[streams[i]])
        signal = _signal(fc_rng, regime, config.n_days)
        by_lead = {
            lead: _forecasts(fc_rng, regime, signal, lead, config.reference_lead)
            for lead in config.lead_times
        }
        hres, ctrl, ens = by_lead[config.reference_lead]
        mean, var = member_stats(ens)
        mu, sigma = link_arrays(regime.true_params, hres, ctrl, mean, var)
        u = np.random.default_rng(obs_seeds[i]).random(config.n_days)
        obs = quantile_array(mu, sigma, u)

        for lead in config.lead_times:
            h, c, e = by_lead[lead]
            for d, date in enumerate(dates):
                forecasts.append(EnsembleForecast(sid, date, lead, float(h[d]), float(c[d]), e[d]))
        for d, date in enumerate(dates):
            observations.append(Observation(sid, date, float(obs[d])))

    if config.missing_fraction > 0:
        forecasts, observations = _drop(forecasts, observations, config.missing_fraction, s_missing)
    dataset = Dataset.from_records(stations, forecasts, observations)
    return SyntheticData(dataset, truth, regime_ids)


def _drop(forecasts, observations, fraction, seed_seq):
    # forecasts and observations each vanish with probability q, so a
    # (station, date, lead) case is incomplete with probability 1 - (1 - q)^2 = fraction
    q = 1.0 - np.sqrt(1.0 - fraction)
    rng = np.random.default_rng(seed_seq)
    keep_f = rng.random(len(forecasts)) >= q
    keep_o = rng.random(len(observations)) >= q
    return (
        [f for f, k in zip(forecasts, keep_f) if k],
        [o for o, k in zip(observations, keep_o) if k],
    )


def write_synthetic(data: SyntheticData, directory: str | Path) -> dict[str, Path]:
    """Write the three data CSVs plus ``ground_truth.csv``."""
    paths = write_dataset(data.dataset, directory)
    paths["ground_truth"] = Path(directory) / "ground_truth.csv"
    with open(paths["ground_truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUND_TRUTH_HEADER)
        for sid in sorted(data.ground_truth):
            p = data.ground_truth[sid].true_params
            w.writerow([sid, data.regime_ids[sid]] + [repr(float(v)) for v in p.as_array()])
    return paths


def consistent_ensemble(
    n_cases: int,
    n_members: int = 52,
    dispersion: float = 1.0,
    seed: int = 0,
    location_sd: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensembles and observations for rank-histogram checks.

    Observations and members share a case-specific normal law; members use
    ``dispersion`` times the observation scale, so 1.0 gives exchangeable
    (calibrated) ensembles and values below 1 underdispersed ones.
    """
    rng = np.random.default_rng(seed)
    centre = 5.0 + location_sd * rng.standard_normal(n_cases)
    scale = rng.uniform(0.5, 2.0, n_cases)
    obs = centre + scale * rng.standard_normal(n_cases)
    members = centre[:, None] + dispersion * scale[:, None] * rng.standard_normal((n_cases, n_members))
    return members, obs


def single_regime_config(regime: RegimeSpec | None = None, **kwargs) -> SyntheticConfig:
    regime = regime or default_regimes()[0]
    return SyntheticConfig(regimes=(regime,), **kwargs)


def regime_stations(data: SyntheticData, regime: int, role: Role | None = None) -> list[str]:
    ds = data.dataset
    return sorted(
        sid
        for sid, r in data.regime_ids.items()
        if r == regime and (role is None or ds.station(sid).role == role)
    )


def as_config(d: dict) -> SyntheticConfig:
    """Build a config from a flat JSON-style mapping, ignoring unrelated keys."""
    kwargs = {}
    for key in ("n_stations", "n_unobserved", "n_days", "seed"):
        if key in d:
            kwargs[key] = int(d[key])
    if "missing_fraction" in d:
        kwargs["missing_fraction"] = float(d["missing_fraction"])
    if "lead_times" in d:
        kwargs["lead_times"] = tuple(int(x) for x in d["lead_times"])
    if "start_date" in d:
        kwargs["start_date"] = dt.date.fromisoformat(d["start_date"])
    if "regimes" in d and d["regimes"]:
        kwargs["regimes"] = tuple(RegimeSpec.from_dict(r) for r in d["regimes"])
    if d.get("forecast_streams") is not None:
        kwargs["forecast_streams"] = tuple(int(x) for x in d["forecast_streams"])
    return SyntheticConfig(**kwargs)

