"""End-to-end experiment: rolling fits, interpolation to unobserved stations, verification."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import verification as vf
from .clustering import FeatureKind, InsufficientData, interpolate_grouping, interpolate_models
from .data import DataError, Dataset, Role, load_dataset
from .emos import MIN_CASES, EmosParams, Method, NonFiniteObjective, OptimizerConfig, link_arrays
from .synthetic import SyntheticConfig, as_config, generate_dataset, write_synthetic

log = logging.getLogger(__name__)

EMOS_MODELS = ("regional", "local", "semilocal_oq", "semilocal_fq", "semilocal_ff")
ALL_MODELS = ("raw",) + EMOS_MODELS
CLUSTER_KIND = {
    "semilocal_oq": FeatureKind.OBS_QUANTILE,
    "semilocal_fq": FeatureKind.FCST_QUANTILE,
    "semilocal_ff": FeatureKind.FCST_RAW,
}
SYNTHETIC_KEYS = frozenset(
    {"n_stations", "n_unobserved", "n_days", "missing_fraction", "start_date", "regimes", "forecast_streams"}
)
PARAM_NAMES = ["a0", "a1", "a2", "a3", "b0", "b1"]

PARAMS_COLUMNS = ["date", "lead_time", "group_id"] + PARAM_NAMES + ["objective", "n_cases"]
CLUSTERS_COLUMNS = ["date", "lead_time", "station_id", "cluster_id", "role", "distance_to_mean"]
STATION_PARAMS_COLUMNS = (
    ["date", "lead_time", "model", "station_id", "role", "group_id"] + PARAM_NAMES + ["source"]
)
SCORES_COLUMNS = ["model", "station_id", "date", "lead_time", "role"] + vf.SCORE_COLUMNS
AGG_COLUMNS = ["model", "lead_time", "metric", "value", "ci_low", "ci_high"]
HIST_COLUMNS = ["model", "lead_time", "bin", "count"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str | None = None
    forecast_file: str | None = None
    observation_file: str | None = None
    station_file: str | None = None
    output_dir: str = "output"
    models: tuple[str, ...] = ALL_MODELS
    n: int = 60
    k: int = 20
    N_oq: int = 24
    N_fq: int = 40
    assignment_feature_kind: str = "fcst_raw"
    interpolation: str = "features"
    standardize: bool = False
    lead_times: tuple[int, ...] | None = None
    validation_start: dt.date | None = None
    validation_end: dt.date | None = None
    optimizer_method: str = "quasi_newton"
    max_iterations: int = 500
    tolerance: float = 1e-6
    min_cases: int = MIN_CASES
    warm_start: bool = True
    seed: int = 0
    alpha: float = vf.DEFAULT_ALPHA
    bootstrap_B: int = 2000
    bootstrap_level: float = 0.95
    mean_block_length: float | None = None
    pit_bins: int = 20
    kmeans_max_iter: int = 300
    simulate: bool = False
    synthetic: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs, extra = {}, {}
        for key, value in d.items():
            if key in names:
                kwargs[key] = value
            elif key in SYNTHETIC_KEYS:
                extra[key] = value
            else:
                raise ConfigError(f"unknown config key: {key!r}")
        for key in ("validation_start", "validation_end"):
            if isinstance(kwargs.get(key), str):
                kwargs[key] = dt.date.fromisoformat(kwargs[key])
        if "models" in kwargs:
            # the raw ensemble is always scored as the reference
            wanted = set(kwargs["models"]) | {"raw"}
            unknown = wanted - set(ALL_MODELS)
            if unknown:
                raise ConfigError(f"unknown model(s): {sorted(unknown)}")
            kwargs["models"] = tuple(m for m in ALL_MODELS if m in wanted)
        if kwargs.get("lead_times") is not None:
            kwargs["lead_times"] = tuple(int(x) for x in kwargs["lead_times"])
        # generator settings ride along in the same flat document
        kwargs["synthetic"] = {**extra, **(kwargs.get("synthetic") or {})}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        unknown = set(self.models) - set(ALL_MODELS)
        if unknown:
            raise ConfigError(f"unknown model(s): {sorted(unknown)}")
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must be positive")
        if FeatureKind(self.assignment_feature_kind) is FeatureKind.OBS_QUANTILE:
            raise ConfigError("assignment features must be forecast based")
        if self.interpolation not in ("features", "geographic"):
            raise ConfigError("interpolation must be 'features' or 'geographic'")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        Method(self.optimizer_method)

    def synthetic_config(self) -> SyntheticConfig:
        """Generator settings; seed and lead times default to the run's own."""
        d = {"seed": self.seed}
        if self.lead_times:
            d["lead_times"] = list(self.lead_times)
        d.update(self.synthetic)
        return as_config(d)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(Method(self.optimizer_method), self.max_iterations, self.tolerance)

    def data_paths(self) -> tuple[Path, Path, Path]:
        base = Path(self.data_dir) if self.data_dir else Path(".")
        return (
            Path(self.forecast_file) if self.forecast_file else base / "forecasts.csv",
            Path(self.observation_file) if self.observation_file else base / "observations.csv",
            Path(self.station_file) if self.station_file else base / "stations.csv",
        )

    def load(self) -> Dataset:
        if self.simulate:
            data = generate_dataset(self.synthetic_config())
            if self.data_dir:
                write_synthetic(data, self.data_dir)
            return data.dataset
        fc, ob, st = self.data_paths()
        for p in (fc, ob, st):
            if not p.exists():
                raise FileNotFoundError(f"data file not found: {p}")
        return load_dataset(fc, ob, st)

    def validation_range(self, dataset: Dataset) -> tuple[dt.date, dt.date]:
        earliest = dataset.start_date + dt.timedelta(days=self.n)
        start = self.validation_start or earliest
        end = self.validation_end or dataset.end_date
        if start < earliest:
            raise ConfigError(
                f"validation start {start} is less than n={self.n} days after data start {dataset.start_date}"
            )
        if end < start:
            raise ConfigError("validation range is empty")
        return start, end


@dataclass
class FitOutput:
    params: pd.DataFrame
    clusters: pd.DataFrame
    station_params: pd.DataFrame


@dataclass
class VerifyOutput:
    scores: pd.DataFrame
    scores_agg: pd.DataFrame
    pit_hist: pd.DataFrame
    rank_hist: pd.DataFrame


@dataclass
class PipelineOutput:
    fit: FitOutput
    verify: VerifyOutput


def _dates(start: dt.date, end: dt.date):
    for d in range((end - start).days + 1):
        yield start + dt.timedelta(days=d)


# -- fitting stage ----------------------------------------------------------------------------


def _fit_model(model, dataset, config, observed, unobserved, date, lead, warm):
    opt = config.optimizer()
    common = dict(
        warm_start=warm,
        min_cases=config.min_cases,
        N_fq=config.N_fq,
        geographic=config.interpolation == "geographic",
        standardize=config.standardize,
    )
    if model == "regional":
        grouping = {sid: 0 for sid in observed}
        return interpolate_grouping(
            dataset, grouping, unobserved, config.assignment_feature_kind, date, lead, config.n, opt, **common
        )
    if model == "local":
        grouping = {sid: sid for sid in observed}
        return interpolate_grouping(
            dataset, grouping, unobserved, config.assignment_feature_kind, date, lead, config.n, opt, **common
        )
    return interpolate_models(
        dataset,
        observed,
        unobserved,
        CLUSTER_KIND[model],
        config.assignment_feature_kind,
        config.k,
        date,
        lead,
        config.n,
        opt,
        seed=config.seed,
        N_oq=config.N_oq,
        max_iter=config.kmeans_max_iter,
        **common,
    )


def run_fits(dataset: Dataset, config: RunConfig) -> FitOutput:
    """Rolling fits and interpolation for every EMOS model, lead time and validation day."""
    start, end = config.validation_range(dataset)
    leads = config.lead_times or tuple(dataset.lead_times)
    observed = dataset.ids_with_role(Role.OBSERVED)
    unobserved = dataset.ids_with_role(Role.UNOBSERVED)
    roles = {s.id: s.role.value for s in dataset.stations}
    models = [m for m in EMOS_MODELS if m in config.models]
    param_rows, cluster_rows, station_rows = [], [], []
    for lead in leads:
        for model in models:
            warm: dict = {}
            carried: dict[str, tuple[object, EmosParams]] = {}
            for date in _dates(start, end):
                try:
                    res = _fit_model(
                        model, dataset, config, observed, unobserved, date, lead,
                        warm if config.warm_start else None,
                    )
                except (InsufficientData, NonFiniteObjective) as exc:
                    log.warning("%s lead %d %s: fit skipped (%s)", model, lead, date, exc)
                    res = None
                iso = date.isoformat()
                if res is not None:
                    for gid, r in res.fits.results.items():
                        param_rows.append(
                            [iso, lead, f"{model}:{gid}"] + r.params.as_array().tolist() + [r.objective, r.n_cases]
                        )
                        warm[gid] = r.params
                    if res.fits.failures:
                        log.info("%s lead %d %s: %d group(s) unfitted", model, lead, iso, len(res.fits.failures))
                    if model in CLUSTER_KIND:
                        for sid in sorted(res.station_group):
                            cluster_rows.append(
                                [iso, lead, sid, f"{model}:{res.station_group[sid]}", roles[sid],
                                 res.distance_to_mean.get(sid, math.nan)]
                            )
                for sid in observed + unobserved:
                    if res is not None and sid in res.params:
                        gid, p, source = res.station_group[sid], res.params[sid], "fit"
                        carried[sid] = (gid, p)
                    elif sid in carried:
                        # no fit today: keep using the station's most recent parameters
                        (gid, p), source = carried[sid], "carried"
                    else:
                        continue
                    station_rows.append(
                        [iso, lead, model, sid, roles[sid], str(gid)] + p.as_array().tolist() + [source]
                    )
            log.info("fitted %s for lead %d", model, lead)
    params = pd.DataFrame(param_rows, columns=PARAMS_COLUMNS)
    clusters = pd.DataFrame(cluster_rows, columns=CLUSTERS_COLUMNS)
    station_params = pd.DataFrame(station_rows, columns=STATION_PARAMS_COLUMNS)
    return FitOutput(params, clusters, station_params)


# -- verification stage ----------------------------------------------------------------------


def score_cases(dataset: Dataset, station_params: pd.DataFrame, config: RunConfig) -> pd.DataFrame:
    """Per-case scores of every model on the cases all requested models can forecast."""
    start, end = config.validation_range(dataset)
    leads = config.lead_times or tuple(dataset.lead_times)
    idx = dataset.station_index()
    ids = dataset.station_ids
    roles = np.array([dataset.station(s).role.value for s in ids], dtype=object)
    models = [m for m in EMOS_MODELS if m in config.models]
    first, last = dataset.day_index(start), dataset.day_index(end)
    frames = []
    for lead in leads:
        arrays = dataset.arrays(lead)
        days = np.arange(first, min(last, arrays.obs.shape[1] - 1) + 1)
        ok = arrays.complete[:, days]
        coef: dict[str, np.ndarray] = {}
        sp = station_params[station_params["lead_time"] == lead]
        for model in models:
            c = np.full(ok.shape + (6,), np.nan)
            rows = sp[sp["model"] == model]
            if len(rows):
                si = rows["station_id"].map(idx).to_numpy()
                day_of = {d: dataset.day_index(dt.date.fromisoformat(d)) for d in rows["date"].unique()}
                di = rows["date"].map(day_of).to_numpy(dtype=int) - first
                keep = (di >= 0) & (di < len(days))
                c[si[keep], di[keep]] = rows[PARAM_NAMES].to_numpy(dtype=float)[keep]
            coef[model] = c
            ok &= np.isfinite(c[..., 0])
        s_i, d_i = np.nonzero(ok)
        g_day = days[d_i]
        if len(s_i) == 0:
            continue
        obs = arrays.obs[s_i, g_day]
        base = pd.DataFrame(
            {
                "station_id": np.array(ids, dtype=object)[s_i],
                "date": [dataset.date_of(d).isoformat() for d in g_day],
                "lead_time": lead,
                "role": roles[s_i],
            }
        )
        if "raw" in config.models:
            members = np.concatenate(
                [arrays.hres[s_i, g_day, None], arrays.ctrl[s_i, g_day, None], arrays.ens[s_i, g_day]], axis=1
            )
            raw = vf.score_ensemble(members, obs, config.alpha, seed=config.seed * 1000 + lead)
            frames.append(pd.concat([base.assign(model="raw"), raw], axis=1))
        for model in models:
            c = coef[model][s_i, d_i]
            mu, sigma = link_arrays(
                c.T, arrays.hres[s_i, g_day], arrays.ctrl[s_i, g_day],
                arrays.ens_mean[s_i, g_day], arrays.ens_var[s_i, g_day],
            )
            tab = vf.score_tn(mu, sigma, obs, config.alpha)
            frames.append(pd.concat([base.assign(model=model), tab], axis=1))
    if not frames:
        return pd.DataFrame(columns=SCORES_COLUMNS)
    scores = pd.concat(frames, ignore_index=True)[SCORES_COLUMNS]
    order = {m: i for i, m in enumerate(ALL_MODELS)}
    scores = scores.sort_values(
        ["lead_time", "model", "date", "station_id"], key=lambda s: s.map(order) if s.name == "model" else s
    )
    return scores.reset_index(drop=True)


def _daily(frame: pd.DataFrame, column: str, dates: list[str]) -> np.ndarray:
    g = frame.groupby("date")[column].agg(["sum", "count"]).reindex(dates, fill_value=0)
    return g.to_numpy(dtype=float)


def aggregate_scores(scores: pd.DataFrame, config: RunConfig) -> pd.DataFrame:
    """Pooled metrics with stationary-bootstrap intervals over validation days."""
    rows = []
    tail = (1.0 - config.bootstrap_level) / 2.0

    def ci(stats):
        lo, hi = np.quantile(stats, [tail, 1.0 - tail])
        return float(lo), float(hi)

    for (lead, role), part in scores.groupby(["lead_time", "role"], sort=True):
        dates = sorted(part["date"].unique())
        L = len(dates)
        block = config.mean_block_length or vf.default_block_length(L)
        idx = vf.stationary_bootstrap_indices(L, config.bootstrap_B, block, config.seed) if L >= 2 else None
        models = [m for m in ALL_MODELS if m in set(part["model"])]
        by_model = {m: part[part["model"] == m] for m in models}
        daily = {}
        for m in models:
            daily[m] = {
                col: _daily(by_model[m], col, dates)
                for col in ("crps", "abs_err_median", "sq_err_mean", "interval_hit", "interval_width")
            }
        for m in models:
            label = f"{m}@{role}"
            for metric, col, transform in (
                ("crps", "crps", None),
                ("mae", "abs_err_median", None),
                ("rmse", "sq_err_mean", math.sqrt),
                ("coverage", "interval_hit", None),
                ("width", "interval_width", None),
            ):
                d = daily[m][col]
                value = d[:, 0].sum() / d[:, 1].sum()
                lo = hi = math.nan
                if idx is not None:
                    stats = vf.ratio_statistic(d[idx])
                    if transform is not None:
                        stats = np.sqrt(stats)
                    lo, hi = ci(stats)
                if transform is not None:
                    value = transform(value)
                rows.append([label, lead, metric, value, lo, hi])
            for ref in ("raw", "regional"):
                if ref not in daily or ref == m:
                    continue
                pair = np.stack(
                    [daily[m]["crps"][:, 0], daily[ref]["crps"][:, 0], daily[m]["crps"][:, 1]], axis=1
                )
                value = vf.crpss(pair[:, 0].sum(), pair[:, 1].sum())
                lo, hi = ci(vf.skill_statistic(pair[idx])) if idx is not None else (math.nan, math.nan)
                rows.append([label, lead, f"crpss_vs_{ref}", value, lo, hi])
                if ref == "regional":
                    pair = np.stack(
                        [daily[m]["abs_err_median"][:, 0], daily[ref]["abs_err_median"][:, 0],
                         daily[m]["abs_err_median"][:, 1]],
                        axis=1,
                    )
                    value = (pair[:, 0].sum() - pair[:, 1].sum()) / pair[:, 2].sum()
                    lo, hi = ci(vf.difference_statistic(pair[idx])) if idx is not None else (math.nan, math.nan)
                    rows.append([label, lead, "mae_diff_vs_regional", value, lo, hi])
    return pd.DataFrame(rows, columns=AGG_COLUMNS)


def histograms(scores: pd.DataFrame, config: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame]:
    pit_rows, rank_rows = [], []
    for (model, lead, role), part in scores.groupby(["model", "lead_time", "role"], sort=True):
        label = f"{model}@{role}"
        if model == "raw":
            counts = np.bincount(part["rank"].to_numpy(dtype=int) - 1, minlength=vf.N_RANKS)
            rank_rows += [[label, lead, b + 1, int(c)] for b, c in enumerate(counts)]
        else:
            counts = vf.pit_histogram(part["pit"].to_numpy(dtype=float), config.pit_bins)
            pit_rows += [[label, lead, b + 1, int(c)] for b, c in enumerate(counts)]
    return pd.DataFrame(pit_rows, columns=HIST_COLUMNS), pd.DataFrame(rank_rows, columns=HIST_COLUMNS)


def run_verification(dataset: Dataset, station_params: pd.DataFrame, config: RunConfig) -> VerifyOutput:
    scores = score_cases(dataset, station_params, config)
    agg = aggregate_scores(scores, config)
    pit, rank = histograms(scores, config)
    return VerifyOutput(scores, agg, pit, rank)


def run_pipeline(config: RunConfig, dataset: Dataset | None = None, write: bool = True) -> PipelineOutput:
    dataset = dataset if dataset is not None else config.load()
    fits = run_fits(dataset, config)
    verify = run_verification(dataset, fits.station_params, config)
    out = PipelineOutput(fits, verify)
    if write:
        write_outputs(out, config.output_dir)
    return out


# -- output -----------------------------------------------------------------------------------


def _write(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False, lineterminator="\n", float_format=None)


def write_fit_outputs(fit: FitOutput, output_dir: str | Path, station_params: bool = True) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(fit.params, out / "params.csv")
    _write(fit.clusters, out / "clusters.csv")
    if station_params:
        _write(fit.station_params, out / "station_params.csv")


def write_verify_outputs(ver: VerifyOutput, output_dir: str | Path) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(ver.scores, out / "scores.csv")
    _write(ver.scores_agg, out / "scores_agg.csv")
    _write(ver.pit_hist, out / "pit_hist.csv")
    _write(ver.rank_hist, out / "rank_hist.csv")


def write_outputs(out: PipelineOutput, output_dir: str | Path) -> None:
    write_fit_outputs(out.fit, output_dir)
    write_verify_outputs(out.verify, output_dir)


def read_station_params(path: str | Path) -> pd.DataFrame:
    if not Path(path).exists():
        raise FileNotFoundError(f"station parameter file not found: {path}")
    frame = pd.read_csv(path, dtype={"station_id": str, "group_id": str, "date": str}, float_precision="round_trip")
    missing = set(STATION_PARAMS_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return frame
