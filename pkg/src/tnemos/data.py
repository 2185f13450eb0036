"""Stations, ensemble forecasts, observations and CSV ingestion.

A :class:`Dataset` is immutable once loaded. Besides the keyed record
collections it lazily builds dense ``(station, day)`` arrays per lead time,
which is what the fitting and featurization code actually reads.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

N_MEMBERS = 50

STATION_HEADER = ["station_id", "lat", "lon", "role"]
OBSERVATION_HEADER = ["station_id", "date", "obs"]
FORECAST_HEADER = ["station_id", "date", "lead_time", "f_hres", "f_ctrl"] + [
    f"f_ens_{k:02d}" for k in range(1, N_MEMBERS + 1)
]


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class Role(str, enum.Enum):
    OBSERVED = "observed"
    UNOBSERVED = "unobserved"


@dataclass(frozen=True)
class Station:
    id: str
    latitude: float
    longitude: float
    role: Role = Role.OBSERVED

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise DataError(f"station {self.id}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise DataError(f"station {self.id}: longitude {self.longitude} out of range")
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True, eq=False)
class EnsembleForecast:
    """HRES, CTRL and the 50 exchangeable members for one station, day and lead."""

    station_id: str
    valid_date: dt.date
    lead_time: int
    f_hres: float
    f_ctrl: float
    f_ens: np.ndarray

    def __post_init__(self):
        ens = np.array(self.f_ens, dtype=float)
        if ens.shape != (N_MEMBERS,):
            raise DataError(f"expected {N_MEMBERS} ensemble members, got shape {ens.shape}")
        values = np.concatenate([[self.f_hres, self.f_ctrl], ens])
        if not np.all(np.isfinite(values)):
            raise DataError(f"non-finite forecast value for {self.key}")
        if np.any(values < 0):
            raise DataError(f"negative wind speed in forecast {self.key}")
        if not 1 <= int(self.lead_time) <= 10:
            raise DataError(f"lead time {self.lead_time} outside 1..10")
        ens.setflags(write=False)
        object.__setattr__(self, "f_ens", ens)
        object.__setattr__(self, "lead_time", int(self.lead_time))

    @property
    def key(self) -> tuple[str, dt.date, int]:
        return (self.station_id, self.valid_date, self.lead_time)

    @property
    def members(self) -> np.ndarray:
        """All 52 values: HRES, CTRL, then the perturbed members."""
        return np.concatenate([[self.f_hres, self.f_ctrl], self.f_ens])

    def __eq__(self, other):
        if not isinstance(other, EnsembleForecast):
            return NotImplemented
        return (
            self.key == other.key
            and self.f_hres == other.f_hres
            and self.f_ctrl == other.f_ctrl
            and np.array_equal(self.f_ens, other.f_ens)
        )

    __hash__ = None


@dataclass(frozen=True)
class Observation:
    station_id: str
    valid_date: dt.date
    wind_speed: float

    def __post_init__(self):
        if not math.isfinite(self.wind_speed):
            raise DataError(f"non-finite observation at {self.station_id} {self.valid_date}")
        if self.wind_speed < 0:
            raise DataError(f"negative wind speed observation at {self.station_id} {self.valid_date}")


@dataclass(frozen=True)
class LeadArrays:
    """Dense per-lead-time view of a dataset.

    Arrays are indexed ``[station, day]`` with stations in ``Dataset.station_ids``
    order and days counted from ``Dataset.start_date``. Missing records are NaN.
    """

    hres: np.ndarray
    ctrl: np.ndarray
    ens: np.ndarray  # (S, D, 50)
    ens_mean: np.ndarray
    ens_var: np.ndarray
    obs: np.ndarray

    @property
    def has_forecast(self) -> np.ndarray:
        return np.isfinite(self.hres)

    @property
    def complete(self) -> np.ndarray:
        return np.isfinite(self.hres) & np.isfinite(self.obs)


@dataclass(frozen=True, eq=False)
class Dataset:
    stations: tuple[Station, ...]
    forecasts: Mapping[tuple[str, dt.date, int], EnsembleForecast]
    observations: Mapping[tuple[str, dt.date], Observation]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate station id")
        known = set(ids)
        for key in self.forecasts:
            if key[0] not in known:
                raise DataError(f"forecast for unknown station_id {key[0]!r}")
        for key in self.observations:
            if key[0] not in known:
                raise DataError(f"observation for unknown station_id {key[0]!r}")
        object.__setattr__(self, "stations", tuple(self.stations))
        object.__setattr__(self, "forecasts", MappingProxyType(dict(self.forecasts)))
        object.__setattr__(self, "observations", MappingProxyType(dict(self.observations)))

    @classmethod
    def from_records(
        cls,
        stations: Iterable[Station],
        forecasts: Iterable[EnsembleForecast],
        observations: Iterable[Observation],
    ) -> "Dataset":
        fc: dict = {}
        for f in forecasts:
            if f.key in fc:
                raise DataError(f"duplicate forecast key {f.key}")
            fc[f.key] = f
        ob: dict = {}
        for o in observations:
            key = (o.station_id, o.valid_date)
            if key in ob:
                raise DataError(f"duplicate observation key {key}")
            ob[key] = o
        return cls(tuple(stations), fc, ob)

    # -- indexing -----------------------------------------------------------

    @property
    def station_ids(self) -> list[str]:
        return sorted(s.id for s in self.stations)

    def station(self, station_id: str) -> Station:
        return self._station_map()[station_id]

    def ids_with_role(self, role: Role) -> list[str]:
        return sorted(s.id for s in self.stations if s.role == role)

    @property
    def lead_times(self) -> list[int]:
        return sorted({k[2] for k in self.forecasts})

    @property
    def start_date(self) -> dt.date:
        return self._date_span()[0]

    @property
    def end_date(self) -> dt.date:
        return self._date_span()[1]

    def day_index(self, date: dt.date) -> int:
        return (date - self.start_date).days

    def date_of(self, day: int) -> dt.date:
        return self.start_date + dt.timedelta(days=int(day))

    def station_index(self) -> dict[str, int]:
        if "station_index" not in self._cache:
            self._cache["station_index"] = {sid: i for i, sid in enumerate(self.station_ids)}
        return self._cache["station_index"]

    def _station_map(self) -> dict[str, Station]:
        if "station_map" not in self._cache:
            self._cache["station_map"] = {s.id: s for s in self.stations}
        return self._cache["station_map"]

    def _date_span(self) -> tuple[dt.date, dt.date]:
        if "span" not in self._cache:
            dates = [k[1] for k in self.forecasts] + [k[1] for k in self.observations]
            if not dates:
                raise DataError("dataset holds no dated records")
            self._cache["span"] = (min(dates), max(dates))
        return self._cache["span"]

    def arrays(self, lead_time: int) -> LeadArrays:
        """Dense arrays for one lead time (built once, then cached)."""
        key = ("arrays", lead_time)
        if key not in self._cache:
            self._cache[key] = self._build_arrays(lead_time)
        return self._cache[key]

    def _build_arrays(self, lead_time: int) -> LeadArrays:
        idx = self.station_index()
        n_days = (self.end_date - self.start_date).days + 1
        shape = (len(idx), n_days)
        hres = np.full(shape, np.nan)
        ctrl = np.full(shape, np.nan)
        ens = np.full(shape + (N_MEMBERS,), np.nan)
        obs = np.full(shape, np.nan)
        start = self.start_date
        for (sid, date, lead), f in self.forecasts.items():
            if lead != lead_time:
                continue
            i, d = idx[sid], (date - start).days
            hres[i, d] = f.f_hres
            ctrl[i, d] = f.f_ctrl
            ens[i, d] = f.f_ens
        for (sid, date), o in self.observations.items():
            obs[idx[sid], (date - start).days] = o.wind_speed
        has = np.isfinite(hres)
        ens_mean = np.full(shape, np.nan)
        ens_var = np.full(shape, np.nan)
        ens_mean[has], ens_var[has] = member_stats(ens[has])
        for a in (hres, ctrl, ens, ens_mean, ens_var, obs):
            a.setflags(write=False)
        return LeadArrays(hres, ctrl, ens, ens_mean, ens_var, obs)


def member_stats(members) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sample variance (divisor m - 1) over the last axis.

    Members are sorted first so the result does not depend on their order,
    not even in the last bit.
    """
    x = np.sort(np.asarray(members, dtype=float), axis=-1)
    return x.mean(axis=-1), x.var(axis=-1, ddof=1)


def complete_cases(
    dataset: Dataset,
    station_ids: Iterable[str],
    date_range: tuple[dt.date, dt.date],
    lead_time: int,
) -> list[tuple[EnsembleForecast, Observation]]:
    """Forecast/observation pairs with both records present.

    ``date_range`` is inclusive on both ends. Pairs are ordered by station id,
    then date.
    """
    first, last = date_range
    if last < first:
        raise ValueError("empty date range")
    out = []
    n_days = (last - first).days + 1
    for sid in sorted(set(station_ids)):
        for d in range(n_days):
            date = first + dt.timedelta(days=d)
            f = dataset.forecasts.get((sid, date, lead_time))
            if f is None:
                continue
            o = dataset.observations.get((sid, date))
            if o is not None:
                out.append((f, o))
    return out


# -- CSV ingestion ------------------------------------------------------------


def _parse_float(cell: str, path: Path, row: int, column: str) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {row}: unparseable {column} value {cell!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}: row {row}: non-finite {column} value {cell!r}")
    if value < 0 and column not in ("lat", "lon"):
        raise DataError(f"{path}: row {row}: negative {column} value {value}")
    return value


def _parse_date(cell: str, path: Path, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(cell.strip())
    except ValueError:
        raise DataError(f"{path}: row {row}: bad date {cell!r}") from None


def _rows(path: Path, header: list[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in got] != header:
            raise DataError(f"{path}: header mismatch, expected {','.join(header[:6])}...")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no}: expected {len(header)} columns, got {len(row)}"
                )
            yield row_no, row


def read_stations(path: str | Path) -> list[Station]:
    path = Path(path)
    out = []
    seen: set[str] = set()
    for row_no, row in _rows(path, STATION_HEADER):
        if row[0].strip() in seen:
            raise DataError(f"{path}: row {row_no}: duplicate station_id {row[0].strip()!r}")
        seen.add(row[0].strip())
        lat = _parse_float(row[1], path, row_no, "lat")
        lon = _parse_float(row[2], path, row_no, "lon")
        if lat is None or lon is None:
            raise DataError(f"{path}: row {row_no}: missing coordinates")
        try:
            role = Role(row[3].strip().lower())
        except ValueError:
            raise DataError(f"{path}: row {row_no}: unknown role {row[3]!r}") from None
        try:
            out.append(Station(row[0].strip(), lat, lon, role))
        except DataError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
    return out


def read_forecasts(path: str | Path) -> list[EnsembleForecast]:
    """Parse a forecast CSV. Rows with any empty value cell count as missing."""
    path = Path(path)
    out = []
    seen: set = set()
    for row_no, row in _rows(path, FORECAST_HEADER):
        date = _parse_date(row[1], path, row_no)
        try:
            lead = int(row[2])
        except ValueError:
            raise DataError(f"{path}: row {row_no}: bad lead_time {row[2]!r}") from None
        key = (row[0].strip(), date, lead)
        if key in seen:
            raise DataError(f"{path}: row {row_no}: duplicate key {key[0]},{date},{lead}")
        seen.add(key)
        values = [_parse_float(c, path, row_no, FORECAST_HEADER[j + 3]) for j, c in enumerate(row[3:])]
        if any(v is None for v in values):
            continue
        try:
            out.append(EnsembleForecast(row[0].strip(), date, lead, values[0], values[1], values[2:]))
        except DataError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
    return out


def read_observations(path: str | Path) -> list[Observation]:
    path = Path(path)
    out = []
    seen: set = set()
    for row_no, row in _rows(path, OBSERVATION_HEADER):
        date = _parse_date(row[1], path, row_no)
        if (row[0].strip(), date) in seen:
            raise DataError(f"{path}: row {row_no}: duplicate key {row[0].strip()},{date}")
        seen.add((row[0].strip(), date))
        value = _parse_float(row[2], path, row_no, "obs")
        if value is None:
            continue
        out.append(Observation(row[0].strip(), date, value))
    return out


def load_dataset(
    forecast_file: str | Path, observation_file: str | Path, station_file: str | Path
) -> Dataset:
    stations = read_stations(station_file)
    forecasts = read_forecasts(forecast_file)
    observations = read_observations(observation_file)
    try:
        return Dataset.from_records(stations, forecasts, observations)
    except DataError as exc:
        raise DataError(f"{forecast_file}/{observation_file}: {exc}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, directory: str | Path) -> dict[str, Path]:
    """Write ``stations.csv``, ``forecasts.csv`` and ``observations.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "stations": directory / "stations.csv",
        "forecasts": directory / "forecasts.csv",
        "observations": directory / "observations.csv",
    }
    with open(paths["stations"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_HEADER)
        for s in sorted(dataset.stations, key=lambda s: s.id):
            w.writerow([s.id, _fmt(s.latitude), _fmt(s.longitude), s.role.value])
    with open(paths["forecasts"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for key in sorted(dataset.forecasts, key=lambda k: (k[0], k[1], k[2])):
            f = dataset.forecasts[key]
            w.writerow(
                [f.station_id, f.valid_date.isoformat(), f.lead_time, _fmt(f.f_hres), _fmt(f.f_ctrl)]
                + [_fmt(v) for v in f.f_ens]
            )
    with open(paths["observations"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_HEADER)
        for key in sorted(dataset.observations):
            o = dataset.observations[key]
            w.writerow([o.station_id, o.valid_date.isoformat(), _fmt(o.wind_speed)])
    return paths
