import csv
import datetime as dt

import numpy as np
import pytest

from conftest import DAY0, make_forecast
from tnemos.data import (
    FORECAST_HEADER,
    DataError,
    Dataset,
    EnsembleForecast,
    Observation,
    Role,
    Station,
    complete_cases,
    load_dataset,
    read_forecasts,
    write_dataset,
)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def forecast_row(sid, date, lead, base=1.0):
    return [sid, date, lead, base, base + 0.5] + [f"{base + 0.01 * j:.2f}" for j in range(50)]


@pytest.fixture
def csv_files(tmp_path):
    write_csv(tmp_path / "stations.csv", ["station_id", "lat", "lon", "role"],
              [["A", "50.0", "5.0", "observed"], ["B", "51.0", "-3.5", "unobserved"]])
    write_csv(tmp_path / "forecasts.csv", FORECAST_HEADER,
              [forecast_row("A", "2021-01-01", 1), forecast_row("A", "2021-01-02", 1), forecast_row("B", "2021-01-01", 1)])
    write_csv(tmp_path / "observations.csv", ["station_id", "date", "obs"],
              [["A", "2021-01-01", "2.5"], ["A", "2021-01-02", ""], ["B", "2021-01-01", "0.0"]])
    return tmp_path


def load(d):
    return load_dataset(d / "forecasts.csv", d / "observations.csv", d / "stations.csv")


class TestRecords:
    def test_station_ranges(self):
        with pytest.raises(DataError):
            Station("X", 91.0, 0.0)
        with pytest.raises(DataError):
            Station("X", 0.0, -181.0)

    def test_forecast_member_count(self):
        with pytest.raises(DataError):
            EnsembleForecast("A", DAY0, 1, 1.0, 1.0, np.ones(49))

    def test_forecast_negative(self):
        with pytest.raises(DataError):
            make_forecast("A", 0, hres=-0.1)

    def test_forecast_lead_range(self):
        with pytest.raises(DataError):
            make_forecast("A", 0, lead=11)

    def test_observation_negative(self):
        with pytest.raises(DataError):
            Observation("A", DAY0, -1.0)

    def test_members_order(self):
        f = make_forecast("A", 0, hres=1.0, ctrl=2.0, members=np.arange(50.0))
        assert f.members[:3].tolist() == [1.0, 2.0, 0.0]
        assert len(f.members) == 52


class TestDataset:
    def test_unknown_station(self):
        with pytest.raises(DataError):
            Dataset.from_records([Station("A", 0, 0)], [make_forecast("Z", 0)], [])

    def test_duplicate_forecast(self):
        with pytest.raises(DataError):
            Dataset.from_records([Station("A", 0, 0)], [make_forecast("A", 0), make_forecast("A", 0)], [])

    def test_duplicate_station(self):
        with pytest.raises(DataError):
            Dataset.from_records([Station("A", 0, 0), Station("A", 1, 1)], [], [])

    def test_roles_and_index(self, tiny_dataset):
        assert tiny_dataset.ids_with_role(Role.OBSERVED) == ["A", "B"]
        assert tiny_dataset.ids_with_role(Role.UNOBSERVED) == ["U"]
        assert tiny_dataset.start_date == DAY0
        assert tiny_dataset.end_date == DAY0 + dt.timedelta(days=4)
        assert tiny_dataset.lead_times == [1]

    def test_arrays_mark_missing(self, tiny_dataset):
        a = tiny_dataset.arrays(1)
        idx = tiny_dataset.station_index()
        assert np.isnan(a.obs[idx["B"], 3])
        assert a.complete[idx["A"]].all()
        assert not a.complete[idx["U"]].any()
        f = tiny_dataset.forecasts[("A", DAY0, 1)]
        assert a.ens_mean[idx["A"], 0] == pytest.approx(f.f_ens.mean())
        assert a.ens_var[idx["A"], 0] == pytest.approx(f.f_ens.var(ddof=1))


class TestCompleteCases:
    def test_drops_missing_pair(self, tiny_dataset):
        cases = complete_cases(tiny_dataset, {"A", "B"}, (DAY0, DAY0 + dt.timedelta(days=4)), 1)
        keys = [(f.station_id, f.valid_date) for f, _ in cases]
        assert len(cases) == 9
        assert ("B", DAY0 + dt.timedelta(days=3)) not in keys
        assert keys == sorted(keys)

    def test_before_start(self, tiny_dataset):
        early = DAY0 - dt.timedelta(days=10)
        assert complete_cases(tiny_dataset, {"A"}, (early, early + dt.timedelta(days=3)), 1) == []

    def test_matches_brute_force(self, small_synthetic):
        ds = small_synthetic.dataset
        ids = set(ds.station_ids[:5])
        first, last = ds.start_date + dt.timedelta(days=10), ds.start_date + dt.timedelta(days=40)
        brute = 0
        for f in ds.forecasts.values():
            if f.station_id in ids and f.lead_time == 3 and first <= f.valid_date <= last:
                brute += (f.station_id, f.valid_date) in ds.observations
        assert len(complete_cases(ds, ids, (first, last), 3)) == brute


class TestCsv:
    def test_load(self, csv_files):
        ds = load(csv_files)
        assert len(ds.forecasts) == 3
        assert ("A", dt.date(2021, 1, 2)) not in ds.observations
        assert ("A", dt.date(2021, 1, 2), 1) in ds.forecasts
        assert ds.station("B").role is Role.UNOBSERVED
        assert ds.station("B").longitude == -3.5

    def test_duplicate_row_named(self, csv_files):
        rows = [forecast_row("A", "2021-01-01", 1), forecast_row("A", "2021-01-01", 1)]
        write_csv(csv_files / "forecasts.csv", FORECAST_HEADER, rows)
        with pytest.raises(DataError, match="row 3"):
            read_forecasts(csv_files / "forecasts.csv")

    def test_unparseable_row_indexed(self, csv_files):
        row = forecast_row("A", "2021-01-01", 1)
        row[7] = "abc"
        write_csv(csv_files / "forecasts.csv", FORECAST_HEADER, [row])
        with pytest.raises(DataError, match="row 2"):
            read_forecasts(csv_files / "forecasts.csv")

    def test_negative_rejected(self, csv_files):
        write_csv(csv_files / "observations.csv", ["station_id", "date", "obs"], [["A", "2021-01-01", "-1"]])
        with pytest.raises(DataError, match="row 2"):
            load(csv_files)

    def test_empty_cell_missing(self, csv_files):
        row = forecast_row("A", "2021-01-01", 1)
        row[10] = ""
        write_csv(csv_files / "forecasts.csv", FORECAST_HEADER, [row])
        assert read_forecasts(csv_files / "forecasts.csv") == []

    def test_wrong_column_count(self, csv_files):
        write_csv(csv_files / "forecasts.csv", FORECAST_HEADER, [forecast_row("A", "2021-01-01", 1)[:-1]])
        with pytest.raises(DataError, match="columns"):
            read_forecasts(csv_files / "forecasts.csv")

    def test_wrong_header(self, csv_files):
        write_csv(csv_files / "observations.csv", ["station", "date", "obs"], [])
        with pytest.raises(DataError, match="header"):
            load(csv_files)

    def test_unknown_station_in_file(self, csv_files):
        write_csv(csv_files / "observations.csv", ["station_id", "date", "obs"], [["Q", "2021-01-01", "1"]])
        with pytest.raises(DataError):
            load(csv_files)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load(tmp_path)

    def test_roundtrip(self, small_synthetic, tmp_path):
        ds = small_synthetic.dataset
        write_dataset(ds, tmp_path)
        back = load(tmp_path)
        assert back.station_ids == ds.station_ids
        assert back.forecasts == dict(ds.forecasts)
        assert back.observations == dict(ds.observations)
        write_dataset(back, tmp_path / "again")
        for name in ("stations.csv", "forecasts.csv", "observations.csv"):
            assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
