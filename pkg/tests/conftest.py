import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tnemos.data import Dataset, EnsembleForecast, Observation, Role, Station  # noqa: E402
from tnemos.synthetic import SyntheticConfig, generate_dataset  # noqa: E402

DAY0 = dt.date(2021, 1, 1)


def make_forecast(sid, day, lead=1, hres=2.0, ctrl=3.0, members=None):
    if members is None:
        members = np.full(50, 4.0)
    return EnsembleForecast(sid, DAY0 + dt.timedelta(days=day), lead, hres, ctrl, np.asarray(members, dtype=float))


def make_obs(sid, day, value):
    return Observation(sid, DAY0 + dt.timedelta(days=day), value)


@pytest.fixture
def tiny_dataset():
    """Two observed stations and one unobserved, five days, lead 1; obs of B missing on day 3."""
    stations = [
        Station("A", 50.0, 5.0, Role.OBSERVED),
        Station("B", 51.0, 6.0, Role.OBSERVED),
        Station("U", 50.5, 5.5, Role.UNOBSERVED),
    ]
    rng = np.random.default_rng(3)
    forecasts, observations = [], []
    for sid in ("A", "B", "U"):
        for d in range(5):
            forecasts.append(make_forecast(sid, d, members=rng.uniform(1, 6, 50), hres=1.0 + d, ctrl=2.0 + d))
            if sid != "U" and not (sid == "B" and d == 3):
                observations.append(make_obs(sid, d, 1.5 + d))
    return Dataset.from_records(stations, forecasts, observations)


@pytest.fixture(scope="session")
def small_synthetic():
    config = SyntheticConfig(n_stations=16, n_unobserved=4, n_days=150, lead_times=(1, 3), seed=11)
    return generate_dataset(config)


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
