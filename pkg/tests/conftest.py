import pytest
from hypothesis import settings

from income_kinetics import female_config, male_config, run_simulation, synthetic_series

from helpers import growth_only_config

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

FIRST_YEAR = 1962
LAST_YEAR = 2011  # 50 reported years


@pytest.fixture(scope="session")
def growth_series():
    """2%/year growth, Y(1962) = 1, long enough for the oldest 1962 cohort."""
    return synthetic_series(1850, 2020, growth=0.02, base_year=FIRST_YEAR)


@pytest.fixture(scope="session")
def flat_series():
    return synthetic_series(1850, 2100, growth=0.0, base_year=1900)


@pytest.fixture(scope="session")
def male_panel(growth_series):
    return run_simulation(male_config(), growth_series, first_entry_year=FIRST_YEAR,
                          last_calendar_year=LAST_YEAR)


@pytest.fixture(scope="session")
def female_panel(growth_series):
    return run_simulation(female_config(), growth_series, first_entry_year=FIRST_YEAR,
                          last_calendar_year=LAST_YEAR)


@pytest.fixture(scope="session")
def oracle_panel(flat_series):
    """Constant Y, FL = 1, no decay: every trajectory should follow the closed form."""
    return run_simulation(growth_only_config(), flat_series, first_entry_year=1960,
                          last_calendar_year=1960)



# -- acceptance report: one line per criterion ---------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    entry = _criteria.setdefault(key, {"title": props.get("title", ""), "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
        entry["seconds"] = props.get("seconds")
    if failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k)):
        e = _criteria[key]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        timing = f" ({e['seconds']:.2f} s)" if e.get("seconds") is not None else ""
        terminalreporter.write_line(f"criterion {key:>2}: {status}  {e['title']}{timing}")
