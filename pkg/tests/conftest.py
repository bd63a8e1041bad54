import pytest

from collapse_probe.optics import OpticalConfig, ScreenConfig

# 810 nm idler-band light, 20 um slits 100 um apart, 0.5 m lens
A_M, D_M, LAMBDA_M, F0_M = 20e-6, 100e-6, 810e-9, 0.5


@pytest.fixture(scope="session")
def cfg():
    return OpticalConfig(A_M, D_M, LAMBDA_M, F0_M)


@pytest.fixture(scope="session")
def screen(cfg):
    return ScreenConfig.default_for(cfg, n_bins=100)


# --- acceptance reporting: one PASS/FAIL line per @pytest.mark.criterion test


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")
    config.stash[_CRITERIA] = {}


_CRITERIA = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or report.outcome != "passed":
        item.config.stash[_CRITERIA][number] = (title, report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter, config):
    criteria = config.stash[_CRITERIA]
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        title, outcome, duration = criteria[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} ({duration:.1f} s)")
