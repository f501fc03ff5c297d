import numpy as np
import pytest

from critmass.data import exclude, load_fixture
from critmass.segmented import bootstrap_errors, fit_piecewise

ACCEPTANCE_SEED = 2008
ACCEPTANCE_RESAMPLES = 10_000

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    failed = sum(line.startswith("FAIL") for line in ACCEPTANCE_LINES)
    terminalreporter.write_line(f"{len(ACCEPTANCE_LINES) - failed} passed, {failed} failed")


@pytest.fixture(scope="session")
def fixture_all():
    return load_fixture()


@pytest.fixture(scope="session")
def active(fixture_all):
    return exclude(fixture_all, "#9")


@pytest.fixture(scope="session")
def cont_fit(active):
    return fit_piecewise(active, "continuous")


@pytest.fixture(scope="session")
def boot_fit(active, cont_fit):
    """Continuous fit with the full 10000-resample bootstrap."""
    return bootstrap_errors(active, cont_fit, ACCEPTANCE_RESAMPLES, ACCEPTANCE_SEED)


@pytest.fixture(scope="session")
def active_sizes(active):
    return np.sort(active.arrays()[0])


CALIBRATION_TRIALS = 1000
SLOPE_TRIALS = 100  # each trial runs its own 200-resample bootstrap


@pytest.fixture(scope="session")
def calibration(active_sizes):
    """Null-hypothesis rejection rates at alpha = 0.05 for every test."""
    from critmass import stat_tests as st
    from critmass.data import from_arrays
    from critmass.micro import generate_planted

    sizes = active_sizes
    x50 = np.linspace(1.0, 30.0, 50)

    def flat(rng):
        return from_arrays(x50, 40.0 + rng.normal(0.0, 5.0, x50.size))

    # right-segment t-test with the partition held at the planted breakpoint
    ref = fit_piecewise(generate_planted(sizes, 15.0, 1.9, 18.0, 0.0), "continuous")
    mean = 15.0 + 1.9 * np.minimum(sizes, 18.0)

    def right_flat(rng):
        return from_arrays(sizes, np.clip(mean + rng.normal(0.0, 6.7, sizes.size), 0.0, 100.0))

    def one_line(rng):
        return from_arrays(sizes, np.clip(15.0 + sizes + rng.normal(0.0, 6.7, sizes.size), 0.0, 100.0))

    def slopes(ds):
        fit = bootstrap_errors(ds, fit_piecewise(ds, "continuous"), 200, 5)
        return st.test_equal_slopes(ds, fit)

    return {
        "no_correlation": st.rejection_rate(flat, st.test_no_correlation, CALIBRATION_TRIALS, 11),
        "zero_right_slope": st.rejection_rate(
            right_flat, lambda ds: st.test_zero_right_slope(ds, ref), CALIBRATION_TRIALS, 12),
        "ks_known": st.rejection_rate(
            lambda rng: rng.normal(0.0, 1.0, 100), lambda x: st.ks_normality(x, 0.0, 1.0),
            CALIBRATION_TRIALS, 13),
        "ks_estimated": st.rejection_rate(
            lambda rng: rng.normal(0.0, 1.0, 100), st.ks_normality, CALIBRATION_TRIALS, 13),
        "equal_slopes": st.rejection_rate(one_line, slopes, SLOPE_TRIALS, 14),
    }
