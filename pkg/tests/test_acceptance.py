"""Acceptance criteria, one check per quoted number.

Every check records a PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing check never hides the ones after it.
"""
import json

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ACCEPTANCE_RESAMPLES, ACCEPTANCE_SEED
from critmass import stat_tests as st
from critmass.cli import main
from critmass.micro import generate_planted
from critmass.nls import fit_ansatz, jacobian, model
from critmass.ols import fit_linear
from critmass.ranking import residuals_vs_mean, residuals_vs_model
from critmass.segmented import CriticalMasses, classify, critical_masses, fit_piecewise

PLANTED_TRIALS = 100


def check(label, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    assert ok, f"{label}: {detail}"


def within(value, target, tol):
    return abs(value - target) <= tol


# 1. two-segment fit on the 29 active records

@pytest.mark.parametrize("name,target,tol", [
    ("a1", 15.0, 5.0), ("b1", 1.9, 0.5), ("a2", 51.0, 35.0), ("b2", 0.0, 2.0), ("breakpoint", 18.0, 6.0),
])
def test_c1_parameters(boot_fit, name, target, tol):
    v = getattr(boot_fit, name)
    check(f"C1 {name}", within(v, target, tol), f"{v:.4g} vs {target} ± {tol}")


def test_c1_r_squared(boot_fit):
    r2 = 100 * boot_fit.r_squared
    check("C1 R^2", within(r2, 60.3, 1.5), f"{r2:.2f}% vs 60.3 ± 1.5")


# 2. breakpoint precision

def test_c2_breakpoint_range(boot_fit):
    c = boot_fit.breakpoint
    check("C2 N_c in [16, 19]", 16.0 <= c <= 19.0, f"{c:.4f}")


def test_c2_breakpoint_error(boot_fit):
    se = boot_fit.se_breakpoint
    check("C2 se(N_c) within x2 of 5.6", 5.6 / 2 <= se <= 5.6 * 2,
          f"{se:.3f} ({ACCEPTANCE_RESAMPLES} resamples, seed {ACCEPTANCE_SEED})")


# 3. critical masses

def test_c3_lower_is_half(boot_fit):
    m = critical_masses(boot_fit)
    check("C3 N_k = N_c / 2", m.lower == boot_fit.breakpoint / 2 and m.upper == 2 * m.lower,
          f"N_k = {m.lower:.4f}, N_c = {m.upper:.4f}")


def test_c3_headline(boot_fit):
    m = critical_masses(boot_fit)
    check("C3 headline 9 ± 3", m.headline() == "9 ± 3", f"{m.headline()!r} (se_lower {m.se_lower:.3f})")


# 4. ansatz table

ANSATZ_R2 = {"quadratic": (59.9, 1.0), "cubic": (61.1, 1.0), "power": (57.5, 1.5), "logshift": (57.9, 1.5)}
ANSATZ_BARS = {
    "quadratic": [(12, 6), (2.9, 0.9), (-0.059, 0.027)],
    "cubic": [(17, 9), (1, 3), (0.10, 0.2), (-0.004, 0.005)],
    "power": [(-15, 75), (27, 66), (0.3, 0.5)],
    "logshift": [(-16, 44), (20, 13), (-4, 8)],
}


@pytest.fixture(scope="module")
def ansatz_fits(active):
    return {a: fit_ansatz(active, a) for a in ANSATZ_R2}


@pytest.mark.parametrize("ansatz", list(ANSATZ_R2))
def test_c4_r_squared(ansatz_fits, ansatz):
    target, tol = ANSATZ_R2[ansatz]
    r2 = 100 * ansatz_fits[ansatz].r_squared
    check(f"C4 {ansatz} R^2", within(r2, target, tol), f"{r2:.2f}% vs {target} ± {tol}")


@pytest.mark.parametrize("ansatz", list(ANSATZ_BARS))
def test_c4_point_estimates(ansatz_fits, ansatz):
    p = ansatz_fits[ansatz].parameters
    ok = all(within(v, t, e) for v, (t, e) in zip(p, ANSATZ_BARS[ansatz]))
    shown = ", ".join(f"{v:.4g}" for v in p)
    check(f"C4 {ansatz} estimates inside error bars", ok and ansatz_fits[ansatz].converged, shown)


# 5. hypothesis tests

def test_c5_no_correlation(active):
    p = st.test_no_correlation(active).p_value
    check("C5 no-correlation p < 0.001", p < 0.001, f"p = {p:.3g}")


def test_c5_zero_right_slope(active, boot_fit):
    p = st.test_zero_right_slope(active, boot_fit).p_value
    check("C5 zero-right-slope p = 0.9 ± 0.15", within(p, 0.9, 0.15), f"p = {p:.4f}")


def test_c5_equal_slopes(active, boot_fit):
    p = st.test_equal_slopes(active, boot_fit).p_value
    check("C5 slope-coincidence p = 0.2 ± 0.1", within(p, 0.2, 0.1), f"p = {p:.4f}")


def test_c5_ks(boot_fit):
    r = st.ks_normality(boot_fit.residuals)
    check("C5 K-S fails to reject", r.decision_at_005 == "fail_to_reject", f"D = {r.statistic:.4f}, p = {r.p_value:.3f}")


# 6. residual dispersion

def test_c6_vs_mean_full(fixture_all):
    rep = residuals_vs_mean(fixture_all, include_excluded=True)
    check("C6 vs_mean range (all 30)", within(rep.range, 43.6, 0.05), f"{rep.range:.3f}")
    check("C6 vs_mean sd (all 30)", within(rep.std_dev, 10.5, 0.2), f"{rep.std_dev:.3f}")


def test_c6_vs_mean_active(active):
    rep = residuals_vs_mean(active)
    check("C6 vs_mean sd (excluding 9)", within(rep.std_dev, 10.7, 0.2), f"{rep.std_dev:.3f}")


def test_c6_vs_model(active, boot_fit):
    rep = residuals_vs_model(active, boot_fit)
    check("C6 vs_model range", within(rep.range, 26.1, 1.5), f"{rep.range:.3f}")
    check("C6 vs_model sd", within(rep.std_dev, 6.7, 0.5), f"{rep.std_dev:.3f}")


# 7. classification

def test_c7_classification(active):
    _, counts = classify(active, CriticalMasses(9.0, 18.0))
    check("C7 8 small", counts["small"] == 8, f"{counts}")
    check("C7 5 large", counts["large"] == 5, f"{counts}")


# 8. dataset summary

def test_c8_mean_headcount(fixture_all):
    m = fixture_all.summary()["mean_headcount"]
    check("C8 mean headcount 12.96 ± 0.005", within(m, 12.96, 0.005), f"{m:.4f}")


def test_c8_mean_quality(fixture_all):
    m = fixture_all.summary()["mean_quality"]
    check("C8 mean quality 36.50 ± 0.005", within(m, 36.50, 0.005), f"{m:.4f}")


# 9. property suite

def test_c9_ols_grid_oracle():
    x = np.arange(1.0, 6.0)
    a_grid = np.arange(-30.0, 30.0 + 1e-9, 0.05)
    b_grid = np.arange(-7.0, 7.0 + 1e-9, 0.05)
    rng = np.random.default_rng(9)
    X = np.column_stack([np.ones(5), x])
    half_cell = 0.025 ** 2 * np.abs(X.T @ X).sum()
    worst = 0.0
    ok = True
    for _ in range(20):
        y = rng.uniform(-10, 10, 5)
        fit = fit_linear(x, y, 1)
        pred = a_grid[:, None, None] + b_grid[None, :, None] * x
        grid = float(((y - pred) ** 2).sum(-1).min())
        ok &= fit.sse <= grid + 1e-9 and grid - fit.sse <= half_cell + 1e-9
        worst = max(worst, grid - fit.sse)
    check("C9 OLS equals brute-force grid", ok, f"20 instances, grid excess <= {worst:.2e}")


def test_c9_jacobians():
    rng = np.random.default_rng(99)
    N = np.linspace(2.0, 30.0, 15)
    worst = 0.0
    for ansatz in ("quadratic", "cubic", "power", "logshift"):
        for _ in range(20):
            p = rng.uniform(-5, 5, {"cubic": 4}.get(ansatz, 3))
            if ansatz == "power":
                p[2] = rng.uniform(0.05, 2.0)
            if ansatz == "logshift":
                p[2] = rng.uniform(-1.5, 10.0)
            J = jacobian(ansatz, p, N)
            for j in range(p.size):
                h = 1e-6 * max(abs(p[j]), 1.0)
                up, down = p.copy(), p.copy()
                up[j] += h
                down[j] -= h
                fd = (model(ansatz, up, N) - model(ansatz, down, N)) / (2 * h)
                scale = np.maximum(np.abs(J[:, j]), 1e-3 * np.abs(J[:, j]).max())
                worst = max(worst, float(np.max(np.abs(fd - J[:, j]) / scale)))
    check("C9 Jacobians match finite differences", worst < 1e-5, f"max relative error {worst:.2e}")


def test_c9_zero_noise_recovery():
    worst = 0.0
    for mode in ("free", "continuous"):
        f = fit_piecewise(generate_planted(np.arange(2.0, 31.0), 10.0, 2.0, 15.0, 0.5), mode)
        truth = [10.0, 2.0, 32.5, 0.5, 15.0]
        worst = max(worst, float(np.abs(np.array([f.a1, f.b1, f.a2, f.b2, f.breakpoint]) - truth).max()))
    check("C9 zero-noise planted recovery 1e-6", worst < 1e-6, f"max error {worst:.2e}")


def test_c9_planted_median(active):
    N, _ = active.arrays()
    errors = []
    for i in range(PLANTED_TRIALS):
        ds = generate_planted(N, 15.0, 1.9, 18.0, 0.0, noise_sd=6.7,
                              seed=np.random.SeedSequence([ACCEPTANCE_SEED, i]))
        errors.append(abs(fit_piecewise(ds, "continuous").breakpoint - 18.0))
    med = float(np.median(errors))
    check("C9 planted median |N_c - 18| <= 2 at sd 6.7", med <= 2.0,
          f"median {med:.3f} over {PLANTED_TRIALS} trials")


@pytest.mark.parametrize("name", ["no_correlation", "zero_right_slope", "ks_known", "equal_slopes"])
def test_c9_calibration(calibration, name):
    rate = calibration[name]
    check(f"C9 calibration {name}", 0.02 <= rate <= 0.10, f"rejection rate {rate:.3f} at alpha 0.05")


def test_c9_byte_identical(tmp_path, capsys):
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        code = main(["report", "--exclude", "#9", "--seed", str(ACCEPTANCE_SEED), "--resamples", "1000",
                     "--out", str(out), "--plot-dir", str(tmp_path / f"p{k}")])
        assert code == 0
        texts.append(out.read_bytes() + (tmp_path / f"p{k}" / "fit.csv").read_bytes())
    json.loads(texts[0].split(b"\nN_grid")[0])
    capsys.readouterr()
    check("C9 byte-identical reruns", texts[0] == texts[1], f"{len(texts[0])} bytes")


def test_report_headline_on_fixture(tmp_path):
    out = tmp_path / "report.json"
    assert main(["report", "--exclude", "#9", "--seed", str(ACCEPTANCE_SEED), "--out", str(out)]) == 0
    head = json.loads(out.read_text(encoding="utf-8"))["headline"]["lower_critical_mass"]
    check("report headline N_k = 9 ± 3", head == "9 ± 3", repr(head))

