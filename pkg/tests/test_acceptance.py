"""Acceptance criteria 1-10; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (the lines are also
written through ``capsys.disabled`` so they show without ``-s``).
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from minimaxdesign import (
    Dataset,
    RngStream,
    SimConfig,
    best_linear_coefficients,
    build_design,
    calibrate_leading_coefficient,
    convergence_study,
    f_value,
    fit_ols,
    fit_wls,
    integrated_squared_error,
    level_partition,
    monomial_context,
    omega_trace,
    run_experiment,
    sample_predictors,
    sigma2_min,
    sigma2_min_closed_form,
    simulate_responses,
    solve_threshold,
    worst_case_risk,
)
from minimaxdesign.wls import weighted_scores

from conftest import gl_rule, perturbed_designs


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _mean(K):
    ctx = monomial_context(K)
    base = [0.0, 1.0] if K == 1 else [0.0, 1.0, 1.0]
    return ctx, calibrate_leading_coefficient(base, ctx)


def _outer_boundary(ctx, s2):
    return max(abs(v) for v in level_partition(ctx, solve_threshold(ctx, s2)).boundary_points)


# ---------------------------------------------------------------------------


def test_criterion_01_sigma2_min(report):
    t0 = time.perf_counter()
    s1, s2 = sigma2_min(monomial_context(1)), sigma2_min(monomial_context(2))
    ctx10 = monomial_context(10)
    a, b = sigma2_min(ctx10), sigma2_min_closed_form(ctx10)
    dt = time.perf_counter() - t0
    ok = (abs(s1 - 1.0) < 1e-6 and abs(s2 - 1.5) < 1e-6 and 1.5 < a < 1.752
          and abs(a - b) < 1e-8 and dt < 1.0)
    report(1, ok, f"K=1 {s1:.9f}, K=2 {s2:.9f}, K=10 {a:.9f} vs closed form {b:.9f} "
                  f"(|diff| {abs(a - b):.1e}), {dt:.2f}s")


def test_criterion_02_boundaries_sigma2_2(report):
    t0 = time.perf_counter()
    ctx1, ctx2 = monomial_context(1), monomial_context(2)
    A1 = level_partition(ctx1, solve_threshold(ctx1, 2.0)).A
    pts2 = sorted(abs(v) for v in level_partition(ctx2, solve_threshold(ctx2, 2.0)).boundary_points)
    dt = time.perf_counter() - t0
    ok = (len(A1) == 1 and abs(A1[0][0] + 0.364) < 5e-4 and abs(A1[0][1] - 0.364) < 5e-4
          and len(pts2) == 4 and abs(pts2[0] - 0.235) < 5e-4 and abs(pts2[-1] - 0.587) < 5e-4 and dt < 1.0)
    report(2, ok, f"K=1 A={[tuple(round(v, 5) for v in iv) for iv in A1]}, "
                  f"K=2 |boundaries|={[round(v, 5) for v in pts2]}, {dt:.2f}s")


def test_criterion_03_boundaries_sigma2_3(report):
    ctx1, ctx2 = monomial_context(1), monomial_context(2)
    derived = _outer_boundary(ctx1, 3.0)
    # invert the reference boundaries: which sigma2 puts the edge of A at 0.550 and 0.725?
    eff1 = brentq(lambda s: _outer_boundary(ctx1, s) - 0.550, 2.0, 20.0, xtol=1e-8)
    eff2 = brentq(lambda s: _outer_boundary(ctx2, s) - 0.725, 2.0, 20.0, xtol=1e-8)
    note = (f"discrepancy: reference sigma2=3 row [-0.550, 0.550] / [-0.725, 0.725] does not solve "
            f"f(h0)=-2/3; derived K=1 boundary is +-{derived:.4f}, K=2 is +-{_outer_boundary(ctx2, 3.0):.4f}; "
            f"reference rows imply effective sigma2 {eff1:.3f} (K=1), {eff2:.3f} (K=2)")
    ok = abs(derived - 0.4662) < 5e-4 and abs(eff1 - 4.49) < 0.02 and abs(eff2 - 4.49) < 0.02
    report(3, ok, note)


def test_criterion_04_asymptotic_risk_sigma2_1(report):
    t0 = time.perf_counter()
    ctx1, m1 = _mean(1)
    ctx2, m2 = _mean(2)
    k1 = [omega_trace(ctx1, build_design(ctx1, f, s), m1, 1.0).trace_risk
          for f, s in (("uniform", None), ("sqrt-h", None), ("minimax", 1.0))]
    k2 = [omega_trace(ctx2, build_design(ctx2, f, s), m2, 1.0).trace_risk
          for f, s in (("uniform", None), ("sqrt-h", None), ("minimax", 1.0))]
    dt = time.perf_counter() - t0
    ok = (np.all(np.abs(np.subtract(k1, [4.57, 4.04, 4.00])) <= 0.01)
          and np.all(np.abs(np.subtract(k2[:2], [7.38, 6.13])) <= 0.01)
          and abs(k2[2] - 6.00) <= 0.01 and dt < 5.0)
    flag = "K=2 minimax derived {:.4f}; reference 5.98 flagged (sigma2=1 is below sigma2_min=1.5, so the design is prop-h and the risk is exactly k*(noise + deviation) = 6)"
    report(4, ok, f"K=1 {np.round(k1, 4).tolist()}, K=2 {np.round(k2, 4).tolist()}; "
                  + flag.format(k2[2]) + f"; {dt:.2f}s")


REFERENCE_RISKS = {
    # (K, label): (uniform, sqrt, minimax) reference asymptotic values
    (1, 0.5): (3.07, 2.62, 2.50), (1, 2.0): (10.57, 9.76, 9.84), (1, 3.0): (20.57, 19.29, 19.38),
    (2, 0.5): (5.13, 4.03, 3.72), (2, 2.0): (16.38, 14.57, 14.92), (2, 3.0): (29.84, 28.62, 29.02),
}


def test_criterion_05_asymptotic_risk_other_labels(report):
    # convention: noise variance = label^2, minimax design built with sigma2 = label
    misses = []
    rows = []
    for (K, label), reference in REFERENCE_RISKS.items():
        ctx, m = _mean(K)
        designs = (build_design(ctx, "uniform"), build_design(ctx, "sqrt-h"), build_design(ctx, "minimax", label))
        vals = [omega_trace(ctx, d, m, label ** 2).trace_risk for d in designs]
        rows.append(f"K={K} label={label:g}: {np.round(vals, 3).tolist()}")
        for d, v, p in zip(designs, vals, reference):
            if abs(v - p) > 0.02:
                misses.append(f"K={K} label={label:g} {d.family}: derived {v:.3f} vs reference {p}")
    detail = "; ".join(rows)
    if misses:
        detail += " | cells outside 0.02: " + "; ".join(misses)
    report(5, not misses, detail)


def test_criterion_06_monte_carlo_n50(report):
    t0 = time.perf_counter()
    res = run_experiment(SimConfig(mean={"template": [0.0, 1.0, 1.0], "calibrate_target": 1.0},
                                   replications=10_000, n=50, coupling=True))
    dt = time.perf_counter() - t0
    reference = np.array([4.93, 4.31, 4.22])
    z = np.abs(res.means - reference) / res.ses
    diff_ok = all(se < min(res.ses) for _, se in res.diff_ses.values())
    pair = res.diff_ses[("sqrt-h", "minimax(1)")][1]
    ok = bool(np.all(z <= 3.0)) and pair < min(res.ses[1], res.ses[2]) and dt < 60
    report(6, ok, f"means {np.round(res.means, 3).tolist()} (SE {np.round(res.ses, 3).tolist()}), "
                  f"|mean - reference| / SE = {np.round(z, 2).tolist()}, SE(minimax - sqrt) = {pair:.3f}, "
                  f"all pairwise diff SEs below individual SEs: {diff_ok}, {dt:.1f}s")


@pytest.mark.slow
def test_criterion_07_convergence(report):
    t0 = time.perf_counter()
    cfg = SimConfig(designs=({"family": "prop-h"},), mean={"template": [0.0, 1.0, 1.0], "calibrate_target": 1.0},
                    noise_variance=1.0, chunk_size=5000)
    rows = convergence_study(cfg, [50, 200, 800], replications=lambda n: int(1e5 * 50 / n))
    dt = time.perf_counter() - t0
    n = np.array([r["n"] for r in rows], float)
    gap = np.array([r["gap"] for r in rows])
    se = np.array([r["se"] for r in rows])
    decreasing = all(gap[i + 1] <= gap[i] + 2 * math.hypot(se[i], se[i + 1]) for i in range(len(gap) - 1))
    # weighted log-log fit of sqrt(n) * gap on n; delta-method standard errors for the logs
    y = np.log(np.sqrt(n) * gap)
    w = 1.0 / np.maximum(se / gap, 1e-12) ** 2
    X = np.column_stack([np.ones_like(n), np.log(n)])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    slope = float((cov @ X.T @ (w * y))[1])
    slope_se = math.sqrt(cov[1, 1])
    ok = decreasing and slope <= 0.1 + 2 * slope_se and dt < 300
    report(7, ok, f"n={n.astype(int).tolist()} R={[r['replications'] for r in rows]} "
                  f"gap={np.round(gap, 4).tolist()} (SE {np.round(se, 4).tolist()}), "
                  f"scaled-gap slope {slope:+.3f} (SE {slope_se:.3f}), decreasing={decreasing}, {dt:.0f}s")


def test_criterion_08_minimax_dominance(report):
    t0 = time.perf_counter()
    worst_margin, count = np.inf, 0
    for K in (1, 2, 3):
        ctx = monomial_context(K)
        fixed = [build_design(ctx, f) for f in ("uniform", "sqrt-h", "prop-h")]
        for s2 in (0.5, 1.0, 1.5, 2.0, 3.0, 10.0):
            mm = build_design(ctx, "minimax", s2)
            best = worst_case_risk(ctx, mm, s2)
            others = fixed + perturbed_designs(ctx, mm, count=20, seed=1000 * K + int(10 * s2))
            for d in others:
                worst_margin = min(worst_margin, worst_case_risk(ctx, d, s2) - best)
                count += 1
    dt = time.perf_counter() - t0
    ok = worst_margin >= -1e-8 and dt < 30
    report(8, ok, f"{count} comparisons, smallest margin {worst_margin:.3e}, {dt:.1f}s")


def test_criterion_09_structural_invariants(report):
    worst = {"mass": 0.0, "jump": 0.0, "ratio": 0.0, "sqrt": 0.0}
    monotone = True
    for K in (1, 2, 3):
        ctx = monomial_context(K)
        for s2 in (1.0, 1.7, 2.0, 3.0, 10.0):
            d = build_design(ctx, "minimax", s2)
            worst["mass"] = max(worst["mass"], abs(d.mass() - 1.0))
            for b in d.partition.boundary_points:
                worst["jump"] = max(worst["jump"], abs(d.density(b - 1e-12) - d.density(b + 1e-12)))
            for lo, hi in d.partition.B:
                xs = np.linspace(lo, hi, 101)
                r = ctx.h(xs) / d.density(xs)
                worst["ratio"] = max(worst["ratio"], float(np.max(np.abs(r * d.c - 1.0))))
        worst["sqrt"] = max(worst["sqrt"],
                            build_design(ctx, "minimax", "inf").sup_norm_distance(build_design(ctx, "sqrt-h")))
        probes = np.linspace(ctx.h_min, ctx.h_max, 1000)
        vals = np.array([f_value(ctx, h) for h in probes])
        monotone &= bool(np.all(np.diff(vals) >= -1e-12))
    ok = (worst["mass"] <= 1e-8 and worst["jump"] <= 1e-6 and worst["ratio"] <= 1e-6
          and worst["sqrt"] <= 1e-8 and monotone)
    report(9, ok, f"max |mass-1| {worst['mass']:.1e}, max boundary jump {worst['jump']:.1e}, "
                  f"max relative deviation of h/pi on B {worst['ratio']:.1e}, "
                  f"sup|minimax(inf) - sqrt| {worst['sqrt']:.1e}, f monotone {monotone}")


def test_criterion_10_estimator_invariants(report):
    ctx2 = monomial_context(2)
    ctx1, m1 = _mean(1)
    _, m2 = _mean(2)
    # uniform WLS vs OLS, bitwise
    d_uni = build_design(ctx2, "uniform")
    s = RngStream(101, (0,))
    xs = sample_predictors(d_uni, 500, s).xs
    data = Dataset(xs, simulate_responses(xs, m2, 1.0, s))
    same = np.array_equal(fit_wls(data, d_uni, ctx2, "untruncated").beta_tilde, fit_ols(data, ctx2).beta_tilde)
    # weighted scores, quadratic and cubic means, three designs, 1e5 draws
    worst_z = 0.0
    for ctx, m in ((ctx1, m1), (ctx2, m2)):
        beta = best_linear_coefficients(m, ctx)
        for fam, s2 in (("uniform", None), ("sqrt-h", None), ("minimax", 2.0)):
            d = build_design(ctx, fam, s2)
            st = RngStream(202, (ctx.k, len(fam)))
            x = sample_predictors(d, 100_000, st).xs
            sc = weighted_scores(x, simulate_responses(x, m, 1.0, st), d, ctx, beta)
            z = np.abs(sc.mean(axis=0)) / (sc.std(axis=0, ddof=1) / math.sqrt(len(sc)))
            worst_z = max(worst_z, float(z.max()))
    # ISE quadratic form vs independent quadrature
    rng = np.random.default_rng(5)
    t, w = gl_rule(-1, 1, 64)
    worst_ise = 0.0
    for _ in range(50):
        b1, b2 = rng.normal(size=3), rng.normal(size=3)
        oracle = float(np.sum(w * 0.5 * np.polynomial.polynomial.polyval(t, b1 - b2) ** 2))
        worst_ise = max(worst_ise, abs(integrated_squared_error(b1, ctx2, b2) - oracle))
    ok = same and worst_z < 5.0 and worst_ise < 1e-10
    report(10, ok, f"uniform WLS == OLS bitwise: {same}; max score |z| {worst_z:.2f} (< 5); "
                   f"max |ISE - quadrature| {worst_ise:.1e}")
