"""Acceptance criteria: one printed PASS/FAIL line per criterion, with runtime."""

import os
import time

import numpy as np
import pytest

from periodic_bailout.dividend_solver import (BarrierProblem, default_vi_grid, derivative, dominance_scan, g,
                                              optimal_barrier, ruin_transform, second_derivative_right, value,
                                              vi_check)
from periodic_bailout.levy_model import laplace_exponent
from periodic_bailout.cli import DEFAULT_BETA_GRID, DEFAULT_R_GRID
from periodic_bailout.simulator import SimConfig, estimate_value

from conftest import problem_for, quad


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed, budget):
        in_time = elapsed < budget
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {status}  {detail}  runtime {elapsed:.2f}s (budget {budget:g}s)")
        assert ok, detail
        assert in_time, f"runtime {elapsed:.2f}s exceeds {budget}s"
    return emit


def _laplace_by_quadrature(engine, theta):
    """int_0^inf e^{-theta x} W(x) dx: quadrature on [0, X] plus the exact exponential tail."""
    phi = engine.phi
    X = 40.0 / (theta - phi)
    head = quad(lambda x: float(engine.W_scaled(x)) * np.exp((phi - theta) * x), 0.0, X)
    tail = np.sum(engine.weights * np.exp((engine.roots - theta) * X) / (theta - engine.roots)).real
    return head + tail


def test_criterion_01_laplace_round_trip(report):
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("case1", "case2"):
        p = problem_for(name)
        for engine in (p.pair.engine_q, p.pair.engine_qr):
            for d in np.linspace(0.1, 5.0, 10):
                theta = engine.phi + d
                exact = 1.0 / (laplace_exponent(p.model, theta) - engine.level_s)
                worst = max(worst, abs(_laplace_by_quadrature(engine, theta) - exact) / abs(exact))
    report(1, worst <= 1e-6, f"max relative Laplace error {worst:.2e} (tol 1e-6)", time.perf_counter() - t0, 5)


def test_criterion_02_zero_barrier_convolution_identity(report):
    t0 = time.perf_counter()
    x = np.linspace(0.0, 5.0, 501)
    details, ok = [], True
    for name in ("case1", "case2"):
        pair = problem_for(name).pair
        eqr = pair.engine_qr
        dw = np.max(np.abs(pair.conv_W(0.0, x) - eqr.W(x)))
        dz = np.max(np.abs(pair.conv_Z(0.0, x) - eqr.Z(x)))
        scale = max(np.max(np.abs(eqr.W(x))), np.max(np.abs(eqr.Z(x))))
        if name == "case1":
            ok &= dw <= 1e-8 and dz <= 1e-8
            details.append(f"case1 abs W {dw:.1e} Z {dz:.1e} (tol 1e-8)")
        else:
            # W^{(q+r)}(5) is about 4e10 here: one float64 ulp exceeds 1e-8, so compare relative to magnitude
            ok &= dw <= 1e-8 * scale and dz <= 1e-8 * scale
            details.append(f"case2 abs W {dw:.1e} Z {dz:.1e} at magnitude {scale:.1e} (rel {max(dw, dz) / scale:.1e})")
    report(2, bool(ok), "; ".join(details), time.perf_counter() - t0, 1)


def test_criterion_03_case1_barrier(report):
    t0 = time.perf_counter()
    p = problem_for("case1")
    bs = np.linspace(0.0, 20.0, 2001)[1:]
    signs = np.sign([g(p, b) for b in bs])
    changes = int(np.count_nonzero(np.diff(signs[signs != 0])))
    sol = optimal_barrier(p)
    gb = abs(g(p, sol.b_star))
    slope = abs(float(derivative(p, sol.b_star, sol.b_star)) - 1.0)
    ok = changes == 1 and sol.b_star > 0 and gb <= 1e-10 and slope <= 1e-10
    report(3, ok, f"sign changes {changes}, b*={sol.b_star:.10f}, |g(b*)|={gb:.1e}, |v'(b*)-1|={slope:.1e}",
           time.perf_counter() - t0, 1)


def test_criterion_04_case2_zero_barrier(report):
    t0 = time.perf_counter()
    p = problem_for("case2")
    c = p.model.drift_c
    criterion = p.beta - 1 - (p.r * (p.beta - 1) + p.q * p.beta) / (c * p.phi_qr)
    sol = optimal_barrier(p)
    x = np.linspace(0.01, 20.0, 400)
    curvature = float(np.max(second_derivative_right(p, 0.0, x)))
    limit = abs(float(derivative(p, 0.0, 100.0)) - p.r / (p.r + p.q))
    ok = criterion <= 0 and sol.b_star == 0.0 and curvature <= 1e-9 and limit <= 1e-3
    report(4, ok, f"criterion {criterion:.6f} <= 0, b*={sol.b_star}, max v0''={curvature:.2e}, "
                  f"|v0'(100)-r/(r+q)|={limit:.1e}", time.perf_counter() - t0, 1)


def test_criterion_05_derivative_bounds(report):
    t0 = time.perf_counter()
    ok, details = True, []
    for name in ("case1", "case2"):
        p = problem_for(name)
        b = optimal_barrier(p).b_star
        worst = 0.0
        if b > 0:
            low = np.linspace(0.0, b, 402)[1:-1]
            d = np.asarray(derivative(p, b, low))
            worst = max(worst, np.max(1 - d), np.max(d - p.beta))
            ok &= bool(np.all(np.diff(d) <= 1e-9))
        high = b + np.linspace(0.0, 20.0, 401)[1:]
        d = np.asarray(derivative(p, b, high))
        worst = max(worst, np.max(-d), np.max(d - 1))
        if b > 0:
            ok &= bool(np.all(np.diff(d) <= 1e-9))
        ok &= worst <= 1e-9
        details.append(f"{name} worst bound excess {worst:.1e}")
    report(5, bool(ok), "; ".join(details) + " (tol 1e-9), v' non-increasing", time.perf_counter() - t0, 2)


def test_criterion_06_ruin_identity(report):
    t0 = time.perf_counter()
    p = problem_for("case1")
    b = optimal_barrier(p).b_star
    x = np.linspace(0.0, 10.0, 1001)[1:]
    err = float(np.max(np.abs(p.beta * np.asarray(ruin_transform(p, b, x)) - np.asarray(derivative(p, b, x)))))
    report(6, err <= 1e-8, f"sup |beta E - v'| = {err:.1e} (tol 1e-8)", time.perf_counter() - t0, 2)


def test_criterion_07_variational_inequalities(report):
    t0 = time.perf_counter()
    details, ok = [], True
    for name in ("case1", "case2"):
        p = problem_for(name)
        sol = optimal_barrier(p)
        rep = vi_check(p, sol, default_vi_grid(sol.b_star, n=200), quad_tol=1e-6, strict=False)
        w = rep.worst()
        ok &= rep.passed and len(rep.rows) == 200
        details.append(f"{name} worst residual {max(abs(w.lemma_residual), w.vi_value):.1e} at x={w.x:.3g}")
    p = problem_for("case1")
    sol = optimal_barrier(p)
    wrong = type(sol)(sol.b_star + 0.5, sol.C_at_b_star, sol.g_at_zero, sol.converged)
    neg = vi_check(p, wrong, default_vi_grid(wrong.b_star, n=200), quad_tol=1e-6, strict=False)
    ok &= not neg.passed
    details.append(f"b*+0.5 violation detected: {not neg.passed}")
    report(7, bool(ok), "; ".join(details), time.perf_counter() - t0, 60)


def test_criterion_08_monte_carlo(report):
    t0 = time.perf_counter()
    cfg = SimConfig(time_step=1e-3, n_paths=100_000, discount_cutoff=1e-4, seed=2024, workers=os.cpu_count() or 1)
    ok, details = True, []
    for name in ("case1", "case2"):
        p = problem_for(name)
        b = optimal_barrier(p).b_star
        for x0 in (0.0, 1.0, 2.0):
            est = estimate_value(p, b, x0, cfg)
            v = float(value(p, b, x0))
            tol = max(3 * est.std_error, 0.01 * abs(v))
            ok &= abs(est.mean - v) <= tol
            details.append(f"{name} x={x0:g}: {est.mean:.4f}+-{est.std_error:.4f} vs {v:.4f}")
    report(8, bool(ok), "; ".join(details), time.perf_counter() - t0, 600)


def test_criterion_09_dominance(report):
    t0 = time.perf_counter()
    x = np.linspace(0.0, 10.0, 401)
    p1 = problem_for("case1")
    b1 = optimal_barrier(p1).b_star
    t1 = dominance_scan(p1, [0.0, b1 / 2, 1.5 * b1], x, b_star=b1)
    p2 = problem_for("case2")
    t2 = dominance_scan(p2, [0.5, 1.0, 1.5], x)
    ok = t1.dominates and t2.dominates
    report(9, ok, f"min margin case1 {t1.margins.min():.2e}, case2 {t2.margins.min():.2e} (tol -1e-9)",
           time.perf_counter() - t0, 5)


def _sweep(p, param, grid, x):
    bs, vs = [], []
    for val in grid:
        q = BarrierProblem(p.model, p.q, val if param == "r" else p.r, val if param == "beta" else p.beta)
        b = optimal_barrier(q).b_star
        bs.append(b)
        vs.append(np.asarray(value(q, b, x)))
    return np.array(bs), np.array(vs)


def test_criterion_10_sweeps(report):
    t0 = time.perf_counter()
    x = np.linspace(0.0, 10.0, 21)
    ok, details = True, []
    for name in ("case1", "case2"):
        p = problem_for(name)
        bs, vs = _sweep(p, "beta", DEFAULT_BETA_GRID, x)
        beta_ok = bool(np.all(np.diff(bs) >= 0) and np.all(np.diff(vs, axis=0) <= 1e-9))
        br, vr = _sweep(p, "r", DEFAULT_R_GRID, x)
        r_ok = bool(np.all(np.diff(br) >= 0) and np.all(np.diff(vr, axis=0) >= -1e-9))
        ok &= beta_ok and r_ok
        details.append(f"{name} beta({len(DEFAULT_BETA_GRID)}) {beta_ok} r({len(DEFAULT_R_GRID)}) {r_ok} "
                       f"b* in [{bs.min():.3f}, {bs.max():.3f}]")
    report(10, bool(ok), "; ".join(details), time.perf_counter() - t0, 120)


def test_criterion_11_deep_barrier_limit(report):
    t0 = time.perf_counter()
    p = problem_for("case1")
    B = 1.0
    prev = g(p, B)
    while True:
        B *= 2
        cur = g(p, B)
        if abs(cur - prev) < 1e-4:
            break
        prev = cur
    target = -p.phi_q / p.phi_qr
    err = abs(cur - target)
    report(11, err <= 0.01, f"B={B:g}, g(B)={cur:.6f}, -Phi(q)/Phi(q+r)={target:.6f}, diff {err:.1e}",
           time.perf_counter() - t0, 1)
