import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodic_bailout.errors import ConvergenceFailure, NearMultipleRoots
from periodic_bailout.levy_model import LevyModel, PhaseTypeDistribution, laplace_exponent
from periodic_bailout.scale_functions import build_engine, build_pair

from conftest import quad, rel, talbot_W

Q, R = 0.05, 0.5


@pytest.fixture(scope="module")
def pairs(case1, case2):
    return {"case1": case1.pair, "case2": case2.pair}


def test_pure_drift_scale_function():
    e = build_engine(LevyModel(1.0), Q)
    x = np.array([0.0, 0.3, 2.0, 7.5])
    assert np.allclose(e.W(x), np.exp(Q * x), rtol=1e-13)


def test_brownian_with_drift_closed_form():
    c, sig = 0.5, 1.0
    e = build_engine(LevyModel(c, sig), Q)
    d = math.sqrt(c * c + 2 * Q * sig**2)
    for x in (0.3, 1.0, 3.0):
        exact = 2 / d * math.exp(-c * x / sig**2) * math.sinh(x * d / sig**2)
        assert rel(e.W(x), exact) <= 1e-12


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_negative_half_line(pairs, case):
    for e in (pairs[case].engine_q, pairs[case].engine_qr):
        assert e.W(-1.0) == 0.0
        assert e.W_bar(-1.0) == 0.0 and e.W_bar_bar(-1.0) == 0.0
        assert e.Z(-3.0) == 1.0
        assert e.Z_bar(-3.0) == -3.0


def test_W_against_talbot_inversion(case1):
    e = case1.pair.engine_q
    for x in (0.5, 1.0, 2.0):
        assert rel(e.W(x), talbot_W(case1.model, Q, x)) <= 1e-8


def test_W_against_talbot_inversion_bounded_variation(case2):
    e = case2.pair.engine_q
    for x in (0.5, 1.0):
        assert rel(e.W(x), talbot_W(case2.model, Q, x)) <= 1e-8


def test_root_counts_and_structure(pairs, folded):
    m = folded.num_phases
    assert len(pairs["case1"].engine_q.roots) == m + 2
    assert len(pairs["case2"].engine_q.roots) == m + 1
    for pair in pairs.values():
        for e in (pair.engine_q, pair.engine_qr):
            roots = e.roots
            assert roots[0].imag == 0 and e.phi > 0
            assert np.all(roots[1:].real < e.phi)
            # closed under conjugation
            for th in roots:
                assert np.min(np.abs(roots - np.conj(th))) <= 1e-10 * max(1.0, abs(th))


def test_expansion_is_real(pairs):
    x = np.linspace(0, 10, 41)
    for pair in pairs.values():
        e = pair.engine_q
        full = np.exp(np.multiply.outer(x, e.roots)) @ e.weights
        assert np.all(np.abs(full.imag) <= 1e-10 * np.abs(full))


def test_W_at_zero(pairs, case2):
    assert abs(pairs["case1"].engine_q.W(0.0)) <= 1e-12
    assert pairs["case2"].engine_q.W(0.0) == pytest.approx(1 / case2.model.drift_c, rel=1e-12)


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_W_positive_increasing(pairs, case):
    x = np.linspace(1e-3, 10, 500)
    for e in (pairs[case].engine_q, pairs[case].engine_qr):
        w = e.W(x)
        assert np.all(w > 0) and np.all(np.diff(w) > 0)


def test_Z_from_W_bar(pairs):
    x = np.linspace(-1, 6, 57)
    for pair in pairs.values():
        e = pair.engine_q
        assert np.allclose(e.Z(x), 1 + Q * e.W_bar(x), rtol=1e-14)


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_integrals_against_quadrature(pairs, case):
    e = pairs[case].engine_q
    assert rel(e.W_bar(2.0), quad(e.W, 0, 2)) <= 1e-9
    assert rel(e.W_bar_bar(2.0), quad(e.W_bar, 0, 2)) <= 1e-9
    assert rel(e.Z_bar(1.5), quad(e.Z, 0, 1.5)) <= 1e-9


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_W_prime_right_finite_difference(pairs, case):
    e = pairs[case].engine_q
    for x in (0.3, 1.0, 4.0):
        h = 1e-5
        fd = (e.W(x + h) - e.W(x - h)) / (2 * h)
        assert rel(e.W_prime_right(x), fd) <= 1e-7


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_Z_biv_values(pairs, case):
    p = pairs[case]
    assert p.Z_biv(0.0) == pytest.approx(1.0, abs=1e-12)
    assert p.Z_biv(-1.0) == pytest.approx(math.exp(-p.phi_qr), rel=1e-14)
    xs = np.linspace(-5, 10, 61)
    assert np.all(p.Z_biv(xs) > 0)


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_Z_biv_against_defining_integral(pairs, case):
    p = pairs[case]
    e = p.engine_q
    gap = p.phi_qr - p.phi_q
    upper = 80 / gap
    oracle = R * quad(lambda z: math.exp(-p.phi_qr * z) * float(e.W(z + 1.0)), 0, upper)
    assert rel(p.Z_biv(1.0), oracle) <= 1e-8


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_normalisation(pairs, case):
    p = pairs[case]
    e = p.engine_q
    upper = 80 / (p.phi_qr - p.phi_q)
    val = quad(lambda z: math.exp(-p.phi_qr * z) * float(e.W(z)), 0, upper)
    assert rel(val, 1 / R) <= 1e-8


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_Z_biv_two_representations(pairs, case):
    p = pairs[case]
    x = np.linspace(-3, 3, 61)
    assert np.max(np.abs(p.Z_biv(x) - p.Z_biv_integral_form(x))) <= 1e-9


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_Z_biv_prime(pairs, case):
    p = pairs[case]
    h = 1e-5
    fd = (p.Z_biv(1 + h) - p.Z_biv(1 - h)) / (2 * h)
    assert abs(p.Z_biv_prime(1.0) - fd) <= 1e-6
    assert p.Z_biv_prime(1e-12) == pytest.approx(p.phi_qr - R * p.engine_q.W(0.0), abs=1e-9)


def test_Z_biv_pure_drift():
    p = build_pair(LevyModel(1.0), Q, R)
    # W = e^{qx}, Phi(q+r) = q+r, hence Z(x, Phi(q+r)) = e^{qx}
    assert p.Z_biv(1.0) == pytest.approx(math.exp(Q), rel=1e-13)
    assert p.Z_biv_prime(1.0) == pytest.approx(Q * math.exp(Q), rel=1e-12)


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_resolvent_identity(pairs, case):
    p = pairs[case]
    eq, ep = p.engine_q, p.engine_qr
    for x in (0.5, 1.5, 3.0):
        conv = quad(lambda u: float(ep.W(u) * eq.W(x - u)), 0, x)
        lhs = ep.W(x) - eq.W(x)
        assert abs(lhs - R * conv) <= 1e-8 * max(1.0, abs(lhs))


def test_convolutions_at_zero_barrier(pairs):
    y = np.linspace(0, 5, 51)
    p = pairs["case1"]
    assert np.max(np.abs(p.conv_W(0.0, y) - p.engine_qr.W(y))) <= 1e-8
    assert np.max(np.abs(p.conv_Z(0.0, y) - p.engine_qr.Z(y))) <= 1e-8
    assert np.max(np.abs(p.conv_Zbar(0.0, y) - p.engine_qr.Z_bar(y))) <= 1e-8
    p = pairs["case2"]
    for f, g in ((p.conv_W, p.engine_qr.W), (p.conv_Z, p.engine_qr.Z)):
        a, b = f(0.0, y), g(y)
        assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))) <= 1e-12


def test_convolutions_below_barrier(pairs):
    p = pairs["case1"]
    assert p.conv_Z(1.0, -0.5) == pytest.approx(p.engine_q.Z(0.5), rel=1e-15)
    assert p.conv_W(1.0, -0.5) == pytest.approx(p.engine_q.W(0.5), rel=1e-15)
    assert p.conv_Zbar(1.0, -0.5) == pytest.approx(p.engine_q.Z_bar(0.5), rel=1e-15)


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_convolutions_against_quadrature(pairs, case):
    p = pairs[case]
    eq, ep = p.engine_q, p.engine_qr
    b, y = 1.0, 0.7
    for conv, base in ((p.conv_W, eq.W), (p.conv_Z, eq.Z), (p.conv_Zbar, eq.Z_bar)):
        oracle = base(y + b) + R * quad(lambda u: float(ep.W(y - u) * base(u + b)), 0, y)
        assert abs(conv(b, y) - oracle) <= 1e-8 * max(1.0, abs(oracle))


def test_conv_W_prime_kernel(pairs):
    p = pairs["case1"]
    eq, ep = p.engine_q, p.engine_qr
    b, y = 1.0, 0.7
    oracle = quad(lambda u: float(ep.W(u) * eq.W_prime_right(y + b - u)), 0, y)
    assert abs(p.conv_W_prime_kernel(b, y) - oracle) <= 1e-9


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_log_derivative_decreases_to_phi(pairs, case):
    e = pairs[case].engine_q
    x = np.linspace(0.05, 40, 400)
    ratio = e.W_prime_right(x) / e.W(x)
    assert np.all(np.diff(ratio) <= 1e-12)
    assert ratio[-1] == pytest.approx(e.phi, rel=1e-6)


def test_scaled_variants_finite_for_large_x(pairs):
    p = pairs["case2"]
    x = 400.0
    assert np.isfinite(p.engine_qr.W_scaled(x))
    assert np.isfinite(p.Z_biv_scaled(x))
    assert p.engine_q.W_scaled(3.0) == pytest.approx(p.engine_q.W(3.0) * math.exp(-p.phi_q * 3.0), rel=1e-13)


def test_near_multiple_roots_refused():
    # Erlang(2) jumps: at this jump rate two negative roots of psi = q merge into a double root
    erlang = PhaseTypeDistribution(np.array([1.0, 0.0]), np.array([[-1.0, 1.0], [0.0, -1.0]]))
    with pytest.raises(NearMultipleRoots):
        build_engine(LevyModel(0.0, 1.0, 5.463979060372266, erlang), Q)
    e = build_engine(LevyModel(0.0, 1.0, 5.0, erlang), Q)
    assert len(e.roots) == 4


@pytest.mark.parametrize("sigma", [1e-4, 1e-8, 1e-13])
def test_small_sigma_keeps_far_root(folded, sigma):
    e = build_engine(LevyModel(1.0, sigma, 1.0, folded), Q)
    assert len(e.roots) == folded.num_phases + 2
    assert abs(e.W(0.0)) <= 1e-10
    # away from the boundary layer of width ~sigma^2 the bounded-variation function is recovered
    bv = build_engine(LevyModel(1.0, 0.0, 1.0, folded), Q)
    assert e.W(1.0) == pytest.approx(bv.W(1.0), rel=1e-6)


def test_unresolvable_sigma_refused(folded):
    with pytest.raises(ConvergenceFailure):
        build_engine(LevyModel(1.0, 1e-200, 1.0, folded), Q)


def test_dump_lists_roots(pairs):
    text = pairs["case1"].engine_q.dump()
    assert text.startswith("# scale engine")
    assert len(text.strip().splitlines()) == 2 + len(pairs["case1"].engine_q.roots)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.1, 3.0), sigma=st.one_of(st.just(0.0), st.floats(1e-12, 1.5)), lam=st.floats(0.1, 3.0),
       s=st.floats(0.01, 5.0))
def test_partial_fractions_hypothesis(folded, c, sigma, lam, s):
    model = LevyModel(c, sigma, lam, folded)
    try:
        e = build_engine(model, s)
    except NearMultipleRoots:
        return
    theta = e.phi + 1.5
    lhs = 1.0 / (laplace_exponent(model, theta) - s)
    assert rel(float(np.sum(e.weights / (theta - e.roots)).real), lhs) <= 1e-9
    xs = np.linspace(0.01, 3, 20)
    assert np.all(np.diff(e.W(xs)) > 0)
