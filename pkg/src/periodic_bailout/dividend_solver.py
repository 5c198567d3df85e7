"""Periodic-classical barrier strategies: value functions, optimal barrier, verification.

Under a barrier b the surplus is pushed down to b at the arrival times of a
Poisson(r) clock and reflected at 0 from below by capital injections costing
beta per unit.  Its value v_b is piecewise an exponential sum:

* on [0, b] it is a combination of exp(theta_j x) over the q-roots theta_j;
* above b it is affine plus a combination of exp(rho_i (x - b)) over the
  (q+r)-roots rho_i.

The coefficient of the growing mode exp(Phi(q+r)(x - b)) vanishes exactly
for every b (that is what the constant C_b is for), and the growing mode
exp(Phi(q) x) on [0, b] is carried relative to exp(Phi(q) b).  Keeping both
cancellations out of floating point lets the same code run from r = 1e-4 to
r = 50 and for barriers far in the tail.  The literal scale-function
formulas are available through ``method="direct"`` for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import BracketFailure, DegenerateDenominator, QuadratureFailure, ViolationFound
from .levy_model import LevyModel
from .scale_functions import ScalePair, build_pair


@dataclass(frozen=True, eq=False)
class BarrierProblem:
    model: LevyModel
    q: float
    r: float
    beta: float
    pair: ScalePair = field(init=False, repr=False)

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"discount rate q must be positive, got {self.q}")
        if not self.r > 0:
            raise ValueError(f"dividend rate r must be positive, got {self.r}")
        if not self.beta > 1:
            raise ValueError(f"injection cost beta must exceed 1, got {self.beta}")
        object.__setattr__(self, "pair", build_pair(self.model, self.q, self.r))

    @property
    def phi_q(self) -> float:
        return self.pair.phi_q

    @property
    def phi_qr(self) -> float:
        return self.pair.phi_qr

    @property
    def drift(self) -> float:
        return self.model.psi_prime_at_zero


@dataclass(frozen=True)
class BarrierSolution:
    b_star: float
    C_at_b_star: float
    g_at_zero: float
    converged: bool


class _Piecewise:
    """A function equal to

        Re[H0 e^{Phi (x-b)} + sum_j h_j e^{theta_j x}]          0 <= x <= b
        const + slope (x-b) + Re sum_i E_i e^{rho_i (x-b)}      x > b
        left_value + left_slope x                               x < 0

    where theta_j, rho_i exclude the leading roots Phi(q), Phi(q+r).
    """

    def __init__(self, pair: ScalePair, b, H0, h, source_slope, slope, const, left_value, left_slope):
        eq, ep = pair.engine_q, pair.engine_qr
        self.b = float(b)
        self.phi = eq.phi
        self.theta = eq.roots[1:]
        self.H0 = H0
        self.h = h
        H = np.concatenate([[H0], h * np.exp(self.theta * self.b)])
        self.f_b = f_b = float(H.sum().real)
        r = pair.r
        E = ep.weights * r * (
            (H[None, :] / (ep.roots[:, None] - eq.roots[None, :])).sum(axis=1)
            - f_b / ep.roots - source_slope / ep.roots**2
        )
        scale = np.abs(ep.weights[0]) * r * (
            np.sum(np.abs(H / (ep.roots[0] - eq.roots))) + abs(f_b) / ep.phi + abs(source_slope) / ep.phi**2
        )
        # relative size of the coefficient of the exploding mode; zero up to rounding
        self.explosive_residual = float(abs(E[0]) / scale) if scale > 0 else 0.0
        self.rho = ep.roots[1:]
        self.E = E[1:]
        self.slope = slope
        self.const = const
        self.left_slope = left_slope
        self.left_value = self.below(0.0) if left_value is None else left_value

    def below(self, x, order=0):
        x = np.asarray(x, dtype=float)
        lead = self.H0 * self.phi**order * np.exp(self.phi * (x - self.b))
        rest = np.exp(np.multiply.outer(x, self.theta)) @ (self.h * self.theta**order)
        return (lead + rest).real

    def above(self, y, order=0):
        y = np.asarray(y, dtype=float)
        out = (np.exp(np.multiply.outer(y, self.rho)) @ (self.E * self.rho**order)).real
        if order == 0:
            out = out + self.const + self.slope * y
        elif order == 1:
            out = out + self.slope
        return out

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        xb = np.clip(x, 0.0, self.b)
        ya = np.maximum(x - self.b, 0.0)
        if order == 0:
            left = self.left_value + self.left_slope * x
        elif order == 1:
            left = np.full(x.shape, self.left_slope)
        else:
            left = np.zeros(x.shape)
        # x == b belongs to the upper piece (right derivatives); x == 0 to [0, b] when b > 0
        upper = x > self.b if order == 0 else (x >= self.b) & ~((x == 0) & (self.b > 0))
        out = np.where(x < 0, left, np.where(upper, self.above(ya, order), self.below(xb, order)))
        return out[()]


def _scaled_pieces(problem: BarrierProblem, b: float):
    pair = problem.pair
    e = pair.engine_q
    th, a = e.roots, e.weights
    phi, phi_p = pair.phi_q, pair.phi_qr
    decay = np.exp((th - phi) * b)
    zbiv_n = (pair.r * a / (phi_p - th) * decay).sum().real
    zbivp_n = (pair.r * a * th / (phi_p - th) * decay).sum().real
    Z_n = (problem.q * a / th * decay).sum().real
    return th, a, phi, phi_p, decay, zbiv_n, zbivp_n, Z_n


def C(problem: BarrierProblem, b: float) -> float:
    """C_b = r (beta Z(b) - 1) / (q Phi(q+r) Z(b, Phi(q+r))) + beta / Phi(q+r)."""
    _, _, phi, phi_p, _, zbiv_n, _, Z_n = _scaled_pieces(problem, b)
    beta, q, r = problem.beta, problem.q, problem.r
    return float(r * (beta * Z_n - np.exp(-phi * b)) / (q * phi_p * zbiv_n) + beta / phi_p)


def value_function(problem: BarrierProblem, b: float) -> _Piecewise:
    """v_b as a callable; ``vf(x, order)`` gives v_b, v_b' or the right second derivative."""
    if b < 0:
        raise ValueError("barrier must be nonnegative")
    th, a, phi, phi_p, decay, zbiv_n, _, _ = _scaled_pieces(problem, b)
    beta, q, r = problem.beta, problem.q, problem.r
    C_b = C(problem, b)
    h = q * a[1:] / th[1:] * (beta / th[1:] - C_b)
    # leading coefficient e^{Phi b} q a_0 / Phi (beta/Phi - C_b), free of cancellation
    bracket = (phi_p - phi) / (phi_p - th[1:]) - phi / th[1:]
    num = beta * q * r * np.sum(a[1:] * np.exp(th[1:] * b) * bracket) + r * phi
    H0 = a[0] * num / (phi**2 * phi_p * zbiv_n)
    p = q + r
    # dividends accrue one-for-one above b, hence the unit source slope
    vf = _Piecewise(problem.pair, b, H0, h, source_slope=1.0, slope=r / p, const=None,
                    left_value=None, left_slope=beta)
    vf.const = r / p * vf.f_b + r * problem.drift / p**2
    vf.C_b = C_b
    return vf


def _ruin_function(problem: BarrierProblem, b: float) -> _Piecewise:
    th, a, phi, phi_p, decay, zbiv_n, zbivp_n, _ = _scaled_pieces(problem, b)
    q, r = problem.q, problem.r
    kappa = q * zbiv_n / zbivp_n
    g_coef = a[1:] * (q / th[1:] - kappa)
    num = np.sum(a[1:] * np.exp(th[1:] * b) * (th[1:] - phi) / (phi_p - th[1:]))
    G0 = a[0] * q * num / (phi * zbivp_n / r)
    rf = _Piecewise(problem.pair, b, G0, g_coef, source_slope=0.0, slope=0.0, const=None,
                    left_value=1.0, left_slope=0.0)
    rf.const = r / (q + r) * rf.f_b
    return rf


# -- the function g and the optimal barrier -------------------------------------

def g(problem: BarrierProblem, b: float) -> float:
    """g(b) = v_b'(b) - 1, evaluated from the stable expansion of v_b on [0, b]."""
    vf = value_function(problem, b)
    return float(vf.below(b, order=1) - 1.0)


def g_forms(problem: BarrierProblem, b: float) -> tuple[float, float]:
    """Both textbook expressions of g, evaluated literally (cancellation-prone for large b)."""
    pair, beta, q, r = problem.pair, problem.beta, problem.q, problem.r
    e = pair.engine_q
    W, Z = e.W(b), e.Z(b)
    zb, zbp, phi_p = pair.Z_biv(b), pair.Z_biv_prime(b), pair.phi_qr
    first = (1 - r * W / (phi_p * zb)) * (beta * Z - 1) - beta * q / phi_p * W
    second = zbp / (phi_p * zb) * (beta * Z - 1) - beta * q / phi_p * W
    return float(first), float(second)


def g_probabilistic(problem: BarrierProblem, b: float) -> float:
    """g through the Laplace transform of the ruin time started at the barrier."""
    e = problem.pair.engine_q
    E0 = ruin_transform(problem, b, b)
    W_n = e.W_scaled(b)
    Z_n = _scaled_pieces(problem, b)[7]
    denom = Z_n - E0 * np.exp(-e.phi * b)
    if W_n == 0 or denom <= 1e-14 * max(Z_n, 1.0):
        raise DegenerateDenominator(f"Z(b) - E[e^(-q tau)] vanishes at b={b}")
    return float(problem.q / problem.phi_qr * (problem.beta * E0 - 1) / denom * W_n)


def optimal_barrier(problem: BarrierProblem, b_tol: float = 1e-12, g_tol: float = 1e-10,
                    b_max: float = 1e6) -> BarrierSolution:
    """b* = inf{b >= 0 : g(b) <= 0}, by bisection (g has at most one root)."""
    g0 = g(problem, 0.0)
    if g0 <= 0:
        return BarrierSolution(0.0, C(problem, 0.0), g0, True)
    lo, hi = 0.0, 1.0
    while g(problem, hi) >= 0:
        lo, hi = hi, 2.0 * hi
        if hi > b_max:
            raise BracketFailure(f"g stays positive up to b={b_max}")
    while hi - lo > b_tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(problem, mid) > 0:
            lo = mid
        else:
            hi = mid
    b_star = lo if abs(g(problem, lo)) <= abs(g(problem, hi)) else hi
    e = problem.pair.engine_q
    c_star = float((problem.beta * e.Z(b_star) - 1) / (problem.q * e.W(b_star)))
    return BarrierSolution(b_star, c_star, g0, abs(g(problem, b_star)) <= g_tol)


# -- value function and derivatives ---------------------------------------------

def value(problem: BarrierProblem, b: float, x, method: str = "stable"):
    if method == "direct":
        return _value_direct(problem, b, x)
    return value_function(problem, b)(x)


def derivative(problem: BarrierProblem, b: float, x, method: str = "stable"):
    """v_b'(x); at x = 0 the right derivative."""
    if method == "direct":
        return _derivative_direct(problem, b, x)
    return value_function(problem, b)(x, order=1)


def second_derivative_right(problem: BarrierProblem, b: float, x, method: str = "stable"):
    if method == "direct":
        return _second_direct(problem, b, x)
    return value_function(problem, b)(x, order=2)


def ruin_transform(problem: BarrierProblem, b: float, x, method: str = "stable"):
    """E_{x-b}[exp(-q tau)] for the process Parisian-reflected at 0 and killed below -b."""
    if method == "direct":
        return _ruin_direct(problem, b, x)
    return _ruin_function(problem, b)(x)


def _value_direct(problem, b, x):
    pair, beta, q, r = problem.pair, problem.beta, problem.q, problem.r
    eq, ep = pair.engine_q, pair.engine_qr
    x = np.asarray(x, dtype=float)
    C_b = C(problem, b)

    def formula(x):
        y = x - b
        wb = ep.W_bar(y)
        return (-C_b * (pair.conv_Z(b, y) - r * eq.Z(b) * wb) - r * ep.W_bar_bar(y)
                + beta * (pair.conv_Zbar(b, y) + problem.drift / q - r * eq.Z_bar(b) * wb))

    v0 = formula(0.0)
    return np.where(x < 0, beta * x + v0, formula(np.maximum(x, 0.0)))[()]


def _derivative_direct(problem, b, x):
    pair, beta, q, r = problem.pair, problem.beta, problem.q, problem.r
    x = np.asarray(x, dtype=float)
    y = np.maximum(x, 0.0) - b
    val = -q * C(problem, b) * pair.conv_W(b, y) - r * pair.engine_qr.W_bar(y) + beta * pair.conv_Z(b, y)
    return np.where(x < 0, beta, val)[()]


def _second_direct(problem, b, x):
    pair, beta, q, r = problem.pair, problem.beta, problem.q, problem.r
    eq, ep = pair.engine_q, pair.engine_qr
    x = np.asarray(x, dtype=float)
    xp = np.maximum(x, 0.0)
    y = xp - b
    Wp = np.where(y >= 0, ep.W(np.maximum(y, 0.0)), 0.0)
    inj = eq.W_prime_right(xp) + r * Wp * eq.W(b) + r * pair.conv_W_prime_kernel(b, y)
    val = -q * C(problem, b) * inj - r * Wp + beta * (q * pair.conv_W(b, y) + r * Wp * eq.Z(b))
    return np.where(x < 0, 0.0, val)[()]


def _ruin_direct(problem, b, x):
    pair, q, r = problem.pair, problem.q, problem.r
    eq, ep = pair.engine_q, pair.engine_qr
    x = np.asarray(x, dtype=float)
    y = x - b
    kappa = q * pair.Z_biv(b) / pair.Z_biv_prime(b)
    wb = ep.W_bar(y)
    return (pair.conv_Z(b, y) - r * eq.Z(b) * wb - kappa * (pair.conv_W(b, y) - r * eq.W(b) * wb))[()]


# -- generator and verification --------------------------------------------------

def generator_apply(problem: BarrierProblem, f: Callable, x: float, f_prime: Callable,
                    f_second: Optional[Callable] = None, tol: float = 1e-8) -> float:
    """L f(x) = c f'(x) + sigma^2 f''(x) / 2 + jump_rate int (f(x - z) - f(x)) density(z) dz.

    The jump integral is split at z = x, where f may switch to its extension
    below 0.
    """
    model = problem.model
    out = model.drift_c * float(f_prime(x))
    if model.sigma > 0:
        if f_second is None:
            raise ValueError("second derivative needed for a model with a Brownian part")
        out += 0.5 * model.sigma**2 * float(f_second(x))
    if model.has_jumps:
        dens = model.jump_dist.density
        fx = float(f(x))
        integrand = lambda z: (float(f(x - z)) - fx) * dens(z)
        total = 0.0
        for lo, hi in ((0.0, x), (x, np.inf)):
            if hi <= lo:
                continue
            val, err = integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=tol, limit=200)
            if not err <= tol * max(1.0, abs(val)):
                raise QuadratureFailure(f"jump integral on [{lo}, {hi}] at x={x}: error {err:.2e}")
            total += val
        out += model.jump_rate * total
    return float(out)


def default_vi_grid(b_star: float, n: int = 400, x_max: float = 20.0, eps: float = 1e-4) -> np.ndarray:
    """Log-spaced points avoiding 0 and b*."""
    if b_star > 2 * eps:
        n_low = max(n * int(np.log(b_star / eps) > 0) // 2, 1)
        low = np.geomspace(eps, b_star - eps, n_low)
        high = b_star + np.geomspace(eps, x_max - b_star, n - n_low)
        return np.concatenate([low, high])
    return b_star + np.geomspace(eps, x_max - b_star, n)


@dataclass
class VIRow:
    x: float
    v: float
    v_prime: float
    generator: float
    lemma_residual: float
    max_numeric: float
    max_closed_form: float
    vi_value: float
    tolerance: float
    ok: bool


@dataclass
class VIReport:
    b: float
    rows: list
    min_value: float
    value_at_zero: float
    passed: bool

    def worst(self) -> VIRow:
        return max(self.rows, key=lambda row: max(row.vi_value, abs(row.lemma_residual)) / row.tolerance)


def _numeric_max(vf, x: float, n: int = 257) -> float:
    """max over 0 <= l <= x of l + v(x - l) - v(x): grid search, then bounded refinement."""
    ls = np.linspace(0.0, x, n)
    vals = ls + vf(x - ls) - vf(x)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo, hi = ls[max(k - 1, 0)], ls[min(k + 1, n - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda l: -(l + float(vf(x - l))), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        best = max(best, -float(res.fun) - float(vf(x)))
    return best


def vi_check(problem: BarrierProblem, solution: BarrierSolution, x_grid: Optional[Sequence[float]] = None,
             rel_tol: float = 1e-4, quad_tol: float = 1e-8, strict: bool = True) -> VIReport:
    """Check that v_b solves the variational inequalities at b = solution.b_star.

    For each x: the generator identity of v_b on (0, b) and (b, inf), the
    first inequality with the inner maximum computed numerically and compared
    with its closed form, and the bound v_b'(x) <= beta.  The infimum of v_b
    over the grid must be attained at 0.
    """
    b = solution.b_star
    vf = value_function(problem, b)
    grid = default_vi_grid(b) if x_grid is None else np.asarray(x_grid, dtype=float)
    v_b = float(vf(b))
    rows = []
    f = lambda y: vf(y)
    f1 = lambda y: vf(y, 1)
    f2 = lambda y: vf(y, 2)
    for x in grid:
        x = float(x)
        v = float(vf(x))
        tol = rel_tol * (1 + abs(v))
        gen = generator_apply(problem, f, x, f1, f2, tol=quad_tol) - problem.q * v
        closed = 0.0 if x <= b else x - b + v_b - v
        lemma_res = gen + problem.r * closed
        m_num = _numeric_max(vf, x)
        vi_val = gen + problem.r * m_num
        vp = float(vf(x, 1))
        ok = abs(lemma_res) <= tol and vi_val <= tol and m_num <= closed + tol and vp <= problem.beta + tol
        rows.append(VIRow(x, v, vp, gen, lemma_res, m_num, closed, vi_val, tol, ok))
    values = np.array([row.v for row in rows])
    v0 = float(vf(0.0))
    inf_ok = bool(values.min() >= v0 - rel_tol * (1 + abs(v0))) if len(values) else True
    report = VIReport(b, rows, float(values.min()) if len(values) else v0, v0,
                      all(row.ok for row in rows) and inf_ok)
    if strict and not report.passed:
        if not inf_ok:
            raise ViolationFound(0.0, values.min() - v0, "value function dips below v(0)")
        bad = next(row for row in rows if not row.ok)
        raise ViolationFound(bad.x, max(bad.vi_value, abs(bad.lemma_residual)))
    return report


@dataclass
class DominanceTable:
    b_star: float
    b_list: list
    x_grid: np.ndarray
    values: np.ndarray          # shape (len(b_list), len(x_grid))
    optimal: np.ndarray
    tol: float

    @property
    def margins(self) -> np.ndarray:
        return self.optimal[None, :] - self.values

    @property
    def dominates(self) -> bool:
        return bool(np.all(self.margins >= -self.tol))


def dominance_scan(problem: BarrierProblem, b_list: Sequence[float], x_grid: Sequence[float],
                   b_star: Optional[float] = None, tol: float = 1e-9) -> DominanceTable:
    if b_star is None:
        b_star = optimal_barrier(problem).b_star
    x_grid = np.asarray(x_grid, dtype=float)
    opt = np.asarray(value(problem, b_star, x_grid))
    vals = np.array([value(problem, b, x_grid) for b in b_list])
    return DominanceTable(b_star, list(b_list), x_grid, vals, opt, tol)
