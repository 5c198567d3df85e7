import mpmath
import numpy as np
import pytest
from scipy import integrate

from periodic_bailout.dividend_solver import BarrierProblem, optimal_barrier
from periodic_bailout.levy_model import LevyModel, case_preset, model_from_config, phase_type_preset


def problem_for(name, **override):
    cfg = case_preset(name)
    cfg.update(override)
    return BarrierProblem(model_from_config(cfg), cfg["q"], cfg["r"], cfg["beta"])


@pytest.fixture(scope="session")
def case1():
    return problem_for("case1")


@pytest.fixture(scope="session")
def case2():
    return problem_for("case2")


@pytest.fixture(scope="session")
def sol1(case1):
    return optimal_barrier(case1)


@pytest.fixture(scope="session")
def sol2(case2):
    return optimal_barrier(case2)


@pytest.fixture(scope="session")
def folded():
    return phase_type_preset("folded_normal_6")


@pytest.fixture(scope="session")
def pure_drift():
    return LevyModel(1.0)


# -- oracles shared across test modules ----------------------------------------

def psi_mp(model, p):
    """Laplace exponent in mpmath arithmetic (complex argument allowed)."""
    p = mpmath.mpmathify(p)
    out = model.drift_c * p + model.sigma**2 * p**2 / 2
    if model.has_jumps:
        ph = model.jump_dist
        m = ph.num_phases
        A = mpmath.matrix(m, m)
        for i in range(m):
            for j in range(m):
                A[i, j] = (p if i == j else 0) - ph.subgenerator[i, j]
        sol = mpmath.lu_solve(A, mpmath.matrix(list(ph.exit_vector)))
        lz = mpmath.fsum(ph.initial_law[i] * sol[i] for i in range(m))
        out += model.jump_rate * (lz - 1)
    return out


def talbot_W(model, s, x, dps=40):
    """W^{(s)}(x) by numerical inversion of 1/(psi(theta) - s) along a Talbot contour."""
    with mpmath.workdps(dps):
        return float(mpmath.invertlaplace(lambda p: 1 / (psi_mp(model, p) - s), x, method="talbot"))


def quad(f, a, b, **kw):
    kw.setdefault("epsabs", 1e-13)
    kw.setdefault("epsrel", 1e-12)
    kw.setdefault("limit", 400)
    val, _ = integrate.quad(f, a, b, **kw)
    return val


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def log_grid(lo, hi, n):
    return np.geomspace(lo, hi, n)
