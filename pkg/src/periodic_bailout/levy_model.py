"""Spectrally negative Levy processes with phase-type jumps.

The uncontrolled surplus is

    X(t) = X(0) + c t + sigma B(t) - sum_{n <= N(t)} Z_n,

with N a Poisson process of rate ``jump_rate`` and Z_n i.i.d. phase-type.
Its Laplace exponent ``psi(theta) = log E[exp(theta X(1))]`` is rational in
theta, which is what makes closed-form scale functions possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConvergenceFailure,
    InfiniteMean,
    InvalidPhaseType,
    ModelError,
    MonotonePaths,
    SingularResolvent,
    UnsupportedLevyMeasure,
)

_PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PhaseTypeDistribution:
    """Absorption time of a transient Markov chain.

    ``initial_law`` is the row vector alpha, ``subgenerator`` the transient
    block T; the exit-rate vector is ``t = -T 1``.
    """

    initial_law: np.ndarray
    subgenerator: np.ndarray
    exit_vector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.initial_law, dtype=float))
        T = np.atleast_2d(np.asarray(self.subgenerator, dtype=float))
        m = alpha.shape[0]
        if alpha.ndim != 1 or T.shape != (m, m) or m == 0:
            raise InvalidPhaseType(f"shape mismatch: initial_law {alpha.shape}, subgenerator {T.shape}")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(T))):
            raise InvalidPhaseType("non-finite phase-type parameters")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > _PROB_TOL:
            raise InvalidPhaseType("initial_law must be a probability vector")
        diag = np.diag(T)
        off = T - np.diag(diag)
        if np.any(diag >= 0):
            raise InvalidPhaseType("subgenerator diagonal must be strictly negative")
        if np.any(off < 0):
            raise InvalidPhaseType("subgenerator off-diagonal entries must be nonnegative")
        exit_vec = -T.sum(axis=1)
        if np.any(exit_vec < -1e-12 * np.abs(diag)):
            raise InvalidPhaseType("subgenerator row sums must be nonpositive")
        exit_vec = np.maximum(exit_vec, 0.0)
        if np.max(np.linalg.eigvals(T).real) >= 0:
            raise InvalidPhaseType("subgenerator must have eigenvalues with negative real part")
        alpha.setflags(write=False)
        T.setflags(write=False)
        exit_vec.setflags(write=False)
        object.__setattr__(self, "initial_law", alpha)
        object.__setattr__(self, "subgenerator", T)
        object.__setattr__(self, "exit_vector", exit_vec)

    @property
    def num_phases(self) -> int:
        return self.initial_law.shape[0]

    def moment(self, k: int) -> float:
        """E[Z^k] = k! alpha (-T)^{-k} 1."""
        v = np.ones(self.num_phases)
        for _ in range(k):
            v = np.linalg.solve(-self.subgenerator, v)
        return math.factorial(k) * float(self.initial_law @ v)

    @property
    def mean(self) -> float:
        return self.moment(1)

    def laplace_transform(self, theta):
        """E[exp(-theta Z)] = alpha (theta I - T)^{-1} t, for real or complex theta."""
        return self._resolvent_form(theta, power=1)

    def laplace_transform_derivative(self, theta):
        return -self._resolvent_form(theta, power=2)

    def _resolvent_form(self, theta, power):
        theta = np.asarray(theta)
        scalar = theta.ndim == 0
        th = np.atleast_1d(theta).astype(complex if np.iscomplexobj(theta) else float)
        m = self.num_phases
        A = th[:, None, None] * np.eye(m) - self.subgenerator
        rhs = np.broadcast_to(self.exit_vector, (th.size, m))[..., None]
        try:
            v = np.linalg.solve(A, rhs)
            if power == 2:
                v = np.linalg.solve(A, v)
        except np.linalg.LinAlgError as exc:
            raise SingularResolvent(f"theta coincides with an eigenvalue of the subgenerator: {theta}") from exc
        out = v[..., 0] @ self.initial_law
        return out[0] if scalar else out.reshape(theta.shape)

    def density(self, z):
        """alpha exp(T z) t for z >= 0, zero for z < 0."""
        z = np.asarray(z, dtype=float)
        flat = np.atleast_1d(z).ravel()
        out = np.zeros(flat.shape)
        for k, zk in enumerate(flat):
            if zk >= 0:
                out[k] = self.initial_law @ expm(self.subgenerator * zk) @ self.exit_vector
        return out[0] if z.ndim == 0 else out.reshape(z.shape)

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Exact draws by running the underlying Markov chain."""
        m = self.num_phases
        rates = -np.diag(self.subgenerator)
        jump = np.zeros((m, m + 1))
        jump[:, :m] = self.subgenerator / rates[:, None]
        np.fill_diagonal(jump[:, :m], 0.0)
        jump[:, m] = self.exit_vector / rates
        out = np.empty(size)
        for n in range(size):
            state, total = rng.choice(m, p=self.initial_law), 0.0
            while state < m:
                total += rng.exponential(1.0 / rates[state])
                state = rng.choice(m + 1, p=jump[state] / jump[state].sum())
            out[n] = total
        return out


class VariationKind(str, Enum):
    BOUNDED = "bounded"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class ModelDiagnostics:
    variation_kind: VariationKind
    psi_prime_at_zero: float
    mean_jump: float


@dataclass(frozen=True, eq=False)
class LevyModel:
    """X(t) = c t + sigma B(t) - compound Poisson(jump_rate, jump_dist)."""

    drift_c: float
    sigma: float = 0.0
    jump_rate: float = 0.0
    jump_dist: Optional[PhaseTypeDistribution] = None

    def __post_init__(self):
        validate_model(self)

    @property
    def has_jumps(self) -> bool:
        return self.jump_rate > 0

    @property
    def bounded_variation(self) -> bool:
        return self.sigma == 0

    @property
    def mean_jump(self) -> float:
        return self.jump_dist.mean if self.has_jumps else 0.0

    @property
    def psi_prime_at_zero(self) -> float:
        """E[X(1)] = c - jump_rate E[Z]."""
        return self.drift_c - self.jump_rate * self.mean_jump

    def psi(self, theta):
        return laplace_exponent(self, theta)

    def psi_prime(self, theta):
        return laplace_exponent_derivative(self, theta)

    def describe(self) -> dict:
        d = {"drift_c": self.drift_c, "sigma": self.sigma, "jump_rate": self.jump_rate}
        if self.jump_dist is not None:
            d["phase_type"] = {
                "initial_law": self.jump_dist.initial_law.tolist(),
                "subgenerator": self.jump_dist.subgenerator.tolist(),
            }
        return d


def validate_model(model: LevyModel) -> ModelDiagnostics:
    c, sigma, lam = model.drift_c, model.sigma, model.jump_rate
    if not all(math.isfinite(v) for v in (c, sigma, lam)):
        raise ModelError("model parameters must be finite")
    if sigma < 0:
        raise ModelError("sigma must be nonnegative")
    if lam < 0:
        raise ModelError("jump_rate must be nonnegative")
    if lam > 0 and not isinstance(model.jump_dist, PhaseTypeDistribution):
        raise UnsupportedLevyMeasure(
            "jumps must be phase-type (finite activity, rational Laplace exponent); "
            f"got {type(model.jump_dist).__name__}"
        )
    if sigma == 0 and c <= 0:
        raise MonotonePaths(f"with sigma = 0 the drift must be positive, got drift_c={c}")
    mean_jump = model.jump_dist.mean if lam > 0 else 0.0
    if not math.isfinite(mean_jump):
        raise InfiniteMean("jump size has infinite mean")
    kind = VariationKind.UNBOUNDED if sigma > 0 else VariationKind.BOUNDED
    return ModelDiagnostics(kind, c - lam * mean_jump, mean_jump)


def laplace_exponent(model: LevyModel, theta):
    """psi(theta) = c theta + sigma^2 theta^2 / 2 + jump_rate (E[e^{-theta Z}] - 1).

    Accepts real or complex scalars/arrays; the complex continuation is the
    same rational function.
    """
    theta = np.asarray(theta)
    out = model.drift_c * theta + 0.5 * model.sigma**2 * theta**2
    if model.has_jumps:
        out = out + model.jump_rate * (model.jump_dist.laplace_transform(theta) - 1.0)
    return out[()] if out.ndim == 0 else out


def laplace_exponent_derivative(model: LevyModel, theta):
    theta = np.asarray(theta)
    out = model.drift_c + model.sigma**2 * theta
    if model.has_jumps:
        out = out + model.jump_rate * model.jump_dist.laplace_transform_derivative(theta)
    return out[()] if np.ndim(out) == 0 else out


def phi(model: LevyModel, s: float, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Right inverse of psi: the largest root of psi(theta) = s, for s > 0.

    Newton's method started to the right of the root converges monotonically
    on the convex psi; any step leaving the current bracket is replaced by
    bisection.
    """
    if not s > 0:
        raise ValueError(f"phi requires s > 0, got {s}")
    psi = lambda th: float(laplace_exponent(model, th)) - s
    lo, hi = 0.0, 1.0
    while psi(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ConvergenceFailure(f"could not bracket phi({s})")
    theta, f = hi, psi(hi)
    for _ in range(max_iter):
        if abs(f) <= tol * max(1.0, s):
            return theta
        if f > 0:
            hi = theta
        else:
            lo = theta
        step = theta - f / float(laplace_exponent_derivative(model, theta))
        theta = step if lo < step < hi else 0.5 * (lo + hi)
        if theta in (lo, hi):
            return theta
        f = psi(theta)
    if hi - lo <= 8 * np.spacing(hi):
        return theta
    raise ConvergenceFailure(f"phi({s}) did not converge (bracket [{lo}, {hi}])")


def psi_numerator(model: LevyModel, s: float) -> np.ndarray:
    """Polynomial P with psi(theta) - s = P(theta) / det(theta I - T).

    By the matrix determinant lemma det(theta I - T - t alpha) =
    det(theta I - T) (1 - E[e^{-theta Z}]), so
    P = (c theta + sigma^2 theta^2 / 2 - s) det(theta I - T) - jump_rate det(theta I - T - t alpha).
    Coefficients are returned highest degree first.
    """
    base = np.array([0.5 * model.sigma**2, model.drift_c, -s])
    if model.sigma == 0:
        base = base[1:]
    if not model.has_jumps:
        return base
    ph = model.jump_dist
    q_poly = np.poly(ph.subgenerator)
    q_tilde = np.poly(ph.subgenerator + np.outer(ph.exit_vector, ph.initial_law))
    return np.polysub(np.polymul(base, q_poly), model.jump_rate * q_tilde)


@lru_cache(maxsize=None)
def load_presets() -> dict:
    text = resources.files("periodic_bailout").joinpath("data/presets.json").read_text()
    return json.loads(text)


def phase_type_preset(name: str) -> PhaseTypeDistribution:
    table = load_presets()["phase_type"]
    if name not in table:
        raise KeyError(f"unknown phase-type preset {name!r}; available: {sorted(table)}")
    entry = table[name]
    return PhaseTypeDistribution(np.array(entry["initial_law"]), np.array(entry["subgenerator"]))


def model_from_config(cfg: dict) -> LevyModel:
    """Build a model from the config mapping documented in the README."""
    if "levy_measure" in cfg:
        raise UnsupportedLevyMeasure("general Levy measures are not supported; give a phase_type jump law")
    jump_rate = float(cfg.get("jump_rate", 0.0))
    ph = cfg.get("phase_type")
    if isinstance(ph, str):
        dist = phase_type_preset(ph)
    elif isinstance(ph, dict):
        dist = PhaseTypeDistribution(np.array(ph["initial_law"], dtype=float), np.array(ph["subgenerator"], dtype=float))
    elif ph is None:
        dist = None
    else:
        raise UnsupportedLevyMeasure(f"cannot interpret phase_type entry {ph!r}")
    return LevyModel(float(cfg["drift_c"]), float(cfg.get("sigma", 0.0)), jump_rate, dist)


def case_preset(name: str) -> dict:
    cases = load_presets()["cases"]
    if name not in cases:
        raise KeyError(f"unknown case preset {name!r}; available: {sorted(cases)}")
    return dict(cases[name])
