"""Scale functions of a phase-type spectrally negative Levy process.

For a rational Laplace exponent, 1 / (psi(theta) - s) is a proper rational
function with simple poles theta_i (the roots of psi = s), so

    W^{(s)}(x) = sum_i exp(theta_i x) / psi'(theta_i),   x >= 0.

Every derived object (integrals of W, the functions Z, the bivariate Z and
the shifted convolutions with W^{(q+r)}) is again a finite exponential sum
whose coefficients follow from partial-fraction identities; nothing on the
evaluation path uses quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, NearMultipleRoots, SingularResolvent
from .levy_model import LevyModel, laplace_exponent, laplace_exponent_derivative, phi, psi_numerator

ROOT_SEPARATION = 1e-8


def _expsum(coef, rates, x):
    """Re sum_k coef_k exp(rates_k x), vectorised over x."""
    x = np.asarray(x, dtype=float)
    out = (np.exp(np.multiply.outer(x, rates)) @ coef).real
    return out[()] if out.ndim == 0 else out


def _polish(model, s, theta, steps=50):
    for _ in range(steps):
        try:
            f = complex(laplace_exponent(model, theta)) - s
            d = complex(laplace_exponent_derivative(model, theta))
        except SingularResolvent:
            return theta, np.inf
        if d == 0:
            break
        delta = f / d
        theta = theta - delta
        if abs(delta) <= 1e-15 * max(1.0, abs(theta)):
            break
    try:
        res = abs(complex(laplace_exponent(model, theta)) - s)
    except SingularResolvent:
        return theta, np.inf
    # relative to the size of the terms cancelling in psi(theta) - s
    a = abs(theta)
    scale = 1.0 + s + a * abs(model.drift_c) + 0.5 * model.sigma**2 * a * a + model.jump_rate
    return theta, res / scale


@dataclass(frozen=True, eq=False)
class ScaleEngine:
    """Spectral data of W^{(s)}: roots of psi(theta) = s and residues 1/psi'(theta_i).

    ``roots[0]`` is Phi(s), the only root with positive real part.
    """

    level_s: float
    roots: np.ndarray
    weights: np.ndarray
    model: LevyModel

    @property
    def phi(self) -> float:
        return float(self.roots[0].real)

    def W(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, _expsum(self.weights, self.roots, np.maximum(x, 0.0)), 0.0)[()]

    def W_scaled(self, x):
        """exp(-Phi(s) x) W^{(s)}(x); finite for every x >= 0."""
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, _expsum(self.weights, self.roots - self.phi, np.maximum(x, 0.0)), 0.0)[()]

    def W_prime_right(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, _expsum(self.weights * self.roots, self.roots, np.maximum(x, 0.0)), 0.0)[()]

    def W_bar(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        val = (np.expm1(np.multiply.outer(xp, self.roots)) @ (self.weights / self.roots)).real
        return np.where(x > 0, val, 0.0)[()]

    def W_bar_bar(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        arg = np.multiply.outer(xp, self.roots)
        val = ((np.expm1(arg) - arg) @ (self.weights / self.roots**2)).real
        return np.where(x > 0, val, 0.0)[()]

    def Z(self, x):
        return (1.0 + self.level_s * self.W_bar(x))[()]

    def Z_bar(self, x):
        x = np.asarray(x, dtype=float)
        return (x + self.level_s * self.W_bar_bar(x))[()]

    def dump(self) -> str:
        lines = [f"# scale engine: s={self.level_s!r} phi={self.phi!r} n_roots={len(self.roots)}",
                 "# root_re root_im weight_re weight_im"]
        for th, w in zip(self.roots, self.weights):
            lines.append(f"{th.real:.17g} {th.imag:.17g} {w.real:.17g} {w.imag:.17g}")
        return "\n".join(lines) + "\n"


def _deflate(poly, root):
    """Divide out (theta - root), recursing from the constant term (stable for large |root|)."""
    p = np.asarray(poly, dtype=float)[::-1]
    q = np.empty(len(p) - 1)
    q[0] = -p[0] / root
    for k in range(1, len(q)):
        q[k] = (q[k - 1] - p[k]) / root
    return q[::-1]


def build_engine(model: LevyModel, s: float) -> ScaleEngine:
    if not s > 0:
        raise ValueError(f"scale engine level must be positive, got {s}")
    poly = psi_numerator(model, s)
    far = None
    if model.sigma > 0:
        if not model.sigma**2 > 2.0 * abs(model.drift_c) * 1e-150:
            raise ConvergenceFailure(f"sigma={model.sigma:.3g} is too small to resolve the root near -2c/sigma^2")
        # with small sigma one root sits near -2c/sigma^2, far outside the
        # range the companion matrix resolves: find it from the asymptote and
        # deflate it away before the eigenvalue step
        far, res = _polish(model, s, complex(-2.0 * model.drift_c / model.sigma**2 - 1.0 / model.sigma))
        bound = 1.0 + s + abs(model.drift_c) + model.jump_rate
        if model.has_jumps:
            bound += np.max(np.abs(np.diag(model.jump_dist.subgenerator)))
        if res <= 1e-10 and abs(far) > 1e4 * bound:
            poly = _deflate(poly, far.real)
        else:
            far = None
    roots = []

    def is_new(th):
        return all(abs(th - other) > 1e-9 * max(1.0, abs(th)) for other in roots)

    for raw in np.roots(poly):
        th, res = _polish(model, s, complex(raw))
        if not is_new(th):
            # either Newton escaped from a root next to a pole of psi, or two
            # roots nearly coincide; keep the unpolished value in the latter case
            th, res = _polish(model, s, complex(raw), steps=0)
        # common factors of numerator and det(theta I - T) are not poles
        if res <= 1e-10 and is_new(th):
            roots.append(th)
    if far is not None:
        roots.append(far)
    if not roots:
        raise ConvergenceFailure(f"no roots of psi = {s} found")
    roots = np.array(roots, dtype=complex)
    phi_s = phi(model, s)
    lead = int(np.argmin(np.abs(roots - phi_s)))
    if abs(roots[lead] - phi_s) > 1e-6 * (1.0 + phi_s):
        raise ConvergenceFailure(f"polynomial roots miss Phi({s}) = {phi_s}")
    rest = np.delete(roots, lead)
    rest = rest[np.lexsort((rest.imag, -rest.real))]
    roots = np.concatenate([[complex(phi_s, 0.0)], rest])
    if np.any(rest.real >= phi_s):
        raise ConvergenceFailure("found a root with real part >= Phi(s)")
    gaps = np.abs(roots[:, None] - roots[None, :]) + np.diag(np.full(len(roots), np.inf))
    if gaps.min() < ROOT_SEPARATION:
        raise NearMultipleRoots(f"roots of psi = {s} closer than {ROOT_SEPARATION}: min gap {gaps.min():.3e}")
    # snap conjugate partners so that sums are real to rounding
    for k, th in enumerate(roots):
        if abs(th.imag) < 1e-12 * max(1.0, abs(th)):
            roots[k] = th.real
    weights = 1.0 / np.asarray(laplace_exponent_derivative(model, roots), dtype=complex)
    engine = ScaleEngine(float(s), roots, weights, model)
    _check_partial_fractions(engine)
    return engine


def _check_partial_fractions(engine: ScaleEngine):
    """1/(psi - s) must equal sum_i w_i / (theta - theta_i); catches lost roots."""
    probe = engine.phi + 1.0 + np.array([0.0, 0.7j, 3.0])
    lhs = 1.0 / (np.asarray(laplace_exponent(engine.model, probe)) - engine.level_s)
    rhs = np.array([np.sum(engine.weights / (p - engine.roots)) for p in probe])
    err = np.max(np.abs(lhs - rhs) / np.abs(lhs))
    if err > 1e-8:
        roots = engine.roots
        gap = np.min(np.abs(roots[:, None] - roots[None, :]) + np.diag(np.full(len(roots), np.inf)))
        msg = f"partial-fraction check failed for s={engine.level_s}: rel err {err:.2e}"
        if gap < 1e-4:
            # residues of size 1/gap cancel against each other
            raise NearMultipleRoots(f"{msg}; closest roots {gap:.2e} apart")
        raise ConvergenceFailure(msg)
    # initial value theorem: W(0) = lim theta / (psi(theta) - s)
    model = engine.model
    w0 = 0.0 if model.sigma > 0 else 1.0 / model.drift_c
    total = np.sum(engine.weights)
    if abs(total - w0) > 1e-8 * max(1.0, float(np.sum(np.abs(engine.weights)))):
        raise ConvergenceFailure(f"lost a root for s={engine.level_s}: sum of residues {total.real:.3e}, expected {w0:.3e}")


@dataclass(frozen=True, eq=False)
class ScalePair:
    """Engines at levels q and q + r, the building blocks of the periodic problem."""

    engine_q: ScaleEngine
    engine_qr: ScaleEngine

    @property
    def q(self) -> float:
        return self.engine_q.level_s

    @property
    def r(self) -> float:
        return self.engine_qr.level_s - self.engine_q.level_s

    @property
    def phi_q(self) -> float:
        return self.engine_q.phi

    @property
    def phi_qr(self) -> float:
        return self.engine_qr.phi

    # -- Z^{(q)}(x, Phi(q+r)) -------------------------------------------------

    def Z_biv(self, x):
        """r int_0^inf exp(-Phi(q+r) z) W^{(q)}(z + x) dz, closed form."""
        e = self.engine_q
        coef = self.r * e.weights / (self.phi_qr - e.roots)
        x = np.asarray(x, dtype=float)
        pos = _expsum(coef, e.roots, np.maximum(x, 0.0))
        return np.where(x >= 0, pos, np.exp(self.phi_qr * np.minimum(x, 0.0)))[()]

    def Z_biv_scaled(self, x):
        """exp(-Phi(q) x) Z^{(q)}(x, Phi(q+r)) for x >= 0."""
        e = self.engine_q
        coef = self.r * e.weights / (self.phi_qr - e.roots)
        return _expsum(coef, e.roots - e.phi, np.maximum(np.asarray(x, dtype=float), 0.0))

    def Z_biv_integral_form(self, x):
        """exp(Phi(q+r) x) (1 - r int_0^x exp(-Phi(q+r) z) W^{(q)}(z) dz), integral done termwise."""
        e = self.engine_q
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        d = e.roots - self.phi_qr
        integral = (np.expm1(np.multiply.outer(xp, d)) @ (e.weights / d)).real
        return (np.exp(self.phi_qr * x) * (1.0 - self.r * np.where(x > 0, integral, 0.0)))[()]

    def Z_biv_prime(self, x):
        return (self.phi_qr * self.Z_biv(x) - self.r * self.engine_q.W(x))[()]

    # -- shifted convolutions W/Z/Zbar^{(q,r)}_{-b} ---------------------------

    def _conv_coef(self, b, scale):
        """c_i r sum_j scale_j a_j e^{theta_j b} / (rho_i - theta_j), one entry per (q+r)-root."""
        eq, ep = self.engine_q, self.engine_qr
        inner = scale * eq.weights * np.exp(eq.roots * b)
        K = self.r * (inner[None, :] / (ep.roots[:, None] - eq.roots[None, :])).sum(axis=1)
        return ep.weights * K

    def conv_W(self, b, y):
        eq = self.engine_q
        y = np.asarray(y, dtype=float)
        pos = _expsum(self._conv_coef(b, 1.0), self.engine_qr.roots, np.maximum(y, 0.0))
        return np.where(y > 0, pos, eq.W(y + b))[()]

    def conv_Z(self, b, y):
        eq = self.engine_q
        y = np.asarray(y, dtype=float)
        pos = _expsum(self._conv_coef(b, eq.level_s / eq.roots), self.engine_qr.roots, np.maximum(y, 0.0))
        return np.where(y > 0, pos, eq.Z(y + b))[()]

    def conv_Zbar(self, b, y):
        eq, ep = self.engine_q, self.engine_qr
        y = np.asarray(y, dtype=float)
        yp = np.maximum(y, 0.0)
        drift = eq.model.psi_prime_at_zero / eq.level_s
        pos = _expsum(self._conv_coef(b, eq.level_s / eq.roots**2), ep.roots, yp) - drift * (1.0 + self.r * ep.W_bar(yp))
        return np.where(y > 0, pos, eq.Z_bar(y + b))[()]

    def conv_W_prime_kernel(self, b, y):
        """int_0^y W^{(q+r)}(u) W^{(q)'}(y + b - u) du for y > 0 (zero for y <= 0)."""
        eq = self.engine_q
        y = np.asarray(y, dtype=float)
        yp = np.maximum(y, 0.0)
        pos = (_expsum(self._conv_coef(b, eq.roots), self.engine_qr.roots, yp) - eq.W_prime_right(yp + b)) / self.r
        return np.where(y > 0, pos, 0.0)[()]


def build_pair(model: LevyModel, q: float, r: float) -> ScalePair:
    if not (q > 0 and r > 0):
        raise ValueError(f"need q > 0 and r > 0, got q={q}, r={r}")
    return ScalePair(build_engine(model, q), build_engine(model, q + r))
