"""Reference nonlinearities, spectral maps and the 1D front profile.

The nonlinearities are polynomials in the intensity ``s = |U|^2`` of degree at
most three.  The down nonlinearity carries the bifurcation parameter additively,
``g_minus(s; mu) = P_minus(s) + mu``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import solve_banded

from .grid import Grid1D

MU_STAR = 0.1
MU_WINDOW = 0.25


class HypothesisError(ValueError):
    """A model or spectral map violates the structural hypotheses."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge."""


def _poly(coeffs):
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size > 4:
        raise ValueError("nonlinearities are polynomials of degree <= 3")
    return c


@dataclass(frozen=True)
class ModelSpec:
    """Polynomial nonlinearities ``g_plus(s)`` and ``g_minus(s; mu)``.

    Coefficients are in ascending order.  ``a_minus``/``a_plus`` are the lower
    bounds required of ``g_minus``/``g_plus`` on the positive half line.
    """

    g_plus_coeffs: tuple
    g_minus_coeffs: tuple
    mu: float
    epsilon: float
    a_minus: float
    a_plus: float

    def g_plus(self, s, deriv=0):
        c = _poly(self.g_plus_coeffs)
        return npoly.polyval(s, npoly.polyder(c, deriv) if deriv else c)

    def g_minus(self, s, deriv=0, mu=None):
        c = _poly(self.g_minus_coeffs).copy()
        if deriv == 0:
            c[0] += self.mu if mu is None else mu
            return npoly.polyval(s, c)
        return npoly.polyval(s, npoly.polyder(c, deriv))

    @property
    def c_inf(self):
        """Far-field potential of the linearized up operator, g+(1) + 2 g+'(1)."""
        return float(self.g_plus(1.0) + 2.0 * self.g_plus(1.0, 1))

    @property
    def g_minus_inf(self):
        return float(self.g_minus(1.0))

    @property
    def in_validated_window(self):
        return abs(self.mu) <= MU_STAR

    def with_mu(self, mu):
        return ModelSpec(self.g_plus_coeffs, self.g_minus_coeffs, float(mu),
                         self.epsilon, self.a_minus, self.a_plus)

    def check_invariants(self, s_max=4.0, n_samples=401, mu_star=MU_STAR):
        """Sample the lower bounds and far-field positivity; raise on violation."""
        s = np.linspace(0.0, s_max, n_samples)
        for mu in np.linspace(-mu_star, mu_star, 21):
            if np.min(self.g_minus(s, mu=mu)) <= self.a_minus:
                raise HypothesisError(f"inf g_minus <= a_minus at mu={mu:g}")
            if self.g_minus(1.0, mu=mu) <= 0:
                raise HypothesisError(f"g_minus(1) <= 0 at mu={mu:g}")
        if np.min(self.g_plus(s)) <= self.a_plus:
            raise HypothesisError("inf g_plus <= a_plus")
        if self.c_inf <= 0:
            raise HypothesisError("far-field potential c_inf <= 0")


def build_reference_model(mu, epsilon=0.1):
    """Reference model ``g+(s) = s - 1``, ``g-(s; mu) = s - 1/2 + mu``.

    The front is ``tanh(z/sqrt(2))`` and the ground state of the down operator
    sits exactly at ``mu`` with eigenfunction proportional to ``sech(z/sqrt(2))``.
    """
    if not abs(mu) <= MU_WINDOW:
        raise HypothesisError(f"mu={mu} outside the window |mu| <= {MU_WINDOW}")
    if not 0.0 < epsilon <= 0.5:
        raise ValueError("epsilon must lie in (0, 0.5]")
    mu_star = max(MU_STAR, abs(mu))
    # inf g- = -1/2 + mu is attained at s = 0, so the bound must clear -1/2 - mu_star
    model = ModelSpec((-1.0, 1.0), (-0.5, 1.0), float(mu), float(epsilon),
                      a_minus=-0.55 - mu_star, a_plus=-1.05)
    model.check_invariants(mu_star=mu_star)
    return model


# ---------------------------------------------------------------------------
# spectral maps

SPECTRAL_KINDS = ("constant", "logistic", "shifted-rational")


@dataclass(frozen=True)
class SpectralMap:
    """Bounded nondecreasing map ``S`` applied to the down operator.

    ``pole_list`` holds the singularities of the analytic extension nearest the
    real axis; for the logistic kind these are ``(2k+1)*pi*i`` for a few ``k``.
    """

    kind: str
    beta_minus: float
    beta_plus: float
    a_minus: float = -0.55
    pole_list: tuple = field(default=())

    @property
    def is_constant(self):
        return self.kind == "constant"

    @property
    def limit_at_infinity(self):
        return self.beta_plus

    def __call__(self, s):
        s = np.asarray(s)
        bm, bp = self.beta_minus, self.beta_plus
        if self.kind == "constant":
            return bm + 0.0 * s
        if self.kind == "logistic":
            # 1/(1+exp(-s)) evaluated without overflow for real arguments
            if np.iscomplexobj(s):
                return bm + (bp - bm) / (1.0 + np.exp(-s))
            return bm + (bp - bm) * _expit(s)
        x = s - self.a_minus
        return bm + (bp - bm) * x / (x + 1.0)

    def tail(self, s):
        """``S(s) - S(infinity)``; decays as ``s -> +inf`` for every kind."""
        s = np.asarray(s)
        bm, bp = self.beta_minus, self.beta_plus
        if self.kind == "constant":
            return 0.0 * s
        if self.kind == "logistic":
            if np.iscomplexobj(s):
                return -(bp - bm) / (1.0 + np.exp(s))
            return -(bp - bm) * _expit(-s)
        return -(bp - bm) / (s - self.a_minus + 1.0)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        bm, bp = self.beta_minus, self.beta_plus
        if self.kind == "constant":
            return 0.0 * s
        if self.kind == "logistic":
            e = _expit(s)
            return (bp - bm) * e * (1.0 - e)
        return (bp - bm) / (s - self.a_minus + 1.0) ** 2

    def scaled(self, c):
        """The map ``c*S`` (same kind, bounds scaled)."""
        return make_spectral_map(self.kind, c * self.beta_minus, c * self.beta_plus,
                                 self.a_minus)

    def check_invariants(self, n_samples=10_000, span=100.0):
        s = np.linspace(self.a_minus, self.a_minus + span, n_samples)
        v = self(s)
        tol = 1e-14 * self.beta_plus
        if v.min() < self.beta_minus - tol or v.max() > self.beta_plus + tol:
            raise HypothesisError("spectral map leaves [beta_minus, beta_plus]")
        if np.min(self.derivative(s)) < 0:
            raise HypothesisError("spectral map is decreasing somewhere")


def _expit(s):
    from scipy.special import expit
    return expit(s)


def make_spectral_map(kind, beta_minus, beta_plus, a_minus=-0.55):
    """Construct a :class:`SpectralMap` and validate its range and monotonicity."""
    if kind not in SPECTRAL_KINDS:
        raise ValueError(f"unknown spectral map kind {kind!r}")
    if not 0.0 < beta_minus <= beta_plus:
        raise HypothesisError("need 0 < beta_minus <= beta_plus")
    if kind == "constant":
        if beta_minus != beta_plus:
            raise HypothesisError("constant map requires beta_minus == beta_plus")
        poles = ()
    elif kind == "logistic":
        poles = tuple(complex(0.0, (2 * k + 1) * math.pi) for k in range(-3, 3))
    else:
        pole = a_minus - 1.0
        if pole >= a_minus:
            raise HypothesisError("shifted-rational pole inside [a_minus, inf)")
        poles = (complex(pole, 0.0),)
    smap = SpectralMap(kind, float(beta_minus), float(beta_plus), float(a_minus), poles)
    smap.check_invariants()
    return smap


# ---------------------------------------------------------------------------
# front profile


@dataclass(frozen=True)
class FrontProfile:
    grid: Grid1D
    values: np.ndarray
    derivative: np.ndarray
    residual_norm: float
    iterations: int = 0

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["z", "phi", "dphi"])
            for row in zip(self.grid.nodes, self.values, self.derivative):
                w.writerow([repr(float(x)) for x in row])
        return path


def front_residual(model, grid, phi):
    """Max-norm of ``-phi'' + g+(phi^2) phi`` at interior nodes (Dirichlet ends)."""
    lap = _apply_neg_d2(phi, grid.h, -1.0, 1.0)
    r = lap + model.g_plus(phi ** 2) * phi
    return float(np.max(np.abs(r[1:-1])))


def _apply_neg_d2(u, h, left, right):
    """Fourth-order ``-u''`` with constant extension beyond the two ends."""
    ext = np.concatenate(([left, left], u, [right, right]))
    return (ext[:-4] - 16 * ext[1:-3] + 30 * ext[2:-2] - 16 * ext[3:-1] + ext[4:]) / (12 * h * h)


def front_solve(model, grid, tol=1e-11, max_iter=50):
    """Newton solve of ``(-d^2/dz^2 + g+(phi^2)) phi = 0`` with ``phi(+-L) = +-1``.

    The derivative is taken from the first integral
    ``phi'^2 = int_1^{phi^2} g+(u) du``, which holds pointwise for the exact
    front and keeps ``phi'`` in the discrete kernel of the linearized operator
    to truncation accuracy.
    """
    if grid.half_width < 15 or grid.n_nodes < 1024:
        raise ValueError("front_solve needs L_z >= 15 and N_z >= 1024")
    z, h, n = grid.nodes, grid.h, grid.n_nodes
    phi = np.tanh(z / math.sqrt(2.0))
    phi[0], phi[-1] = -1.0, 1.0
    m = n - 2
    c = np.array([1.0, -16.0, 30.0, -16.0, 1.0]) / (12 * h * h)
    it = 0
    for it in range(1, max_iter + 1):
        u = phi[1:-1]
        r = _apply_neg_d2(phi, h, -1.0, 1.0)[1:-1] + model.g_plus(u ** 2) * u
        jac_diag = model.g_plus(u ** 2) + 2.0 * model.g_plus(u ** 2, 1) * u ** 2
        ab = np.zeros((5, m))
        ab[0, 2:] = c[0]
        ab[1, 1:] = c[1]
        ab[2, :] = c[2] + jac_diag
        ab[3, :-1] = c[3]
        ab[4, :-2] = c[4]
        du = solve_banded((2, 2), ab, -r)
        # the Jacobian is nearly singular along the even translation mode phi';
        # the exact update is odd, so discard the roundoff-amplified even part
        du = 0.5 * (du - du[::-1])
        phi[1:-1] += du
        if np.max(np.abs(du)) < tol:
            break
    else:
        raise ConvergenceError("front Newton iteration did not converge")
    res = front_residual(model, grid, phi)
    if res > 1e-9:
        raise ConvergenceError(f"front residual {res:.2e} exceeds 1e-9")
    # first integral expanded about s = 1 to avoid cancellation in the tails
    prim = np.polynomial.Polynomial(npoly.polyint(_poly(model.g_plus_coeffs)))
    shifted = prim(np.polynomial.Polynomial([1.0, 1.0])) - prim(1.0)
    x = -(1.0 - phi) * (1.0 + phi)
    dphi = np.sqrt(np.clip(shifted(x), 0.0, None))
    return FrontProfile(grid, phi, dphi, res, it)
