"""Inner-expansion quantities for the curvature-driven motion of the front.

Given the 1D operators ``C``, ``D`` and ``S(D)`` this module computes the
leading curvature coefficient ``alpha1``, the first and second correction
profiles, the Willmore coefficient ``nu`` and the resulting normal velocity

    V = -alpha1 kappa + eps^2 (nu lap_s kappa + alpha3 kappa^3).

``alpha3`` is a caller-supplied constant (default 0).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .grid import Grid1D
from .model import ConvergenceError, FrontProfile, ModelSpec, SpectralMap
from .operators1d import (OperatorMatrix, _full_band, _lowest_eigenvalue, default_contour,
                          pinned_inverse)
from .spectrum1d import BlockOperator, KernelPair


class SolvabilityError(RuntimeError):
    """The right-hand side is not orthogonal to the adjoint kernel."""


class SignViolation(RuntimeError):
    """A coefficient has the wrong sign inside the validated window."""


# ---------------------------------------------------------------------------
# small helpers


def ddz(u, h):
    """Fourth-order central first derivative with zero extension beyond the ends."""
    ext = np.concatenate(([0.0, 0.0], u, [0.0, 0.0]))
    return (ext[:-4] - 8 * ext[1:-3] + 8 * ext[3:-1] - ext[4:]) / (12 * h)


def ddz_matrix(n, h):
    c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    out = np.zeros((n, n))
    for off, v in zip(range(-2, 3), c):
        if v:
            out += np.diag(np.full(n - abs(off), v), off)
    return out


def odd_part(u):
    return 0.5 * (u - u[::-1])


def even_part(u):
    return 0.5 * (u + u[::-1])


def parity_defect(u, parity):
    """Max-norm of the component with the wrong parity, relative to max|u|."""
    scale = max(np.max(np.abs(u)), 1e-300)
    bad = even_part(u) if parity == "odd" else odd_part(u)
    return float(np.max(np.abs(bad)) / scale)


def solve_D(D: OperatorMatrix, rhs):
    return linalg.solve_banded((2, 2), _full_band(D.banded), rhs)


def frenet_curvatures(kappa0, order=2):
    """Higher curvatures ``kappa_i = (-1)^i kappa0^(i+1)`` for ``i = 0..order``."""
    return [(-1) ** i * kappa0 ** (i + 1) for i in range(order + 1)]


def g_expansion(g, dg, d2g, d3g, phi, p1, q1, p2, q2, p3=0.0):
    """Coefficients of ``eps^0..eps^3`` in ``g(|U|^2)`` for ``U = (phi,0) + eps U1 + ...``.

    ``g, dg, d2g, d3g`` are the map and its first three derivatives.
    """
    s = phi ** 2
    g1 = dg(s) * 2 * phi * p1
    g2 = dg(s) * (2 * phi * p2 + p1 ** 2 + q1 ** 2) + 2 * d2g(s) * phi ** 2 * p1 ** 2
    g3 = (2 * dg(s) * (phi * p3 + p1 * p2 + q1 * q2)
          + 2 * d2g(s) * phi * p1 * (2 * phi * p2 + p1 ** 2 + q1 ** 2)
          + 4.0 / 3.0 * d3g(s) * phi ** 3 * p1 ** 3)
    return g(s), g1, g2, g3


# ---------------------------------------------------------------------------
# alpha1 and the first correction


def compute_alpha1(L: BlockOperator, front: FrontProfile, tol=1e-12):
    """``alpha1 = |phi'|^2 / <D^{-1} S(D) phi', phi'>``."""
    grid = front.grid
    dphi = front.derivative
    denom = grid.inner(solve_D(L.D, L.SD.matvec(dphi)), dphi)
    if abs(denom) < tol or not np.isfinite(denom):
        raise ZeroDivisionError("degenerate alpha1 denominator (mu near 0)")
    return grid.inner(dphi, dphi) / denom


def alpha1_asymptotic(L: BlockOperator, front: FrontProfile):
    """Small-mu prediction ``lambda_D |phi'|^2 / (S(lambda_D) <phi', psi>^2)``."""
    es = L.D.eigensystem
    lam = es.eigenvalues[0]
    psi = es.vector(0)
    g = front.grid
    c = g.inner(front.derivative, psi)
    return lam * g.inner(front.derivative, front.derivative) / (float(L.S(lam)) * c * c)


@dataclass
class CorrectionProfiles:
    p1_bar: np.ndarray
    q1_bar: np.ndarray
    p2_bar: np.ndarray | None = None
    q2_bar: np.ndarray | None = None
    r2_bar: tuple | None = None
    u1_residual: float = math.nan
    u2_residual: float = math.nan
    solvability: float = math.nan
    diagnostics: dict = field(default_factory=dict)


def compute_U1(L: BlockOperator, front: FrontProfile, alpha1) -> CorrectionProfiles:
    """First correction solving ``L U1 = (alpha1 phi', -phi')``.

    ``q1 = alpha1 D^{-1} phi'`` and ``p1 = -alpha1 C^{-1} P D^{-1} S(D) phi'`` with
    ``P`` the projection off ``phi'``.  The residual of the defining system is
    recorded relative to ``|phi'|``.
    """
    dphi = front.derivative
    grid = front.grid
    q1 = alpha1 * solve_D(L.D, dphi)
    rhs = solve_D(L.D, L.SD.matvec(dphi))
    p1 = -alpha1 * pinned_inverse(L.C, dphi, rhs)
    target = np.concatenate([alpha1 * dphi, -dphi])
    res = L.matvec(np.concatenate([p1, q1])) - target
    rel = grid.norm(res) / grid.norm(target)
    return CorrectionProfiles(p1, q1, u1_residual=float(rel))


# ---------------------------------------------------------------------------
# first-order modal filter term


def m1_kernel_matrix(model: ModelSpec, front: FrontProfile, p1_bar):
    """``K = -d/dz + 2 g-'(phi^2) phi p1`` (the first-order part of the down operator)."""
    g = front.grid
    phi = front.values
    return -ddz_matrix(g.n_nodes, g.h) + np.diag(2.0 * model.g_minus(phi ** 2, 1) * phi * p1_bar)


def compute_M1_apply(D: OperatorMatrix, S: SpectralMap, model: ModelSpec, front: FrontProfile,
                     p1_bar, v, n_quad=None, tol=1e-7, contour=None):
    """``(1/2 pi i) oint S(z) R_z K R_z v dz`` with ``R_z = (z - D)^{-1}``.

    Only the decaying part of ``S`` contributes (a constant integrates to
    zero).  Two banded solves per quadrature node; the ``n_quad`` and
    ``n_quad/2`` rules must agree to ``tol`` relative to ``max|v|``.
    """
    v = np.asarray(v, dtype=float)
    if S.is_constant or not np.any(v):
        return np.zeros_like(v)
    g = front.grid
    phi = front.values
    pot = 2.0 * model.g_minus(phi ** 2, 1) * phi * p1_bar
    if contour is None:
        contour = default_contour(D, S)
    if n_quad is None:
        n_quad = 256 if contour.shape == "ellipse" else 64
    band = _full_band(D.banded).astype(complex)
    m = n_quad // 2
    theta = 2 * np.pi * (np.arange(m) + 0.25) / m
    acc = np.zeros(v.size, dtype=complex)
    for t in theta:
        z, dz = contour.point(t)
        ab = -band
        ab[2] += z
        w = linalg.solve_banded((2, 2), ab, v.astype(complex), check_finite=False)
        kw = -ddz(w.real, g.h) - 1j * ddz(w.imag, g.h) + pot * w
        r = linalg.solve_banded((2, 2), ab, kw, check_finite=False)
        acc += (S.tail(z) * dz / (1j * m)) * r
    if contour.shape == "circle":
        acc = -acc
    change = float(np.max(np.abs(acc.imag)))
    if change > tol * max(1.0, float(np.max(np.abs(v)))):
        raise ConvergenceError(f"M1 quadrature changed by {change:.2e} on doubling")
    return acc.real


def compute_M1_eig(D: OperatorMatrix, S: SpectralMap, model: ModelSpec, front: FrontProfile,
                   p1_bar, v):
    """Eigen route: ``V [dd(S) * (V^T K V)] V^T v`` with divided differences of ``S``."""
    es = D.eigensystem
    lam = es.eigenvalues
    V = es.eigenvectors * math.sqrt(D.grid.h)
    s = S(lam)
    diff = lam[:, None] - lam[None, :]
    close = np.abs(diff) < 1e-10
    dd = np.where(close, 0.0, (s[:, None] - s[None, :]) / np.where(close, 1.0, diff))
    deriv = S.derivative(lam)
    dd[close] = np.broadcast_to(0.5 * (deriv[:, None] + deriv[None, :]), dd.shape)[close]
    K = m1_kernel_matrix(model, front, p1_bar)
    coef = V.T @ v
    return V @ ((dd * (V.T @ K @ V)) @ coef)


# ---------------------------------------------------------------------------
# second correction


def compute_R2(model: ModelSpec, front: FrontProfile, p1, q1, m1q1):
    """Second-order inhomogeneity (odd parity for even ``p1``, ``q1``)."""
    g = front.grid
    z = g.nodes
    phi = front.values
    dphi = front.derivative
    s = phi ** 2
    gm1 = model.g_minus(s, 1)
    gp1 = model.g_plus(s, 1)
    gp2 = model.g_plus(s, 2)
    r_top = -ddz(q1, g.h) + 2 * gm1 * phi * p1 * q1
    r_bot = (ddz(p1, g.h) - 2 * gp1 * phi * p1 ** 2 - m1q1 - z * dphi
             - gp1 * phi * (p1 ** 2 + q1 ** 2) - 2 * gp2 * p1 ** 2 * phi ** 3)
    return r_top, r_bot


def apply_L_inverse(L: BlockOperator, dphi, f, g):
    """``L^{-1}(f, g) = (-C^{-1}(S D^{-1} f + g), D^{-1} f)`` on the range of ``L``."""
    dinv_f = solve_D(L.D, f)
    p = -pinned_inverse(L.C, dphi, L.SD.matvec(dinv_f) + g)
    return p, dinv_f


def compute_U2(L: BlockOperator, model: ModelSpec, front: FrontProfile,
               profiles: CorrectionProfiles, alpha1, m1_route="contour",
               solvability_tol=1e-7) -> CorrectionProfiles:
    """Second correction ``U2 = L^{-1}(alpha1 U1' - R2)``.

    The adjoint-kernel pairing of the right-hand side is checked before the
    inversion; it vanishes by parity, which is the content of ``V1 = 0``.
    """
    g = front.grid
    dphi = front.derivative
    p1, q1 = profiles.p1_bar, profiles.q1_bar
    if m1_route == "contour":
        m1q1 = compute_M1_apply(L.D, L.S, model, front, p1, q1)
    else:
        m1q1 = compute_M1_eig(L.D, L.S, model, front, p1, q1)
    r_top, r_bot = compute_R2(model, front, p1, q1, m1q1)
    f = alpha1 * ddz(p1, g.h) - r_top
    gg = alpha1 * ddz(q1, g.h) - r_bot
    dagger_top = solve_D(L.D, L.SD.matvec(dphi))
    pairing = g.inner(f, dagger_top) + g.inner(gg, dphi)
    scale = g.norm(np.concatenate([f, gg])) * g.norm(np.concatenate([dagger_top, dphi]))
    solv = abs(pairing) / scale
    if solv > solvability_tol:
        raise SolvabilityError(f"U2 right-hand side pairs with the adjoint kernel ({solv:.2e})")
    p2, q2 = apply_L_inverse(L, dphi, f, gg)
    res = L.matvec(np.concatenate([p2, q2])) - np.concatenate([f, gg])
    rel = g.norm(res) / g.norm(np.concatenate([f, gg]))
    profiles.p2_bar, profiles.q2_bar = p2, q2
    profiles.r2_bar = (r_top, r_bot)
    profiles.u2_residual = float(rel)
    profiles.solvability = float(solv)
    profiles.diagnostics["m1q1"] = m1q1
    return profiles


# ---------------------------------------------------------------------------
# nu and the coefficient report


def compute_nu(profiles: CorrectionProfiles, alpha1, kernel: KernelPair, front: FrontProfile):
    """``nu = -(alpha1/|phi'|^2) <(-q1 + alpha1 p1, p1 + alpha1 q1), Psi0_dagger>``."""
    g = front.grid
    p1, q1 = profiles.p1_bar, profiles.q1_bar
    vec = np.concatenate([-q1 + alpha1 * p1, p1 + alpha1 * q1])
    return -alpha1 / g.inner(front.derivative, front.derivative) * g.inner(vec, kernel.psi0_dagger)


def nu_asymptotic(L: BlockOperator, front: FrontProfile):
    """Small-mu prediction ``|phi'|^2 / (<phi', psi>^2 S(lambda_D))``.

    Equivalently ``1/(<phi'/|phi'|, psi>^2 S(lambda_D))`` with both vectors of
    unit norm; it coincides with the limit of ``alpha1/lambda_D``.
    """
    es = L.D.eigensystem
    lam = es.eigenvalues[0]
    g = front.grid
    c = g.inner(front.derivative, es.vector(0))
    return g.inner(front.derivative, front.derivative) / (c * c * float(L.S(lam)))


@dataclass
class CoefficientReport:
    mu: float
    alpha1: float
    nu: float
    alpha1_asymptotic: float
    nu_asymptotic: float
    epsilon: float
    gap: float = math.nan
    profiles: CorrectionProfiles | None = field(default=None, repr=False)

    def check(self, window=0.05):
        if 0 < abs(self.mu) <= window and np.sign(self.alpha1) != np.sign(self.mu):
            raise SignViolation(f"sign(alpha1) != sign(mu) at mu={self.mu}")
        if abs(self.mu) <= window and not self.nu > 0:
            raise SignViolation(f"nu = {self.nu:.4g} is not positive at mu={self.mu}")

    def row(self):
        return {"mu": self.mu, "alpha1": self.alpha1, "alpha1_asym": self.alpha1_asymptotic,
                "nu": self.nu, "nu_asym": self.nu_asymptotic, "gap": self.gap}


def write_sweep_csv(reports, path, header=None):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=["mu", "alpha1", "alpha1_asym", "nu", "nu_asym", "gap"])
        w.writeheader()
        for r in reports:
            w.writerow({k: repr(float(v)) for k, v in r.row().items()})
    return path


def coefficient_report(L: BlockOperator, model: ModelSpec, front: FrontProfile,
                       kernel: KernelPair, with_U2=False, m1_route="contour") -> CoefficientReport:
    a1 = compute_alpha1(L, front)
    prof = compute_U1(L, front, a1)
    if with_U2:
        compute_U2(L, model, front, prof, a1, m1_route=m1_route)
    nu = compute_nu(prof, a1, kernel, front)
    rep = CoefficientReport(model.mu, a1, nu, alpha1_asymptotic(L, front),
                            nu_asymptotic(L, front), model.epsilon, profiles=prof)
    return rep


def one_sided_limit(mus, values, order=2):
    """Polynomial extrapolation of ``values(mu)`` to ``mu = 0`` from one side."""
    mus = np.asarray(mus, dtype=float)
    coef = np.polyfit(mus, np.asarray(values, dtype=float), order)
    return float(np.polyval(coef, 0.0))


def normal_velocity(report: CoefficientReport, kappa, lap_s_kappa, alpha3=0.0):
    """``-alpha1 kappa + eps^2 (nu lap_s_kappa + alpha3 kappa^3)``."""
    eps2 = report.epsilon ** 2
    return -report.alpha1 * kappa + eps2 * (report.nu * lap_s_kappa + alpha3 * kappa ** 3)
