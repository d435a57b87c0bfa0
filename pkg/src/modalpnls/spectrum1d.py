"""Spectrum of the linearization about the 1D front.

The block operator acts on ``(P, Q)`` as

    L = [[0, D], [-C, -S(D)]],

with ``C`` and ``D`` from :mod:`modalpnls.operators1d`.  Besides the full dense
spectrum this module evaluates the constant-coefficient (far-field) dispersion
curves, the constraint spaces attached to a spectral parameter, and the
bilinear-form quantities used to localize the point spectrum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .model import ModelSpec, SpectralMap
from .operators1d import (OperatorMatrix, _is_reflection_symmetric, _parity_blocks,
                          _full_band, funcalc_eig)

KERNEL_TOL = 1e-6
COMPLEX_TOL = 1e-7


class SpectralInvariantError(RuntimeError):
    """A spectral property expected of the linearization does not hold."""


@dataclass
class BlockOperator:
    C: OperatorMatrix
    D: OperatorMatrix
    SD: OperatorMatrix
    S: SpectralMap

    @property
    def n(self):
        return self.C.size

    @property
    def grid(self):
        return self.C.grid

    def dense(self):
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        out[:n, n:] = self.D.entries
        out[n:, :n] = -self.C.entries
        out[n:, n:] = -self.SD.entries
        return out

    def matvec(self, u):
        p, q = np.split(np.asarray(u), 2)
        return np.concatenate([self.D.matvec(q), -self.C.matvec(p) - self.SD.matvec(q)])

    def rmatvec(self, u):
        """Action of the transpose ``[[0, -C], [D, -S(D)]]``."""
        p, q = np.split(np.asarray(u), 2)
        return np.concatenate([-self.C.matvec(q), self.D.matvec(p) - self.SD.matvec(q)])

    def solve_D(self, rhs):
        return linalg.solve_banded((2, 2), _full_band(self.D.banded), rhs)

    def parity_sectors(self):
        """Dense even and odd sectors of ``L`` (each of size about ``N``)."""
        out = []
        blocks = [_parity_blocks(m) for m in (self.C, self.D, self.SD)]
        for sector in (0, 1):
            c, d, s = (b[sector] for b in blocks)
            m = c.shape[0]
            a = np.zeros((2 * m, 2 * m))
            a[:m, m:] = d
            a[m:, :m] = -c
            a[m:, m:] = -s
            out.append(a)
        return out


def assemble_L(C: OperatorMatrix, D: OperatorMatrix, S: SpectralMap, SD=None) -> BlockOperator:
    """Block operator with ``S(D)`` from the eigen route unless supplied."""
    if C.grid != D.grid:
        raise ValueError("C and D are built on different grids")
    if SD is None:
        SD = funcalc_eig(D, S)
    elif SD.grid != D.grid:
        raise ValueError("S(D) is built on a different grid")
    return BlockOperator(C, D, SD, S)


# ---------------------------------------------------------------------------
# kernel


@dataclass(frozen=True)
class KernelPair:
    psi0: np.ndarray
    psi0_dagger: np.ndarray
    residual: float
    adjoint_residual: float
    pairing: float
    mu_zero: bool


def _rel(x, y):
    return float(np.linalg.norm(x) / np.linalg.norm(y))


def kernel_pair(L: BlockOperator, dphi, mu_zero=None, zero_tol=1e-6) -> KernelPair:
    """Kernel vectors of ``L`` and of its transpose.

    For ``mu != 0`` the adjoint kernel is ``(D^{-1} S(D) phi', phi')``; when the
    ground state of ``D`` is zero (``mu_zero``, detected from ``lambda_D`` when
    not given) it is ``(psi, 0)``.
    """
    grid = L.grid
    lam_d = L.D.eigensystem.eigenvalues[0] if mu_zero is None else None
    if mu_zero is None:
        mu_zero = abs(lam_d) <= zero_tol
    zeros = np.zeros_like(dphi)
    psi0 = np.concatenate([dphi, zeros])
    if mu_zero:
        psi = L.D.eigensystem.vector(0)
        dagger = np.concatenate([psi, zeros])
    else:
        dagger = np.concatenate([L.solve_D(L.SD.matvec(dphi)), dphi])
    res = _rel(L.matvec(psi0), psi0)
    adj = _rel(L.rmatvec(dagger), dagger)
    pairing = grid.h * float(psi0 @ dagger)
    return KernelPair(psi0, dagger, res, adj, pairing, bool(mu_zero))


# ---------------------------------------------------------------------------
# full spectrum


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kernel_count: int
    kernel_eigenvalue: complex
    gap: float
    ess_bound: float
    beta_minus: float
    complex_violations: int
    fredholm_samples: list = field(default_factory=list)
    eigenvectors: np.ndarray | None = None
    kernel_residuals: dict = field(default_factory=dict)

    @property
    def complex_eigenvalues(self):
        return self.eigenvalues[np.abs(self.eigenvalues.imag) > COMPLEX_TOL]

    def check(self):
        if self.kernel_count != 1:
            raise SpectralInvariantError(f"{self.kernel_count} eigenvalues within {KERNEL_TOL}")
        if not self.gap > 0:
            raise SpectralInvariantError(f"no spectral gap (gap = {self.gap:.3e})")
        if self.complex_violations:
            raise SpectralInvariantError(
                f"{self.complex_violations} complex eigenvalues right of -beta_minus/2")

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["re", "im"])
            for lam in self.eigenvalues:
                w.writerow([repr(float(lam.real)), repr(float(lam.imag))])
        return path

    def summary(self):
        return {"gap": self.gap, "ess_bound": self.ess_bound, "kernel_count": self.kernel_count,
                "kernel_eigenvalue": abs(self.kernel_eigenvalue),
                "complex_violations": self.complex_violations, **self.kernel_residuals}


def _unfold_vector(u, sector, n):
    """Map a sector eigenvector (blocks of length c+1 or c) to both full components."""
    c = n // 2
    idx = np.arange(n)
    fold = np.minimum(idx, n - 1 - idx)
    m = u.shape[0] // 2
    out = []
    for part in (u[:m], u[m:]):
        if sector == 0:
            scale = np.full(c + 1, 1.0 / math.sqrt(2.0))
            scale[c] = 1.0
            full = (scale * part)[fold]
        else:
            padded = np.zeros(c + 1, dtype=part.dtype)
            padded[:c] = part / math.sqrt(2.0)
            full = padded[fold] * np.sign(c - idx)
        out.append(full)
    return np.concatenate(out)


def full_spectrum(L: BlockOperator, model: ModelSpec | None = None, vectors=False,
                  kernel_tol=KERNEL_TOL) -> SpectrumReport:
    """All eigenvalues of the discretized ``L`` by dense nonsymmetric eigensolves.

    When the operators are reflection symmetric the even and odd sectors are
    solved separately (same spectrum, a quarter of the work).
    """
    if 2 * L.n > 2 * 4097:
        raise ValueError("dense eigensolve limited to 2 N <= 8194")
    if _is_reflection_symmetric(L.C) and _is_reflection_symmetric(L.D):
        lams, vecs = [], []
        for sector, a in enumerate(L.parity_sectors()):
            if vectors:
                w, v = linalg.eig(a)
                vecs.append(np.column_stack([_unfold_vector(v[:, j], sector, L.n)
                                             for j in range(v.shape[1])]))
            else:
                w = linalg.eigvals(a)
            lams.append(w)
        lam = np.concatenate(lams)
        vec = np.concatenate(vecs, axis=1) if vectors else None
    else:
        if vectors:
            lam, vec = linalg.eig(L.dense())
        else:
            lam, vec = linalg.eigvals(L.dense()), None
    order = np.lexsort((lam.imag, -lam.real))
    lam = lam[order]
    if vec is not None:
        vec = vec[:, order]
    mag = np.abs(lam)
    near = mag <= kernel_tol
    rest = lam[~near]
    gap = float(-np.max(rest.real)) if rest.size else math.inf
    beta_minus = L.S.beta_minus
    cplx = rest[np.abs(rest.imag) > COMPLEX_TOL]
    violations = int(np.sum(cplx.real >= -beta_minus / 2 + 1e-6))
    ess = ess_bound(model, L.S) if model is not None else math.nan
    report = SpectrumReport(lam, int(near.sum()), complex(lam[np.argmin(mag)]), gap, ess,
                            beta_minus, violations, eigenvectors=vec)
    return report


# ---------------------------------------------------------------------------
# essential spectrum


def fredholm_boundary(model: ModelSpec, S: SpectralMap, k, k2=None):
    """Both roots ``lambda_F(k)`` of ``lambda^2 + S lambda + (k^2 + c_inf)(k^2 + g-(1)) = 0``.

    ``S`` is evaluated at the far-field down symbol ``k^2 + g-(1)``.  ``k2`` may
    replace ``k**2`` (for instance a finite-difference symbol).
    """
    k2 = np.asarray(k, dtype=float) ** 2 if k2 is None else np.asarray(k2, dtype=float)
    dm = k2 + model.g_minus_inf
    cp = k2 + model.c_inf
    s = S(dm)
    root = np.sqrt((s * s - 4.0 * cp * dm).astype(complex))
    return -0.5 * (s + root), -0.5 * (s - root)


def ess_bound(model: ModelSpec, S: SpectralMap):
    """``min(beta_minus/2, c_inf g-(1) / beta_plus)``."""
    return min(S.beta_minus / 2.0, model.c_inf * model.g_minus_inf / S.beta_plus)


def fredholm_transition(model: ModelSpec, S: SpectralMap, k_hi=50.0):
    """Wavenumber where the discriminant vanishes (real/complex transition), or None."""
    def disc(k):
        dm = k * k + model.g_minus_inf
        return S(dm) ** 2 - 4.0 * (k * k + model.c_inf) * dm
    if disc(0.0) <= 0.0:
        return None
    return optimize.brentq(disc, 0.0, k_hi, xtol=1e-14)


def fredholm_samples(model, S, k_values):
    lo, hi = fredholm_boundary(model, S, np.asarray(k_values))
    return [(float(k), complex(a), complex(b)) for k, a, b in zip(k_values, lo, hi)]


def fd_symbol(k, h):
    """Symbol of the fourth-order ``-d^2/dz^2`` stencil at wavenumber ``k``."""
    return (30.0 - 32.0 * np.cos(k * h) + 2.0 * np.cos(2.0 * k * h)) / (12.0 * h * h)


def periodic_neg_laplacian(n, h):
    col = np.zeros(n)
    col[[0, 1, 2, -1, -2]] = np.array([30.0, -16.0, 1.0, -16.0, 1.0]) / (12.0 * h * h)
    return linalg.circulant(col)


def linf_periodic(model: ModelSpec, S: SpectralMap, n, h):
    """Dense far-field block operator on a periodic grid of ``n`` nodes."""
    lap = periodic_neg_laplacian(n, h)
    eye = np.eye(n)
    d_inf = lap + model.g_minus_inf * eye
    c_inf = lap + model.c_inf * eye
    lam, vec = linalg.eigh(d_inf)
    s_inf = (vec * S(lam)) @ vec.T
    out = np.zeros((2 * n, 2 * n))
    out[:n, n:] = d_inf
    out[n:, :n] = -c_inf
    out[n:, n:] = -s_inf
    return out, c_inf, d_inf, s_inf


def linf_resolvent_symbols(model: ModelSpec, S: SpectralMap, gamma, k2):
    """Fourier symbols of the four blocks of ``(L_inf - gamma)^{-1}``.

    With commuting scalar symbols ``c, d, s`` the inverse of
    ``[[-gamma, d], [-c, -s - gamma]]`` is ``[[-s - gamma, -d], [c, -gamma]] / det``
    with ``det = gamma (s + gamma) + c d``; equivalently, with
    ``H = c + gamma (s + gamma) / d``, the blocks are
    ``-H^{-1}(s+gamma)/d``, ``-H^{-1}``, ``(1 - gamma H^{-1} (s+gamma)/d)/d`` and
    ``-gamma H^{-1}/d``.
    """
    d = k2 + model.g_minus_inf
    c = k2 + model.c_inf
    s = S(d)
    H = c + gamma * (s + gamma) / d
    r11 = -(s + gamma) / (H * d)
    r12 = -1.0 / H
    r21 = (1.0 - gamma * (s + gamma) / (H * d)) / d
    r22 = -gamma / (H * d)
    return r11, r12, r21, r22


# ---------------------------------------------------------------------------
# constraint spaces and bilinear forms


@dataclass
class ConstraintSpace:
    lam: float
    s_lambda: np.ndarray
    h: float

    def project(self, u):
        """Orthogonal projection off ``s_lambda`` (columns of ``u`` if 2D)."""
        s = self.s_lambda
        coef = (s @ u) / (s @ s)
        return u - np.multiply.outer(s, coef) if np.ndim(u) > 1 else u - s * coef

    @property
    def projector(self):
        s = self.s_lambda
        return np.eye(s.size) - np.outer(s, s) / (s @ s)


def constraint_space(L: BlockOperator, dphi, lam) -> ConstraintSpace:
    """``S_lambda = {s_lambda}^perp`` with ``s_lambda = D^{-1}(S(D) + lambda) phi'``."""
    if abs(L.D.eigensystem.eigenvalues[0]) <= KERNEL_TOL:
        raise np.linalg.LinAlgError("D is singular (mu = 0)")
    s = L.solve_D(L.SD.matvec(dphi) + lam * dphi)
    return ConstraintSpace(float(lam), s, L.grid.h)


@dataclass(frozen=True)
class QuadraticCheck:
    eigenvalue: complex
    a: float
    b: float
    c: float
    residual: float
    root_error: float
    passed: bool
    degenerate: bool = False


def quadratic_relation_check(L: BlockOperator, eigenvalue, eigenvector, tol=1e-6):
    """Verify ``lam^2 <D^-1 P,P> + lam <S D^-1 P,P> + <C P,P> = 0`` for ``P`` the first block.

    The root check compares ``lam`` with the nearer root of the quadratic.
    """
    h = L.grid.h
    p = eigenvector[:L.n]
    pn2 = h * float(np.vdot(p, p).real)
    if math.sqrt(pn2) < 1e-10:
        return QuadraticCheck(eigenvalue, 0, 0, 0, math.nan, math.nan, False, True)
    dinv_p = L.solve_D(p)
    a = h * np.vdot(p, dinv_p).real
    b = h * np.vdot(p, L.SD.matvec(dinv_p)).real
    c = h * np.vdot(p, L.C.matvec(p)).real
    lam = complex(eigenvalue)
    res = abs(lam * lam * a + lam * b + c)
    roots = np.roots([a, b, c])
    root_err = float(np.min(np.abs(roots - lam)))
    ok = res <= tol * (abs(lam) ** 2 + 1.0) * pn2 and root_err <= tol * (abs(lam) + 1.0)
    return QuadraticCheck(lam, a, b, c, float(res), root_err, bool(ok))


@dataclass(frozen=True)
class IndexResult:
    n_shifted: int
    n_A: int
    index_formula: int
    index_direct: int
    index_direct_unshifted: int
    delta: float

    @property
    def agree(self):
        return self.index_formula == self.index_direct


def constrained_index(M: OperatorMatrix | np.ndarray, constraint_vectors, delta,
                      shifted_eigs=None, shifted_inverse=None, tol=1e-10) -> IndexResult:
    """Negative index of ``M + delta`` restricted to the complement of the constraints.

    Route one is ``n(M + delta) - n(A)`` with ``A_ij = <(M+delta)^{-1} s_i, s_j>``
    for an orthonormal basis ``s_i`` of the constraint span.  Route two
    eigensolves ``Q^T (M + delta) Q`` for an orthonormal basis ``Q`` of the
    complement.  ``shifted_eigs``/``shifted_inverse`` may be passed to reuse the
    eigenvalues and inverse of ``M + delta`` across many constraint sets.
    """
    m = M.entries if isinstance(M, OperatorMatrix) else np.asarray(M)
    n = m.shape[0]
    o = m + delta * np.eye(n)
    if shifted_eigs is None:
        shifted_eigs = linalg.eigvalsh(o)
    if np.min(np.abs(shifted_eigs)) < 0.5 * abs(delta) * 1e-3:
        raise np.linalg.LinAlgError("M + delta is numerically singular")
    n_o = int(np.sum(shifted_eigs < 0))
    basis = np.column_stack(constraint_vectors) if np.ndim(constraint_vectors[0]) else \
        np.asarray(constraint_vectors)[:, None]
    qfull, _ = linalg.qr(basis, mode="full")
    k = basis.shape[1]
    s = qfull[:, :k]
    comp = qfull[:, k:]
    o_inv_s = shifted_inverse @ s if shifted_inverse is not None else linalg.solve(o, s, assume_a="sym")
    A = s.T @ o_inv_s
    A = 0.5 * (A + A.T)
    n_a = int(np.sum(linalg.eigvalsh(A) < 0))
    restricted = comp.T @ o @ comp
    n_direct = int(np.sum(linalg.eigvalsh(0.5 * (restricted + restricted.T)) < -tol))
    r0 = comp.T @ m @ comp
    n_unshifted = int(np.sum(linalg.eigvalsh(0.5 * (r0 + r0.T)) < -tol))
    return IndexResult(n_o, n_a, n_o - n_a, n_direct, n_unshifted, float(delta))


def default_index_shift(lam_d):
    return min(0.1, abs(lam_d) / 10.0)


@dataclass(frozen=True)
class RatioReport:
    lam: float
    sample_count: int
    seed: int
    min_ratio_i: float
    min_ratio_ii: float
    min_ratio_iii: float
    min_dinv_form: float
    bound_i: float
    bound_ii: float

    @property
    def passed(self):
        return self.min_ratio_i >= self.bound_i and self.min_ratio_ii >= self.bound_ii


def bilinear_ratio_report(L: BlockOperator, dphi, lam, sample_count=500, seed=20240607,
                          dinv=None):
    """Minimum bilinear-form ratios over random vectors projected into ``S_lambda``.

    Ratios: (i) ``<D^-1 S P,P>/<D^-1 P,P>`` with bound ``beta_-``, (ii) its
    reciprocal with bound ``1/(2 beta_+)``, (iii) ``<D^-1 P,P><C P,P>/<D^-1 S P,P>^2``.
    Raises when a sampled ``<D^-1 P,P>`` is not positive.
    """
    space = constraint_space(L, dphi, lam)
    rng = np.random.default_rng(seed)
    P = space.project(rng.standard_normal((L.n, sample_count)))
    dinv_p = L.solve_D(P) if dinv is None else dinv @ P
    a = np.einsum("ij,ij->j", P, dinv_p)
    b = np.einsum("ij,ij->j", P, L.SD.entries @ dinv_p)
    c = np.einsum("ij,ij->j", P, L.C.entries @ P)
    if np.min(a) <= 0:
        raise SpectralInvariantError("sampled <D^-1 P, P> <= 0 inside the constraint space")
    ratio_i = b / a
    ratio_ii = a / b
    ratio_iii = a * c / b ** 2
    S = L.S
    return RatioReport(float(lam), sample_count, seed, float(ratio_i.min()),
                       float(ratio_ii.min()), float(ratio_iii.min()), float(a.min() * L.grid.h),
                       S.beta_minus * (1 - 1e-6), 1.0 / (2.0 * S.beta_plus))


def omega_seminorm_sq(D: OperatorMatrix, p, omega):
    """``sum_{rho >= omega} |p_hat(rho)|^2 / rho`` over the discrete spectrum of ``D``."""
    es = D.eigensystem
    coef = D.grid.h * (es.eigenvectors.T @ p)
    keep = es.eigenvalues >= omega
    return float(np.sum(coef[keep] ** 2 / es.eigenvalues[keep]))
