"""Dense discretizations of the 1D operators and functions of them.

``C = -d^2/dz^2 + g+(phi^2) + 2 g+'(phi^2) phi^2`` is the linearized up
operator and ``D = -d^2/dz^2 + g-(phi^2; mu)`` the down operator.  Both are
built with fourth-order central differences and homogeneous Dirichlet
truncation beyond the last node, which keeps the matrices exactly symmetric.

``S(D)`` is available by three independent routes: spectral mapping of the
eigendecomposition, a Cauchy contour integral of the resolvent, and a
matvec-only Lanczos approximation of ``S(D) v``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .grid import Grid1D
from .model import ConvergenceError, FrontProfile, HypothesisError, ModelSpec, SpectralMap

FD4 = np.array([1.0, -16.0, 30.0, -16.0, 1.0]) / 12.0


class KernelConditionError(RuntimeError):
    """The declared kernel vector is not (numerically) in the kernel."""


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues with eigenvectors normalized in the weighted L2 norm."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weight: float

    def vector(self, i):
        """Eigenvector ``i`` with sign fixed so its largest entry is positive."""
        v = self.eigenvectors[:, i]
        return v if v[np.argmax(np.abs(v))] > 0 else -v

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue"])
            for i, lam in enumerate(self.eigenvalues):
                w.writerow([i, repr(float(lam))])
        return path


@dataclass
class OperatorMatrix:
    """Dense real symmetric matrix with optional pentadiagonal band storage.

    ``banded`` is in the upper-form layout of :func:`scipy.linalg.eig_banded`
    (shape ``(3, N)``) when the matrix is a finite-difference operator.
    """

    entries: np.ndarray
    kind: str
    grid: Grid1D
    potential: np.ndarray | None = None
    banded: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self):
        return self.entries.shape[0]

    @cached_property
    def eigensystem(self) -> EigenSystem:
        lam, vec = linalg.eigh(self.entries)
        vec /= math.sqrt(self.grid.h)
        return EigenSystem(lam, vec, self.grid.h)

    def matvec(self, v):
        return self.entries @ v

    def symmetry_defect(self):
        a = self.entries
        return float(np.max(np.abs(a - a.T)) / np.max(np.abs(a)))


def neg_laplacian_banded(grid: Grid1D, potential):
    """Upper band storage of ``-d^2/dz^2 + diag(potential)``."""
    n, h2 = grid.n_nodes, grid.h ** 2
    ab = np.zeros((3, n))
    ab[0, 2:] = FD4[0] / h2
    ab[1, 1:] = FD4[1] / h2
    ab[2, :] = FD4[2] / h2 + potential
    return ab


def _dense_from_banded(ab):
    n = ab.shape[1]
    a = np.diag(ab[2])
    for off in (1, 2):
        d = ab[2 - off, off:]
        a += np.diag(d, off) + np.diag(d, -off)
    return a


def _full_band(ab):
    """Convert symmetric upper band storage to the general layout of solve_banded."""
    n = ab.shape[1]
    full = np.zeros((5, n), dtype=ab.dtype)
    full[:3] = ab
    full[3, :-1] = ab[1, 1:]
    full[4, :-2] = ab[0, 2:]
    return full


def _assemble(kind, grid, potential):
    ab = neg_laplacian_banded(grid, potential)
    return OperatorMatrix(_dense_from_banded(ab), kind, grid, potential, ab)


def c_potential(model: ModelSpec, phi):
    s = phi ** 2
    return model.g_plus(s) + 2.0 * model.g_plus(s, 1) * s


def d_potential(model: ModelSpec, phi):
    return model.g_minus(phi ** 2)


def assemble_C(model: ModelSpec, front: FrontProfile, kernel_tol=1e-7) -> OperatorMatrix:
    """Linearized up operator; checks that ``phi'`` lies in its discrete kernel."""
    op = _assemble("C", front.grid, c_potential(model, front.values))
    dphi = front.derivative
    res = np.linalg.norm(op.matvec(dphi)) / np.linalg.norm(dphi)
    if res > kernel_tol:
        raise KernelConditionError(f"|C phi'|/|phi'| = {res:.2e} exceeds {kernel_tol:g}")
    return op


def assemble_D(model: ModelSpec, front: FrontProfile) -> OperatorMatrix:
    return _assemble("D", front.grid, d_potential(model, front.values))


def _check_lower_bound(lam_min, smap: SpectralMap):
    if lam_min < smap.a_minus:
        raise HypothesisError(f"eigenvalue {lam_min:.4g} below a_minus={smap.a_minus}")


def funcalc_eig(M: OperatorMatrix, S: SpectralMap) -> OperatorMatrix:
    """``V diag(S(lambda_i)) V^T`` from the eigendecomposition of ``M``."""
    es = M.eigensystem
    _check_lower_bound(es.eigenvalues[0], S)
    v = es.eigenvectors
    out = (v * S(es.eigenvalues)) @ v.T * M.grid.h
    out = 0.5 * (out + out.T)
    return OperatorMatrix(out, "S_of_D", M.grid)


# ---------------------------------------------------------------------------
# contour route


@dataclass(frozen=True)
class Contour:
    """Closed contour for the resolvent integral of the decaying part of ``S``.

    ``shape`` is ``"ellipse"`` (center, semi-axes ``a``, ``b``; encloses the
    spectral window where the tail of ``S`` is non-negligible) or ``"circle"``
    (center, radius ``a``; surrounds the pole of a rational map and excludes
    the spectrum).
    """

    shape: str
    center: float
    a: float
    b: float = 0.0

    def point(self, theta):
        if self.shape == "ellipse":
            z = self.center + self.a * np.cos(theta) + 1j * self.b * np.sin(theta)
            dz = -self.a * np.sin(theta) + 1j * self.b * np.cos(theta)
        else:
            z = self.center + self.a * np.exp(1j * theta)
            dz = 1j * self.a * np.exp(1j * theta)
        return z, dz

    def distance_to(self, p, n=4096):
        z, _ = self.point(np.linspace(0, 2 * np.pi, n, endpoint=False))
        return float(np.min(np.abs(z - p)))

    def encloses(self, p):
        x, y = p.real - self.center, p.imag
        if self.shape == "ellipse":
            return (x / self.a) ** 2 + (y / self.b) ** 2 < 1.0
        return x * x + y * y < self.a ** 2


def default_contour(M: OperatorMatrix, S: SpectralMap, margin=0.5, tail_tol=1e-11,
                    half_height=3.3):
    """Contour adapted to the map kind (``None`` for a constant map).

    Only ``S - S(inf)`` is integrated.  For the logistic map the tail is below
    ``tail_tol`` beyond ``log(1/tail_tol)``, so the ellipse need not reach the
    top of the discrete spectrum; its half-height stays clear of the poles at
    ``+-pi i``.  For the shifted-rational map the tail is a single simple pole
    and the integral is taken around that pole instead, on a circle a third of
    the way to the spectrum.
    """
    lam_min = _lowest_eigenvalue(M)
    if S.kind == "constant":
        return None
    if S.kind == "logistic":
        left = lam_min - margin
        right = max(math.log((S.beta_plus - S.beta_minus) / tail_tol), left + 1.0)
        return Contour("ellipse", 0.5 * (left + right), 0.5 * (right - left), half_height)
    pole = S.pole_list[0].real
    return Contour("circle", pole, (lam_min - pole) / 3.0)


def _lowest_eigenvalue(M: OperatorMatrix):
    if M.banded is not None:
        return float(linalg.eig_banded(M.banded, eigvals_only=True,
                                       select="i", select_range=(0, 0))[0])
    return float(linalg.eigh(M.entries, eigvals_only=True, subset_by_index=(0, 0))[0])


def _is_reflection_symmetric(M: OperatorMatrix):
    return M.banded is not None and np.array_equal(M.banded[2], M.banded[2][::-1])


def _parity_blocks(M: OperatorMatrix):
    """Matrices of ``M`` on the even and odd subspaces (orthonormal folded bases).

    Even basis: ``(e_j + e_{N-1-j})/sqrt(2)`` for ``j < c`` and ``e_c``; odd
    basis: ``(e_j - e_{N-1-j})/sqrt(2)`` for ``j < c``.  ``c`` is the center index.
    """
    a = M.entries
    c = M.size // 2
    even = a[:c + 1, :c + 1].copy()
    even[:c, :c] += a[:c, c + 1:][:, ::-1]
    even[:c, c] *= math.sqrt(2.0)
    even[c, :c] *= math.sqrt(2.0)
    odd = a[:c, :c] - a[:c, c + 1:][:, ::-1]
    return even, odd


def _unfold(even, odd):
    """Assemble the full matrix from its even and odd blocks."""
    c = odd.shape[0]
    n = 2 * c + 1
    idx = np.arange(n)
    fold = np.minimum(idx, n - 1 - idx)
    scale = np.full(c + 1, 1.0 / math.sqrt(2.0))
    scale[c] = 1.0
    out = (scale[:, None] * even * scale[None, :])[np.ix_(fold, fold)]
    padded = np.zeros((c + 1, c + 1))
    padded[:c, :c] = odd
    sign = np.sign(c - idx).astype(float)
    out += 0.5 * sign[:, None] * padded[np.ix_(fold, fold)] * sign[None, :]
    return out


def _ldl_pentadiagonal(diags, z):
    """``L D L^T`` factors of ``z_k I - A`` for all shifts ``z_k`` at once.

    ``diags`` holds the main, first and second diagonals of the real symmetric
    pentadiagonal ``A``.  No pivoting: along the contours every shifted matrix
    has a definite real or imaginary part, for which elimination is stable.
    Returns ``d``, ``l1``, ``l2`` of shape ``(len(z), n)`` with
    ``L[i+1, i] = l1[i]`` and ``L[i+2, i] = l2[i]``.
    """
    a0, a1, a2 = diags
    n = a0.size
    z = np.asarray(z, dtype=complex)
    d = np.zeros((z.size, n), dtype=complex)
    l1 = np.zeros_like(d)
    l2 = np.zeros_like(d)
    for i in range(n):
        di = z - a0[i]
        if i >= 1:
            di -= l1[:, i - 1] ** 2 * d[:, i - 1]
        if i >= 2:
            di -= l2[:, i - 2] ** 2 * d[:, i - 2]
        d[:, i] = di
        if i + 1 < n:
            num = -a1[i] - (l2[:, i - 1] * d[:, i - 1] * l1[:, i - 1] if i >= 1 else 0.0)
            l1[:, i] = num / di
        if i + 2 < n:
            l2[:, i] = -a2[i] / di
    return d, l1, l2


def _inverse_upper(d, l1, l2):
    """Upper triangle of ``(L D L^T)^{-1}`` by the backward row recurrence.

    ``L^T X = D^{-1} L^{-1}`` has a lower triangular right-hand side, so for
    ``j > i`` row ``i`` of ``X`` follows from rows ``i+1`` and ``i+2``.
    """
    n = d.size
    x = np.zeros((n, n), dtype=complex)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            row = -l1[i] * x[i + 1, i + 1:]
            if i + 2 < n:
                row[1:] -= l2[i] * x[i + 2, i + 2:]
                row[0] -= l2[i] * x[i + 1, i + 2]
            x[i, i + 1:] = row
            diag = 1.0 / d[i] - l1[i] * row[0]
            if i + 2 < n:
                diag -= l2[i] * row[1]
            x[i, i] = diag
        else:
            x[i, i] = 1.0 / d[i]
    return x


def _resolvent_sum(blocks, S, contour, n_nodes):
    """Trapezoid sum over ``n_nodes`` points offset by a quarter step.

    The real part of the result is the ``2 n_nodes`` rule (the conjugate nodes
    complete it); the imaginary part measures the difference between the
    ``n_nodes`` and ``2 n_nodes`` rules.
    """
    theta = 2 * np.pi * (np.arange(n_nodes) + 0.25) / n_nodes
    z, dz = contour.point(theta)
    weights = S.tail(z) * dz / (1j * n_nodes)
    if contour.shape == "circle":
        weights = -weights  # counterclockwise about the pole = clockwise about the spectrum
    sums = []
    for a in blocks:
        diags = [np.diagonal(a, k).copy() for k in range(3)]
        d, l1, l2 = _ldl_pentadiagonal(diags, z)
        if np.min(np.abs(d)) < 1e-12 * np.max(np.abs(d)):
            raise ConvergenceError("near-singular shifted matrix on the contour")
        acc = np.zeros(a.shape, dtype=complex)
        for k in range(n_nodes):
            x = _inverse_upper(d[k], l1[k], l2[k])
            x *= weights[k]
            acc += x
        acc = acc + np.triu(acc, 1).T
        sums.append(acc)
    return sums


def _scalar_rule_error(S, contour, n, lam_min):
    """Error of the ``n``-node rule on ``tail(lam)`` for sampled ``lam >= lam_min``.

    The resolvent sum acts on each eigenvalue separately, so this bounds the
    matrix error for any spectrum in the sampled range.
    """
    span = contour.center + contour.a - lam_min if contour.shape == "ellipse" else 50.0
    lam = lam_min + np.concatenate([np.linspace(0.0, span + 5.0, 2001),
                                    np.geomspace(span + 5.0, 1e5, 200)])
    if contour.shape == "ellipse":
        # the right end crossing carries weight tail(right) <= tail_tol
        lam = lam[np.abs(lam - contour.center - contour.a) > 0.5]
    theta = 2 * np.pi * (np.arange(n) + 0.25) / n
    z, dz = contour.point(theta)
    w = S.tail(z) * dz / (1j * n) * (-1.0 if contour.shape == "circle" else 1.0)
    # the complex sum, not its real part: the real part is already the 2n rule
    approx = (w[None, :] / (z[None, :] - lam[:, None])).sum(axis=1)
    return float(np.max(np.abs(approx - S.tail(lam))))


def _choose_nodes(S, contour, n_max, tol, lam_min):
    """Smallest multiple of 16 up to ``n_max`` whose half rule is predicted below ``tol``."""
    for n in range(32, n_max, 16):
        if _scalar_rule_error(S, contour, n // 2, lam_min) < 0.1 * tol:
            return n
    return n_max


def funcalc_contour(M: OperatorMatrix, S: SpectralMap, contour: Contour | None = None,
                    n_quad=256, tol=1e-8, delta_pole=0.5) -> OperatorMatrix:
    """``S(M)`` by trapezoid quadrature of ``(1/2 pi i) oint S(z) (z - M)^{-1} dz``.

    ``S`` is split as ``S(inf) + tail``.  The constant part contributes
    ``S(inf) I`` exactly; the tail is integrated along ``contour`` with an
    trapezoid rule of at most ``n_quad`` points, whose difference from the rule
    with half the points must stay below ``tol`` in max-norm.  The point count
    is the smallest one predicted sufficient by the scalar rule error over the
    spectral range.  Each node costs one banded complex
    solve per parity block when ``M`` is reflection symmetric.
    """
    if n_quad < 64 or n_quad % 2:
        raise ValueError("n_quad must be even and at least 64")
    if M.banded is None:
        raise ValueError("contour route needs a banded finite-difference operator")
    lam_min = _lowest_eigenvalue(M)
    _check_lower_bound(lam_min, S)
    if contour is None:
        contour = default_contour(M, S)
    out = S.limit_at_infinity * np.eye(M.size)
    if contour is not None and not S.is_constant:
        for p in S.pole_list:
            if contour.distance_to(p) < delta_pole:
                raise HypothesisError(f"contour passes within {delta_pole} of pole {p}")
            if contour.encloses(p) != (contour.shape == "circle"):
                raise HypothesisError(f"pole {p} on the wrong side of the contour")
        if contour.shape == "ellipse" and contour.center - contour.a >= lam_min:
            raise HypothesisError("contour does not enclose the lowest eigenvalue")
        if contour.shape == "circle" and contour.center + contour.a >= lam_min:
            raise HypothesisError("circle around the pole reaches the spectrum")
        if _is_reflection_symmetric(M):
            mats = _parity_blocks(M)
        else:
            mats = (M.entries,)
        blocks = list(mats)
        n_used = _choose_nodes(S, contour, n_quad, tol, lam_min)
        sums = _resolvent_sum(blocks, S, contour, n_used // 2)
        change = max(float(np.max(np.abs(x.imag))) for x in sums)
        if change > tol:
            raise ConvergenceError(f"contour quadrature changed by {change:.2e} on doubling")
        tail = _unfold(sums[0].real, sums[1].real) if len(sums) == 2 else sums[0].real
        out += tail
    out = 0.5 * (out + out.T)
    return OperatorMatrix(out, "S_of_D", M.grid)


# ---------------------------------------------------------------------------
# Lanczos route


@dataclass(frozen=True)
class LanczosInfo:
    iterations: int
    converged: bool
    breakdown: bool
    last_change: float


def apply_funcalc_lanczos(matvec, S: SpectralMap, v, k_max=60, tol=1e-8,
                          full_output=False, strict=True):
    """Approximate ``S(A) v`` by ``|v| Q_k S(T_k) e_1`` with full reorthogonalization.

    Iteration stops once successive approximations differ by less than
    ``tol * |v|`` on two consecutive steps.  This test cannot detect a Krylov
    space that has not yet reached the part of the spectrum where ``S`` varies
    (for instance white noise against a wide finite-difference spectrum).  A
    breakdown (invariant subspace found) returns the exact subspace result with
    ``breakdown=True``.  When ``strict`` is set, failure to
    converge within ``k_max`` steps raises :class:`ConvergenceError`.
    """
    if k_max > 80:
        raise ValueError("k_max is limited to 80")
    v = np.asarray(v, dtype=float)
    shape = v.shape
    v = v.ravel()
    vnorm = np.linalg.norm(v)
    if vnorm == 0.0:
        out = np.zeros(shape)
        return (out, LanczosInfo(0, True, False, 0.0)) if full_output else out
    if S.is_constant:
        out = (S.beta_minus * v).reshape(shape)
        return (out, LanczosInfo(1, True, False, 0.0)) if full_output else out

    n = v.size
    Q = np.zeros((n, k_max + 1))
    alpha = np.zeros(k_max)
    beta = np.zeros(k_max)
    Q[:, 0] = v / vnorm
    prev = None
    change = np.inf
    small = 0
    breakdown = False
    k = 0
    for k in range(1, k_max + 1):
        w = np.asarray(matvec(Q[:, k - 1].reshape(shape)), dtype=float).ravel()
        alpha[k - 1] = Q[:, k - 1] @ w
        w -= Q[:, :k] @ (Q[:, :k].T @ w)
        w -= Q[:, :k] @ (Q[:, :k].T @ w)
        b = np.linalg.norm(w)
        beta[k - 1] = b
        theta, y = linalg.eigh_tridiagonal(alpha[:k], beta[:k - 1])
        coef = y @ (S(theta) * y[0, :])
        cur = Q[:, :k] @ coef * vnorm
        if prev is not None:
            change = float(np.linalg.norm(cur - prev)) / vnorm
        prev = cur
        if b <= 1e-12 * max(1.0, abs(alpha[k - 1])):
            breakdown = True
            change = 0.0
            break
        small = small + 1 if change < tol else 0
        if small >= 2:
            break
        Q[:, k] = w / b
    converged = breakdown or small >= 2
    if strict and not converged:
        raise ConvergenceError(f"Lanczos did not converge in {k_max} steps (change {change:.2e})")
    out = prev.reshape(shape)
    info = LanczosInfo(k, converged, breakdown, change)
    return (out, info) if full_output else out


# ---------------------------------------------------------------------------
# pinned inverse


def pinned_inverse(M: OperatorMatrix, kernel_vector, rhs, rho=1.0, gap_tol=1e-6):
    """Solve ``M x = P rhs`` on the orthogonal complement of ``kernel_vector``.

    ``P`` is the orthogonal projection off ``kernel_vector`` (weighted inner
    product).  The shifted system ``(M + rho e e^T) x = P rhs`` is solved and the
    result projected.  Raises if ``M`` has a second eigenvalue within
    ``gap_tol`` of zero.
    """
    grid = M.grid
    e = np.asarray(kernel_vector, dtype=float)
    en = grid.norm(e)
    if en == 0.0:
        raise ValueError("kernel_vector must be nonzero")
    e = e / en
    rhs = np.asarray(rhs, dtype=float)

    def proj(u):
        return u - e * grid.inner(e, u)

    b = proj(rhs)
    near = _eigenvalues_near_zero(M, gap_tol)
    if len(near) > 1:
        raise np.linalg.LinAlgError(f"{len(near)} eigenvalues within {gap_tol:g} of zero")
    h = grid.h
    x = linalg.solve(M.entries + rho * h * np.outer(e, e), b, assume_a="sym")
    x = proj(x)
    res = np.max(np.abs(M.matvec(x) - b))
    if res > 1e-8 * max(1.0, np.max(np.abs(b))):
        raise np.linalg.LinAlgError(f"pinned inverse residual {res:.2e}")
    return x


def _eigenvalues_near_zero(M: OperatorMatrix, tol):
    if M.banded is not None:
        return linalg.eig_banded(M.banded, eigvals_only=True, select="v",
                                 select_range=(-tol, tol))
    lam = M.eigensystem.eigenvalues
    return lam[np.abs(lam) <= tol]
