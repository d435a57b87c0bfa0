"""Pseudospectral integration of the two-component system on a periodic square.

The state ``U = (p, q)`` evolves by

    p_t = N_-(|U|^2) q,
    q_t = -N_+(|U|^2) p - S(N_-(|U|^2)) q,

with ``N_pm = -eps^2 Lap + g_pm(|U|^2)``.  The Laplacian is applied in Fourier
space; ``S(N_-)`` uses Lanczos with the FFT matvec (exactly ``beta q`` for a
constant map).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.spatial import cKDTree
from skimage import measure

from .model import FrontProfile, ModelSpec, SpectralMap
from .operators1d import apply_funcalc_lanczos

BLOWUP_BOUND = 4.0


class BlowUpError(RuntimeError):
    """The solution left the bounded regime (``max|U| > 4``)."""


class InitializationError(ValueError):
    """The seed curve cannot be embedded as a front."""


@dataclass(frozen=True)
class Grid2D:
    """Periodic square ``[-L/2, L/2)^2`` with ``n`` nodes per side (``L = 4 pi``)."""

    n: int = 256
    side: float = 4 * math.pi

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError("n must be a power of two >= 8")

    @property
    def h(self):
        return self.side / self.n

    @property
    def x(self):
        return -0.5 * self.side + self.h * np.arange(self.n)

    @property
    def wavenumbers(self):
        return 2 * np.pi * sfft.fftfreq(self.n, d=self.h)

    @property
    def k_max(self):
        return math.pi / self.h

    def mesh(self):
        """``(X, Y)`` with ``X[i, j] = x[j]`` and ``Y[i, j] = x[i]``."""
        return np.meshgrid(self.x, self.x)

    def k_squared(self):
        k = self.wavenumbers
        return k[None, :] ** 2 + k[:, None] ** 2


@dataclass
class State2D:
    p: np.ndarray
    q: np.ndarray
    t: float = 0.0

    def sup_norm(self):
        return float(np.sqrt(np.max(self.p ** 2 + self.q ** 2)))

    def modulus(self):
        return np.sqrt(self.p ** 2 + self.q ** 2)


class Solver2D:
    """Right-hand side and time stepping for one ``(model, S, grid)`` triple."""

    def __init__(self, grid: Grid2D, model: ModelSpec, S: SpectralMap, dealias=False,
                 lanczos_k_max=60, lanczos_tol=1e-8):
        self.grid = grid
        self.model = model
        self.S = S
        self.symbol = model.epsilon ** 2 * grid.k_squared()
        self.rsymbol = np.ascontiguousarray(self.symbol[:, : grid.n // 2 + 1])
        self.dealias = dealias
        if dealias:
            k = np.abs(grid.wavenumbers)
            keep = k <= (2.0 / 3.0) * grid.k_max
            self.mask = keep[None, :] & keep[:, None]
        self.lanczos_k_max = lanczos_k_max
        self.lanczos_tol = lanczos_tol

    # Fourier helpers
    def neg_eps2_lap(self, u):
        """``-eps^2 Lap u`` for a real field."""
        a = sfft.rfft2(u)
        a *= self.rsymbol
        return sfft.irfft2(a, s=u.shape, overwrite_x=True)

    def _filter(self, u):
        a = sfft.rfft2(u)
        a *= self.mask[:, : self.grid.n // 2 + 1]
        return sfft.irfft2(a, s=u.shape, overwrite_x=True)

    def apply_M(self, pot_minus, q):
        """``S(-eps^2 Lap + pot_minus) q`` (Lanczos unless ``S`` is constant)."""
        if self.S.is_constant:
            return self.S.beta_minus * q

        def matvec(v):
            return self.neg_eps2_lap(v) + pot_minus * v

        return apply_funcalc_lanczos(matvec, self.S, q, k_max=self.lanczos_k_max,
                                     tol=self.lanczos_tol)

    def rhs(self, p, q):
        """Rates ``(N_- q, -N_+ p - S(N_-) q)``."""
        m = self.model
        if self.dealias:
            p, q = self._filter(p), self._filter(q)
        s = p * p + q * q
        gp = m.g_plus(s)
        gm = m.g_minus(s)
        n_minus_q = self.neg_eps2_lap(q) + gm * q
        n_plus_p = self.neg_eps2_lap(p) + gp * p
        dq = -n_plus_p - self.apply_M(gm, q)
        if self.dealias:
            return self._filter(n_minus_q), self._filter(dq)
        return n_minus_q, dq

    def dt_max(self, state: State2D | None = None):
        """``0.8 / (eps^2 k_max^2 + beta_+ + max|g_pm|)`` over the state's range."""
        s_hi = 1.0 if state is None else max(1.0, float(np.max(state.p ** 2 + state.q ** 2)))
        s = np.linspace(0.0, s_hi, 64)
        gmax = max(np.max(np.abs(self.model.g_plus(s))), np.max(np.abs(self.model.g_minus(s))))
        return 0.8 / (self.model.epsilon ** 2 * self.grid.k_max ** 2 + self.S.beta_plus + gmax)

    def step_rk4(self, state: State2D, dt, check_dt=True) -> State2D:
        if check_dt and dt > self.dt_max(state) * (1 + 1e-12):
            raise ValueError(f"dt={dt} exceeds the stability bound {self.dt_max(state):.4g}")
        p, q = state.p, state.q
        k1p, k1q = self.rhs(p, q)
        k2p, k2q = self.rhs(p + 0.5 * dt * k1p, q + 0.5 * dt * k1q)
        k3p, k3q = self.rhs(p + 0.5 * dt * k2p, q + 0.5 * dt * k2q)
        k4p, k4q = self.rhs(p + dt * k3p, q + dt * k3q)
        out = State2D(p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p),
                      q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q), state.t + dt)
        sup = out.sup_norm()
        if not np.isfinite(sup) or sup > BLOWUP_BOUND:
            raise BlowUpError(f"max|U| = {sup:.3g} at t = {out.t:.4g}")
        return out

    def integrate(self, state: State2D, t_end, dt) -> State2D:
        n_steps = max(1, int(math.ceil((t_end - state.t) / dt - 1e-12)))
        dt = (t_end - state.t) / n_steps
        for _ in range(n_steps):
            state = self.step_rk4(state, dt)
        return state


# ---------------------------------------------------------------------------
# initial data


def signed_distance(grid: Grid2D, markers, return_index=False):
    """Signed distance to a closed polyline (positive outside).

    With ``return_index`` the index of the marker segment nearest to each
    grid point is returned as well.
    """
    markers = np.asarray(markers, dtype=float)
    # densify so the nearest vertex approximates the nearest point to ~h/20
    seg = np.roll(markers, -1, axis=0) - markers
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    sub = max(1, int(math.ceil(seg_len.max() / (grid.h / 20))))
    t = np.arange(sub) / sub
    dense = (markers[:, None, :] + t[None, :, None] * seg[:, None, :]).reshape(-1, 2)
    X, Y = grid.mesh()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    dist, idx = cKDTree(dense).query(pts)
    inside = measure.points_in_poly(pts, markers)
    d = np.where(inside, -dist, dist).reshape(X.shape)
    if return_index:
        return d, (idx // sub).reshape(X.shape)
    return d


def marker_curvature(markers):
    """Spectral curvature of a closed marker curve, positive for a convex curve."""
    markers = np.asarray(markers, dtype=float)
    n = markers.shape[0]
    k = 1j * sfft.fftfreq(n, 1.0 / n)
    z = markers[:, 0] + 1j * markers[:, 1]
    dz = sfft.ifft(k * sfft.fft(z))
    d2z = sfft.ifft(k * k * sfft.fft(z))
    kappa = np.imag(np.conj(dz) * d2z) / np.abs(dz) ** 3
    # orient counterclockwise
    area = 0.5 * np.sum(markers[:, 0] * np.roll(markers[:, 1], -1)
                        - np.roll(markers[:, 0], -1) * markers[:, 1])
    return kappa if area > 0 else -kappa


def _check_embeddable(grid: Grid2D, markers, inner):
    half = 0.5 * grid.side
    if np.max(np.abs(markers)) > half - inner:
        raise InitializationError("curve closer than 5 eps to the periodic boundary")
    seg = np.roll(markers, -1, axis=0) - markers
    ds = np.hypot(seg[:, 0], seg[:, 1])
    s = np.concatenate([[0.0], np.cumsum(ds)[:-1]])
    total = ds.sum()
    diff = np.abs(markers[:, None, :] - markers[None, :, :])
    dist = np.hypot(diff[..., 0], diff[..., 1])
    sep = np.abs(s[:, None] - s[None, :])
    arc = np.minimum(sep, total - sep)
    if np.any((arc > math.pi * inner) & (dist < 2 * inner)):
        raise InitializationError("curve folds back within the inner region")


def front_lookup(front: FrontProfile, z):
    """``phi(z)`` by linear interpolation, saturating at +-1 beyond the 1D grid."""
    return np.interp(z, front.grid.nodes, front.values, left=-1.0, right=1.0)


def init_from_curve(grid: Grid2D, markers, front: FrontProfile, epsilon, inner_width=5.0,
                    corrector=None):
    """``p = phi(d/eps)`` with ``d`` the signed distance (interior -1), ``q = 0``.

    ``corrector = (p1_bar, q1_bar)`` on the front grid adds the first inner
    correction ``eps kappa (p1_bar, q1_bar)(d/eps)``, with ``kappa`` the
    curvature at the nearest marker.  This removes the initial layer in which
    ``q`` relaxes from zero.
    """
    markers = np.asarray(markers, dtype=float)
    _check_embeddable(grid, markers, inner_width * epsilon)
    d, nearest = signed_distance(grid, markers, return_index=True)
    z = d / epsilon
    p = front_lookup(front, z)
    q = np.zeros_like(p)
    if corrector is not None:
        scale = epsilon * marker_curvature(markers)[nearest]
        nodes = front.grid.nodes
        p = p + scale * np.interp(z, nodes, corrector[0], left=0.0, right=0.0)
        q = scale * np.interp(z, nodes, corrector[1], left=0.0, right=0.0)
    return State2D(p, q, 0.0)


def seeded_circle(radius, n_markers=512, seed=0, amplitude=0.0, modes=(2, 8)):
    """Circle markers with an optional random radial perturbation over ``modes``."""
    theta = 2 * np.pi * np.arange(n_markers) / n_markers
    r = np.full(n_markers, float(radius))
    if amplitude:
        rng = np.random.default_rng(seed)
        for m in range(modes[0], modes[1] + 1):
            a, ph = rng.uniform(0, amplitude), rng.uniform(0, 2 * np.pi)
            r += a * np.cos(m * theta + ph)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


# ---------------------------------------------------------------------------
# interface extraction


@dataclass
class ContourInfo:
    polylines: list
    length: float
    closed: bool
    radius: float = math.nan
    radius_residual: float = math.nan


def fit_circle(points):
    """Algebraic least-squares circle fit; returns ``(xc, yc, R, rms residual)``."""
    x, y = points[:, 0], points[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x * x + y * y
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    xc, yc = 0.5 * c[0], 0.5 * c[1]
    R = math.sqrt(c[2] + xc * xc + yc * yc)
    res = float(np.sqrt(np.mean((np.hypot(x - xc, y - yc) - R) ** 2)))
    return xc, yc, R, res


def extract_interface(grid: Grid2D, p, fit=True) -> ContourInfo:
    """Zero contour of ``p`` (marching squares) in physical coordinates."""
    raw = measure.find_contours(p, 0.0)
    lines = []
    total = 0.0
    closed = bool(raw)
    x0 = -0.5 * grid.side
    for c in raw:
        # rows index y, columns index x
        xy = np.column_stack([x0 + grid.h * c[:, 1], x0 + grid.h * c[:, 0]])
        lines.append(xy)
        d = np.diff(xy, axis=0)
        total += float(np.sum(np.hypot(d[:, 0], d[:, 1])))
        closed = closed and bool(np.allclose(c[0], c[-1]))
    info = ContourInfo(lines, total, closed)
    if fit and len(lines) == 1 and closed and len(lines[0]) >= 5:
        _, _, info.radius, info.radius_residual = fit_circle(lines[0])
    return info


@dataclass
class InterfaceTrace:
    times: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    radius_residuals: list = field(default_factory=list)
    polylines: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def record(self, t, info: ContourInfo, keep_polyline=True):
        if self.times and len(info.polylines) != self._last_count:
            self.events.append((float(t), f"contour count {self._last_count} -> {len(info.polylines)}"))
        self._last_count = len(info.polylines)
        self.times.append(float(t))
        self.lengths.append(info.length)
        self.radii.append(info.radius)
        self.radius_residuals.append(info.radius_residual)
        if keep_polyline:
            self.polylines[float(t)] = info.polylines

    def as_arrays(self):
        return (np.array(self.times), np.array(self.lengths), np.array(self.radii),
                np.array(self.radius_residuals))

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t", "length", "radius", "radius_residual"])
            for row in zip(self.times, self.lengths, self.radii, self.radius_residuals):
                w.writerow([repr(float(v)) for v in row])
            for t, msg in self.events:
                fh.write(f"# event t={t!r}: {msg}\n")
        return path


def run_and_trace(solver: Solver2D, state: State2D, t_end, snapshot_every, dt=None,
                  callback=None):
    """Integrate to ``t_end`` recording the interface every ``snapshot_every`` time units.

    ``callback(state)`` is invoked at each snapshot (used for field dumps).
    Returns ``(final_state, trace)``.
    """
    if dt is None:
        dt = solver.dt_max(state)
    trace = InterfaceTrace()
    trace.record(state.t, extract_interface(solver.grid, state.p))
    if callback:
        callback(state)
    n_snap = int(round((t_end - state.t) / snapshot_every))
    for _ in range(n_snap):
        state = solver.integrate(state, state.t + snapshot_every, dt)
        trace.record(state.t, extract_interface(solver.grid, state.p))
        if callback:
            callback(state)
    return state, trace


def shrink_rate(trace: InterfaceTrace, t_min=0.0):
    """Least-squares slope of ``R(t)^2`` over snapshots with ``t >= t_min``."""
    t, _, r, _ = trace.as_arrays()
    keep = (t >= t_min) & np.isfinite(r)
    if keep.sum() < 2:
        raise ValueError("not enough fitted radii")
    return float(np.polyfit(t[keep], r[keep] ** 2, 1)[0])


# ---------------------------------------------------------------------------
# output


def write_field(path, field_, meta):
    """Raw little-endian float64 row-major dump with a JSON sidecar."""
    path = Path(path)
    np.ascontiguousarray(field_, dtype="<f8").tofile(path)
    side = dict(meta, shape=list(field_.shape), dtype="float64", byteorder="little",
                order="row-major")
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def read_field(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return np.fromfile(path, dtype="<f8").reshape(meta["shape"]), meta


def write_pgm(path, field_, vmax=None):
    """Binary 8-bit portable graymap of a nonnegative field."""
    vmax = float(np.max(field_)) if vmax is None else vmax
    img = np.clip(np.round(255 * np.asarray(field_) / max(vmax, 1e-300)), 0, 255).astype(np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img[::-1].tobytes())
    return path
