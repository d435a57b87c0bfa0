"""Marker evolution of a closed curve under the reduced normal-velocity law.

Markers move along the outward normal with

    V = -alpha1 kappa + eps^2 (nu lap_s kappa + alpha3 kappa^3)

where ``kappa`` is positive for a counterclockwise circle.  Derivatives are
Fourier-spectral in the marker parameter; after every step the markers are
moved back to equal arclength spacing by evaluating the Fourier interpolant
at the equal-arclength parameters, followed by a high-order exponential filter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .reduction import CoefficientReport, normal_velocity

C_FOURTH = 0.02
C_SECOND = 0.15
# in-run tolerance on the step bound before a run is stopped
BOUND_SLACK = 1.2


class SelfIntersectionError(RuntimeError):
    """The marker polygon crosses itself."""


@dataclass
class CurveState:
    markers: np.ndarray
    T: float = 0.0

    @property
    def n_markers(self):
        return len(self.markers)

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in self.markers:
                w.writerow([repr(float(x)), repr(float(y))])
        return path


def circle(radius, n_markers=128, center=(0.0, 0.0)):
    theta = 2 * np.pi * np.arange(n_markers) / n_markers
    return CurveState(np.column_stack([center[0] + radius * np.cos(theta),
                                       center[1] + radius * np.sin(theta)]))


def ellipse(a, b, n_markers=128):
    theta = 2 * np.pi * np.arange(n_markers) / n_markers
    return CurveState(np.column_stack([a * np.cos(theta), b * np.sin(theta)]))


def perturbed_circle(radius, modes, amplitudes, phases=None, n_markers=256):
    """``r(theta) = R + sum a_m cos(m theta + phase_m)``, then equal-arclength markers."""
    theta = 2 * np.pi * np.arange(n_markers) / n_markers
    phases = np.zeros(len(modes)) if phases is None else np.asarray(phases)
    r = np.full(n_markers, float(radius))
    for m, a, ph in zip(modes, np.broadcast_to(amplitudes, (len(modes),)), phases):
        r = r + a * np.cos(m * theta + ph)
    return CurveState(redistribute(np.column_stack([r * np.cos(theta), r * np.sin(theta)])))


# ---------------------------------------------------------------------------
# spectral geometry


def _wavenumbers(m):
    return np.fft.fftfreq(m, 1.0 / m)


def _derivative(coef, order):
    """Spectral derivative in the parameter ``theta in [0, 2 pi)`` from FFT coefficients."""
    m = coef.shape[0]
    k = _wavenumbers(m)
    factor = (1j * k) ** order
    if m % 2 == 0 and order % 2 == 1:
        factor[m // 2] = 0.0
    return np.fft.ifft(factor * coef)


def geometry(markers):
    """Speed ``|X'|``, curvature, unit outward normal and ``lap_s kappa``."""
    z = markers[:, 0] + 1j * markers[:, 1]
    c = np.fft.fft(z)
    dz = _derivative(c, 1)
    d2z = _derivative(c, 2)
    speed = np.abs(dz)
    kappa = (dz.real * d2z.imag - dz.imag * d2z.real) / speed ** 3
    normal = np.column_stack([dz.imag, -dz.real]) / speed[:, None]
    dk = _derivative(np.fft.fft(kappa), 1).real / speed
    lap = _derivative(np.fft.fft(dk), 1).real / speed
    return speed, kappa, normal, lap


def curvature_and_laplacian(curve: CurveState, check=True, min_markers=64):
    """Per-marker ``(kappa, lap_s kappa)``."""
    if curve.n_markers < min_markers:
        raise ValueError(f"need at least {min_markers} markers")
    if check and self_intersects(curve.markers):
        raise SelfIntersectionError("curve crosses itself")
    _, kappa, _, lap = geometry(curve.markers)
    return kappa, lap


def length_and_area(markers):
    """Spectrally accurate perimeter and enclosed (signed) area."""
    z = markers[:, 0] + 1j * markers[:, 1]
    dz = _derivative(np.fft.fft(z), 1)
    m = len(markers)
    length = float(np.sum(np.abs(dz)) * 2 * np.pi / m)
    area = float(0.5 * np.sum(markers[:, 0] * dz.imag - markers[:, 1] * dz.real) * 2 * np.pi / m)
    return length, area


def _eval_fourier(coef, theta):
    """Evaluate the trigonometric interpolant (Nyquist term split symmetrically)."""
    m = coef.shape[0]
    k = _wavenumbers(m)
    phase = np.exp(1j * np.outer(theta, k))
    if m % 2 == 0:
        phase[:, m // 2] = np.cos(0.5 * m * theta)
    return phase @ coef / m


def redistribute(markers, tol=1e-13, max_iter=20):
    """Move markers to equal arclength on the Fourier interpolant of the curve."""
    m = len(markers)
    z = markers[:, 0] + 1j * markers[:, 1]
    c = np.fft.fft(z)
    speed = np.abs(_derivative(c, 1))
    sc = np.fft.fft(speed)
    mean = sc[0].real / m
    if np.ptp(speed) <= tol * mean:
        return np.array(markers, dtype=float)
    k = _wavenumbers(m)
    # periodic part of the arclength: coefficients sc_k / (i k)
    ic = np.zeros_like(sc)
    nz = k != 0
    ic[nz] = sc[nz] / (1j * k[nz])
    if m % 2 == 0:
        ic[m // 2] = 0.0
    base = _eval_fourier(ic, np.zeros(1)).real[0]
    theta0 = 2 * np.pi * np.arange(m) / m
    theta = theta0.copy()
    for _ in range(max_iter):
        f = mean * theta + _eval_fourier(ic, theta).real - base - mean * theta0
        df = _eval_fourier(sc, theta).real
        step = f / df
        theta -= step
        if np.max(np.abs(step)) < tol:
            break
    w = _eval_fourier(c, theta)
    return np.column_stack([w.real, w.imag])


def spectral_filter(markers, order=36, strength=36.0):
    """Exponential filter ``exp(-strength (|k|/k_max)^order)`` on the marker coordinates.

    Suppresses the near-Nyquist growth produced by repeated resampling; modes
    below half the cutoff are changed by less than ``1e-10``.
    """
    m = len(markers)
    z = markers[:, 0] + 1j * markers[:, 1]
    k = np.abs(_wavenumbers(m)) / (m // 2)
    w = np.fft.ifft(np.exp(-strength * k ** order) * np.fft.fft(z))
    return np.column_stack([w.real, w.imag])


def segment_ratio(markers):
    d = np.diff(np.vstack([markers, markers[:1]]), axis=0)
    ds = np.hypot(d[:, 0], d[:, 1])
    return float(ds.max() / ds.min())


def self_intersects(markers):
    """Segment-segment sweep over non-adjacent pairs of the closed polygon."""
    a = markers
    b = np.roll(markers, -1, axis=0)
    m = len(a)

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    A, B = a[:, None, :], b[:, None, :]
    C, D = a[None, :, :], b[None, :, :]
    o1 = orient(A, B, C)
    o2 = orient(A, B, D)
    o3 = orient(C, D, A)
    o4 = orient(C, D, B)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.indices((m, m))
    gap = np.abs(i - j)
    hit &= (gap > 1) & (gap < m - 1)
    return bool(hit.any())


# ---------------------------------------------------------------------------
# evolution


def velocity(markers, report: CoefficientReport, alpha3=0.0, willmore=True):
    """Normal velocity times outward normal at each marker."""
    _, kappa, normal, lap = geometry(markers)
    if not willmore:
        lap = np.zeros_like(lap)
    v = normal_velocity(report, kappa, lap, alpha3)
    return v[:, None] * normal


def dT_max(curve: CurveState, report: CoefficientReport, willmore=True):
    """RK4 bound for the spectral discretization.

    The largest resolved arclength wavenumber is ``pi/ds``; the bound combines
    ``C_FOURTH ds^4/(eps^2 nu)`` and ``C_SECOND ds^2/|alpha1|`` harmonically.
    """
    length, _ = length_and_area(curve.markers)
    ds = length / curve.n_markers
    rate = abs(report.alpha1) / (C_SECOND * ds ** 2)
    if willmore:
        rate += report.epsilon ** 2 * abs(report.nu) / (C_FOURTH * ds ** 4)
    return 1.0 / rate if rate > 0 else math.inf


@dataclass
class CurveTrace:
    T: list = field(default_factory=list)
    length: list = field(default_factory=list)
    area: list = field(default_factory=list)
    kappa_min: list = field(default_factory=list)
    kappa_max: list = field(default_factory=list)
    event: list = field(default_factory=list)

    def record(self, curve: CurveState, event=""):
        length, area = length_and_area(curve.markers)
        _, kappa, _, _ = geometry(curve.markers)
        self.T.append(float(curve.T))
        self.length.append(length)
        self.area.append(area)
        self.kappa_min.append(float(kappa.min()))
        self.kappa_max.append(float(kappa.max()))
        self.event.append(event)

    def to_csv(self, path, header=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            for line in header or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["T", "length", "area", "kappa_min", "kappa_max", "event"])
            for row in zip(self.T, self.length, self.area, self.kappa_min, self.kappa_max,
                           self.event):
                w.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])
        return path


def evolve(curve: CurveState, report: CoefficientReport, alpha3=0.0, dT=None, n_steps=1,
           willmore=True, record_every=1, check_every=10):
    """Advance ``n_steps`` RK4 steps; returns ``(curve, trace)``.

    A self-intersection found by the periodic sweep ends the run with an
    event record rather than an exception, as does a shrinking curve whose
    step bound has dropped below ``dT``.
    """
    limit = dT_max(curve, report, willmore)
    if dT is None:
        dT = limit
    elif dT > limit * (1 + 1e-12):
        raise ValueError(f"dT={dT} exceeds the stability bound {limit:.4g}")
    trace = CurveTrace()
    trace.record(curve)
    X = np.array(curve.markers, dtype=float)
    T = curve.T

    def f(Y):
        return velocity(Y, report, alpha3, willmore)

    for step in range(1, n_steps + 1):
        k1 = f(X)
        k2 = f(X + 0.5 * dT * k1)
        k3 = f(X + 0.5 * dT * k2)
        k4 = f(X + dT * k3)
        X = spectral_filter(redistribute(X + dT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)))
        T += dT
        if not np.all(np.isfinite(X)):
            trace.record(CurveState(X, T), "non-finite")
            break
        if step % check_every == 0:
            if self_intersects(X):
                trace.record(CurveState(X, T), "self-intersection")
                break
            if dT > dT_max(CurveState(X, T), report, willmore) * BOUND_SLACK:
                trace.record(CurveState(X, T), "step-bound")
                break
        if step % record_every == 0 or step == n_steps:
            trace.record(CurveState(X, T))
    return CurveState(X, T), trace


def circle_radius_squared(report: CoefficientReport, R0, T):
    """Exact ``R(T)^2 = R0^2 - 2 alpha1 T`` for a circle with ``alpha3 = 0``."""
    return R0 ** 2 - 2.0 * report.alpha1 * np.asarray(T)


def curvature_rate(curve: CurveState, report: CoefficientReport, alpha3=0.0):
    """``kappa_T = -(lap_s + kappa^2) V`` along the normal flow.

    Used as a diagnostic identity; the markers themselves move with ``V``.
    """
    speed, kappa, _, lap = geometry(curve.markers)
    v = normal_velocity(report, kappa, lap, alpha3)
    dv = _derivative(np.fft.fft(v), 1).real / speed
    lap_v = _derivative(np.fft.fft(dv), 1).real / speed
    return -(lap_v + kappa ** 2 * v)


# ---------------------------------------------------------------------------
# modes


def radial_modes(markers, modes):
    """``|c_m|`` of ``r(phi)`` about the area centroid, ``phi`` the polar angle.

    Computed as ``(1/2 pi) oint r e^{-i m phi} dphi`` with the trapezoid rule in
    the marker parameter, which is spectrally accurate for smooth curves.
    """
    z = markers[:, 0] + 1j * markers[:, 1]
    dz = _derivative(np.fft.fft(z), 1)
    w = (markers[:, 0] * dz.imag - markers[:, 1] * dz.real)
    area = 0.5 * np.mean(w) * 2 * np.pi
    cx = np.mean(markers[:, 0] * w) * 2 * np.pi / (3 * area)
    cy = np.mean(markers[:, 1] * w) * 2 * np.pi / (3 * area)
    rel = z - (cx + 1j * cy)
    r = np.abs(rel)
    dphi = (np.conj(rel) * dz).imag / r ** 2
    phi = np.angle(rel)
    out = []
    for m in modes:
        out.append(abs(np.mean(r * np.exp(-1j * m * phi) * dphi)))
    return np.array(out)


def predicted_cutoff(report: CoefficientReport, radius):
    """``m_c = R sqrt(-alpha1/(nu eps^2))`` (``nan`` when ``alpha1 >= 0``)."""
    if report.alpha1 >= 0:
        return math.nan
    return radius * math.sqrt(-report.alpha1 / (report.nu * report.epsilon ** 2))


@dataclass
class ModeGrowth:
    modes: np.ndarray
    rates: np.ndarray
    predicted_cutoff: float
    measured_cutoff: int
    T: float

    @property
    def crossing(self):
        """Zero of the rate curve by linear interpolation between neighbouring modes."""
        pos = np.nonzero((self.rates[:-1] > 0) & (self.rates[1:] <= 0))[0]
        if not pos.size:
            return math.nan
        i = pos[-1]
        r0, r1 = self.rates[i], self.rates[i + 1]
        return float(self.modes[i] + r0 / (r0 - r1) * (self.modes[i + 1] - self.modes[i]))

    @property
    def within_one(self):
        return abs(self.measured_cutoff - self.predicted_cutoff) <= 1.0


def mode_growth(report: CoefficientReport, radius=10.0, modes=range(2, 31), amplitude=1e-4,
                T=2.0, n_markers=128, seed=0):
    """Growth rates of small radial modes on a large circle.

    Every mode starts at ``amplitude * radius`` with a seeded random phase; the
    measured cutoff is the largest mode with a positive rate.
    """
    modes = np.array(list(modes))
    rng = np.random.default_rng(seed)
    curve = perturbed_circle(radius, modes, amplitude * radius,
                             rng.uniform(0, 2 * np.pi, len(modes)), n_markers)
    a0 = radial_modes(curve.markers, modes)
    limit = dT_max(curve, report)
    n_steps = int(math.ceil(T / (0.9 * limit)))
    curve, _ = evolve(curve, report, dT=T / n_steps, n_steps=n_steps, record_every=n_steps)
    a1 = radial_modes(curve.markers, modes)
    rates = np.log(a1 / a0) / T
    growing = modes[rates > 0]
    measured = int(growing.max()) if growing.size else 0
    return ModeGrowth(modes, rates, predicted_cutoff(report, radius), measured, T)


# ---------------------------------------------------------------------------
# comparison with the 2D trace


@dataclass
class CrossValidation:
    t_window: tuple
    max_length_discrepancy: float
    slope_pde: float
    slope_curve: float

    @property
    def slope_discrepancy(self):
        return abs(self.slope_pde - self.slope_curve) / abs(self.slope_curve)


def cross_validate(pde_times, pde_lengths, curve_T, curve_lengths, time_scale):
    """Compare interface length against time; ``T = time_scale * t``.

    Returns the maximal relative length difference and the two fitted length
    slopes (per unit ``T``) over the common window.
    """
    T_pde = time_scale * np.asarray(pde_times, dtype=float)
    curve_T = np.asarray(curve_T, dtype=float)
    lo, hi = max(T_pde.min(), curve_T.min()), min(T_pde.max(), curve_T.max())
    if hi <= lo:
        raise ValueError("the traces have disjoint time windows")
    keep = (T_pde >= lo) & (T_pde <= hi)
    lp = np.asarray(pde_lengths, dtype=float)[keep]
    lc = np.interp(T_pde[keep], curve_T, curve_lengths)
    disc = float(np.max(np.abs(lp - lc) / np.abs(lc)))
    sp = float(np.polyfit(T_pde[keep], lp, 1)[0])
    sc = float(np.polyfit(T_pde[keep], lc, 1)[0])
    return CrossValidation((float(lo), float(hi)), disc, sp, sc)
