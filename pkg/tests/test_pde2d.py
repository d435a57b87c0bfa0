from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import linalg

from conftest import block_L, reference_front, spectral_map
from modalpnls.model import ModelSpec, build_reference_model
from modalpnls.pde2d import (BlowUpError, ContourInfo, Grid2D, InitializationError, InterfaceTrace,
                             Solver2D, State2D, extract_interface, fit_circle, init_from_curve,
                             marker_curvature, read_field, run_and_trace, seeded_circle, shrink_rate,
                             signed_distance, write_field, write_pgm)
from modalpnls.reduction import compute_alpha1, compute_U1


def _linear_model(a_plus, a_minus, epsilon=0.1):
    # constant potentials make the system linear and diagonal in Fourier space
    return ModelSpec((a_plus,), (a_minus,), 0.0, epsilon, a_minus - 1, a_plus - 1)


def test_grid_properties():
    g = Grid2D(64)
    assert g.h == pytest.approx(4 * np.pi / 64)
    assert g.x[0] == pytest.approx(-2 * np.pi)
    X, Y = g.mesh()
    assert X[0, 5] == g.x[5] and Y[5, 0] == g.x[5]
    with pytest.raises(ValueError):
        Grid2D(100)


def test_uniform_states_are_equilibria():
    sol = Solver2D(Grid2D(32), build_reference_model(0.02), spectral_map("logistic"))
    one = np.ones((32, 32))
    dp, dq = sol.rhs(one, 0 * one)
    assert np.max(np.abs(dp)) == 0 and np.max(np.abs(dq)) < 1e-14


def test_constant_map_applies_scalar():
    sol = Solver2D(Grid2D(32), build_reference_model(0.0), spectral_map("constant"))
    q = np.random.default_rng(0).standard_normal((32, 32))
    assert np.array_equal(sol.apply_M(np.zeros_like(q), q), q)


def test_laplacian_symbol():
    g = Grid2D(32)
    sol = Solver2D(g, build_reference_model(0.0), spectral_map("constant"))
    X, Y = g.mesh()
    u = np.cos(2 * X) * np.sin(3 * Y / 2)
    assert np.allclose(sol.neg_eps2_lap(u), 0.01 * (4 + 2.25) * u, atol=1e-13)


@pytest.mark.parametrize("kind", ["constant", "logistic"])
def test_linear_modes_propagate_exactly(kind):
    g = Grid2D(32)
    S = spectral_map(kind)
    a_p, a_m = 2.0, 0.5
    sol = Solver2D(g, _linear_model(a_p, a_m), S)
    X, Y = g.mesh()
    kx, ky = 3.0, 1.5
    u0 = np.cos(kx * X + ky * Y)
    # exact propagator of the 2x2 symbol
    sigma = 0.01 * (kx * kx + ky * ky)
    A = np.array([[0.0, sigma + a_m], [-(sigma + a_p), -float(S(sigma + a_m))]])
    t_end = 2.0
    E = linalg.expm(A * t_end)
    state = sol.integrate(State2D(u0, 0.0 * u0), t_end, 0.01)
    assert np.max(np.abs(state.p - E[0, 0] * u0)) < 1e-9
    assert np.max(np.abs(state.q - E[1, 0] * u0)) < 1e-9


def test_rk4_is_fourth_order():
    g = Grid2D(32)
    sol = Solver2D(g, build_reference_model(0.05), spectral_map("constant"))
    X, Y = g.mesh()
    s0 = State2D(np.tanh(np.hypot(X, Y) - 3.0), 0.1 * np.exp(-X ** 2 - Y ** 2))
    ref = sol.integrate(s0, 1.0, 0.0125)
    errs = [np.max(np.abs(sol.integrate(s0, 1.0, dt).p - ref.p)) for dt in (0.1, 0.05)]
    assert math.log2(errs[0] / errs[1]) > 3.7


def test_lanczos_matches_dense_slice():
    # q and the potential depend on x only, so S(N_-) reduces to a 1D periodic matrix
    g = Grid2D(64)
    S = spectral_map("logistic")
    sol = Solver2D(g, build_reference_model(0.0), S)
    x = g.x
    pot = 0.5 + 0.3 * np.cos(x)
    f = np.exp(np.sin(x))
    q = np.tile(f, (64, 1))
    out = sol.apply_M(np.tile(pot, (64, 1)), q)
    F = np.fft.fft(np.eye(64), axis=0)
    lap = np.real(np.fft.ifft(0.01 * g.wavenumbers[:, None] ** 2 * F, axis=0))
    lam, vec = linalg.eigh(0.5 * (lap + lap.T) + np.diag(pot))
    expect = (vec * S(lam)) @ vec.T @ f
    assert np.max(np.abs(out - expect[None, :])) < 1e-7


def test_dealias_only_changes_unresolved_scales():
    g = Grid2D(64)
    model = build_reference_model(0.05)
    X, Y = g.mesh()
    s0 = State2D(np.tanh(np.hypot(X, Y) - 3.0), np.zeros((64, 64)))
    a = Solver2D(g, model, spectral_map("constant")).integrate(s0, 0.5, 0.02)
    b = Solver2D(g, model, spectral_map("constant"), dealias=True).integrate(s0, 0.5, 0.02)
    diff = np.max(np.abs(a.p - b.p))
    assert 0 < diff < 1e-2


def test_step_checks():
    g = Grid2D(32)
    sol = Solver2D(g, build_reference_model(0.0), spectral_map("constant"))
    s0 = State2D(np.ones((32, 32)), np.zeros((32, 32)))
    with pytest.raises(ValueError):
        sol.step_rk4(s0, 10 * sol.dt_max(s0))
    with pytest.raises(BlowUpError):
        sol.step_rk4(State2D(5 * s0.p, s0.q), 1e-4)


def test_signed_distance_of_circle():
    g = Grid2D(64)
    d = signed_distance(g, seeded_circle(3.0, 2048))
    X, Y = g.mesh()
    assert np.max(np.abs(d - (np.hypot(X, Y) - 3.0))) < 5e-3


def test_init_and_extract_circle():
    g = Grid2D(128)
    state = init_from_curve(g, seeded_circle(3.0), reference_front(), 0.1)
    assert state.p.min() == pytest.approx(-1.0, abs=1e-6)
    info = extract_interface(g, state.p)
    assert len(info.polylines) == 1 and info.closed
    assert info.radius == pytest.approx(3.0, abs=1e-3)
    assert info.length == pytest.approx(2 * np.pi * 3.0, rel=1e-3)


def test_init_rejects_curves_near_the_boundary():
    with pytest.raises(InitializationError):
        init_from_curve(Grid2D(64), seeded_circle(6.0), reference_front(), 0.1)


def test_seeded_circle_is_reproducible():
    a = seeded_circle(3.0, seed=1, amplitude=0.02)
    b = seeded_circle(3.0, seed=1, amplitude=0.02)
    c = seeded_circle(3.0, seed=2, amplitude=0.02)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_fit_circle_exact():
    t = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    pts = np.column_stack([1 + 2 * np.cos(t), -0.5 + 2 * np.sin(t)])
    xc, yc, R, res = fit_circle(pts)
    assert (xc, yc, R) == pytest.approx((1.0, -0.5, 2.0))
    assert res < 1e-12


def test_shrink_rate_and_events(tmp_path):
    trace = InterfaceTrace()
    for t in range(6):
        n = 1 if t < 5 else 0
        trace.record(t, ContourInfo([np.zeros((2, 2))] * n, 1.0, True, math.sqrt(9 - 0.5 * t)))
    assert shrink_rate(trace) == pytest.approx(-0.5)
    assert len(trace.events) == 1
    text = trace.to_csv(tmp_path / "t.csv").read_text()
    assert "# event t=5.0" in text


def test_field_io(tmp_path):
    u = np.random.default_rng(0).standard_normal((8, 16))
    path = write_field(tmp_path / "p.f64", u, {"t": 1.5})
    back, meta = read_field(path)
    assert np.array_equal(back, u) and meta["t"] == 1.5 and meta["shape"] == [8, 16]
    pgm = write_pgm(tmp_path / "m.pgm", np.abs(u))
    assert pgm.read_bytes().startswith(b"P5\n16 8\n255\n")
    assert len(pgm.read_bytes()) == len(b"P5\n16 8\n255\n") + 128


def _coarse_run(mu, t_end=12.0):
    g = Grid2D(128)
    fr = reference_front()
    L = block_L(mu, "constant", 2049)
    u1 = compute_U1(L, fr, compute_alpha1(L, fr))
    sol = Solver2D(g, build_reference_model(mu), spectral_map("constant"))
    markers = seeded_circle(3.0, seed=1, amplitude=0.02)
    s0 = init_from_curve(g, markers, fr, 0.1, corrector=(u1.p1_bar, u1.q1_bar))
    return run_and_trace(sol, s0, t_end, 2.0)


def test_marker_curvature():
    t = 2 * np.pi * np.arange(256) / 256
    ellipse = np.column_stack([2 * np.cos(t), np.sin(t)])
    exact = 2.0 / (4 * np.sin(t) ** 2 + np.cos(t) ** 2) ** 1.5
    assert np.max(np.abs(marker_curvature(ellipse) - exact)) < 1e-10
    assert np.max(np.abs(marker_curvature(ellipse[::-1]) - exact[::-1])) < 1e-10


def test_corrector_seeds_q():
    g = Grid2D(64)
    fr = reference_front()
    prof = (np.zeros(fr.grid.n_nodes), fr.derivative)
    s = init_from_curve(g, seeded_circle(3.0), fr, 0.1, corrector=prof)
    plain = init_from_curve(g, seeded_circle(3.0), fr, 0.1)
    assert np.array_equal(s.p, plain.p)
    # q = eps kappa phi'(d/eps) peaks at eps/(3 sqrt 2) on the circle R = 3
    assert np.max(s.q) == pytest.approx(0.1 / 3 / math.sqrt(2), rel=0.05)


def test_run_is_deterministic():
    a, ta = _coarse_run(0.05, 2.0)
    b, tb = _coarse_run(0.05, 2.0)
    assert np.array_equal(a.p, b.p) and ta.lengths == tb.lengths


@pytest.mark.parametrize("mu", [-0.05, 0.05])
def test_coarse_length_monotone(mu):
    # the corrector removes the initial layer, so the first step counts too
    _, trace = _coarse_run(mu)
    d = np.diff(trace.lengths)
    assert np.all(d < 0) if mu > 0 else np.all(d > 0)
