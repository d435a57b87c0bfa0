from __future__ import annotations

import functools

import pytest

from modalpnls.grid import Grid1D
from modalpnls.model import build_reference_model, front_solve, make_spectral_map
from modalpnls.operators1d import assemble_C, assemble_D
from modalpnls.spectrum1d import assemble_L

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


MAPS = {
    "constant": ("constant", 1.0, 1.0),
    "logistic": ("logistic", 1.0, 2.0),
    "shifted-rational": ("shifted-rational", 1.0, 2.0),
}


@functools.lru_cache(maxsize=None)
def spectral_map(kind):
    return make_spectral_map(*MAPS[kind])


@functools.lru_cache(maxsize=None)
def reference_front(n_nodes=2049, half_width=20.0):
    # g_plus does not depend on mu, so one front serves every mu
    return front_solve(build_reference_model(0.0), Grid1D(half_width, n_nodes))


@functools.lru_cache(maxsize=None)
def operator_C(n_nodes=2049):
    # the kernel residual is a truncation error, so coarse grids get a looser check
    tol = 1e-7 if n_nodes >= 2049 else 1e-6
    return assemble_C(build_reference_model(0.0), reference_front(n_nodes), kernel_tol=tol)


@functools.lru_cache(maxsize=None)
def operator_D(mu, n_nodes=2049):
    return assemble_D(build_reference_model(mu), reference_front(n_nodes))


@functools.lru_cache(maxsize=None)
def block_L(mu, kind, n_nodes=2049):
    return assemble_L(operator_C(n_nodes), operator_D(mu, n_nodes), spectral_map(kind))


@pytest.fixture(scope="session")
def front():
    return reference_front()


@pytest.fixture(scope="session")
def grid(front):
    return front.grid
