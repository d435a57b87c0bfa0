"""Command-line entry point: ``modalpnls <command> [--config FILE] [overrides]``.

Every output file starts with a header block holding the artifact version and
the fully resolved configuration, so reruns with the same configuration are
byte-identical.  Exit codes: 0 pass, 2 invariant violation, 3 numerical
failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .grid import Grid1D
from .model import (MU_WINDOW, SPECTRAL_KINDS, ConvergenceError, HypothesisError,
                    build_reference_model, front_solve, make_spectral_map)

log = logging.getLogger("modalpnls")

EXIT_OK, EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "MODALPNLS_OUTPUT_ROOT"
COMMANDS = ("front", "spectrum", "coeffs", "simulate2d", "curveflow", "sweep")


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str = "front"
    mu: float = 0.05
    epsilon: float = 0.1
    s_kind: str = "constant"
    beta_minus: float = 1.0
    beta_plus: float = 1.0
    half_width: float = 20.0
    n_z: int = 2049
    n_2d: int = 256
    t_end: float = 200.0
    dt: float | None = None
    snapshot_every: float = 10.0
    seed: int = 0
    radius: float = 3.0
    perturbation: float = 0.02
    dealias: bool = False
    well_prepared: bool = True
    mu_list: list = field(default_factory=lambda: [-0.05, -0.02, -0.01, 0.01, 0.02, 0.05])
    with_gap: bool = False
    with_u2: bool = False
    alpha3: float = 0.0
    n_markers: int = 128
    curve_T: float = 20.0
    mode_test: bool = False
    pde_trace: str | None = None
    time_scale: float | None = None
    sweep_command: str = "coeffs"
    output: str = "out"

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        mus = [self.mu] + list(self.mu_list)
        if any(not abs(float(m)) <= MU_WINDOW for m in mus):
            raise ConfigError(f"mu outside the window |mu| <= {MU_WINDOW}")
        if not 0.0 < self.epsilon <= 0.5:
            raise ConfigError("epsilon must lie in (0, 0.5]")
        if self.s_kind not in SPECTRAL_KINDS:
            raise ConfigError(f"s_kind must be one of {SPECTRAL_KINDS}")
        if not 0.0 < self.beta_minus <= self.beta_plus:
            raise ConfigError("need 0 < beta_minus <= beta_plus")
        if self.n_z % 2 == 0 or self.n_z < 5:
            raise ConfigError("n_z must be odd and >= 5")
        if self.n_2d < 8 or self.n_2d & (self.n_2d - 1):
            raise ConfigError("n_2d must be a power of two")
        if self.t_end <= 0 or self.snapshot_every <= 0 or self.curve_T <= 0:
            raise ConfigError("times must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.n_markers < 64:
            raise ConfigError("n_markers must be >= 64")
        if self.sweep_command not in COMMANDS or self.sweep_command == "sweep":
            raise ConfigError("sweep_command must name a single-run command")
        return self

    def header(self):
        resolved = dataclasses.asdict(self)
        resolved.pop("output")
        return [f"modalpnls {__version__}",
                "config " + json.dumps(resolved, sort_keys=True, separators=(",", ":"))]


# ---------------------------------------------------------------------------
# configuration


def build_parser():
    p = argparse.ArgumentParser(prog="modalpnls", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", dest="output", help="output directory (relative to the output root)")
    p.add_argument("-v", "--verbose", action="store_true")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("command", "output"):
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "mu_list":
            p.add_argument(flag, type=float, nargs="+", default=None)
        elif f.type in ("bool",):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name in ("n_z", "n_2d", "seed", "n_markers"):
            p.add_argument(flag, type=int, default=None)
        elif f.name in ("s_kind", "pde_trace", "sweep_command"):
            p.add_argument(flag, default=None)
        else:
            p.add_argument(flag, type=float, default=None)
    return p


def resolve_config(args) -> RunConfig:
    """Defaults, then the JSON file, then command-line flags."""
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    values["command"] = args.command
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def output_dir(cfg: RunConfig):
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    out = root / cfg.output
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, header, payload):
    body = {"header": header, **payload}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True, default=float) + "\n")


def read_table(path):
    """Columns of a CSV file written by this package (leading ``#`` lines skipped)."""
    with Path(path).open(encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    cols = {name: [] for name in reader.fieldnames}
    for row in reader:
        for name in cols:
            cols[name].append(row[name])
    out = {}
    for name, vals in cols.items():
        try:
            out[name] = np.array(vals, dtype=float)
        except ValueError:
            out[name] = np.array(vals)
    return out


def _spectral_map(cfg):
    if cfg.s_kind == "constant":
        return make_spectral_map("constant", cfg.beta_minus, cfg.beta_minus)
    return make_spectral_map(cfg.s_kind, cfg.beta_minus, cfg.beta_plus)


def _front(cfg, model):
    if cfg.half_width < 15:
        log.warning("half-width %.3g < 15 truncates the front tails", cfg.half_width)
        raise ConfigError("half_width must be >= 15 for the front solve")
    return front_solve(model, Grid1D(cfg.half_width, cfg.n_z))


# ---------------------------------------------------------------------------
# commands


def cmd_front(cfg: RunConfig, out: Path):
    model = build_reference_model(cfg.mu, cfg.epsilon)
    front = _front(cfg, model)
    header = cfg.header()
    front.to_csv(out / "front.csv", header)
    err = float(np.max(np.abs(front.values - np.tanh(front.grid.nodes / math.sqrt(2.0)))))
    summary = {"residual": front.residual_norm, "iterations": front.iterations,
               "max_error_vs_tanh": err}
    _write_json(out / "front_summary.json", header, summary)
    if front.residual_norm >= 1e-9:
        raise InvariantViolation(f"front residual {front.residual_norm:.2e}")
    return summary


def _operators(cfg, mu):
    from .operators1d import assemble_C, assemble_D
    from .spectrum1d import assemble_L

    model = build_reference_model(mu, cfg.epsilon)
    front = _front(cfg, model)
    S = _spectral_map(cfg)
    L = assemble_L(assemble_C(model, front), assemble_D(model, front), S)
    return model, front, S, L


def cmd_spectrum(cfg: RunConfig, out: Path):
    from .spectrum1d import (SpectralInvariantError, fredholm_boundary, full_spectrum,
                             kernel_pair)

    model, front, S, L = _operators(cfg, cfg.mu)
    header = cfg.header()
    rep = full_spectrum(L, model)
    kp = kernel_pair(L, front.derivative)
    rep.kernel_residuals = {"kernel_residual": kp.residual,
                            "adjoint_residual": kp.adjoint_residual,
                            "adjoint_kind": "psi" if kp.mu_zero else "D^-1 S(D) phi'"}
    rep.to_csv(out / "spectrum.csv", header)
    k = np.linspace(0.0, 10.0, 201)
    lam = fredholm_boundary(model, S, k)
    with (out / "fredholm.csv").open("w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("k,re_plus,im_plus,re_minus,im_minus\n")
        for kk, lp, lm in zip(k, lam[0], lam[1]):
            fh.write(f"{kk!r},{lp.real!r},{lp.imag!r},{lm.real!r},{lm.imag!r}\n")
    summary = rep.summary()
    _write_json(out / "spectrum_summary.json", header, summary)
    if not kp.mu_zero:
        try:
            rep.check()
        except SpectralInvariantError as exc:
            raise InvariantViolation(str(exc)) from exc
    return summary


def cmd_coeffs(cfg: RunConfig, out: Path):
    from .reduction import SignViolation, coefficient_report, write_sweep_csv
    from .spectrum1d import full_spectrum, kernel_pair

    reports = []
    for mu in cfg.mu_list:
        if mu == 0:
            log.warning("skipping mu = 0 (alpha1 vanishes; use one-sided limits)")
            continue
        model, front, S, L = _operators(cfg, mu)
        kp = kernel_pair(L, front.derivative)
        rep = coefficient_report(L, model, front, kp, with_U2=cfg.with_u2)
        if cfg.with_gap:
            rep.gap = full_spectrum(L, model).gap
        reports.append(rep)
    write_sweep_csv(reports, out / "coeffs.csv", cfg.header())
    try:
        for r in reports:
            r.check()
    except SignViolation as exc:
        raise InvariantViolation(str(exc)) from exc
    return {"rows": len(reports)}


def cmd_simulate2d(cfg: RunConfig, out: Path):
    from .pde2d import (Grid2D, Solver2D, init_from_curve, run_and_trace, seeded_circle,
                        write_field, write_pgm)

    from .reduction import compute_alpha1, compute_U1

    model, front, S, L = _operators(cfg, cfg.mu)
    grid = Grid2D(cfg.n_2d)
    solver = Solver2D(grid, model, S, dealias=cfg.dealias)
    markers = seeded_circle(cfg.radius, 512, seed=cfg.seed, amplitude=cfg.perturbation)
    corrector = None
    if cfg.well_prepared:
        u1 = compute_U1(L, front, compute_alpha1(L, front))
        corrector = (u1.p1_bar, u1.q1_bar)
    state = init_from_curve(grid, markers, front, cfg.epsilon, corrector=corrector)
    header = cfg.header()
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)

    def dump(st):
        tag = f"t{st.t:010.4f}"
        meta = {"header": header, "n": grid.n, "side": grid.side, "t": st.t}
        write_field(snap_dir / f"p_{tag}.f64", st.p, dict(meta, field="p"))
        write_field(snap_dir / f"q_{tag}.f64", st.q, dict(meta, field="q"))
        write_pgm(snap_dir / f"modulus_{tag}.pgm", st.modulus(), vmax=1.5)

    dt = cfg.dt if cfg.dt is not None else solver.dt_max(state)
    if dt > solver.dt_max(state):
        raise ConfigError(f"dt={dt} exceeds the stability bound {solver.dt_max(state):.4g}")
    _, trace = run_and_trace(solver, state, cfg.t_end, cfg.snapshot_every, dt, callback=dump)
    trace.to_csv(out / "trace.csv", header)
    lengths = np.asarray(trace.lengths)
    d = np.diff(lengths)
    summary = {"length_start": lengths[0], "length_end": lengths[-1],
               "monotone_decreasing": bool(np.all(d < 0)),
               "monotone_increasing": bool(np.all(d > 0)),
               "events": [f"{t!r}: {m}" for t, m in trace.events]}
    _write_json(out / "simulate2d_summary.json", header, summary)
    return summary


def cmd_curveflow(cfg: RunConfig, out: Path):
    from .curveflow import (cross_validate, dT_max, evolve, mode_growth,
                            perturbed_circle)
    from .reduction import coefficient_report
    from .spectrum1d import kernel_pair

    model, front, S, L = _operators(cfg, cfg.mu)
    rep = coefficient_report(L, model, front, kernel_pair(L, front.derivative))
    header = cfg.header()
    rng = np.random.default_rng(cfg.seed)
    modes = np.arange(2, 9)
    curve = perturbed_circle(cfg.radius, modes, cfg.perturbation * rng.random(modes.size),
                             rng.uniform(0, 2 * np.pi, modes.size), cfg.n_markers)
    limit = dT_max(curve, rep)
    # half the bound leaves room for a shrinking curve (the bound scales like ds^4)
    n_steps = int(math.ceil(cfg.curve_T / (0.5 * limit)))
    final, trace = evolve(curve, rep, cfg.alpha3, cfg.curve_T / n_steps, n_steps,
                          record_every=max(1, n_steps // 200))
    trace.to_csv(out / "curve_trace.csv", header)
    final.to_csv(out / "curve_final.csv", header)
    summary = {"alpha1": rep.alpha1, "nu": rep.nu, "alpha3": cfg.alpha3,
               "T_end": final.T, "event": trace.event[-1]}
    if cfg.mode_test and rep.alpha1 < 0:
        mg = mode_growth(rep, seed=cfg.seed)
        summary.update(predicted_cutoff=mg.predicted_cutoff, measured_cutoff=mg.measured_cutoff,
                       cutoff_crossing=mg.crossing, cutoff_within_one=mg.within_one)
    if cfg.pde_trace:
        if cfg.time_scale is None:
            raise ConfigError("cross-validation needs time_scale")
        data = read_table(cfg.pde_trace)
        cv = cross_validate(data["t"], data["length"], trace.T, trace.length, cfg.time_scale)
        summary.update(cross_window=cv.t_window, length_discrepancy=cv.max_length_discrepancy,
                       slope_discrepancy=cv.slope_discrepancy)
    _write_json(out / "curveflow_summary.json", header, summary)
    if trace.event[-1]:
        raise InvariantViolation(f"curve run stopped early: {trace.event[-1]}")
    return summary


def cmd_sweep(cfg: RunConfig, out: Path):
    results = {}
    for mu in cfg.mu_list:
        sub = dataclasses.replace(cfg, command=cfg.sweep_command, mu=float(mu),
                                  mu_list=[float(mu)],
                                  output=str(Path(cfg.output) / f"mu_{mu:+.4f}"))
        results[f"{mu:+.4f}"] = COMMAND_TABLE[sub.command](sub, output_dir(sub))
    _write_json(out / "sweep_summary.json", cfg.header(), {"runs": results})
    return results


COMMAND_TABLE = {"front": cmd_front, "spectrum": cmd_spectrum, "coeffs": cmd_coeffs,
                 "simulate2d": cmd_simulate2d, "curveflow": cmd_curveflow, "sweep": cmd_sweep}


def main(argv=None):
    from .pde2d import BlowUpError
    from .curveflow import SelfIntersectionError
    from .operators1d import KernelConditionError
    from .reduction import SolvabilityError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = output_dir(cfg)
        summary = COMMAND_TABLE[cfg.command](cfg, out)
    except (ConfigError, HypothesisError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, KernelConditionError, SolvabilityError,
            SelfIntersectionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConvergenceError, BlowUpError, LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("summary: %s", summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
