"""Scenario assembly and the batch commands behind the CLI.

Each ``cmd_*`` takes a resolved ``ExperimentConfig`` and an output directory,
writes CSV tables whose first line echoes the config hash, and returns a
small summary dict.  Errors propagate as ``DeomError`` subclasses; the CLI
maps them to exit codes.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import oracles
from .bath import (BathExpansion, BathModeGeometry, BrownianOscillatorBath, decompose_exponentials,
                   mode_geometry, pet_lambda_matrix, verify_expansion)
from .config import ExperimentConfig
from .control import OptimalField, TimeGrid, assemble_field, build_response_matrix, eigen_solve
from .deom import DEOMDynamics, SystemModel, build_dynamics, initial_state_pet, pet_system, propagate
from .errors import ConfigError
from .hierarchy import DDOSet, build_space
from .observables import CSV_COLUMNS, observable_row
from .target import TargetFunctional, TargetSpec, solve_theta, target_expectation

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    config: ExperimentConfig
    bath: BrownianOscillatorBath
    expansion: BathExpansion
    geometry: BathModeGeometry
    system: SystemModel
    dyn: DEOMDynamics

    @property
    def grid(self) -> TimeGrid:
        c = self.config.control
        return TimeGrid(c.t0, c.tf, c.N)

    def target_spec(self, beta_tilde) -> TargetSpec:
        t = self.config.target
        return TargetSpec.from_geometry(self.geometry, beta_tilde, t.dbeta, t.headroom)


def make_bath(cfg: ExperimentConfig) -> BrownianOscillatorBath:
    b = cfg.bath
    lam = pet_lambda_matrix(b.lambda1, b.lambda_u, cfg.delta_value())
    try:
        return BrownianOscillatorBath(lam, b.omega, b.eta, b.gamma, b.beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def make_expansion(cfg: ExperimentConfig, bath=None) -> BathExpansion:
    b = cfg.bath
    bath = bath or make_bath(cfg)
    return decompose_exponentials(bath, b.scheme, b.n_thermal, tolerance=b.tolerance, t_window=b.t_window)


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    bath = make_bath(cfg)
    expansion = make_expansion(cfg, bath)
    s = cfg.system
    geometry = mode_geometry(bath, (s.v1, s.v2))
    system = pet_system(geometry.lambdas, (s.delta_eps1, s.delta_eps2), s.V, s.u)
    dyn = build_dynamics(system, expansion, geometry, cfg.propagation.L, cfg.propagation.max_indices)
    return Scenario(cfg, bath, expansion, geometry, system, dyn)


# ---------------------------------------------------------------- CSV output

def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return f"{float(x):.16e}"  # 17 significant digits round-trip exactly


def write_csv(path, cfg: ExperimentConfig, header, rows, meta=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        line = f"# config_hash={cfg.hash}"
        if meta:
            line += "".join(f" {k}={v}" for k, v in meta.items())
        fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path):
    """``(hash, header, rows)`` of a file written by ``write_csv``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader if r]
    tag = first.split()[1] if first.startswith("#") else ""
    return tag.partition("=")[2], header, np.array(rows)


def _bt_tag(bt) -> str:
    return f"{bt:g}".replace(".", "p")


# ---------------------------------------------------------------- commands

def cmd_decompose(cfg: ExperimentConfig, out: str):
    """Exponential expansion of the configured bath plus a per-channel residual report."""
    bath = make_bath(cfg)
    expansion = make_expansion(cfg, bath)
    t_grid = np.linspace(0.0, cfg.bath.t_window, 101)
    report = verify_expansion(expansion, bath, t_grid, cfg.bath.tolerance)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "expansion.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.hash}\n")
        fh.write(expansion.dumps())
    rows = []
    n = bath.n_modes
    for m in range(n):
        for mp in range(n):
            rows.append((str(m + 1), str(mp + 1), report.max_abs[m, mp], report.max_rel[m, mp],
                         report.reversal_rel[m, mp]))
    write_csv(os.path.join(out, "residuals.csv"), cfg, ("m", "mp", "max_abs", "max_rel", "reversal_rel"), rows)
    return {"n_terms": expansion.n_terms, "n_thermal": expansion.n_thermal, "worst": report.worst,
            "ok": report.ok}


def design_fields(scn: Scenario, threads=1, seed=0, beta_tildes=None):
    """Response kernels, spectra and optimal fields for every requested target temperature."""
    cfg = scn.config
    bts = list(cfg.target.beta_tilde if beta_tildes is None else beta_tildes)
    funcs = [TargetFunctional(scn.dyn.space, scn.target_spec(bt), scn.expansion) for bt in bts]
    grid = scn.grid
    mats = build_response_matrix(grid, scn.dyn, funcs, cfg.propagation.dt, threads,
                                 cfg.control.sample_fraction, seed)
    out = []
    for bt, M in zip(bts, mats):
        vals, vecs = eigen_solve(M, grid)
        fld = assemble_field(vals, vecs, grid, cfg.control.strength, M, cfg.control.n_vectors)
        out.append((bt, M, vals, fld))
    return out


def cmd_design_field(cfg: ExperimentConfig, out: str, threads=1, seed=0, scenario=None):
    scn = scenario or build_scenario(cfg)
    designs = design_fields(scn, threads, seed)
    grid = scn.grid
    for bt, M, _, _ in designs:
        write_csv(os.path.join(out, f"M_bt{_bt_tag(bt)}.csv"), cfg, [f"c{j}" for j in range(grid.N)], M.matrix,
                  {"beta_tilde": f"{bt:g}", "asymmetry": f"{M.asymmetry:.3e}"})
    spec_rows = [[i] + [d[2][i] for d in designs] for i in range(grid.N)]
    write_csv(os.path.join(out, "spectrum.csv"), cfg,
              ["index"] + [f"bt_{bt:g}" for bt, *_ in designs], spec_rows)
    field_rows = [[t] + [d[3].values[i] for d in designs] for i, t in enumerate(grid.times)]
    write_csv(os.path.join(out, "field.csv"), cfg, ["t"] + [f"bt_{bt:g}" for bt, *_ in designs], field_rows)
    summary_rows = [(bt, fld.Lambda, fld.strength, M.asymmetry, float(fld.fallback)) for bt, M, _, fld in designs]
    write_csv(os.path.join(out, "design_summary.csv"), cfg,
              ("beta_tilde", "Lambda_eff", "strength", "asymmetry", "fallback"), summary_rows)
    return {"fields": {bt: fld for bt, _, _, fld in designs},
            "asymmetry": {bt: M.asymmetry for bt, M, _, _ in designs}}


def load_fields(cfg: ExperimentConfig, out: str):
    """Fields from an earlier ``design-field`` run in ``out`` when its hash matches, else None."""
    path = os.path.join(out, "field.csv")
    if not os.path.exists(path):
        return None
    tag, header, rows = read_csv(path)
    if tag != cfg.hash:
        return None
    fields = {}
    for j, name in enumerate(header[1:], start=1):
        bt = float(name.split("_", 1)[1])
        fields[bt] = OptimalField(rows[:, 0], rows[:, j], float("nan"), cfg.control.strength, np.zeros(0))
    if not all(bt in fields for bt in cfg.target.beta_tilde):
        return None
    return fields


def run_field(scn: Scenario, fld, horizon=None, stride=None):
    """Observable rows of the driven run; ``fld`` repeats with period ``tf - t0``."""
    p = scn.config.propagation
    c = scn.config.control
    horizon = p.repetitions * (c.tf - c.t0) if horizon is None else horizon
    stride = p.stride if stride is None else stride
    n_out = int(round(horizon / stride))
    times = c.t0 + stride * np.arange(n_out + 1)
    rho0 = initial_state_pet(scn.dyn.space, scn.system)
    rows = []
    fn = fld.periodic() if fld is not None else None
    propagate(rho0, scn.dyn, fn, (c.t0, c.t0 + horizon), p.dt, snapshots=times,
              sink=lambda t, s: rows.append(observable_row(s, scn.expansion)))
    return np.array(rows)


def cmd_run_controlled(cfg: ExperimentConfig, out: str, threads=1, seed=0, scenario=None, fields=None):
    scn = scenario or build_scenario(cfg)
    if fields is None:
        fields = load_fields(cfg, out)
    if fields is None:
        fields = cmd_design_field(cfg, out, threads, seed, scn)["fields"]
    bts = list(cfg.target.beta_tilde)

    def job(bt):
        return bt, run_field(scn, fields[bt])

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, bts))
    else:
        results = [job(bt) for bt in bts]
    tracks = {}
    for bt, rows in results:
        write_csv(os.path.join(out, f"controlled_bt{_bt_tag(bt)}.csv"), cfg, CSV_COLUMNS, rows,
                  {"beta_tilde": f"{bt:g}", "correlation": cfg.correlation.mode})
        tracks[bt] = rows
    return {"tracks": tracks}


def cmd_sweep(cfg: ExperimentConfig, out: str, threads=1, seed=0):
    """Cartesian product of target temperatures and correlation modes; one subdirectory per mode."""
    results = {}
    final_rows = []
    for mode in cfg.correlation.sweep_modes:
        sub_cfg = cfg.with_correlation(mode)
        sub = os.path.join(out, mode)
        res = cmd_run_controlled(sub_cfg, sub, threads, seed)
        results[mode] = res["tracks"]
        for bt, rows in res["tracks"].items():
            final_rows.append((mode, bt) + tuple(rows[-1, 1:]))
    write_csv(os.path.join(out, "sweep_final.csv"), cfg,
              ("correlation", "beta_tilde") + CSV_COLUMNS[1:], final_rows)
    return results


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    reference: float
    computed: float
    tolerance: float

    @property
    def error(self) -> float:
        return abs(self.computed - self.reference)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.computed)) and self.error <= self.tolerance


def _bath_checks(cfg, fault):
    out = []
    for mode in ("uncorrelated", "fully_correlated"):
        c = cfg.with_correlation(mode)
        bath = make_bath(c)
        exp = make_expansion(c, bath)
        if fault == "bath":
            exp = exp.scaled(1.01)
        t_grid = np.linspace(0.0, 10.0, 41)
        report = verify_expansion(exp, bath, t_grid, 1e-3)
        out.append(Check(f"bath.{mode}.max_rel_residual", 0.0, report.worst, 1e-3))
    return out


def _two_level(delta_eps):
    return SystemModel(np.diag([0.0, delta_eps]), (np.diag([0.0, 1.0]),), np.array([[0.0, 1.0], [1.0, 0.0]]))


def _propagator_checks(cfg, fault):
    b, p = cfg.bath, cfg.propagation
    ts = np.linspace(0.25, 10.0, 40)
    # closed system: no bath coupling, static drive
    bath0 = BrownianOscillatorBath(np.zeros((1, 1)), b.omega, b.eta, b.gamma, b.beta)
    exp0 = decompose_exponentials(bath0)
    geo0 = mode_geometry(bath0, (0.0,))
    dyn = build_dynamics(_two_level(1.0), exp0, geo0, p.L)
    rho = dyn.zeros()
    rho.data[0, 0, 0] = 1.0
    drive = 0.3 * (1.02 if fault == "rabi" else 1.0)
    _, snaps = propagate(rho, dyn, drive, (0.0, ts[-1]), p.dt, snapshots=ts)
    _, ref = oracles.rabi_reference(1.0, 0.3, ts)
    err = max(abs(s.tier0[1, 1].real - r) for s, r in zip(snaps, ref))
    out = [Check("propagator.rabi.max_population_error", 0.0, float(err), 1e-6)]
    # pure dephasing of a single coupled state over the control window
    bath1 = BrownianOscillatorBath(np.array([[b.lambda1]]), b.omega, b.eta, b.gamma, b.beta)
    exp1 = decompose_exponentials(bath1)
    geo1 = mode_geometry(bath1, (0.0,))
    if fault == "dephasing":
        exp1 = exp1.scaled(1.05)
    dyn = build_dynamics(_two_level(1.0), exp1, geo1, p.L)
    rho = dyn.zeros()
    rho.data[0] = 0.5
    tw = np.linspace(0.05, cfg.control.tf - cfg.control.t0, 20)
    _, snaps = propagate(rho, dyn, None, (0.0, tw[-1]), p.dt, snapshots=tw)
    ref = oracles.dephasing_reference(decompose_exponentials(bath1), tw, energy=1.0)
    err = max(abs(s.tier0[1, 0] / 0.5 - r) for s, r in zip(snaps, ref))
    out.append(Check("propagator.dephasing.max_coherence_error", 0.0, float(err), 1e-4))
    return out


def decoupled_target_value(expansion, geometry, beta_tilde, cap=12, mode=0):
    """Target expectation of the bath equilibrium alone (no system dynamics).

    Uses a one-dimensional system and a hierarchy restricted to the labels of
    ``mode``; the real-time state is the bare tier-0 identity.
    """
    labels = [(mode, k) for k in range(expansion.n_terms) if np.any(expansion.etas[:, mode, k])]
    space = build_space(labels, cap)
    spec = TargetSpec(float(beta_tilde), float(geometry.omegas[mode]), float(geometry.lambdas[mode]),
                      float(geometry.displacements[mode]), None, 0, mode, 0)
    rho = DDOSet.zeros(space, 1)
    rho.data[0, 0, 0] = 1.0
    return target_expectation(solve_theta(rho, spec, expansion, space=space), spec)


def _target_checks(cfg, fault):
    bath = make_bath(cfg)
    exp = make_expansion(cfg, bath)
    s = cfg.system
    geo = mode_geometry(bath, (s.v1, s.v2))
    cov = oracles.mode_covariance(exp, geo.lambdas[0], geo.omegas[0])
    out = []
    for bt in (0.125, 1.0):
        ref = oracles.gaussian_target_reference(bt, geo.omegas[0], geo.displacements[0], cov)
        val = decoupled_target_value(exp.scaled(1.01) if fault == "target" else exp, geo, bt)
        out.append(Check(f"target.gaussian_overlap.bt_{bt:g}", ref, val, 1e-4 * abs(ref)))
    return out


SUITES = {"bath": _bath_checks, "propagator": _propagator_checks, "target": _target_checks}
FAULTS = ("bath", "rabi", "dephasing", "target")


def cmd_validate(cfg: ExperimentConfig, out: str, inject=None):
    if inject is not None and inject not in FAULTS:
        raise ConfigError(f"unknown fault {inject!r}; choose from {FAULTS}")
    checks = []
    for fn in SUITES.values():
        checks.extend(fn(cfg, inject))
    rows = [(c.name, c.reference, c.computed, c.tolerance, "PASS" if c.passed else "FAIL") for c in checks]
    write_csv(os.path.join(out, "validation.csv"), cfg,
              ("check", "reference", "computed", "tolerance", "result"), rows)
    return {"checks": checks, "passed": all(c.passed for c in checks)}
