"""Command line driver: parse a study config, run it, write artifacts.

A study runs one scenario over refinements+1 structured meshes with doubled
subdivision counts, integrates each level with backward Euler, prints an EOC
table for the manufactured cases,
and writes results.csv (plus energy trace and VTK snapshots for the wave
scenario) into the output directory.
"""

import argparse
import dataclasses
import hashlib
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import tomli

from .errors import DegenerateRatio, InvalidValue, ParseError, PoromixError, UnknownKey
from .fespace import build_dofmaps
from .mesh import generate_structured, mesh_size
from .model import LoadFunctions, PenaltySpec
from .postproc import (
    EocTable,
    ErrorReport,
    csv_row,
    error_norms,
    write_energy_trace,
    write_results_csv,
    write_vtk,
)
from .scenarios import RickerSource, get_scenario, manufactured_case, ricker_force
from .timeloop import RunResult, TimeGrid, run

_CONFIG_KEYS = ("scenario", "mesh_n", "refinements", "t_final", "dt", "gamma",
                "w_space", "degree", "outputs", "overrides")
# physical parameters reachable from a config file or --set; "lambda" is the
# natural spelling on the command line, "k" sets an isotropic permeability
_OVERRIDE_ALIASES = {"lambda": "lam"}
_OVERRIDE_KEYS = ("mu", "lam", "alpha", "s0", "rho_u", "rho_f", "rho_w", "k")
_W_SPACES = {"rt0": "RT0", "bdm1": "BDM1"}
# error columns watched by the automatic time-step check
_DT_CHECK_FIELDS = ("l2_u", "l2_w", "l2_sigma", "l2_p", "hdiv_sigma", "hdiv_w")
# single bounded halving: the representative-compared columns carry an
# O(tau) backward-Euler part that cannot settle at any affordable step,
# so the probe refines once and records the outcome instead of iterating
_MAX_DT_HALVINGS = 1


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved study configuration (scenario defaults filled in)."""

    scenario: str
    mesh_n: int
    refinements: int
    t_final: float
    dt: Union[float, str]  # positive step or "auto"
    gamma: float
    w_space: str
    degree: int
    outputs: str
    overrides: Dict[str, float] = field(default_factory=dict)


def _reject_bool(key, value):
    if isinstance(value, bool):
        raise ParseError(f"{key} must be a number, got a boolean")
    return value


def _as_int(key, value) -> int:
    _reject_bool(key, value)
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError as exc:
            raise ParseError(f"{key} must be an integer, got {value!r}") from exc
    raise ParseError(f"{key} must be an integer, got {value!r}")


def _as_float(key, value) -> float:
    _reject_bool(key, value)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError as exc:
            raise ParseError(f"{key} must be a number, got {value!r}") from exc
    raise ParseError(f"{key} must be a number, got {value!r}")


def _parse_overrides(raw: Mapping) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for key, value in raw.items():
        name = _OVERRIDE_ALIASES.get(key, key)
        if name not in _OVERRIDE_KEYS:
            raise UnknownKey(
                f"unknown parameter override {key!r}; known: "
                + ", ".join(("lambda",) + _OVERRIDE_KEYS)
            )
        out[name] = _as_float(key, value)
    return out


def _parse_set_entries(entries: Sequence[str]) -> Dict[str, float]:
    raw = {}
    for entry in entries:
        if "=" not in entry:
            raise ParseError(f"--set expects KEY=VALUE, got {entry!r}")
        key, value = entry.split("=", 1)
        raw[key.strip()] = value.strip()
    return _parse_overrides(raw)


def parse_config(
    path=None,
    flags: Optional[Mapping] = None,
    sets: Sequence[str] = (),
) -> RunConfig:
    """Merge TOML file, CLI flags, and --set overrides into a RunConfig.

    Precedence: scenario defaults < file < flags; --set entries extend the
    physical-parameter override map. Unknown keys are hard errors.
    """
    data: Dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ParseError(f"invalid TOML in {path}: {exc}") from exc
    for key in data:
        if key not in _CONFIG_KEYS:
            raise UnknownKey(f"unknown config key {key!r}; known: {', '.join(_CONFIG_KEYS)}")

    overrides = _parse_overrides(data.get("overrides", {}))
    overrides.update(_parse_set_entries(sets))

    merged: Dict = {k: v for k, v in data.items() if k != "overrides"}
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in _CONFIG_KEYS:
            raise UnknownKey(f"unknown option {key!r}")
        merged[key] = value

    scenario = merged.get("scenario", "convergence")
    if not isinstance(scenario, str):
        raise ParseError(f"scenario must be a string, got {scenario!r}")
    scen = get_scenario(scenario)

    mesh_n = _as_int("mesh_n", merged.get("mesh_n", scen.base_n))
    refinements = _as_int("refinements", merged.get("refinements", scen.refinements))
    t_final = _as_float("t_final", merged.get("t_final", scen.t_final))
    gamma = _as_float("gamma", merged.get("gamma", 1.0))
    degree = _as_int("degree", merged.get("degree", 0))

    dt_raw = merged.get("dt", scen.dt if scen.dt is not None else "auto")
    if isinstance(dt_raw, str) and dt_raw.lower() == "auto":
        dt: Union[float, str] = "auto"
    else:
        dt = _as_float("dt", dt_raw)
        if dt <= 0.0:
            raise InvalidValue(f"dt must be > 0 or 'auto', got {dt}")

    w_raw = merged.get("w_space", scen.w_family)
    if not isinstance(w_raw, str) or w_raw.lower() not in _W_SPACES:
        raise InvalidValue(f"w_space must be one of rt0, bdm1; got {w_raw!r}")
    w_space = _W_SPACES[w_raw.lower()]

    outputs = merged.get("outputs", "out")
    if not isinstance(outputs, str):
        raise ParseError(f"outputs must be a path string, got {outputs!r}")

    if mesh_n < 1:
        raise InvalidValue(f"mesh_n must be >= 1, got {mesh_n}")
    if refinements < 0:
        raise InvalidValue(f"refinements must be >= 0, got {refinements}")
    if t_final <= 0.0:
        raise InvalidValue(f"t_final must be > 0, got {t_final}")
    if gamma <= 0.0:
        raise InvalidValue(f"gamma must be > 0, got {gamma}")
    if degree != 0:
        raise InvalidValue(
            f"degree = {degree} is not supported: only the lowest-order "
            "family (degree 0) is implemented; higher orders would need "
            "BDM_{l+1}/RT_l spaces and a stronger penalty exponent"
        )

    return RunConfig(
        scenario=scenario, mesh_n=mesh_n, refinements=refinements,
        t_final=t_final, dt=dt, gamma=gamma, w_space=w_space, degree=degree,
        outputs=outputs, overrides=overrides,
    )


def config_hash(config: RunConfig) -> str:
    blob = repr(sorted(dataclasses.asdict(config).items())).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _apply_overrides(params, overrides: Mapping[str, float]):
    kw: Dict = {}
    for name, value in overrides.items():
        if name == "k":
            kw["K"] = float(value)
        else:
            kw[name] = float(value)
    return dataclasses.replace(params, **kw) if kw else params


def _thread_limit():
    raw = os.environ.get("POROMIX_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidValue(f"POROMIX_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidValue(f"POROMIX_THREADS must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


@dataclass
class LevelResult:
    level: int
    mesh_n: int
    result: RunResult
    report: Optional[ErrorReport] = None
    dt_converged: bool = True
    dt_halvings: int = 0


@dataclass
class StudyResult:
    config: RunConfig
    levels: List[LevelResult]
    rows: List[Dict]
    tables: Dict[str, EocTable]
    paths: Tuple[Path, ...]
    gate_failures: List[str]
    log: List[str]

    @property
    def exit_code(self) -> int:
        return 0 if not self.gate_failures else 1


def _auto_dt(mesh) -> float:
    # first-order time error balanced against the O(h^2) spatial error
    _, h_min = mesh_size(mesh)
    return min(0.01, 4.0 * h_min**2)


def _run_level(space, params, case, grid, penalty, solver_tol, t_final):
    res = run(
        space, params, grid, loads=case.loads(), bdata=case.bdata(),
        penalty=penalty, solver_tol=solver_tol,
    )
    report = error_norms(
        space, res.x, case, t_final, tau=grid.tau, walltime_s=res.walltime_s
    )
    return res, report


def _errors_settled(coarse: ErrorReport, fine: ErrorReport, rtol: float = 0.05) -> bool:
    for name in _DT_CHECK_FIELDS:
        a, b = getattr(coarse, name), getattr(fine, name)
        if abs(a - b) > rtol * max(abs(b), np.finfo(float).tiny):
            return False
    return True


def run_study(config: RunConfig, solver_tol: float = 1e-10) -> StudyResult:
    """Run a full study; returns results and writes artifacts to config.outputs."""
    log: List[str] = []
    gate_failures: List[str] = []

    def say(msg: str):
        log.append(msg)
        print(msg)

    scen = get_scenario(config.scenario)
    params = _apply_overrides(scen.params, config.overrides)
    w_family = config.w_space
    if scen.name == "robust_nodensity" and w_family != "BDM1":
        say("note: robust_nodensity requires the linear flux family; forcing w_space = BDM1")
        w_family = "BDM1"
    penalty = PenaltySpec(gamma=config.gamma)
    outdir = Path(config.outputs)

    say(f"config hash {config_hash(config)}")
    for key, value in sorted(dataclasses.asdict(config).items()):
        say(f"config: {key} = {value}")
    for name, value in sorted(config.overrides.items()):
        say(f"override: {name} = {value:g}")

    with _thread_limit():
        mesh = generate_structured(
            config.mesh_n, config.mesh_n, rect=scen.rect, diagonal=scen.diagonal
        )
        if scen.kind == "wave":
            return _run_wave(
                config, scen, params, w_family, penalty, mesh, outdir,
                solver_tol, say, log, gate_failures,
            )

        case = manufactured_case(params)
        levels: List[LevelResult] = []
        rows: List[Dict] = []
        for level in range(config.refinements + 1):
            n_here = config.mesh_n * 2**level
            if level > 0:
                # regenerate, never refine: red refinement flips the diagonal
                # of every center child, and losing the alternating pattern
                # costs the stress trace an order
                mesh = generate_structured(
                    n_here, n_here, rect=scen.rect, diagonal=scen.diagonal
                )
            space = build_dofmaps(mesh, w_family)
            if config.dt == "auto":
                n_steps = max(1, math.ceil(config.t_final / _auto_dt(mesh)))
            else:
                n_steps = max(1, round(config.t_final / config.dt))
            grid = TimeGrid(config.t_final, n_steps)
            res, report = _run_level(
                space, params, case, grid, penalty, solver_tol, config.t_final
            )
            converged, halvings = True, 0
            if config.dt == "auto":
                # accept tau once halving it moves no error column by >= 5%;
                # otherwise adopt the halved run, up to the bounded budget
                converged = False
                for _ in range(_MAX_DT_HALVINGS):
                    fine_grid = TimeGrid(config.t_final, 2 * grid.n_steps)
                    fine_res, fine_report = _run_level(
                        space, params, case, fine_grid, penalty, solver_tol,
                        config.t_final,
                    )
                    if _errors_settled(report, fine_report):
                        converged = True
                        break
                    grid, res, report = fine_grid, fine_res, fine_report
                    halvings += 1
                if not converged:
                    say(
                        f"note: level {level}: tau = {grid.tau:g} not verified "
                        f"settled after {halvings} halving(s)"
                    )
            if res.max_conservation_residual > 10.0 * solver_tol:
                gate_failures.append(
                    f"level {level}: conservation residual "
                    f"{res.max_conservation_residual:.3e} > {10 * solver_tol:.1e}"
                )
            energy_final = float(res.energy_trace[-1, 1])
            rows.append(csv_row(scen.name, level, report, energy_final))
            levels.append(LevelResult(level, n_here, res, report, converged, halvings))
            say(
                f"level {level}: n = {n_here}, cells = {mesh.n_cells}, "
                f"ndofs = {space.n_total}, tau = {grid.tau:.6g} "
                f"(halvings = {halvings}), walltime = {res.walltime_s:.2f} s, "
                f"residual = {res.max_rel_residual:.2e}, "
                f"conservation = {res.max_conservation_residual:.2e}"
            )

        tables: Dict[str, EocTable] = {}
        one_over_h = [row["one_over_h"] for row in rows]
        if len(rows) >= 2:
            say(f"{'field':>12}  errors / slopes")
            for name in _DT_CHECK_FIELDS + ("skw_ratio",):
                errs = [row[name] for row in rows]
                err_s = " ".join(f"{e:.3e}" for e in errs)
                try:
                    tables[name] = EocTable.from_errors(name, one_over_h, errs)
                except DegenerateRatio:
                    say(f"{name:>12}  {err_s}  /  (degenerate)")
                    continue
                slope_s = " ".join(f"{s:+.2f}" for s in tables[name].slopes)
                say(f"{name:>12}  {err_s}  /  {slope_s}")

        try:
            outdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PoromixError(f"cannot create {outdir}: {exc}") from exc
        paths = (write_results_csv(outdir / "results.csv", rows),)
        say(f"wrote {paths[0]}")
        for failure in gate_failures:
            say(f"gate failure: {failure}")
        return StudyResult(config, levels, rows, tables, paths, gate_failures, log)


def _run_wave(
    config, scen, params, w_family, penalty, mesh, outdir,
    solver_tol, say, log, gate_failures,
):
    if config.refinements > 0:
        say("note: the wave scenario runs a single mesh; ignoring refinements")
    space = build_dofmaps(mesh, w_family)
    source = scen.source if scen.source is not None else RickerSource()
    mesh_h = mesh.h

    def force(pts, t):
        return ricker_force(t, pts, mesh_h, source)

    dt = config.dt if config.dt != "auto" else 0.005
    grid = TimeGrid(config.t_final, max(1, round(config.t_final / dt)))
    say(
        f"wave: cells = {mesh.n_cells}, ndofs = {space.n_total}, "
        f"tau = {grid.tau:g}, steps = {grid.n_steps}"
    )
    res = run(
        space, params, grid, loads=LoadFunctions(f=force), penalty=penalty,
        snapshot_times=scen.snapshot_times, solver_tol=solver_tol,
    )
    say(
        f"wave: walltime = {res.walltime_s:.2f} s, "
        f"residual = {res.max_rel_residual:.2e}, "
        f"conservation = {res.max_conservation_residual:.2e}, "
        f"E_final = {res.energy_trace[-1, 1]:.6e}"
    )

    if not np.all(np.isfinite(res.energy_trace)):
        gate_failures.append("wave: energy trace contains non-finite values")
    if res.max_conservation_residual > 10.0 * solver_tol:
        gate_failures.append(
            f"wave: conservation residual {res.max_conservation_residual:.3e}"
        )
    missing = set(scen.snapshot_times) - set(res.snapshots)
    if missing:
        gate_failures.append(f"wave: snapshots not captured at {sorted(missing)}")

    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PoromixError(f"cannot create {outdir}: {exc}") from exc
    paths = [write_energy_trace(outdir / f"{scen.name}_energy.csv", res.energy_trace)]
    for t in sorted(res.snapshots):
        p = write_vtk(
            outdir / f"{scen.name}_t{t:g}.vtk", space, res.snapshots[t],
            title=f"state at t = {t:g}",
        )
        paths.append(p)
    for p in paths:
        say(f"wrote {p}")
    for failure in gate_failures:
        say(f"gate failure: {failure}")
    level = LevelResult(0, config.mesh_n, res)
    return StudyResult(config, [level], [], {}, tuple(paths), gate_failures, log)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poromix",
        description="Mixed finite-element studies for dynamic poroelasticity.",
    )
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--scenario", default=None, help="scenario name")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="physical parameter override (repeatable), e.g. --set lambda=1e6",
    )
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--mesh-n", type=int, default=None, help="base subdivisions")
    parser.add_argument("--refinements", type=int, default=None)
    parser.add_argument("--dt", default=None, help="time step or 'auto'")
    parser.add_argument("--gamma", type=float, default=None, help="penalty scale")
    parser.add_argument("--w-space", default=None, help="rt0 or bdm1")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    flags = {
        "scenario": args.scenario,
        "mesh_n": args.mesh_n,
        "refinements": args.refinements,
        "dt": args.dt,
        "gamma": args.gamma,
        "w_space": args.w_space,
        "outputs": args.out,
    }
    try:
        config = parse_config(args.config, flags, args.set)
        study = run_study(config)
    except PoromixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return study.exit_code


if __name__ == "__main__":
    sys.exit(main())
