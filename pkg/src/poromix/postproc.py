"""Error norms, convergence slopes, skewness diagnostics, and file output.

The stress, pressure, and filtration errors are measured by default against
the canonical discrete representative of the exact solution (cell means for
the pressure, edge moment interpolants for the H(div) fields), which is what
a refinement study of these mixed pairs tracks; the solid velocity is always
measured against the exact field.  The raw distance to the exact fields for
every unknown is available via against="exact".  Error integrals use a
degree-6 rule: the reference fields are trigonometric, so the quadrature
error has to sit well below the discretization error on every mesh in a
refinement study.
The H(div)-type norms are reported in the weighted form
||v||^2 + h_Omega^2 ||div v||^2 (h_Omega the domain diameter) with the
unweighted value kept alongside.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateRatio, IoError
from .fespace import FourFieldSpace, cell_basis_tables, gather, interpolate, project_L2
from .timeloop import ENERGY_COLUMNS

__all__ = [
    "CSV_COLUMNS",
    "ErrorReport",
    "EocTable",
    "error_norms",
    "eoc",
    "skw_diagnostic",
    "csv_row",
    "write_results_csv",
    "write_energy_trace",
    "write_vtk",
    "write_outputs",
]

# results table layout; the unweighted divergence norms ride at the end so
# the leading columns stay stable for downstream plotting
CSV_COLUMNS = (
    "scenario",
    "level",
    "one_over_h",
    "tau",
    "ndofs",
    "l2_u",
    "l2_w",
    "l2_sigma",
    "l2_p",
    "hdiv_sigma",
    "hdiv_w",
    "skw_ratio",
    "energy_final",
    "walltime_s",
    "hdiv_sigma_unw",
    "hdiv_w_unw",
)

_ERROR_FIELDS = (
    "l2_u",
    "l2_w",
    "l2_sigma",
    "l2_p",
    "l2_dev_sigma",
    "hdiv_sigma",
    "hdiv_w",
    "hdiv_sigma_unw",
    "hdiv_w_unw",
)


@dataclass(frozen=True)
class ErrorReport:
    """Discretization errors of one run, plus the run's size descriptors."""

    l2_u: float
    l2_w: float
    l2_sigma: float
    l2_p: float
    l2_dev_sigma: float
    hdiv_sigma: float
    hdiv_w: float
    hdiv_sigma_unw: float
    hdiv_w_unw: float
    skw_ratio: float
    h: float
    tau: float
    n_dofs: int
    walltime_s: float

    def __post_init__(self):
        for name in _ERROR_FIELDS:
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} = {v} is not a nonnegative finite error")


@dataclass(frozen=True)
class EocTable:
    """(1/h, error) rows of one field and the slopes between them."""

    field: str
    one_over_h: Tuple[float, ...]
    errors: Tuple[float, ...]
    slopes: Tuple[float, ...]

    @classmethod
    def from_errors(cls, field, one_over_h, errors) -> "EocTable":
        return cls(
            field=field,
            one_over_h=tuple(float(v) for v in one_over_h),
            errors=tuple(float(v) for v in errors),
            slopes=tuple(eoc(one_over_h, errors)),
        )


def eoc(one_over_h: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    """Pairwise slopes log(e_i/e_{i+1}) / log(h_i/h_{i+1}).

    Raises DegenerateRatio when consecutive mesh sizes coincide or an error
    is not strictly positive (the log-log slope is undefined there).
    """
    ioh = np.asarray(one_over_h, dtype=float)
    err = np.asarray(errors, dtype=float)
    if ioh.shape != err.shape or ioh.ndim != 1 or ioh.size < 2:
        raise DegenerateRatio("need matching 1d sequences with at least two rows")
    if np.any(err <= 0.0) or not np.all(np.isfinite(err)):
        raise DegenerateRatio("slopes are defined only for strictly positive errors")
    if np.any(ioh <= 0.0) or np.any(ioh[1:] == ioh[:-1]):
        raise DegenerateRatio("mesh sizes must be positive and strictly changing")
    # h = 1/ioh, so log(h_i/h_{i+1}) = log(ioh_{i+1}/ioh_i)
    return np.log(err[:-1] / err[1:]) / np.log(ioh[1:] / ioh[:-1])


def _phys_points(mesh, rule) -> np.ndarray:
    p0 = mesh.vertices[mesh.cells[:, 0]]
    return p0[:, None, :] + np.einsum("qk,cik->cqi", rule.points, mesh.B)


def _integrate(mesh, rule, cellwise: np.ndarray) -> float:
    # weights already include the 1/2 reference area; detB > 0 by construction
    return float(np.einsum("q,c,cq->", rule.weights, mesh.detB, cellwise))


def _domain_diameter(mesh) -> float:
    span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    return float(np.hypot(span[0], span[1]))


def _reference_state(space: FourFieldSpace, exact, t: float, degree: int = 6) -> np.ndarray:
    """Monolithic coefficients of the exact solution's discrete representative."""
    xr = np.zeros(space.n_total)
    xr[space.field_slice("sigma")] = interpolate(space, "sigma", lambda p: exact.sigma(p, t))
    xr[space.field_slice("w")] = interpolate(space, "w", lambda p: exact.w(p, t))
    xr[space.field_slice("u")] = project_L2(space, "u", lambda p: exact.u(p, t), degree=degree)
    xr[space.field_slice("p")] = project_L2(space, "p", lambda p: exact.p(p, t), degree=degree)
    return xr


def error_norms(
    space: FourFieldSpace,
    x: np.ndarray,
    exact,
    t: float,
    degree: int = 6,
    tau: float = float("nan"),
    walltime_s: float = float("nan"),
    against: str = "interpolant",
) -> ErrorReport:
    """Field-wise errors of the state `x` against exact fields at time `t`.

    `exact` provides callables u/w/p/sigma (points, t) plus div_sigma and
    div_w for the divergence parts of the H(div) norms.

    against="interpolant" (default) measures sigma, w, and p against the
    canonical discrete representative of the exact solution: commuting
    edge-moment interpolants for the H(div) fields, cell means for the
    pressure. Those differences track the superconvergence of the scheme
    instead of being floored by the O(h) best-approximation of the
    underlying spaces. The velocity u is measured against the exact field
    in both modes: its reported error is the physical L2 distance.
    against="exact" integrates the raw difference to the exact fields for
    all four unknowns.
    """
    mesh = space.mesh
    h_om = _domain_diameter(mesh)
    if against not in ("interpolant", "exact"):
        raise ValueError(f"against must be 'interpolant' or 'exact', got {against!r}")

    rule_s, vals_s, divs_s = cell_basis_tables(space, "sigma", degree)
    rule_w, vals_w, divs_w = cell_basis_tables(space, "w", degree)
    rule_u, vals_u, _ = cell_basis_tables(space, "u", degree)
    rule_p, vals_p, _ = cell_basis_tables(space, "p", degree)
    nc, nq = mesh.n_cells, rule_s.points.shape[0]
    phys = _phys_points(mesh, rule_s)
    flat = phys.reshape(-1, 2)

    if against == "interpolant":
        d = x - _reference_state(space, exact, t, degree=degree)
        cs = gather(space, "sigma", d)
        sig_diff = np.einsum("cl,cqlij->cqij", cs, vals_s)
        dsig_diff = np.broadcast_to(
            np.einsum("cl,cli->ci", cs, divs_s)[:, None, :], (nc, nq, 2)
        )
        cw = gather(space, "w", d)
        w_diff = np.einsum("cl,cqli->cqi", cw, vals_w)
        dw_diff = np.broadcast_to(np.einsum("cl,cl->c", cw, divs_w)[:, None], (nc, nq))
        u_h = np.einsum("cl,cqli->cqi", gather(space, "u", x), vals_u)
        u_diff = u_h - np.asarray(exact.u(flat, t)).reshape(nc, nq, 2)
        p_diff = np.einsum("cl,cql->cq", gather(space, "p", d), vals_p)
    else:
        cs = gather(space, "sigma", x)
        sig_h = np.einsum("cl,cqlij->cqij", cs, vals_s)
        sig_diff = sig_h - np.asarray(exact.sigma(flat, t)).reshape(nc, nq, 2, 2)
        div_sig_h = np.einsum("cl,cli->ci", cs, divs_s)  # constant per cell
        dsig_diff = div_sig_h[:, None, :] - np.asarray(exact.div_sigma(flat, t)).reshape(
            nc, nq, 2
        )

        cw = gather(space, "w", x)
        w_h = np.einsum("cl,cqli->cqi", cw, vals_w)
        w_diff = w_h - np.asarray(exact.w(flat, t)).reshape(nc, nq, 2)
        div_w_h = np.einsum("cl,cl->c", cw, divs_w)
        dw_diff = div_w_h[:, None] - np.asarray(exact.div_w(flat, t)).reshape(nc, nq)

        cu = gather(space, "u", x)
        u_h = np.einsum("cl,cqli->cqi", cu, vals_u)
        u_diff = u_h - np.asarray(exact.u(flat, t)).reshape(nc, nq, 2)

        cp = gather(space, "p", x)
        p_h = np.einsum("cl,cql->cq", cp, vals_p)
        p_diff = p_h - np.asarray(exact.p(flat, t)).reshape(nc, nq)

    l2_sigma_sq = _integrate(mesh, rule_s, np.einsum("cqij,cqij->cq", sig_diff, sig_diff))
    tr_diff = sig_diff[..., 0, 0] + sig_diff[..., 1, 1]
    dev_sq = np.einsum("cqij,cqij->cq", sig_diff, sig_diff) - 0.5 * tr_diff**2
    l2_dev_sigma_sq = _integrate(mesh, rule_s, dev_sq)
    div_sigma_sq = _integrate(mesh, rule_s, np.einsum("cqi,cqi->cq", dsig_diff, dsig_diff))
    l2_w_sq = _integrate(mesh, rule_w, np.einsum("cqi,cqi->cq", w_diff, w_diff))
    div_w_sq = _integrate(mesh, rule_w, dw_diff**2)
    l2_u_sq = _integrate(mesh, rule_u, np.einsum("cqi,cqi->cq", u_diff, u_diff))
    l2_p_sq = _integrate(mesh, rule_p, p_diff**2)

    return ErrorReport(
        l2_u=np.sqrt(l2_u_sq),
        l2_w=np.sqrt(l2_w_sq),
        l2_sigma=np.sqrt(l2_sigma_sq),
        l2_p=np.sqrt(l2_p_sq),
        l2_dev_sigma=np.sqrt(max(l2_dev_sigma_sq, 0.0)),
        hdiv_sigma=np.sqrt(l2_sigma_sq + h_om**2 * div_sigma_sq),
        hdiv_w=np.sqrt(l2_w_sq + h_om**2 * div_w_sq),
        hdiv_sigma_unw=np.sqrt(l2_sigma_sq + div_sigma_sq),
        hdiv_w_unw=np.sqrt(l2_w_sq + div_w_sq),
        skw_ratio=skw_diagnostic(space, x, degree=degree),
        h=mesh.h,
        tau=float(tau),
        n_dofs=space.n_total,
        walltime_s=float(walltime_s),
    )


def skw_diagnostic(space: FourFieldSpace, x: np.ndarray, degree: int = 4) -> float:
    """||skw sigma_h|| / max(||sigma_h||, tiny) over the whole domain."""
    mesh = space.mesh
    rule, vals, _ = cell_basis_tables(space, "sigma", degree)
    cs = gather(space, "sigma", x)
    sig_h = np.einsum("cl,cqlij->cqij", cs, vals)
    tot_sq = _integrate(mesh, rule, np.einsum("cqij,cqij->cq", sig_h, sig_h))
    # |skw T|_F^2 = (T01 - T10)^2 / 2 in two dimensions
    skw_sq = _integrate(mesh, rule, 0.5 * (sig_h[..., 0, 1] - sig_h[..., 1, 0]) ** 2)
    denom = max(np.sqrt(max(tot_sq, 0.0)), np.finfo(float).tiny)
    return float(np.sqrt(max(skw_sq, 0.0)) / denom)


def csv_row(scenario: str, level: int, report: ErrorReport, energy_final: float) -> Dict:
    return {
        "scenario": scenario,
        "level": int(level),
        "one_over_h": 1.0 / report.h,
        "tau": report.tau,
        "ndofs": int(report.n_dofs),
        "l2_u": report.l2_u,
        "l2_w": report.l2_w,
        "l2_sigma": report.l2_sigma,
        "l2_p": report.l2_p,
        "hdiv_sigma": report.hdiv_sigma,
        "hdiv_w": report.hdiv_w,
        "skw_ratio": report.skw_ratio,
        "energy_final": float(energy_final),
        "walltime_s": report.walltime_s,
        "hdiv_sigma_unw": report.hdiv_sigma_unw,
        "hdiv_w_unw": report.hdiv_w_unw,
    }


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_results_csv(path, rows: Sequence[Mapping]) -> Path:
    """One row per mesh level; header always written, 17 significant digits."""
    path = Path(path)
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_energy_trace(path, trace: np.ndarray) -> Path:
    path = Path(path)
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    if trace.size == 0:
        trace = trace.reshape(0, len(ENERGY_COLUMNS))
    if trace.shape[1] != len(ENERGY_COLUMNS):
        raise ValueError(f"trace has {trace.shape[1]} columns, expected {len(ENERGY_COLUMNS)}")
    lines = [",".join(ENERGY_COLUMNS)]
    for row in trace:
        lines.append(",".join(format(v, ".17g") for v in row))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _cell_fields(space: FourFieldSpace, x: np.ndarray) -> Dict[str, np.ndarray]:
    """Piecewise-constant view of the state: cell means of every output."""
    u = gather(space, "u", x)  # DG0, coefficients are the cell values
    p = gather(space, "p", x)[:, 0]
    # stress is linear per cell, so its centroid value equals its cell mean
    rule, vals, _ = cell_basis_tables(space, "sigma", degree=1)
    sig = np.einsum("cl,clij->cij", gather(space, "sigma", x), vals[:, 0])
    dev = sig.copy()
    tr = sig[:, 0, 0] + sig[:, 1, 1]
    dev[:, 0, 0] -= 0.5 * tr
    dev[:, 1, 1] -= 0.5 * tr
    return {
        "velocity_magnitude": np.hypot(u[:, 0], u[:, 1]),
        "velocity_y": u[:, 1],
        "pressure": p,
        "skw_sigma": np.abs(sig[:, 0, 1] - sig[:, 1, 0]) / np.sqrt(2.0),
        "dev_sigma": np.sqrt(np.einsum("cij,cij->c", dev, dev)),
    }


def write_vtk(path, space: FourFieldSpace, x: np.ndarray, title: str = "poromix snapshot") -> Path:
    """Legacy VTK 2.0 ASCII unstructured grid with cell-wise state data."""
    path = Path(path)
    mesh = space.mesh
    data = _cell_fields(space, x)
    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    for v in mesh.vertices:
        lines.append(f"{v[0]:.17g} {v[1]:.17g} 0")
    lines.append(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}")
    for c in mesh.cells:
        lines.append(f"3 {c[0]} {c[1]} {c[2]}")
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines.extend(["5"] * mesh.n_cells)
    lines.append(f"CELL_DATA {mesh.n_cells}")
    for name in ("velocity_magnitude", "velocity_y", "pressure", "skw_sigma", "dev_sigma"):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(format(v, ".17g") for v in data[name])
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_outputs(
    out_dir,
    rows: Sequence[Mapping] = (),
    snapshots: Optional[Mapping[float, np.ndarray]] = None,
    space: Optional[FourFieldSpace] = None,
    energy_trace: Optional[np.ndarray] = None,
    prefix: str = "results",
) -> Tuple[Path, ...]:
    """Write the study CSV plus optional VTK snapshots and energy trace."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    paths = [write_results_csv(out / f"{prefix}.csv", rows)]
    if energy_trace is not None:
        paths.append(write_energy_trace(out / f"{prefix}_energy.csv", energy_trace))
    if snapshots:
        if space is None:
            raise ValueError("snapshots need the space they were computed on")
        for t in sorted(snapshots):
            name = f"{prefix}_t{t:g}.vtk".replace("-", "m")
            paths.append(write_vtk(out / name, space, snapshots[t], title=f"state at t = {t:g}"))
    return tuple(paths)
