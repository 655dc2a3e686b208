"""Error-norm, EOC, and writer tests.

The EOC reference slopes below were computed once from the frozen error
tables of a trusted second-order run and are asserted as plain arithmetic.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from poromix.errors import DegenerateRatio, IoError
from poromix.fespace import build_dofmaps, project_L2
from poromix.mesh import generate_structured
from poromix.postproc import (
    CSV_COLUMNS,
    EocTable,
    ErrorReport,
    csv_row,
    eoc,
    error_norms,
    skw_diagnostic,
    write_energy_trace,
    write_outputs,
    write_results_csv,
    write_vtk,
)
from poromix.scenarios import manufactured_case, table1_params
from poromix.timeloop import ENERGY_COLUMNS

ONE_OVER_H = np.array([6.31459315, 12.63640172, 25.14845433, 50.28722371])
ERR_P = np.array([0.04580474, 0.01298907, 0.00341849, 0.00092995])
ERR_SIGMA = np.array([0.03036132, 0.00748607, 0.00181166, 0.00045368])


def monolithic_projection(space, fns, t=0.0, degree=6):
    """Project (pts, t) callables for all four fields into one state vector."""
    x = np.zeros(space.n_total)
    for fld in ("sigma", "p", "u", "w"):
        f = fns[fld]
        x[space.field_slice(fld)] = project_L2(
            space, fld, lambda pts, f=f: f(pts, t), degree=degree
        )
    return x


def constant_exact(u, p, sigma, w):
    u = np.asarray(u, float)
    sigma = np.asarray(sigma, float)
    w = np.asarray(w, float)
    return SimpleNamespace(
        u=lambda pts, t: np.broadcast_to(u, (pts.shape[0], 2)),
        p=lambda pts, t: np.full(pts.shape[0], float(p)),
        sigma=lambda pts, t: np.broadcast_to(sigma, (pts.shape[0], 2, 2)),
        w=lambda pts, t: np.broadcast_to(w, (pts.shape[0], 2)),
        div_sigma=lambda pts, t: np.zeros((pts.shape[0], 2)),
        div_w=lambda pts, t: np.zeros(pts.shape[0]),
    )


def test_eoc_trivial_pair():
    assert np.isclose(eoc([1.0, 2.0], [0.4, 0.1])[0], 2.0)


def test_eoc_second_order_table():
    s = eoc(ONE_OVER_H, ERR_SIGMA)
    assert np.allclose(s, [2.0183, 2.0616, 1.9981], atol=1e-3)
    assert np.allclose(s, 2.0, atol=0.07)


def test_eoc_superlinear_table():
    s = eoc(ONE_OVER_H, ERR_P)
    assert np.allclose(s, [1.8167, 1.9397, 1.8787], atol=1e-3)
    assert np.all(s >= 1.6)


def test_eoc_degenerate_inputs():
    with pytest.raises(DegenerateRatio):
        eoc([1.0, 1.0], [0.4, 0.1])  # equal mesh size
    with pytest.raises(DegenerateRatio):
        eoc([1.0, 2.0], [0.4, 0.0])  # zero error
    with pytest.raises(DegenerateRatio):
        eoc([1.0, 2.0], [0.4, -0.1])
    with pytest.raises(DegenerateRatio):
        eoc([1.0], [0.4])
    with pytest.raises(DegenerateRatio):
        eoc([1.0, 2.0], [0.4, 0.1, 0.05])


def test_eoc_table_wrapper():
    tab = EocTable.from_errors("p", ONE_OVER_H, ERR_P)
    assert tab.field == "p"
    assert len(tab.slopes) == 3
    assert np.allclose(tab.slopes, eoc(ONE_OVER_H, ERR_P))


def test_error_report_rejects_negative_error():
    kw = dict(
        l2_u=0.1, l2_w=0.1, l2_sigma=0.1, l2_p=0.1, l2_dev_sigma=0.1,
        hdiv_sigma=0.1, hdiv_w=0.1, hdiv_sigma_unw=0.1, hdiv_w_unw=0.1,
        skw_ratio=0.0, h=0.5, tau=0.1, n_dofs=10, walltime_s=0.0,
    )
    ErrorReport(**kw)
    kw["l2_sigma"] = -1.0
    with pytest.raises(ValueError):
        ErrorReport(**kw)


def test_error_norms_self_comparison():
    # fields representable in the spaces: projection is exact, errors vanish
    mesh = generate_structured(3, 3)
    space = build_dofmaps(mesh, w_family="BDM1")
    exact = SimpleNamespace(
        u=lambda pts, t: np.broadcast_to(np.array([2.0, -1.0]), (pts.shape[0], 2)),
        p=lambda pts, t: np.full(pts.shape[0], 3.0),
        w=lambda pts, t: np.stack(
            [1 + 2 * pts[:, 0] + 3 * pts[:, 1], 4 - pts[:, 0] + 0.5 * pts[:, 1]], axis=1
        ),
        div_w=lambda pts, t: np.full(pts.shape[0], 2.5),
        sigma=lambda pts, t: np.stack(
            [
                np.stack([pts[:, 0] + pts[:, 1], 2 * pts[:, 0]], axis=1),
                np.stack([1 - pts[:, 1], pts[:, 0]], axis=1),
            ],
            axis=1,
        ),
        div_sigma=lambda pts, t: np.stack(
            [np.ones(pts.shape[0]), np.zeros(pts.shape[0])], axis=1
        ),
    )
    x = monolithic_projection(
        space, {"sigma": exact.sigma, "p": exact.p, "u": exact.u, "w": exact.w}
    )
    rep = error_norms(space, x, exact, t=0.0)
    for name in ("l2_u", "l2_w", "l2_sigma", "l2_p", "l2_dev_sigma",
                 "hdiv_sigma", "hdiv_w", "hdiv_sigma_unw", "hdiv_w_unw"):
        assert getattr(rep, name) <= 1e-12, name
    assert rep.n_dofs == space.n_total
    assert np.isclose(rep.h, mesh.h)


def test_error_norms_zero_state_gives_field_norms():
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="RT0")
    exact = constant_exact(u=(3.0, 4.0), p=2.0, sigma=[[1.0, 2.0], [3.0, 4.0]], w=(0.0, 1.0))
    rep = error_norms(space, np.zeros(space.n_total), exact, t=0.0)
    assert np.isclose(rep.l2_u, 5.0)
    assert np.isclose(rep.l2_p, 2.0)
    assert np.isclose(rep.l2_w, 1.0)
    assert np.isclose(rep.l2_sigma, np.sqrt(30.0))
    # dev of [[1,2],[3,4]] is [[-1.5,2],[3,1.5]]
    assert np.isclose(rep.l2_dev_sigma, np.sqrt(17.5))
    # exact divergences are zero here, so H(div) errors collapse to L2
    assert np.isclose(rep.hdiv_sigma, np.sqrt(30.0))
    assert np.isclose(rep.hdiv_w, 1.0)
    assert np.isclose(rep.hdiv_sigma_unw, rep.hdiv_sigma)
    assert rep.skw_ratio == 0.0


def test_error_norms_hdiv_weighting():
    # w = (x, y) has divergence 2; zero state, exact div norm = 2 on unit square
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="RT0")
    exact = constant_exact(u=(0, 0), p=0.0, sigma=np.zeros((2, 2)), w=(0, 0))
    exact.w = lambda pts, t: pts.copy()
    exact.div_w = lambda pts, t: np.full(pts.shape[0], 2.0)
    rep = error_norms(space, np.zeros(space.n_total), exact, t=0.0)
    l2_sq = rep.l2_w**2
    # domain diameter sqrt(2): weighted norm adds 2 * div_norm^2
    assert np.isclose(rep.hdiv_w, np.sqrt(l2_sq + 2.0 * 4.0))
    assert np.isclose(rep.hdiv_w_unw, np.sqrt(l2_sq + 4.0))


def test_projection_eoc_baseline():
    # approximation orders of the spaces alone, no time stepping involved:
    # cellwise constants converge at first order, the linear flux family at
    # second, on a smooth reference field
    case = manufactured_case(table1_params())
    t = 0.5
    reports = []
    sizes = []
    for n in (4, 8, 16, 32):
        mesh = generate_structured(n, n)
        space = build_dofmaps(mesh, w_family="BDM1")
        x = monolithic_projection(
            space, {"sigma": case.sigma, "p": case.p, "u": case.u, "w": case.w},
            t=t, degree=6,
        )
        reports.append(error_norms(space, x, case, t, against="exact"))
        sizes.append(1.0 / mesh.h)
    for fld, order in (("l2_u", 1.0), ("l2_p", 1.0), ("l2_w", 2.0), ("l2_sigma", 2.0)):
        errs = [getattr(r, fld) for r in reports]
        slope = eoc(sizes, errs)[-1]
        assert abs(slope - order) <= 0.15, (fld, slope)


def test_error_norm_triangle_inequality():
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="BDM1")
    zero = constant_exact(u=(0, 0), p=0.0, sigma=np.zeros((2, 2)), w=(0, 0))
    rng = np.random.default_rng(11)
    for _ in range(5):
        x1 = rng.standard_normal(space.n_total)
        x2 = rng.standard_normal(space.n_total)
        n1 = error_norms(space, x1, zero, 0.0)
        n2 = error_norms(space, x2, zero, 0.0)
        n12 = error_norms(space, x1 + x2, zero, 0.0)
        for fld in ("l2_u", "l2_w", "l2_sigma", "l2_p", "hdiv_sigma", "hdiv_w"):
            assert getattr(n12, fld) <= getattr(n1, fld) + getattr(n2, fld) + 1e-12


def test_skw_diagnostic_limits():
    mesh = generate_structured(3, 3)
    space = build_dofmaps(mesh, w_family="RT0")

    def sym_sigma(pts, t=0.0):
        out = np.empty((pts.shape[0], 2, 2))
        out[:, 0, 0] = pts[:, 0]
        out[:, 0, 1] = pts[:, 0] + pts[:, 1]
        out[:, 1, 0] = pts[:, 0] + pts[:, 1]
        out[:, 1, 1] = 2 * pts[:, 1]
        return out

    x = np.zeros(space.n_total)
    x[space.field_slice("sigma")] = project_L2(space, "sigma", lambda pts: sym_sigma(pts))
    assert skw_diagnostic(space, x) <= 1e-12

    skw = np.array([[0.0, 1.0], [-1.0, 0.0]])
    x[:] = 0.0
    x[space.field_slice("sigma")] = project_L2(
        space, "sigma", lambda pts: np.broadcast_to(skw, (pts.shape[0], 2, 2))
    )
    assert np.isclose(skw_diagnostic(space, x), 1.0)
    assert skw_diagnostic(space, np.zeros(space.n_total)) == 0.0


def test_results_csv_roundtrip(tmp_path):
    rep = ErrorReport(
        l2_u=1 / 3, l2_w=2e-5, l2_sigma=0.25, l2_p=0.5, l2_dev_sigma=0.2,
        hdiv_sigma=0.3, hdiv_w=3e-5, hdiv_sigma_unw=0.26, hdiv_w_unw=2.5e-5,
        skw_ratio=1e-3, h=0.25, tau=0.01, n_dofs=432, walltime_s=1.5,
    )
    row = csv_row("convergence", 2, rep, energy_final=7.25)
    assert set(row) == set(CSV_COLUMNS)
    path = write_results_csv(tmp_path / "out.csv", [row])
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    vals = dict(zip(CSV_COLUMNS, lines[1].split(",")))
    assert vals["scenario"] == "convergence"
    assert vals["level"] == "2"
    assert vals["ndofs"] == "432"
    assert vals["l2_u"] == "0.33333333333333331"
    assert float(vals["one_over_h"]) == 4.0
    assert float(vals["energy_final"]) == 7.25

    again = write_results_csv(tmp_path / "out2.csv", [row])
    assert again.read_bytes() == path.read_bytes()


def test_results_csv_empty_is_header_only(tmp_path):
    path = write_results_csv(tmp_path / "empty.csv", [])
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_results_csv_io_error(tmp_path):
    with pytest.raises(IoError):
        write_results_csv(tmp_path / "missing_dir" / "out.csv", [])


def test_energy_trace_roundtrip(tmp_path):
    trace = np.arange(21, dtype=float).reshape(3, 7) / 7.0
    path = write_energy_trace(tmp_path / "energy.csv", trace)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ",".join(ENERGY_COLUMNS)
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back, trace)
    with pytest.raises(ValueError):
        write_energy_trace(tmp_path / "bad.csv", np.zeros((2, 3)))


def _parse_vtk(text):
    lines = text.strip().split("\n")
    assert lines[0] == "# vtk DataFile Version 2.0"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    sections = {}
    i = 4
    while i < len(lines):
        head = lines[i].split()
        if head[0] in ("POINTS", "CELLS", "CELL_TYPES"):
            n = int(head[1])
            rows = lines[i + 1 : i + 1 + n]
            sections[head[0]] = rows
            i += 1 + n
        elif head[0] == "CELL_DATA":
            n = int(head[1])
            i += 1
            while i < len(lines):
                assert lines[i].startswith("SCALARS ")
                name = lines[i].split()[1]
                assert lines[i + 1] == "LOOKUP_TABLE default"
                sections[name] = np.array([float(v) for v in lines[i + 2 : i + 2 + n]])
                i += 2 + n
        else:
            raise AssertionError(f"unexpected line: {lines[i]}")
    return sections


def test_vtk_zero_state_grammar(tmp_path):
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="RT0")
    path = write_vtk(tmp_path / "zero.vtk", space, np.zeros(space.n_total))
    sec = _parse_vtk(path.read_text())
    assert len(sec["POINTS"]) == mesh.n_vertices
    assert len(sec["CELLS"]) == mesh.n_cells
    assert all(r.startswith("3 ") for r in sec["CELLS"])
    assert all(r == "5" for r in sec["CELL_TYPES"])
    for name in ("velocity_magnitude", "velocity_y", "pressure", "skw_sigma", "dev_sigma"):
        assert name in sec
        assert sec[name].shape == (mesh.n_cells,)
        assert np.all(sec[name] == 0.0)


def test_vtk_cell_values(tmp_path):
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="RT0")
    x = np.zeros(space.n_total)
    dm_u = space.maps["u"]
    x[dm_u.offset + 0 : dm_u.offset + dm_u.n_global : 2] = 3.0
    x[dm_u.offset + 1 : dm_u.offset + dm_u.n_global : 2] = 4.0
    dm_p = space.maps["p"]
    x[dm_p.offset : dm_p.offset + dm_p.n_global] = 2.0
    skw = np.array([[0.0, 1.0], [-1.0, 0.0]])
    x[space.field_slice("sigma")] = project_L2(
        space, "sigma", lambda pts: np.broadcast_to(skw, (pts.shape[0], 2, 2))
    )
    sec = _parse_vtk(write_vtk(tmp_path / "s.vtk", space, x).read_text())
    assert np.allclose(sec["velocity_magnitude"], 5.0)
    assert np.allclose(sec["velocity_y"], 4.0)
    assert np.allclose(sec["pressure"], 2.0)
    # |skw| and |dev| of [[0,1],[-1,0]] are both sqrt(2)
    assert np.allclose(sec["skw_sigma"], np.sqrt(2.0))
    assert np.allclose(sec["dev_sigma"], np.sqrt(2.0))


def test_write_outputs_bundle(tmp_path):
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, w_family="RT0")
    x = np.zeros(space.n_total)
    rep = error_norms(
        space, x,
        constant_exact(u=(1, 0), p=0.0, sigma=np.zeros((2, 2)), w=(0, 0)),
        t=1.0, tau=0.1, walltime_s=0.2,
    )
    row = csv_row("wave", 0, rep, energy_final=0.0)
    trace = np.zeros((2, len(ENERGY_COLUMNS)))
    paths = write_outputs(
        tmp_path / "study", rows=[row], snapshots={0.8: x, 1.0: x},
        space=space, energy_trace=trace,
    )
    names = sorted(p.name for p in paths)
    assert names == ["results.csv", "results_energy.csv", "results_t0.8.vtk", "results_t1.vtk"]
    for p in paths:
        assert p.exists()


def test_error_norms_comparator_modes():
    # the pressure error vanishes against its cell means but not against the
    # exact field; the velocity error is the exact-field distance either way
    mesh = generate_structured(4, 4, diagonal="alternate")
    space = build_dofmaps(mesh, w_family="RT0")
    exact = SimpleNamespace(
        u=lambda pts, t: np.stack(
            [np.sin(pts[:, 0] + pts[:, 1]), np.cos(pts[:, 0])], axis=1
        ),
        p=lambda pts, t: np.sin(np.pi * pts[:, 0]) * pts[:, 1],
        w=lambda pts, t: np.stack(
            [np.cos(pts[:, 1]) ** 2, np.sin(pts[:, 0] * pts[:, 1])], axis=1
        ),
        div_w=lambda pts, t: pts[:, 0] * np.cos(pts[:, 0] * pts[:, 1]),
        sigma=lambda pts, t: np.stack(
            [
                np.stack([np.cos(pts[:, 1]), pts[:, 0] * pts[:, 1]], axis=1),
                np.stack([pts[:, 1] ** 2, np.sin(pts[:, 0])], axis=1),
            ],
            axis=1,
        ),
        div_sigma=lambda pts, t: np.stack(
            [pts[:, 0], np.cos(pts[:, 0])], axis=1
        ),
    )
    x = monolithic_projection(
        space, {"sigma": exact.sigma, "p": exact.p, "u": exact.u, "w": exact.w}
    )
    rep_i = error_norms(space, x, exact, t=0.0, against="interpolant")
    rep_e = error_norms(space, x, exact, t=0.0, against="exact")
    assert rep_i.l2_p <= 1e-12
    assert rep_e.l2_p > 1e-3
    assert np.isclose(rep_i.l2_u, rep_e.l2_u, rtol=1e-12)
    assert rep_e.l2_u > 1e-3
    # curved flux: its projection and its edge-moment interpolant differ
    assert rep_i.l2_w > 1e-8
    assert not np.isclose(rep_i.l2_w, rep_e.l2_w, rtol=1e-3)
    with pytest.raises(ValueError):
        error_norms(space, x, exact, t=0.0, against="nearest")
