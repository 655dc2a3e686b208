"""Monolithic mass/stiffness assembly for the four-field system.

The unknown ordering is [sigma, p, u, w]. M multiplies the time derivative
and carries the constitutive couplings (compliance with the skew penalty,
Biot storage, and the density block); A carries the div/grad pairings and
the Darcy drag. Displacement and pressure data enter as natural boundary
terms in the load vector; homogeneous traction/flux conditions are imposed
by constraining edge dofs.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .elements import gauss_edge
from .errors import AssemblyOverflow, NonFiniteEntry
from .fespace import FourFieldSpace, cell_basis_tables, gather
from .model import BoundaryData, LoadFunctions, ModelParams, PenaltySpec, dev2, skw2, tr2

_OVERFLOW_LIMIT = 1e60


def _scatter_block(loc, dmA, dmB, rows, cols, data):
    """Append one (nc, nA, nB) block of signed local matrices."""
    signed = loc * dmA.cell_signs[:, :, None] * dmB.cell_signs[:, None, :]
    shape = signed.shape
    rows.append(np.broadcast_to(dmA.monolithic_dofs[:, :, None], shape).ravel())
    cols.append(np.broadcast_to(dmB.monolithic_dofs[:, None, :], shape).ravel())
    data.append(signed.ravel())


def _finalize(rows, cols, data, n, what):
    vals = np.concatenate(data)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteEntry(f"{what} assembly produced non-finite entries")
    if np.max(np.abs(vals)) > _OVERFLOW_LIMIT:
        raise AssemblyOverflow(f"{what} assembly produced entries beyond {_OVERFLOW_LIMIT:g}")
    M = sp.coo_matrix(
        (vals, (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return M.tocsr()


def assemble_M(
    space: FourFieldSpace,
    params: ModelParams,
    penalty: Optional[PenaltySpec] = None,
    degree: int = 4,
) -> sp.csr_matrix:
    """Matrix multiplying the time derivative of [sigma, p, u, w].

    Blocks: penalized compliance (sigma, sigma), Biot coupling (sigma, p)
    and storage (p, p), and the density block on (u, w). Symmetric, and
    positive definite whenever the density matrix is nonsingular.
    """
    if penalty is None:
        penalty = PenaltySpec()
    mesh = space.mesh
    rows, cols, data = [], [], []

    rule, svals, _ = cell_basis_tables(space, "sigma", degree)
    w, detB = rule.weights, mesh.detB
    dev = dev2(svals)
    skw = skw2(svals)
    tr = tr2(svals)
    kappa = params.kappa
    dev_mass = np.einsum("q,c,cqiab,cqjab->cij", w, detB, dev, dev)
    skw_mass = np.einsum("q,c,cqiab,cqjab->cij", w, detB, skw, skw)
    tr_mass = np.einsum("q,c,cqi,cqj->cij", w, detB, tr, tr)
    inv_eps = 1.0 / penalty.eps(mesh.h_T)
    loc_ss = (
        dev_mass / (2.0 * params.mu)
        + tr_mass / (4.0 * kappa)
        + skw_mass * (0.5 * inv_eps)[:, None, None]
    )
    dm_s, dm_p = space.maps["sigma"], space.maps["p"]
    _scatter_block(loc_ss, dm_s, dm_s, rows, cols, data)

    # Biot coupling alpha/(2 kappa) (tr sigma, q) and its transpose
    tr_int = np.einsum("q,c,cqi->ci", w, detB, tr)
    loc_sp = (params.alpha / (2.0 * kappa)) * tr_int[:, :, None]
    _scatter_block(loc_sp, dm_s, dm_p, rows, cols, data)
    _scatter_block(np.swapaxes(loc_sp, 1, 2), dm_p, dm_s, rows, cols, data)

    stor = params.s0 + params.alpha**2 / kappa
    loc_pp = (stor * mesh.area)[:, None, None]
    _scatter_block(loc_pp, dm_p, dm_p, rows, cols, data)

    dm_u, dm_w = space.maps["u"], space.maps["w"]
    _, wvals, _ = cell_basis_tables(space, "w", degree)
    eye2 = np.broadcast_to(np.eye(2)[None, None], (mesh.n_cells, rule.points.shape[0], 2, 2))
    uu = np.einsum("q,c,cqia,cqja->cij", w, detB, eye2, eye2)
    uw = np.einsum("q,c,cqia,cqja->cij", w, detB, eye2, wvals)
    ww = np.einsum("q,c,cqia,cqja->cij", w, detB, wvals, wvals)
    _scatter_block(params.rho_u * uu, dm_u, dm_u, rows, cols, data)
    _scatter_block(params.rho_f * uw, dm_u, dm_w, rows, cols, data)
    _scatter_block(params.rho_f * np.swapaxes(uw, 1, 2), dm_w, dm_u, rows, cols, data)
    _scatter_block(params.rho_w * ww, dm_w, dm_w, rows, cols, data)

    return _finalize(rows, cols, data, space.n_total, "mass")


def assemble_A(space: FourFieldSpace, params: ModelParams, degree: int = 4) -> sp.csr_matrix:
    """Non-derivative part: div/grad couplings and the Darcy drag.

    The (sigma, u) and (p, w) couplings are exact negative transposes of
    (u, sigma) and (w, p), so x^T A x reduces to the drag term (K^-1 w, w).
    """
    mesh = space.mesh
    nc = mesh.n_cells
    rows, cols, data = [], [], []
    dm_s, dm_p = space.maps["sigma"], space.maps["p"]
    dm_u, dm_w = space.maps["u"], space.maps["w"]

    rule, _, sdivs = cell_basis_tables(space, "sigma", degree)
    # integral over a cell of the mapped divergence: the Jacobian cancels
    half_div_s = 0.5 * sdivs * mesh.detB[:, None, None]  # (nc, 12, 2)
    loc_su = np.swapaxes(half_div_s, 1, 2)  # (nc, 2, 12), rows u, cols sigma
    _scatter_block(-loc_su, dm_u, dm_s, rows, cols, data)
    _scatter_block(np.swapaxes(loc_su, 1, 2), dm_s, dm_u, rows, cols, data)

    _, wvals, wdivs = cell_basis_tables(space, "w", degree)
    half_div_w = 0.5 * wdivs * mesh.detB[:, None]  # (nc, nw)
    _scatter_block(-half_div_w[:, :, None], dm_w, dm_p, rows, cols, data)
    _scatter_block(half_div_w[:, None, :], dm_p, dm_w, rows, cols, data)

    Kinv_w = np.einsum("ab,cqjb->cqja", params.K_inv, wvals)
    drag = np.einsum("q,c,cqia,cqja->cij", rule.weights, mesh.detB, wvals, Kinv_w)
    _scatter_block(drag, dm_w, dm_w, rows, cols, data)

    return _finalize(rows, cols, data, space.n_total, "stiffness")


def _boundary_geometry(mesh, n_gauss):
    edges = mesh.boundary_edges
    vlo = mesh.vertices[mesh.edges[edges, 0]]
    vhi = mesh.vertices[mesh.edges[edges, 1]]
    s, w = gauss_edge(n_gauss)
    pts = vlo[:, None, :] * (1.0 - s[None, :, None]) + vhi[:, None, :] * s[None, :, None]
    return edges, s, w, pts


def assemble_load(
    space: FourFieldSpace,
    loads: Optional[LoadFunctions],
    bdata: Optional[BoundaryData],
    t: float,
    degree: int = 4,
    n_edge_gauss: int = 4,
) -> np.ndarray:
    """Right-hand side at time t: volume loads plus natural boundary data.

    Displacement-velocity data u_d enters the stress rows through the edge
    moments of u_d; pressure data p_d enters the filtration rows with a
    minus sign. Edge dofs dual to global moments pick these up directly.
    """
    mesh = space.mesh
    b = np.zeros(space.n_total)
    rule = None
    if loads is not None and any(
        fn is not None for fn in (loads.f, loads.h, loads.g, loads.eta)
    ):
        rule, _, _ = cell_basis_tables(space, "p", degree)
        phys = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum(
            "cab,qb->cqa", mesh.B, rule.points
        )
        flat = phys.reshape(-1, 2)
        wq, detB = rule.weights, mesh.detB
        if loads.f is not None:
            fv = np.asarray(loads.f(flat, t)).reshape(phys.shape)
            loc = np.einsum("q,c,cqa->ca", wq, detB, fv)
            dm = space.maps["u"]
            np.add.at(b, dm.monolithic_dofs, loc * dm.cell_signs)
        if loads.g is not None:
            gv = np.asarray(loads.g(flat, t)).reshape(phys.shape[:2])
            loc = np.einsum("q,c,cq->c", wq, detB, gv)[:, None]
            dm = space.maps["p"]
            np.add.at(b, dm.monolithic_dofs, loc * dm.cell_signs)
        if loads.h is not None:
            hv = np.asarray(loads.h(flat, t)).reshape(phys.shape)
            _, wvals, _ = cell_basis_tables(space, "w", degree)
            loc = np.einsum("q,c,cqja,cqa->cj", wq, detB, wvals, hv)
            dm = space.maps["w"]
            np.add.at(b, dm.monolithic_dofs, loc * dm.cell_signs)
        if loads.eta is not None:
            ev = np.asarray(loads.eta(flat, t)).reshape(phys.shape[:2] + (2, 2))
            _, svals, _ = cell_basis_tables(space, "sigma", degree)
            loc = np.einsum("q,c,cqjab,cqab->cj", wq, detB, svals, ev)
            dm = space.maps["sigma"]
            np.add.at(b, dm.monolithic_dofs, loc * dm.cell_signs)

    if bdata is not None and mesh.boundary_edges.size:
        edges, s, w, pts = _boundary_geometry(mesh, n_edge_gauss)
        flat = pts.reshape(-1, 2)
        lin_w = 12.0 * w * (s - 0.5)
        E = mesh.n_edges
        if bdata.u_d is not None:
            on = mesh.bnd_mech == "Gd"
            if np.any(on):
                ud = np.asarray(bdata.u_d(flat, t)).reshape(pts.shape)[on]
                const_m = np.einsum("g,egr->er", w, ud)
                lin_m = np.einsum("g,egr->er", lin_w, ud)
                for r in range(2):
                    base = 2 * E * r + 2 * edges[on]
                    np.add.at(b, base, const_m[:, r])
                    np.add.at(b, base + 1, lin_m[:, r])
        if bdata.p_d is not None:
            on = mesh.bnd_flow == "Gp"
            if np.any(on):
                pd = np.asarray(bdata.p_d(flat, t)).reshape(pts.shape[:2])[on]
                dm_w = space.maps["w"]
                if space.w_family == "RT0":
                    wd = dm_w.offset + edges[on]
                    np.add.at(b, wd, -np.einsum("g,eg->e", w, pd))
                else:
                    base = dm_w.offset + 2 * edges[on]
                    np.add.at(b, base, -np.einsum("g,eg->e", w, pd))
                    np.add.at(b, base + 1, -np.einsum("g,eg->e", lin_w, pd))

    if not np.all(np.isfinite(b)):
        raise NonFiniteEntry("load assembly produced non-finite entries")
    return b


def essential_mask(space: FourFieldSpace) -> np.ndarray:
    """Dofs held at zero: stress moments on traction edges, filtration
    moments on impermeable edges. Empty for all-Dirichlet data."""
    mesh = space.mesh
    mask = np.zeros(space.n_total, dtype=bool)
    E = mesh.n_edges
    sig_edges = mesh.boundary_edges[mesh.bnd_mech == "Gsigma"]
    for r in range(2):
        mask[2 * E * r + 2 * sig_edges] = True
        mask[2 * E * r + 2 * sig_edges + 1] = True
    w_edges = mesh.boundary_edges[mesh.bnd_flow == "Gw"]
    dm_w = space.maps["w"]
    if space.w_family == "RT0":
        mask[dm_w.offset + w_edges] = True
    else:
        mask[dm_w.offset + 2 * w_edges] = True
        mask[dm_w.offset + 2 * w_edges + 1] = True
    return mask


def apply_essential(mat: sp.csr_matrix, mask: np.ndarray) -> sp.csr_matrix:
    """Zero constrained rows/columns and put ones on their diagonal."""
    if not mask.any():
        return mat
    keep = (~mask).astype(float)
    D = sp.diags(keep)
    out = (D @ mat @ D).tolil()
    idx = np.flatnonzero(mask)
    out[idx, idx] = 1.0
    return out.tocsr()


def conservation_aux(space: FourFieldSpace, degree: int = 4) -> dict:
    """Precomputed geometry for the cell-wise mass balance check."""
    mesh = space.mesh
    rule, svals, _ = cell_basis_tables(space, "sigma", degree)
    mean_w = 2.0 * rule.weights  # reference weights normalized to cell means
    _, _, wdivs = cell_basis_tables(space, "w", degree)
    phys = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum(
        "cab,qb->cqa", mesh.B, rule.points
    )
    return {
        "tr_mean": np.einsum("q,cqi->ci", mean_w, tr2(svals)),
        "wdivs": wdivs,
        "phys": phys,
        "mean_w": mean_w,
    }


def local_conservation_residual(
    space: FourFieldSpace,
    params: ModelParams,
    x_new: np.ndarray,
    x_old: np.ndarray,
    tau: float,
    g: Optional[Callable] = None,
    t_new: float = 0.0,
    degree: int = 4,
    aux: Optional[dict] = None,
) -> np.ndarray:
    """Cell-wise mass balance of the discrete solution, scaled by cell area.

    Recomputed from cell means rather than matrix rows: storage change of
    the mean pressure and mean stress trace, plus the (constant) divergence
    of the filtration velocity, minus the mean source.
    """
    mesh = space.mesh
    if aux is None:
        aux = conservation_aux(space, degree)
    dsig = gather(space, "sigma", x_new) - gather(space, "sigma", x_old)
    tr_mean = np.einsum("ci,ci->c", aux["tr_mean"], dsig)
    dp = (gather(space, "p", x_new) - gather(space, "p", x_old))[:, 0]
    div_w = np.einsum("ci,ci->c", gather(space, "w", x_new), aux["wdivs"])
    if g is not None:
        phys = aux["phys"]
        gv = np.asarray(g(phys.reshape(-1, 2), t_new)).reshape(phys.shape[:2])
        g_mean = np.einsum("q,cq->c", aux["mean_w"], gv)
    else:
        g_mean = 0.0
    stor = params.s0 + params.alpha**2 / params.kappa
    rate = stor * dp / tau + (params.alpha / (2.0 * params.kappa)) * tr_mean / tau
    return np.abs(rate + div_w - g_mean) * mesh.area
