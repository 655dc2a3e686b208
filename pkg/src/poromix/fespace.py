"""Global degrees of freedom, gather/scatter tables, and L2 projection.

Monolithic unknown ordering is [sigma, p, u, w]. Edge dofs are shared
between adjacent cells; cell_signs holds the orientation factors relating
each cell's induced edge functionals to the global ones (normal agreement
for constant moments, normal times tangent agreement for linear moments),
which is what makes assembled fields H(div)-conforming across edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import eval_basis, gauss_edge, piola_map, reference_element, triangle_quadrature
from .errors import OutOfElement, SingularLocalMass, UnsupportedDegree
from .mesh import Mesh

FIELD_ORDER = ("sigma", "p", "u", "w")


@dataclass(frozen=True)
class DofMap:
    field: str
    family: str
    n_global: int
    offset: int  # start of this field in the monolithic vector
    cell_dofs: np.ndarray  # (nc, n_local) field-local global indices
    cell_signs: np.ndarray  # (nc, n_local) orientation factors, +-1

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def monolithic_dofs(self) -> np.ndarray:
        return self.offset + self.cell_dofs


@dataclass(frozen=True)
class FourFieldSpace:
    mesh: Mesh
    w_family: str
    maps: Dict[str, DofMap]
    n_total: int

    def dofmap(self, field: str) -> DofMap:
        return self.maps[field]

    def field_slice(self, field: str) -> slice:
        dm = self.maps[field]
        return slice(dm.offset, dm.offset + dm.n_global)


def _edge_dof_tables(mesh: Mesh):
    """Per-cell BDM1-pattern edge dofs (2 per edge) and their signs."""
    nc = mesh.n_cells
    dofs = np.zeros((nc, 6), dtype=np.int64)
    signs = np.zeros((nc, 6))
    for k in range(3):
        e = mesh.cell_edges[:, k]
        ns = mesh.cell_edge_sign[:, k]
        dofs[:, 2 * k] = 2 * e
        dofs[:, 2 * k + 1] = 2 * e + 1
        signs[:, 2 * k] = ns
        signs[:, 2 * k + 1] = ns * mesh.cell_edge_dir[:, k]
    return dofs, signs


def build_dofmaps(mesh: Mesh, w_family: str = "RT0") -> FourFieldSpace:
    """Lowest-order four-field layout: sigma, then p, then u, then w."""
    if w_family not in ("RT0", "BDM1"):
        raise UnsupportedDegree(f"filtration space must be RT0 or BDM1, got {w_family!r}")
    E, C = mesh.n_edges, mesh.n_cells
    bdm_dofs, bdm_signs = _edge_dof_tables(mesh)
    cells = np.arange(C, dtype=np.int64)

    sigma = DofMap(
        "sigma", "TensorBDM1", 4 * E, 0,
        np.concatenate([bdm_dofs, 2 * E + bdm_dofs], axis=1),
        np.concatenate([bdm_signs, bdm_signs], axis=1),
    )
    p = DofMap("p", "DG0scalar", C, 4 * E, cells[:, None], np.ones((C, 1)))
    u = DofMap(
        "u", "DG0vector", 2 * C, 4 * E + C,
        np.stack([2 * cells, 2 * cells + 1], axis=1), np.ones((C, 2)),
    )
    if w_family == "RT0":
        w = DofMap(
            "w", "RT0", E, 4 * E + 3 * C,
            mesh.cell_edges.astype(np.int64), mesh.cell_edge_sign.astype(float),
        )
    else:
        w = DofMap("w", "BDM1", 2 * E, 4 * E + 3 * C, bdm_dofs, bdm_signs)
    maps = {"sigma": sigma, "p": p, "u": u, "w": w}
    return FourFieldSpace(mesh, w_family, maps, w.offset + w.n_global)


def cell_basis_tables(space: FourFieldSpace, field: str, degree: int = 4):
    """Physical basis values (and divergences) at quadrature points, all cells.

    Returns (rule, vals, divs): vals is (nc, nq, nloc) for scalars with one
    trailing axis added per tensor rank; divs is (nc, nloc) for vector H(div)
    families, (nc, nloc, 2) row-wise for the stress family, else None.
    """
    mesh = space.mesh
    dm = space.maps[field]
    elem = reference_element(dm.family)
    rule = triangle_quadrature(degree)
    ref_vals, ref_divs = eval_basis(elem, rule.points, check=False)
    if ref_divs is not None:
        vals, divs = piola_map(mesh.B, mesh.detB, ref_vals, ref_divs)
        return rule, vals, divs
    shape = (mesh.n_cells,) + ref_vals.shape
    return rule, np.broadcast_to(ref_vals[None], shape), None


def gather(space: FourFieldSpace, field: str, x: np.ndarray) -> np.ndarray:
    """Per-cell local coefficients from a monolithic or field vector."""
    dm = space.maps[field]
    if x.shape[0] == space.n_total:
        xf = x[dm.offset : dm.offset + dm.n_global]
    elif x.shape[0] == dm.n_global:
        xf = x
    else:
        raise ValueError(f"vector length {x.shape[0]} fits neither {field} nor the monolithic layout")
    return xf[dm.cell_dofs] * dm.cell_signs


def scatter_add(space: FourFieldSpace, field: str, local: np.ndarray, out: np.ndarray) -> None:
    """Accumulate signed per-cell contributions into a monolithic vector."""
    dm = space.maps[field]
    np.add.at(out, dm.monolithic_dofs, local * dm.cell_signs)


_CONTRACT = {1: "q,c,cqi,cqj->cij", 2: "q,c,cqia,cqja->cij", 3: "q,c,cqiab,cqjab->cij"}


def field_mass_matrix(space: FourFieldSpace, field: str, degree: int = 4) -> sp.csr_matrix:
    """Unweighted L2 mass matrix of one field (field-local numbering)."""
    dm = space.maps[field]
    rule, vals, _ = cell_basis_tables(space, field, degree)
    sub = _CONTRACT[vals.ndim - 2]
    loc = np.einsum(sub, rule.weights, space.mesh.detB, vals, vals)
    loc = loc * dm.cell_signs[:, :, None] * dm.cell_signs[:, None, :]
    n = dm.n_local
    rows = np.repeat(dm.cell_dofs, n, axis=1).ravel()
    cols = np.tile(dm.cell_dofs, (1, n)).ravel()
    M = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(dm.n_global, dm.n_global))
    return M.tocsr()


def _point_values(fn: Callable, pts: np.ndarray, rank: int) -> np.ndarray:
    vals = np.asarray(fn(pts), dtype=float)
    want = pts.shape[:1] + (2,) * rank
    if vals.shape != want:
        raise ValueError(f"field callable returned shape {vals.shape}, expected {want}")
    return vals


def project_L2(space: FourFieldSpace, field: str, fn: Callable, degree: int = 4) -> np.ndarray:
    """Global L2 projection of a callable onto one field (field vector).

    fn maps points (n, 2) to values of the field's tensor rank. The global
    mass system is solved with a sparse LU factorization.
    """
    dm = space.maps[field]
    rule, vals, _ = cell_basis_tables(space, field, degree)
    rank = vals.ndim - 3
    mesh = space.mesh
    phys = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum(
        "cab,qb->cqa", mesh.B, rule.points
    )
    fvals = _point_values(fn, phys.reshape(-1, 2), rank).reshape(phys.shape[:2] + (2,) * rank)
    sub = {0: "q,c,cqi,cq->ci", 1: "q,c,cqia,cqa->ci", 2: "q,c,cqiab,cqab->ci"}[rank]
    rhs_loc = np.einsum(sub, rule.weights, mesh.detB, vals, fvals)
    rhs = np.zeros(dm.n_global)
    np.add.at(rhs, dm.cell_dofs, rhs_loc * dm.cell_signs)
    M = field_mass_matrix(space, field, degree)
    try:
        lu = spla.splu(M.tocsc())
        coeffs = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularLocalMass(f"mass system for field {field!r} is singular") from exc
    if not np.all(np.isfinite(coeffs)):
        raise SingularLocalMass(f"mass solve for field {field!r} returned non-finite values")
    return coeffs


def interpolate(space: FourFieldSpace, field: str, fn: Callable, edge_points: int = 4) -> np.ndarray:
    """Canonical interpolant of a callable (field vector).

    DG0 fields take cell means.  H(div) fields take the edge normal moments
    dual to the basis, so the interpolant commutes with the divergence:
    div of the interpolant equals the cellwise mean of div of the field.
    """
    dm = space.maps[field]
    if dm.family in ("DG0scalar", "DG0vector"):
        return project_L2(space, field, fn, degree=6)
    mesh = space.mesh
    s, wq = gauss_edge(edge_points)
    a = mesh.vertices[mesh.edges[:, 0]]
    tvec = mesh.vertices[mesh.edges[:, 1]] - a
    pts = a[:, None, :] + s[None, :, None] * tvec[:, None, :]  # (ne, nq, 2)
    lengths = mesh.edge_lengths()
    normals = mesh.edge_normals()
    rank = 2 if dm.family == "TensorBDM1" else 1
    vals = _point_values(fn, pts.reshape(-1, 2), rank).reshape(pts.shape[:2] + (2,) * rank)
    coeffs = np.zeros(dm.n_global)
    if rank == 1:
        vn = np.einsum("eqi,ei->eq", vals, normals)
        c0 = lengths * (vn @ wq)
        if dm.family == "RT0":
            coeffs[:] = c0
        else:
            coeffs[0::2] = c0
            coeffs[1::2] = lengths * (vn @ (wq * (s - 0.5)))
    else:
        ne = mesh.n_edges
        vn = np.einsum("eqri,ei->eqr", vals, normals)
        for r in range(2):
            base = 2 * ne * r
            coeffs[base : base + 2 * ne : 2] = lengths * (vn[:, :, r] @ wq)
            coeffs[base + 1 : base + 2 * ne : 2] = lengths * (vn[:, :, r] @ (wq * (s - 0.5)))
    return coeffs


def evaluate(space: FourFieldSpace, field: str, x: np.ndarray, cells, points) -> np.ndarray:
    """Evaluate a coefficient field at physical points inside given cells.

    points: (m, 2), cells: (m,) cell indices containing them. Points outside
    their claimed cell raise OutOfElement. Returns (m,) / (m, 2) / (m, 2, 2)
    depending on the field's rank.
    """
    mesh = space.mesh
    dm = space.maps[field]
    cells = np.asarray(cells, dtype=np.int64)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    B = mesh.B[cells]
    d = points - mesh.vertices[mesh.cells[cells, 0]]
    det = mesh.detB[cells]
    ref = np.stack(
        [
            (B[:, 1, 1] * d[:, 0] - B[:, 0, 1] * d[:, 1]) / det,
            (-B[:, 1, 0] * d[:, 0] + B[:, 0, 0] * d[:, 1]) / det,
        ],
        axis=1,
    )
    tol = 1e-9
    if np.any(ref < -tol) or np.any(ref.sum(axis=1) > 1.0 + tol):
        raise OutOfElement("point does not lie in its claimed cell")
    elem = reference_element(dm.family)
    ref_vals, ref_divs = eval_basis(elem, ref, check=False)
    if ref_divs is not None:
        if ref_vals.ndim == 3:
            vals = np.einsum("mab,mjb->mja", B, ref_vals) / det[:, None, None]
        else:
            vals = np.einsum("mab,mjrb->mjra", B, ref_vals) / det[:, None, None, None]
    else:
        vals = ref_vals
    coeffs = gather(space, field, x)[cells]
    sub = {3: "mj,mj->m", 4: "mj,mja->ma", 5: "mj,mjra->mra"}[vals.ndim + 1]
    return np.einsum(sub, coeffs, vals)
