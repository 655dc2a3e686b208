"""Structured conforming triangulations with oriented edges and boundary tags.

Edge conventions used by the whole discretization:
  - edges store their vertex pair sorted ascending; the global tangent runs
    from the lower to the higher vertex index,
  - the global edge normal points from the lower-index to the higher-index
    adjacent cell (outward on boundary edges),
  - local edge k of cell (v0, v1, v2) is the edge opposite vertex k, so the
    CCW-induced tangents are v1->v2, v2->v0, v0->v1.

cell_edge_sign records cell-outward-normal vs global-normal agreement and
cell_edge_dir records induced-tangent vs global-tangent agreement; both are
consumed by the H(div) degree-of-freedom maps.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Tuple

import numpy as np

from .errors import EmptyEssentialBoundary, InvalidExtent

MECH_TAGS = ("Gd", "Gsigma")
FLOW_TAGS = ("Gp", "Gw")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3) CCW vertex triples
    edges: np.ndarray  # (ne, 2) sorted vertex pairs
    cell_edges: np.ndarray  # (nc, 3) global edge index per local edge
    cell_edge_sign: np.ndarray  # (nc, 3) +-1 normal agreement
    cell_edge_dir: np.ndarray  # (nc, 3) +-1 tangent agreement
    edge_cells: np.ndarray  # (ne, 2) adjacent cells, -1 for missing
    boundary_edges: np.ndarray  # (nb,) edge indices
    bnd_mech: np.ndarray  # (nb,) strings in MECH_TAGS
    bnd_flow: np.ndarray  # (nb,) strings in FLOW_TAGS
    B: np.ndarray  # (nc, 2, 2) affine map Jacobians
    detB: np.ndarray  # (nc,)
    area: np.ndarray  # (nc,)
    h_T: np.ndarray  # (nc,) cell diameters

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def h(self) -> float:
        return float(self.h_T.max())

    def edge_lengths(self, edge_idx=None) -> np.ndarray:
        e = self.edges if edge_idx is None else self.edges[edge_idx]
        d = self.vertices[e[..., 1]] - self.vertices[e[..., 0]]
        return np.hypot(d[..., 0], d[..., 1])

    def edge_midpoints(self, edge_idx=None) -> np.ndarray:
        e = self.edges if edge_idx is None else self.edges[edge_idx]
        return 0.5 * (self.vertices[e[..., 0]] + self.vertices[e[..., 1]])

    def edge_normals(self, edge_idx=None) -> np.ndarray:
        """Unit normals in the global convention (outward from the lower cell)."""
        idx = np.arange(self.n_edges) if edge_idx is None else np.asarray(edge_idx)
        e = self.edges[idx]
        t = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        t /= np.linalg.norm(t, axis=1)[:, None]
        # global tangent low->high vertex; rotate by -90 deg, then fix the
        # sign so the normal points away from the lower cell's centroid
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        owner = self.edge_cells[idx, 0]
        centroid = self.vertices[self.cells[owner]].mean(axis=1)
        mid = self.edge_midpoints(idx)
        flip = np.sign(np.einsum("ei,ei->e", n, mid - centroid))
        return n * flip[:, None]

    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges (global orientation)."""
        return self.edge_normals(self.boundary_edges)


def _build_mesh(vertices, cells, bnd_tags=None) -> Mesh:
    """Derive edge topology, orientation signs, and geometry from raw arrays."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    nc = cells.shape[0]

    # local edge k is opposite local vertex k
    local = np.stack(
        [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1
    )  # (nc, 3, 2) induced-direction vertex pairs
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(nc, 3).astype(np.int64)

    # induced tangent agrees with global (low->high) tangent?
    cell_edge_dir = np.where(local[:, :, 0] < local[:, :, 1], 1, -1).astype(np.int64)

    # adjacent cells per edge, ascending cell index
    ne = edges.shape[0]
    edge_cells = np.full((ne, 2), -1, dtype=np.int64)
    order = np.argsort(cell_edges.ravel(), kind="stable")
    flat_cells = np.repeat(np.arange(nc, dtype=np.int64), 3)[order]
    flat_edges = cell_edges.ravel()[order]
    counts = np.bincount(flat_edges, minlength=ne)
    if counts.max() > 2:
        raise InvalidExtent("non-conforming mesh: an edge is shared by > 2 cells")
    first = np.ones(flat_edges.shape[0], dtype=bool)
    first[1:] = flat_edges[1:] != flat_edges[:-1]
    # flat_cells ascends within each edge group (stable sort), so slot 0
    # receives the lower adjacent cell index
    edge_cells[flat_edges[first], 0] = flat_cells[first]
    edge_cells[flat_edges[~first], 1] = flat_cells[~first]

    # global normal is the outward normal of the lower-index cell
    cell_edge_sign = np.where(
        edge_cells[cell_edges, 0] == np.arange(nc, dtype=np.int64)[:, None], 1, -1
    ).astype(np.int64)

    boundary_edges = np.nonzero(edge_cells[:, 1] < 0)[0]

    p0 = vertices[cells[:, 0]]
    B = np.stack(
        [vertices[cells[:, 1]] - p0, vertices[cells[:, 2]] - p0], axis=2
    )  # columns are the mapped reference axes
    detB = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    if np.any(detB <= 0.0):
        bad = int(np.argmin(detB))
        raise InvalidExtent(f"cell {bad} is not counter-clockwise (detB = {detB[bad]})")
    area = 0.5 * detB
    ev = vertices[cells]  # (nc, 3, 2)
    sides = np.stack(
        [ev[:, 1] - ev[:, 0], ev[:, 2] - ev[:, 1], ev[:, 0] - ev[:, 2]], axis=1
    )
    h_T = np.linalg.norm(sides, axis=2).max(axis=1)

    if bnd_tags is None:
        bnd_mech = np.full(boundary_edges.shape[0], "Gd", dtype=object)
        bnd_flow = np.full(boundary_edges.shape[0], "Gp", dtype=object)
    else:
        bnd_mech, bnd_flow = bnd_tags

    return Mesh(
        vertices=vertices,
        cells=cells,
        edges=edges,
        cell_edges=cell_edges,
        cell_edge_sign=cell_edge_sign,
        cell_edge_dir=cell_edge_dir,
        edge_cells=edge_cells,
        boundary_edges=boundary_edges,
        bnd_mech=bnd_mech,
        bnd_flow=bnd_flow,
        B=B,
        detB=detB,
        area=area,
        h_T=h_T,
    )


def generate_structured(
    nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0), diagonal: str = "ne"
) -> Mesh:
    """Triangulate a rectangle split into nx*ny squares.

    diagonal="ne" splits every square along its SW-NE diagonal.
    diagonal="alternate" flips the diagonal on a checkerboard, which makes
    the triangulation exactly symmetric under both axis reflections for even
    nx, ny (used by the wave scenario's symmetry checks).

    All boundary edges are tagged Gd / Gp; use classify_boundary to re-tag.
    """
    if nx < 1 or ny < 1:
        raise InvalidExtent(f"need nx, ny >= 1, got ({nx}, {ny})")
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise InvalidExtent(f"degenerate rectangle {rect}")
    if diagonal not in ("ne", "alternate"):
        raise InvalidExtent(f"unknown diagonal pattern {diagonal!r}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)  # id = j*(nx+1) + i

    def vid(i, j):
        return j * (nx + 1) + i

    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            sw, se = vid(i, j), vid(i + 1, j)
            nw, ne_ = vid(i, j + 1), vid(i + 1, j + 1)
            if diagonal == "ne" or (i + j) % 2 == 0:
                cells[k] = (sw, se, ne_)
                cells[k + 1] = (sw, ne_, nw)
            else:
                cells[k] = (sw, se, nw)
                cells[k + 1] = (se, ne_, nw)
            k += 2
    return _build_mesh(vertices, cells)


def classify_boundary(mesh: Mesh, rule: Callable) -> Mesh:
    """Re-tag boundary edges; rule(midpoint) -> (mech_tag, flow_tag).

    Gamma_d and Gamma_p must keep positive measure.
    """
    mids = mesh.edge_midpoints(mesh.boundary_edges)
    mech = np.empty(mids.shape[0], dtype=object)
    flow = np.empty(mids.shape[0], dtype=object)
    for k, mid in enumerate(mids):
        m, f = rule(mid)
        if m not in MECH_TAGS or f not in FLOW_TAGS:
            raise InvalidExtent(f"bad tag pair ({m!r}, {f!r}) at {mid}")
        mech[k], flow[k] = m, f
    lengths = mesh.edge_lengths(mesh.boundary_edges)
    if lengths[mech == "Gd"].sum() <= 0.0:
        raise EmptyEssentialBoundary("Gamma_d has zero measure")
    if lengths[flow == "Gp"].sum() <= 0.0:
        raise EmptyEssentialBoundary("Gamma_p has zero measure")
    return replace(mesh, bnd_mech=mech, bnd_flow=flow)


def all_dirichlet(mid):
    """Default rule: essential data everywhere (Gamma_d = Gamma_p = boundary)."""
    return "Gd", "Gp"


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every cell into 4 similar cells; boundary tags are inherited."""
    nv = mesh.n_vertices
    mid_coords = mesh.edge_midpoints()
    vertices = np.vstack([mesh.vertices, mid_coords])
    mid_id = nv + np.arange(mesh.n_edges)

    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    # midpoint of the edge opposite each local vertex
    m0 = mid_id[mesh.cell_edges[:, 0]]  # across (b, c)
    m1 = mid_id[mesh.cell_edges[:, 1]]  # across (c, a)
    m2 = mid_id[mesh.cell_edges[:, 2]]  # across (a, b)
    children = np.empty((4 * mesh.n_cells, 3), dtype=np.int64)
    children[0::4] = np.stack([a, m2, m1], axis=1)
    children[1::4] = np.stack([m2, b, m0], axis=1)
    children[2::4] = np.stack([m1, m0, c], axis=1)
    children[3::4] = np.stack([m2, m0, m1], axis=1)

    refined = _build_mesh(vertices, children)

    # each parent boundary edge (u, v) with midpoint m contributes children
    # (u, m) and (m, v); look the parent up through the midpoint vertex id
    parent_of_mid = np.full(vertices.shape[0], -1, dtype=np.int64)
    parent_of_mid[mid_id] = np.arange(mesh.n_edges)
    parent_tag = {}
    for k, e in enumerate(mesh.boundary_edges):
        parent_tag[int(e)] = (mesh.bnd_mech[k], mesh.bnd_flow[k])
    mech = np.empty(refined.boundary_edges.shape[0], dtype=object)
    flow = np.empty(refined.boundary_edges.shape[0], dtype=object)
    for k, e in enumerate(refined.boundary_edges):
        va, vb = refined.edges[e]
        parent = parent_of_mid[vb] if vb >= nv else parent_of_mid[va]
        mech[k], flow[k] = parent_tag[int(parent)]
    return replace(refined, bnd_mech=mech, bnd_flow=flow)


def mesh_size(mesh: Mesh) -> Tuple[float, float]:
    """Return (max, min) cell diameter."""
    return float(mesh.h_T.max()), float(mesh.h_T.min())


def conformity_report(mesh: Mesh) -> dict:
    """Audit used by tests: edge sharing, sign pairing, areas, tag coverage."""
    interior = mesh.edge_cells[:, 1] >= 0
    sign_sum = np.zeros(mesh.n_edges)
    np.add.at(sign_sum, mesh.cell_edges.ravel(), mesh.cell_edge_sign.ravel())
    edge_count = np.zeros(mesh.n_edges, dtype=int)
    np.add.at(edge_count, mesh.cell_edges.ravel(), 1)
    blen = mesh.edge_lengths(mesh.boundary_edges)
    return {
        "euler": mesh.n_vertices - mesh.n_edges + mesh.n_cells,
        "areas_positive": bool(np.all(mesh.area > 0.0)),
        "interior_signs_paired": bool(np.all(sign_sum[interior] == 0)),
        "interior_edge_count_2": bool(np.all(edge_count[interior] == 2)),
        "boundary_edge_count_1": bool(np.all(edge_count[~interior] == 1)),
        "area_total": float(mesh.area.sum()),
        "mech_length": {t: float(blen[mesh.bnd_mech == t].sum()) for t in MECH_TAGS},
        "flow_length": {t: float(blen[mesh.bnd_flow == t].sum()) for t in FLOW_TAGS},
    }


def export_ascii(mesh: Mesh, path) -> None:
    """Write plain node/element/boundary lists for debugging."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"# cells {mesh.n_cells}\n")
        for a, b, c in mesh.cells:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"# boundary_edges {mesh.boundary_edges.shape[0]}\n")
        for k, e in enumerate(mesh.boundary_edges):
            va, vb = mesh.edges[e]
            fh.write(f"{va} {vb} {mesh.bnd_mech[k]} {mesh.bnd_flow[k]}\n")
