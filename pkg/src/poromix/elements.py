"""Reference elements (RT0, BDM1, tensor BDM1, DG0/DG1) and triangle quadrature.

Reference triangle: vertices (0,0), (1,0), (0,1). Local edge k sits opposite
vertex k, so the CCW-induced traversals are edge 0: (1,0)->(0,1),
edge 1: (0,1)->(0,0), edge 2: (0,0)->(1,0). H(div) degrees of freedom are
edge moments of v.n against 1 and (s - 1/2) in that parametrization, with
the outward unit normal; the dual bases below are solved from these moment
functionals once at import time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCell, OutOfElement, UnsupportedDegree

# symmetric positive rules on the reference triangle; orbits are given in
# barycentric form (l0, l1, l2) and mapped to (x, y) = (l1, l2)


def _orbit3(a):
    return [(a, a), (1.0 - 2.0 * a, a), (a, 1.0 - 2.0 * a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    bary = [(c, a, b), (c, b, a), (a, c, b), (b, c, a), (a, b, c), (b, a, c)]
    return [(l1, l2) for (_, l1, l2) in bary]


def _rule(points, weights):
    pts = np.array(points, dtype=float)
    w = np.array(weights, dtype=float) * 0.5  # normalize to reference area
    return pts, w


_RULES = {}
_RULES[1] = _rule([(1.0 / 3.0, 1.0 / 3.0)], [1.0])
_RULES[2] = _rule(_orbit3(1.0 / 6.0), [1.0 / 3.0] * 3)
_a1, _w1 = 0.445948490915965, 0.223381589678011
_a2, _w2 = 0.091576213509771, 0.109951743655322
_RULES[4] = _rule(_orbit3(_a1) + _orbit3(_a2), [_w1] * 3 + [_w2] * 3)
_RULES[3] = _RULES[4]
_b1, _v1 = 0.470142064105115, 0.132394152788506
_b2, _v2 = 0.101286507323456, 0.125939180544827
_RULES[5] = _rule(
    [(1.0 / 3.0, 1.0 / 3.0)] + _orbit3(_b1) + _orbit3(_b2),
    [0.225] + [_v1] * 3 + [_v2] * 3,
)
_c1, _u1 = 0.063089014491502, 0.050844906370207
_c2, _u2 = 0.249286745170910, 0.116786275726379
_c3a, _c3b, _u3 = 0.053145049844816, 0.310352451033785, 0.082851075618374
_RULES[6] = _rule(
    _orbit3(_c1) + _orbit3(_c2) + _orbit6(_c3a, _c3b),
    [_u1] * 3 + [_u2] * 3 + [_u3] * 6,
)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,) summing to 1/2
    degree: int


def triangle_quadrature(degree: int) -> QuadratureRule:
    """Symmetric rule on the reference triangle, exact to the given degree."""
    if degree not in _RULES:
        raise UnsupportedDegree(f"triangle quadrature degree must be in [1, 6], got {degree}")
    pts, w = _RULES[degree]
    return QuadratureRule(points=pts.copy(), weights=w.copy(), degree=degree)


def gauss_edge(npts: int):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


# reference edge geometry: endpoints in CCW traversal, outward unit normal
_EDGE_START = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_EDGE_END = np.array([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]])
_EDGE_NORMAL = np.array(
    [[1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)], [-1.0, 0.0], [0.0, -1.0]]
)
_EDGE_LENGTH = np.array([np.sqrt(2.0), 1.0, 1.0])


def _edge_moments(coeffs):
    """Edge moments of monomial vector fields: rows (edge, weight 1 | s-1/2)."""
    s, w = gauss_edge(3)
    n_funcs = coeffs.shape[0]
    mat = np.zeros((6, n_funcs))
    for k in range(3):
        pts = _EDGE_START[k][None, :] * (1.0 - s[:, None]) + _EDGE_END[k][None, :] * s[:, None]
        vals = _eval_monomial(coeffs, pts)  # (nq, nfuncs, 2)
        vn = vals @ _EDGE_NORMAL[k]  # (nq, nfuncs)
        mat[2 * k] = _EDGE_LENGTH[k] * np.einsum("q,qi->i", w, vn)
        mat[2 * k + 1] = _EDGE_LENGTH[k] * np.einsum("q,qi->i", w * (s - 0.5), vn)
    return mat


def _eval_monomial(coeffs, pts):
    """coeffs: (nfuncs, 2, 3) over monomials {1, x, y}; pts: (nq, 2)."""
    basis = np.stack([np.ones(pts.shape[0]), pts[:, 0], pts[:, 1]], axis=1)  # (nq, 3)
    return np.einsum("qm,icm->qic", basis, coeffs)


def _dual_basis(span, functional_rows):
    """Solve for coefficients making the span dual to the edge functionals."""
    moments = _edge_moments(span)[functional_rows]  # (ndofs, nspan)
    inv = np.linalg.inv(moments)
    # basis j = sum_i inv[i, j] * span_i
    return np.einsum("ij,icm->jcm", inv, span)


# RT0 span: (1,0), (0,1), (x,y); dofs are the three constant edge moments
_RT0_SPAN = np.zeros((3, 2, 3))
_RT0_SPAN[0, 0, 0] = 1.0
_RT0_SPAN[1, 1, 0] = 1.0
_RT0_SPAN[2, 0, 1] = 1.0
_RT0_SPAN[2, 1, 2] = 1.0
_RT0_COEFFS = _dual_basis(_RT0_SPAN, [0, 2, 4])

# BDM1 span: full [P1]^2; dofs are both moments on each edge
_BDM1_SPAN = np.zeros((6, 2, 3))
for _i in range(3):
    _BDM1_SPAN[_i, 0, _i] = 1.0
    _BDM1_SPAN[3 + _i, 1, _i] = 1.0
_BDM1_COEFFS = _dual_basis(_BDM1_SPAN, [0, 1, 2, 3, 4, 5])


def _divergences(coeffs):
    return coeffs[:, 0, 1] + coeffs[:, 1, 2]


@dataclass(frozen=True)
class ReferenceElement:
    family: str
    n_dofs: int
    dof_kind: tuple  # per-dof "edge-moment" or "cell-moment"
    value_shape: str  # "scalar" | "vector" | "tensor"


_FAMILIES = {
    "RT0": ReferenceElement("RT0", 3, ("edge-moment",) * 3, "vector"),
    "BDM1": ReferenceElement("BDM1", 6, ("edge-moment",) * 6, "vector"),
    "TensorBDM1": ReferenceElement("TensorBDM1", 12, ("edge-moment",) * 12, "tensor"),
    "DG0scalar": ReferenceElement("DG0scalar", 1, ("cell-moment",), "scalar"),
    "DG0vector": ReferenceElement("DG0vector", 2, ("cell-moment",) * 2, "vector"),
    "DG1scalar": ReferenceElement("DG1scalar", 3, ("cell-moment",) * 3, "scalar"),
    "DG1vector": ReferenceElement("DG1vector", 6, ("cell-moment",) * 6, "vector"),
}


def reference_element(family: str) -> ReferenceElement:
    if family not in _FAMILIES:
        raise UnsupportedDegree(f"unknown element family {family!r}")
    return _FAMILIES[family]


def _check_inside(points, tol=1e-12):
    x, y = points[..., 0], points[..., 1]
    if np.any(x < -tol) or np.any(y < -tol) or np.any(x + y > 1.0 + tol):
        raise OutOfElement("point outside the closed reference triangle")


def eval_basis(elem: ReferenceElement, points, check: bool = True):
    """Evaluate all local basis functions at reference points.

    Returns (values, divergences). Shapes for points (nq, 2):
      scalar: (nq, n), vector: (nq, n, 2), tensor: (nq, n, 2, 2).
    Divergences (constant per basis function) are (n,) for vector H(div)
    families, (n, 2) row-wise for TensorBDM1, and None otherwise.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if check:
        _check_inside(points)
    nq = points.shape[0]
    fam = elem.family
    if fam == "RT0":
        return _eval_monomial(_RT0_COEFFS, points), _divergences(_RT0_COEFFS)
    if fam == "BDM1":
        return _eval_monomial(_BDM1_COEFFS, points), _divergences(_BDM1_COEFFS)
    if fam == "TensorBDM1":
        vec, div = _eval_monomial(_BDM1_COEFFS, points), _divergences(_BDM1_COEFFS)
        vals = np.zeros((nq, 12, 2, 2))
        vals[:, :6, 0, :] = vec
        vals[:, 6:, 1, :] = vec
        divs = np.zeros((12, 2))
        divs[:6, 0] = div
        divs[6:, 1] = div
        return vals, divs
    if fam == "DG0scalar":
        return np.ones((nq, 1)), None
    if fam == "DG0vector":
        vals = np.zeros((nq, 2, 2))
        vals[:, 0, 0] = 1.0
        vals[:, 1, 1] = 1.0
        return vals, None
    lam = np.stack(
        [1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]], axis=1
    )
    if fam == "DG1scalar":
        return lam, None
    if fam == "DG1vector":
        vals = np.zeros((nq, 6, 2))
        for i in range(3):
            vals[:, 2 * i, 0] = lam[:, i]
            vals[:, 2 * i + 1, 1] = lam[:, i]
        return vals, None
    raise UnsupportedDegree(f"unknown element family {fam!r}")


def piola_map(B, detB, ref_vals, ref_divs=None):
    """Contravariant Piola transform of H(div) reference values.

    B: (..., 2, 2) cell Jacobians, detB: (...,). ref_vals: (nq, n, 2) or
    tensor (nq, n, 2, 2) transformed row-wise. Edge moments taken with the
    traversal-induced normal are preserved exactly; fluxes through the
    outward normal flip sign when det B < 0.
    """
    B = np.asarray(B, dtype=float)
    detB = np.asarray(detB, dtype=float)
    scale = np.einsum("...ij,...ij->...", B, B)
    if np.any(np.abs(detB) < 1e-14 * np.maximum(scale, 1e-300)):
        raise DegenerateCell("affine cell map has (near-)zero determinant")
    if ref_vals.ndim == 3:  # vector family
        phys = np.einsum("...ab,qib->...qia", B, ref_vals) / detB[..., None, None, None]
    else:  # tensor family, rows mapped independently
        phys = np.einsum("...ab,qirb->...qira", B, ref_vals) / detB[
            ..., None, None, None, None
        ]
    if ref_divs is None:
        return phys, None
    extra = ref_divs.ndim  # (n,) vector or (n, 2) tensor rows
    div = ref_divs[(None,) * detB.ndim] / detB[(...,) + (None,) * extra]
    return phys, div


def inverse_affine(points, p0, B):
    """Map physical points back to reference coordinates (single cell)."""
    d = np.asarray(points, dtype=float) - np.asarray(p0, dtype=float)
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    xi = (B[1, 1] * d[..., 0] - B[0, 1] * d[..., 1]) / det
    eta = (-B[1, 0] * d[..., 0] + B[0, 0] * d[..., 1]) / det
    return np.stack([xi, eta], axis=-1)


def edge_dof_trace(moment: int, length, s):
    """Normal trace of the dual edge basis on its own edge.

    The basis dual to (integral of v.n) has trace 1/L; the one dual to
    (integral of v.n (s-1/2)) has trace 12/L (s-1/2). Used for boundary
    functionals without evaluating mapped bases on edges.
    """
    if moment == 0:
        return np.full_like(np.asarray(s, dtype=float), 1.0) / length
    return 12.0 * (np.asarray(s, dtype=float) - 0.5) / length
