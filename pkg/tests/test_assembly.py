import numpy as np
import pytest

from poromix.assembly import (
    apply_essential,
    assemble_A,
    assemble_M,
    assemble_load,
    essential_mask,
    local_conservation_residual,
)
from poromix.errors import AssemblyOverflow, NonFiniteEntry
from poromix.fespace import build_dofmaps, cell_basis_tables, gather, project_L2
from poromix.mesh import classify_boundary, generate_structured
from poromix.model import BoundaryData, LoadFunctions, ModelParams, PenaltySpec


def table1_params(**over):
    base = dict(mu=1.0, lam=10.0, alpha=1.0, s0=0.002, K=1.0,
                rho_u=1.0, rho_f=0.25, rho_w=1.0)
    base.update(over)
    return ModelParams(**base)


@pytest.fixture(scope="module")
def small_space():
    return build_dofmaps(generate_structured(2, 2), "RT0")


def test_mass_symmetric_positive_definite(small_space):
    M = assemble_M(small_space, table1_params()).toarray()
    assert np.max(np.abs(M - M.T)) < 1e-14
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_symmetric_bdm(small_space):
    space = build_dofmaps(generate_structured(2, 2), "BDM1")
    M = assemble_M(space, table1_params()).toarray()
    assert np.max(np.abs(M - M.T)) < 1e-14
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_storage_and_density_blocks(small_space):
    params = table1_params()
    space = small_space
    M = assemble_M(space, params).toarray()
    area = space.mesh.area
    sl_p = space.field_slice("p")
    stor = params.s0 + params.alpha**2 / params.kappa
    assert np.allclose(np.diag(M[sl_p, sl_p]), stor * area, atol=1e-14)
    sl_u = space.field_slice("u")
    Muu = M[sl_u, sl_u]
    expect = np.kron(np.diag(area), params.rho_u * np.eye(2))
    assert np.allclose(Muu, expect, atol=1e-14)


def test_penalty_scaling(small_space):
    # the skew block scales like 1/eps = 1/(gamma h^2)
    p = table1_params()
    M1 = assemble_M(small_space, p, PenaltySpec(gamma=1.0))
    M4 = assemble_M(small_space, p, PenaltySpec(gamma=4.0))
    sl = small_space.field_slice("sigma")
    D = (M1 - M4).toarray()[sl, sl]
    # difference is purely the skew part: (1 - 1/4)/eps1 * S
    M_skw = (M1 - M4).toarray() * 4.0 / 3.0
    Mfull = M1.toarray()
    rng = np.random.default_rng(2)
    x = rng.standard_normal(Mfull.shape[0])
    assert x @ M_skw @ x >= -1e-12  # skew block is positive semidefinite


@pytest.mark.parametrize("family", ["RT0", "BDM1"])
def test_quadratic_form_of_A_is_darcy_drag(family):
    mesh = generate_structured(2, 2)
    space = build_dofmaps(mesh, family)
    params = table1_params(K=np.array([[2.0, 0.5], [0.5, 1.0]]))
    A = assemble_A(space, params)
    rule, wvals, _ = cell_basis_tables(space, "w")
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.standard_normal(space.n_total)
        wfield = np.einsum("ci,cqia->cqa", gather(space, "w", x), wvals)
        integrand = np.einsum("cqa,ab,cqb->cq", wfield, params.K_inv, wfield)
        drag = np.einsum("q,c,cq->", rule.weights, mesh.detB, integrand)
        quad = x @ (A @ x)
        assert abs(quad - drag) <= 1e-12 * max(1.0, abs(drag))


def test_coupling_blocks_are_negative_transposes(small_space):
    A = assemble_A(small_space, table1_params())
    sl_s = small_space.field_slice("sigma")
    sl_p = small_space.field_slice("p")
    sl_u = small_space.field_slice("u")
    sl_w = small_space.field_slice("w")
    A_us = A[sl_u, sl_s]
    A_su = A[sl_s, sl_u]
    assert np.all((A_us + A_su.T).toarray() == 0.0)
    A_wp = A[sl_w, sl_p]
    A_pw = A[sl_p, sl_w]
    assert np.all((A_wp + A_pw.T).toarray() == 0.0)
    assert (A[sl_s, sl_s]).nnz == 0 and (A[sl_p, sl_p]).nnz == 0
    assert (A[sl_u, sl_u]).nnz == 0


def test_volume_loads(small_space):
    space = small_space
    mesh = space.mesh
    loads = LoadFunctions(
        f=lambda x, t: np.broadcast_to(np.array([1.0, 0.0]), x.shape).copy(),
        h=None,
        g=lambda x, t: x[:, 0],
        eta=None,
    )
    b = assemble_load(space, loads, None, 0.0)
    bu = b[space.field_slice("u")]
    assert np.allclose(bu[0::2], mesh.area, atol=1e-14)
    assert np.allclose(bu[1::2], 0.0, atol=1e-15)
    cent = mesh.vertices[mesh.cells].mean(axis=1)
    bp = b[space.field_slice("p")]
    assert np.allclose(bp, cent[:, 0] * mesh.area, atol=1e-14)


def test_boundary_displacement_moments():
    mesh = generate_structured(1, 1)
    space = build_dofmaps(mesh, "RT0")
    E = mesh.n_edges
    bd = BoundaryData(
        u_d=lambda x, t: np.broadcast_to(np.array([3.0, 4.0]), x.shape).copy(),
        p_d=None,
    )
    b = assemble_load(space, None, bd, 0.0)
    for e in mesh.boundary_edges:
        assert abs(b[2 * e] - 3.0) < 1e-13
        assert abs(b[2 * e + 1]) < 1e-13
        assert abs(b[2 * E + 2 * e] - 4.0) < 1e-13
        assert abs(b[2 * E + 2 * e + 1]) < 1e-13
    interior = set(range(E)) - set(mesh.boundary_edges)
    for e in interior:
        assert b[2 * e] == 0.0 and b[2 * E + 2 * e] == 0.0


def test_boundary_pressure_moments():
    mesh = generate_structured(2, 1)
    for family in ("RT0", "BDM1"):
        space = build_dofmaps(mesh, family)
        bd = BoundaryData(u_d=None, p_d=lambda x, t: np.full(x.shape[0], 7.0))
        b = assemble_load(space, None, bd, 0.0)
        dm = space.maps["w"]
        for e in mesh.boundary_edges:
            if family == "RT0":
                assert abs(b[dm.offset + e] + 7.0) < 1e-13
            else:
                assert abs(b[dm.offset + 2 * e] + 7.0) < 1e-13
                assert abs(b[dm.offset + 2 * e + 1]) < 1e-13


def test_boundary_functional_matches_surface_integral():
    # b . x_T = boundary integral of u_d . (T n) for constant tensors T
    mesh = generate_structured(3, 3)
    space = build_dofmaps(mesh, "RT0")
    T = np.array([[1.0, 2.0], [3.0, 4.0]])
    coeffs = project_L2(space, "sigma", lambda x: np.broadcast_to(T, (x.shape[0], 2, 2)).copy())
    x = np.zeros(space.n_total)
    x[space.field_slice("sigma")] = coeffs
    bd = BoundaryData(u_d=lambda pts, t: np.stack([pts[:, 0], pts[:, 1]], axis=1), p_d=None)
    b = assemble_load(space, None, bd, 0.0)
    # unit square: integral of (x, y) . (T n) over the boundary = T00 + T11
    assert abs(b @ x - (T[0, 0] + T[1, 1])) < 1e-12


def test_essential_mask_and_application():
    def rule(mid):
        if mid[1] < 1e-12:
            return ("Gsigma", "Gw")
        return ("Gd", "Gp")

    mesh = classify_boundary(generate_structured(2, 2), rule)
    space = build_dofmaps(mesh, "RT0")
    mask = essential_mask(space)
    bottom = mesh.boundary_edges[mesh.bnd_mech == "Gsigma"]
    assert len(bottom) == 2
    assert mask.sum() == 4 * len(bottom) + len(bottom)
    A = assemble_A(space, table1_params())
    Ac = apply_essential(A, mask).toarray()
    idx = np.flatnonzero(mask)
    other = np.flatnonzero(~mask)
    assert np.all(Ac[np.ix_(idx, other)] == 0.0)
    assert np.all(Ac[np.ix_(other, idx)] == 0.0)
    assert np.allclose(Ac[idx, idx], 1.0)
    # all-Dirichlet boundaries constrain nothing
    assert essential_mask(build_dofmaps(generate_structured(2, 2), "RT0")).sum() == 0


def test_nonfinite_load_rejected(small_space):
    loads = LoadFunctions(
        f=lambda x, t: np.full(x.shape, np.nan), h=None, g=None, eta=None
    )
    with pytest.raises(NonFiniteEntry):
        assemble_load(small_space, loads, None, 0.0)


def test_overflow_guard(small_space):
    with pytest.raises(AssemblyOverflow):
        assemble_M(small_space, table1_params(mu=1e-70))


def test_conservation_residual_zero_for_zero_state(small_space):
    params = table1_params()
    z = np.zeros(small_space.n_total)
    r = local_conservation_residual(small_space, params, z, z, 0.1)
    assert np.allclose(r, 0.0)


def test_conservation_residual_detects_imbalance(small_space):
    params = table1_params()
    z = np.zeros(small_space.n_total)
    x = z.copy()
    sl_p = small_space.field_slice("p")
    x[sl_p] = 1.0  # jump in mean pressure with no compensating flux
    r = local_conservation_residual(small_space, params, x, z, 0.5)
    stor = params.s0 + params.alpha**2 / params.kappa
    assert np.allclose(r, stor * (1.0 / 0.5) * small_space.mesh.area, atol=1e-14)
