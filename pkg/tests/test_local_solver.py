import numpy as np
import pytest

from hodge_rsm import covering, dec, local_solver
from hodge_rsm.covering import RadiusField, vitali_cover, partition_of_unity
from hodge_rsm.local_solver import (PatchError, extract_patch,
                                    local_czi_check, neumann_series_solve,
                                    solve_local_dirichlet)
from hodge_rsm.rsm import cached_patches


@pytest.fixture(scope="module")
def patch16(torus16, cover16):
    _, cov = cover16
    return extract_patch(torus16, cov, 0)


def test_single_ball_patch_whole_manifold(torus8):
    rf = RadiusField(np.ones(torus8.num_vertices), 0.1, 120, 0.4)
    cov = vitali_cover(torus8, rf)
    partition_of_unity(torus8, cov)
    patch = extract_patch(torus8, cov, 0)
    assert len(patch.cells) == torus8.num_simplices(2)
    for p in range(3):
        assert len(patch.boundary[p]) == 0
        assert len(patch.interior[p]) == torus8.num_simplices(p)


def test_interior_ball_patch(torus16, patch16):
    assert len(patch16.boundary[1]) > 0
    assert len(patch16.boundary[0]) > 0
    # interior/boundary partition the patch simplices
    for p in range(2):
        got = np.sort(np.concatenate([patch16.interior[p],
                                      patch16.boundary[p]]))
        assert np.array_equal(got, np.sort(patch16.patch_simplices(p)))


def test_restrict_extend_round_trip(torus16, patch16, rng):
    u = dec.random_cochain(torus16, 1, rng)
    vals = patch16.restrict(u)
    back = patch16.extend(1, vals)
    idx = patch16.interior[1]
    assert np.allclose(back.values[idx], u.values[idx])
    mask = np.ones(torus16.num_simplices(1), dtype=bool)
    mask[idx] = False
    assert np.all(back.values[mask] == 0)


def test_face_classification_exhaustive(torus16, cover16):
    _, cov = cover16
    for j in range(0, len(cov.balls), 37):
        patch = extract_patch(torus16, cov, j)
        cellset = set(patch.cells.tolist())
        interior = set(patch.interior[1].tolist())
        boundary = set(patch.boundary[1].tolist())
        assert not interior & boundary
        for ci in patch.cells:
            for e in torus16._cell_faces[1][ci]:
                assert int(e) in interior or int(e) in boundary
        # boundary edges belong to exactly one patch cell
        edge_cells = {}
        for ci in patch.cells:
            for e in torus16._cell_faces[1][ci]:
                edge_cells[int(e)] = edge_cells.get(int(e), 0) + 1
        for e in boundary:
            assert edge_cells[e] == 1


def test_dirichlet_zero_rhs(torus16, patch16):
    z = dec.Cochain(torus16, 1, np.zeros(torus16.num_simplices(1)))
    u, diag = solve_local_dirichlet(patch16, z)
    assert np.all(u.values == 0)
    assert diag.residual == 0.0


def test_dirichlet_residual_and_linearity(torus16, patch16, rng):
    u1v = dec.random_cochain(torus16, 1, rng)
    u2v = dec.random_cochain(torus16, 1, rng)
    s1, d1 = solve_local_dirichlet(patch16, u1v)
    s2, _ = solve_local_dirichlet(patch16, u2v)
    s12, _ = solve_local_dirichlet(patch16, u1v + u2v)
    assert d1.residual < 1e-10
    defect = np.max(np.abs(s12.values - s1.values - s2.values))
    scale = max(np.max(np.abs(s1.values)), np.max(np.abs(s2.values)))
    assert defect <= 1e-10 * scale
    assert d1.c_j > 0 and np.isfinite(d1.c_j)


def test_neumann_flat_override_one_step(torus16, patch16, rng):
    # metric perturbation A = 0: series terminates immediately
    omega = dec.random_cochain(torus16, 1, rng)
    sub, _, _ = patch16.submesh()
    u, diag = neumann_series_solve(patch16, omega,
                                   flat_edge_lengths=torus16.edge_lengths)
    assert diag.eta == 0.0
    assert diag.iterations == 1


def test_neumann_agrees_with_direct(bumpy16, cover_bumpy, rng):
    _, cov = cover_bumpy
    patch = extract_patch(bumpy16, cov, 0)
    omega = dec.random_cochain(bumpy16, 1, rng)
    ud, _ = solve_local_dirichlet(patch, omega)
    un, diag = neumann_series_solve(patch, omega)
    assert diag.eta < 1.0
    assert diag.residual <= 1e-10
    idx = patch.interior[1]
    num = np.linalg.norm(un.values[idx] - ud.values[idx])
    assert num <= 1e-8 * np.linalg.norm(ud.values[idx])


def test_local_czi_constant(torus16, patch16):
    c = dec.Cochain(torus16, 0, np.ones(torus16.num_vertices))
    lhs, t1, t2 = local_czi_check(patch16, c, 1.5)
    assert t2 < 1e-12
    # derivative terms vanish: lhs is the L^r norm on the sub-ball,
    # bounded by the volume-ratio times the full-ball term
    assert lhs <= t1 * patch16.ball.covering_radius ** 2 * 1.0 + 1e-12


def test_local_czi_harmonic_interior(torus16, patch16, rng):
    # discrete harmonic extension of random boundary data (degree 0)
    import scipy.sparse.linalg as spla
    Kg = dec.stiffness_matrix(torus16, 0).tocsr()
    u = np.zeros(torus16.num_vertices)
    bset = patch16.boundary[0]
    u[bset] = rng.standard_normal(len(bset))
    I = patch16.interior[0]
    A = Kg[I][:, I].tocsc()
    b = -Kg[I][:, bset] @ u[bset]
    u[I] = spla.spsolve(A, b)
    lap = dec.hodge_laplacian(torus16, 0)(dec.Cochain(torus16, 0, u))
    # Delta u vanishes on the patch interior
    assert np.max(np.abs(lap.values[I])) <= 1e-9 * np.max(np.abs(u))


def _czi_fit(samples):
    from scipy.optimize import linprog
    A = [[-t1, -t2] for _, t1, t2 in samples]
    b = [-lhs for lhs, _, _ in samples]
    res = linprog(c=[1, 1], A_ub=A, b_ub=b, bounds=[(0, None)] * 2)
    return res.x


def test_local_czi_fit_refinement_stable(torus16, torus32, rng):
    # refinement study: identical physical ball (R = 0.4) on both meshes,
    # band-limited test forms so the ensembles are resolution-comparable
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    consts = {}
    for m in (torus16, torus32):
        rf = RadiusField(np.full(m.num_vertices, 0.4), 0.1, 120, 5.0)
        cov = vitali_cover(m, rf)
        partition_of_unity(m, cov)
        patch = extract_patch(m, cov, 0)
        K = dec.stiffness_matrix(m, 1)
        M = dec.mass_diagonal(m, 1)
        lu = spla.splu((sp.diags(M) + 0.01 * K).tocsc())
        samples = []
        for _ in range(50):
            noise = dec.random_cochain(m, 1, rng)
            sm = lu.solve(M * noise.values)
            omega = dec.Cochain(m, 1, sm / np.sqrt(sm @ (M * sm)))
            u, _ = solve_local_dirichlet(patch, omega)
            samples.append(local_czi_check(patch, u, 1.5))
        consts[m.num_vertices] = _czi_fit(samples)
    c16, c32 = consts[256], consts[1024]
    assert np.all(c16 >= 0) and np.all(c32 >= 0) and c16.sum() > 0
    total16, total32 = c16.sum(), c32.sum()
    assert abs(total32 - total16) <= 0.25 * max(total16, total32)


def test_solver_reuses_cached_patches(torus16, cover16):
    _, cov = cover16
    patches = cached_patches(torus16, cov)
    assert len(patches) == len(cov.balls)
    assert cached_patches(torus16, cov) is patches
