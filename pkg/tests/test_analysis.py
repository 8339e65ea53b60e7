import numpy as np
import pytest

from hodge_rsm import analysis, covering, dec
from hodge_rsm.analysis import (AnalysisError, dual_poisson_solve, gap_solve,
                                harmonic_embedding_check, harmonic_projection,
                                orthogonality_check, poisson_solve,
                                rank_identity_check, spectrum,
                                strong_decomposition, weak_decomposition,
                                weak_decomposition_sequence,
                                weighted_czi_verify)


def test_spectrum_dimensions(torus16, sphere16, spec16_p0, spec16_p1):
    assert spec16_p0.harmonic_dim == 1
    assert spec16_p0.gap > 0
    assert spec16_p1.harmonic_dim == 2
    assert spec16_p1.gap > 0
    assert spectrum(sphere16, 1, 8).harmonic_dim == 0


def test_spectrum_matches_dense_oracle(torus16, spec16_p1):
    # independent dense eigensolve of the mass-symmetrized operator
    Mw = dec.mass_diagonal(torus16, 1)
    K = dec.stiffness_matrix(torus16, 1).toarray()
    S = K / np.sqrt(Mw)[:, None] / np.sqrt(Mw)[None, :]
    vals = np.linalg.eigvalsh((S + S.T) / 2.0)
    tol = 1e-8 * vals[-1]
    assert int(np.sum(np.abs(vals) < tol)) == spec16_p1.harmonic_dim
    assert spec16_p1.gap == pytest.approx(vals[2], rel=1e-6)


def test_spectrum_cluster_flag(torus16):
    rep = spectrum(torus16, 1, harmonic_tol=1e-30)
    assert rep.cluster_flag


def test_harmonic_basis_orthonormal(torus16, spec16_p1):
    B = spec16_p1.harmonic_basis
    Mw = dec.mass_diagonal(torus16, 1)
    G = B.T @ (Mw[:, None] * B)
    assert np.allclose(G, np.eye(B.shape[1]), atol=1e-10)


def test_projection_idempotent_selfadjoint(torus16, spec16_p1, rng):
    for _ in range(10):
        u = dec.random_cochain(torus16, 1, rng)
        v = dec.random_cochain(torus16, 1, rng)
        Hu = harmonic_projection(torus16, spec16_p1, u)
        HHu = harmonic_projection(torus16, spec16_p1, Hu)
        assert dec.norm_l2(HHu - Hu) <= 1e-12 * max(dec.norm_l2(Hu), 1.0)
        a = dec.inner(Hu, v)
        b = dec.inner(u, harmonic_projection(torus16, spec16_p1, v))
        assert abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1.0)


def test_projection_kills_laplacian_range(torus16, spec16_p1, rng):
    lap = dec.hodge_laplacian(torus16, 1)
    for _ in range(10):
        psi = dec.random_cochain(torus16, 1, rng)
        h = harmonic_projection(torus16, spec16_p1, lap(psi))
        assert dec.norm_l2(h) <= 1e-10 * dec.norm_l2(lap(psi))


def test_gap_solve_harmonic_input(torus16, spec16_p1):
    h = dec.Cochain(torus16, 1, spec16_p1.harmonic_basis[:, 0])
    f = gap_solve(torus16, spec16_p1, h)
    assert dec.norm_l2(f) <= 1e-10


def test_gap_solve_inverts_laplacian(torus16, spec16_p1, rng):
    lap = dec.hodge_laplacian(torus16, 1)
    psi = dec.random_cochain(torus16, 1, rng)
    f = gap_solve(torus16, spec16_p1, lap(psi))
    want = psi - harmonic_projection(torus16, spec16_p1, psi)
    assert dec.norm_l2(f - want) <= 1e-9 * dec.norm_l2(want)


def test_gap_solve_spectral_bound(torus16, spec16_p1, rng):
    # the bound is asserted inside gap_solve; 100 random inputs
    for _ in range(100):
        g = dec.random_cochain(torus16, 1, rng)
        f = gap_solve(torus16, spec16_p1, g)
        assert dec.norm_l2(f) <= dec.norm_l2(g) / spec16_p1.gap + 1e-12


def test_poisson_zero(torus16, cover16, spec16_p1):
    rf, cov = cover16
    z = dec.Cochain(torus16, 1, np.zeros(torus16.num_simplices(1)))
    u, diags = poisson_solve(torus16, cov, rf, spec16_p1, z, 1.5)
    assert np.all(u.values == 0)


def test_poisson_laplacian_range_input(torus16, cover16, spec16_p1, rng):
    rf, cov = cover16
    lap = dec.hodge_laplacian(torus16, 1)
    psi = dec.random_cochain(torus16, 1, rng)
    omega = lap(psi)
    u, diags = poisson_solve(torus16, cov, rf, spec16_p1, omega, 1.5)
    assert diags["residual"] <= 1e-9
    # u - psi is harmonic up to solver tolerance
    assert dec.norm_l2(lap(u - psi)) <= 1e-7 * dec.norm_l2(omega)


def test_poisson_linearity(torus16, cover16, spec16_p1, rng):
    rf, cov = cover16
    lap = dec.hodge_laplacian(torus16, 1)
    o1, o2 = (lap(dec.random_cochain(torus16, 1, rng)) for _ in range(2))
    u1, _ = poisson_solve(torus16, cov, rf, spec16_p1, o1, 1.5)
    u2, _ = poisson_solve(torus16, cov, rf, spec16_p1, o2, 1.5)
    u12, _ = poisson_solve(torus16, cov, rf, spec16_p1, o1 + o2, 1.5)
    assert dec.norm_l2(u12 - u1 - u2) <= \
        1e-9 * max(dec.norm_l2(u1), dec.norm_l2(u2))


def test_poisson_rejects_harmonic_content(torus16, cover16, spec16_p1):
    rf, cov = cover16
    h = dec.Cochain(torus16, 1, spec16_p1.harmonic_basis[:, 0])
    with pytest.raises(AnalysisError):
        poisson_solve(torus16, cov, rf, spec16_p1, h, 1.5)


def test_dual_poisson_zero(torus16, cover16, spec16_p1):
    rf, cov = cover16
    z = dec.Cochain(torus16, 1, np.zeros(torus16.num_simplices(1)))
    u, diags = dual_poisson_solve(torus16, cov, rf, spec16_p1, z, 1.5)
    assert dec.norm_l2(u) == 0.0


def test_dual_poisson_residual_and_agreement(torus16, cover16, spec16_p1,
                                             rng):
    rf, cov = cover16
    lap = dec.hodge_laplacian(torus16, 1)
    phi = lap(dec.random_cochain(torus16, 1, rng))
    ud, diags = dual_poisson_solve(torus16, cov, rf, spec16_p1, phi, 1.5)
    assert diags["residual"] <= 1e-8
    up, _ = poisson_solve(torus16, cov, rf, spec16_p1, phi, 1.5)
    # both are right inverses on the gap: they differ by a harmonic form
    assert dec.norm_l2(lap(ud - up)) <= 1e-7 * dec.norm_l2(phi)


def test_strong_decomposition_harmonic_input(torus16, cover16, spec16_p1):
    rf, cov = cover16
    h = dec.Cochain(torus16, 1, spec16_p1.harmonic_basis[:, 1])
    res = strong_decomposition(torus16, cov, rf, spec16_p1, h, 1.5)
    assert dec.norm_l2(res.harmonic - h) <= 1e-9
    assert dec.norm_l2(res.exact) + dec.norm_l2(res.coexact) <= 1e-8


def test_strong_decomposition_range_input(torus16, cover16, spec16_p1, rng):
    rf, cov = cover16
    lap = dec.hodge_laplacian(torus16, 1)
    omega = lap(dec.random_cochain(torus16, 1, rng))
    res = strong_decomposition(torus16, cov, rf, spec16_p1, omega, 1.5)
    assert dec.norm_l2(res.harmonic) <= 1e-9 * dec.norm_l2(omega)


def test_strong_decomposition_random(torus16, cover16, spec16_p1, rng):
    rf, cov = cover16
    omega = dec.random_cochain(torus16, 1, rng)
    for mode in ("delta", "d_dstar"):
        res = strong_decomposition(torus16, cov, rf, spec16_p1, omega, 1.5,
                                   mode=mode)
        assert res.residual <= 1e-8
        assert all(v <= 1e-8 for v in res.orthogonality.values())
        back = res.harmonic + res.exact + res.coexact
        assert dec.norm_l2(back - omega) <= 1e-8 * dec.norm_l2(omega)
        if mode == "d_dstar":
            d = dec.exterior_derivative(torus16, 0)
            ds = dec.codifferential(torus16, 2)
            assert dec.norm_l2(res.exact - d(res.mu)) <= 1e-10
            assert dec.norm_l2(res.coexact - ds(res.nu)) <= 1e-10


def test_uniqueness_probe(torus16, cover16, spec16_p1):
    # decomposition of a pure injected harmonic recovers it
    rf, cov = cover16
    h = dec.Cochain(
        torus16, 1,
        0.7 * spec16_p1.harmonic_basis[:, 0]
        - 0.3 * spec16_p1.harmonic_basis[:, 1])
    res = strong_decomposition(torus16, cov, rf, spec16_p1, h, 1.5)
    assert dec.norm_l2(res.harmonic - h) <= 1e-9


def test_exact_coexact_orthogonal_to_harmonics(torus16, spec16_p1, rng):
    d = dec.exterior_derivative(torus16, 0)
    gamma = dec.random_cochain(torus16, 0, rng)
    dg = d(gamma)
    for i in range(2):
        h = dec.Cochain(torus16, 1, spec16_p1.harmonic_basis[:, i])
        assert abs(dec.inner(dg, h)) <= \
            1e-10 * dec.norm_l2(dg) * dec.norm_l2(h)


def test_rank_identity(torus16, sphere4, spec16_p0, spec16_p1):
    assert rank_identity_check(torus16, 0, spec16_p0.harmonic_dim)
    assert rank_identity_check(torus16, 1, spec16_p1.harmonic_dim)
    assert rank_identity_check(torus16, 2, 1)
    assert rank_identity_check(sphere4, 1, 0)


def test_weak_decomposition_harmonic(torus16, cover16, spec16_p1):
    rf, cov = cover16
    h = dec.Cochain(torus16, 1, spec16_p1.harmonic_basis[:, 0])
    res = weak_decomposition(torus16, cov, rf, spec16_p1, h, 1.5,
                             eps_target=1e-3)
    assert res.extras["E_eps"] <= 1e-10
    assert dec.norm_l2(res.harmonic - h) <= 1e-9


def test_weak_decomposition_sequence_decreasing(torus16, cover16, spec16_p1,
                                                rng):
    rf, cov = cover16
    omega = dec.random_cochain(torus16, 1, rng)
    eps0 = 0.5 * dec.norm_l2(omega)
    seq = weak_decomposition_sequence(torus16, cov, rf, spec16_p1, omega,
                                      1.5, eps0=eps0, halvings=3)
    es = [r.extras["E_eps"] for r in seq]
    assert all(b < a for a, b in zip(es, es[1:]))
    assert not any(r.extras.get("monotonicity_flag") for r in seq)


def test_weak_modes_agree_within_eps(torus16, cover16, spec16_p1, rng):
    rf, cov = cover16
    omega = dec.random_cochain(torus16, 1, rng)
    eps = 0.3 * dec.norm_l2(omega)
    ra = weak_decomposition(torus16, cov, rf, spec16_p1, omega, 1.5,
                            eps_target=eps, mode="delta_closure")
    rb = weak_decomposition(torus16, cov, rf, spec16_p1, omega, 1.5,
                            eps_target=eps, mode="d_dstar_closure")
    assert dec.norm_l2(ra.harmonic - rb.harmonic) <= 1e-8
    tol = ra.extras["E_eps"] + rb.extras["E_eps"] + 1e-8
    assert dec.norm_l2((ra.exact + ra.coexact)
                       - (rb.exact + rb.coexact)) <= 2 * tol + eps


def test_weighted_czi(torus16, cover16, weight16, spec16_p1, rng):
    rf, cov = cover16
    lap = dec.hodge_laplacian(torus16, 1)
    us = []
    for _ in range(20):
        omega = lap(dec.random_cochain(torus16, 1, rng))
        u, _ = poisson_solve(torus16, cov, rf, spec16_p1, omega, 1.5)
        us.append(u)
    out = weighted_czi_verify(torus16, cov, rf, us[:10], 1.5, weight16)
    assert out["C1"] >= 0 and out["C2"] >= 0
    assert all(mg >= -1e-12 for mg in out["margins"])
    # held-out: constants keep the inequality with margin >= 0
    c1, c2 = out["C1"], out["C2"]
    for u in us[10:]:
        lhs, t1, t2 = analysis.czi_terms(torus16, rf, u, 1.5, weight16,
                                         out["classical"])
        assert c1 * t1 + c2 * t2 >= lhs - 1e-12


def test_harmonic_embedding(torus16, spec16_p0, spec16_p1):
    chk = harmonic_embedding_check(torus16, spec16_p1, 2.0)
    assert chk["ratios"] == [1.0, 1.0]
    for s in (4.0, 16.0):
        chk = harmonic_embedding_check(torus16, spec16_p1, s)
        assert np.isfinite(chk["C_s"]) and chk["C_s"] > 0
    # constants on p=0: closed-form volume ratio
    chk0 = harmonic_embedding_check(torus16, spec16_p0, 4.0)
    vol = torus16.total_volume()
    want = vol ** (1 / 4.0) / vol ** (1 / 2.0)
    assert chk0["ratios"][0] == pytest.approx(want, rel=1e-10)


def test_spectrum_report_serialization(spec16_p1):
    d = spec16_p1.to_dict()
    assert d["harmonic_dim"] == 2
    assert len(d["eigenvalues"]) >= 3
