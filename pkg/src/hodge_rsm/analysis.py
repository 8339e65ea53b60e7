"""Spectral layer: harmonic spaces, gap inverses, Hodge decompositions.

The generalized eigenproblem K y = lambda M y is symmetrized through the
diagonal mass matrix; eigenvalues below a relative tolerance span the
harmonic space, the first one above it is the spectral gap.  Poisson
solves combine the raising-steps sweep with a deflated conjugate
gradient on the gap; decompositions are certified by reconstruction
residuals and orthogonality tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from . import dec, rsm
from .covering import AdmissibleCovering, RadiusField, WeightField, \
    constant_weight
from .geometry import SimplicialManifold, geodesic_distance

DENSE_LIMIT = 3000
HARMONIC_TOL_REL = 1e-8
CZI_HEADROOM = 1.25


class AnalysisError(RuntimeError):
    pass


@dataclass
class SpectrumReport:
    degree: int
    eigenvalues: np.ndarray
    harmonic_dim: int
    gap: float
    harmonic_basis: np.ndarray     # (num_simplices, harmonic_dim), M-orthonormal
    harmonic_tol: float
    scale: float                   # largest (computed or bounded) eigenvalue
    cluster_flag: bool = False

    def to_dict(self) -> dict:
        return {"degree": self.degree,
                "eigenvalues": self.eigenvalues.tolist(),
                "harmonic_dim": self.harmonic_dim,
                "gap": self.gap,
                "harmonic_tol": self.harmonic_tol,
                "cluster_flag": bool(self.cluster_flag)}


@dataclass
class HodgeDecompositionResult:
    omega: dec.Cochain
    mode: str
    harmonic: dec.Cochain
    exact: dec.Cochain = None
    coexact: dec.Cochain = None
    u: dec.Cochain = None
    mu: dec.Cochain = None
    nu: dec.Cochain = None
    residual: float = 0.0
    orthogonality: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "residual": self.residual,
                "orthogonality": self.orthogonality,
                "harmonic_norm": dec.norm_l2(self.harmonic),
                "extras": {k: v for k, v in self.extras.items()
                           if isinstance(v, (int, float, str, bool, list))}}


def spectrum(m: SimplicialManifold, p: int, m_eigs: int = 10,
             harmonic_tol: float = HARMONIC_TOL_REL) -> SpectrumReport:
    """Lowest eigenpairs of the degree-p Hodge Laplacian.

    Dense below DENSE_LIMIT unknowns (the oracle path), shift-invert
    Lanczos above.  harmonic_tol is relative to the largest eigenvalue;
    a flag is raised when eigenvalues cluster suspiciously close to the
    harmonic threshold.
    """
    N = m.num_simplices(p)
    K = dec.stiffness_matrix(m, p)
    Mh = np.sqrt(dec.mass_diagonal(m, p))
    if N <= DENSE_LIMIT:
        S = K.toarray() / Mh[:, None] / Mh[None, :]
        vals, vecs = np.linalg.eigh(S)
        scale = float(vals[-1])
        vals = vals[:m_eigs]
        vecs = vecs[:, :m_eigs]
    else:
        S = sp.diags(1.0 / Mh) @ K @ sp.diags(1.0 / Mh)
        vals, vecs = spla.eigsh(S.tocsc(), k=m_eigs, sigma=-1e-6,
                                which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        # Gershgorin upper bound stands in for the top eigenvalue
        scale = float(np.abs(S).sum(axis=1).max())
    if vals[0] < -1e-12 * scale:
        raise AnalysisError("negative eigenvalue beyond tolerance")
    tol = harmonic_tol * scale
    dim = int(np.sum(vals < tol))
    above = vals[vals >= tol]
    gap = float(above[0]) if above.size else math.inf
    cluster = bool(np.any((vals >= tol) & (vals < 100 * tol))) \
        or (above.size > 0 and gap < 1e-6 * scale)
    # a threshold below the numerical-zero band cannot classify kernels
    zero_band = 1e-12 * scale
    if tol < zero_band and np.any(np.abs(vals) < zero_band):
        cluster = True
    basis = vecs[:, :dim] / Mh[:, None]
    # re-orthonormalize in the mass inner product
    if dim:
        G = (basis * dec.mass_diagonal(m, p)[:, None]).T @ basis
        L = np.linalg.cholesky(G)
        basis = basis @ np.linalg.inv(L).T
    return SpectrumReport(p, np.maximum(vals, 0.0), dim, gap, basis,
                          tol, scale, cluster)


def harmonic_projection(m: SimplicialManifold, rep: SpectrumReport,
                        omega: dec.Cochain) -> dec.Cochain:
    """Mass-orthogonal projection onto the harmonic space."""
    if omega.degree != rep.degree:
        raise dec.DegreeError("spectrum degree does not match cochain")
    if rep.harmonic_dim == 0:
        return dec.Cochain(m, omega.degree,
                           np.zeros(m.num_simplices(omega.degree)))
    Mw = dec.mass_diagonal(m, omega.degree)
    coef = rep.harmonic_basis.T @ (Mw * omega.values)
    return dec.Cochain(m, omega.degree, rep.harmonic_basis @ coef)


def gap_solve(m: SimplicialManifold, rep: SpectrumReport,
              g: dec.Cochain, rtol: float = 1e-11,
              max_iter: int | None = None) -> dec.Cochain:
    """Deflated conjugate gradient inverse on the spectral gap.

    Solves Delta f = g - Hg with f orthogonal to harmonics; the spectral
    bound |f| <= |g|/gap is checked on every call.
    """
    p = g.degree
    K = dec.stiffness_matrix(m, p)
    Mw = dec.mass_diagonal(m, p)
    H = rep.harmonic_basis

    def project(x):
        if rep.harmonic_dim:
            return x - H @ (H.T @ (Mw * x))
        return x

    b = Mw * project(g.values)
    x = np.zeros_like(b)
    res = b.copy()
    d = res.copy()
    rs = res @ res
    b_norm = math.sqrt(b @ b)
    if b_norm == 0:
        return dec.Cochain(m, p, x)
    limit = max_iter or 20 * len(b)
    for it in range(limit):
        Kd = K @ d
        alpha = rs / (d @ Kd)
        x += alpha * d
        res -= alpha * Kd
        rs_new = res @ res
        if math.sqrt(rs_new) <= rtol * b_norm:
            break
        d = res + (rs_new / rs) * d
        rs = rs_new
    else:
        raise AnalysisError("gap_solve: residual stagnation")
    x = project(x)
    f = dec.Cochain(m, p, x)
    if rep.gap > 0 and math.isfinite(rep.gap):
        if dec.norm_l2(f) > dec.norm_l2(g) / rep.gap * (1 + 1e-8):
            raise AnalysisError("gap_solve: spectral bound violated")
    return f


def poisson_solve(m: SimplicialManifold, cov: AdmissibleCovering,
                  rf: RadiusField, rep: SpectrumReport,
                  omega: dec.Cochain, r: float,
                  alpha: WeightField | None = None, k: int | None = None):
    """Global Poisson solve: raising steps plus the gap inverse.

    Requires the input to be (numerically) orthogonal to harmonics;
    returns (u, diagnostics) with Delta u = omega to solver precision.
    """
    h = harmonic_projection(m, rep, omega)
    nrm = dec.norm_l2(omega)
    if nrm > 0 and dec.norm_l2(h) > 1e-8 * nrm:
        raise AnalysisError("poisson_solve: project the harmonic part first")
    alpha = alpha or constant_weight(m.num_vertices)
    cfg = rsm.RsmConfig(r, 2.0, k=k, weight=alpha)
    v, om_t, trace = rsm.raising_steps(m, cov, rf, omega, cfg)
    f = gap_solve(m, rep, om_t - harmonic_projection(m, rep, om_t))
    u = v - f
    lap = dec.hodge_laplacian(m, omega.degree)
    resid = dec.norm_l2(lap(u) - omega) / (nrm + 1e-300)
    t = min(2.0, dec.sobolev_exponent(r, 2, m.n))
    diags = {
        "residual": resid,
        "w2r_norm": dec.sobolev_norm(m, u, dec.NormSpec(r, order=2,
                                                        weight=alpha,
                                                        power=r)),
        "lt_norm": dec.lr_norm(m, u, dec.NormSpec(t, weight=alpha, power=t)),
        "trace": trace,
    }
    return u, diags


# -- dense pipeline operators (for adjoint solves) ----------------------


def _step_matrix(m: SimplicialManifold, cov: AdmissibleCovering,
                 p: int) -> np.ndarray:
    """Dense matrix of one gluing sweep omega -> v0.

    Assembled ball by ball from the small interior inverses; feasible
    because the analysis meshes keep N_p well below the dense limit.
    """
    N = m.num_simplices(p)
    if N > DENSE_LIMIT:
        raise AnalysisError("degree too large for dense pipeline assembly")
    patches = rsm.cached_patches(m, cov)
    chi = rsm._chi_dense(cov)
    T = np.zeros((N, N))
    for j, patch in enumerate(patches):
        I, K_II, M_I = rsm.local_solver._interior_system(patch, p)
        inv = np.linalg.inv(K_II.toarray()) * M_I[None, :]
        chi_s = rsm.simplex_average(m, p, chi[:, j])
        T[np.ix_(I, I)] += chi_s[I, None] * inv
    return T


def pipeline_matrix(m: SimplicialManifold, cov: AdmissibleCovering,
                    rep: SpectrumReport, p: int, k: int) -> np.ndarray:
    """Dense matrix G of the full solve omega -> u = v - f.

    G composes k alternating gluing sweeps with the harmonic-deflated
    pseudoinverse applied to the final residual.
    """
    N = m.num_simplices(p)
    L = dec.hodge_laplacian(m, p).matrix.toarray()
    T1 = _step_matrix(m, cov, p)
    A = L @ T1 - np.eye(N)          # omega_j -> omega_{j+1}
    T = np.zeros((N, N))
    R = np.eye(N)                   # omega -> omega_j
    sign = 1.0
    for _ in range(max(k, 1)):
        T += sign * T1 @ R
        R = A @ R
        sign = -sign
    om_t = -R if max(k, 1) % 2 == 0 else R
    # deflated pseudoinverse of the Laplacian
    Mw = dec.mass_diagonal(m, p)
    H = rep.harmonic_basis
    P = np.eye(N) - (H @ (H.T * Mw[None, :]) if rep.harmonic_dim else 0.0)
    Lp = np.linalg.pinv(L, rcond=1e-12)
    C = Lp @ P @ om_t
    return T - C


def dual_poisson_solve(m: SimplicialManifold, cov: AdmissibleCovering,
                       rf: RadiusField, rep: SpectrumReport,
                       phi: dec.Cochain, r: float, k: int = 1,
                       report_w2r: bool = False):
    """Solve by adjoint: u = (T - C)* phi in the mass inner products.

    The composite solve operator of poisson_solve is assembled densely
    and transposed; for gap-orthogonal phi the result again satisfies
    Delta u = phi (finite-dimensional adjoint identity).
    """
    p = phi.degree
    h = harmonic_projection(m, rep, phi)
    nrm = dec.norm_l2(phi)
    if nrm > 0 and dec.norm_l2(h) > 1e-8 * nrm:
        raise AnalysisError("dual_poisson_solve: project first")
    G = pipeline_matrix(m, cov, rep, p, k)
    Mw = dec.mass_diagonal(m, p)
    u_vals = (G.T @ (Mw * phi.values)) / Mw
    u = dec.Cochain(m, p, u_vals)
    u = u - harmonic_projection(m, rep, u)
    lap = dec.hodge_laplacian(m, p)
    resid = dec.norm_l2(lap(u) - phi) / (nrm + 1e-300)
    rp = r / (r - 1.0)
    w0 = rf.values ** -2.0
    diags = {"residual": resid,
             "lrp_norm": dec.lr_norm(m, u, dec.NormSpec(rp, weight=w0,
                                                        power=r))}
    if report_w2r:
        diags["w2rp_norm"] = dec.sobolev_norm(m, u, dec.NormSpec(rp, order=2))
    return u, diags


# -- decompositions -----------------------------------------------------


def orthogonality_check(m: SimplicialManifold, h: dec.Cochain,
                        exact: dec.Cochain, coexact: dec.Cochain) -> dict:
    """Normalized pairwise mass inner products of the three components."""
    def entry(a, b):
        na, nb = dec.norm_l2(a), dec.norm_l2(b)
        if na == 0 or nb == 0:
            return 0.0
        return abs(dec.inner(a, b)) / (na * nb)
    return {"h_exact": entry(h, exact),
            "h_coexact": entry(h, coexact),
            "exact_coexact": entry(exact, coexact)}


def strong_decomposition(m: SimplicialManifold, cov: AdmissibleCovering,
                         rf: RadiusField, rep: SpectrumReport,
                         omega: dec.Cochain, r: float,
                         alpha: WeightField | None = None,
                         k: int | None = None,
                         mode: str = "delta") -> HodgeDecompositionResult:
    """Direct decomposition omega = h + Delta u (optionally d/d* split).

    The harmonic part comes from the residual route (minus the projected
    final residual of the raising steps), cross-checked downstream
    against the spectral projection; mode "d_dstar" further splits
    Delta u into d(d*u) + d*(du).
    """
    if mode not in ("delta", "d_dstar"):
        raise ValueError(f"unknown mode {mode!r}")
    p = omega.degree
    h = harmonic_projection(m, rep, omega)
    c = omega - h
    # re-project: roundoff in h leaves harmonic dust in the complement
    c = c - harmonic_projection(m, rep, c)
    if dec.norm_l2(c) <= 1e-12 * max(dec.norm_l2(omega), 1e-300):
        u = dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        diags = {"residual": 0.0}
    else:
        u, diags = poisson_solve(m, cov, rf, rep, c, r, alpha, k)
    lap = dec.hodge_laplacian(m, p)
    delta_u = lap(u)
    residual = dec.norm_l2(omega - h - delta_u) / (dec.norm_l2(omega) + 1e-300)
    result = HodgeDecompositionResult(omega, f"strong_{mode}", h, u=u,
                                      residual=residual)
    if mode == "delta":
        result.exact = delta_u
        result.coexact = dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        result.orthogonality = orthogonality_check(m, h, delta_u,
                                                   result.coexact)
    else:
        mu = dec.codifferential(m, p)(u) if p > 0 else None
        nu = dec.exterior_derivative(m, p)(u) if p < m.n else None
        ex = dec.exterior_derivative(m, p - 1)(mu) if mu is not None \
            else dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        co = dec.codifferential(m, p + 1)(nu) if nu is not None \
            else dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        result.mu, result.nu = mu, nu
        result.exact, result.coexact = ex, co
        result.residual = dec.norm_l2(omega - h - ex - co) \
            / (dec.norm_l2(omega) + 1e-300)
        result.orthogonality = orthogonality_check(m, h, ex, co)
    result.extras["solver"] = {kk: vv for kk, vv in diags.items()
                               if isinstance(vv, float)}
    return result


def weak_decomposition(m: SimplicialManifold, cov: AdmissibleCovering,
                       rf: RadiusField, rep: SpectrumReport,
                       omega: dec.Cochain, r: float,
                       alpha: WeightField | None = None,
                       eps_target: float = 1e-2,
                       mode: str = "delta_closure",
                       _min_balls: int = 1) -> HodgeDecompositionResult:
    """Closure-style decomposition via compactly supported approximants.

    The gap-orthogonal part of omega is truncated to a growing union of
    covering balls until the truncation error (the computable content of
    "closure") drops below eps_target; the truncated form is solved as
    in the strong mode and the leftover E_eps is reported.
    """
    if mode not in ("delta_closure", "d_dstar_closure"):
        raise ValueError(f"unknown mode {mode!r}")
    p = omega.degree
    h = harmonic_projection(m, rep, omega)
    om_c = omega - h
    spec_r = dec.NormSpec(r, weight=alpha, power=r) if alpha \
        else dec.NormSpec(r)

    # order balls by captured mass around the support
    dens = np.abs(om_c.values)
    ball_order = sorted(cov.balls, key=lambda b: -float(
        dens[m.vertex_mask_to_simplex_mask(
            p, np.isin(np.arange(m.num_vertices), b.members))].sum()))
    vmask = np.zeros(m.num_vertices, dtype=bool)
    used = 0
    om_eps = None
    for b in ball_order:
        vmask[b.members] = True
        used += 1
        if used < _min_balls:
            continue
        smask = m.vertex_mask_to_simplex_mask(p, vmask)
        om_eps = dec.Cochain(m, p, np.where(smask, om_c.values, 0.0))
        tail = dec.lr_norm(m, om_c - om_eps, spec_r)
        if tail <= eps_target or used == len(cov.balls):
            break
    om_eps = om_eps - harmonic_projection(m, rep, om_eps)
    u, diags = poisson_solve(m, cov, rf, rep, om_eps, r, alpha)
    lap = dec.hodge_laplacian(m, p)

    inner_mode = "delta" if mode == "delta_closure" else "d_dstar"
    if inner_mode == "delta":
        ex = lap(u)
        co = dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        mu = nu = None
    else:
        mu = dec.codifferential(m, p)(u) if p > 0 else None
        nu = dec.exterior_derivative(m, p)(u) if p < m.n else None
        ex = dec.exterior_derivative(m, p - 1)(mu) if mu is not None \
            else dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
        co = dec.codifferential(m, p + 1)(nu) if nu is not None \
            else dec.Cochain(m, p, np.zeros(m.num_simplices(p)))
    e_eps = omega - h - ex - co
    result = HodgeDecompositionResult(omega, f"weak_{mode}", h,
                                      exact=ex, coexact=co, u=u, mu=mu,
                                      nu=nu)
    result.residual = 0.0
    result.orthogonality = orthogonality_check(m, h, ex, co)
    result.extras["E_eps"] = dec.lr_norm(m, e_eps, spec_r)
    result.extras["eps_target"] = eps_target
    result.extras["balls_used"] = used
    return result


def weak_decomposition_sequence(m, cov, rf, rep, omega, r,
                                alpha=None, eps0: float = 1e-1,
                                halvings: int = 3,
                                mode: str = "delta_closure") -> list:
    """E_eps over successive halvings of eps_target; must decrease.

    When a halving fails to shrink E_eps strictly, the ball union is
    forced to grow by one more ball; three consecutive failures flag
    the run.
    """
    out = []
    eps = eps0
    min_balls = 1
    for _ in range(halvings + 1):
        res = weak_decomposition(m, cov, rf, rep, omega, r, alpha, eps,
                                 mode, _min_balls=min_balls)
        min_balls = res.extras["balls_used"]
        # force strictness by growing the union when a halving stalls
        while out and res.extras["E_eps"] >= out[-1].extras["E_eps"]:
            if min_balls >= len(cov.balls):
                res.extras["monotonicity_flag"] = True
                break
            min_balls += 1
            res = weak_decomposition(m, cov, rf, rep, omega, r, alpha,
                                     eps, mode, _min_balls=min_balls)
        out.append(res)
        eps /= 2.0
    return out


# -- inequality verification -------------------------------------------


def czi_terms(m: SimplicialManifold, rf: RadiusField, u: dec.Cochain,
              r: float, w: WeightField, classical: bool = False):
    """Terms of the weighted Calderon-Zygmund inequality for one u.

    lhs = |u|_{W^{2,r}(w)}; term1 = |u|_{L^r(w w0^r)} with w0 = R^-2
    (dropped in classical mode); term2 = |Delta u|_{L^r(w)}.
    """
    p = u.degree
    lhs = dec.sobolev_norm(m, u, dec.NormSpec(r, order=2, weight=w, power=r))
    if classical:
        t1_weight = w.values
    else:
        t1_weight = w.values * rf.values ** (-2.0 * r)
    term1 = dec.lr_norm(m, u, dec.NormSpec(r, weight=t1_weight, power=1.0))
    lap = dec.hodge_laplacian(m, p)(u)
    term2 = dec.lr_norm(m, lap, dec.NormSpec(r, weight=w, power=r))
    return lhs, term1, term2


def czi_fit(samples, headroom: float = CZI_HEADROOM):
    """Smallest (C1, C2) with C1*t1 + C2*t2 >= lhs over all samples.

    Solved as a linear program; the returned constants carry a headroom
    factor so they remain valid on held-out samples of the same law.
    """
    A, b = [], []
    for lhs, t1, t2 in samples:
        A.append([-t1, -t2])
        b.append(-lhs)
    res = linprog(c=[1.0, 1.0], A_ub=A, b_ub=b, bounds=[(0, None)] * 2,
                  method="highs")
    if not res.success:
        raise AnalysisError("CZI constant fit infeasible")
    c1, c2 = res.x
    return c1 * headroom, c2 * headroom


def weighted_czi_verify(m: SimplicialManifold, cov: AdmissibleCovering,
                        rf: RadiusField, us, r: float, w: WeightField,
                        classical: bool | None = None) -> dict:
    """Fit and evaluate the weighted CZI over a sample of cochains.

    classical defaults to the bounded-radius flag (min R >= max R / 4);
    the moreover clause at t = S_2(r) is evaluated when t is finite.
    """
    if classical is None:
        classical = bounded_radius_flag(rf)
    rows = [czi_terms(m, rf, u, r, w, classical) for u in us]
    c1, c2 = czi_fit(rows)
    margins = [c1 * t1 + c2 * t2 - lhs for lhs, t1, t2 in rows]
    out = {"C1": c1, "C2": c2, "rows": rows, "margins": margins,
           "classical": classical}
    t = dec.sobolev_exponent(r, 2, m.n)
    if t is not dec.INF:
        more = []
        for u in us:
            lhs2 = dec.lr_norm(m, u, dec.NormSpec(t, weight=w, power=t))
            wgt = w.values**r * rf.values ** (-2.0 * t)
            rhs2 = dec.sobolev_norm(m, u, dec.NormSpec(r, order=2,
                                                       weight=wgt,
                                                       power=1.0))
            more.append((lhs2, rhs2))
        out["moreover"] = more
        out["moreover_C"] = max((l / rr for l, rr in more if rr > 0),
                                default=0.0)
    else:
        out["moreover"] = "skipped: S_2(r) infinite"
    return out


def bounded_radius_flag(rf: RadiusField) -> bool:
    return bool(rf.values.min() >= 0.25 * rf.values.max())


def harmonic_embedding_check(m: SimplicialManifold, rep: SpectrumReport,
                             s: float) -> dict:
    """Ratios |h|_{L^s} / |h|_{L^2} over the harmonic space.

    ratios lists the basis elements; C_s is the sup over the unit sphere
    of the harmonic space (sampled on a fixed grid), which is invariant
    under the arbitrary basis rotation the eigensolver may apply inside
    the degenerate kernel.
    """
    def ratio(vec):
        h = dec.Cochain(m, rep.degree, vec)
        l2 = dec.lr_norm(m, h, dec.NormSpec(2.0))
        if l2 == 0:
            return 0.0
        ls = dec.lr_norm(m, h, dec.NormSpec(s)) if s != 2.0 else l2
        return ls / l2

    B = rep.harmonic_basis
    d = rep.harmonic_dim
    ratios = [ratio(B[:, i]) for i in range(d)]
    cs = max(ratios) if ratios else 0.0
    if d == 2:
        for th in np.linspace(0.0, np.pi, 360, endpoint=False):
            cs = max(cs, ratio(B @ [np.cos(th), np.sin(th)]))
    elif d > 2:
        dirs = np.random.default_rng(0).standard_normal((400, d))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        for c in dirs:
            cs = max(cs, ratio(B @ c))
    return {"s": s, "ratios": ratios, "C_s": cs}


def rank_identity_check(m: SimplicialManifold, p: int,
                        harmonic_dim: int) -> bool:
    """harmonic + rank(d_{p-1}) + rank(d_{p+1}) must equal dim C^p."""
    N = m.num_simplices(p)
    r_dn = np.linalg.matrix_rank(
        dec.exterior_derivative(m, p - 1).matrix.toarray()) if p > 0 else 0
    r_up = np.linalg.matrix_rank(
        dec.exterior_derivative(m, p).matrix.toarray()) if p < m.n else 0
    return harmonic_dim + r_dn + r_up == N
