"""Poisson solves on single covering balls.

A patch collects the n-cells whose vertices all lie in one covering ball.
Degree-p unknowns live on the interior p-simplices (those not touching
the patch boundary); homogeneous Dirichlet data is imposed on the
boundary simplices.  Two solvers are provided: a direct factorization of
the restricted global stiffness, and a flat/curved Neumann series that
splits the patch Laplacian around the chart's identity metric.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dec
from .geometry import ChartFrame, SimplicialManifold, all_geodesic_distances

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 20000


class PatchError(RuntimeError):
    """Degenerate patch: no interior simplex at the requested degree."""


@dataclass
class Patch:
    """Simplices of one covering ball with interior/boundary split."""

    manifold: SimplicialManifold
    ball: object
    doubled: bool
    cells: np.ndarray                      # patch n-cell indices
    interior: dict = field(default_factory=dict)   # degree -> simplex idx
    boundary: dict = field(default_factory=dict)
    _frame: ChartFrame | None = None
    _sub: tuple | None = None

    def patch_simplices(self, p: int) -> np.ndarray:
        return np.sort(np.concatenate([self.interior[p], self.boundary[p]]))

    def restrict(self, c: dec.Cochain) -> np.ndarray:
        return c.values[self.interior[c.degree]]

    def extend(self, p: int, vals: np.ndarray) -> dec.Cochain:
        out = np.zeros(self.manifold.num_simplices(p))
        out[self.interior[p]] = vals
        return dec.Cochain(self.manifold, p, out)

    def vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.manifold.num_vertices, dtype=bool)
        members = self.ball.doubled_members if self.doubled else self.ball.members
        mask[members] = True
        return mask

    @property
    def frame(self) -> ChartFrame:
        if self._frame is None:
            self._frame = ChartFrame(self.manifold, self.ball.center)
        return self._frame

    def submesh(self):
        """Patch cells as a standalone complex with the true edge lengths.

        Returns (sub, verts, rows) where rows[p] maps this patch's global
        interior p-simplices to submesh row indices.
        """
        if self._sub is None:
            m = self.manifold
            verts = np.unique(m.simplices[m.n][self.cells])
            local = {v: i for i, v in enumerate(verts)}
            lcells = np.vectorize(local.get)(m.simplices[m.n][self.cells])
            coords = self.frame.coordinates[verts]
            shape_only = SimplicialManifold(m.n, coords, lcells,
                                            normalize=False, validate=False)
            glob_edges = [m.simplex_index(1, verts[e])
                          for e in shape_only.simplices[1]]
            sub = SimplicialManifold(m.n, coords, lcells,
                                     edge_lengths=m.edge_lengths[glob_edges],
                                     normalize=False, validate=False)
            rows = {}
            for p in range(m.n + 1):
                order = {m.simplex_index(p, verts[s]): i
                         for i, s in enumerate(sub.simplices[p])}
                rows[p] = np.array([order[g] for g in self.interior[p]],
                                   dtype=int)
            self._sub = (sub, verts, rows)
        return self._sub


def extract_patch(m: SimplicialManifold, cov, j: int,
                  doubled: bool = False) -> Patch:
    """Build the patch over ball j (or its doubled ball).

    Boundary (n-1)-faces are those lying in exactly one patch n-cell;
    boundary p-simplices are their p-faces.  Every face of an interior
    simplex is again a patch simplex.
    """
    ball = cov.balls[j]
    n = m.n
    members = ball.doubled_members if doubled else ball.members
    vmask = np.zeros(m.num_vertices, dtype=bool)
    vmask[members] = True
    cell_mask = m.vertex_mask_to_simplex_mask(n, vmask)
    cells = np.flatnonzero(cell_mask)
    if cells.size == 0:
        raise PatchError(f"ball {j} contains no full n-cell")

    patch = Patch(m, ball, doubled, cells)

    # faces of patch cells, per degree
    in_patch = [np.zeros(m.num_simplices(p), dtype=bool) for p in range(n + 1)]
    in_patch[n][cells] = True
    for p in range(n):
        in_patch[p][m._cell_faces[p][cells].ravel()] = True

    # boundary (n-1)-faces: exactly one incident patch cell
    adj = abs(m.boundary[n])               # (n-1)-faces x n-cells
    inc = np.asarray(adj[:, cells].sum(axis=1)).ravel()
    bfaces = np.flatnonzero(in_patch[n - 1] & (inc == 1))

    bnd = [np.zeros(m.num_simplices(p), dtype=bool) for p in range(n + 1)]
    bnd[n - 1][bfaces] = True
    simp_nm1 = m.simplices[n - 1]
    bverts = np.zeros(m.num_vertices, dtype=bool)
    if bfaces.size:
        bverts[simp_nm1[bfaces].ravel()] = True
    for p in range(n - 1):
        sub = m.simplices[p]
        # p-faces of boundary (n-1)-faces: all vertices on some boundary face
        cand = np.flatnonzero(in_patch[p])
        for s in cand:
            if bverts[sub[s]].all():
                # verify the simplex is inside a boundary (n-1)-face
                for bf in bfaces:
                    if np.isin(sub[s], simp_nm1[bf]).all():
                        bnd[p][s] = True
                        break
    for p in range(n + 1):
        patch.interior[p] = np.flatnonzero(in_patch[p] & ~bnd[p])
        patch.boundary[p] = np.flatnonzero(bnd[p])
    return patch


@dataclass
class SolveDiagnostics:
    ball: int
    degree: int
    unknowns: int
    residual: float
    c_j: float = 0.0
    eta: float = 0.0
    iterations: int = 1


def _interior_system(patch: Patch, p: int):
    """Interior rows/cols of the patch complex stiffness and mass."""
    I = patch.interior[p]
    if I.size == 0:
        raise PatchError(f"ball {patch.ball.index}: no interior {p}-simplex")
    sub, _, rows = patch.submesh()
    r = rows[p]
    K_II = dec.stiffness_matrix(sub, p)[np.ix_(r, r)].tocsc()
    M_I = dec.mass_diagonal(sub, p)[r]
    return I, K_II, M_I


def solve_local_dirichlet(patch: Patch, omega: dec.Cochain,
                          r: float = 2.0) -> tuple[dec.Cochain, SolveDiagnostics]:
    """Solve the patch Hodge-Laplace problem with zero boundary values.

    The system is the restriction of the global stiffness to interior
    simplices, so Delta u = omega holds on the interior to machine
    precision; u is zero-extended outside.
    """
    m, p = patch.manifold, omega.degree
    I, K_II, M_I = _interior_system(patch, p)
    rhs = M_I * omega.values[I]
    if I.size <= DIRECT_SOLVE_LIMIT:
        u_I = spla.splu(K_II).solve(rhs)
    else:
        u_I, info = spla.cg(K_II, rhs, rtol=1e-12, maxiter=20 * I.size)
        if info != 0:
            raise PatchError(f"ball {patch.ball.index}: CG failed ({info})")
    u = patch.extend(p, u_I)

    num = np.linalg.norm((K_II @ u_I) / M_I - omega.values[I])
    den = np.linalg.norm(omega.values[I]) + 1e-300
    mask = np.zeros(m.num_simplices(p), dtype=bool)
    mask[patch.patch_simplices(p)] = True
    w2 = dec.sobolev_norm(m, u, dec.NormSpec(r, order=2), mask)
    lr = dec.lr_norm(m, omega, dec.NormSpec(r), mask)
    c_j = w2 / lr if lr > 0 else 0.0
    return u, SolveDiagnostics(patch.ball.index, p, int(I.size),
                               num / den, c_j)


def _flat_stiffness(patch: Patch, p: int,
                    flat_edge_lengths: np.ndarray | None = None):
    """Interior stiffness of the patch assembled with the chart metric.

    The patch complex is rebuilt with edge lengths induced by the
    identity metric in chart coordinates (or by an explicit per-global-
    edge override), on the same combinatorics as the curved patch.
    """
    m = patch.manifold
    _, verts, rows = patch.submesh()
    local = {v: i for i, v in enumerate(verts)}
    lcells = np.vectorize(local.get)(m.simplices[m.n][patch.cells])
    coords = patch.frame.coordinates[verts]
    if flat_edge_lengths is None:
        flat = SimplicialManifold(m.n, coords, lcells,
                                  normalize=False, validate=False)
    else:
        shape_only = SimplicialManifold(m.n, coords, lcells,
                                        normalize=False, validate=False)
        glob_edges = [m.simplex_index(1, verts[e])
                      for e in shape_only.simplices[1]]
        flat = SimplicialManifold(m.n, coords, lcells,
                                  edge_lengths=flat_edge_lengths[glob_edges],
                                  normalize=False, validate=False)
    r = rows[p]
    K_II = dec.stiffness_matrix(flat, p)[np.ix_(r, r)].tocsc()
    return K_II, dec.mass_diagonal(flat, p)[r]


def neumann_series_solve(patch: Patch, omega: dec.Cochain,
                         max_iter: int = 50, tol: float = 1e-12,
                         flat_edge_lengths: np.ndarray | None = None,
                         r: float = 2.0):
    """Flat/curved split iteration for the patch Dirichlet problem.

    Solves the same interior system as the direct mode by iterating
    v_k from Delta_flat v_k = gamma_k, gamma_{k+1} = (Delta - Delta_flat)
    v_k, and summing with alternating signs; returns (u, diagnostics).
    """
    m, p = patch.manifold, omega.degree
    I, K_II, M_I = _interior_system(patch, p)
    Kf_II, Mf_I = _flat_stiffness(patch, p, flat_edge_lengths)
    lu = spla.splu(Kf_II)

    def lr_of(vals):
        c = patch.extend(p, vals)
        mask = np.zeros(m.num_simplices(p), dtype=bool)
        mask[I] = True
        return dec.lr_norm(m, c, dec.NormSpec(r), mask)

    gamma = omega.values[I].copy()
    norm0 = lr_of(gamma)
    v = np.zeros_like(gamma)
    eta = 0.0
    prev = norm0
    grow = 0
    sign = 1.0
    k = 0
    while k < max_iter:
        vk = lu.solve(Mf_I * gamma)
        v += sign * vk
        # A v_k = (Delta - Delta_flat) v_k on the interior
        gamma = (K_II @ vk) / M_I - (Kf_II @ vk) / Mf_I
        k += 1
        cur = lr_of(gamma)
        if prev > 0:
            eta = max(eta, cur / prev)
        grow = grow + 1 if cur > prev else 0
        if eta >= 1.0 and grow >= 3:
            raise PatchError(
                f"ball {patch.ball.index}: Neumann series diverging "
                "(eta >= 1); use a smaller eps")
        prev = cur
        if cur <= tol * max(norm0, 1e-300):
            break
        sign = -sign
    if eta >= 0.5:
        log.warning("ball %d: Neumann contraction eta=%.3f >= 0.5",
                    patch.ball.index, eta)
    u = patch.extend(p, v)
    return u, SolveDiagnostics(patch.ball.index, p, int(I.size),
                               prev / max(norm0, 1e-300), eta=eta,
                               iterations=k)


def local_czi_check(patch: Patch, u: dec.Cochain, r: float):
    """Interior regularity triplet of the local Calderon-Zygmund bound.

    lhs is the W^{2,r} norm on the half-radius sub-ball; the two right
    hand terms are R^-2 times the L^r norm of u, and the L^r norm of
    Delta u, both over the full ball.  Callers fit (c1, c2) over samples.
    """
    m, p = patch.manifold, u.degree
    ball = patch.ball
    D = all_geodesic_distances(m)
    R = ball.covering_radius
    half = np.zeros(m.num_vertices, dtype=bool)
    half[np.flatnonzero(D[ball.center] <= R / 2.0)] = True
    hmask = m.vertex_mask_to_simplex_mask(p, half)
    if not hmask.any():
        raise PatchError("empty half-radius sub-ball")
    full = np.zeros(m.num_vertices, dtype=bool)
    full[ball.members] = True
    fmask = m.vertex_mask_to_simplex_mask(p, full)

    lhs = dec.sobolev_norm(m, u, dec.NormSpec(r, order=2), hmask)
    term1 = R**-2 * dec.lr_norm(m, u, dec.NormSpec(r), fmask)
    lap = dec.hodge_laplacian(m, p)(u)
    term2 = dec.lr_norm(m, lap, dec.NormSpec(r), fmask)
    return lhs, term1, term2
