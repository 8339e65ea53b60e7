"""Discrete exterior calculus on simplicial cochains.

p-forms are real-valued cochains (one value per canonically oriented
p-simplex).  The coboundary d is the transpose of the signed incidence,
the codifferential is its adjoint for diagonal lumped mass matrices, and
all L^r / Sobolev norms integrate pointwise densities |omega|(sigma) =
|omega_sigma| / vol_p(sigma) against the per-simplex support n-volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import Chart, SimplicialManifold

INF = math.inf


class DegreeError(ValueError):
    """Cochain degree out of range or mismatched."""


@dataclass
class Cochain:
    """A discrete p-form: one value per oriented p-simplex."""

    manifold: SimplicialManifold
    degree: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not 0 <= self.degree <= self.manifold.n:
            raise DegreeError(f"degree {self.degree} outside [0, n]")
        if self.values.shape != (self.manifold.num_simplices(self.degree),):
            raise DegreeError("value array does not match simplex count")

    def copy(self) -> "Cochain":
        return Cochain(self.manifold, self.degree, self.values.copy())

    def __add__(self, other: "Cochain") -> "Cochain":
        return Cochain(self.manifold, self.degree, self.values + other.values)

    def __sub__(self, other: "Cochain") -> "Cochain":
        return Cochain(self.manifold, self.degree, self.values - other.values)

    def __mul__(self, k: float) -> "Cochain":
        return Cochain(self.manifold, self.degree, self.values * k)

    __rmul__ = __mul__

    def __neg__(self) -> "Cochain":
        return Cochain(self.manifold, self.degree, -self.values)


@dataclass
class FormOperator:
    """Sparse linear map between cochain spaces."""

    matrix: sp.spmatrix
    source_degree: int
    target_degree: int
    symmetric: bool = False

    def __call__(self, c: Cochain) -> Cochain:
        if c.degree != self.source_degree:
            raise DegreeError(
                f"operator expects degree {self.source_degree}, got {c.degree}"
            )
        return Cochain(c.manifold, self.target_degree, self.matrix @ c.values)

    def to_triplets(self):
        coo = sp.coo_matrix(self.matrix)
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


@dataclass
class NormSpec:
    """Exponent, Sobolev order, and optional pointwise weight.

    The weight is a per-vertex field applied as weight(x)**power inside
    the integral; simplices see the average of their vertex values.
    """

    r: float
    order: int = 0
    weight: np.ndarray | None = None
    power: float = 1.0

    def __post_init__(self):
        if self.r <= 1:
            raise ValueError("exponent r must exceed 1")
        if self.order not in (0, 1, 2):
            raise ValueError("Sobolev order must be 0, 1 or 2")
        if self.weight is not None:
            # accept either a raw per-vertex array or a WeightField
            self.weight = np.asarray(getattr(self.weight, "values", self.weight),
                                     dtype=float)


# -- operator caching ---------------------------------------------------


def _cached(m: SimplicialManifold, key: str, p: int, build):
    # cache lives on the manifold so it cannot outlive (or alias) it
    cache = getattr(m, "_op_cache", None)
    if cache is None:
        cache = m._op_cache = {}
    out = cache.get((key, p))
    if out is None:
        out = cache[(key, p)] = build()
    return out


def mass_diagonal(m: SimplicialManifold, p: int) -> np.ndarray:
    """Diagonal of the lumped degree-p mass matrix."""
    return _cached(m, "mass", p,
                   lambda: m.support_volumes[p] / m.volumes[p] ** 2)


def mass_matrix(m: SimplicialManifold, p: int) -> sp.dia_matrix:
    return sp.diags(mass_diagonal(m, p))


def inner(u: Cochain, v: Cochain) -> float:
    if u.degree != v.degree:
        raise DegreeError("inner product needs equal degrees")
    w = mass_diagonal(u.manifold, u.degree)
    return float(np.dot(u.values, w * v.values))


def norm_l2(u: Cochain) -> float:
    return math.sqrt(max(inner(u, u), 0.0))


def exterior_derivative(m: SimplicialManifold, p: int) -> FormOperator:
    """Coboundary from p-cochains to (p+1)-cochains (signed incidence)."""
    if not 0 <= p <= m.n:
        raise DegreeError(f"degree {p} outside [0, n]")
    if p == m.n:
        mat = sp.csr_matrix((m.num_simplices(m.n), m.num_simplices(m.n)))
    else:
        mat = _cached(m, "d", p, lambda: m.boundary[p + 1].T.tocsr().astype(float))
    return FormOperator(mat, p, min(p + 1, m.n))


def codifferential(m: SimplicialManifold, p: int) -> FormOperator:
    """Formal adjoint of d for the lumped mass inner products."""
    if not 0 <= p <= m.n:
        raise DegreeError(f"degree {p} outside [0, n]")
    if p == 0:
        mat = sp.csr_matrix((m.num_simplices(0), m.num_simplices(0)))
        return FormOperator(mat, 0, 0)

    def build():
        d = m.boundary[p].T.tocsr().astype(float)
        inv_lower = 1.0 / mass_diagonal(m, p - 1)
        return sp.diags(inv_lower) @ d.T @ sp.diags(mass_diagonal(m, p))

    return FormOperator(_cached(m, "dstar", p, build).tocsr(), p, p - 1)


def hodge_laplacian(m: SimplicialManifold, p: int) -> FormOperator:
    """Hodge Laplacian on p-cochains: d d* + d* d."""

    def build():
        lap = sp.csr_matrix((m.num_simplices(p), m.num_simplices(p)))
        if p < m.n:
            lap = lap + codifferential(m, p + 1).matrix @ exterior_derivative(m, p).matrix
        if p > 0:
            lap = lap + exterior_derivative(m, p - 1).matrix @ codifferential(m, p).matrix
        return lap.tocsr()

    return FormOperator(_cached(m, "lap", p, build), p, p, symmetric=True)


def stiffness_matrix(m: SimplicialManifold, p: int) -> sp.csr_matrix:
    """M_p @ Laplacian: symmetric positive semidefinite."""

    def build():
        K = mass_matrix(m, p) @ hodge_laplacian(m, p).matrix
        return ((K + K.T) * 0.5).tocsr()

    return _cached(m, "stiff", p, build)


# -- densities and norms ------------------------------------------------


def density(u: Cochain) -> np.ndarray:
    """Pointwise density |u|(sigma) = |u_sigma| / vol_p(sigma)."""
    return np.abs(u.values) / u.manifold.volumes[u.degree]


def _coface_average(m: SimplicialManifold, p: int) -> sp.csr_matrix:
    """Row-stochastic map taking (p+1)-simplex data to p-simplices."""

    def build():
        adj = abs(m.boundary[p + 1]).astype(float)
        counts = np.asarray(adj.sum(axis=1)).ravel()
        return sp.diags(1.0 / np.maximum(counts, 1)) @ adj

    return _cached(m, "coface_avg", p, build)


def _face_average(m: SimplicialManifold, p: int) -> sp.csr_matrix:
    """Row-stochastic map taking (p-1)-simplex data to p-simplices."""

    def build():
        adj = abs(m.boundary[p]).astype(float).T
        counts = np.asarray(adj.sum(axis=1)).ravel()
        return sp.diags(1.0 / np.maximum(counts, 1)) @ adj

    return _cached(m, "face_avg", p, build)


def gradient_density(u: Cochain) -> np.ndarray:
    """First-order surrogate density (|du|^2 + |d*u|^2)^(1/2) per p-simplex."""
    m, p = u.manifold, u.degree
    total = np.zeros(m.num_simplices(p))
    if p < m.n:
        du = exterior_derivative(m, p)(u)
        total += (_coface_average(m, p) @ density(du)) ** 2
    if p > 0:
        dsu = codifferential(m, p)(u)
        total += (_face_average(m, p) @ density(dsu)) ** 2
    return np.sqrt(total)


def hessian_density(u: Cochain) -> np.ndarray:
    """Second-order surrogate density (|Lap u|^2 + |dd*u|^2 + |d*du|^2)^(1/2)."""
    m, p = u.manifold, u.degree
    lap = hodge_laplacian(m, p)(u)
    total = density(lap) ** 2
    if p > 0:
        ddsu = exterior_derivative(m, p - 1)(codifferential(m, p)(u))
        total += density(ddsu) ** 2
    if p < m.n:
        dsdu = codifferential(m, p + 1)(exterior_derivative(m, p)(u))
        total += density(dsdu) ** 2
    return np.sqrt(total)


def _simplex_weight(m: SimplicialManifold, p: int, spec: NormSpec) -> np.ndarray:
    if spec.weight is None:
        return np.ones(m.num_simplices(p))
    w_simp = spec.weight[m.simplices[p]].mean(axis=1)
    return w_simp**spec.power


def _integrate(m, p, dens, spec: NormSpec, mask=None) -> float:
    mu = m.support_volumes[p]
    w = _simplex_weight(m, p, spec)
    term = mu * w * dens**spec.r
    if mask is not None:
        term = term[mask]
    return float(term.sum()) ** (1.0 / spec.r)


def lr_norm(m: SimplicialManifold, u: Cochain, spec: NormSpec, mask=None) -> float:
    """Weighted L^r norm of a p-cochain (optionally over a simplex mask)."""
    if u.manifold is not m:
        raise DegreeError("cochain does not belong to this manifold")
    if spec.order != 0:
        raise ValueError("lr_norm requires order 0")
    return _integrate(m, u.degree, density(u), spec, mask)


def sobolev_norm(m: SimplicialManifold, u: Cochain, spec: NormSpec, mask=None) -> float:
    """Weighted W^{k,r} norm, k = spec.order in {1, 2}."""
    if spec.order not in (1, 2):
        raise ValueError("sobolev_norm requires order 1 or 2")
    base = NormSpec(spec.r, 0, spec.weight, spec.power)
    total = _integrate(m, u.degree, density(u), base, mask)
    total += _integrate(m, u.degree, gradient_density(u), base, mask)
    if spec.order == 2:
        total += _integrate(m, u.degree, hessian_density(u), base, mask)
    return total


def sobolev_exponent(r: float, k: int, n: int):
    """Exponent gain of k orders of regularity; INF past the threshold."""
    if r <= 1 or k < 0 or n < 2:
        raise ValueError("need r > 1, k >= 0, n >= 2")
    inv = 1.0 / r - k / n
    if inv <= 0:
        return INF
    return 1.0 / inv


# -- chart comparison and ball embedding checks -------------------------


@dataclass
class EmbeddingCheck:
    status: str            # "ok" | "not_applicable"
    lhs: float = 0.0
    rhs: float = 0.0
    ratio: float = 0.0


def ball_sobolev_embedding_check(m: SimplicialManifold, ball, u: Cochain,
                                 r: float) -> EmbeddingCheck:
    """Scaled embedding L^{S_2(r)}(B) <= C R^-2 W^{2,r}(B) on one covering ball.

    Only meaningful for n = 3 (S_2(r) is infinite for every r > 1 when
    n = 2); reports not_applicable in that case.
    """
    if m.n == 2:
        return EmbeddingCheck(status="not_applicable")
    t = sobolev_exponent(r, 2, m.n)
    if t is INF:
        raise ValueError("S_2(r) is infinite; embedding check undefined")
    vmask = np.zeros(m.num_vertices, dtype=bool)
    vmask[ball.members] = True
    mask = m.vertex_mask_to_simplex_mask(u.degree, vmask)
    lhs = lr_norm(m, u, NormSpec(t), mask)
    rhs = sobolev_norm(m, u, NormSpec(r, order=2), mask)
    R = ball.covering_radius
    scaled = R**-2 * rhs
    ratio = lhs / scaled if scaled > 0 else 0.0
    return EmbeddingCheck(status="ok", lhs=lhs, rhs=rhs, ratio=ratio)


def chart_norm_comparison(m: SimplicialManifold, chart: Chart, u: Cochain,
                          r: float) -> tuple[float, float]:
    """Intrinsic vs chart-coordinate L^r norm of u over the chart members.

    The chart norm replaces every simplex measure by its Euclidean volume
    in chart coordinates; the pair quantifies the pullback comparison.
    """
    p = u.degree
    vmask = np.zeros(m.num_vertices, dtype=bool)
    vmask[chart.members] = True
    mask = m.vertex_mask_to_simplex_mask(p, vmask)
    intrinsic = lr_norm(m, u, NormSpec(r), mask)

    coord_of = dict(zip(chart.members.tolist(), chart.coordinates))
    n = m.n
    flat_cell = np.zeros(m.num_simplices(n))
    cmask = m.vertex_mask_to_simplex_mask(n, vmask)
    for ci in np.flatnonzero(cmask):
        pts = np.array([coord_of[v] for v in m.simplices[n][ci]])
        flat_cell[ci] = abs(np.linalg.det(pts[1:] - pts[0])) / math.factorial(n)
    flat_p = np.zeros(m.num_simplices(p))
    share = flat_cell / math.comb(n + 1, p + 1)
    np.add.at(flat_p, m._cell_faces[p].ravel(),
              np.repeat(share, m._cell_faces[p].shape[1]))

    flat_vol_p = np.ones(m.num_simplices(p))
    if p >= 1:
        for si in np.flatnonzero(mask):
            pts = np.array([coord_of[v] for v in m.simplices[p][si]])
            edges = pts[1:] - pts[0]
            gram = edges @ edges.T
            flat_vol_p[si] = math.sqrt(max(np.linalg.det(gram), 1e-300)) \
                / math.factorial(p)
    dens = np.abs(u.values) / flat_vol_p
    idx = np.flatnonzero(mask)
    chart_norm = float((flat_p[idx] * dens[idx] ** r).sum()) ** (1.0 / r)
    return intrinsic, chart_norm


def random_cochain(m: SimplicialManifold, p: int,
                   rng: np.random.Generator) -> Cochain:
    """Unit-mass-norm random p-cochain (standard normal values)."""
    u = Cochain(m, p, rng.standard_normal(m.num_simplices(p)))
    nrm = norm_l2(u)
    return u * (1.0 / nrm) if nrm > 0 else u
