"""Admissible radius fields, Vitali ball coverings, partitions of unity.

A vertex's admissible radius is the largest geodesic ball around it that
carries a near-identity chart (metric and first-difference deviation both
below epsilon).  Core balls of radius R/divisor are packed greedily; their
5-fold dilations cover every vertex and carry a C^2 partition of unity.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import ChartFrame, SimplicialManifold, all_geodesic_distances

log = logging.getLogger(__name__)

RADIUS_FLOOR_EDGES = 2.0   # R_min = this many mean edge lengths
MIN_DIVISOR = 5.0          # below this the 5r dilation stops making sense


class CoverageError(RuntimeError):
    """A vertex ended up outside every covering ball."""


@dataclass
class RadiusField:
    """Per-vertex admissible radius and the derived core radius."""

    values: np.ndarray          # R_eps(x), in (0, 1]
    eps: float
    divisor: float              # requested Vitali divisor
    divisor_effective: float    # actual divisor after resolution clamping

    @property
    def core(self) -> np.ndarray:
        return self.values / self.divisor_effective


@dataclass
class CoveringBall:
    index: int
    center: int
    core_radius: float
    covering_radius: float
    admissible_radius: float
    members: np.ndarray          # vertices within the covering radius
    doubled_members: np.ndarray  # vertices within twice the covering radius


@dataclass
class AdmissibleCovering:
    balls: list
    eps: float
    overlap_measured: int = 0
    chi: sp.csr_matrix | None = None            # vertices x balls
    chi_gradients: np.ndarray | None = None     # per-ball max edge gradient

    def __len__(self):
        return len(self.balls)

    def membership_counts(self, num_vertices: int) -> np.ndarray:
        counts = np.zeros(num_vertices, dtype=int)
        for b in self.balls:
            counts[b.members] += 1
        return counts


@dataclass
class WeightField:
    """Positive per-vertex weight with covering-comparability constants."""

    values: np.ndarray
    kind: str = "user"
    ball_means: np.ndarray | None = None
    c_iw: float | None = None
    c_sw: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values <= 0):
            raise ValueError("weight must be strictly positive")


def admissible_radius(m: SimplicialManifold, x: int, eps: float) -> float:
    """Largest R in [R_min, 1] whose chart at x stays within eps."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    r_min = RADIUS_FLOOR_EDGES * m.mean_edge_length()
    frame = ChartFrame(m, x)
    r = frame.largest_radius_within(eps)
    return float(min(1.0, max(r, r_min)))


def compute_radius_field(m: SimplicialManifold, eps: float,
                         divisor: float = 120.0) -> RadiusField:
    """Admissible radius at every vertex plus the effective Vitali divisor.

    The divisor is reduced (never below MIN_DIVISOR, with a warning) when
    R/divisor would fall under the mesh resolution; core balls smaller
    than an edge cannot pack meaningfully.
    """
    if divisor < 8:
        raise ValueError("Vitali divisor must be at least 8")
    values = np.array([admissible_radius(m, x, eps)
                       for x in range(m.num_vertices)])
    mean_edge = m.mean_edge_length()
    resolvable = values.min() / mean_edge
    div_eff = float(min(divisor, max(MIN_DIVISOR, resolvable)))
    if div_eff < divisor:
        log.warning("Vitali divisor reduced from %g to %g: core radius "
                    "R/%g would be below mesh resolution", divisor, div_eff,
                    divisor)
    return RadiusField(values, eps, divisor, div_eff)


def check_radius_lipschitz(m: SimplicialManifold, rf: RadiusField,
                           tol: float = 1e-9) -> list:
    """Pairs violating the Harnack-type radius bound R(x) <= 4 R(y).

    Scans all pairs with d(x, y) <= (R(x) + R(y))/4; an empty list means
    the comparability of nearby admissible radii holds on this field.
    """
    D = all_geodesic_distances(m)
    R = rf.values
    close = D <= (R[:, None] + R[None, :]) / 4.0
    bad = close & (R[:, None] > 4.0 * R[None, :] * (1.0 + tol))
    xs, ys = np.nonzero(bad)
    return [(int(x), int(y)) for x, y in zip(xs, ys) if x != y]


def overlap_bound(eps: float, n: int) -> float:
    """Closed-form bound on the covering overlap count."""
    if not 0 <= eps < 1 or n < 2:
        raise ValueError("need eps in [0,1) and n >= 2")
    return ((1.0 + eps) / (1.0 - eps)) ** (n / 2.0) * 120.0**n


def vitali_cover(m: SimplicialManifold, rf: RadiusField) -> AdmissibleCovering:
    """Greedy Vitali covering from the core-radius field.

    Centers are taken in decreasing core-radius order (ties by index);
    a center is accepted when its core ball is disjoint from all accepted
    cores.  The 5-fold dilations then cover every vertex.
    """
    D = all_geodesic_distances(m)
    core = rf.core
    order = np.lexsort((np.arange(m.num_vertices), -core))
    accepted: list[int] = []
    for x in order:
        ok = True
        for j in accepted:
            if D[x, j] <= core[x] + core[j]:
                ok = False
                break
        if ok:
            accepted.append(int(x))

    balls = []
    for idx, c in enumerate(accepted):
        R_j = 5.0 * core[c]
        members = np.flatnonzero(D[c] <= R_j)
        doubled = np.flatnonzero(D[c] <= 2.0 * R_j)
        balls.append(CoveringBall(idx, c, float(core[c]), float(R_j),
                                  float(rf.values[c]), members, doubled))

    cov = AdmissibleCovering(balls, rf.eps)
    counts = cov.membership_counts(m.num_vertices)
    if counts.min() == 0:
        v = int(np.argmin(counts))
        raise CoverageError(
            f"vertex {v} lies in no covering ball; the radius floor is "
            "below mesh resolution")
    cov.overlap_measured = int(counts.max())
    return cov


def partition_of_unity(m: SimplicialManifold,
                       cov: AdmissibleCovering) -> sp.csr_matrix:
    """Normalized C^2 bumps chi_j = phi_j / sum phi, stored into cov.

    phi_j(x) = (1 - (d/R_j)^2)^3 inside the ball, zero outside; the
    discrete per-edge gradient of each column is measured and recorded.
    """
    D = all_geodesic_distances(m)
    V, J = m.num_vertices, len(cov.balls)
    phi = sp.lil_matrix((V, J))
    for b in cov.balls:
        t = D[b.center, b.members] / b.covering_radius
        vals = np.maximum(1.0 - t**2, 0.0) ** 3
        phi[b.members, b.index] = vals
    phi = phi.tocsr()
    total = np.asarray(phi.sum(axis=1)).ravel()
    if np.any(total <= 0):
        raise CoverageError("vertex with zero bump mass (coverage gap)")
    chi = sp.diags(1.0 / total) @ phi

    edges = m.simplices[1]
    lengths = m.edge_lengths
    dense_cols = np.asarray(chi.todense())
    diff = np.abs(dense_cols[edges[:, 0]] - dense_cols[edges[:, 1]])
    grads = (diff / lengths[:, None]).max(axis=0)
    cov.chi = chi
    cov.chi_gradients = grads
    return chi


def chi_gradient_constant(cov: AdmissibleCovering) -> float:
    """Measured C_chi: sup over balls of (edge gradient of chi_j) * R_j."""
    Rs = np.array([b.covering_radius for b in cov.balls])
    return float((cov.chi_gradients * Rs).max())


def weight_from_radius(rf: RadiusField, k: int) -> WeightField:
    """w(x) = R(x)^(-2k); k = 0 gives the constant weight."""
    if k < 0:
        raise ValueError("power k must be nonnegative")
    return WeightField(rf.values ** (-2 * k), kind=f"radius_power {k}")


def constant_weight(num_vertices: int) -> WeightField:
    return WeightField(np.ones(num_vertices), kind="constant")


def smoothed_radius(m: SimplicialManifold, cov: AdmissibleCovering,
                    rf: RadiusField) -> np.ndarray:
    """Partition-smoothed radius field sum_j chi_j(x) R_j."""
    Rs = np.array([rf.values[b.center] for b in cov.balls])
    return np.asarray(cov.chi @ Rs).ravel()


def check_weight_relative(w: WeightField, cov: AdmissibleCovering,
                          m: SimplicialManifold) -> tuple[float, float]:
    """Tightest comparability constants of w over the covering balls.

    Ball means are volume-weighted (dual vertex volumes); returns
    (c_iw, c_sw) with c_iw * w_j <= w(x) <= c_sw * w_j on every ball.
    """
    dv = m.dual_volumes()
    means = np.empty(len(cov.balls))
    c_iw, c_sw = math.inf, -math.inf
    for b in cov.balls:
        wv = w.values[b.members]
        means[b.index] = np.average(wv, weights=dv[b.members])
        ratios = wv / means[b.index]
        c_iw = min(c_iw, ratios.min())
        c_sw = max(c_sw, ratios.max())
    w.ball_means = means
    w.c_iw, w.c_sw = float(c_iw), float(c_sw)
    return w.c_iw, w.c_sw


EXPONENT_CAP = 1e6


def weight_integrability(m: SimplicialManifold, w: WeightField,
                         t: float) -> float:
    """gamma(w, t) = integral of w^(2t/(2-t)) over the manifold.

    Always finite on a mesh; the exponent is capped at EXPONENT_CAP with
    a warning as t approaches 2.
    """
    if not 1 < t < 2:
        raise ValueError("integrability exponent needs t in (1, 2)")
    expo = 2.0 * t / (2.0 - t)
    if expo > EXPONENT_CAP:
        warnings.warn("integrability exponent saturated at cap")
        expo = EXPONENT_CAP
    return float(np.sum(w.values**expo * m.dual_volumes()))


# -- serialization ------------------------------------------------------


def covering_to_dict(cov: AdmissibleCovering) -> dict:
    chi = sp.coo_matrix(cov.chi) if cov.chi is not None else None
    return {
        "eps": cov.eps,
        "overlap_measured": cov.overlap_measured,
        "balls": [{
            "center": b.center,
            "core_radius": b.core_radius,
            "covering_radius": b.covering_radius,
            "admissible_radius": b.admissible_radius,
            "members": b.members.tolist(),
            "doubled_members": b.doubled_members.tolist(),
        } for b in cov.balls],
        "partition_triplets": None if chi is None else
            [[int(i), int(j), float(v)]
             for i, j, v in zip(chi.row, chi.col, chi.data)],
        "chi_gradients": None if cov.chi_gradients is None
            else cov.chi_gradients.tolist(),
    }


def save_covering(cov: AdmissibleCovering, path) -> None:
    with open(path, "w") as f:
        json.dump(covering_to_dict(cov), f, indent=1, sort_keys=True)


def load_covering(path) -> AdmissibleCovering:
    with open(path) as f:
        d = json.load(f)
    balls = [CoveringBall(i, bd["center"], bd["core_radius"],
                          bd["covering_radius"], bd["admissible_radius"],
                          np.array(bd["members"], dtype=int),
                          np.array(bd["doubled_members"], dtype=int))
             for i, bd in enumerate(d["balls"])]
    cov = AdmissibleCovering(balls, d["eps"], d["overlap_measured"])
    if d["partition_triplets"] is not None:
        trip = np.array(d["partition_triplets"])
        V = max(b.members.max() for b in balls) + 1
        cov.chi = sp.csr_matrix(
            (trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))),
            shape=(int(V), len(balls)))
        cov.chi_gradients = np.array(d["chi_gradients"])
    return cov
