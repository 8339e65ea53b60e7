"""Triangulated closed manifolds: construction, metric queries, charts.

A mesh is a closed simplicial n-manifold (n = 2 or 3) embedded in some
ambient Euclidean space.  All metric data (edge lengths, simplex volumes,
dual volumes) is derived from the embedding unless edge lengths are
supplied explicitly.  After construction the geodesic diameter is
normalized to 2 so that radius clamps at 1 are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

DEGENERATE_VOLUME_FRACTION = 1e-12
FOLDOVER_TOL = 1e-9


class MeshError(ValueError):
    """Invalid or non-manifold mesh data."""


def _perm_sign(seq) -> int:
    """Sign of the permutation sorting `seq` (distinct entries)."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def _cayley_menger_volume_sq(d2: np.ndarray) -> float:
    """Squared p-volume from the (p+1)x(p+1) squared-distance matrix."""
    k = d2.shape[0]
    p = k - 1
    B = np.ones((k + 1, k + 1))
    B[0, 0] = 0.0
    B[1:, 1:] = d2
    coeff = (-1) ** (p + 1) / (2**p * math.factorial(p) ** 2)
    return coeff * np.linalg.det(B)


class SimplicialManifold:
    """Closed oriented simplicial n-manifold with metric data.

    Attributes:
        n: intrinsic dimension (2 or 3).
        vertices: (V, m) ambient coordinates.
        simplices: list indexed by degree p of (N_p, p+1) int arrays with
            sorted vertex rows (canonical orientation).
        boundary: list of sparse signed incidence matrices; boundary[p]
            maps p-chains to (p-1)-chains, p = 1..n.
        volumes: per-degree p-volumes (from edge lengths, Cayley-Menger).
        support_volumes: per-degree array; entry sigma is the share of
            total n-volume supported on sigma (barycentric lumping).
    """

    def __init__(self, dimension, vertices, cells, edge_lengths=None,
                 normalize=True, validate=True):
        self.n = int(dimension)
        if self.n not in (2, 3):
            raise MeshError(f"dimension must be 2 or 3, got {self.n}")
        self.vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != self.n + 1:
            raise MeshError("cell array must be (N, n+1)")
        V = self.vertices.shape[0]
        if cells.min(initial=0) < 0 or cells.max(initial=-1) >= V:
            raise MeshError("cell references a missing vertex")
        for row in cells:
            if len(set(row.tolist())) != self.n + 1:
                raise MeshError(f"degenerate cell with repeated vertex: {row}")
        self.oriented_cells = cells.copy()

        self._build_complex(cells)
        self._supplied_lengths = None
        if edge_lengths is not None:
            self._supplied_lengths = np.asarray(edge_lengths, dtype=float)
        self._build_metric()
        if validate:
            self._validate()
        if normalize:
            self._normalize_diameter()
        self._dist_cache: dict[int, np.ndarray] = {}
        self._all_dist = None

    # -- construction ---------------------------------------------------

    def _build_complex(self, cells):
        n = self.n
        simplices: list[np.ndarray] = [None] * (n + 1)
        simplices[n] = np.unique(np.sort(cells, axis=1), axis=0)
        if simplices[n].shape[0] != cells.shape[0]:
            raise MeshError("duplicate cells")
        for p in range(n, 0, -1):
            faces = []
            for drop in range(p + 1):
                fc = np.delete(simplices[p], drop, axis=1)
                faces.append(fc)
            faces = np.vstack(faces)
            simplices[p - 1] = np.unique(faces, axis=0)
        # 0-simplices must be single vertices in index order
        simplices[0] = np.arange(self.vertices.shape[0], dtype=np.int64)[:, None]
        self.simplices = simplices
        self._index = [
            {tuple(row): i for i, row in enumerate(simplices[p])}
            for p in range(n + 1)
        ]

        # signed boundary operators (canonical sorted orientation)
        self.boundary = [None] * (n + 1)
        for p in range(1, n + 1):
            rows, cols, vals = [], [], []
            lower = self._index[p - 1]
            for j, simp in enumerate(simplices[p]):
                for i in range(p + 1):
                    face = tuple(np.delete(simp, i))
                    rows.append(lower[face])
                    cols.append(j)
                    vals.append((-1) ** i)
            self.boundary[p] = sp.csr_matrix(
                (vals, (rows, cols)),
                shape=(simplices[p - 1].shape[0], simplices[p].shape[0]),
                dtype=np.int64,
            )

        # cell -> p-face index table (for support volumes)
        self._cell_faces = [None] * (n + 1)
        for p in range(n + 1):
            idx = self._index[p]
            table = np.empty(
                (simplices[n].shape[0], math.comb(n + 1, p + 1)), dtype=np.int64
            )
            for c, cell in enumerate(simplices[n]):
                for k, sub in enumerate(combinations(cell.tolist(), p + 1)):
                    table[c, k] = idx[sub]
            self._cell_faces[p] = table

    def _build_metric(self):
        n = self.n
        edges = self.simplices[1]
        if self._supplied_lengths is not None:
            if self._supplied_lengths.shape[0] != edges.shape[0]:
                raise MeshError("edge length array has wrong size")
            self.edge_lengths = self._supplied_lengths.copy()
        else:
            d = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
            self.edge_lengths = np.linalg.norm(d, axis=1)
        if np.any(self.edge_lengths <= 0):
            raise MeshError("non-positive edge length")

        len_of = {tuple(e): l for e, l in zip(map(tuple, edges), self.edge_lengths)}
        self.volumes = [None] * (n + 1)
        self.volumes[0] = np.ones(self.vertices.shape[0])
        self.volumes[1] = self.edge_lengths.copy()
        for p in range(2, n + 1):
            simp = self.simplices[p]
            vols = np.empty(simp.shape[0])
            for i, s in enumerate(simp):
                k = p + 1
                d2 = np.zeros((k, k))
                for a in range(k):
                    for b in range(a + 1, k):
                        l = len_of[(s[a], s[b])]
                        d2[a, b] = d2[b, a] = l * l
                v2 = _cayley_menger_volume_sq(d2)
                vols[i] = math.sqrt(max(v2, 0.0))
            self.volumes[p] = vols

        self.support_volumes = [None] * (n + 1)
        for p in range(n + 1):
            sv = np.zeros(self.simplices[p].shape[0])
            share = self.volumes[n] / math.comb(n + 1, p + 1)
            np.add.at(sv, self._cell_faces[p].ravel(),
                      np.repeat(share, self._cell_faces[p].shape[1]))
            self.support_volumes[p] = sv

    def _validate(self):
        n = self.n
        # boundary of boundary vanishes
        for p in range(2, n + 1):
            bb = self.boundary[p - 1] @ self.boundary[p]
            if bb.nnz and np.abs(bb.data).max() != 0:
                raise MeshError("incidence composition is not zero")
        # closed manifold: each (n-1)-simplex in exactly two cells
        face_count = np.abs(self.boundary[n]).sum(axis=1).A1
        if np.any(face_count != 2):
            bad = int(np.argmax(face_count != 2))
            raise MeshError(
                f"non-manifold or open mesh: face {bad} lies in "
                f"{int(face_count[bad])} cells"
            )
        # triangle inequality on every 2-simplex
        len_of = {tuple(e): l for e, l in
                  zip(map(tuple, self.simplices[1]), self.edge_lengths)}
        for s in self.simplices[2]:
            a = len_of[(s[0], s[1])]
            b = len_of[(s[1], s[2])]
            c = len_of[(s[0], s[2])]
            if a + b <= c or a + c <= b or b + c <= a:
                raise MeshError(f"triangle inequality fails on simplex {s}")
        # degenerate cells
        mean_vol = self.volumes[n].mean()
        if np.any(self.volumes[n] < DEGENERATE_VOLUME_FRACTION * mean_vol):
            raise MeshError("degenerate cell (volume below threshold)")
        # consistent orientation of the as-given cells
        self._check_orientation()
        # connectivity
        g = self.edge_graph()
        ncomp, _ = connected_components(g, directed=False)
        if ncomp != 1:
            raise MeshError("mesh is not connected")

    def _check_orientation(self):
        n = self.n
        induced: dict[tuple, list[int]] = {}
        for cell in self.oriented_cells:
            order = np.argsort(cell)
            sign_cell = _perm_sign(cell.tolist())
            scell = np.sort(cell)
            for i in range(n + 1):
                face = tuple(np.delete(scell, i))
                induced.setdefault(face, []).append(sign_cell * (-1) ** i)
        for face, signs in induced.items():
            if len(signs) != 2 or signs[0] + signs[1] != 0:
                raise MeshError(f"inconsistent orientation across face {face}")

    def _normalize_diameter(self):
        diam = self._approx_diameter()
        scale = 2.0 / diam
        self.vertices = self.vertices * scale
        if self._supplied_lengths is not None:
            self._supplied_lengths = self._supplied_lengths * scale
        self._build_metric()

    def _approx_diameter(self) -> float:
        g = self.edge_graph()
        d0 = dijkstra(g, directed=False, indices=0)
        u = int(np.argmax(d0))
        d1 = dijkstra(g, directed=False, indices=u)
        v = int(np.argmax(d1))
        d2 = dijkstra(g, directed=False, indices=v)
        return float(max(d1.max(), d2.max()))

    # -- queries --------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def num_simplices(self, p: int) -> int:
        return self.simplices[p].shape[0]

    def euler_characteristic(self) -> int:
        return sum((-1) ** p * self.num_simplices(p) for p in range(self.n + 1))

    def total_volume(self) -> float:
        return float(self.volumes[self.n].sum())

    def dual_volumes(self) -> np.ndarray:
        """Lumped n-volume per vertex."""
        return self.support_volumes[0]

    def edge_graph(self) -> sp.csr_matrix:
        edges = self.simplices[1]
        V = self.num_vertices
        g = sp.csr_matrix(
            (self.edge_lengths, (edges[:, 0], edges[:, 1])), shape=(V, V)
        )
        return g + g.T

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths.mean())

    def simplex_index(self, p: int, vertices) -> int:
        return self._index[p][tuple(sorted(vertices))]

    def vertex_mask_to_simplex_mask(self, p: int, vmask: np.ndarray) -> np.ndarray:
        """Simplices of degree p with all vertices inside the vertex mask."""
        return vmask[self.simplices[p]].all(axis=1)


def geodesic_distance(m: SimplicialManifold, source: int) -> np.ndarray:
    """Single-source shortest-path distance along weighted edges."""
    if not 0 <= source < m.num_vertices:
        raise ValueError(f"invalid vertex {source}")
    cached = m._dist_cache.get(source)
    if cached is None:
        if m._all_dist is not None:
            cached = m._all_dist[source]
        else:
            cached = dijkstra(m.edge_graph(), directed=False, indices=source)
        m._dist_cache[source] = cached
    return cached


def all_geodesic_distances(m: SimplicialManifold) -> np.ndarray:
    """Full pairwise distance matrix (cached on the manifold)."""
    if m._all_dist is None:
        m._all_dist = dijkstra(m.edge_graph(), directed=False)
    return m._all_dist


# -- charts -------------------------------------------------------------


@dataclass
class Chart:
    """Normal-coordinate chart around a center vertex.

    Coordinates map the center to the origin and normalize the fitted
    metric there to the identity.  Distortions measure how far the fitted
    metric is from the identity in value (eps_metric) and in discrete
    first differences across chart edges (eps_deriv).
    """

    center: int
    radius: float
    members: np.ndarray          # vertex indices, center first
    coordinates: np.ndarray      # (len(members), n)
    metric: np.ndarray           # (len(members), n, n)
    eps_metric: float
    eps_deriv: float


def _metric_feature(diff: np.ndarray, n: int) -> np.ndarray:
    """Design row(s) so that feature . g_packed == diff^T g diff."""
    if n == 2:
        dx, dy = diff[..., 0], diff[..., 1]
        return np.stack([dx * dx, 2 * dx * dy, dy * dy], axis=-1)
    dx, dy, dz = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.stack(
        [dx * dx, dy * dy, dz * dz, 2 * dx * dy, 2 * dx * dz, 2 * dy * dz],
        axis=-1,
    )


def _unpack_metric(packed: np.ndarray, n: int) -> np.ndarray:
    out = np.empty(packed.shape[:-1] + (n, n))
    if n == 2:
        out[..., 0, 0] = packed[..., 0]
        out[..., 0, 1] = out[..., 1, 0] = packed[..., 1]
        out[..., 1, 1] = packed[..., 2]
    else:
        out[..., 0, 0] = packed[..., 0]
        out[..., 1, 1] = packed[..., 1]
        out[..., 2, 2] = packed[..., 2]
        out[..., 0, 1] = out[..., 1, 0] = packed[..., 3]
        out[..., 0, 2] = out[..., 2, 0] = packed[..., 4]
        out[..., 1, 2] = out[..., 2, 1] = packed[..., 5]
    return out


_IDENTITY_PACKED = {2: np.array([1.0, 0.0, 1.0]),
                    3: np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])}


class ChartFrame:
    """Chart scaffolding for one center: coordinates and fitted metric at
    every vertex of the mesh, plus per-edge first differences.

    Charts of any radius around the same center are slices of this frame,
    which makes enlarging a chart monotone in both distortion measures.
    """

    def __init__(self, m: SimplicialManifold, center: int):
        self.m = m
        self.center = center
        n = m.n
        self.distances = geodesic_distance(m, center)
        self.coordinates = self._build_coordinates()
        self.metric_packed = self._fit_metric(self.coordinates)
        gc = _unpack_metric(self.metric_packed[center], n)
        # normalize so the fitted metric at the center is the identity
        try:
            L = np.linalg.cholesky(gc)
            self.coordinates = self.coordinates @ L
            self.metric_packed = self._fit_metric(self.coordinates)
        except np.linalg.LinAlgError:
            pass  # wildly folded chart; distortions will report it
        self.metric_packed[center] = _IDENTITY_PACKED[n]
        self.metric = _unpack_metric(self.metric_packed, n)
        eigs = np.linalg.eigvalsh(self.metric)
        self.vertex_deviation = np.abs(eigs - 1.0).max(axis=1)
        spd = eigs[:, 0] > 0
        self.vertex_deviation[~spd] = np.inf

        edges = m.simplices[1]
        # raw first difference across an edge (no division by length):
        # the mesh analogue of the sup-derivative bound on g_ij
        dg = np.abs(self.metric_packed[edges[:, 1]]
                    - self.metric_packed[edges[:, 0]])
        self.edge_difference = dg.max(axis=1)
        self.foldover_distance = self._foldover_distance()

    def _build_coordinates(self) -> np.ndarray:
        m, c = self.m, self.center
        disp = m.vertices - m.vertices[c]
        nbrs = _vertex_neighbors(m, c)
        _, _, vt = np.linalg.svd(disp[nbrs], full_matrices=False)
        basis = vt[: m.n]
        proj = disp @ basis.T
        chord = np.linalg.norm(disp, axis=1)
        pnorm = np.linalg.norm(proj, axis=1)
        safe = pnorm > 1e-300
        unit = np.zeros_like(proj)
        unit[safe] = proj[safe] / pnorm[safe, None]
        return chord[:, None] * unit

    def _fit_metric(self, coords: np.ndarray) -> np.ndarray:
        m = self.m
        n = m.n
        k = 3 if n == 2 else 6
        edges = m.simplices[1]
        diff = coords[edges[:, 1]] - coords[edges[:, 0]]
        feat = _metric_feature(diff, n)
        target = m.edge_lengths**2
        V = m.num_vertices
        ata = np.zeros((V, k, k))
        atb = np.zeros((V, k))
        outer = feat[:, :, None] * feat[:, None, :]
        fb = feat * target[:, None]
        for col in (0, 1):
            np.add.at(ata, edges[:, col], outer)
            np.add.at(atb, edges[:, col], fb)
        # tiny Tikhonov pull toward the identity guards low-degree vertices
        lam = 1e-8 * max(np.trace(ata.mean(axis=0)), 1e-300)
        ata += lam * np.eye(k)
        atb += lam * _IDENTITY_PACKED[n]
        return np.linalg.solve(ata, atb[:, :, None])[:, :, 0]

    def _foldover_distance(self) -> float:
        """Distance at which two chart points first collide (inf if never)."""
        coords = np.round(self.coordinates / FOLDOVER_TOL).astype(np.int64)
        seen: dict[tuple, int] = {}
        worst = np.inf
        for i, key in enumerate(map(tuple, coords)):
            j = seen.get(key)
            if j is not None:
                d = max(self.distances[i], self.distances[j])
                worst = min(worst, d)
            else:
                seen[key] = i
        return worst

    def chart(self, radius: float) -> Chart:
        m = self.m
        member_mask = self.distances < radius
        member_mask[self.center] = True
        members = np.flatnonzero(member_mask)
        order = np.argsort(self.distances[members], kind="stable")
        members = members[order]
        eps_metric = float(self.vertex_deviation[members].max())
        edges = m.simplices[1]
        emask = member_mask[edges].all(axis=1)
        eps_deriv = float(self.edge_difference[emask].max()) if emask.any() else 0.0
        if self.foldover_distance < radius:
            eps_metric = np.inf
            eps_deriv = np.inf
        return Chart(
            center=self.center,
            radius=radius,
            members=members,
            coordinates=self.coordinates[members],
            metric=self.metric[members],
            eps_metric=eps_metric,
            eps_deriv=eps_deriv,
        )

    def largest_radius_within(self, eps: float) -> float:
        """Largest chart radius whose distortions stay within eps."""
        m = self.m
        events = [(self.distances[v], self.vertex_deviation[v])
                  for v in range(m.num_vertices) if v != self.center]
        edges = m.simplices[1]
        etrig = np.maximum(self.distances[edges[:, 0]],
                           self.distances[edges[:, 1]])
        events.extend(zip(etrig, self.edge_difference))
        if np.isfinite(self.foldover_distance):
            events.append((self.foldover_distance, np.inf))
        events.sort(key=lambda t: t[0])
        running = 0.0
        for dist, val in events:
            running = max(running, val)
            if running > eps:
                return float(dist)
        return float(self.distances.max())


def _vertex_neighbors(m: SimplicialManifold, v: int) -> np.ndarray:
    edges = m.simplices[1]
    out = np.concatenate([edges[edges[:, 0] == v, 1],
                          edges[edges[:, 1] == v, 0]])
    return np.unique(out)


def normal_chart(m: SimplicialManifold, center: int, radius: float) -> Chart:
    """Chart around `center` containing vertices at distance < radius."""
    if radius > 2.0 + 1e-9:
        raise ValueError("chart radius exceeds mesh diameter")
    return ChartFrame(m, center).chart(radius)


# -- generators ---------------------------------------------------------


def _torus_cells(N: int) -> np.ndarray:
    cells = []
    for i in range(N):
        for j in range(N):
            a = i * N + j
            b = ((i + 1) % N) * N + j
            c = ((i + 1) % N) * N + (j + 1) % N
            d = i * N + (j + 1) % N
            cells.append((a, b, c))
            cells.append((a, c, d))
    return np.array(cells, dtype=np.int64)


def _flat_torus(N: int, distortion: float = 0.0, bump_freq: int = 2):
    u = 2 * np.pi * np.arange(N) / N
    uu, vv = np.meshgrid(u, u, indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    base = np.stack([np.cos(uu), np.sin(uu), np.cos(vv), np.sin(vv)], axis=1)
    scale = 1.0 + distortion * np.sin(bump_freq * uu) * np.sin(bump_freq * vv)
    verts = base * scale[:, None]
    return SimplicialManifold(2, verts, _torus_cells(N))


_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=float)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def _subdivided_sphere(f: int) -> SimplicialManifold:
    """Icosahedron subdivided at frequency f, projected to the unit sphere."""
    verts: list[np.ndarray] = []
    vert_index: dict[tuple, int] = {}

    def point(p: np.ndarray) -> int:
        p = p / np.linalg.norm(p)
        key = tuple(np.round(p, 9))
        idx = vert_index.get(key)
        if idx is None:
            idx = len(verts)
            vert_index[key] = idx
            verts.append(p)
        return idx

    cells = []
    for fa, fb, fc in _ICO_FACES:
        A, B, C = _ICO_VERTS[fa], _ICO_VERTS[fb], _ICO_VERTS[fc]
        grid = {}
        for i in range(f + 1):
            for j in range(f + 1 - i):
                k = f - i - j
                grid[(i, j)] = point((i * A + j * B + k * C) / f)
        for i in range(f):
            for j in range(f - i):
                cells.append((grid[(i, j)], grid[(i + 1, j)], grid[(i, j + 1)]))
                if i + j < f - 1:
                    cells.append((grid[(i + 1, j)], grid[(i + 1, j + 1)],
                                  grid[(i, j + 1)]))
    return SimplicialManifold(2, np.array(verts), np.array(cells, dtype=np.int64))


def generate_test_manifold(kind: str, resolution: int,
                           distortion: float = 0.0) -> SimplicialManifold:
    """Generate a closed test manifold.

    kind: flat_torus | sphere | bumpy_torus.  Resolution is the grid size
    for tori and the subdivision frequency for the sphere.
    """
    if not 4 <= resolution <= 256:
        raise ValueError(f"resolution {resolution} outside [4, 256]")
    if distortion < 0:
        raise ValueError("distortion must be >= 0")
    if kind == "flat_torus":
        return _flat_torus(resolution)
    if kind == "bumpy_torus":
        return _flat_torus(resolution, distortion=distortion)
    if kind == "sphere":
        return _subdivided_sphere(resolution)
    raise ValueError(f"unknown manifold kind {kind!r}")


def generate_flat_torus_3d(resolution: int) -> SimplicialManifold:
    """Flat 3-torus: periodic cube grid, each cell split into six tetrahedra."""
    if not 2 <= resolution <= 32:
        raise ValueError("resolution outside [2, 32]")
    N = resolution
    u = 2 * np.pi * np.arange(N) / N
    grid = np.stack(np.meshgrid(u, u, u, indexing="ij"), axis=-1).reshape(-1, 3)
    verts = np.concatenate(
        [np.cos(grid), np.sin(grid)], axis=1
    )[:, [0, 3, 1, 4, 2, 5]]

    def vid(i, j, k):
        return ((i % N) * N + j % N) * N + k % N

    # Kuhn split: six tets per cube along vertex-order paths
    from itertools import permutations

    cells = []
    for i in range(N):
        for j in range(N):
            for k in range(N):
                for perm in permutations(range(3)):
                    path = [(i, j, k)]
                    cur = [i, j, k]
                    for ax in perm:
                        cur = cur.copy()
                        cur[ax] += 1
                        path.append(tuple(cur))
                    tet = [vid(*p) for p in path]
                    if _perm_sign(perm) < 0:
                        tet[0], tet[1] = tet[1], tet[0]
                    cells.append(tet)
    return SimplicialManifold(3, verts, np.array(cells, dtype=np.int64))


# -- OFF file I/O -------------------------------------------------------


def load_mesh(path) -> SimplicialManifold:
    """Load a closed manifold from an ASCII OFF file.

    Faces with 3 indices are triangles (n=2); with 4 indices, tetrahedra
    (n=3).  Mixed meshes are rejected.  Vertex lines may carry more than
    three coordinates (higher ambient dimension), inferred from the first
    vertex line.
    """
    with open(path) as fh:
        lines = []
        for raw in fh:
            raw = raw.split("#", 1)[0].strip()
            if raw:
                lines.append(raw)
    if not lines or lines[0] != "OFF":
        raise MeshError(f"{path}: not an OFF file")
    try:
        counts = lines[1].split()
        nv, nf = int(counts[0]), int(counts[1])
        vert_lines = lines[2:2 + nv]
        face_lines = lines[2 + nv:2 + nv + nf]
        if len(vert_lines) != nv or len(face_lines) != nf:
            raise MeshError(f"{path}: truncated file")
        ambient = len(vert_lines[0].split())
        coords = np.array([ln.split() for ln in vert_lines],
                          dtype=float).reshape(nv, ambient)
        cells = []
        arity = None
        for ln in face_lines:
            toks = ln.split()
            k = int(toks[0])
            if k not in (3, 4):
                raise MeshError(f"{path}: face with {k} vertices")
            if arity is None:
                arity = k
            elif arity != k:
                raise MeshError(f"{path}: mixed face arities")
            if len(toks) != k + 1:
                raise MeshError(f"{path}: malformed face line {ln!r}")
            cells.append([int(t) for t in toks[1:]])
    except MeshError:
        raise
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: parse failure ({exc})") from exc
    dim = 2 if arity == 3 else 3
    return SimplicialManifold(dim, coords, np.array(cells, dtype=np.int64))


def save_mesh(m: SimplicialManifold, path) -> None:
    """Write the manifold as ASCII OFF (using the as-given cell orientation)."""
    lines = ["OFF", f"{m.num_vertices} {len(m.oriented_cells)} 0"]
    for v in m.vertices:
        lines.append(" ".join(repr(float(x)) for x in v))
    for cell in m.oriented_cells:
        lines.append(f"{len(cell)} " + " ".join(str(int(i)) for i in cell))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
