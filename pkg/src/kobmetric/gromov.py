"""Gromov products, four-point hyperbolicity, boundary Carnot-Caratheodory distance
and the comparison function g(p, q) = 2 log((d_H + max h) / sqrt(h_p h_q)), h = delta^(1/2).
"""

from __future__ import annotations

import csv
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .errors import Disconnected, LabelMismatch, ProjectionAmbiguous, TooFewPoints, UnknownLabel
from .geometry import boundary_project_batch, levi_matrix, split_projectors, sphere_points

log = logging.getLogger(__name__)

FOUR_POINT_CONSTANT = 2 * np.log(4.0)
SNAP_TOL = 1e-3
EXACT_LIMIT = 60


# ---------------------------------------------------------------------------
# distance matrices

class DistanceMatrix:
    """Labelled symmetric matrix with zero diagonal.

    The triangle inequality is only checked (with a warning) since graph and
    estimate-mode distances may violate it slightly.
    """

    def __init__(self, labels, entries, check_triangle=True, tol=1e-9):
        self.labels = [str(x) for x in labels]
        D = np.array(entries, dtype=float)
        n = len(self.labels)
        if D.shape != (n, n):
            raise ValueError(f"entries have shape {D.shape}, expected {(n, n)}")
        if len(set(self.labels)) != n:
            raise ValueError("labels must be unique")
        if not np.all(np.isfinite(D)):
            raise ValueError("entries must be finite")
        if np.max(np.abs(D - D.T), initial=0.0) > tol * max(1.0, np.abs(D).max(initial=0.0)):
            raise ValueError("distance matrix is not symmetric")
        if np.max(np.abs(np.diag(D)), initial=0.0) > tol or D.min(initial=0.0) < -tol:
            raise ValueError("distance matrix needs zero diagonal and nonnegative entries")
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
        self.entries = D
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        self.triangle_violation = 0.0
        if check_triangle and n >= 3:
            self.triangle_violation = triangle_violation(D)
            if self.triangle_violation > tol:
                warnings.warn(f"triangle inequality violated by {self.triangle_violation:.3e}",
                              RuntimeWarning, stacklevel=2)

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self._index[str(label)]
        except KeyError:
            raise UnknownLabel(f"unknown label {label!r}") from None

    def __call__(self, x, y):
        return float(self.entries[self.index(x), self.index(y)])

    def reordered(self, labels):
        idx = [self.index(x) for x in labels]
        return DistanceMatrix(labels, self.entries[np.ix_(idx, idx)], check_triangle=False)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.labels)
            for row in self.entries:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, **kw):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        head, body = rows[0], [r for r in rows[1:] if r]
        if head and head[0].strip() == "":
            # row labels in the first column; they must repeat the header
            head = head[1:]
            if [r[0] for r in body] != head:
                raise ValueError(f"{path}: row labels do not match column labels")
            body = [r[1:] for r in body]
        return cls(head, [[float(x) for x in r] for r in body], **kw)


def triangle_violation(D):
    """max over i, j, k of D[i, j] - D[i, k] - D[k, j] (<= 0 for a metric)."""
    D = np.asarray(D, dtype=float)
    worst = -np.inf
    for k in range(len(D)):
        worst = max(worst, float(np.max(D - D[:, k, None] - D[None, k, :])))
    return worst


def _entries(d):
    return d.entries if isinstance(d, DistanceMatrix) else np.asarray(d, dtype=float)


def gromov_product(d, x, y, w):
    """(x|y)_w = 1/2 (d(x, w) + d(y, w) - d(x, y))."""
    return 0.5 * (d(x, w) + d(y, w) - d(x, y))


# ---------------------------------------------------------------------------
# four-point condition

def _quadruples(n, max_exact=EXACT_LIMIT, n_samples=200_000, seed=0):
    if n <= max_exact:
        yield from _chunks(itertools.combinations(range(n), 4))
        return
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_samples:
        m = min(50_000, n_samples - done)
        q = np.sort(np.argsort(rng.random((m, n)), axis=1)[:, :4], axis=1) if n < 200 else \
            _sample_distinct(rng, n, m)
        done += m
        yield q


def _sample_distinct(rng, n, m):
    q = rng.integers(0, n, size=(m, 4))
    while True:
        s = np.sort(q, axis=1)
        bad = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not bad.any():
            return s
        q[bad] = rng.integers(0, n, size=(int(bad.sum()), 4))


def _chunks(it, size=100_000):
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield np.array(block, dtype=np.intp)


def _pair_sums(D, q):
    a, b, c, e = q.T
    return np.stack([D[a, b] + D[c, e], D[a, c] + D[b, e], D[a, e] + D[b, c]], axis=1)


def hyperbolicity_delta(d, max_exact=EXACT_LIMIT, n_samples=200_000, seed=0):
    """Four-point constant: max over quadruples of (S1 - S2) / 2 with S1 >= S2 >= S3.

    Exact for at most ``max_exact`` points; otherwise the maximum over
    ``n_samples`` seeded random quadruples (a lower estimate).
    """
    D = _entries(d)
    n = len(D)
    if n < 4:
        raise TooFewPoints(f"need at least 4 points, got {n}")
    best = 0.0
    for q in _quadruples(n, max_exact, n_samples, seed):
        S = np.sort(_pair_sums(D, q), axis=1)
        best = max(best, float(np.max(S[:, 2] - S[:, 1])) / 2)
    return best


@dataclass
class FourPointReport:
    worst_slack: float
    constant: float
    n_quadruples: int
    passed: bool
    witness: tuple | None = None


def four_point_slack(g, constant=FOUR_POINT_CONSTANT, max_exact=EXACT_LIMIT, n_samples=200_000, seed=0,
                     tol=1e-9):
    """Minimum over quadruples of S2 + constant - S1 for a symmetric function g."""
    G = _entries(g)
    n = len(G)
    if n < 4:
        raise TooFewPoints(f"need at least 4 points, got {n}")
    worst, count, witness = np.inf, 0, None
    for q in _quadruples(n, max_exact, n_samples, seed):
        S = np.sort(_pair_sums(G, q), axis=1)
        slack = S[:, 1] + constant - S[:, 2]
        k = int(np.argmin(slack))
        if slack[k] < worst:
            worst, witness = float(slack[k]), tuple(int(i) for i in q[k])
        count += len(q)
    return FourPointReport(worst, float(constant), count, bool(worst >= -tol), witness)


# ---------------------------------------------------------------------------
# boundary mesh and Carnot-Caratheodory distance

@dataclass
class BoundaryMesh:
    """kNN graph on boundary samples with edge lengths sqrt(g_kappa(midpoint, edge))."""

    vertices: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    kappa: float
    graph: object = field(repr=False, default=None)

    def __post_init__(self):
        n = len(self.vertices)
        if self.graph is None:
            e, w = self.edges, self.lengths
            self.graph = coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]),
                                                             np.concatenate([e[:, 1], e[:, 0]]))),
                                    shape=(n, n)).tocsr()
        self._tree = cKDTree(self.vertices)

    def vertex_index(self, x, snap=SNAP_TOL):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dist, idx = self._tree.query(x)
        if np.any(dist > snap):
            k = int(np.argmax(dist))
            raise ValueError(f"point {x[k]} is {dist[k]:.3e} from the nearest mesh vertex (snap {snap})")
        return idx

    def export(self, prefix):
        np.savetxt(f"{prefix}_vertices.csv", self.vertices, delimiter=",", header="t1,t2,t3,t4", comments="")
        np.savetxt(f"{prefix}_edges.csv", np.column_stack([self.edges, self.lengths]), delimiter=",",
                   header="i,j,length", comments="", fmt=["%d", "%d", "%.17g"])


def g_kappa_tensors(rho, J, q, kappa):
    """Quadratic forms of L(q, v_h) + kappa^2 |v_n|^2, with L in Hermitian normalization."""
    Pt, Pn = split_projectors(rho, J, q)
    G = 0.25 * levi_matrix(rho, J, q)
    return np.swapaxes(Pt, -1, -2) @ G @ Pt + kappa ** 2 * (np.swapaxes(Pn, -1, -2) @ Pn)


def build_boundary_mesh(rho, J, n=800, k=12, kappa=None, extra_points=None):
    """Fibonacci points projected to {rho = 0} (plus ``extra_points``) joined by kNN edges.

    Edge weights use the midpoint of the chord projected back to the boundary.
    ``kappa`` defaults to 1 / (mean Euclidean edge length).
    """
    b, _, ok = boundary_project_batch(rho, sphere_points(n))
    verts = b[ok]
    if extra_points is not None:
        e = np.atleast_2d(np.asarray(extra_points, dtype=float))
        qe, _, oke = boundary_project_batch(rho, e)
        if not oke.all():
            raise ProjectionAmbiguous("extra boundary point failed to project", witness=e[~oke][0])
        verts = np.vstack([verts, qe])
    if len(verts) < k + 1:
        raise TooFewPoints(f"only {len(verts)} boundary vertices")
    _, idx = cKDTree(verts).query(verts, k + 1)
    i = np.repeat(np.arange(len(verts)), k)
    j = idx[:, 1:].ravel()
    pairs = np.unique(np.stack([np.minimum(i, j), np.maximum(i, j)], 1), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    vec = verts[pairs[:, 1]] - verts[pairs[:, 0]]
    if kappa is None:
        kappa = 1.0 / float(np.mean(np.linalg.norm(vec, axis=1)))
    mid, _, okm = boundary_project_batch(rho, 0.5 * (verts[pairs[:, 0]] + verts[pairs[:, 1]]), restarts=0)
    mid = np.where(okm[:, None], mid, verts[pairs[:, 0]])
    W = g_kappa_tensors(rho, J, mid, kappa)
    w = np.sqrt(np.maximum(np.einsum("mi,mij,mj->m", vec, W, vec), 0.0))
    mesh = BoundaryMesh(verts, pairs, np.maximum(w, 1e-300), float(kappa))
    ncomp, _ = connected_components(mesh.graph, directed=False)
    if ncomp > 1:
        raise Disconnected(f"boundary mesh has {ncomp} components; increase n or k")
    return mesh


def cc_distance_matrix(mesh, points):
    """Shortest-path distances under g_kappa between boundary points (snapped to vertices)."""
    idx = mesh.vertex_index(points)
    D = dijkstra(mesh.graph, directed=False, indices=idx)[:, idx]
    if not np.all(np.isfinite(D)):
        raise Disconnected("mesh vertices are not connected")
    return 0.5 * (D + D.T)


def cc_distance(mesh, p, q):
    return float(cc_distance_matrix(mesh, np.vstack([p, q]))[0, 1])


# ---------------------------------------------------------------------------
# the comparison function g

def collar_projection(rho, points, collar=None):
    """Boundary projections and depths; points outside the collar are rejected."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    q, delta, ok = boundary_project_batch(rho, pts)
    ok &= rho.value(pts) < 0
    if collar is not None:
        ok &= delta <= collar
    if not ok.all():
        k = int(np.argmin(ok))
        raise ProjectionAmbiguous(f"point {pts[k]} is outside the projection collar", witness=pts[k])
    return q, delta


def g_from_parts(dH, hp, hq):
    return 2 * np.log((dH + np.maximum(hp, hq)) / np.sqrt(hp * hq))


def balogh_bonk_matrix(rho, J, mesh, points, collar=None):
    """Matrix of g(p_i, p_j); projections must be mesh vertices."""
    q, delta = collar_projection(rho, points, collar)
    h = np.sqrt(delta)
    dH = cc_distance_matrix(mesh, q)
    G = g_from_parts(dH, h[:, None], h[None, :])
    np.fill_diagonal(G, 0.0)
    return G


def balogh_bonk_g(rho, J, mesh, p, q, collar=None):
    return float(balogh_bonk_matrix(rho, J, mesh, np.vstack([p, q]), collar)[0, 1])


def g_four_point_check(rho, J, mesh, points, **kw):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 4:
        raise TooFewPoints(f"need at least 4 points, got {len(pts)}")
    return four_point_slack(balogh_bonk_matrix(rho, J, mesh, pts), **kw)


def rough_similarity(dmat, gmat):
    """max |d - g| over pairs, after matching labels."""
    if sorted(dmat.labels) != sorted(gmat.labels):
        raise LabelMismatch("distance matrices have different label sets")
    g = gmat.reordered(dmat.labels) if gmat.labels != dmat.labels else gmat
    return float(np.max(np.abs(dmat.entries - g.entries)))
