"""Two-sided Kobayashi metric bounds near the boundary and the integrated distance.

The sharp estimate is
``E(p, v) = (|v_n|^2 / (4 d^2) + l(pi(p), v_t) / (2 d))^(1/2)``
with ``l`` the Hermitian Levi form normalised by ``2/|grad rho(pi(p))|`` so that
it does not depend on the scaling of rho (on the unit ball with rho = |z|^2 - 1
the normalisation is 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .disc import DiscMap, operator_table, steer_direction, to_complex, to_real
from .errors import ContainmentFailure, Disconnected, KobmetricError
from .geometry import (
    boundary_project,
    boundary_project_batch,
    levi_matrix,
    split_projectors,
    split_tangent,
    sphere_points,
)
from .normalization import (
    FittedConstants,
    ball_sandwich,
    build_chart,
    chart_inner_fraction,
    structure_deviation,
)
from .structures import c1_deviation, sample_ball

log = logging.getLogger(__name__)

CONTAINMENT_MARGIN = 1e-9
CERTIFICATE_RESIDUAL = 1e-6


@dataclass
class MetricBound:
    point: np.ndarray
    vector: np.ndarray
    lower: float = float("nan")
    upper: float = float("nan")
    estimate_E: float = float("nan")
    chart: object = None
    disc_certificate: DiscMap | None = None
    constants: FittedConstants = field(default_factory=FittedConstants)
    info: dict = field(default_factory=dict)


def normalized_levi(rho, J, q, vt):
    """Hermitian Levi form at q scaled by 2/|grad rho(q)|."""
    G = levi_matrix(rho, J, q)
    g = np.linalg.norm(rho.gradient(q), axis=-1)
    return 0.25 * np.einsum("...i,...ij,...j->...", vt, G, vt) * 2.0 / g


def sharp_estimate(rho, J, p, v, delta=None):
    """E(p, v), split at pi(p); delta defaults to the distance |p - pi(p)|."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return 0.0
    q, d = boundary_project(rho, p)
    d = d if delta is None else float(delta)
    sv = split_tangent(rho, J, q, v)
    ell = normalized_levi(rho, J, q, sv.tangent_part)
    return float(np.sqrt(sv.normal_part @ sv.normal_part / (4 * d * d) + ell / (2 * d)))


def localization_factor(delta, beta=1.0):
    """1 - 2 delta^beta clamped to (0, 1]."""
    if not 0 < delta < 1 or beta <= 0:
        raise ValueError("need 0 < delta < 1 and beta > 0")
    return float(min(1.0, max(1 - 2 * delta ** beta, np.finfo(float).tiny)))


# ---------------------------------------------------------------------------
# upper bound

def _disc_grid(n_theta=64, n_r=16):
    r = np.arange(1, n_r + 1) / n_r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    return (r[:, None] * np.exp(1j * th[None, :])).ravel()


class _Containment:
    """rho o Psi^{-1} < -margin on final-coordinate points (optionally inside a ball)."""

    def __init__(self, chart, margin=CONTAINMENT_MARGIN, max_radius=None):
        self.chart = chart
        self.margin = margin
        self.max_radius = max_radius

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            return False
        if self.max_radius is not None and np.any(np.linalg.norm(w, axis=-1) >= self.max_radius):
            return False
        if np.any(np.abs(1 - (w[..., 0] + 1j * w[..., 1])) < 1e-12):
            return False
        with np.errstate(all="ignore"):
            vals = self.chart.rho.value(self.chart.psi_inverse(w))
        return bool(np.all(vals < -self.margin))


def _largest_radius(inside, profile, hi=4.0, iters=40):
    """Largest R in (0, hi] with inside(profile(R)), by bisection."""
    if inside(profile(hi)):
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inside(profile(mid)):
            lo = mid
        else:
            hi = mid
    return lo


def optimize_profile(contain, vhat, grid=None, maxiter=300):
    """J_st disc R (zeta vhat + zeta^2 a) of largest R inside the normalized domain."""
    grid = _disc_grid() if grid is None else grid
    vc = to_complex(vhat)
    z1 = grid[:, None]

    def radius(a_real):
        ac = to_complex(a_real)

        def profile(R):
            return to_real(R * (z1 * vc + z1 ** 2 * ac))

        return _largest_radius(contain, profile)

    res = optimize.minimize(lambda a: -radius(a), np.zeros(4), method="Nelder-Mead",
                            options={"maxiter": maxiter, "xatol": 1e-5, "fatol": 1e-7,
                                     "initial_simplex": np.vstack([np.zeros(4), 0.1 * np.eye(4)])})
    a = res.x
    R = radius(a)
    if R <= 0:
        raise ContainmentFailure("no admissible model disc")
    return R, a


def kobayashi_upper(rho, J, p, v, chart=None, max_radius=None, optimize_shape=True,
                    margin=CONTAINMENT_MARGIN, **chart_kw):
    """Upper bound from an explicit pseudoholomorphic disc built in normalized coordinates."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    chart = chart or build_chart(rho, J, p, **chart_kw)
    D = chart.psi_jacobian(p)
    dv = D @ v
    scale = float(np.linalg.norm(dv))
    bound = MetricBound(p, v, chart=chart)
    if scale == 0:
        bound.upper = 0.0
        return bound
    vhat = dv / scale
    contain = _Containment(chart, margin, max_radius)
    grid = _disc_grid()
    if optimize_shape:
        R, a = optimize_profile(contain, vhat, grid)
    else:
        a = np.zeros(4)
        vc = to_complex(vhat)
        R = _largest_radius(contain, lambda R: to_real(R * grid[:, None] * vc))
    Jt = chart.pushed_structure
    steer = steer_direction(Jt, vhat, r=R, higher=[R * a])
    disc = steer.disc
    rdisc = _largest_radius(contain, lambda s: disc.evaluate_real(s * grid), hi=1.0)
    if rdisc <= 0:
        raise ContainmentFailure("steered disc has no admissible radius")
    d0 = disc.derivative_at_origin()
    upper = scale / (rdisc * np.linalg.norm(d0))
    img = disc.evaluate_real(rdisc * grid)
    disc.info.update({"radius": rdisc, "model_radius": R, "shape": a.tolist(),
                      "inner_fraction": chart_inner_fraction(chart, img)})
    bound.upper = float(upper)
    bound.disc_certificate = disc
    bound.info.update({"R": R, "rho_disc": rdisc, "residual": disc.info["residual"],
                       "contraction_ratio": disc.info["contraction_ratio"],
                       "inner_fraction": disc.info["inner_fraction"], "dpsi_norm": scale,
                       "certificate_valid": bool(disc.info["residual"] <= CERTIFICATE_RESIDUAL)})
    return bound


# ---------------------------------------------------------------------------
# lower bound

def ball_lower_bound(J, v, radius=1.0, points=None):
    """exp(-A/2) |v| / radius on B(0, radius) with A = 24 eps (sampled C^1 deviation)."""
    pts = points if points is not None else np.vstack([np.zeros((1, 4)), sample_ball(400, 0, radius=radius)])
    eps = c1_deviation(J, pts)
    return float(np.exp(-12 * eps) * np.linalg.norm(v) / radius), eps


def kobayashi_lower(rho, J, p, v, chart=None, beta=1.0, n_dev=400, sandwich_n=4000, **chart_kw):
    """Lower bound: localization x sandwich x barrier estimate on the outer ball.

    eps is a sampled C^1 deviation, so the bound is a sampled certificate, not a
    rigorous one.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    chart = chart or build_chart(rho, J, p, **chart_kw)
    sw = ball_sandwich(chart, n=sandwich_n)
    r_out = max(sw.r_out, sw.face_max if np.isfinite(sw.face_max) else 0.0, 1e-300)
    pts = np.vstack([np.zeros((1, 4)), sample_ball(n_dev, 1, radius=r_out)])
    eps = structure_deviation(chart.pushed_structure, pts)
    scale = float(np.linalg.norm(chart.psi_jacobian(p) @ v))
    loc = localization_factor(chart.delta, beta)
    lower = loc * np.exp(-12 * eps) * scale / r_out
    bound = MetricBound(p, v, lower=float(lower), chart=chart)
    bound.constants.beta = beta
    bound.info.update({"epsilon": eps, "r_out": r_out, "r_in": sw.r_in, "localization": loc,
                       "sampled_certificate": True, "dpsi_norm": scale})
    return bound


def metric_bounds(rho, J, p, v, beta=1.0, **kw):
    """Lower, E and upper sharing one chart."""
    chart = build_chart(rho, J, p)
    lo = kobayashi_lower(rho, J, p, v, chart=chart, beta=beta)
    up = kobayashi_upper(rho, J, p, v, chart=chart, **kw)
    up.lower = lo.lower
    up.estimate_E = sharp_estimate(rho, J, p, v)
    up.info.update(lo.info)
    up.constants = lo.constants
    return up


# ---------------------------------------------------------------------------
# integrated distance

def metric_tensors(rho, J, x, collar=1.0, restarts=1):
    """Quadratic forms W with E(x, e)^2 = e^T W e, using delta_rho = -rho/|grad rho(pi)|.

    Nodes deeper than ``collar`` or with an ambiguous projection get an isotropic
    form frozen at the deepest collar value.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q, dgeo, ok = boundary_project_batch(rho, x, restarts=restarts)
    gq = np.linalg.norm(rho.gradient(q), axis=-1)
    gq = np.where(ok & (gq > 0), gq, 1.0)
    drho = -rho.value(x) / gq
    use = ok & (dgeo <= collar) & (drho > 0)
    W = np.zeros((len(x), 4, 4))
    if np.any(use):
        Pt, Pn = split_projectors(rho, J, q[use])
        G = levi_matrix(rho, J, q[use]) * (0.5 / gq[use])[:, None, None]  # 1/4 * 2/|grad|
        d = drho[use][:, None, None]
        W[use] = (np.swapaxes(Pn, -1, -2) @ Pn) / (4 * d * d) + \
            (np.swapaxes(Pt, -1, -2) @ G @ Pt) / (2 * d)
        dfreeze = drho[use].max()
    else:
        dfreeze = max(float(np.nanmax(np.where(drho > 0, drho, np.nan))), 1e-3) if np.any(drho > 0) else 1.0
    W[~use] = np.eye(4) / (4 * dfreeze ** 2)
    return W, use


def _edge_length(Wa, Wb, Wm, e):
    fa = np.sqrt(np.maximum(np.einsum("mi,mij,mj->m", e, Wa, e), 0))
    fb = np.sqrt(np.maximum(np.einsum("mi,mij,mj->m", e, Wb, e), 0))
    fm = np.sqrt(np.maximum(np.einsum("mi,mij,mj->m", e, Wm, e), 0))
    return (fa + 4 * fm + fb) / 6


@dataclass
class DistanceGraph:
    """Weighted kNN graph over a layered sampling of D."""

    nodes: np.ndarray
    graph: object
    n_base: int
    params: dict

    def node_index(self, x, tol=1e-12):
        d, i = cKDTree(self.nodes).query(np.asarray(x, dtype=float))
        if d > tol:
            raise KeyError("point is not a graph node")
        return int(i)


def collar_nodes(rho, boundary, depths):
    """Points b - t n(b) for boundary points b and depths t."""
    g = rho.gradient(boundary)
    n = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return (boundary[:, None, :] - depths[None, :, None] * n[:, None, :]).reshape(-1, 4)


def build_distance_graph(rho, J, n_boundary=600, n_layers=16, delta_min=5e-3, depth=0.5,
                         collar=1.0, k=32, interior_spacing=0.125, bounds=2.0, extra_points=None,
                         boundary_points=None):
    """Nodes: boundary mesh pushed inward along normals at geometric depths up to
    ``depth``, a cubic interior grid beyond, and the points of ``extra_points``
    (whose projections join the boundary mesh).  Edges: kNN plus consecutive
    nodes along each normal ray."""
    if boundary_points is None:
        pts = sphere_points(n_boundary, 1.0, seed=None)
        b, _, ok = boundary_project_batch(rho, pts * 0.999)
        boundary = b[ok]
    else:
        boundary = np.asarray(boundary_points, dtype=float)
    extra = np.zeros((0, 4)) if extra_points is None else np.atleast_2d(np.asarray(extra_points, dtype=float))
    if len(extra):
        qe, de, oke = boundary_project_batch(rho, extra)
        boundary = np.vstack([boundary, qe[oke & (de > 0)]])
    depths = delta_min * (depth / delta_min) ** (np.arange(n_layers) / (n_layers - 1))
    rays = collar_nodes(rho, boundary, depths)
    ray_ok = rho.value(rays) < 0
    # interior grid
    ax = np.arange(-bounds, bounds + 1e-12, interior_spacing)
    grid = np.stack(np.meshgrid(ax, ax, ax, ax, indexing="ij"), -1).reshape(-1, 4)
    grid = grid[rho.value(grid) < 0]
    if len(grid):
        _, dg, okg = boundary_project_batch(rho, grid, restarts=1)
        grid = grid[(~okg) | (dg > depth)]
    nodes = np.vstack([rays, grid, extra])
    n = len(nodes)
    W, _ = metric_tensors(rho, J, nodes, collar)
    tree = cKDTree(nodes)
    kk = min(k + 1, n)
    _, idx = tree.query(nodes, kk)
    i = np.repeat(np.arange(n), kk - 1)
    j = idx[:, 1:].ravel()
    # consecutive nodes along each ray
    r_idx = np.arange(len(rays)).reshape(len(boundary), n_layers)
    ri, rj = r_idx[:, :-1].ravel(), r_idx[:, 1:].ravel()
    good = ray_ok[ri] & ray_ok[rj]
    i = np.concatenate([i, ri[good]])
    j = np.concatenate([j, rj[good]])
    pairs = np.unique(np.stack([np.minimum(i, j), np.maximum(i, j)], 1), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    mid = 0.5 * (nodes[pairs[:, 1]] + nodes[pairs[:, 0]])
    keep = (rho.value(mid) < 0) & (rho.value(nodes[pairs[:, 0]]) < 0) & (rho.value(nodes[pairs[:, 1]]) < 0)
    pairs, mid = pairs[keep], mid[keep]
    e = nodes[pairs[:, 1]] - nodes[pairs[:, 0]]
    Wm, _ = metric_tensors(rho, J, mid, collar)
    w = _edge_length(W[pairs[:, 0]], W[pairs[:, 1]], Wm, e)
    w = np.maximum(w, 1e-300)
    G = coo_matrix((np.concatenate([w, w]), (np.concatenate([pairs[:, 0], pairs[:, 1]]),
                                             np.concatenate([pairs[:, 1], pairs[:, 0]]))), shape=(n, n)).tocsr()
    return DistanceGraph(nodes, G, n, {"n_boundary": int(len(boundary)), "n_layers": n_layers,
                                       "delta_min": delta_min, "depth": depth, "collar": collar, "k": k,
                                       "interior_spacing": interior_spacing})


def graph_distances(dg, points):
    """All-pairs distances between the given points (which must be graph nodes)."""
    idx = [dg.node_index(x, tol=1e-9) for x in np.atleast_2d(points)]
    dist = dijkstra(dg.graph, directed=False, indices=idx)[:, idx]
    if not np.all(np.isfinite(dist)):
        raise Disconnected("graph is disconnected between query points; refine the mesh")
    return 0.5 * (dist + dist.T)


def _path(pred, i, j):
    out = [j]
    while out[-1] != i:
        k = pred[out[-1]]
        if k < 0:
            raise Disconnected("no path")
        out.append(k)
    return out[::-1]


def integrated_distance(rho, J, p, q, mode="estimate", graph=None, n_certify=32, **graph_kw):
    """Graph approximation of the integrated distance between p and q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.allclose(p, q):
        return 0.0 if mode == "estimate" else {"estimate": 0.0, "certified_upper": 0.0, "failures": 0}
    dg = graph or build_distance_graph(rho, J, extra_points=np.vstack([p, q]), **graph_kw)
    ip, iq = dg.node_index(p, 1e-9), dg.node_index(q, 1e-9)
    dist, pred = dijkstra(dg.graph, directed=False, indices=ip, return_predecessors=True)
    if not np.isfinite(dist[iq]):
        raise Disconnected("p and q are not connected in the graph")
    est = float(dist[iq])
    if mode == "estimate":
        return est
    if mode != "certified":
        raise ValueError(f"unknown mode {mode!r}")
    path = dg.nodes[_path(pred, ip, iq)]
    seg = np.diff(path, axis=0)
    mids = 0.5 * (path[1:] + path[:-1])
    W, _ = metric_tensors(rho, J, mids, dg.params["collar"])
    base = np.sqrt(np.einsum("mi,mij,mj->m", seg, W, seg))
    pick = np.unique(np.linspace(0, len(seg) - 1, min(n_certify, len(seg))).round().astype(int))
    total = base.copy()
    failures = 0
    for k in pick:
        try:
            total[k] = kobayashi_upper(rho, J, mids[k], seg[k]).upper
        except KobmetricError as exc:
            failures += 1
            log.info("certification failed at %s: %s", mids[k], exc)
    # segments not certified inherit the mean upper/estimate ratio of certified ones
    good = [k for k in pick if base[k] > 0]
    if good:
        r = np.mean([total[k] / base[k] for k in good])
        rest = np.setdiff1d(np.arange(len(seg)), pick)
        total[rest] = base[rest] * r
    return {"estimate": est, "certified_upper": float(total.sum()), "failures": failures,
            "n_certified": int(len(pick) - failures)}
