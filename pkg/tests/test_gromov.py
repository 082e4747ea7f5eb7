import itertools
import warnings

import numpy as np
import pytest
from scipy.sparse.csgraph import dijkstra
from hypothesis import given, settings
from hypothesis import strategies as st

from kobmetric.errors import LabelMismatch, ProjectionAmbiguous, TooFewPoints, UnknownLabel
from kobmetric.geometry import ball_function, boundary_project_batch, get_domain
from kobmetric.gromov import (
    FOUR_POINT_CONSTANT,
    DistanceMatrix,
    balogh_bonk_g,
    balogh_bonk_matrix,
    build_boundary_mesh,
    cc_distance,
    cc_distance_matrix,
    four_point_slack,
    g_from_parts,
    g_four_point_check,
    gromov_product,
    hyperbolicity_delta,
    rough_similarity,
)
from kobmetric.structures import standard_structure


def random_tree_metric(n, rng):
    """Path-length metric of a random weighted tree on n nodes."""
    parent = [None] + [int(rng.integers(0, k)) for k in range(1, n)]
    w = rng.uniform(0.1, 2.0, size=n)
    depth_path = []
    for k in range(n):
        path, j = [], k
        while j is not None:
            path.append(j)
            j = parent[j]
        depth_path.append(path)
    D = np.zeros((n, n))
    for a, b in itertools.combinations(range(n), 2):
        pa, pb = depth_path[a], depth_path[b]
        common = next(x for x in pa if x in pb)
        da = sum(w[x] for x in pa[:pa.index(common)])
        db = sum(w[x] for x in pb[:pb.index(common)])
        D[a, b] = D[b, a] = da + db
    return D


def brute_delta(D):
    best = 0.0
    for q in itertools.combinations(range(len(D)), 4):
        a, b, c, d = q
        s = sorted([D[a, b] + D[c, d], D[a, c] + D[b, d], D[a, d] + D[b, c]])
        best = max(best, (s[2] - s[1]) / 2)
    return best


# --- distance matrices ------------------------------------------------------

def test_distance_matrix_validation(tmp_path):
    d = DistanceMatrix(["a", "b"], [[0, 1], [1, 0]])
    assert d("a", "b") == 1
    with pytest.raises(UnknownLabel):
        d("a", "z")
    with pytest.raises(ValueError):
        DistanceMatrix(["a", "b"], [[0, 1], [2, 0]])
    with pytest.warns(RuntimeWarning):
        DistanceMatrix("abc", [[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    path = tmp_path / "d.csv"
    d.to_csv(path)
    back = DistanceMatrix.from_csv(path)
    assert back.labels == d.labels and np.array_equal(back.entries, d.entries)


def test_gromov_product_examples():
    d = DistanceMatrix(["x", "y", "w"], [[0, 2, 3], [2, 0, 5], [3, 5, 0]])
    assert gromov_product(d, "x", "y", "w") == 3
    assert gromov_product(d, "x", "x", "w") == d("x", "w")
    assert gromov_product(d, "x", "y", "x") == 0


@given(st.integers(4, 9), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_gromov_product_nonnegative_for_metrics(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    labels = [str(i) for i in range(n)]
    d = DistanceMatrix(labels, np.linalg.norm(x[:, None] - x[None], axis=-1))
    for a, b, c in itertools.permutations(labels, 3):
        assert gromov_product(d, a, b, c) >= -1e-12


# --- four-point constant ----------------------------------------------------

def test_delta_examples():
    assert hyperbolicity_delta(np.abs(np.subtract.outer([0, 1, 2.5, 4], [0, 1, 2.5, 4]))) == 0
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    D = np.linalg.norm(sq[:, None] - sq[None], axis=-1)
    assert hyperbolicity_delta(D) == pytest.approx(np.sqrt(2) - 1, abs=1e-12)
    with pytest.raises(TooFewPoints):
        hyperbolicity_delta(np.zeros((3, 3)))


@pytest.mark.parametrize("seed", range(6))
def test_delta_zero_on_trees(seed):
    rng = np.random.default_rng(seed)
    D = random_tree_metric(int(rng.integers(4, 13)), rng)
    assert hyperbolicity_delta(D) <= 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_delta_matches_brute_force_and_is_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 2))
    D = np.linalg.norm(x[:, None] - x[None], axis=-1)
    delta = hyperbolicity_delta(D)
    assert delta == pytest.approx(brute_delta(D), abs=1e-12)
    perm = rng.permutation(7)
    assert hyperbolicity_delta(D[np.ix_(perm, perm)]) == pytest.approx(delta, abs=1e-12)
    dup = np.vstack([np.column_stack([D, D[:, 0]]), np.append(D[0], 0.0)])
    assert hyperbolicity_delta(dup) == pytest.approx(delta, abs=1e-12)


def test_delta_sampled_beyond_exact_limit():
    rng = np.random.default_rng(0)
    D = random_tree_metric(70, rng)
    assert hyperbolicity_delta(D, n_samples=20_000) <= 1e-12
    x = rng.normal(size=(70, 2))
    E = np.linalg.norm(x[:, None] - x[None], axis=-1)
    a = hyperbolicity_delta(E, n_samples=20_000, seed=1)
    assert a == hyperbolicity_delta(E, n_samples=20_000, seed=1)
    assert 0 < a <= hyperbolicity_delta(E[:60, :60]) + 10


# --- boundary mesh and CC distance --------------------------------------------

@pytest.fixture(scope="module")
def ball_mesh():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(100, 4))
    x *= (0.95 * rng.random(100) ** 0.25 / np.linalg.norm(x, axis=1))[:, None]
    rho = ball_function()
    q, _, _ = boundary_project_batch(rho, x)
    return x, q, build_boundary_mesh(rho, standard_structure(), extra_points=q)


def test_mesh_invariants(ball_mesh, tmp_path):
    _, q, mesh = ball_mesh
    assert np.abs(ball_function().value(mesh.vertices)).max() <= 1e-9
    assert mesh.kappa > 0
    mesh.export(str(tmp_path / "m"))
    assert (tmp_path / "m_vertices.csv").exists() and (tmp_path / "m_edges.csv").exists()


def test_cc_distance_properties(ball_mesh):
    _, q, mesh = ball_mesh
    assert cc_distance(mesh, q[0], q[0]) == 0
    assert cc_distance(mesh, q[0], q[1]) == pytest.approx(cc_distance(mesh, q[1], q[0]))
    D = cc_distance_matrix(mesh, q[:15])
    viol = max(D[i, j] - D[i, k] - D[k, j] for i in range(15) for j in range(15) for k in range(15))
    assert viol <= 1e-12
    # snapping tolerance
    with pytest.raises(ValueError):
        cc_distance(mesh, q[0], q[1] * 0.9)


def test_cc_box_ball_comparison(ball_mesh):
    # Box(p, eps/C) within B_H(p, eps) within Box(p, C eps), with
    # Box(p, r) = {|x_h| < r, |x_n| < r^2}: fit the smallest C that works on 20 base points
    _, q, mesh = ball_mesh
    V = mesh.vertices
    J = standard_structure()
    worst = 1.0
    for p in q[:20]:
        i = mesh.vertex_index(p)[0]
        dist = dijkstra(mesh.graph, directed=False, indices=i)
        x = V - V[i]
        n = V[i] / np.linalg.norm(V[i])
        jn = J.value(V[i]) @ n
        xn = np.abs(x @ jn)
        xh = np.linalg.norm(x - np.outer(x @ n, n) - np.outer(x @ jn, jn), axis=1)
        box = np.maximum(xh, np.sqrt(xn))
        for eps in (0.1, 0.05):
            near = (dist < eps) & (dist > 0)
            if near.any():
                worst = max(worst, box[near].max() / eps)
            inbox = (box < eps) & (box > 0)
            if inbox.any():
                worst = max(worst, dist[inbox].max() / eps)
    assert np.isfinite(worst) and worst < 10


# --- comparison function g -------------------------------------------------

def test_balogh_bonk_examples(ball_mesh):
    x, q, mesh = ball_mesh
    rho, J = ball_function(), standard_structure()
    assert balogh_bonk_g(rho, J, mesh, x[0], x[0]) == pytest.approx(0.0, abs=1e-12)
    assert balogh_bonk_g(rho, J, mesh, x[0], x[1]) == pytest.approx(balogh_bonk_g(rho, J, mesh, x[1], x[0]))
    # same projection, delta(p) = 4 delta(q): h_p = 2 h_q
    n = q[2]
    p1, p2 = n * (1 - 0.08), n * (1 - 0.02)
    g = balogh_bonk_g(rho, J, mesh, p1, p2)
    hp, hq = np.sqrt(0.08), np.sqrt(0.02)
    assert g == pytest.approx(2 * np.log(hp / np.sqrt(hp * hq)), rel=1e-9)
    assert g == pytest.approx(np.log(2), rel=1e-9)


def test_balogh_bonk_rejects_points_outside_collar(ball_mesh):
    _, _, mesh = ball_mesh
    with pytest.raises(ProjectionAmbiguous):
        balogh_bonk_matrix(ball_function(), standard_structure(), mesh, np.zeros((2, 4)))


def test_g_four_point_check(ball_mesh):
    x, _, mesh = ball_mesh
    rep = g_four_point_check(ball_function(), standard_structure(), mesh, x)
    assert rep.passed and rep.worst_slack >= -1e-9
    same = four_point_slack(np.zeros((5, 5)))
    assert same.worst_slack == pytest.approx(FOUR_POINT_CONSTANT)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_four_point_for_any_metric_dH(seed):
    # the inequality holds for g built from any metric d_H and positive heights
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(8, 3))
    dH = np.linalg.norm(y[:, None] - y[None], axis=-1)
    h = rng.uniform(0.01, 1.0, size=8)
    G = g_from_parts(dH, h[:, None], h[None, :])
    np.fill_diagonal(G, 0)
    assert four_point_slack(G).worst_slack >= -1e-9


# --- rough similarity -------------------------------------------------------

def test_rough_similarity_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 2))
    D = np.linalg.norm(x[:, None] - x[None], axis=-1)
    labels = list("abcdef")
    d = DistanceMatrix(labels, D)
    assert rough_similarity(d, d) == 0
    G = D + 0.7
    np.fill_diagonal(G, 0)
    g = DistanceMatrix(labels, G, check_triangle=False)
    assert rough_similarity(d, g) == pytest.approx(0.7)
    shuffled = g.reordered(labels[::-1])
    assert rough_similarity(d, shuffled) == pytest.approx(0.7)
    with pytest.raises(LabelMismatch):
        rough_similarity(d, DistanceMatrix(list("abcdeg"), G, check_triangle=False))


def test_hyperbolicity_transfer_bound():
    # delta(d) <= delta(g) + 2 C for C = rough_similarity(d, g)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10, 2))
    D = np.linalg.norm(x[:, None] - x[None], axis=-1)
    noise = rng.uniform(-0.3, 0.3, size=D.shape)
    G = np.abs(D + 0.5 * (noise + noise.T))
    np.fill_diagonal(G, 0)
    labels = [str(i) for i in range(10)]
    d = DistanceMatrix(labels, D)
    g = DistanceMatrix(labels, G, check_triangle=False)
    C = rough_similarity(d, g)
    assert hyperbolicity_delta(d) <= hyperbolicity_delta(g) + 2 * C + 1e-12
