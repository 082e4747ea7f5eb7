"""Levi geometry of a pair (rho, J) on R^4.

The conventions are those of :mod:`kobmetric.structures`.  With
``alpha = d^c_J rho = -d rho o J`` and ``omega = d alpha`` the Levi form is
``L(p, v) = omega(v, J(p) v)``; for J_st this is ``4 sum rho_{j kbar} v_j conj(v_k)``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateStructure,
    NotStrictlyPseudoconvex,
    ProjectionAmbiguous,
    UnknownLabel,
)
from .structures import (
    FD_STEP,
    J_ST,
    StructureField,
    perturbed_structure,
    sample_ball,
    standard_structure,
)

log = logging.getLogger(__name__)


class DefiningFunction:
    """rho: R^4 -> R with gradient and Hessian; the domain is {rho < 0}.

    Missing derivatives fall back to central differences.
    """

    def __init__(self, value, gradient=None, hessian=None, name="rho", fd_step=FD_STEP):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name
        self.fd_step = fd_step

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        return np.asarray(self._value(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        h = self.fd_step
        out = np.empty(x.shape)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            out[..., k] = (self._value(x + e) - self._value(x - e)) / (2 * h)
        return out

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        if self._hessian is not None:
            return np.asarray(self._hessian(x), dtype=float)
        h = self.fd_step if self._gradient is not None else 1e-4
        out = np.empty(x.shape + (4,))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            out[..., k, :] = (self.gradient(x + e) - self.gradient(x - e)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def scaled(self, c):
        """c * rho (c > 0 keeps the domain)."""
        return DefiningFunction(
            lambda x: c * self.value(x),
            lambda x: c * self.gradient(x),
            lambda x: c * self.hessian(x),
            name=f"{c:g}*{self.name}",
        )

    def negated(self):
        return DefiningFunction(
            lambda x: -self.value(x),
            lambda x: -self.gradient(x),
            lambda x: -self.hessian(x),
            name=f"-{self.name}",
        )

    def __repr__(self):
        return f"DefiningFunction({self.name!r})"


def ball_function(radius=1.0, center=None):
    c = np.zeros(4) if center is None else np.asarray(center, dtype=float)

    def value(x):
        y = x - c
        return np.sum(y * y, axis=-1) - radius ** 2

    def gradient(x):
        return 2.0 * (x - c)

    def hessian(x):
        return np.broadcast_to(2.0 * np.eye(4), np.shape(x) + (4,)).copy()

    return DefiningFunction(value, gradient, hessian, name="ball")


def norm_squared():
    """rho = |z|^2, the model plurisubharmonic function."""
    rho = ball_function(0.0)
    rho.name = "norm2"
    return rho


def siegel_function():
    """rho = -2 Re z1 + |z2|^2."""

    def value(x):
        return -2.0 * x[..., 0] + x[..., 2] ** 2 + x[..., 3] ** 2

    def gradient(x):
        g = np.zeros(np.shape(x))
        g[..., 0] = -2.0
        g[..., 2] = 2.0 * x[..., 2]
        g[..., 3] = 2.0 * x[..., 3]
        return g

    def hessian(x):
        H = np.zeros(np.shape(x) + (4,))
        H[..., 2, 2] = 2.0
        H[..., 3, 3] = 2.0
        return H

    return DefiningFunction(value, gradient, hessian, name="siegel")


def affine_function(a, b=0.0):
    a = np.asarray(a, dtype=float)
    return DefiningFunction(
        lambda x: x @ a + b,
        lambda x: np.broadcast_to(a, np.shape(x)).copy(),
        lambda x: np.zeros(np.shape(x) + (4,)),
        name="affine",
    )


@dataclass
class Domain:
    name: str
    rho: DefiningFunction
    J: StructureField
    lam: float = 0.0


_PERTURBED_RE = re.compile(r"^perturbed-ball\(\s*([0-9.eE+-]+)\s*\)$")


def get_domain(name):
    """Catalog lookup: "ball", "siegel" or "perturbed-ball(lam)"."""
    key = str(name).strip()
    if key == "ball":
        return Domain("ball", ball_function(), standard_structure())
    if key == "siegel":
        return Domain("siegel", siegel_function(), standard_structure())
    m = _PERTURBED_RE.match(key)
    if m:
        lam = float(m.group(1))
        return Domain(key, ball_function(), perturbed_structure(lam), lam)
    raise UnknownLabel(f"unknown domain {name!r}; known: ball, siegel, perturbed-ball(lam)")


# ---------------------------------------------------------------------------
# forms

def dc_form(rho, J, p, v):
    """d^c_J rho(v) = -d rho(J v) at p."""
    p = np.asarray(p, dtype=float)
    Jv = np.einsum("...ij,...j->...i", J.value(p), np.asarray(v, dtype=float))
    return -np.sum(rho.gradient(p) * Jv, axis=-1)


def omega_matrix(rho, J, p):
    """Matrix W with omega(v, w) = v^T W w, omega = d d^c_J rho."""
    p = np.asarray(p, dtype=float)
    g = rho.gradient(p)
    H = rho.hessian(p)
    Jp = J.value(p)
    dJ = J.derivative(p)
    # alpha_i = -sum_j g_j J_ji ; Da[k, i] = d alpha_i / dt_k
    Da = -(np.einsum("...kj,...ji->...ki", H, Jp) + np.einsum("...j,...kji->...ki", g, dJ))
    return Da - np.swapaxes(Da, -1, -2)


def levi_matrix(rho, J, p):
    """Symmetric G with L(p, v) = v^T G v."""
    W = omega_matrix(rho, J, p)
    M = W @ J.value(np.asarray(p, dtype=float))
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def levi_form(rho, J, p, v):
    v = np.asarray(v, dtype=float)
    G = levi_matrix(rho, J, p)
    return np.einsum("...i,...ij,...j->...", v, G, v)


def levi_hermitian(rho, J, p, v):
    """Levi form in Hermitian-coefficient normalization (levi_form / 4)."""
    return 0.25 * levi_form(rho, J, p, v)


def riemannian_gR(rho, J, p, v, w):
    """Symmetrized pairing 1/2 (omega(v, J w) + omega(w, J v))."""
    W = omega_matrix(rho, J, p)
    Jp = J.value(np.asarray(p, dtype=float))
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    a = np.einsum("...i,...ij,...jk,...k->...", v, W, Jp, w)
    b = np.einsum("...i,...ij,...jk,...k->...", w, W, Jp, v)
    return 0.5 * (a + b)


def levi_via_disc(rho, J, p, v, scale=0.05, h=1e-3, **solver_kw):
    """Laplacian at 0 of rho o u for a J-holomorphic disc u through p tangent to v."""
    from .disc import steer_direction

    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    Jp = J.value(p)
    e1 = v / nv
    e2 = Jp @ e1
    # complete to a J(p)-complex frame
    basis = np.linalg.svd(np.vstack([e1, e2]))[2][2:]
    f3 = basis[0] / np.linalg.norm(basis[0])
    F = np.column_stack([e1, e2, f3, Jp @ f3])
    Finv = np.linalg.inv(F)

    def value(z):
        return Finv @ J.value(p + scale * np.einsum("ij,...j->...i", F, z)) @ F

    Jn = StructureField(value, name="levi-disc-chart")
    disc = steer_direction(Jn, np.array([1.0, 0.0, 0.0, 0.0]), r=0.5, **solver_kw).disc
    c = 0.5 * scale / nv  # d_x of the disc at 0 is c * v

    def f(zeta):
        return rho.value(p + scale * F @ disc.evaluate_real(zeta))

    lap = (f(h) + f(-h) + f(1j * h) + f(-1j * h) - 4 * f(0.0)) / h ** 2
    return float(lap / c ** 2)


# ---------------------------------------------------------------------------
# plurisubharmonicity

@dataclass
class RegionSpec:
    n: int = 1000
    radius: float = 1.0
    inner: float = 0.0
    center: tuple | None = None
    seed: int = 0


@dataclass
class PshReport:
    passed: bool
    min_margin: float
    witness_point: np.ndarray | None = None
    witness_vector: np.ndarray | None = None
    n_samples: int = 0
    warnings: list = field(default_factory=list)


def is_plurisubharmonic(rho, J, region, strict=False, chunk=2000):
    """Sample the Levi form on random (point, unit direction) pairs."""
    if isinstance(region, dict):
        region = RegionSpec(**region)
    if isinstance(region, RegionSpec):
        rng = np.random.default_rng(region.seed)
        pts = sample_ball(region.n, rng, region.radius, region.inner, region.center)
        dirs = rng.normal(size=pts.shape)
    else:
        pts, dirs = region
        rng = None
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if len(pts) == 0:
        return PshReport(True, float("inf"), warnings=["empty region"])
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    margins = np.concatenate([
        levi_form(rho, J, pts[i:i + chunk], dirs[i:i + chunk]) for i in range(0, len(pts), chunk)
    ])
    k = int(np.argmin(margins))
    worst = float(margins[k])
    ok = worst > 0 if strict else worst >= 0
    return PshReport(bool(ok), worst, pts[k], dirs[k], len(pts))


@dataclass
class BarrierFunction:
    """log|z|^2 + A |z| with A = 24 epsilon."""

    epsilon: float

    @property
    def A(self):
        return 24.0 * self.epsilon

    def as_defining_function(self):
        A = self.A

        def value(x):
            r2 = np.sum(x * x, axis=-1)
            return np.log(r2) + A * np.sqrt(r2)

        def gradient(x):
            r2 = np.sum(x * x, axis=-1)[..., None]
            return 2 * x / r2 + A * x / np.sqrt(r2)

        def hessian(x):
            r2 = np.sum(x * x, axis=-1)[..., None, None]
            r = np.sqrt(r2)
            xx = x[..., :, None] * x[..., None, :]
            I = np.eye(4)
            return 2 * (I / r2 - 2 * xx / r2 ** 2) + A * (I / r - xx / r ** 3)

        return DefiningFunction(value, gradient, hessian, name=f"barrier({self.epsilon:g})")


# ---------------------------------------------------------------------------
# boundary projection and splitting

def _newton_project(rho, p, q0, tol=1e-14, maxiter=60):
    """Batched Newton for q - p + t grad rho(q) = 0, rho(q) = 0."""
    M = len(p)
    q = q0.copy()
    g = rho.gradient(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("mi,mi->m", p - q, g) / np.einsum("mi,mi->m", g, g)
    t = np.nan_to_num(t)
    done = np.zeros(M, dtype=bool)
    scale = 1.0 + np.linalg.norm(p, axis=1)
    act = np.arange(M)
    for _ in range(maxiter):
        qa, ta, pa = q[act], t[act], p[act]
        g = rho.gradient(qa)
        F = np.concatenate([qa - pa + ta[:, None] * g, rho.value(qa)[:, None]], axis=1)
        conv = np.linalg.norm(F, axis=1) <= tol * scale[act]
        done[act[conv]] = True
        act, qa, ta, g, F = act[~conv], qa[~conv], ta[~conv], g[~conv], F[~conv]
        if len(act) == 0:
            break
        H = rho.hessian(qa)
        Jac = np.zeros((len(act), 5, 5))
        Jac[:, :4, :4] = np.eye(4) + ta[:, None, None] * H
        Jac[:, :4, 4] = g
        Jac[:, 4, :4] = g
        sing = ~(np.abs(np.linalg.det(Jac)) > 1e-300)
        Jac[sing] = np.eye(5)
        step = np.linalg.solve(Jac, -F[..., None])[..., 0]
        step[sing | ~np.isfinite(step).all(axis=1)] = 0.0
        q[act] = qa + step[:, :4]
        t[act] = ta + step[:, 4]
    ok = done & np.isfinite(q).all(axis=1) & (np.abs(rho.value(q)) <= 1e-12) & (t <= 1e-12)
    return q, ok


def boundary_project_batch(rho, points, restarts=2, seed=0, raise_on_fail=False):
    """Project many points; returns (pi, delta, ok)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    g = rho.gradient(p)
    gg = np.einsum("mi,mi->m", g, g)
    flat = gg < 1e-28
    gg = np.where(flat, 1.0, gg)
    q0 = p - (rho.value(p) / gg)[:, None] * g
    q, ok = _newton_project(rho, p, q0)
    ok &= ~flat
    rng = np.random.default_rng(seed)
    rad = np.linalg.norm(q0 - p, axis=1)
    for _ in range(restarts):
        d = rng.normal(size=p.shape)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        qr, okr = _newton_project(rho, p, q0 + 0.25 * rad[:, None] * d)
        ok &= okr & (np.linalg.norm(qr - q, axis=1) <= 1e-8)
    delta = np.linalg.norm(p - q, axis=1)
    if raise_on_fail and not ok.all():
        bad = int(np.argmin(ok))
        raise ProjectionAmbiguous(f"boundary projection failed at {p[bad]}", witness=p[bad])
    return q, delta, ok


def boundary_project(rho, p, restarts=2, seed=0):
    """Nearest boundary point pi(p) and delta(p) = |p - pi(p)|."""
    p = np.asarray(p, dtype=float)
    if abs(float(rho.value(p))) <= 1e-14:
        return p.copy(), 0.0
    q, delta, ok = boundary_project_batch(rho, p[None], restarts=restarts, seed=seed)
    if not ok[0]:
        raise ProjectionAmbiguous(f"boundary projection of {p} failed or is not unique", witness=p)
    return q[0], float(delta[0])


@dataclass
class SplitVector:
    boundary_point: np.ndarray
    tangent_part: np.ndarray
    normal_part: np.ndarray


def split_frame(rho, J, q):
    """Frames of T^J and of span{n, Jn} at boundary points q.

    Returns (T, N) with T[..., :, 0:2] an orthonormal basis of T^J_q and
    N[..., :, 0:2] = (n, J n).
    """
    q = np.asarray(q, dtype=float)
    g = rho.gradient(q)
    Jq = J.value(q)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norm < 1e-14):
        raise DegenerateStructure("gradient of the defining function vanishes", witness=q)
    n = g / norm
    Jn = np.einsum("...ij,...j->...i", Jq, n)
    # T^J = kernel of g and of g o J
    A = np.stack([g, np.einsum("...j,...ji->...i", g, Jq)], axis=-2)
    Vt = np.linalg.svd(A)[2]
    T = np.swapaxes(Vt[..., 2:, :], -1, -2)
    N = np.stack([n, Jn], axis=-1)
    return T, N


def split_projectors(rho, J, q):
    """Projectors (P_t, P_n) onto T^J_q and span{n, Jn} along each other."""
    T, N = split_frame(rho, J, q)
    M = np.concatenate([T, N], axis=-1)
    cond = np.linalg.cond(M)
    if np.any(cond > 1e8):
        raise DegenerateStructure(f"tangent/normal split ill-conditioned (cond={np.max(cond):.3e})")
    Minv = np.linalg.inv(M)
    Pt = T @ Minv[..., :2, :]
    Pn = N @ Minv[..., 2:, :]
    return Pt, Pn


def split_tangent(rho, J, q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    Pt, _ = split_projectors(rho, J, q)
    vt = Pt @ v
    return SplitVector(q, vt, v - vt)


def pseudoconvexity_constant(rho, J, points):
    """Smallest C >= 1 with |v|^2 / C <= L(p, v) <= C |v|^2 on T^J at the samples."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    T, _ = split_frame(rho, J, pts)
    G = levi_matrix(rho, J, pts)
    G2 = np.swapaxes(T, -1, -2) @ G @ T
    ev = np.linalg.eigvalsh(G2)
    lo = ev[:, 0]
    k = int(np.argmin(lo))
    if lo[k] <= 0:
        w = T[k] @ np.linalg.eigh(G2[k])[1][:, 0]
        raise NotStrictlyPseudoconvex(
            f"Levi form {lo[k]:.3e} <= 0 at {pts[k]}", witness=(pts[k], w)
        )
    return float(max(1.0, ev[:, 1].max(), 1.0 / lo.min()))


def sphere_points(n, radius=1.0, seed=None):
    """Fibonacci points on the 3-sphere (deterministic) or random if seed is given."""
    if seed is not None:
        d = np.random.default_rng(seed).normal(size=(n, 4))
        return radius * d / np.linalg.norm(d, axis=1, keepdims=True)
    i = np.arange(n) + 0.5
    # Hopf-style coordinates with low-discrepancy angles
    u = i / n
    phi1 = 2 * np.pi * ((i * 0.6180339887498949) % 1.0)
    phi2 = 2 * np.pi * ((i * 0.7548776662466927) % 1.0)
    a = np.sqrt(u)
    b = np.sqrt(1 - u)
    pts = np.column_stack([a * np.cos(phi1), a * np.sin(phi1), b * np.cos(phi2), b * np.sin(phi2)])
    return radius * pts
