"""Coordinate pipeline around a boundary point.

A chart is the composite ``Psi = Lambda o phi o T o Phi o L^{-1}``:

* ``L``       affine frame at the boundary projection pi(p), adapted to J(pi(p)),
              in which rho = -2 Re z1 + (second order) and rho_{2 2bar} = 1;
* ``Phi``     removal of the harmonic term, (z1 - rho_22 z2^2, z2);
* ``T``       translation sending the image of p to 0;
* ``phi``     linear map with phi_* J(0) = J_st;
* ``Lambda``  anisotropic dilation (z1/(z1+2d), sqrt(2d) z2/(z1+2d)).

The cutoff extension ``J' = J_st (I + chi q)(I - chi q)^{-1}`` is applied in the
coordinates after ``phi``, with chi read off in Phi-coordinates, so that the far
field is J_st exactly and survives the dilation unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CutoffOverflow,
    JacobianSingular,
    NormalFormFailure,
    NotStrictlyPseudoconvex,
    SamplingFailure,
)
from .geometry import boundary_project, split_frame
from .structures import (
    IDENTITY,
    J_ST,
    StructureField,
    c1_deviation,
    cayley,
    cayley_inverse,
    sample_ball,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
DEFAULT_ALPHA_PRIME = 0.25


# ---------------------------------------------------------------------------
# diffeomorphisms

def complex_to_real_jacobian(Jc):
    """Real 4x4 matrix of a complex-linear map given by (..., 2, 2) complex entries."""
    Jc = np.asarray(Jc, dtype=complex)
    out = np.zeros(Jc.shape[:-2] + (4, 4))
    for j in range(2):
        for k in range(2):
            a, b = Jc[..., j, k].real, Jc[..., j, k].imag
            out[..., 2 * j, 2 * k] = a
            out[..., 2 * j, 2 * k + 1] = -b
            out[..., 2 * j + 1, 2 * k] = b
            out[..., 2 * j + 1, 2 * k + 1] = a
    return out


def complexify(M):
    """Matrix of a real endomorphism in the basis (z1, conj z1, z2, conj z2)."""
    C = np.array([[1, 1j, 0, 0], [1, -1j, 0, 0], [0, 0, 1, 1j], [0, 0, 1, -1j]])
    return C @ np.asarray(M) @ np.linalg.inv(C)


def _z(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] + 1j * x[..., 1], x[..., 2] + 1j * x[..., 3]


def _x(z1, z2):
    return np.stack([z1.real, z1.imag, z2.real, z2.imag], axis=-1)


class Diffeo:
    """A diffeomorphism of R^4 with inverse and Jacobian (finite differences if absent)."""

    def __init__(self, forward, inverse, jacobian=None, name="diffeo", params=None, fd_step=1e-6):
        self._forward = forward
        self._inverse = inverse
        self._jacobian = jacobian
        self.name = name
        self.params = params or {}
        self.fd_step = fd_step

    def forward(self, x):
        return self._forward(np.asarray(x, dtype=float))

    __call__ = forward

    def inverse(self, y):
        return self._inverse(np.asarray(y, dtype=float))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self._jacobian is not None:
            return self._jacobian(x)
        h = self.fd_step
        out = np.empty(x.shape + (4,))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            out[..., :, k] = (self._forward(x + e) - self._forward(x - e)) / (2 * h)
        return out

    def then(self, other):
        """other o self."""
        return Diffeo(
            lambda x: other.forward(self.forward(x)),
            lambda y: self.inverse(other.inverse(y)),
            lambda x: other.jacobian(self.forward(x)) @ self.jacobian(x),
            name=f"{other.name}o{self.name}",
        )

    def __repr__(self):
        return f"Diffeo({self.name!r})"


def identity_diffeo():
    return Diffeo(lambda x: x.copy(), lambda y: y.copy(),
                  lambda x: np.broadcast_to(IDENTITY, x.shape + (4,)).copy(), name="id")


def affine_chart(origin, frame):
    """x -> F^{-1}(x - origin); the inverse is y -> origin + F y."""
    origin = np.asarray(origin, dtype=float)
    F = np.asarray(frame, dtype=float)
    Finv = np.linalg.inv(F)
    return Diffeo(
        lambda x: (x - origin) @ Finv.T,
        lambda y: origin + y @ F.T,
        lambda x: np.broadcast_to(Finv, x.shape + (4,)).copy(),
        name="L",
        params={"origin": origin.tolist(), "frame": F.tolist()},
    )


def linear_diffeo(G, name="phi"):
    """x -> G^{-1} x."""
    G = np.asarray(G, dtype=float)
    Ginv = np.linalg.inv(G)
    return Diffeo(
        lambda x: x @ Ginv.T,
        lambda y: y @ G.T,
        lambda x: np.broadcast_to(Ginv, x.shape + (4,)).copy(),
        name=name,
        params={"matrix": Ginv.tolist()},
    )


def translation(w):
    """z -> z - w for a complex 2-vector w."""
    w = np.asarray(w, dtype=complex)
    shift = _x(w[0], w[1])
    return Diffeo(
        lambda x: x - shift,
        lambda y: y + shift,
        lambda x: np.broadcast_to(IDENTITY, x.shape + (4,)).copy(),
        name="T",
        params={"shift": [[w[0].real, w[0].imag], [w[1].real, w[1].imag]]},
    )


def harmonic_removal(rho22):
    """Phi(z1, z2) = (z1 - rho22 z2^2, z2)."""
    a = complex(rho22)

    def forward(x):
        z1, z2 = _z(x)
        return _x(z1 - a * z2 ** 2, z2)

    def inverse(y):
        w1, w2 = _z(y)
        return _x(w1 + a * w2 ** 2, w2)

    def jacobian(x):
        z1, z2 = _z(x)
        Jc = np.zeros(np.shape(z1) + (2, 2), dtype=complex)
        Jc[..., 0, 0] = 1
        Jc[..., 0, 1] = -2 * a * z2
        Jc[..., 1, 1] = 1
        return complex_to_real_jacobian(Jc)

    return Diffeo(forward, inverse, jacobian, name="Phi", params={"rho22": [a.real, a.imag]})


def anisotropic_dilation(delta):
    """Lambda_delta(z) = (z1/(z1+2 delta), sqrt(2 delta) z2/(z1+2 delta))."""
    d = float(delta)
    s = np.sqrt(2 * d)

    def forward(x):
        z1, z2 = _z(x)
        den = z1 + 2 * d
        if np.any(np.abs(den) < 1e-300):
            raise JacobianSingular("Lambda is singular at z1 = -2 delta")
        return _x(z1 / den, s * z2 / den)

    def inverse(y):
        w1, w2 = _z(y)
        den = 1 - w1
        if np.any(np.abs(den) < 1e-300):
            raise JacobianSingular("Lambda^{-1} is singular at w1 = 1")
        return _x(2 * d * w1 / den, s * w2 / den)

    def jacobian(x):
        z1, z2 = _z(x)
        den = z1 + 2 * d
        if np.any(np.abs(den) < 1e-300):
            raise JacobianSingular("Lambda is singular at z1 = -2 delta")
        Jc = np.zeros(np.shape(z1) + (2, 2), dtype=complex)
        Jc[..., 0, 0] = 2 * d / den ** 2
        Jc[..., 1, 0] = -s * z2 / den ** 2
        Jc[..., 1, 1] = s / den
        return complex_to_real_jacobian(Jc)

    return Diffeo(forward, inverse, jacobian, name="Lambda", params={"delta": d})


def pushforward_structure(J, f, name=None, singular_tol=1e-14):
    """f_* J (q) = df J(f^{-1} q) df^{-1}."""

    def value(y):
        x = f.inverse(y)
        D = f.jacobian(x)
        det = np.linalg.det(D)
        if np.any(np.abs(det) < singular_tol):
            raise JacobianSingular(f"Jacobian of {f.name} is singular")
        return D @ J.value(x) @ np.linalg.inv(D)

    return StructureField(value, name=name or f"{f.name}_*{J.name}")


# ---------------------------------------------------------------------------
# normal form data

def complex_hessian(H):
    """(rho_jk, rho_jkbar) from a real Hessian: rho_jk = 1/2 d^2/dz_j dz_k, rho_jkbar = d^2/dz_j dzbar_k."""
    H = np.asarray(H, dtype=float)
    A = np.zeros((2, 2), dtype=complex)
    Bh = np.zeros((2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            xx = H[2 * j, 2 * k]
            yy = H[2 * j + 1, 2 * k + 1]
            xy = H[2 * j, 2 * k + 1]
            yx = H[2 * j + 1, 2 * k]
            A[j, k] = 0.5 * 0.25 * (xx - yy - 1j * (xy + yx))
            Bh[j, k] = 0.25 * (xx + yy + 1j * (xy - yx))
    return A, Bh


def quintic_step(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class Polydisc:
    """Q_(delta, alpha) = {|z1| < delta^(1-alpha), |z2| < c delta^((1-alpha)/2)}."""

    delta: float
    alpha: float
    c: float

    @property
    def r1(self):
        return self.delta ** (1 - self.alpha)

    @property
    def r2(self):
        return self.c * self.delta ** ((1 - self.alpha) / 2)

    def contains(self, x):
        z1, z2 = _z(x)
        return (np.abs(z1) < self.r1) & (np.abs(z2) < self.r2)


def cutoff(inner, outer):
    """chi = 1 on the inner polydisc, 0 outside the outer one (tensor quintic smoothstep)."""

    def chi(x):
        z1, z2 = _z(x)
        s1 = 1 - quintic_step((np.abs(z1) - inner.r1) / (outer.r1 - inner.r1))
        s2 = 1 - quintic_step((np.abs(z2) - inner.r2) / (outer.r2 - inner.r2))
        return s1 * s2

    return chi


def extend_structure(J, delta, alpha=DEFAULT_ALPHA, alpha_prime=DEFAULT_ALPHA_PRIME, c=1.0,
                     to_model=None, name="J'"):
    """J' = J_st (I + chi q)(I - chi q)^{-1} with q = (J + J_st)^{-1}(J - J_st).

    ``to_model`` maps the coordinates of J to the coordinates in which the
    polydiscs are centred (identity by default).
    """
    if not 0 < alpha < alpha_prime < 1:
        raise ValueError("need 0 < alpha < alpha_prime < 1")
    inner = Polydisc(delta, alpha, c)
    outer = Polydisc(delta, alpha_prime, c)
    chi = cutoff(inner, outer)
    to_model = to_model or (lambda x: x)

    def value(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 4)
        w = chi(to_model(flat))
        out = np.broadcast_to(J_ST, (len(flat), 4, 4)).copy()
        act = w > 0
        if np.any(act):
            q = cayley_inverse(J.value(flat[act]))
            nq = np.linalg.norm(q, ord=2, axis=(-2, -1))
            if np.any(nq >= 1):
                raise CutoffOverflow(f"|q| = {np.max(nq):.3f} >= 1 inside the cutoff region")
            out[act] = cayley(w[act][:, None, None] * q)
        return out.reshape(x.shape[:-1] + (4, 4))

    ext = StructureField(value, name=name)
    ext.chi = chi
    ext.inner = inner
    ext.outer = outer
    return ext


# ---------------------------------------------------------------------------
# charts

@dataclass
class FittedConstants:
    C: float = float("nan")
    s: float = float("nan")
    beta: float = 1.0
    r: float = float("nan")
    c_localization: float = 2.0

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def fit_power_law(x, y):
    """Least-squares fit y = C x^s in log-log; returns (C, s, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    lx, ly = np.log(x), np.log(np.maximum(y, 1e-300))
    s, logC = np.polyfit(lx, ly, 1)
    pred = logC + s * lx
    ss_res = np.sum((ly - pred) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(logC)), float(s), float(r2)


@dataclass
class NormalizationChart:
    base_point: np.ndarray
    boundary_point: np.ndarray
    delta: float
    alpha: float
    alpha_prime: float
    stages: list
    rho_coeffs: dict
    rho: object
    J: StructureField
    model_structure: StructureField  # structure in the current last-stage coordinates
    image_point: np.ndarray  # image of p in the current last-stage coordinates
    c_polydisc: float = float("nan")
    delta_r: float = float("nan")
    extended: StructureField | None = None
    pushed_structure: StructureField | None = None
    constants: FittedConstants = field(default_factory=FittedConstants)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def stage_names(self):
        return [s.name for s in self.stages]

    def to_stage(self, x, upto):
        """Apply stages up to and including ``upto``."""
        y = np.asarray(x, dtype=float)
        for s in self.stages:
            y = s.forward(y)
            if s.name == upto:
                return y
        raise KeyError(upto)

    def psi(self, x):
        y = np.asarray(x, dtype=float)
        for s in self.stages:
            y = s.forward(y)
        return y

    def psi_inverse(self, w):
        y = np.asarray(w, dtype=float)
        for s in reversed(self.stages):
            y = s.inverse(y)
        return y

    def psi_jacobian(self, x):
        y = np.asarray(x, dtype=float)
        D = np.broadcast_to(IDENTITY, y.shape + (4,)).copy()
        for s in self.stages:
            D = s.jacobian(y) @ D
            y = s.forward(y)
        return D

    def model_rho(self, upto=None):
        """rho expressed in the coordinates after stage ``upto`` (default: last stage)."""
        names = self.stage_names()
        k = len(names) if upto is None else names.index(upto) + 1
        stages = self.stages[:k]

        def value(y):
            x = np.asarray(y, dtype=float)
            for s in reversed(stages):
                x = s.inverse(x)
            return self.rho.value(x)

        return value

    def to_json(self):
        return json.dumps({
            "base_point": np.asarray(self.base_point).tolist(),
            "boundary_point": np.asarray(self.boundary_point).tolist(),
            "delta": self.delta,
            "delta_r": self.delta_r,
            "alpha": self.alpha,
            "alpha_prime": self.alpha_prime,
            "c_polydisc": self.c_polydisc,
            "stages": [{"name": s.name, "params": s.params} for s in self.stages],
            "rho_coeffs": {k: [[complex(v).real, complex(v).imag] for v in np.ravel(val)]
                           for k, val in self.rho_coeffs.items()},
            "constants": self.constants.as_dict(),
        }, indent=1)


def _adapted_frame(rho, J, q):
    """Columns f1, f2 = J f1, f3, f4 = J f3 with grad rho . f1 = -2, f2, f3, f4 tangent."""
    g = rho.gradient(q)
    Jq = J.value(q)
    N = np.linalg.norm(g)
    n = g / N
    Jn = Jq @ n
    gj = g @ Jn
    xy = np.linalg.solve(np.array([[N, gj], [gj, -N]]), np.array([-2.0, 0.0]))
    f1 = xy[0] * n + xy[1] * Jn
    T, _ = split_frame(rho, J, q)
    f3 = T[:, 0]
    return np.column_stack([f1, Jq @ f1, f3, Jq @ f3])


def normalize_chart(rho, J, p, alpha=DEFAULT_ALPHA, alpha_prime=DEFAULT_ALPHA_PRIME, fit_tol=1e-6):
    """First stage: affine chart at pi(p) with rho = -2 Re z1 + O(2), rho_{2 2bar} = 1, J(0) = J_st."""
    if not 0 < alpha < alpha_prime < 1:
        raise ValueError("need 0 < alpha < alpha_prime < 1")
    p = np.asarray(p, dtype=float)
    q, delta = boundary_project(rho, p)
    F = _adapted_frame(rho, J, q)
    H = F.T @ rho.hessian(q) @ F
    _, Bh = complex_hessian(H)
    r22 = Bh[1, 1].real
    if r22 <= 0:
        raise NotStrictlyPseudoconvex(f"rho_(2,2bar) = {r22:.3e} <= 0 at {q}", witness=q)
    F[:, 2:] /= np.sqrt(r22)
    H = F.T @ rho.hessian(q) @ F
    A, Bh = complex_hessian(H)
    L = affine_chart(q, F)
    # check the quadratic model on a small sphere
    rng = np.random.default_rng(0)
    h = 1e-3
    ys = rng.normal(size=(32, 4))
    ys *= h / np.linalg.norm(ys, axis=1, keepdims=True)
    grad = F.T @ rho.gradient(q)
    model = ys @ grad + 0.5 * np.einsum("mi,ij,mj->m", ys, H, ys)
    resid = np.abs(rho.value(L.inverse(ys)) - model).max() / h ** 2
    if resid > fit_tol * 1e3 or not np.allclose(grad, [-2, 0, 0, 0], atol=1e-8):
        raise NormalFormFailure(f"second-order fit residual {resid:.3e} at {q}")
    Jy = pushforward_structure(J, L, name="L_*J")
    return NormalizationChart(
        base_point=p,
        boundary_point=q,
        delta=float(delta),
        alpha=alpha,
        alpha_prime=alpha_prime,
        stages=[L],
        rho_coeffs={"rho_jk": A, "rho_jkbar": Bh, "fit_residual": np.array(resid)},
        rho=rho,
        J=J,
        model_structure=Jy,
        image_point=L.forward(p),
    )


def remove_harmonic(chart):
    a = chart.rho_coeffs["rho_jk"][1, 1]
    Phi = harmonic_removal(a)
    return replace(
        chart,
        stages=chart.stages + [Phi],
        model_structure=pushforward_structure(chart.model_structure, Phi, name="Phi_*J"),
        image_point=Phi.forward(chart.image_point),
    )


def polydisc_constant(chart, alpha=None, n1=24, n2=32, tol=1e-6):
    """Smallest c with the side face {|z2| = c delta^((1-alpha)/2), |z1| <= delta^(1-alpha)}
    outside D (rho >= 0 there), in Phi-coordinates."""
    alpha = chart.alpha if alpha is None else alpha
    rho_phi = chart.model_rho("Phi")
    d = chart.delta
    a = d ** (1 - alpha)
    b = d ** ((1 - alpha) / 2)
    r = a * np.sqrt(np.linspace(0, 1, n1))
    th = np.linspace(0, 2 * np.pi, 2 * n1, endpoint=False)
    z1 = (r[:, None] * np.exp(1j * th[None, :])).ravel()
    ph = np.exp(1j * np.linspace(0, 2 * np.pi, n2, endpoint=False))

    def ok(c):
        Z1, Z2 = np.meshgrid(z1, c * b * ph, indexing="ij")
        return rho_phi(_x(Z1, Z2)).min() >= 0

    hi = 1.0
    while not ok(hi):
        hi *= 2
        if hi > 1e3:
            raise SamplingFailure("no polydisc constant found")
    lo = 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def dilate_anisotropic(chart, delta=None):
    """Append T, phi, the cutoff extension and Lambda; sets the normalized structure."""
    if chart.stage_names()[-1] != "Phi":
        chart = remove_harmonic(chart)
    w = chart.image_point
    wp = np.array([w[0] + 1j * w[1], w[2] + 1j * w[3]])
    dr = float(wp[0].real) if delta is None else float(delta)
    T = translation(wp)
    JT = pushforward_structure(chart.model_structure, T, name="T_*J")
    J0 = JT.value(np.zeros(4))
    e1, e3 = np.eye(4)[0], np.eye(4)[2]
    G = np.column_stack([e1, J0 @ e1, e3, J0 @ e3])
    phi = linear_diffeo(G)
    Jphi = pushforward_structure(JT, phi, name="phi_*J")
    c = polydisc_constant(chart)
    shift = _x(wp[0:1], wp[1:2])[0]
    ext = extend_structure(Jphi, chart.delta, chart.alpha, chart.alpha_prime, c,
                           to_model=lambda x: x @ G.T + shift)
    Lam = anisotropic_dilation(dr)

    def value(y):
        y = np.asarray(y, dtype=float)
        out = np.broadcast_to(J_ST, y.shape[:-1] + (4, 4)).copy()
        far = np.abs(1 - (y[..., 0] + 1j * y[..., 1])) < 1e-12
        if np.all(far):
            return out
        yy = np.where(far[..., None], 0.0, y)
        x = Lam.inverse(yy)
        D = Lam.jacobian(x)
        val = D @ ext.value(x) @ np.linalg.inv(D)
        return np.where(far[..., None, None], out, val)

    tilde = StructureField(value, name="normalized")
    return replace(
        chart,
        stages=chart.stages + [T, phi, Lam],
        model_structure=tilde,
        image_point=Lam.forward(phi.forward(T.forward(chart.image_point))),
        c_polydisc=c,
        delta_r=dr,
        extended=ext,
        pushed_structure=tilde,
    )


def build_chart(rho, J, p, alpha=DEFAULT_ALPHA, alpha_prime=DEFAULT_ALPHA_PRIME):
    """Full pipeline: normalize_chart, remove_harmonic, dilate_anisotropic."""
    return dilate_anisotropic(remove_harmonic(normalize_chart(rho, J, p, alpha, alpha_prime)))


def chart_inner_fraction(chart, points_final):
    """Fraction of final-coordinate points whose preimage lies where chi = 1."""
    x = np.asarray(points_final, dtype=float)
    names = chart.stage_names()
    y = x
    for s in reversed(chart.stages[names.index("T"):]):
        y = s.inverse(y)
    return float(np.mean(chart.extended.inner.contains(y)))


# ---------------------------------------------------------------------------
# sandwich

@dataclass
class SandwichResult:
    r_in: float
    r_out: float
    face_min: float
    face_max: float
    n_boundary: int
    n_face: int

    def __iter__(self):
        return iter((self.r_in, self.r_out))


def ball_sandwich(chart, n=4000, seed=0, alpha=None):
    """Sampled min/max of |Psi| over Phi(dD) inside Q (r_in, r_out) and over the face |z1| = delta^(1-alpha)."""
    alpha = chart.alpha if alpha is None else alpha
    rho_phi = chart.model_rho("Phi")
    names = chart.stage_names()
    after = chart.stages[names.index("Phi") + 1:]

    def tail(z):
        for s in after:
            z = s.forward(z)
        return z

    rng = np.random.default_rng(seed)
    Q = Polydisc(chart.delta, alpha, chart.c_polydisc)
    a, b = Q.r1, Q.r2
    # boundary piece: solve rho = 0 for Re z1 by bisection
    z2 = b * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))
    y1 = rng.uniform(-a, a, size=n)
    lo = np.full(n, -a)
    hi = np.full(n, a)
    flo = rho_phi(_x(lo + 1j * y1, z2))
    fhi = rho_phi(_x(hi + 1j * y1, z2))
    good = np.sign(flo) != np.sign(fhi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = rho_phi(_x(mid + 1j * y1, z2))
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    z1 = 0.5 * (lo + hi) + 1j * y1
    good &= np.abs(z1) < a
    if good.sum() < 10:
        raise SamplingFailure(f"only {int(good.sum())} boundary samples inside the polydisc")
    r = np.linalg.norm(tail(_x(z1[good], z2[good])), axis=-1)
    # cutoff face
    zf1 = a * np.exp(2j * np.pi * rng.uniform(size=n))
    zf2 = b * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))
    xf = _x(zf1, zf2)
    inside = rho_phi(xf) < 0
    if inside.any():
        rf = np.linalg.norm(tail(xf[inside]), axis=-1)
        fmin, fmax = float(rf.min()), float(rf.max())
    else:
        fmin = fmax = float("nan")
    return SandwichResult(float(r.min()), float(r.max()), fmin, fmax, int(good.sum()), int(inside.sum()))


def siegel_identity_residual(chart, points):
    """max | |Psi(z)|^2 - 1 - 2 d rho(z)/|z1 + d|^2 | for Phi-coordinate points z."""
    rho_phi = chart.model_rho("Phi")
    names = chart.stage_names()
    y = np.asarray(points, dtype=float)
    for s in chart.stages[names.index("Phi") + 1:]:
        y = s.forward(y)
    z1, _ = _z(points)
    d = chart.delta_r
    lhs = np.sum(y * y, axis=-1) - 1
    rhs = 2 * d * rho_phi(points) / np.abs(z1 + d) ** 2
    return float(np.abs(lhs - rhs).max())


def structure_deviation(J, region=None, radius=2.0, n=400, seed=0):
    """Sampled C^1 deviation of J from J_st over B(0, radius) (or given points)."""
    if region is None:
        pts = np.vstack([np.zeros((1, 4)), sample_ball(n, seed, radius=radius)])
    else:
        pts = np.asarray(region, dtype=float)
    return c1_deviation(J, pts)
