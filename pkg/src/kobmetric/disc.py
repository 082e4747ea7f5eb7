"""Pseudoholomorphic discs through singular integral operators on the unit disc.

Maps u: disc -> R^4 are stored in complex form (z1, z2) as truncated expansions
``u(zeta) = sum c_mn zeta^m conj(zeta)^n``.  Writing a structure near J_st as
``J = J_st (I + q)(I - q)^{-1}`` with q conjugate-linear, ``q w = B conj(w)``,
the equation ``u_y = J(u) u_x`` becomes the Beltrami system
``d_zbar u = -B(u) conj(d_z u)``.  The Cauchy-Green operator is applied in closed
form on monomials (Pompeiu formula on the unit disc).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import (
    DegreeOverflow,
    MaxIterations,
    NewtonDivergence,
    NonContraction,
    StructureOutOfRange,
)
from .structures import cayley_inverse, conj_linear_coefficients

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 24
TABLE_TOL = 1e-8


def to_real(z):
    """C^2 values (..., 2) -> R^4 points (..., 4)."""
    z = np.asarray(z)
    out = np.empty(z.shape[:-1] + (4,))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


@lru_cache(maxsize=None)
def monomial_indices(N):
    """Exponent pairs (m, n) with m + n <= N, ordered by total degree."""
    idx = [(m, d - m) for d in range(N + 1) for m in range(d, -1, -1)]
    return np.array(idx, dtype=int)


def _index_map(N):
    return {tuple(mn): k for k, mn in enumerate(monomial_indices(N))}


def monomials(N, zeta):
    zeta = np.asarray(zeta, dtype=complex)
    mn = monomial_indices(N)
    zp = zeta[..., None] ** np.arange(N + 1)
    zb = np.conj(zeta)[..., None] ** np.arange(N + 1)
    return zp[..., mn[:, 0]] * zb[..., mn[:, 1]]


class PolarGrid:
    """Gauss-Legendre (in r) times uniform (in theta) grid on the unit disc, plus the rim."""

    def __init__(self, n_r, n_theta):
        x, w = np.polynomial.legendre.leggauss(n_r)
        r = 0.5 * (x + 1)
        wr = 0.5 * w * r
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        R, TH = np.meshgrid(r, th, indexing="ij")
        self.zeta = (R * np.exp(1j * TH)).ravel()
        self.weights = (wr[:, None] * np.full(n_theta, 2 * np.pi / n_theta)).ravel()
        self.rim = np.exp(1j * th)
        self.all_points = np.concatenate([[0.0], self.zeta, self.rim])


class OperatorTable:
    """Coefficient-space operators on the truncated monomial basis of degree N.

    ``cg`` maps degree-N coefficients to degree-(N+1) coefficients of T_CG, ``cz``
    maps them to degree-N coefficients of T_CZ = d_z T_CG.  ``dz``/``dzbar`` map
    degree N+1 to degree N.
    """

    def __init__(self, N=DEFAULT_DEGREE):
        self.N = N
        self.idx = monomial_indices(N)
        self.idx_up = monomial_indices(N + 1)
        up = _index_map(N + 1)
        low = _index_map(N)
        K, Ku = len(self.idx), len(self.idx_up)
        cg = np.zeros((Ku, K))
        cz = np.zeros((K, K))
        for k, (m, n) in enumerate(self.idx):
            cg[up[(m, n + 1)], k] += 1.0 / (n + 1)
            if m >= 1:
                cz[low[(m - 1, n + 1)], k] += m / (n + 1)
            if m >= n + 1:
                cg[up[(m - n - 1, 0)], k] -= 1.0 / (n + 1)
                if m - n - 2 >= 0:
                    cz[low[(m - n - 2, 0)], k] -= (m - n - 1) / (n + 1)
        self.cg = cg
        self.cz = cz
        self.dz = np.zeros((K, Ku))
        self.dzbar = np.zeros((K, Ku))
        for k, (m, n) in enumerate(self.idx_up):
            if m >= 1 and (m - 1, n) in low:
                self.dz[low[(m - 1, n)], k] = m
            if n >= 1 and (m, n - 1) in low:
                self.dzbar[low[(m, n - 1)], k] = n
        self.grid = PolarGrid(N + 8, 2 * N + 16)
        self._fit_setup()
        self.identity_residual = float(np.abs(self.dzbar @ self.cg - np.eye(K)).max())
        self.cz_residual = float(np.abs(self.dz @ self.cg - self.cz).max())
        if self.identity_residual > TABLE_TOL or self.cz_residual > TABLE_TOL:
            raise DegreeOverflow(f"operator table check failed for N={N}")

    def _fit_setup(self):
        # weighted least squares onto the degree-N basis, one QR per table
        V = monomials(self.N, self.grid.zeta)
        sw = np.sqrt(self.grid.weights)[:, None]
        self._Q, self._R = np.linalg.qr(V * sw)
        self._sw = sw
        self._V = V

    def project(self, values):
        """Least-squares coefficients (K, ...) of grid values (P, ...) in the degree-N basis."""
        vals = np.asarray(values, dtype=complex)
        flat = vals.reshape(len(vals), -1) * self._sw
        coef = np.linalg.solve(self._R, self._Q.conj().T @ flat)
        resid = np.sqrt(np.sum(np.abs(self._V @ coef - vals.reshape(len(vals), -1)) ** 2
                               * self.grid.weights[:, None], axis=0) / np.pi)
        return coef.reshape((-1,) + vals.shape[1:]), float(resid.max()) if resid.size else 0.0


@lru_cache(maxsize=8)
def operator_table(N=DEFAULT_DEGREE):
    return OperatorTable(N)


@dataclass
class DiscMap:
    """Truncated expansion u = sum c_mn zeta^m conj(zeta)^n with C^k coefficients."""

    degree: int
    coefficients: np.ndarray  # (K, d) complex
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.ndim == 1:
            self.coefficients = self.coefficients[:, None]
        if len(self.coefficients) != len(monomial_indices(self.degree)):
            raise DegreeOverflow("coefficient count does not match degree")

    @classmethod
    def zeros(cls, degree, dim=2):
        return cls(degree, np.zeros((len(monomial_indices(degree)), dim), dtype=complex))

    @classmethod
    def from_terms(cls, degree, terms, dim=2):
        """terms: {(m, n): coefficient vector}."""
        u = cls.zeros(degree, dim)
        imap = _index_map(degree)
        for mn, c in terms.items():
            if tuple(mn) not in imap:
                raise DegreeOverflow(f"monomial {mn} exceeds degree {degree}")
            u.coefficients[imap[tuple(mn)]] = c
        return u

    @property
    def dim(self):
        return self.coefficients.shape[1]

    def evaluate(self, zeta):
        """Complex values (..., d)."""
        return monomials(self.degree, zeta) @ self.coefficients

    def evaluate_real(self, zeta):
        return to_real(self.evaluate(zeta))

    __call__ = evaluate

    def _deriv(self, which):
        mn = monomial_indices(self.degree)
        imap = _index_map(max(self.degree - 1, 0))
        out = DiscMap.zeros(max(self.degree - 1, 0), self.dim)
        for k, (m, n) in enumerate(mn):
            p = m if which == 0 else n
            if p == 0:
                continue
            key = (m - 1, n) if which == 0 else (m, n - 1)
            out.coefficients[imap[key]] += p * self.coefficients[k]
        return out

    def d_zeta(self):
        return self._deriv(0)

    def d_zetabar(self):
        return self._deriv(1)

    def dx(self, zeta):
        return self.d_zeta().evaluate(zeta) + self.d_zetabar().evaluate(zeta)

    def dy(self, zeta):
        return 1j * (self.d_zeta().evaluate(zeta) - self.d_zetabar().evaluate(zeta))

    def derivative_at_origin(self):
        """Real 4-vector d_x u(0)."""
        return to_real(self.dx(np.array(0.0 + 0j)))

    def raised(self, degree):
        """Same map expressed in a basis of higher degree."""
        if degree < self.degree:
            raise DegreeOverflow("cannot lower degree")
        out = DiscMap.zeros(degree, self.dim)
        imap = _index_map(degree)
        for k, mn in enumerate(monomial_indices(self.degree)):
            out.coefficients[imap[tuple(mn)]] = self.coefficients[k]
        out.info = dict(self.info)
        return out

    def sup_norm(self, grid=None):
        grid = grid or operator_table(max(self.degree - 1, 1)).grid
        return float(np.abs(self.evaluate(grid.all_points)).max())

    def to_json(self):
        rows = [
            {"m": int(m), "n": int(n),
             "re": self.coefficients[k].real.tolist(), "im": self.coefficients[k].imag.tolist()}
            for k, (m, n) in enumerate(monomial_indices(self.degree))
            if np.any(self.coefficients[k] != 0)
        ]
        info = {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, list, bool))}
        return json.dumps({"degree": self.degree, "dim": self.dim, "coefficients": rows, "info": info},
                          indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        terms = {(r["m"], r["n"]): np.array(r["re"]) + 1j * np.array(r["im"]) for r in d["coefficients"]}
        u = cls.from_terms(d["degree"], terms, d["dim"])
        u.info = d.get("info", {})
        return u


# ---------------------------------------------------------------------------
# singular integral operators

def _as_scalar_disc(g, N):
    if isinstance(g, DiscMap):
        if g.degree > N:
            raise DegreeOverflow(f"degree {g.degree} exceeds table degree {N}")
        return g.raised(N) if g.degree < N else g
    raise TypeError("expected a DiscMap")


def cauchy_green(g, N=DEFAULT_DEGREE):
    """T_CG g = (1/pi) int g(zeta) / (z - zeta) dA, as a DiscMap of degree N+1."""
    g = _as_scalar_disc(g, N)
    tab = operator_table(N)
    return DiscMap(N + 1, tab.cg @ g.coefficients)


def calderon_zygmund(g, N=DEFAULT_DEGREE):
    """T_CZ g = d_z T_CG g (principal value), degree N."""
    g = _as_scalar_disc(g, N)
    tab = operator_table(N)
    return DiscMap(N, tab.cz @ g.coefficients)


def _rho_max(z, phi):
    b = np.real(np.conj(z) * np.exp(1j * phi))
    return -b + np.sqrt(b * b + 1 - abs(z) ** 2)


def cauchy_green_quadrature(g, z, order=48, epsabs=1e-13):
    """Oracle for T_CG at one point, polar coordinates centred at the singularity."""
    x, w = np.polynomial.legendre.leggauss(order)

    def inner(phi, part):
        R = _rho_max(z, phi)
        rho = 0.5 * R * (x + 1)
        e = np.exp(1j * phi)
        val = -np.exp(-1j * phi) * 0.5 * R * np.sum(w * g(z + rho * e))
        return val.real if part == 0 else val.imag

    re = integrate.quad(inner, 0, 2 * np.pi, args=(0,), epsabs=epsabs, limit=200)[0]
    im = integrate.quad(inner, 0, 2 * np.pi, args=(1,), epsabs=epsabs, limit=200)[0]
    return (re + 1j * im) / np.pi


def calderon_zygmund_quadrature(g, z, order=48, epsabs=1e-13):
    """Principal-value oracle for T_CZ = d_z T_CG at one point,
    i.e. -(1/pi) p.v. int g(zeta) / (z - zeta)^2 dA."""
    x, w = np.polynomial.legendre.leggauss(order)
    g0 = g(np.asarray(z))

    def inner(phi, part):
        R = _rho_max(z, phi)
        rho = 0.5 * R * (x + 1)
        e = np.exp(1j * phi)
        smooth = 0.5 * R * np.sum(w * (g(z + rho * e) - g0) / rho)
        val = np.exp(-2j * phi) * (smooth + g0 * np.log(R))
        return val.real if part == 0 else val.imag

    re = integrate.quad(inner, 0, 2 * np.pi, args=(0,), epsabs=epsabs, limit=200)[0]
    im = integrate.quad(inner, 0, 2 * np.pi, args=(1,), epsabs=epsabs, limit=200)[0]
    return -(re + 1j * im) / np.pi


def operator_norm_cz(N=DEFAULT_DEGREE):
    """L^2(disc) norm of T_CZ restricted to the degree-N basis.

    With the weighted QR factor sqrt(w) V = Q R of the quadrature grid, the
    operator in orthonormal coordinates is R cz R^{-1}.
    """
    tab = operator_table(N)
    R = tab._R
    M = R @ np.linalg.solve(R.T, tab.cz.T).T  # R cz R^{-1}
    return float(np.linalg.norm(M, 2))


# ---------------------------------------------------------------------------
# Beltrami coefficients and the disc equation

def beltrami_of(J, points):
    """Complex 2x2 coefficient B(x) with d_zbar u = -B(u) conj(d_z u) for J-holomorphic u."""
    q = cayley_inverse(J.value(points))
    return conj_linear_coefficients(q)


def _beltrami_term(J, tab, u, check=True):
    grid = tab.grid
    z = u.evaluate(grid.zeta)
    dz = u.d_zeta().evaluate(grid.zeta)
    B = beltrami_of(J, to_real(z))
    if check:
        nb = np.linalg.norm(B, ord=2, axis=(-2, -1)).max()
        if nb >= 1:
            raise StructureOutOfRange(f"|q_J| = {nb:.3f} >= 1 along the disc")
    return -np.einsum("pij,pj->pi", B, np.conj(dz))


def phi_operator(J, u, N=DEFAULT_DEGREE):
    """u - T_CG(-B(u) conj(d_z u)) for the Beltrami term of the J-holomorphy equation."""
    tab = operator_table(N)
    vals = _beltrami_term(J, tab, u)
    coef, _ = tab.project(vals)
    tg = DiscMap(N + 1, tab.cg @ coef)
    base = u.raised(N + 1) if u.degree <= N + 1 else u
    return DiscMap(base.degree, base.coefficients - tg.raised(base.degree).coefficients)


def holomorphy_residual(J, u, points=None):
    """sup over sample points of |u_y - J(u) u_x| (real form)."""
    if points is None:
        points = operator_table(DEFAULT_DEGREE).grid.all_points
    ux = to_real(u.dx(points))
    uy = to_real(u.dy(points))
    Ju = J.value(u.evaluate_real(points))
    r = uy - np.einsum("pij,pj->pi", Ju, ux)
    return float(np.linalg.norm(r, axis=-1).max())


def seed_disc(w, higher=None, N=DEFAULT_DEGREE):
    """Holomorphic seed h(zeta) = zeta w + sum_k zeta^(k+2) higher[k]; w is a real 4-vector."""
    terms = {(1, 0): to_complex(np.asarray(w, dtype=float))}
    for k, c in enumerate(higher or []):
        terms[(k + 2, 0)] = to_complex(np.asarray(c, dtype=float))
    return DiscMap.from_terms(N + 1, terms)


def solve_disc(J, w, higher=None, N=DEFAULT_DEGREE, tol=1e-10, maxiter=200, max_ratio=0.5,
               residual_tol=1e-6, enforce=True):
    """J-holomorphic disc Phi_J^{-1}(h) through 0 with seed h = zeta w (+ higher terms).

    Picard iteration u <- h + T_CG(beltrami term of u) - const, with u(0) = 0.
    """
    tab = operator_table(N)
    h = seed_disc(w, higher, N)
    u = h
    updates = []
    ratios = []
    proj_res = 0.0
    hnorm = max(np.abs(h.coefficients).sum(), 1e-300)
    for it in range(1, maxiter + 1):
        vals = _beltrami_term(J, tab, u)
        coef, proj_res = tab.project(vals)
        tg = tab.cg @ coef
        tg0 = tg[0].copy()  # constant term = value at 0
        new = h.coefficients + tg
        new[0] -= tg0
        unew = DiscMap(N + 1, new)
        upd = float(np.abs(unew.evaluate(tab.grid.all_points) - u.evaluate(tab.grid.all_points)).max())
        updates.append(upd)
        if len(updates) >= 2 and updates[-2] > 1e-11 * hnorm and upd > 1e-11 * hnorm:
            ratios.append(upd / updates[-2])
        u = unew
        if upd <= tol * max(hnorm, 1.0):
            break
        if len(updates) >= 4 and all(updates[-k] > updates[-k - 1] for k in (1, 2, 3)):
            raise NonContraction(f"Picard updates growing: {updates[-4:]}", witness=updates)
    else:
        raise MaxIterations(f"no convergence in {maxiter} iterations (last update {updates[-1]:.3e})",
                            witness=updates)
    ratio = max(ratios) if ratios else 0.0
    res = holomorphy_residual(J, u, tab.grid.all_points)
    u.info = {"iterations": it, "updates": updates, "contraction_ratio": ratio,
              "residual": res, "projection_residual": proj_res}
    if enforce and ratio > max_ratio:
        raise NonContraction(f"measured contraction ratio {ratio:.3f} > {max_ratio}", witness=updates)
    if enforce and res > residual_tol:
        log.warning("holomorphy residual %.3e exceeds %.1e", res, residual_tol)
    return u


@dataclass
class SteerResult:
    w: np.ndarray
    r: float
    disc: DiscMap
    alignment: float


def _steer_to(J, target, higher, N, w0=None, jac=None, tol=1e-10, maxiter=30, fd=1e-6):
    """Chord-Newton for w with d_x solve_disc(J, w)(0) = target; returns (w, disc, jac)."""
    w = target.copy() if w0 is None else w0.copy()
    disc = solve_disc(J, w, higher, N, enforce=False)
    F = disc.derivative_at_origin() - target
    if jac is None:
        jac = np.empty((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = fd
            jac[:, k] = (solve_disc(J, w + e, higher, N, enforce=False).derivative_at_origin()
                         - solve_disc(J, w - e, higher, N, enforce=False).derivative_at_origin()) / (2 * fd)
    for _ in range(maxiter):
        if np.linalg.norm(F) <= tol * max(1.0, np.linalg.norm(target)):
            return w, disc, jac
        w = w - np.linalg.solve(jac, F)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > 1e3:
            raise NewtonDivergence("steering iteration diverged")
        disc = solve_disc(J, w, higher, N, enforce=False)
        Fn = disc.derivative_at_origin() - target
        if np.linalg.norm(Fn) > 2 * np.linalg.norm(F) + 1e-14:
            raise NewtonDivergence(f"steering residual grew to {np.linalg.norm(Fn):.3e}")
        F = Fn
    raise NewtonDivergence("steering did not converge")


def steer_direction(J, v, r=None, higher=None, N=DEFAULT_DEGREE, r_tol=1e-8, maxiter=20):
    """Seed w such that the solved disc has d_x u(0) = r v/|v|.

    With ``r`` given the target is hit directly; otherwise r is maximised subject
    to |w| <= 1 by a secant solve of |w(r)| = 1.
    """
    v = np.asarray(v, dtype=float)
    vhat = v / np.linalg.norm(v)
    if r is not None:
        w, disc, _ = _steer_to(J, r * vhat, higher, N)
    else:
        r0 = 1.0
        w, disc, jac = _steer_to(J, vhat, higher, N)
        f0 = np.linalg.norm(w) - 1.0
        r1 = 1.0 / np.linalg.norm(w)
        for _ in range(maxiter):
            w, disc, jac = _steer_to(J, r1 * vhat, higher, N, w0=w * r1 / r0, jac=jac)
            f1 = np.linalg.norm(w) - 1.0
            if abs(f1) <= r_tol or f1 == f0:
                break
            r0, r1, f0 = r1, r1 - f1 * (r1 - r0) / (f1 - f0), f1
        else:
            raise NewtonDivergence("could not saturate |w| = 1")
        r = r1
        if np.linalg.norm(w) > 1.0:
            # stay admissible: shrink by the (tiny) overshoot
            r = r * (1 - 2 * r_tol)
            w, disc, _ = _steer_to(J, r * vhat, higher, N, w0=w, jac=jac)
    d = disc.derivative_at_origin()
    cosang = np.clip(d @ vhat / np.linalg.norm(d), -1, 1)
    return SteerResult(w, float(r), disc, float(np.arccos(cosang)))
