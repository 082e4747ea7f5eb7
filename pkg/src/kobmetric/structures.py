"""Almost complex structures on R^4.

Points are arrays of shape ``(..., 4)`` read as ``(t1, t2, t3, t4)`` with
``z1 = t1 + i t2`` and ``z2 = t3 + i t4``.  Structures return ``(..., 4, 4)``
real matrices; derivatives return ``(..., 4, 4, 4)`` with the differentiation
index first, i.e. ``D[..., k, :, :] = dJ/dt_k``.
"""

from __future__ import annotations

import numpy as np

from .errors import DerivativeUnavailable, DegenerateStructure

J_ST = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
)
IDENTITY = np.eye(4)

FD_STEP = 1e-5


class StructureField:
    """A smooth field z -> J(z) with J^2 = -Id.

    ``derivative`` may be supplied analytically; otherwise central differences
    with step ``fd_step`` are used unless ``allow_fd`` is False.
    """

    def __init__(self, value, derivative=None, c1_norm_hint=None, fd_step=FD_STEP,
                 allow_fd=True, name="structure"):
        self._value = value
        self._derivative = derivative
        self.c1_norm_hint = c1_norm_hint
        self.fd_step = fd_step
        self.allow_fd = allow_fd
        self.name = name

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._value(x), dtype=float)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self._derivative is not None:
            return np.asarray(self._derivative(x), dtype=float)
        if not self.allow_fd:
            raise DerivativeUnavailable(f"{self.name}: no derivative and finite differencing disabled")
        h = self.fd_step
        out = np.empty(x.shape[:-1] + (4, 4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            out[..., k, :, :] = (self._value(x + e) - self._value(x - e)) / (2 * h)
        return out

    def __repr__(self):
        return f"StructureField({self.name!r})"


def _const(mat):
    def value(x):
        return np.broadcast_to(mat, np.shape(x)[:-1] + (4, 4)).copy()

    def derivative(x):
        return np.zeros(np.shape(x)[:-1] + (4, 4, 4))

    return value, derivative


def standard_structure():
    value, derivative = _const(J_ST)
    return StructureField(value, derivative, c1_norm_hint=0.0, name="J_st")


def constant_structure(mat, name="constant"):
    mat = np.asarray(mat, dtype=float)
    value, derivative = _const(mat)
    return StructureField(value, derivative, name=name)


def conj_linear_matrix(B):
    """Real 4x4 matrix of the map w -> B conj(w) on C^2, for complex ``B`` of shape (..., 2, 2)."""
    B = np.asarray(B, dtype=complex)
    out = np.zeros(B.shape[:-2] + (4, 4))
    for j in range(2):
        for k in range(2):
            a, b = B[..., j, k].real, B[..., j, k].imag
            out[..., 2 * j, 2 * k] = a
            out[..., 2 * j, 2 * k + 1] = b
            out[..., 2 * j + 1, 2 * k] = b
            out[..., 2 * j + 1, 2 * k + 1] = -a
    return out


def conj_linear_coefficients(Q):
    """Inverse of :func:`conj_linear_matrix`, ignoring any complex-linear part."""
    Q = np.asarray(Q, dtype=float)
    B = np.zeros(Q.shape[:-2] + (2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            a = 0.5 * (Q[..., 2 * j, 2 * k] - Q[..., 2 * j + 1, 2 * k + 1])
            b = 0.5 * (Q[..., 2 * j, 2 * k + 1] + Q[..., 2 * j + 1, 2 * k])
            B[..., j, k] = a + 1j * b
    return B


def cayley(Q):
    """J = J_st (I + Q)(I - Q)^{-1}; a complex structure whenever Q anticommutes with J_st."""
    Q = np.asarray(Q, dtype=float)
    return J_ST @ (IDENTITY + Q) @ np.linalg.inv(IDENTITY - Q)


def cayley_inverse(J):
    """q = (J + J_st)^{-1} (J - J_st), so that J = cayley(q)."""
    J = np.asarray(J, dtype=float)
    return np.linalg.solve(J + J_ST, J - J_ST)


def diagonal_structure(mu1, mu2, name="diagonal"):
    """Diagonal structure from two complex Beltrami coefficients of the point.

    Each z_l-plane carries the block J_st (I+Q_l)(I-Q_l)^{-1} with Q_l: w -> mu_l conj(w).
    """

    def value(x):
        m1 = np.asarray(mu1(x), dtype=complex)
        m2 = np.asarray(mu2(x), dtype=complex)
        B = np.zeros(np.shape(x)[:-1] + (2, 2), dtype=complex)
        B[..., 0, 0] = m1
        B[..., 1, 1] = m2
        return cayley(conj_linear_matrix(B))

    return StructureField(value, name=name)


def beltrami_structure(field, name="beltrami"):
    """Structure from a general complex 2x2 Beltrami field ``field(x) -> (..., 2, 2)``."""

    def value(x):
        return cayley(conj_linear_matrix(field(x)))

    return StructureField(value, name=name)


def sample_ball(n, rng, radius=1.0, inner=0.0, center=None):
    """Uniform samples in the shell inner <= |x| <= radius of R^4."""
    rng = np.random.default_rng(rng)
    d = rng.normal(size=(n, 4))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    u = rng.uniform(size=n)
    r = (inner ** 4 + u * (radius ** 4 - inner ** 4)) ** 0.25
    pts = d * r[:, None]
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def square_defect(J, points):
    """max ||J(z)^2 + Id|| over the points."""
    M = J.value(points)
    return float(np.max(np.abs(M @ M + IDENTITY)))


def check_structure(J, points, tol=1e-10):
    defect = square_defect(J, points)
    if defect > tol:
        raise DegenerateStructure(f"{J.name}: ||J^2 + Id|| = {defect:.3e} exceeds {tol:g}")
    return defect


def c1_deviation(J, points):
    """Sampled C^1 distance to J_st: max of ||J - J_st||_op + sum_k ||dJ/dt_k||_op."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dev = np.linalg.norm(J.value(points) - J_ST, ord=2, axis=(-2, -1))
    dJ = J.derivative(points)
    dev = dev + np.linalg.norm(dJ, ord=2, axis=(-2, -1)).sum(axis=-1)
    return float(dev.max())


def default_deviation_samples(radius=1.0, n=400, seed=0):
    pts = sample_ball(n, seed, radius=radius)
    return np.vstack([np.zeros((1, 4)), pts])


# Amplitude normalisation so the sampled C^1 deviation of ``perturbed_structure(lam)``
# over the closed unit ball is close to ``lam`` (measured on 4000 samples).
_PERTURBED_SCALE = 0.112


def _perturbed_mu(lam):
    c = lam * _PERTURBED_SCALE

    def mu1(x):
        t1, t2, t3, t4 = np.moveaxis(x, -1, 0)
        return c * (np.sin(t1 + 0.5 * t3) + 0.7j * np.sin(t2 - t4) + 0.4 * np.cos(t3 + t4))

    def mu2(x):
        t1, t2, t3, t4 = np.moveaxis(x, -1, 0)
        return c * (0.6 * np.sin(t3 - t2) - 0.8j * np.cos(t1 + 0.3 * t4) + 0.5j * np.sin(t4))

    return mu1, mu2


def perturbed_structure(lam):
    """Catalog diagonal perturbation of J_st with sampled C^1 size about ``lam``."""
    mu1, mu2 = _perturbed_mu(lam)
    J = diagonal_structure(mu1, mu2, name=f"perturbed({lam:g})")
    J.c1_norm_hint = lam
    return J


def random_diagonal_structure(rng, eps, vanish_at_origin=True, n_modes=3, radius=1.0):
    """Random smooth diagonal structure, rescaled so its sampled C^1 deviation on
    B(0, radius) is close to ``eps``.  With ``vanish_at_origin`` J(0) = J_st exactly."""
    rng = np.random.default_rng(rng)
    k = rng.normal(size=(2, n_modes, 4))
    phase = rng.uniform(0, 2 * np.pi, size=(2, n_modes))
    amp = rng.normal(size=(2, n_modes)) + 1j * rng.normal(size=(2, n_modes))

    def raw(l):
        def f(x):
            arg = np.einsum("...i,mi->...m", x, k[l]) + phase[l]
            val = (np.sin(arg) * amp[l]).sum(axis=-1)
            if vanish_at_origin:
                val = val - (np.sin(phase[l]) * amp[l]).sum()
            return val

        return f

    f1, f2 = raw(0), raw(1)
    probe = diagonal_structure(lambda x: 1e-3 * f1(x), lambda x: 1e-3 * f2(x))
    samples = default_deviation_samples(radius=radius, n=300, seed=int(rng.integers(1 << 31)))
    unit = c1_deviation(probe, samples) / 1e-3
    scale = eps / unit if unit > 0 else 0.0
    J = diagonal_structure(lambda x: scale * f1(x), lambda x: scale * f2(x), name=f"random-diagonal({eps:g})")
    J.c1_norm_hint = eps
    return J
