import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kobmetric.errors import DerivativeUnavailable
from kobmetric.structures import (
    J_ST,
    StructureField,
    c1_deviation,
    cayley,
    cayley_inverse,
    conj_linear_coefficients,
    conj_linear_matrix,
    diagonal_structure,
    perturbed_structure,
    random_diagonal_structure,
    sample_ball,
    square_defect,
    standard_structure,
)


def test_standard_structure_squares_to_minus_identity():
    x = sample_ball(50, 0)
    J = standard_structure().value(x)
    assert np.allclose(J @ J, -np.eye(4))
    assert np.allclose(standard_structure().derivative(x), 0)


@given(st.lists(st.floats(-0.4, 0.4), min_size=4, max_size=4))
@settings(max_examples=40, deadline=None)
def test_cayley_roundtrip(b):
    B = np.array([[b[0] + 1j * b[1], 0], [0, b[2] + 1j * b[3]]])
    Q = conj_linear_matrix(B)
    J = cayley(Q)
    assert np.allclose(J @ J, -np.eye(4), atol=1e-12)
    assert np.allclose(cayley_inverse(J), Q, atol=1e-12)
    assert np.allclose(conj_linear_coefficients(Q), B, atol=1e-12)


def test_conj_linear_matrix_acts_as_conjugate_linear_map(rng):
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    w = rng.normal(size=2) + 1j * rng.normal(size=2)
    x = np.array([w[0].real, w[0].imag, w[1].real, w[1].imag])
    y = conj_linear_matrix(B) @ x
    assert np.allclose(y[0::2] + 1j * y[1::2], B @ np.conj(w))


def test_diagonal_structure_is_almost_complex(rng):
    J = diagonal_structure(lambda x: 0.1 * np.sin(x[..., 0]), lambda x: 0.05j * x[..., 2])
    x = sample_ball(200, rng)
    assert square_defect(J, x) < 1e-12
    assert not np.allclose(J.value(x), J_ST)


def test_fd_derivative_matches_analytic_for_linear_field():
    J = diagonal_structure(lambda x: 0.1 * x[..., 0], lambda x: 0.0 * x[..., 0])
    x = np.array([0.2, 0.1, -0.3, 0.05])
    D = J.derivative(x)
    h = 1e-6
    fd = (J.value(x + [h, 0, 0, 0]) - J.value(x - [h, 0, 0, 0])) / (2 * h)
    assert np.allclose(D[0], fd, atol=1e-6)


def test_fd_disabled_raises():
    J = StructureField(lambda x: np.broadcast_to(J_ST, x.shape[:-1] + (4, 4)), allow_fd=False)
    with pytest.raises(DerivativeUnavailable):
        J.derivative(np.zeros(4))


def test_perturbed_structure_size_tracks_lambda():
    x = sample_ball(400, 0)
    assert c1_deviation(standard_structure(), x) == 0
    for lam in (0.02, 0.05, 0.1):
        dev = c1_deviation(perturbed_structure(lam), x)
        assert lam / 2 <= dev <= 2 * lam


def test_random_diagonal_structure_scaled_and_vanishing_at_origin():
    J = random_diagonal_structure(3, 0.05, vanish_at_origin=True)
    assert np.allclose(J.value(np.zeros(4)), J_ST, atol=1e-14)
    dev = c1_deviation(J, sample_ball(400, 1))
    assert 0.025 <= dev <= 0.1


def test_sample_ball_respects_shell(rng):
    x = sample_ball(500, rng, radius=1.0, inner=0.05)
    r = np.linalg.norm(x, axis=1)
    assert r.min() >= 0.05 and r.max() <= 1.0
