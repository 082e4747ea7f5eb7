import numpy as np
import pytest

from kobmetric.disc import beltrami_of
from kobmetric.errors import ProjectionAmbiguous
from kobmetric.geometry import ball_function, get_domain, siegel_function
from kobmetric.normalization import (
    Polydisc,
    anisotropic_dilation,
    ball_sandwich,
    build_chart,
    extend_structure,
    fit_power_law,
    harmonic_removal,
    identity_diffeo,
    normalize_chart,
    pushforward_structure,
    remove_harmonic,
    siegel_identity_residual,
    structure_deviation,
    translation,
)
from kobmetric.structures import J_ST, diagonal_structure, perturbed_structure, sample_ball, standard_structure


def _z(x):
    return x[..., 0] + 1j * x[..., 1], x[..., 2] + 1j * x[..., 3]


PTS = sample_ball(20, 3, radius=0.5)


# --- diffeomorphisms --------------------------------------------------------

@pytest.mark.parametrize("f", [harmonic_removal(0.7 - 0.2j), anisotropic_dilation(0.05), translation([0.1j, 0.2])])
def test_diffeo_roundtrip_and_jacobian(f):
    assert np.allclose(f.inverse(f.forward(PTS)), PTS, atol=1e-10)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (f.forward(PTS + e) - f.forward(PTS - e)) / (2 * h)
        assert np.allclose(f.jacobian(PTS)[..., :, k], fd, atol=1e-4)


def test_harmonic_removal_formula():
    Phi = harmonic_removal(1.0)
    w = 0.3 - 0.4j
    y = Phi.forward(np.array([0.0, 0.0, w.real, w.imag]))
    z1, z2 = _z(y)
    assert z1 == pytest.approx(-w ** 2) and z2 == pytest.approx(w)
    assert np.allclose(harmonic_removal(0.0).forward(PTS), PTS)


def test_anisotropic_dilation_examples():
    d = 0.05
    Lam = anisotropic_dilation(d)
    assert np.allclose(Lam.forward(np.array([2 * d, 0, 0, 0])), [0.5, 0, 0, 0])
    assert np.allclose(Lam.inverse(np.zeros(4)), 0)


# --- push-forwards ------------------------------------------------------------

def test_pushforward_identity_and_standard():
    J = perturbed_structure(0.05)
    assert np.allclose(pushforward_structure(J, identity_diffeo()).value(PTS), J.value(PTS))
    Js = pushforward_structure(standard_structure(), harmonic_removal(0.8))
    assert np.allclose(Js.value(PTS), J_ST, atol=1e-12)


def test_pushforward_of_diagonal_structure_under_phi():
    # for holomorphic Phi the Beltrami coefficient transforms as B' = DPhi B conj(DPhi)^{-1}
    a = 0.6 + 0.3j
    mu1 = lambda x: 0.05 * np.sin(x[..., 0]) + 0.02j
    mu2 = lambda x: 0.04 * np.cos(x[..., 3]) - 0.03j * x[..., 2]
    J = diagonal_structure(mu1, mu2)
    Phi = harmonic_removal(a)
    Jp = pushforward_structure(J, Phi)
    x = np.array([0.2, -0.1, 0.3, 0.25])
    b1, b2 = np.diag(beltrami_of(J, x))
    _, z2 = _z(x)
    Bp = beltrami_of(Jp, Phi.forward(x))
    assert Bp[0, 0] == pytest.approx(b1, abs=1e-9)
    assert Bp[1, 1] == pytest.approx(b2, abs=1e-9)
    assert Bp[1, 0] == pytest.approx(0, abs=1e-9)
    assert Bp[0, 1] == pytest.approx(2 * b1 * np.conj(a * z2) - 2 * a * z2 * b2, abs=1e-9)
    # off-block entries vanish on {z2 = 0}
    x0 = np.array([0.2, -0.1, 0.0, 0.0])
    assert abs(beltrami_of(Jp, Phi.forward(x0))[0, 1]) < 1e-12


# --- normal form ------------------------------------------------------------

def test_normalize_chart_siegel_is_already_normal():
    ch = normalize_chart(siegel_function(), standard_structure(), np.array([0.05, 0, 0, 0]))
    assert np.allclose(ch.rho_coeffs["rho_jk"], 0, atol=1e-12)
    assert ch.rho_coeffs["rho_jkbar"][1, 1] == pytest.approx(1.0)
    assert np.allclose(ch.boundary_point, 0, atol=1e-12)


def test_normalize_chart_ball():
    ch = normalize_chart(ball_function(), standard_structure(), np.array([0.95, 0, 0, 0]))
    Bh = ch.rho_coeffs["rho_jkbar"]
    assert Bh[1, 1] == pytest.approx(1.0) and Bh[0, 0] == pytest.approx(1.0)
    assert np.allclose(ch.model_structure.value(np.zeros(4)), J_ST, atol=1e-12)


def test_normalize_chart_center_fails():
    with pytest.raises(ProjectionAmbiguous):
        normalize_chart(ball_function(), standard_structure(), np.zeros(4))


def test_normalize_chart_alpha_order():
    with pytest.raises(ValueError):
        normalize_chart(ball_function(), standard_structure(), np.array([0.9, 0, 0, 0]), alpha=0.3,
                        alpha_prime=0.2)


def test_remove_harmonic_pushforward_acquires_off_block_terms():
    D = get_domain("perturbed-ball(0.05)")
    ch = remove_harmonic(normalize_chart(D.rho, D.J, np.array([0.9, 0.1, 0, 0])))
    assert ch.stage_names() == ["L", "Phi"]
    B0 = beltrami_of(ch.model_structure, np.zeros(4))
    assert np.allclose(B0, 0, atol=1e-9)


# --- extension --------------------------------------------------------------

def test_extend_structure_properties():
    d = 0.05
    assert np.allclose(extend_structure(standard_structure(), d).value(PTS), J_ST)
    J = perturbed_structure(0.1)
    ext = extend_structure(J, d, 0.1, 0.25, c=1.0)
    inner, outer = Polydisc(d, 0.1, 1.0), Polydisc(d, 0.25, 1.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=(4000, 4))
    ins = inner.contains(x)
    out = ~outer.contains(x)
    assert ins.sum() > 0 and out.sum() > 0
    assert np.abs(ext.value(x[ins]) - J.value(x[ins])).max() <= 1e-12
    assert np.array_equal(ext.value(x[out]), np.broadcast_to(J_ST, (int(out.sum()), 4, 4)))
    Jm = ext.value(x)
    assert np.allclose(Jm @ Jm, -np.eye(4), atol=1e-12)


# --- full chart -------------------------------------------------------------

@pytest.mark.parametrize("domain", ["ball", "perturbed-ball(0.05)"])
def test_chart_invariants(domain):
    D = get_domain(domain)
    p = np.array([0.93, 0.05, 0.1, 0.0])
    ch = build_chart(D.rho, D.J, p)
    assert ch.stage_names() == ["L", "Phi", "T", "phi", "Lambda"]
    assert np.allclose(ch.psi(p), 0, atol=1e-12)
    assert np.allclose(ch.pushed_structure.value(np.zeros(4)), J_ST, atol=1e-10)
    y = sample_ball(10, 1, radius=0.5)
    assert np.allclose(ch.psi(ch.psi_inverse(y)), y, atol=1e-10)


@pytest.mark.parametrize("delta", [0.1, 0.02])
def test_psi_leading_factors_siegel(delta):
    ch = build_chart(siegel_function(), standard_structure(), np.array([delta, 0, 0, 0]))
    D = ch.psi_jacobian(np.array([delta, 0, 0, 0]))
    # normal direction: Re z1 grows inward, Psi maps it to -Re w1
    assert abs(D[0, 0]) == pytest.approx(1 / (2 * delta), rel=1e-8)
    assert abs(D[2, 2]) == pytest.approx(1 / np.sqrt(2 * delta), rel=1e-8)


@pytest.mark.parametrize("delta", [0.1, 0.01])
def test_siegel_sandwich_exact(delta):
    ch = build_chart(siegel_function(), standard_structure(), np.array([delta, 0, 0, 0]))
    sw = ball_sandwich(ch)
    assert abs(sw.r_in - 1) <= 1e-9 and abs(sw.r_out - 1) <= 1e-9
    x = sample_ball(50, 2, radius=0.3)
    assert siegel_identity_residual(ch, x) <= 1e-10


def test_ball_sandwich_power_law():
    deltas = [0.1, 0.05, 0.02, 0.01]
    dev = []
    for d in deltas:
        ch = build_chart(ball_function(), standard_structure(), np.array([1 - d, 0, 0, 0]))
        sw = ball_sandwich(ch)
        assert 0 < sw.r_in <= sw.r_out
        dev.append(max(abs(1 - sw.r_in), abs(1 - sw.r_out)))
    # r_in, r_out in [1 - C delta^alpha', 1 + C delta^alpha'] with a fitted C
    C = max(x / d ** 0.25 for x, d in zip(dev, deltas))
    assert C < 1.0
    _, s, _ = fit_power_law(deltas, dev)
    assert s > 0


def test_structure_deviation():
    assert structure_deviation(standard_structure()) == 0
    for lam in (0.02, 0.05):
        dev = structure_deviation(perturbed_structure(lam), radius=1.0)
        assert lam / 2 <= dev <= 2 * lam


def test_normalized_structure_deviation_power_law():
    D = get_domain("perturbed-ball(0.05)")
    deltas = [0.1, 0.05, 0.02, 0.01]
    dev = [structure_deviation(build_chart(D.rho, D.J, np.array([1 - d, 0, 0, 0])).pushed_structure, radius=1.0)
           for d in deltas]
    C, s, r2 = fit_power_law(deltas, dev)
    assert s > 0 and r2 > 0.9
