import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fddmimo import channel as ch
from fddmimo.channel import PathParams, SystemConfig
from fddmimo.linalg import make_rng

from conftest import random_params


def scalar_channel(x, cfg, k, lam, phi, antennas):
    """Direct evaluation of the multipath sum, one antenna at a time."""
    out = []
    for m in antennas:
        acc = 0j
        for l in range(x.L):
            delay = 2 * math.pi * k / cfg.K * x.tau[l] * cfg.B_hz
            steer = 2 * math.pi / lam * cfg.d_bar * (m - 1) * math.sin(x.theta[l])
            acc += x.alpha[l] * cmath.exp(1j * (phi[l] + delay)) * cmath.exp(1j * steer)
        out.append(acc)
    return np.array(out)


def test_thermal_noise_value():
    # -174 dBm/Hz over 20 MHz is -101 dBm
    assert ch.thermal_noise_power(20e6) == pytest.approx(10 ** (-101 / 10) * 1e-3, rel=1e-12)
    assert SystemConfig().sigma_n2 == pytest.approx(7.962143411069971e-14, rel=1e-12)


def test_default_spacing_is_half_downlink_wavelength():
    cfg = SystemConfig()
    assert cfg.d_bar == pytest.approx(0.5 * ch.SPEED_OF_LIGHT / 2.5e9)
    assert cfg.lambda_up > cfg.lambda_dl


@pytest.mark.parametrize("bad", [dict(f_up_hz=2.5e9), dict(p=0), dict(P_T=0.0),
                                 dict(K_dl=(0,)), dict(M_dl=(65,)), dict(K_up=(1, 1)),
                                 dict(sigma_n2=-1.0), dict(M=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SystemConfig(**bad)


def test_index_sets_are_sorted_tuples():
    cfg = SystemConfig(K_dl=[3, 1], M_dl=np.array([4, 2]))
    assert cfg.K_dl == (1, 3) and cfg.M_dl == (2, 4)


def test_path_params_validation(rng):
    with pytest.raises(ValueError, match="sorted"):
        PathParams([1, 1], [2e-9, 1e-9], [0, 0], [0, 0], [0, 0])
    with pytest.raises(ValueError, match="nonnegative"):
        PathParams([-1], [1e-9], [0], [0], [0])
    with pytest.raises(ValueError, match="same length"):
        PathParams([1, 1], [1e-9], [0], [0], [0])
    x = random_params(rng)
    with pytest.raises(ValueError):
        x.alpha[0] = 1.0                     # arrays are read-only


def test_sorted_by_delay_permutes_all_fields():
    x = PathParams.sorted_by_delay([1, 2], [5e-9, 1e-9], [0.1, 0.2], [0.3, 0.4], [0.5, 0.6])
    np.testing.assert_array_equal(x.alpha, [2, 1])
    np.testing.assert_array_equal(x.phi_dl, [0.6, 0.5])


def test_uplink_channels_match_scalar_formula(rng):
    cfg = SystemConfig(M=6, K=5, L=3)
    x = random_params(rng, L=3)
    H = ch.uplink_channels(x, cfg, range(1, 6))
    for k in range(1, 6):
        np.testing.assert_allclose(H[k - 1], scalar_channel(x, cfg, k, cfg.lambda_up,
                                                            x.phi_up, range(1, 7)), atol=1e-15)
        np.testing.assert_allclose(ch.uplink_channel(x, cfg, k), H[k - 1])


def test_downlink_channels_match_scalar_formula(rng):
    cfg = SystemConfig(M=6, K=5, L=3, M_dl=(2, 5))
    x = random_params(rng, L=3)
    Hsub = ch.downlink_channels(x, cfg, (2, 4))
    for row, k in zip(Hsub, (2, 4)):
        np.testing.assert_allclose(row, scalar_channel(x, cfg, k, cfg.lambda_dl, x.phi_dl, (2, 5)),
                                   atol=1e-15)
    full = ch.downlink_channel(x, cfg, 3, antennas=range(1, 7))
    np.testing.assert_allclose(full, scalar_channel(x, cfg, 3, cfg.lambda_dl, x.phi_dl,
                                                    range(1, 7)), atol=1e-15)


def test_array_response_unit_modulus_and_first_antenna():
    a = ch.array_response(0.7, 0.12, range(1, 9), 0.06)
    np.testing.assert_allclose(np.abs(a), 1.0)
    assert a[0] == 1.0


def test_subcarrier_out_of_range(rng):
    with pytest.raises(ValueError):
        ch.uplink_channel(random_params(rng), SystemConfig(), 17)


def test_downlink_pilots_power(rng):
    cfg = SystemConfig(M_dl=(1, 2, 3, 4), K_dl=(1, 2), p=3, P_T=2.5)
    S = ch.make_downlink_pilots(cfg, rng)
    assert S.shape == (2, 3, 4)
    np.testing.assert_allclose(np.sum(np.abs(S) ** 2, axis=-1), 2.5)
    # QPSK: all entries share one modulus and lie on the diagonals
    np.testing.assert_allclose((S / np.abs(S)) ** 4, -1.0, atol=1e-12)


def test_noiseless_observations(rng):
    cfg = SystemConfig(M=8, K=4, L=3, p=4, sigma_n2=0.0, P_T=4.0, K_dl=(2, 3))
    x = random_params(rng, L=3)
    up = ch.synth_uplink(x, cfg, rng)
    np.testing.assert_allclose(up.blocks, 2.0 * ch.uplink_channels(x, cfg))
    dl = ch.synth_downlink(x, cfg, rng)
    H = ch.downlink_channels(x, cfg)
    for i in range(2):
        np.testing.assert_allclose(dl.blocks[i], dl.S[i] @ H[i])


def test_noise_power_matches_sigma(rng):
    cfg = SystemConfig(M=64, K=16, L=1, sigma_n2=3.0)
    x = PathParams([0.0], [0.0], [0.0], [0.0], [0.0])
    y = ch.synth_uplink(x, cfg, rng).y
    # 1024 complex samples: sample variance within ~5 standard errors
    assert np.mean(np.abs(y) ** 2) == pytest.approx(3.0, rel=5 / math.sqrt(1024))


def test_synth_downlink_checks_pilots(rng):
    cfg = SystemConfig(M=4, K=2, L=1, p=2)
    x = random_params(rng, L=1)
    with pytest.raises(ValueError, match="shape"):
        ch.synth_downlink(x, cfg, rng, S=np.ones((2, 3, 4)))
    with pytest.raises(ValueError, match="norm"):
        ch.synth_downlink(x, cfg, rng, S=np.ones((2, 2, 4)))


def test_build_B_reproduces_downlink_signal(rng):
    cfg = SystemConfig(M=8, K=4, L=3, p=5, K_dl=(1, 4), M_dl=(1, 3, 8), sigma_n2=0.0)
    x = random_params(rng, L=3)
    obs = ch.synth_downlink(x, cfg, rng)
    B = ch.build_B(x.alpha, x.tau, x.theta, cfg, obs.S)
    assert B.shape == (10, 3)
    np.testing.assert_allclose(B @ np.exp(1j * x.phi_dl), obs.y, atol=1e-17)


def fd_grad(f, v, h):
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        g[i] = (f(v + e) - f(v - e)) / (2 * h[i])
    return g


def test_uplink_gradient_matches_finite_differences(rng):
    cfg = SystemConfig(M=8, K=4, L=3, sigma_n2=1e-8)
    x = random_params(rng, L=3)
    obs = ch.synth_uplink(x, cfg, rng)
    y = random_params(rng, L=3)
    v = np.concatenate([y.alpha, y.tau, y.theta, y.phi_up])
    J, g = ch.grad_uplink_objective((y.alpha, y.tau, y.theta, y.phi_up), obs, cfg)
    f = lambda u: ch.uplink_objective(np.split(u, 4), obs, cfg)
    h = np.concatenate([np.full(3, 1e-7), np.full(3, 1e-12), np.full(6, 1e-6)])
    np.testing.assert_allclose(g, fd_grad(f, v, h), rtol=1e-5, atol=1e-9 * np.abs(g).max())
    assert J == pytest.approx(f(v))


def test_downlink_gradient_matches_finite_differences(rng):
    cfg = SystemConfig(M=8, K=4, L=3, p=4, sigma_n2=1e-9)
    x = random_params(rng, L=3)
    obs = ch.synth_downlink(x, cfg, rng)
    B = ch.build_B(x.alpha, x.tau, x.theta, cfg, obs.S)
    phi = rng.uniform(0, 2 * np.pi, 3)
    J, g = ch.grad_dl_phase_objective(phi, B, obs.y)
    f = lambda u: ch.dl_phase_objective(u, B, obs.y)
    np.testing.assert_allclose(g, fd_grad(f, phi, np.full(3, 1e-6)), rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), shift=st.integers(-3, 3))
def test_objectives_are_2pi_periodic_in_phases(seed, shift):
    rng = make_rng(seed)
    cfg = SystemConfig(M=8, K=4, L=3, p=4, sigma_n2=1e-9)
    x = random_params(rng, L=3)
    obs = ch.synth_uplink(x, cfg, rng)
    y = random_params(rng, L=3)
    J0 = ch.uplink_objective((y.alpha, y.tau, y.theta, y.phi_up), obs, cfg)
    J1 = ch.uplink_objective((y.alpha, y.tau, y.theta, y.phi_up + 2 * np.pi * shift), obs, cfg)
    assert J1 == pytest.approx(J0, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_wrap_phase_range(seed):
    v = make_rng(seed).normal(0, 50, 100)
    w = ch.wrap_phase(v)
    assert np.all((w >= 0) & (w < 2 * np.pi))
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * v), atol=1e-12)
    assert ch.wrap_phase(-1e-18) == 0.0
