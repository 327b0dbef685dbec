import numpy as np
import pytest

from holo_crlb import channel as ch
from holo_crlb.channel import Beamforming
from holo_crlb.scene import SPEED_OF_LIGHT, RhsGeometry, SystemConfig

from conftest import random_bf
from oracles import fd_central, scalar_chain


def test_onboard_gain_cases():
    assert ch.onboard_gain(2.5e9, [0, 0, 0], [0, 0, 0], 2.1) == 1.0 + 0j
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = ch.onboard_gain(rng.uniform(1e9, 5e9), rng.normal(size=3), rng.normal(size=3), 2.1)
        assert abs(abs(g) - 1.0) < 1e-15
    g = ch.onboard_gain(2.5e9, [0, 0, 0], [0.1, 0, 0], 2.1)
    expected = -2 * np.pi * 2.1 * 2.5e9 * 0.1 / SPEED_OF_LIGHT
    assert np.angle(g * np.exp(-1j * expected)) == pytest.approx(0.0, abs=1e-12)


def test_los_gain_cases():
    h = ch.los_gain(2.5e9, [10, 0, 0], [0, 0, 0])
    assert abs(h) == pytest.approx(9.5426e-4, rel=1e-4)
    expected_phase = -2 * np.pi * 2.5e9 * 10 / SPEED_OF_LIGHT
    assert np.angle(h * np.exp(-1j * expected_phase)) == pytest.approx(0.0, abs=1e-9)
    rng = np.random.default_rng(1)
    p, e = rng.normal(size=3) * 5, rng.normal(size=3)
    d = np.linalg.norm(p - e)
    h = ch.los_gain(3e9, p, e, g_e=2.0, g_u=0.5)
    assert abs(h) == pytest.approx(SPEED_OF_LIGHT * 1.0 / (4 * np.pi * 3e9 * d), rel=1e-13)
    with pytest.raises(ValueError):
        ch.los_gain(3e9, e, e)


def test_los_magnitude_decreases_with_distance():
    mags = [abs(ch.los_gain(2.5e9, [x, 0, 0], [0, 0, 0])) for x in (1, 2, 5, 10, 20)]
    assert np.all(np.diff(mags) < 0)


def test_los_matrix_grad_fd(desk_tables):
    p = np.array([8.0, 1.5, -0.4])
    for band in range(2):
        fd = fd_central(lambda x: ch.los_matrix(desk_tables, band, x), p, 1e-5)
        an = np.stack([ch.los_matrix_grad(desk_tables, band, u, p) for u in range(3)])
        assert np.max(np.abs(an - fd)) / np.max(np.abs(fd)) <= 1e-6


def test_los_grad_on_axis(desk_tables):
    elem = desk_tables.geom.element_positions[2]
    p = elem + np.array([7.0, 0.0, 0.0])
    g = ch.los_tensor_grad(desk_tables, p)
    assert np.max(np.abs(g[1:, :, :, 2])) <= 1e-15 * np.max(np.abs(g[0, :, :, 2]))


def test_los_translation_invariance(desk_tables):
    shift = np.array([0.3, -1.0, 2.0])
    geom = desk_tables.geom
    moved = desk_tables.replace(geom=RhsGeometry(geom.element_positions + shift,
                                                 geom.feed_positions + shift, geom.spacing))
    p = np.array([9.0, 2.0, 0.5])
    np.testing.assert_allclose(ch.los_tensor(moved, p + shift), ch.los_tensor(desk_tables, p),
                               rtol=1e-12)


def test_onboard_unit_modulus(desk_tables):
    assert np.allclose(np.abs(desk_tables.onboard), 1.0, atol=1e-14)


def test_array_response(desk_tables):
    geom = desk_tables.geom
    a = ch.array_response(2.5e9, geom, 0.4, -0.2, g_e=1.5)
    assert np.allclose(np.abs(a), 1.5)
    assert a[0] == 1.5
    assert np.allclose(ch.array_response(2.5e9, geom, 0.0, 0.0), 1.0)


def test_angular_covariance_structure(desk_tables):
    for v in desk_tables.angular_cov:
        assert np.allclose(v, v.conj().T, atol=0)
        w = np.linalg.eigvalsh(v)
        assert w.min() >= -1e-10 * np.linalg.norm(v)
        assert np.allclose(np.diag(v).real, v[0, 0].real, rtol=1e-12)
        assert np.allclose(np.diag(v).imag, 0.0)


def test_angular_covariance_quadrature_convergence():
    cfg = SystemConfig()
    tables = ch.build_tables(cfg)
    v1 = ch.angular_covariance(cfg, tables.plan, tables.geom, 0, n_nodes=32)
    v2 = ch.angular_covariance(cfg, tables.plan, tables.geom, 0, n_nodes=64)
    assert np.linalg.norm(v2 - v1) / np.linalg.norm(v2) < 1e-3


def test_angular_covariance_power_normalisation(desk_tables):
    cfg = desk_tables.cfg
    for i in range(cfg.n_bands):
        target = ch.average_los_power((cfg, desk_tables.plan, desk_tables.geom), i, cfg.roi)
        assert np.trace(desk_tables.angular_cov[i]).real / cfg.n_elements == pytest.approx(target)


def test_rho_values():
    cfg = SystemConfig(n_bands=1, n_subbands=2, subband_width_hz=10e6)
    plan = ch.build_band_plan(cfg)
    assert ch.rho_f(plan, 50e-9, 0, 1, 0) == pytest.approx(1 / (1 + 1j * np.pi), abs=1e-15)
    # quoted value is truncated to five decimals
    assert ch.rho_f(plan, 50e-9, 0, 1, 0) == pytest.approx(0.09199 - 0.28902j, abs=2e-5)
    assert ch.rho_f(plan, 50e-9, 0, 1, 1) == 1.0
    assert ch.rho_t(cfg, plan, 0, 3, 3) == 1.0
    still = cfg.replace(max_speed_mps=0.0)
    assert np.all(ch.rho_t(still, plan, 0, np.arange(4)[:, None], np.arange(4)[None]) == 1.0)


def test_kernels(desk_tables):
    cfg = desk_tables.cfg
    for i in range(cfg.n_bands):
        k_f, k_t, k_ft = ch.kernels(cfg, desk_tables.plan, i)
        assert np.array_equal(k_ft, np.kron(k_f, k_t))
        for k in (k_f, k_t, k_ft):
            assert np.all(np.diag(k) == 1.0)
            assert np.array_equal(k, k.conj().T)
        assert np.isrealobj(k_t)


def test_assemble_T_cases(desk_cfg, desk_tables, desk_bf):
    n_s, q = desk_cfg.n_subbands, desk_cfg.n_frames
    ones = Beamforming(np.ones_like(desk_bf.C), desk_bf.S)
    for i in range(desk_cfg.n_bands):
        t = ch.assemble_T(i, ones, desk_tables)
        assert t.shape == (n_s * q, desk_cfg.n_elements)
        for j in range(n_s):
            np.testing.assert_allclose(t[j * q:(j + 1) * q],
                                       desk_bf.S[i, j] @ desk_tables.onboard[i, j], rtol=1e-14)
    zero = Beamforming(np.zeros_like(desk_bf.C), desk_bf.S)
    assert not np.any(ch.assemble_T_all(zero, desk_tables))


@pytest.mark.parametrize("seed", range(5))
def test_synth_matches_scalar_chain(desk_cfg, desk_tables, seed):
    bf = random_bf(desk_cfg, seed)
    p = ch.sample_positions(desk_cfg.roi, 1, seed)[0]
    for flags in [(False, False), (True, True), (True, False), (False, True)]:
        y = ch.synth_received(p, bf, desk_tables, *flags, seed=seed)
        ref = scalar_chain(p, bf, desk_tables, *flags, seed=seed)
        assert np.max(np.abs(y - ref)) <= 1e-12


def test_noiseless_form(desk_cfg, desk_tables, desk_bf):
    p = np.array([12.0, -2.0, 0.3])
    y = ch.synth_received(p, desk_bf, desk_tables, False, False)
    t = ch.assemble_T_all(desk_bf, desk_tables)
    h = ch.los_tensor(desk_tables, p)
    for i in range(desk_cfg.n_bands):
        h_rep = np.kron(h[i], np.ones((desk_cfg.n_frames, 1)))
        np.testing.assert_allclose(y[i], np.diag(h_rep @ t[i].T), rtol=1e-13)
    assert np.array_equal(y, ch.synth_received(p, desk_bf, desk_tables, False, False, seed=9))


def test_synth_seeded(desk_bf, desk_tables):
    p = np.array([9.0, 0.0, 0.0])
    a = ch.synth_received(p, desk_bf, desk_tables, seed=3)
    assert np.array_equal(a, ch.synth_received(p, desk_bf, desk_tables, seed=3))
    assert not np.array_equal(a, ch.synth_received(p, desk_bf, desk_tables, seed=4))


def test_multipath_covariance_monte_carlo(desk_tables):
    rng = np.random.default_rng(0)
    n = 10_000
    for i in range(desk_tables.cfg.n_bands):
        h = ch.sample_multipath(desk_tables, i, rng, n_draws=n).reshape(n, -1)
        emp = h.T @ h.conj() / n
        ref = np.kron(desk_tables.kernel_ft[i], desk_tables.angular_cov[i])
        assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.05


def test_capacity_cases(desk_cfg, desk_tables):
    p = np.array([10.0, 1.0, 0.0])
    n_s, n_e = desk_cfg.n_subbands, desk_cfg.n_elements
    assert ch.capacity(0, np.zeros((n_s, n_e)), p, desk_tables) == 0.0
    rng = np.random.default_rng(2)
    t = 0.1 * (rng.normal(size=(n_s, n_e)) + 1j * rng.normal(size=(n_s, n_e)))
    rates = [ch.capacity(0, a * t, p, desk_tables) for a in (1.0, 1.5, 3.0)]
    assert rates[0] < rates[1] < rates[2]
    cfg1 = SystemConfig.desk(n_subbands=1)
    tab = ch.build_tables(cfg1).without_multipath()
    t1 = t[:1]
    h = ch.los_matrix(tab, 0, p)
    expected = cfg1.subband_width_hz * np.log2(1 + abs(np.sum(t1 * h)) ** 2 / tab.noise_var)
    assert ch.capacity(0, t1, p, tab) == pytest.approx(expected, rel=1e-13)


def test_beamforming_roundtrip_and_feasibility(desk_cfg, desk_bf):
    back = Beamforming.from_dict(desk_bf.to_dict())
    assert np.array_equal(back.C, desk_bf.C) and np.array_equal(back.S, desk_bf.S)
    assert desk_bf.is_feasible(desk_cfg.max_power, tol=1e-12, strict=True)
    with pytest.raises(ValueError):
        Beamforming.from_dict({**desk_bf.to_dict(), "version": 2})
    with pytest.raises(ValueError):
        Beamforming(desk_bf.C[:, :1], desk_bf.S)
