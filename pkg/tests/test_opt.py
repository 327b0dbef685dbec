import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holo_crlb import opt
from holo_crlb.channel import Beamforming
from holo_crlb.fisher import avg_crlb
from holo_crlb.scene import SystemConfig, sample_positions

from conftest import random_bf


@pytest.fixture(scope="module")
def samples10(desk_cfg):
    return sample_positions(desk_cfg.roi, 10, 21)


def zero_objective(bf):
    return 1.0, np.zeros_like(bf.C), np.zeros_like(bf.S)


def test_init_vars(desk_cfg):
    bf = opt.init_vars(desk_cfg, 4)
    assert bf.power_residual(desk_cfg.max_power) <= 1e-12
    assert np.all(bf.C >= 1e-3) and np.all(bf.C <= 1 - 1e-3)
    again = opt.init_vars(desk_cfg, 4)
    assert np.array_equal(bf.C, again.C) and np.array_equal(bf.S, again.S)
    assert not np.array_equal(bf.C, opt.init_vars(desk_cfg, 5).C)


def test_project_power(desk_cfg):
    bf = random_bf(desk_cfg, 0)
    p = desk_cfg.max_power
    np.testing.assert_allclose(opt.project_power(bf.S, p), bf.S, rtol=1e-15)
    np.testing.assert_allclose(opt.project_power(2 * bf.S, p), bf.S, rtol=1e-15)
    rng = np.random.default_rng(0)
    s = rng.normal(size=bf.S.shape) * 7 + 0j
    out = Beamforming(bf.C, opt.project_power(s, p))
    assert out.power_residual(p) <= 1e-12
    s[0, :, 1] = 0
    with pytest.raises(ValueError):
        opt.project_power(s, p)


def test_tr_cg_newton_step():
    g = np.array([0.1, -0.2, 0.05])
    d, hd = opt.tr_cg_step(g, lambda v: v, radius=10.0)
    np.testing.assert_allclose(d, -g, rtol=1e-14)
    np.testing.assert_allclose(hd, -g, rtol=1e-14)


def test_tr_cg_zero_gradient():
    d, _ = opt.tr_cg_step(np.zeros(4), lambda v: v, radius=1.0)
    assert not np.any(d)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 10.0), st.booleans())
def test_tr_cg_radius_and_cauchy_bound(seed, radius, indefinite):
    rng = np.random.default_rng(seed)
    n = 6
    a = rng.normal(size=(n, n))
    h = a @ a.T + 0.1 * np.eye(n)
    if indefinite:
        h -= 2.0 * np.abs(np.linalg.eigvalsh(h)).mean() * np.eye(n)
    g = rng.normal(size=n)
    d, hd = opt.tr_cg_step(g, lambda v: h @ v, radius, max_iter=50, rtol=1e-12)
    assert np.linalg.norm(d) <= radius * (1 + 1e-12)
    np.testing.assert_allclose(hd, h @ d, atol=1e-10 * (1 + np.linalg.norm(h @ d)))
    decrease = -(g @ d + 0.5 * d @ h @ d)
    gn = np.linalg.norm(g)
    bound = 0.5 * gn * min(radius, gn / np.linalg.norm(h, 2))
    assert decrease >= bound * (1 - 1e-9)


def test_sphere_pullback_matches_fd(desk_cfg, desk_tables, samples10):
    bf = random_bf(desk_cfg, 2)
    block = opt._Block("S", desk_cfg)
    objective = opt.default_objective(samples10, desk_tables)
    x = block.pack(bf) * 1.3          # off the sphere on purpose
    g, _ = block.gradient(x, bf, objective, 0.0)
    f = lambda y: objective(block.to_bf(y, bf))[0]
    h = 1e-6
    for k in np.argsort(-np.abs(g))[:4]:
        e = np.zeros_like(x)
        e[k] = h
        assert g[k] == pytest.approx((f(x + e) - f(x - e)) / (2 * h), rel=1e-5)


def test_solve_sp1(desk_cfg, desk_tables, samples10):
    bf = opt.init_vars(desk_cfg, 1)
    before = avg_crlb(samples10, bf, desk_tables)
    trace = opt.OptTrace()
    out = opt.solve_sp1(bf, samples10, desk_tables, 10, trace)
    after = avg_crlb(samples10, out, desk_tables)
    assert after <= before + 1e-9
    assert np.all(out.C > 0) and np.all(out.C < 1)
    assert np.array_equal(out.S, bf.S)
    assert all(r["phase"] == "C" for r in trace.rows)
    assert np.all(np.diff(trace.objectives) <= 1e-9)


def test_solve_sp2(desk_cfg, desk_tables, samples10):
    bf = opt.init_vars(desk_cfg, 2)
    seen = []
    base = opt.default_objective(samples10, desk_tables)

    def objective(b):
        seen.append(b.power_residual(desk_cfg.max_power))
        return base(b)

    before = base(bf)[0]
    trace = opt.OptTrace()
    out = opt.solve_sp2(bf, samples10, desk_tables, 10, trace, objective=objective)
    assert base(out)[0] <= before + 1e-9
    assert np.array_equal(out.C, bf.C)
    assert max(seen) <= 1e-12
    assert out.power_residual(desk_cfg.max_power) <= 1e-12
    assert np.all(np.diff(trace.objectives) <= 1e-9)


@pytest.mark.parametrize("solver", [opt.solve_sp1, opt.solve_sp2, opt.solve_joint])
def test_zero_gradient_seam(desk_cfg, desk_tables, samples10, solver):
    bf = opt.init_vars(desk_cfg, 3)
    out = solver(bf, samples10, desk_tables, 5, objective=zero_objective)
    assert np.array_equal(out.C, bf.C) and np.array_equal(out.S, bf.S)


def test_alternate_properties(desk_cfg, desk_tables, samples10):
    cfg = desk_cfg.replace(max_outer_iters=3, updates_per_subproblem=5)
    bf, trace = opt.alternate(cfg, desk_tables, samples10, 0)
    obj = trace.objectives
    assert np.all(np.diff(obj) <= 1e-9)
    assert max(r["iter"] for r in trace.rows) <= cfg.max_outer_iters
    assert bf.is_feasible(cfg.max_power, tol=1e-12, strict=True)
    assert obj[-1] == pytest.approx(avg_crlb(samples10, bf, desk_tables), rel=1e-12)
    assert list(trace.rows[0]) == list(opt.TRACE_COLUMNS)
    bf2, trace2 = opt.alternate(cfg, desk_tables, samples10, 0)
    assert np.array_equal(bf.C, bf2.C) and np.array_equal(bf.S, bf2.S)
    assert np.array_equal(obj, trace2.objectives)


def test_alternate_stops_when_nothing_changes(desk_cfg, desk_tables, samples10):
    bf, trace = opt.alternate(desk_cfg, desk_tables, samples10, 0, objective=zero_objective)
    assert [r["phase"] for r in trace.rows] == ["init"]
    start = opt.init_vars(desk_cfg, 0)
    assert np.array_equal(bf.C, start.C)


def test_joint_descent_feasible(desk_cfg, desk_tables, samples10):
    bf = opt.init_vars(desk_cfg, 6)
    trace = opt.OptTrace()
    out = opt.solve_joint(bf, samples10, desk_tables, 8, trace)
    assert out.is_feasible(desk_cfg.max_power, tol=1e-12, strict=True)
    assert np.all(np.diff(trace.objectives) <= 1e-9)
    assert len(trace) <= 8
