"""Alternating analog/digital beamforming optimisation.

The configuration matrices are kept strictly inside the unit box by a log
barrier plus a fraction-to-boundary rule. The combining matrices are kept
on the per-(band, frame) power sphere by exact rescaling, and the
optimiser works on the composite objective ``f(project(S))``. Both
sub-problems take Steihaug-CG trust-region steps.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .channel import Beamforming
from .fisher import replicated_los_grad
from .grad import value_and_grad

MU_FLOOR = 1e-12
CG_MAX_ITER = 25
CG_RTOL = 1e-2
BOX_EPS = 1e-3
FRACTION_TO_BOUNDARY = 0.995
CHANGE_TOL = 1e-12

TRACE_COLUMNS = ("iter", "phase", "objective", "grad_norm", "mu", "radius", "step_norm", "ms")


@dataclass
class OptTrace:
    rows: list = field(default_factory=list)

    def record(self, **row):
        self.rows.append({k: row.get(k, 0.0) for k in TRACE_COLUMNS})

    @property
    def objectives(self):
        return np.array([r["objective"] for r in self.rows])

    def outer_summary(self):
        """Objective after each sub-problem, keyed by (iter, phase)."""
        out = {}
        for r in self.rows:
            out[(r["iter"], r["phase"])] = r["objective"]
        return out

    def __len__(self):
        return len(self.rows)


@dataclass
class OptState:
    mu: float = 0.0
    radius_c: float = 0.0
    radius_s: float = 0.0
    outer: int = 0


def default_objective(samples, tables):
    """``bf -> (avg CRLB, grad_C, grad_S)`` with the LoS terms of ``samples`` cached."""
    samples = np.atleast_2d(np.asarray(samples, float))
    g = replicated_los_grad(tables, samples)

    def objective(bf):
        return value_and_grad(samples, bf, tables, g=g)
    return objective


def init_vars(cfg, seed):
    """Starting point: constant combiners on the power sphere, random configurations."""
    rng = np.random.default_rng(seed)
    shape_s = (cfg.n_bands, cfg.n_subbands, cfg.n_frames, cfg.n_feeds)
    s = np.full(shape_s, np.sqrt(cfg.max_power) / cfg.n_feeds, dtype=complex)
    c = rng.uniform(0.0, 1.0, size=(cfg.n_bands, cfg.n_frames, cfg.n_elements))
    c = np.clip(c, BOX_EPS, 1.0 - BOX_EPS)
    return Beamforming(c, project_power(s, cfg.max_power))


def project_power(s, p_max):
    """Rescale each (band, frame) group so its total combining power is ``p_max``."""
    s = np.asarray(s, dtype=complex)
    power = np.sum(np.abs(s) ** 2, axis=(1, 3), keepdims=True)
    if np.any(power <= 0.0):
        raise ValueError("cannot project an all-zero combining group onto the power sphere")
    return s * np.sqrt(p_max / power)


def tr_cg_step(g, hvp, radius, max_iter=CG_MAX_ITER, rtol=CG_RTOL):
    """Steihaug truncated CG for ``min g.d + d.H.d/2`` s.t. ``||d|| <= radius``.

    Returns ``(d, Hd)``.
    """
    g = np.asarray(g, float)
    if not (radius > 0):
        raise ValueError("trust radius must be positive")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient in trust-region model")
    z = np.zeros_like(g)
    hz = np.zeros_like(g)
    r = g.copy()
    d = -r
    g_norm = np.linalg.norm(g)
    if g_norm == 0.0:
        return z, hz
    for _ in range(max_iter):
        hd = hvp(d)
        if not np.all(np.isfinite(hd)):
            raise FloatingPointError("non-finite Hessian-vector product")
        dhd = float(d @ hd)
        rr = float(r @ r)
        if dhd <= 0.0:
            tau = _to_boundary(z, d, radius)
            return z + tau * d, hz + tau * hd
        alpha = rr / dhd
        z_next = z + alpha * d
        if np.linalg.norm(z_next) >= radius:
            tau = _to_boundary(z, d, radius)
            return z + tau * d, hz + tau * hd
        z = z_next
        hz = hz + alpha * hd
        r = r + alpha * hd
        if np.linalg.norm(r) <= rtol * g_norm:
            break
        d = -r + (float(r @ r) / rr) * d
    return z, hz


def _to_boundary(z, d, radius):
    a = d @ d
    b = 2.0 * (z @ d)
    c = z @ z - radius ** 2
    return float((-b + np.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a))


class _Block:
    """One set of decision variables mapped to a flat real vector."""

    def __init__(self, which, cfg):
        self.which = which
        self.p_max = cfg.max_power

    def has_c(self):
        return self.which in ("C", "CS")

    def has_s(self):
        return self.which in ("S", "CS")

    def pack(self, bf):
        parts = []
        if self.has_c():
            parts.append(bf.C.ravel())
        if self.has_s():
            parts += [bf.S.real.ravel(), bf.S.imag.ravel()]
        return np.concatenate(parts)

    def unpack(self, x, bf):
        c, s = bf.C, bf.S
        k = 0
        if self.has_c():
            c = x[:c.size].reshape(c.shape)
            k = c.size
        if self.has_s():
            n = s.size
            s = (x[k:k + n] + 1j * x[k + n:k + 2 * n]).reshape(s.shape)
        return c, s

    def to_bf(self, x, bf):
        """Feasible beamforming for vector ``x`` (combiners projected)."""
        c, s = self.unpack(x, bf)
        if self.has_s():
            s = project_power(s, self.p_max)
        return Beamforming(np.array(c, copy=True), s)

    def barrier(self, x, bf):
        if not self.has_c():
            return 0.0
        c = x[:bf.C.size]
        return float(-np.sum(np.log(c) + np.log1p(-c)))

    def gradient(self, x, bf, objective, mu, result=None):
        """Gradient of ``f(project(.)) + mu * barrier`` at ``x``, and of ``f`` alone.

        ``result`` may carry an already computed ``objective`` output at ``x``.
        """
        c, s_raw = self.unpack(x, bf)
        s = project_power(s_raw, self.p_max) if self.has_s() else s_raw
        _, g_c, g_s = result if result is not None else objective(Beamforming(c, s))
        parts, f_parts = [], []
        if self.has_c():
            f_parts.append(g_c.ravel())
            parts.append(g_c.ravel() + mu * (-1.0 / c.ravel() + 1.0 / (1.0 - c.ravel())))
        if self.has_s():
            g_s = _sphere_pullback(s_raw, g_s, self.p_max)
            for arr in (parts, f_parts):
                arr += [g_s.real.ravel(), g_s.imag.ravel()]
        return np.concatenate(parts), np.concatenate(f_parts)

    def room(self, x, d, bf):
        """Largest ``t`` with ``x + t d`` inside the closed box (inf without C)."""
        if not self.has_c():
            return np.inf
        n = bf.C.size
        c, dc = x[:n], d[:n]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = np.where(dc < 0, -c / dc, np.inf)
            t_hi = np.where(dc > 0, (1.0 - c) / dc, np.inf)
        return float(min(np.min(t_lo), np.min(t_hi)))

    def max_step(self, x, d, bf):
        """Fraction-to-boundary step length, at most 1."""
        return min(1.0, FRACTION_TO_BOUNDARY * self.room(x, d, bf))


def _sphere_pullback(s_raw, g_s, p_max):
    # gradient of f(project(s)) given grad of f at project(s)
    norm = np.sqrt(np.sum(np.abs(s_raw) ** 2, axis=(1, 3), keepdims=True))
    s_hat = s_raw / norm
    radial = np.sum((s_hat.conj() * g_s).real, axis=(1, 3), keepdims=True)
    return np.sqrt(p_max) / norm * (g_s - s_hat * radial)


def _hvp_factory(block, x, g, bf, objective, mu):
    base = 1e-7 * (1.0 + np.linalg.norm(x))

    def hvp(v):
        v_norm = np.linalg.norm(v)
        if v_norm == 0.0:
            return np.zeros_like(v)
        u = v / v_norm
        h = min(base, 0.5 * block.room(x, u, bf))
        g_probe, _ = block.gradient(x + h * u, bf, objective, mu)
        return (g_probe - g) * (v_norm / h)

    return hvp


def _tr_descent(block, bf, objective, n_steps, state, trace, phase, radius_attr, shrink):
    x = block.pack(bf)
    res = objective(bf)
    f = res[0]
    mu = state.mu if block.has_c() else 0.0
    radius = getattr(state, radius_attr)
    for _ in range(n_steps):
        t0 = time.perf_counter()
        g, g_f = block.gradient(x, bf, objective, mu, res)
        if not np.any(g_f):
            break
        hvp = _hvp_factory(block, x, g, bf, objective, mu)
        d, hd = tr_cg_step(g, hvp, radius)
        t = block.max_step(x, d, bf)
        d, hd = t * d, t * hd
        pred = -(g @ d + 0.5 * d @ hd)
        step_norm = float(np.linalg.norm(d))
        accepted = False
        if pred > 0 and step_norm > 0:
            cand = block.to_bf(x + d, bf)
            x_new = block.pack(cand)
            res_new = objective(cand)
            f_new = res_new[0]
            phi = f + mu * block.barrier(x, bf)
            phi_new = f_new + mu * block.barrier(x_new, bf)
            ratio = (phi - phi_new) / pred
            if np.isfinite(f_new) and ratio > 0 and f_new <= f:
                accepted = True
                x, f, bf, res = x_new, f_new, cand, res_new
                if block.has_c():
                    mu = max(mu * shrink, MU_FLOOR)
            if ratio > 0.75 and step_norm >= 0.99 * radius:
                radius *= 2.0
            elif ratio < 0.25:
                radius *= 0.25
        else:
            radius *= 0.25
        trace.record(iter=state.outer, phase=phase, objective=f,
                     grad_norm=float(np.linalg.norm(g_f)), mu=mu, radius=radius,
                     step_norm=step_norm if accepted else 0.0,
                     ms=1e3 * (time.perf_counter() - t0))
        if radius < 1e-14 * (1.0 + np.linalg.norm(x)):
            break
    if block.has_c():
        state.mu = mu
    setattr(state, radius_attr, radius)
    return bf


def _fresh_state(cfg, bf, objective):
    f0 = objective(bf)[0]
    return OptState(
        mu=cfg.barrier_mu0 * abs(f0),
        radius_c=cfg.tr_radius0 * (1.0 + np.linalg.norm(bf.C)),
        radius_s=cfg.tr_radius0 * (1.0 + np.sqrt(2.0) * np.linalg.norm(bf.S)),
    )


def solve_sp1(bf, samples, tables, n_upd, trace=None, state=None, objective=None):
    """Trust-region steps on the configurations with the combiners fixed."""
    cfg = tables.cfg
    objective = objective or default_objective(samples, tables)
    trace = trace if trace is not None else OptTrace()
    state = state or _fresh_state(cfg, bf, objective)
    return _tr_descent(_Block("C", cfg), bf, objective, n_upd, state, trace, "C",
                       "radius_c", cfg.barrier_shrink)


def solve_sp2(bf, samples, tables, n_upd, trace=None, state=None, objective=None):
    """Trust-region steps on the combiners with the configurations fixed."""
    cfg = tables.cfg
    objective = objective or default_objective(samples, tables)
    trace = trace if trace is not None else OptTrace()
    state = state or _fresh_state(cfg, bf, objective)
    return _tr_descent(_Block("S", cfg), bf, objective, n_upd, state, trace, "S",
                       "radius_s", cfg.barrier_shrink)


def solve_joint(bf, samples, tables, n_steps, trace=None, state=None, objective=None):
    """Trust-region steps on configurations and combiners together."""
    cfg = tables.cfg
    objective = objective or default_objective(samples, tables)
    trace = trace if trace is not None else OptTrace()
    if state is None:
        state = _fresh_state(cfg, bf, objective)
        state.radius_c = cfg.tr_radius0 * (1.0 + np.linalg.norm(_Block("CS", cfg).pack(bf)))
    return _tr_descent(_Block("CS", cfg), bf, objective, n_steps, state, trace, "joint",
                       "radius_c", cfg.barrier_shrink)


def alternate(cfg, tables, samples, seed, objective=None):
    """Alternate the two sub-problems until nothing changes or the budget ends."""
    objective = objective or default_objective(samples, tables)
    bf = init_vars(cfg, seed)
    trace = OptTrace()
    state = _fresh_state(cfg, bf, objective)
    trace.record(iter=0, phase="init", objective=objective(bf)[0], mu=state.mu,
                 radius=state.radius_c)
    for rho in range(1, cfg.max_outer_iters + 1):
        state.outer = rho
        prev = bf
        bf = solve_sp1(bf, samples, tables, cfg.updates_per_subproblem, trace, state, objective)
        bf = solve_sp2(bf, samples, tables, cfg.updates_per_subproblem, trace, state, objective)
        if (np.max(np.abs(bf.C - prev.C)) <= CHANGE_TOL
                and np.max(np.abs(bf.S - prev.S)) <= CHANGE_TOL):
            break
    return bf, trace
