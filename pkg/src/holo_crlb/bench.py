"""Benchmark optimisers and reference beamformers."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import Beamforming, los_matrix
from .fisher import SingularFimError, avg_crlb
from .opt import OptTrace, alternate, init_vars, project_power, solve_joint

_PHASE_GRID = 16


@dataclass
class BenchResult:
    method: str
    beamforming: Beamforming
    objective: float
    wall_time: float
    seed: int
    trace: OptTrace = field(default_factory=OptTrace)

    def summary(self):
        return {"method": self.method, "objective": self.objective,
                "wall_time_s": self.wall_time, "seed": self.seed}


def _safe_objective(samples, bf, tables):
    try:
        return avg_crlb(samples, bf, tables)
    except SingularFimError:
        return math.inf


def run_alternate(cfg, tables, samples, seed):
    t0 = time.perf_counter()
    bf, trace = alternate(cfg, tables, samples, seed)
    return BenchResult("alt", bf, avg_crlb(samples, bf, tables),
                       time.perf_counter() - t0, seed, trace)


def direct_gd(cfg, tables, samples, seed):
    """Joint trust-region descent on all variables with the same step budget."""
    t0 = time.perf_counter()
    bf = init_vars(cfg, seed)
    trace = OptTrace()
    n_steps = 2 * cfg.max_outer_iters * cfg.updates_per_subproblem
    trace.record(iter=0, phase="init", objective=avg_crlb(samples, bf, tables))
    bf = solve_joint(bf, samples, tables, n_steps, trace)
    return BenchResult("gd", bf, avg_crlb(samples, bf, tables),
                       time.perf_counter() - t0, seed, trace)


def random_beams(cfg, seed):
    """Uniform configurations and constant-modulus random-phase combiners."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.0, 1.0, size=(cfg.n_bands, cfg.n_frames, cfg.n_elements))
    shape = (cfg.n_bands, cfg.n_subbands, cfg.n_frames, cfg.n_feeds)
    mag = np.sqrt(cfg.max_power / (cfg.n_subbands * cfg.n_feeds))
    s = mag * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=shape))
    return Beamforming(c, s)


def run_random(cfg, tables, samples, seed):
    t0 = time.perf_counter()
    bf = random_beams(cfg, seed)
    return BenchResult("random", bf, _safe_objective(samples, bf, tables),
                       time.perf_counter() - t0, seed)


def focus_beam(band, target, tables):
    """Amplitude-holography configuration and matched combiners towards ``target``.

    Returns ``(c, s)`` with ``c`` of shape (N_E,) in [0, 1] and ``s`` of shape
    (N_S, K_F) carrying total power ``P_max``.
    """
    cfg = tables.cfg
    target = np.asarray(target, float)
    if abs(target[0]) <= 1e-9:
        raise ValueError("focusing target must lie off the board plane")
    h = los_matrix(tables, band, target)                    # (N_S, N_E)
    j0 = (cfg.n_subbands - 1) // 2
    ref = np.angle(h[j0]) + np.angle(tables.onboard[band, j0, 0])
    best = None
    for phi0 in 2.0 * np.pi * np.arange(_PHASE_GRID) / _PHASE_GRID:
        c = 0.5 * (1.0 + np.cos(ref - phi0))
        gain = abs(np.sum(h[j0] * c * tables.onboard[band, j0, 0]))
        if best is None or gain > best[0]:
            best = (gain, c)
    c = best[1]
    g = np.einsum("jm,jkm->jk", h * c[None], tables.onboard[band])   # effective feed channel
    s = g.conj() / np.linalg.norm(g, axis=1, keepdims=True)
    s *= np.sqrt(cfg.max_power / cfg.n_subbands)
    return c, s


def transmit_rows(band, c, s, tables):
    """``t_j = c ⊙ (s_j B_ij)`` for every sub-band: (N_S, N_E)."""
    return c[None] * np.einsum("jk,jkm->jm", s, tables.onboard[band])


def roi_lattice(roi, count):
    """First ``count`` points of a row-major lattice with ceil(count^(1/3)) points per axis."""
    n = max(1, math.ceil(round(count ** (1.0 / 3.0), 12)))
    while n ** 3 < count:
        n += 1
    ticks = (np.arange(n) + 0.5) / n - 0.5
    grid = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    return np.asarray(roi.center) + grid[:count] * np.asarray(roi.dims)


def directional_beams(cfg, tables):
    """Each frame focuses on a different lattice point of the ROI."""
    targets = roi_lattice(cfg.roi, cfg.n_frames)
    c = np.empty((cfg.n_bands, cfg.n_frames, cfg.n_elements))
    s = np.empty((cfg.n_bands, cfg.n_subbands, cfg.n_frames, cfg.n_feeds), dtype=complex)
    for i in range(cfg.n_bands):
        for q, target in enumerate(targets):
            c[i, q], s[i, :, q] = focus_beam(i, target, tables)
    return Beamforming(c, s)


def run_directional(cfg, tables, samples, seed):
    t0 = time.perf_counter()
    bf = directional_beams(cfg, tables)
    return BenchResult("directional", bf, _safe_objective(samples, bf, tables),
                       time.perf_counter() - t0, seed)


def genetic(cfg, tables, samples, seed):
    """Real-coded GA over (C, Re S, Im S) with tournament selection and elitism."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    s_scale = np.sqrt(cfg.max_power / (cfg.n_subbands * cfg.n_feeds))
    pop = [random_beams(cfg, int(rng.integers(2 ** 63))) for _ in range(cfg.ga_population)]
    fit = np.array([_safe_objective(samples, bf, tables) for bf in pop])
    trace = OptTrace()
    trace.record(iter=0, phase="ga", objective=float(np.min(fit)))

    def tournament():
        idx = rng.choice(len(pop), size=cfg.ga_tournament, replace=False)
        return pop[idx[np.argmin(fit[idx])]]

    for gen in range(1, cfg.ga_generations + 1):
        order = np.argsort(fit, kind="stable")
        children = [pop[k].copy() for k in order[:cfg.ga_elitism]]
        child_fit = [fit[k] for k in order[:cfg.ga_elitism]]
        while len(children) < cfg.ga_population:
            a, b = tournament(), tournament()
            mask_c = rng.random(a.C.shape) < cfg.ga_crossover
            mask_s = rng.random(a.S.shape) < cfg.ga_crossover
            c = np.where(mask_c, a.C, b.C)
            s = np.where(mask_s, a.S, b.S)
            c = np.clip(c + cfg.ga_mutation_sigma * rng.standard_normal(c.shape), 0.0, 1.0)
            noise = rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape)
            s = project_power(s + cfg.ga_mutation_sigma * s_scale * noise, cfg.max_power)
            child = Beamforming(c, s)
            children.append(child)
            child_fit.append(_safe_objective(samples, child, tables))
        pop, fit = children, np.array(child_fit)
        trace.record(iter=gen, phase="ga", objective=float(np.min(fit)))
    best = int(np.argmin(fit))
    return BenchResult("ga", pop[best], float(fit[best]), time.perf_counter() - t0, seed, trace)


METHODS = {
    "alt": run_alternate,
    "gd": direct_gd,
    "ga": genetic,
    "directional": run_directional,
    "random": run_random,
}


def run_method(name, cfg, tables, samples, seed):
    try:
        fn = METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None
    return fn(cfg, tables, samples, seed)
