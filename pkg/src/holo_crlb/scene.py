"""Experiment configuration, RHS geometry, band plan and ROI sampling."""

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPEED_OF_LIGHT = 299792458.0


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SystemConfig:
    """All parameters of one experiment.

    Defaults describe a small desk-scale system: two bands at 2.5 and 3 GHz,
    a 4x4 surface with 0.3-wavelength spacing and a 10 x 10 x 2 m ROI.
    """

    # bands
    n_bands: int = 2
    n_subbands: int = 4
    band_base_hz: float = 2.0e9
    band_step_hz: float = 0.5e9
    subband_width_hz: float = 10e6
    rms_delay_spread_s: float | tuple = 50e-9
    # system
    n_frames: int = 4
    n_feeds: int = 2
    n_elements: int = 16
    element_spacing_factor: float = 0.3
    noise_psd: float = 1e-20
    max_power: float = 0.1
    refractive_index: float = 2.1
    gain_element: float = 1.0
    gain_user: float = 1.0
    max_speed_mps: float = 1.0
    frame_duration_s: float = 1e-3
    angular_spread_deg: float = 10.0
    pap_quadrature_nodes: int = 32
    # roi
    roi_center: tuple = (10.0, 0.0, 0.0)
    roi_dims: tuple = (10.0, 10.0, 2.0)
    n_roi_samples: int = 10
    # optimizer
    max_outer_iters: int = 10
    updates_per_subproblem: int = 20
    barrier_mu0: float = 1e-3
    barrier_shrink: float = 0.2
    tr_radius0: float = 0.1
    ga_population: int = 20
    ga_generations: int = 10
    ga_tournament: int = 3
    ga_crossover: float = 0.5
    ga_mutation_sigma: float = 0.05
    ga_elitism: int = 1
    # rng
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("roi_center", "roi_dims"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 3:
                raise ConfigError(f"{name} must have 3 components")
            object.__setattr__(self, name, val)
        spread = self.rms_delay_spread_s
        if np.ndim(spread) == 0:
            spread = (float(spread),) * self.n_bands
        spread = tuple(float(s) for s in spread)
        object.__setattr__(self, "rms_delay_spread_s", spread)
        self.validate()

    def validate(self):
        counts = ("n_bands", "n_subbands", "n_frames", "n_feeds", "n_elements",
                  "pap_quadrature_nodes", "n_roi_samples", "max_outer_iters",
                  "updates_per_subproblem", "ga_population", "ga_generations",
                  "ga_tournament")
        for name in counts:
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        side = math.isqrt(self.n_elements)
        if side * side != self.n_elements:
            raise ConfigError(f"n_elements={self.n_elements} is not a perfect square")
        positive = ("element_spacing_factor", "band_base_hz", "band_step_hz",
                    "subband_width_hz", "noise_psd", "max_power", "refractive_index",
                    "gain_element", "gain_user", "frame_duration_s",
                    "angular_spread_deg", "barrier_mu0", "tr_radius0",
                    "ga_mutation_sigma")
        for name in positive:
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be positive, got {val!r}")
        if not (np.isfinite(self.max_speed_mps) and self.max_speed_mps >= 0):
            raise ConfigError(f"max_speed_mps must be non-negative, got {self.max_speed_mps!r}")
        if len(self.rms_delay_spread_s) != self.n_bands:
            raise ConfigError("rms_delay_spread_s needs one value per band")
        if any(not s > 0 for s in self.rms_delay_spread_s):
            raise ConfigError("rms_delay_spread_s must be positive")
        if any(not d > 0 for d in self.roi_dims):
            raise ConfigError("roi_dims must be positive")
        if not 0.0 < self.barrier_shrink < 1.0:
            raise ConfigError("barrier_shrink must lie in (0, 1)")
        if not 0.0 <= self.ga_crossover <= 1.0:
            raise ConfigError("ga_crossover must lie in [0, 1]")
        if not 0 <= self.ga_elitism < self.ga_population:
            raise ConfigError("ga_elitism must be smaller than ga_population")
        if self.n_bands > 1 and self.band_step_hz < self.n_subbands * self.subband_width_hz:
            raise ConfigError("bands overlap: band_step_hz < n_subbands * subband_width_hz")

    @property
    def noise_var(self):
        return self.noise_psd * self.subband_width_hz

    @property
    def roi(self):
        return RoiBox(np.array(self.roi_center), np.array(self.roi_dims))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["roi_center"] = list(self.roi_center)
        out["roi_dims"] = list(self.roi_dims)
        out["rms_delay_spread_s"] = list(self.rms_delay_spread_s)
        return out

    @classmethod
    def desk(cls, **changes):
        """The small canonical instance used by the gradient and ordering checks."""
        base = dict(n_bands=2, n_subbands=2, n_frames=2, n_feeds=2, n_elements=4,
                    n_roi_samples=3)
        base.update(changes)
        return cls(**base)


TOML_TABLES = {
    "system": ("n_frames", "n_feeds", "n_elements", "element_spacing_factor",
               "noise_psd", "max_power", "refractive_index", "gain_element",
               "gain_user", "max_speed_mps", "frame_duration_s",
               "angular_spread_deg", "pap_quadrature_nodes"),
    "bands": ("n_bands", "n_subbands", "band_base_hz", "band_step_hz",
              "subband_width_hz", "rms_delay_spread_s"),
    "roi": ("roi_center", "roi_dims", "n_roi_samples"),
    "optimizer": ("max_outer_iters", "updates_per_subproblem", "barrier_mu0",
                  "barrier_shrink", "tr_radius0", "ga_population", "ga_generations",
                  "ga_tournament", "ga_crossover", "ga_mutation_sigma", "ga_elitism"),
    "rng": ("rng_seed",),
}


def config_from_mapping(data):
    """Build a :class:`SystemConfig` from parsed TOML tables.

    Missing keys fall back to defaults; unknown tables or keys are rejected.
    """
    kwargs = {}
    for table, values in data.items():
        if table not in TOML_TABLES:
            raise ConfigError(f"unknown config table [{table}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{table}] must be a table")
        for key, val in values.items():
            if key not in TOML_TABLES[table]:
                raise ConfigError(f"unknown key '{key}' in [{table}]")
            kwargs[key] = val
    try:
        return SystemConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_mapping(data)


def dump_config_toml(cfg):
    """Render a config as TOML text (round-trips through :func:`load_config`)."""
    d = cfg.to_dict()
    lines = []
    for table, keys in TOML_TABLES.items():
        lines.append(f"[{table}]")
        for key in keys:
            val = d[key]
            if isinstance(val, list):
                txt = "[" + ", ".join(repr(float(v)) for v in val) + "]"
            elif isinstance(val, bool):
                txt = str(val).lower()
            else:
                txt = repr(val)
            lines.append(f"{key} = {txt}")
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class BandPlan:
    centers: np.ndarray
    subband_freqs: np.ndarray
    lambda_avr: float


@dataclass(frozen=True)
class RhsGeometry:
    element_positions: np.ndarray
    feed_positions: np.ndarray
    spacing: float = field(default=0.0)


@dataclass(frozen=True)
class RoiBox:
    center: np.ndarray
    dims: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.dims) <= 0):
            raise ConfigError("ROI dims must be positive")

    @property
    def lower(self):
        return np.asarray(self.center) - 0.5 * np.asarray(self.dims)

    @property
    def upper(self):
        return np.asarray(self.center) + 0.5 * np.asarray(self.dims)


def build_band_plan(cfg):
    idx = np.arange(1, cfg.n_bands + 1)
    centers = cfg.band_base_hz + cfg.band_step_hz * idx
    offsets = (np.arange(1, cfg.n_subbands + 1) - (cfg.n_subbands + 1) / 2.0)
    sub = centers[:, None] + offsets[None, :] * cfg.subband_width_hz
    if cfg.n_bands > 1 and np.min(np.diff(centers)) < cfg.n_subbands * cfg.subband_width_hz:
        raise ConfigError("bands overlap")
    return BandPlan(centers=centers, subband_freqs=sub,
                    lambda_avr=SPEED_OF_LIGHT / float(np.mean(centers)))


def build_geometry(cfg, plan):
    """Square element grid in the x=0 plane, feeds on a line below it."""
    side = math.isqrt(cfg.n_elements)
    if side * side != cfg.n_elements:
        raise ConfigError(f"n_elements={cfg.n_elements} is not a perfect square")
    d = cfg.element_spacing_factor * plan.lambda_avr
    offs = (np.arange(side) - (side - 1) / 2.0) * d
    zz, yy = np.meshgrid(offs, offs, indexing="ij")
    elems = np.column_stack([np.zeros(cfg.n_elements), yy.ravel(), zz.ravel()])
    if cfg.n_feeds > 1:
        fy = np.linspace(offs[0], offs[-1], cfg.n_feeds)
    else:
        fy = np.zeros(1)
    feeds = np.column_stack([np.zeros(cfg.n_feeds), fy,
                             np.full(cfg.n_feeds, offs[0] - 2.0 * d)])
    return RhsGeometry(element_positions=elems, feed_positions=feeds, spacing=d)


def sample_positions(roi, n, seed):
    """``n`` i.i.d. uniform points in the ROI box, shape (n, 3)."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    return rng.uniform(roi.lower, roi.upper, size=(n, 3))
