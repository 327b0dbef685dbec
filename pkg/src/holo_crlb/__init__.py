"""CRLB-based positioning and beamforming for multi-band holographic surfaces."""

from .bench import BenchResult, direct_gd, directional_beams, focus_beam, genetic, random_beams
from .channel import Beamforming, ChannelTables, build_tables, synth_received
from .estimator import HoloBeamformer
from .fisher import SingularFimError, avg_crlb, crlb, fim
from .grad import grad_avg_crlb_C, grad_avg_crlb_S, gradient_check
from .opt import alternate, solve_sp1, solve_sp2
from .scene import ConfigError, SystemConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Beamforming", "BenchResult", "ChannelTables", "ConfigError", "HoloBeamformer",
    "SingularFimError", "SystemConfig", "alternate", "avg_crlb", "build_tables", "crlb",
    "direct_gd", "directional_beams", "fim", "focus_beam", "genetic", "grad_avg_crlb_C",
    "grad_avg_crlb_S", "gradient_check", "load_config", "random_beams", "solve_sp1",
    "solve_sp2", "synth_received",
]
