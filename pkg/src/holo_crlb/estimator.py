"""scikit-learn style wrapper around the beamforming optimisers."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import bench
from .channel import build_tables
from .fisher import crlb_values
from .scene import SystemConfig, sample_positions


def check_positions(X, name="X"):
    """Validate an (n, 3) array of finite user positions off the board plane."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns (x, y, z), got {X.shape[1]}")
    if np.any(np.abs(X[:, 0]) <= 1e-9):
        raise ValueError(f"{name} contains positions on the board plane x=0")
    return X


class HoloBeamformer(BaseEstimator):
    """Optimise the beamforming for a set of user positions.

    Parameters
    ----------
    config : SystemConfig or None
        System description; ``None`` uses the default configuration.
    method : str
        One of ``alt``, ``gd``, ``ga``, ``directional`` or ``random``.
    random_state : int
        Seed for initialisation and for sampling when ``fit`` gets no data.

    Attributes
    ----------
    beamforming_ : Beamforming
    objective_ : float
        Average CRLB on the fitting positions.
    trace_ : OptTrace
    """

    def __init__(self, config=None, method="alt", random_state=0):
        self.config = config
        self.method = method
        self.random_state = random_state

    def _cfg(self):
        cfg = SystemConfig() if self.config is None else self.config
        if not isinstance(cfg, SystemConfig):
            raise TypeError("config must be a SystemConfig or None")
        return cfg

    def fit(self, X=None, y=None):
        """Fit to positions ``X`` (n, 3); ``None`` draws ROI samples. ``y`` is ignored."""
        if self.method not in bench.METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        cfg = self._cfg()
        if X is None:
            X = sample_positions(cfg.roi, cfg.n_roi_samples, self.random_state)
        X = check_positions(X)
        self.tables_ = build_tables(cfg)
        res = bench.run_method(self.method, cfg, self.tables_, X, self.random_state)
        self.beamforming_ = res.beamforming
        self.objective_ = res.objective
        self.trace_ = res.trace
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        """CRLB [m^2] at each position under the fitted beamforming."""
        check_is_fitted(self, "beamforming_")
        return crlb_values(check_positions(X), self.beamforming_, self.tables_)

    def score(self, X, y=None):
        """Negative average CRLB, so larger is better."""
        return -float(np.mean(self.predict(X)))
