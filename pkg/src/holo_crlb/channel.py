"""Physical channel: LoS gains, onboard propagation, multipath statistics,
beamforming assembly, received-signal synthesis and band capacity.

Array conventions used throughout the package:

* ``C``  real, shape ``(N_B, Q, N_E)``
* ``S``  complex, shape ``(N_B, N_S, Q, K_F)``
* ``B``  complex, shape ``(N_B, N_S, K_F, N_E)``
* ``T_i`` complex, shape ``(N_S*Q, N_E)`` with row ``j*Q + q`` (sub-band major)
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import linx
from .scene import SPEED_OF_LIGHT, build_band_plan, build_geometry, sample_positions

_V_NORM_SEED = 20230
_V_NORM_SAMPLES = 256
_MIN_DISTANCE = 1e-6


def onboard_gain(f, p_src, p_dst, n_r):
    """Unit-modulus phase gain of on-board propagation between two points."""
    dist = np.linalg.norm(np.asarray(p_dst, float) - np.asarray(p_src, float), axis=-1)
    return np.exp(-1j * 2.0 * np.pi * n_r * f / SPEED_OF_LIGHT * dist)


def los_gain(f, p_user, p_elem, g_e=1.0, g_u=1.0):
    """Free-space LoS gain from a user to one element."""
    dist = np.linalg.norm(np.asarray(p_user, float) - np.asarray(p_elem, float), axis=-1)
    if np.any(dist <= _MIN_DISTANCE):
        raise ValueError("user coincides with an element; LoS gain is singular")
    return (SPEED_OF_LIGHT * g_e * g_u * np.exp(-1j * 2.0 * np.pi * f / SPEED_OF_LIGHT * dist)
            / (4.0 * np.pi * f * dist))


@dataclass
class Beamforming:
    """Decision variables: real configurations ``C`` and complex combiners ``S``."""

    C: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        self.S = np.asarray(self.S, dtype=complex)
        if self.C.ndim != 3 or self.S.ndim != 4:
            raise ValueError("C must be (N_B, Q, N_E) and S must be (N_B, N_S, Q, K_F)")
        if self.C.shape[:2] != (self.S.shape[0], self.S.shape[2]):
            raise ValueError(f"inconsistent shapes C{self.C.shape} S{self.S.shape}")

    @property
    def shape(self):
        n_b, n_s, q, k_f = self.S.shape
        return n_b, n_s, q, k_f, self.C.shape[2]

    def copy(self):
        return Beamforming(self.C.copy(), self.S.copy())

    def power(self):
        """Per (band, frame) combining power, shape ``(N_B, Q)``."""
        return np.sum(np.abs(self.S) ** 2, axis=(1, 3))

    def power_residual(self, p_max):
        return float(np.max(np.abs(self.power() - p_max)) / p_max)

    def is_feasible(self, p_max, tol=1e-9, strict=False):
        if strict:
            box = np.all(self.C > 0.0) and np.all(self.C < 1.0)
        else:
            box = np.all(self.C >= 0.0) and np.all(self.C <= 1.0)
        return bool(box) and self.power_residual(p_max) <= tol

    def to_dict(self):
        return {
            "version": 1,
            "shape": {"n_bands": self.S.shape[0], "n_subbands": self.S.shape[1],
                      "n_frames": self.S.shape[2], "n_feeds": self.S.shape[3],
                      "n_elements": self.C.shape[2]},
            "C": self.C.tolist(),
            "S": np.stack([self.S.real, self.S.imag], axis=-1).tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != 1:
            raise ValueError(f"unsupported beamforming document version {data.get('version')!r}")
        s = np.asarray(data["S"], dtype=float)
        return cls(np.asarray(data["C"], dtype=float), s[..., 0] + 1j * s[..., 1])


@dataclass(frozen=True)
class ChannelTables:
    """Precomputed, immutable per-configuration channel quantities."""

    cfg: object
    plan: object
    geom: object
    onboard: np.ndarray      # (N_B, N_S, K_F, N_E)
    angular_cov: np.ndarray  # (N_B, N_E, N_E)
    kernel_f: np.ndarray     # (N_B, N_S, N_S)
    kernel_t: np.ndarray     # (N_B, Q, Q)
    kernel_ft: np.ndarray    # (N_B, N_S*Q, N_S*Q)
    noise_var: float

    @property
    def dims(self):
        c = self.cfg
        return c.n_bands, c.n_subbands, c.n_frames, c.n_feeds, c.n_elements

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def without_multipath(self):
        return self.replace(angular_cov=np.zeros_like(self.angular_cov))


def onboard_matrix(f, geom, n_r):
    """``B`` for one frequency: (K_F, N_E) onboard gains feed -> element."""
    diff = geom.feed_positions[:, None, :] - geom.element_positions[None, :, :]
    return onboard_gain(f, np.zeros(3), diff, n_r)


def los_tensor(tables, p_user):
    """LoS gains for every band, sub-band and element: (N_B, N_S, N_E)."""
    return los_batch(tables, np.asarray(p_user, float)[None])[0][0]


def los_tensor_grad(tables, p_user):
    """Position derivative of :func:`los_tensor`: (3, N_B, N_S, N_E)."""
    return los_batch(tables, np.asarray(p_user, float)[None])[1][0]


def los_batch(tables, positions):
    """LoS gains (N, N_B, N_S, N_E) and their position gradients (N, 3, N_B, N_S, N_E)."""
    cfg = tables.cfg
    positions = np.atleast_2d(np.asarray(positions, float))
    diff = positions[:, None, :] - tables.geom.element_positions[None]   # (N, N_E, 3)
    dist = np.linalg.norm(diff, axis=2)
    if np.any(dist <= _MIN_DISTANCE):
        raise ValueError("a user position coincides with an element")
    f = tables.plan.subband_freqs[None, :, :, None]
    d = dist[:, None, None, :]
    h = (SPEED_OF_LIGHT * cfg.gain_element * cfg.gain_user
         * np.exp(-1j * 2.0 * np.pi * f / SPEED_OF_LIGHT * d) / (4.0 * np.pi * f * d))
    radial = (-1.0 / d - 1j * 2.0 * np.pi * f / SPEED_OF_LIGHT) * h
    unit = np.moveaxis(diff / dist[..., None], 2, 1)                      # (N, 3, N_E)
    return h, unit[:, :, None, None, :] * radial[:, None]


def los_matrix(tables, band, p_user):
    """``H_i^LoS(p)``, shape (N_S, N_E)."""
    return los_tensor(tables, p_user)[band]


def los_matrix_grad(tables, band, axis, p_user):
    """Derivative of ``H_i^LoS`` with respect to coordinate ``axis``."""
    return los_tensor_grad(tables, p_user)[axis, band]


def unit_direction(azimuth, elevation):
    """Unit vector with x along the board normal."""
    az = np.asarray(azimuth, float)
    el = np.asarray(elevation, float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def array_response(f, geom, azimuth, elevation, g_e=1.0):
    """Array response vector(s); trailing axis indexes elements."""
    n_hat = unit_direction(azimuth, elevation)
    rel = geom.element_positions - geom.element_positions[0]
    phase = 2.0 * np.pi * f / SPEED_OF_LIGHT * (n_hat @ rel.T)
    return g_e * np.exp(1j * phase)


def _half_gauss_legendre(n):
    # Gauss-Legendre on [-pi/2, 0] and [0, pi/2] separately: the Laplace
    # profile has a kink at zero
    half = max(n // 2, 1)
    x, w = np.polynomial.legendre.leggauss(half)
    lo = 0.25 * np.pi * (x - 1.0)
    hi = 0.25 * np.pi * (x + 1.0)
    return np.concatenate([lo, hi]), np.concatenate([w, w]) * 0.25 * np.pi


def laplace_pap(angle, spread_rad):
    b = spread_rad / np.sqrt(2.0)
    return np.exp(-np.abs(angle) / b) / (2.0 * b)


def average_los_power(tables_like, band, roi, n=_V_NORM_SAMPLES, seed=_V_NORM_SEED):
    """ROI average of the per-element LoS power at the centre sub-band."""
    cfg, plan, geom = tables_like
    j0 = (cfg.n_subbands - 1) // 2
    f = plan.subband_freqs[band, j0]
    pts = sample_positions(roi, n, seed)
    d = np.linalg.norm(pts[:, None, :] - geom.element_positions[None], axis=2)
    amp = SPEED_OF_LIGHT * cfg.gain_element * cfg.gain_user / (4.0 * np.pi * f * d)
    return float(np.mean(amp ** 2))


def angular_covariance(cfg, plan, geom, band, n_nodes=None, roi=None):
    """Multipath spatial covariance ``V_i`` from a Laplacian power-angle profile.

    Integrated on the front hemisphere with tensor Gauss-Legendre nodes and
    scaled so that ``tr(V)/N_E`` equals the ROI-average LoS power.
    """
    n_nodes = n_nodes or cfg.pap_quadrature_nodes
    if n_nodes < 8:
        raise ValueError("need at least 8 quadrature nodes per axis")
    roi = roi if roi is not None else cfg.roi
    nodes, weights = _half_gauss_legendre(n_nodes)
    spread = np.deg2rad(cfg.angular_spread_deg)
    az, el = np.meshgrid(nodes, nodes, indexing="ij")
    w = (weights[:, None] * weights[None, :]
         * laplace_pap(az, spread) * laplace_pap(el, spread)).ravel()
    a = array_response(plan.centers[band], geom, az.ravel(), el.ravel(), cfg.gain_element)
    v = (a.T * w) @ a.conj()
    v = 0.5 * (v + v.conj().T)
    target = average_los_power((cfg, plan, geom), band, roi)
    return v * (target * cfg.n_elements / np.trace(v).real)


def rho_f(plan, delay_spread, band, j1, j2):
    df = plan.subband_freqs[band, j1] - plan.subband_freqs[band, j2]
    return 1.0 / (1.0 + 1j * 2.0 * np.pi * delay_spread * df)


def rho_t(cfg, plan, band, q1, q2):
    f_d = cfg.max_speed_mps * plan.centers[band] / SPEED_OF_LIGHT
    return linx.bessel_j0(2.0 * np.pi * f_d * (q1 - q2) * cfg.frame_duration_s)


def kernels(cfg, plan, band):
    """Frequency, time and joint decorrelation kernels for one band."""
    js = np.arange(cfg.n_subbands)
    qs = np.arange(cfg.n_frames)
    k_f = rho_f(plan, cfg.rms_delay_spread_s[band], band, js[:, None], js[None, :])
    k_f = np.asarray(k_f, dtype=complex)
    k_t = np.asarray(rho_t(cfg, plan, band, qs[:, None], qs[None, :]), dtype=float)
    j_q = np.ones((cfg.n_frames, cfg.n_frames))
    j_s = np.ones((cfg.n_subbands, cfg.n_subbands))
    k_ft = linx.hadamard(linx.kron(k_f, j_q), linx.kron(j_s, k_t))
    return k_f, k_t, k_ft


def build_tables(cfg):
    plan = build_band_plan(cfg)
    geom = build_geometry(cfg, plan)
    onboard = np.stack([
        np.stack([onboard_matrix(f, geom, cfg.refractive_index) for f in plan.subband_freqs[i]])
        for i in range(cfg.n_bands)])
    v = np.stack([angular_covariance(cfg, plan, geom, i) for i in range(cfg.n_bands)])
    ks = [kernels(cfg, plan, i) for i in range(cfg.n_bands)]
    return ChannelTables(
        cfg=cfg, plan=plan, geom=geom, onboard=onboard, angular_cov=v,
        kernel_f=np.stack([k[0] for k in ks]),
        kernel_t=np.stack([k[1] for k in ks]),
        kernel_ft=np.stack([k[2] for k in ks]),
        noise_var=cfg.noise_var,
    )


def assemble_T_all(bf, tables):
    """All ``T_i`` at once: (N_B, N_S*Q, N_E)."""
    n_b, n_s, q, _, n_e = bf.shape
    if tables.onboard.shape[:2] != (n_b, n_s) or tables.onboard.shape[3] != n_e:
        raise ValueError("beamforming does not match channel tables")
    sb = np.einsum("ijqk,ijkm->ijqm", bf.S, tables.onboard)
    return (bf.C[:, None] * sb).reshape(n_b, n_s * q, n_e)


def assemble_T(band, bf, tables):
    """``T_i`` with row block j equal to ``C_i ⊙ (S_ij B_ij)``."""
    return assemble_T_all(bf, tables)[band]


def multipath_factors(tables, band):
    """Square-root factors (row, column) of the multipath covariance."""
    l_f = linx.psd_sqrt_factor(tables.kernel_f[band])
    l_t = linx.psd_sqrt_factor(tables.kernel_t[band])
    l_v = linx.psd_sqrt_factor(tables.angular_cov[band])
    return np.kron(l_f, l_t), l_v


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_multipath(tables, band, rng, n_draws=None):
    """Draw ``H_i^MP`` (N_S*Q, N_E), or a stack of ``n_draws`` of them."""
    l_row, l_col = multipath_factors(tables, band)
    shape = (l_row.shape[1], l_col.shape[1])
    if n_draws is None:
        return l_row @ _cn(rng, shape) @ l_col.T
    z = _cn(rng, (n_draws,) + shape)
    return l_row[None] @ z @ l_col.T[None]


def band_generators(seed, n_bands):
    if isinstance(seed, np.random.SeedSequence):
        # copy so that repeated calls with the same object give the same streams
        ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n_bands)]


def synth_received(p_user, bf, tables, include_multipath=True, include_noise=True, seed=0):
    """Received signals of the positioning phase, shape (N_B, N_S*Q).

    The transmitted symbol is 1. Each band uses its own generator, first for
    the multipath draw and then for the noise.
    """
    t_all = assemble_T_all(bf, tables)
    h_los = los_tensor(tables, p_user)
    n_b, n_s, q, _, n_e = bf.shape
    out = np.empty((n_b, n_s * q), dtype=complex)
    for i, rng in enumerate(band_generators(seed, n_b)):
        h = np.repeat(h_los[i], q, axis=0)
        if include_multipath:
            h = h + sample_multipath(tables, i, rng)
        y = np.sum(h * t_all[i], axis=1)
        if include_noise:
            y = y + np.sqrt(tables.noise_var) * _cn(rng, y.shape)
        out[i] = y
    return out


def capacity(band, t_rows, p_user, tables):
    """Band capacity in bit/s for transmit rows ``t_rows`` (N_S, N_E)."""
    t_rows = np.asarray(t_rows, dtype=complex)
    h = los_matrix(tables, band, p_user)
    if t_rows.shape != h.shape:
        raise ValueError(f"t_rows must have shape {h.shape}")
    v = tables.angular_cov[band]
    los_pow = np.abs(np.sum(t_rows * h, axis=1)) ** 2
    mp_pow = np.einsum("jm,mn,jn->j", t_rows, v, t_rows.conj()).real
    snr = (los_pow + mp_pow) / tables.noise_var
    return float(np.sum(tables.cfg.subband_width_hz * np.log2(1.0 + snr)))
