"""Fisher information and CRLB of the 3-D user position."""

from dataclasses import dataclass

import numpy as np

from . import linx
from .channel import assemble_T_all, los_batch, los_tensor_grad

FIM_COND_LIMIT = 1e12


class SingularFimError(ValueError):
    """The FIM cannot be inverted: the position is unidentifiable."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = None if position is None else np.asarray(position, float)


@dataclass(frozen=True)
class BeamState:
    """Position-independent quantities for one beamforming."""

    T: np.ndarray          # (N_B, R, N_E)
    lam: np.ndarray        # (N_B, R, R)
    factors: tuple         # one HermFactor per band


@dataclass(frozen=True)
class FimEval:
    position: np.ndarray
    fim: np.ndarray        # (3, 3)
    per_band: np.ndarray   # (N_B, 3, 3)
    crlb: float
    dy: np.ndarray         # (N_B, 3, R)
    zeta: np.ndarray       # (N_B, 3, R)
    lambda_factors: tuple


def lambda_matrix(band, bf, tables, T=None):
    """Covariance of the received vector of one band (multipath + noise)."""
    if T is None:
        T = assemble_T_all(bf, tables)[band]
    tvt = T @ tables.angular_cov[band] @ T.conj().T
    lam = tables.kernel_ft[band] * tvt + tables.noise_var * np.eye(T.shape[0])
    return 0.5 * (lam + lam.conj().T)


def prepare(bf, tables):
    T = assemble_T_all(bf, tables)
    lam = np.stack([lambda_matrix(i, bf, tables, T[i]) for i in range(T.shape[0])])
    if not tables.noise_var > 0:
        raise linx.NotPositiveDefiniteError("noise variance must be positive")
    factors = tuple(linx.HermFactor(l) for l in lam)
    return BeamState(T=T, lam=lam, factors=factors)


def replicated_los_grad(tables, positions):
    """Q-row-replicated LoS gradients for a batch: (N, 3, N_B, R, N_E)."""
    return np.repeat(los_batch(tables, positions)[1], tables.cfg.n_frames, axis=3)


def batch_terms(positions, state, tables, g=None):
    """Mean-signal derivatives, ``zeta`` and FIMs for a batch of positions.

    ``g`` may hold precomputed :func:`replicated_los_grad` output.
    """
    positions = np.atleast_2d(np.asarray(positions, float))
    if g is None:
        g = replicated_los_grad(tables, positions)
    dy = np.sum(g * state.T[None, None], axis=-1)            # (N, 3, N_B, R)
    n, _, n_b, r = dy.shape
    zeta = np.empty_like(dy)
    for i, fac in enumerate(state.factors):
        rhs = dy[:, :, i, :].reshape(n * 3, r).T
        zeta[:, :, i, :] = fac.solve(rhs).T.reshape(n, 3, r)
    per_band = 2.0 * np.einsum("nubr,nvbr->nbuv", dy.conj(), zeta).real
    per_band = 0.5 * (per_band + np.swapaxes(per_band, -1, -2))
    return g, dy, zeta, per_band


def checked_inverse(f, positions):
    """Invert a stack of FIMs (N, 3, 3); any ill-conditioned one raises."""
    f = np.asarray(f, float)
    positions = np.atleast_2d(positions) if positions is not None else [None] * len(f)
    finite = np.all(np.isfinite(f), axis=(1, 2))
    cond = np.full(len(f), np.inf)
    if np.any(finite):
        cond[finite] = np.linalg.cond(f[finite])
    bad = np.flatnonzero(~(cond <= FIM_COND_LIMIT))
    if bad.size:
        k = bad[0]
        pos = positions[k]
        where = "" if pos is None else f"position {np.round(pos, 6).tolist()} "
        raise SingularFimError(
            f"{where}unidentifiable under this beamforming (FIM condition {cond[k]:.3e})", pos)
    return np.linalg.inv(f)


def _checked_inverse(f, position):
    return checked_inverse(np.asarray(f, float)[None], None if position is None else
                           np.asarray(position, float)[None])[0]


def fim(p_user, bf, tables, state=None):
    """Evaluate the FIM and CRLB at one user position."""
    state = state or prepare(bf, tables)
    p = np.asarray(p_user, float)
    _, dy, zeta, per_band = batch_terms(p[None], state, tables)
    f = per_band[0].sum(axis=0)
    inv = _checked_inverse(f, p)
    return FimEval(position=p, fim=f, per_band=per_band[0], crlb=float(np.trace(inv)),
                   dy=np.moveaxis(dy[0], 1, 0), zeta=np.moveaxis(zeta[0], 1, 0),
                   lambda_factors=state.factors)


def dy_dp(band, axis, bf, tables, p_user):
    """Derivative of the noiseless received vector of one band w.r.t. a coordinate."""
    T = assemble_T_all(bf, tables)[band]
    g = los_tensor_grad(tables, p_user)[axis, band]
    return np.sum(np.repeat(g, tables.cfg.n_frames, axis=0) * T, axis=1)


def crlb(fim_eval):
    """Trace of the inverse FIM (accepts a :class:`FimEval` or a 3x3 array)."""
    if isinstance(fim_eval, FimEval):
        f, pos = fim_eval.fim, fim_eval.position
    else:
        f, pos = np.asarray(fim_eval, float), None
    return float(np.trace(_checked_inverse(f, pos)))


def crlb_values(samples, bf, tables, state=None, g=None):
    """Per-sample CRLB for a batch of positions."""
    state = state or prepare(bf, tables)
    samples = np.atleast_2d(np.asarray(samples, float))
    _, _, _, per_band = batch_terms(samples, state, tables, g)
    inv = checked_inverse(per_band.sum(axis=1), samples)
    return np.trace(inv, axis1=1, axis2=2)


def avg_crlb(samples, bf, tables, state=None):
    """Mean CRLB over sample positions; a singular sample raises."""
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample position")
    return float(np.mean(crlb_values(samples, bf, tables, state)))
