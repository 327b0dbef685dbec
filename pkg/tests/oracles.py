"""Independent reference implementations used by several test modules."""

import numpy as np

from holo_crlb.channel import _cn, band_generators, los_gain, onboard_gain, sample_multipath


def scalar_chain(p_user, bf, tables, include_multipath=True, include_noise=True, seed=0):
    """Received samples built one element at a time from the scalar gains.

    Random draws are taken from the same per-band generators and in the same
    order as the matrix implementation, so both paths see identical noise.
    """
    cfg, geom, plan = tables.cfg, tables.geom, tables.plan
    n_b, n_s, q, k_f, n_e = bf.shape
    out = np.zeros((n_b, n_s * q), dtype=complex)
    for i, rng in enumerate(band_generators(seed, n_b)):
        h_mp = sample_multipath(tables, i, rng) if include_multipath else None
        noise = np.sqrt(tables.noise_var) * _cn(rng, (n_s * q,)) if include_noise else None
        for j in range(n_s):
            f = plan.subband_freqs[i, j]
            for fr in range(q):
                r = j * q + fr
                acc = 0j
                for m in range(n_e):
                    h = complex(los_gain(f, p_user, geom.element_positions[m],
                                         cfg.gain_element, cfg.gain_user))
                    if h_mp is not None:
                        h += h_mp[r, m]
                    feed_sum = 0j
                    for k in range(k_f):
                        kappa = complex(onboard_gain(f, geom.feed_positions[k],
                                                     geom.element_positions[m],
                                                     cfg.refractive_index))
                        feed_sum += kappa * bf.S[i, j, fr, k]
                    acc += h * bf.C[i, fr, m] * feed_sum
                if noise is not None:
                    acc += noise[r]
                out[i, r] = acc
    return out


def fd_central(fun, x, step):
    """Central difference of a vector-valued function of a real 3-vector."""
    x = np.asarray(x, float)
    cols = []
    for u in range(x.size):
        e = np.zeros_like(x)
        e[u] = step
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * step))
    return np.stack(cols)
