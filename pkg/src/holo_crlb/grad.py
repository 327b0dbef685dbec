"""Analytic gradients of the sampled average CRLB and a finite-difference oracle.

Complex variables follow the real-coordinate convention: the gradient with
respect to ``S`` is ``df/dRe(S) + 1j * df/dIm(S)``, so ``S - t * grad``
is a descent step.

For any real function ``F`` of ``T`` with ``dF = 2 Re sum(Gamma * dT)`` the
coefficient ``Gamma`` is called the *holomorphic coefficient* below. The
per-(u, v) blocks ``A`` (mean-signal term) and ``B`` (covariance coupling
term) are such coefficients.
"""

import numpy as np

from . import linx
from .fisher import batch_terms, checked_inverse, prepare, replicated_los_grad


def zeta(band, axis, fim_eval):
    """``Lambda_i^{-1} dy_i/dp_u`` cached on the FIM evaluation."""
    return fim_eval.zeta[band, axis]


def _slice(vec, j, q):
    return vec[j * q:(j + 1) * q]


def _coupling(band, fim_eval, tables, T, j):
    """``reshape(pface(K_ft slice_j, kron(V T^H, 1_Q)) zeta_v)`` for each v: (3, Q, N_E)."""
    q = tables.cfg.n_frames
    n_e = T.shape[1]
    k_slice = tables.kernel_ft[band][j * q:(j + 1) * q]
    vth = tables.angular_cov[band] @ T.conj().T
    big = linx.pface(k_slice, np.kron(vth, np.ones((q, 1))))
    return np.stack([linx.reshape_block(big @ fim_eval.zeta[band, v], q, n_e)
                     for v in range(3)])


def _los_grad_rep(tables, band, p):
    from .channel import los_tensor_grad
    return los_tensor_grad(tables, p)[:, band]  # (3, N_S, N_E)


def _blocks_C(band, fim_eval, bf, tables):
    """Holomorphic coefficients A^c_uv and B^c_uv, each (3, 3, Q, N_E)."""
    cfg = tables.cfg
    q = cfg.n_frames
    T = prepare(bf, tables).T[band]
    g = _los_grad_rep(tables, band, fim_eval.position)
    a = np.zeros((3, 3, q, cfg.n_elements), dtype=complex)
    b = np.zeros_like(a)
    for j in range(cfg.n_subbands):
        sb = bf.S[band, j] @ tables.onboard[band, j]
        w = _coupling(band, fim_eval, tables, T, j)
        for u in range(3):
            zu = np.outer(_slice(fim_eval.zeta[band, u], j, q).conj(), np.ones(cfg.n_elements))
            for v in range(3):
                g_v = np.repeat(g[v, j][None], q, axis=0)
                a[u, v] += zu * g_v * sb
                b[u, v] -= zu * sb * w[v]
    return a, b


def fim_partial_C(band, u, v, fim_eval, bf, tables):
    """``d[I_FIM]_uv / dC_i`` as a real (Q, N_E) matrix."""
    a, b = _blocks_C(band, fim_eval, bf, tables)
    return 2.0 * np.real(a[v, u] + a[u, v] + b[u, v] + b[v, u])


def _blocks_S(band, j, fim_eval, bf, tables):
    """Holomorphic coefficients A^s_ij,uv and B^s_ij,uv, each (3, 3, Q, K_F)."""
    cfg = tables.cfg
    q, k_f, n_e = cfg.n_frames, cfg.n_feeds, cfg.n_elements
    T = prepare(bf, tables).T[band]
    c = bf.C[band]
    bmat = tables.onboard[band, j]
    g = _los_grad_rep(tables, band, fim_eval.position)
    b_rep = np.kron(bmat, np.ones((q, 1)))                       # (K_F Q, N_E)
    k_slice = tables.kernel_ft[band][j * q:(j + 1) * q]
    vth = tables.angular_cov[band] @ T.conj().T
    coupled = linx.pface(k_slice, linx.pface(c, b_rep) @ vth)    # (K_F Q, R)
    a = np.zeros((3, 3, q, k_f), dtype=complex)
    b = np.zeros_like(a)
    for u in range(3):
        zu = np.outer(_slice(fim_eval.zeta[band, u], j, q).conj(), np.ones(k_f))
        for v in range(3):
            g_v = np.repeat(g[v, j][None], q, axis=0)
            proj = linx.pface(g_v * c, b_rep) @ np.ones(n_e)
            a[u, v] = zu * linx.reshape_block(proj, q, k_f)
            b[u, v] = -zu * linx.reshape_block(coupled @ fim_eval.zeta[band, v], q, k_f)
    return a, b


def fim_partial_S(band, j, u, v, fim_eval, bf, tables):
    """Real-coordinate gradient of ``[I_FIM]_uv`` w.r.t. ``S_ij``: complex (Q, K_F)."""
    a, b = _blocks_S(band, j, fim_eval, bf, tables)
    return 2.0 * np.conj(a[v, u] + a[u, v] + b[u, v] + b[v, u])


def contract(partials, fim_matrix):
    """``-sum_uv [F^-2]_vu dF_uv`` for partials of shape (3, 3, ...)."""
    inv = np.linalg.inv(fim_matrix)
    m = inv @ inv
    return -np.einsum("vu,uv...->...", m, partials)


def _gamma_total(samples, bf, tables, state, g=None):
    """Sum over samples of the contracted holomorphic coefficient, (N_B, R, N_E)."""
    g, dy, zeta_b, per_band = batch_terms(samples, state, tables, g)
    inv = checked_inverse(per_band.sum(axis=1), samples)
    m = inv @ inv
    crlbs = np.trace(inv, axis1=1, axis2=2)
    # Gamma = 2 sum_u conj(zeta_u) (sum_v M_uv (G_v - W_v)),  W_v = K (zeta_v * (V T^H)^T)
    gm = np.einsum("nuv,nvbrm->nubrm", m, g)
    xi = np.einsum("nuv,nvbr->nubr", m, zeta_b)
    vth_t = np.einsum("bmk,brk->brm", tables.angular_cov, state.T.conj())  # (V T^H)^T
    inner = xi[..., None] * vth_t[None, None]                              # (N,3,B,R,N_E)
    w = np.einsum("bst,nubtm->nubsm", tables.kernel_ft, inner)
    gamma = 2.0 * np.einsum("nubr,nubrm->brm", zeta_b.conj(), gm - w)
    return gamma, crlbs


def _split_gamma(gamma, bf, tables, n):
    n_b, n_s, q, k_f, n_e = bf.shape
    gam = -gamma.reshape(n_b, n_s, q, n_e) / n
    sb = np.einsum("ijqk,ijkm->ijqm", bf.S, tables.onboard)
    grad_c = 2.0 * np.sum(gam * sb, axis=1).real
    psi = np.einsum("ijqm,ijkm->ijqk", gam * bf.C[:, None], tables.onboard)
    return grad_c, 2.0 * np.conj(psi)


def value_and_grad(samples, bf, tables, state=None, g=None):
    """Average CRLB and its gradients ``(value, grad_C, grad_S)``.

    ``g`` optionally caches :func:`replicated_los_grad` for ``samples``.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    state = state or prepare(bf, tables)
    gamma, crlbs = _gamma_total(samples, bf, tables, state, g)
    grad_c, grad_s = _split_gamma(gamma, bf, tables, samples.shape[0])
    return float(np.mean(crlbs)), grad_c, grad_s


def grad_avg_crlb_C(samples, bf, tables):
    """Gradient of the average CRLB w.r.t. every ``C_i``: (N_B, Q, N_E)."""
    return value_and_grad(samples, bf, tables)[1]


def grad_avg_crlb_S(samples, bf, tables):
    """Gradient of the average CRLB w.r.t. every ``S_ij``: (N_B, N_S, Q, K_F)."""
    return value_and_grad(samples, bf, tables)[2]


def grad_by_blocks(samples, bf, tables):
    """Same gradients assembled from the per-(u, v) ``A``/``B`` blocks (slow)."""
    from .fisher import fim
    samples = np.atleast_2d(np.asarray(samples, float))
    n_b, n_s, q, k_f, n_e = bf.shape
    gc = np.zeros((n_b, q, n_e))
    gs = np.zeros((n_b, n_s, q, k_f), dtype=complex)
    state = prepare(bf, tables)
    for p in samples:
        ev = fim(p, bf, tables, state)
        for i in range(n_b):
            a, b = _blocks_C(i, ev, bf, tables)
            d_c = 2.0 * np.real(a + np.swapaxes(a, 0, 1) + b + np.swapaxes(b, 0, 1))
            gc[i] += contract(d_c, ev.fim)
            for j in range(n_s):
                a, b = _blocks_S(i, j, ev, bf, tables)
                d_s = 2.0 * np.conj(a + np.swapaxes(a, 0, 1) + b + np.swapaxes(b, 0, 1))
                gs[i, j] += contract(d_s, ev.fim)
    return gc / len(samples), gs / len(samples)


def fd_grad(objective, point, step=1e-6):
    """Central finite differences; complex entries are probed on Re and Im."""
    x = np.array(point, copy=True)
    is_complex = np.iscomplexobj(x)
    out = np.zeros(x.shape, dtype=complex if is_complex else float)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    directions = (1.0, 1j) if is_complex else (1.0,)
    for k in range(flat.size):
        orig = flat[k]
        for d in directions:
            flat[k] = orig + step * d
            f_plus = objective(x)
            flat[k] = orig - step * d
            f_minus = objective(x)
            flat[k] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite objective near coordinate {k}")
            slope = (f_plus - f_minus) / (2.0 * step)
            res[k] += slope if d == 1.0 else 1j * slope
    return out


def gradient_check(samples, bf, tables, step=1e-6):
    """Max relative l-infinity error of analytic vs finite-difference gradients."""
    from .channel import Beamforming
    from .fisher import avg_crlb

    _, gc, gs = value_and_grad(samples, bf, tables)

    def f_c(c):
        return avg_crlb(samples, Beamforming(c, bf.S), tables)

    def f_s(s):
        return avg_crlb(samples, Beamforming(bf.C, s), tables)

    fc = fd_grad(f_c, bf.C, step)
    fs = fd_grad(f_s, bf.S, step)
    err_c = np.max(np.abs(gc - fc)) / np.max(np.abs(fc))
    err_s = np.max(np.abs(gs - fs)) / np.max(np.abs(fs))
    return float(err_c), float(err_s)
