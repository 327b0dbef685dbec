"""Dense complex matrix helpers and the Bessel function J0.

Everything here is a pure function on numpy arrays. Matrices are plain
``ndarray`` objects; no wrapper type is introduced.
"""

import math

import numpy as np
from scipy import linalg

__all__ = [
    "NotPositiveDefiniteError",
    "kron",
    "hadamard",
    "pface",
    "reshape_block",
    "colstack",
    "bessel_j0",
    "HermFactor",
    "herm_solve",
    "psd_sqrt_factor",
]

HERMITIAN_TOL = 1e-12
CLIP_TOL = 1e-10
_J0_SEAM = 15.0


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a covariance-like matrix fails to factor."""


def _as_matrix(a, name):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product ``a ⊗ b``."""
    return np.kron(_as_matrix(a, "a"), _as_matrix(b, "b"))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equally shaped matrices."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def pface(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Penetrating face product.

    ``a`` (p x n) multiplies, elementwise, every consecutive p x n row block
    of ``b`` (kp x n).
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    p, n = a.shape
    if b.shape[1] != n:
        raise ValueError(f"pface: column mismatch {a.shape} vs {b.shape}")
    if b.shape[0] % p:
        raise ValueError(f"pface: {b.shape[0]} rows is not a multiple of {p}")
    k = b.shape[0] // p
    # same operand order as hadamard: vectorised complex products are not
    # bitwise commutative
    return (a[None] * b.reshape(k, p, n)).reshape(k * p, n)


def reshape_block(v: np.ndarray, p: int, k: int) -> np.ndarray:
    """Unstack a length ``p*k`` vector column by column into a p x k matrix."""
    v = np.asarray(v).ravel()
    if v.size != p * k:
        raise ValueError(f"reshape_block: length {v.size} != {p}*{k}")
    return v.reshape(k, p).T


def colstack(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reshape_block` (column-major vectorisation)."""
    return np.asarray(a).T.ravel()


def _j0_series(x):
    # Horner form of sum_m (-x^2/4)^m / (m!)^2
    y = 0.25 * x * x
    n_terms = int(2.0 * x) + 30
    acc = 1.0
    for m in range(n_terms, 0, -1):
        acc = 1.0 - acc * y / (m * m)
    return acc


def _j0_hankel(x):
    # sqrt(2/(pi x)) (P cos chi - Q sin chi); terms t_k = a_k / x^k, summed
    # up to the smallest one since the series is only asymptotic
    p_sum, q_sum = 1.0, 0.0
    t = 1.0
    for k in range(1, 200):
        t_next = -t * (2 * k - 1) ** 2 / (8.0 * k * x)
        if abs(t_next) >= abs(t):
            break
        t = t_next
        if k % 2 == 0:
            p_sum += t * (-1) ** (k // 2)
        else:
            q_sum += t * (-1) ** ((k - 1) // 2)
        if abs(t) < 1e-17:
            break
    chi = x - 0.25 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p_sum * math.cos(chi) - q_sum * math.sin(chi))


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind.

    Power series below ``|x| = 15``, Hankel's asymptotic expansion above.
    Accepts a scalar or an array.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("bessel_j0 requires finite input")
    flat = np.abs(arr).ravel()
    out = np.empty_like(flat)
    for n, v in enumerate(flat):
        out[n] = _j0_series(v) if v < _J0_SEAM else _j0_hankel(v)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def _check_hermitian(h):
    h = _as_matrix(h, "H")
    if h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got {h.shape}")
    scale = max(np.max(np.abs(h)), np.finfo(float).tiny)
    if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian")
    return h


class HermFactor:
    """Cholesky factorisation of a Hermitian positive-definite matrix.

    Build once, then call :meth:`solve` as often as needed.
    """

    def __init__(self, h):
        h = _check_hermitian(h)
        self.n = h.shape[0]
        try:
            self._cho = linalg.cho_factor(h, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                "covariance is not positive definite") from exc

    def solve(self, b):
        return linalg.cho_solve(self._cho, b, check_finite=False)


def herm_solve(h: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``H X = B`` for Hermitian positive-definite ``H``."""
    return HermFactor(h).solve(b)


def psd_sqrt_factor(h: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L L^H = H`` for a Hermitian PSD matrix.

    Eigenvalues down to ``-1e-10 * ||H||`` are treated as roundoff and
    clipped to zero; anything more negative is an error.
    """
    h = _check_hermitian(h)
    h = 0.5 * (h + h.conj().T)
    w, u = np.linalg.eigh(h)
    norm = np.max(np.abs(w)) if w.size else 0.0
    if w.min() < -CLIP_TOL * norm:
        raise NotPositiveDefiniteError(
            f"matrix is indefinite (min eigenvalue {w.min():.3e}, norm {norm:.3e})")
    w = np.clip(w, 0.0, None)
    return u * np.sqrt(w)[None, :]
