"""Dense linear algebra and the discrete Hartley transform.

Matrices are plain ``numpy.ndarray`` objects in float64. The Cholesky path
goes through LAPACK ``potrf`` so a failing pivot can be reported by index.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.linalg import lapack, solve_triangular

__all__ = [
    "NotPositiveDefiniteError",
    "SpdFactor",
    "cholesky",
    "solve_spd",
    "logdet",
    "dht",
]

SYMMETRY_RTOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when Cholesky meets a non-positive pivot."""

    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot} failed)")


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T == A``."""

    L: np.ndarray

    @property
    def size(self):
        return self.L.shape[0]


def cholesky(A):
    """Factor a symmetric positive definite matrix.

    Asymmetry up to ``SYMMETRY_RTOL`` (relative to ``max|A|``) is tolerated
    silently; larger asymmetry is averaged away with a ``RuntimeWarning``.

    Raises
    ------
    NotPositiveDefiniteError
        With ``pivot`` set to the zero-based index of the failing pivot.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        warnings.warn(
            f"symmetrizing input with relative asymmetry {asym / scale:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    A = 0.5 * (A + A.T)
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"potrf: illegal argument {-info}")
    return SpdFactor(L)


def solve_spd(F, B):
    """Solve ``A X = B`` given the factor of ``A``; ``B`` may be 1-d or 2-d."""
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != F.size:
        raise ValueError(f"dimension mismatch: factor is {F.size}, rhs has {B.shape[0]} rows")
    Y = solve_triangular(F.L, B, lower=True, check_finite=False)
    return solve_triangular(F.L, Y, lower=True, trans="T", check_finite=False)


def logdet(F):
    return 2.0 * float(np.sum(np.log(np.diag(F.L))))


def dht(v, axis=-1):
    """Unnormalized discrete Hartley transform along ``axis``.

    ``H(v)_k = sum_j v_j cas(2 pi j k / N)`` with ``cas = cos + sin``, i.e.
    ``Re(F v) - Im(F v)`` for the forward DFT ``F``. Any length is supported
    (pocketfft falls back to a chirp transform for awkward sizes).
    """
    v = np.asarray(v, dtype=np.float64)
    N = v.shape[axis]
    F = scipy.fft.rfft(v, axis=axis)
    F = np.moveaxis(F, axis, -1)
    out = np.empty(F.shape[:-1] + (N,))
    half = F.shape[-1]
    out[..., :half] = F.real - F.imag
    # F_{N-k} = conj(F_k) for real input
    k = np.arange(half, N)
    out[..., half:] = F.real[..., N - k] + F.imag[..., N - k]
    return np.moveaxis(out, -1, axis)
