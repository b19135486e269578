"""Subsampled randomized discrete Hartley transform.

``Omega v = n**-0.5 * H(sigma * v)[I]`` where ``H`` is the unnormalized
Hartley transform, ``sigma`` a fixed vector of random signs and ``I`` a
fixed uniformly random index subset of size ``n``. With the unnormalized
transform this equals ``sqrt(N/n)`` times the orthonormal SRHT, so
``E ||Omega v||^2 = ||v||^2`` and ``n == N`` gives an exact isometry.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

__all__ = ["SketchOp", "make_sketch", "sketch_from_parts", "apply", "apply_rows", "apply_signed_blocks"]

# rows per FFT batch in apply_rows; bounds the complex temporary
ROW_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class SketchOp:
    N: int
    n: int
    signs: np.ndarray
    indices: np.ndarray
    seed: object = None

    def __post_init__(self):
        if not 1 <= self.n <= self.N:
            raise ValueError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")
        if self.signs.shape != (self.N,) or not np.all(np.abs(self.signs) == 1):
            raise ValueError("signs must be a length-N vector of +-1")
        if self.indices.shape != (self.n,) or np.any(np.diff(self.indices) <= 0):
            raise ValueError("indices must be n sorted distinct values")
        if self.indices[0] < 0 or self.indices[-1] >= self.N:
            raise ValueError("indices out of range")
        self.signs.flags.writeable = False
        self.indices.flags.writeable = False

    def __eq__(self, other):
        return (
            isinstance(other, SketchOp)
            and (self.N, self.n) == (other.N, other.n)
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.indices, other.indices)
        )

    def to_dict(self):
        return {"N": self.N, "n": self.n, "seed": self.seed}


def _partial_fisher_yates(rng, N, n):
    perm = np.arange(N)
    for i in range(n):
        j = i + int(rng.integers(N - i))
        perm[i], perm[j] = perm[j], perm[i]
    return np.sort(perm[:n])


def make_sketch(N, n, seed):
    """Draw signs and an index subset deterministically from ``seed``."""
    if n > N:
        raise ValueError(f"sketch dimension n={n} exceeds N={N}")
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=N)
    indices = _partial_fisher_yates(rng, N, n)
    return SketchOp(int(N), int(n), signs, indices, seed)


def sketch_from_parts(signs, indices):
    """Build a sketch from explicit signs and indices (for hand-checked cases)."""
    signs = np.asarray(signs, dtype=np.float64)
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    return SketchOp(len(signs), len(indices), signs, indices)


def _hartley_at(F, idx, N):
    """Hartley coefficients at ``idx`` from the half spectrum ``F`` of rfft."""
    half = F.shape[-1]
    lo = idx < half
    # F_{N-k} = conj(F_k) for real input
    G = np.take(F, np.where(lo, idx, N - idx), axis=-1)
    return G.real + np.where(lo, -1.0, 1.0) * G.imag


def apply(s, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (s.N,):
        raise ValueError(f"vector has shape {v.shape}, sketch expects ({s.N},)")
    F = scipy.fft.rfft(s.signs * v)
    return _hartley_at(F, s.indices, s.N) / np.sqrt(s.n)


def _sketch_signed(s, B):
    """Sketch rows of ``B`` that already carry the random signs (``B`` is overwritten)."""
    F = scipy.fft.rfft(B, axis=1, overwrite_x=True)
    return _hartley_at(F, s.indices, s.N) / np.sqrt(s.n)


def apply_rows(s, M):
    """Sketch every row of a ``(p, N)`` matrix: ``M @ Omega.T``, shape ``(p, n)``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != s.N:
        raise ValueError(f"matrix has shape {M.shape}, sketch expects (*, {s.N})")
    out = np.empty((M.shape[0], s.n))
    for start in range(0, M.shape[0], ROW_CHUNK):
        out[start:start + ROW_CHUNK] = _sketch_signed(s, M[start:start + ROW_CHUNK] * s.signs)
    return out


def apply_signed_blocks(s, blocks, n_rows):
    """Assemble ``M @ Omega.T`` from ``(offset, rows)`` blocks of ``M * signs``.

    Pairs with ``param_jacobian_blocks(..., col_scale=s.signs)``, which yields
    the Jacobian with the signs folded in. The blocks are consumed (overwritten).
    """
    out = np.empty((n_rows, s.n))
    filled = 0
    for off, B in blocks:
        if B.ndim != 2 or B.shape[1] != s.N:
            raise ValueError(f"block has shape {B.shape}, sketch expects (*, {s.N})")
        out[off:off + B.shape[0]] = _sketch_signed(s, B)
        filled += B.shape[0]
    if filled != n_rows:
        raise ValueError(f"blocks cover {filled} rows, expected {n_rows}")
    return out
