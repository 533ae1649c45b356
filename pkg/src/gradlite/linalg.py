"""Dense float64 vectors/matrices and the truncated-SVD kernel.

Values are plain numpy arrays validated at the boundaries (`as_vector`,
`as_matrix`).  `matvec` and `matvec_t` accumulate in a pinned order
(ascending reduction index, no pairwise or compensated summation) so their
results are bit-identical to a scalar double loop and reproducible across
runs.  Everything here is pure; nothing mutates its inputs.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimError, NumError, RankError
from .rng import SplitMix64, derive_seed

# Oversampling columns for the randomized range sketch.
OVERSAMPLE = 5
_SKETCH_SALT = 0x5EED_57E7C4


class SvdResult(NamedTuple):
    """Leading-k factors: u (m x k), s (k, nonincreasing), v (d x k)."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def as_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimError(f"{name} must be a nonempty 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumError(f"{name} contains non-finite entries")
    return arr


def as_matrix(a, name: str = "a") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimError(f"{name} must be a nonempty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumError(f"{name} contains non-finite entries")
    return arr


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """a @ x with the summation over columns in ascending index order."""
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimError(f"matvec: {a.shape} @ {x.shape}")
    out = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        out += a[:, j] * x[j]
    return out


def matvec_t(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """a.T @ y summed over rows in ascending index order (row-major walk)."""
    if a.ndim != 2 or y.ndim != 1 or a.shape[0] != y.shape[0]:
        raise DimError(f"matvec_t: {a.shape}.T @ {y.shape}")
    out = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        out += a[i] * y[i]
    return out


def frob_residual(a: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Frobenius norm of a - u @ v.T (v carries any singular-value scaling)."""
    if u.ndim != 2 or v.ndim != 2 or a.shape != (u.shape[0], v.shape[0]) \
            or u.shape[1] != v.shape[1]:
        raise DimError(f"frob_residual: a {a.shape}, u {u.shape}, v {v.shape}")
    diff = a - u @ v.T
    return float(np.sqrt(np.sum(diff * diff)))


def truncated_svd(a, k: int, iters: int = 4, seed: int = 0) -> SvdResult:
    """Leading-k SVD by randomized subspace iteration.

    Gaussian sketch with OVERSAMPLE extra columns, `iters` orthonormalized
    power steps, then an exact SVD of the small projected matrix.  The
    output is deterministic in (a, k, iters, seed); each (u_j, v_j) pair is
    flipped so the largest-magnitude entry of u_j is positive.
    """
    a = as_matrix(a)
    m, d = a.shape
    if not 1 <= k <= min(m, d):
        raise RankError(f"rank {k} outside 1..{min(m, d)} for shape {a.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")

    width = min(k + OVERSAMPLE, min(m, d))
    stream = SplitMix64(derive_seed(seed, _SKETCH_SALT))
    omega = stream.normal_matrix(d, width)
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(iters):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)
    b = q.T @ a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :k]
    v = vt[:k].T.copy()
    s = s[:k].copy()
    for j in range(k):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u, s, v)
