"""Dense float64 arithmetic shared by the rest of the package.

Vectors and matrices are plain ``numpy.ndarray`` objects. The elementwise
operators accept arrays of any shape so that batched code (rows are samples)
can use them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PowerIterationError(ArithmeticError):
    """Raised when power iteration fails to reach the requested tolerance."""

    def __init__(self, iterations: int, rel_change: float):
        self.iterations = iterations
        self.rel_change = rel_change
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(last relative change {rel_change:.3e})"
        )


def soft_threshold(v, lam: float) -> np.ndarray:
    """Elementwise soft-thresholding ``sign(v) * max(|v| - lam, 0)``.

    Entries with ``|v| == lam`` map to exactly zero.
    """
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def relu(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def clip(v, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"empty clipping interval [{lo}, {hi}]")
    return np.clip(np.asarray(v, dtype=np.float64), lo, hi)


def spectral_norm(M, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Starts from the normalized all-ones vector, so the result does not depend
    on any random state. Iteration stops once the Rayleigh quotient changes by
    less than ``tol`` relative to its current value.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        raise ValueError("spectral norm of an empty matrix")
    # the norm is scale invariant; normalizing keeps M^T M clear of under/overflow
    peak = float(np.abs(M).max())
    if not np.isfinite(peak):
        raise ValueError("matrix has non-finite entries")
    if peak == 0.0:
        return 0.0
    M = M / peak
    G = M.T @ M
    n = G.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    w = G @ v
    if not np.any(w):
        # all-ones start is orthogonal to the row space; restart from a basis vector
        # with the largest column norm of M so the start has a dominant component
        v = np.zeros(n)
        v[int(np.argmax(np.einsum("ij,ij->j", M, M)))] = 1.0
        w = G @ v
    est = float(v @ w)
    rel = np.inf
    for it in range(1, max_iter + 1):
        v = w / np.linalg.norm(w)
        w = G @ v
        new = float(v @ w)
        rel = abs(new - est) / max(abs(new), np.finfo(float).tiny)
        est = new
        if rel < tol:
            # the Rayleigh quotient converges quadratically in the eigenvector
            # error; one more step tightens the eigenvalue past the stop threshold
            v = w / np.linalg.norm(w)
            est = float(v @ (G @ v))
            return peak * float(np.sqrt(max(est, 0.0)))
    raise PowerIterationError(max_iter, rel)


@dataclass(frozen=True)
class MatrixNorms:
    linf: float
    induced1: float
    spectral: float


def matrix_norms(M) -> MatrixNorms:
    """Max row L1 norm, max column L1 norm and largest singular value."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("matrix_norms expects a nonempty 2-D array")
    absM = np.abs(M)
    return MatrixNorms(
        linf=float(absM.sum(axis=1).max()),
        induced1=float(absM.sum(axis=0).max()),
        spectral=spectral_norm(M),
    )
