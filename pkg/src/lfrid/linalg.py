"""Dense real-matrix kernels: LU solve, determinant, matrix exponential and
its Frechet derivative, and spectral-radius estimation.

All operations are pure functions on float64 numpy arrays.  Sizes in this
package stay in the tens, so everything is dense and unblocked.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import NoConvergence, SingularMatrix

__all__ = [
    "lu_factor",
    "lu_solve",
    "det",
    "expm",
    "expm_frechet",
    "spectral_radius",
]

_PIVOT_RTOL = 1e-12


def _as_square(A) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def lu_factor(A):
    """LU-factorize a square matrix with partial pivoting.

    Returns (LU, piv, sign) where LU packs L (unit lower) and U, piv is the
    row-swap record and sign the permutation parity.  Raises SingularMatrix
    when a pivot magnitude falls below 1e-12 * max|A|.
    """
    A = _as_square(A)
    n = A.shape[0]
    LU = A.copy()
    piv = np.arange(n)
    sign = 1.0
    tol = _PIVOT_RTOL * (np.max(np.abs(A)) if n else 0.0)
    for j in range(n):
        i = j + int(np.argmax(np.abs(LU[j:, j])))
        if abs(LU[i, j]) <= tol:
            raise SingularMatrix(f"pivot {LU[i, j]:.3e} below tolerance at column {j}")
        if i != j:
            LU[[i, j]] = LU[[j, i]]
            piv[[i, j]] = piv[[j, i]]
            sign = -sign
        LU[j + 1:, j] /= LU[j, j]
        LU[j + 1:, j + 1:] -= np.outer(LU[j + 1:, j], LU[j, j + 1:])
    return LU, piv, sign


def lu_solve(A, B):
    """Solve A X = B by LU factorization with partial pivoting.

    B may be a vector or a matrix of right-hand sides.  Raises
    SingularMatrix when A is numerically singular.
    """
    A = _as_square(A)
    B = np.asarray(B, dtype=np.float64)
    vec = B.ndim == 1
    Bm = B.reshape(-1, 1) if vec else B
    if Bm.shape[0] != A.shape[0]:
        raise ValueError(
            f"row-count mismatch: A is {A.shape}, B has {Bm.shape[0]} rows"
        )
    LU, piv, _ = lu_factor(A)
    X = Bm[piv].astype(np.float64, copy=True)
    n = A.shape[0]
    for j in range(n):  # forward: L y = P b
        X[j + 1:] -= np.outer(LU[j + 1:, j], X[j])
    for j in range(n - 1, -1, -1):  # backward: U x = y
        X[j] /= LU[j, j]
        X[:j] -= np.outer(LU[:j, j], X[j])
    return X[:, 0] if vec else X


def det(A) -> float:
    """Determinant via LU (product of pivots with permutation sign).

    Returns 0.0 (within round-off) instead of raising when A is singular.
    """
    A = _as_square(A)
    if A.shape[0] == 0:
        return 1.0
    try:
        LU, _, sign = lu_factor(A)
    except SingularMatrix:
        return 0.0
    return float(sign * np.prod(np.diag(LU)))


# Order-13 Pade numerator coefficients (b_0..b_13).
_PADE13_B = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_PADE13_THETA = 5.4


def expm(A):
    """Matrix exponential by scaling-and-squaring with a fixed order-13
    Pade approximant (scaling until the 1-norm is below 5.4)."""
    A = _as_square(A)
    n = A.shape[0]
    if n == 0:
        return A.copy()
    norm = float(np.linalg.norm(A, 1))
    if not np.isfinite(norm):
        raise OverflowError("matrix norm is not finite")
    s = max(0, int(np.ceil(np.log2(norm / _PADE13_THETA))) if norm > _PADE13_THETA else 0)
    As = A / (2.0 ** s)
    b = _PADE13_B
    I = np.eye(n)
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = As @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
              + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I)
    try:
        R = lu_solve(V - U, V + U)
    except SingularMatrix as exc:  # V-U singular only for wildly scaled input
        raise OverflowError("Pade denominator is singular") from exc
    for _ in range(s):
        R = R @ R
    if not np.all(np.isfinite(R)):
        raise OverflowError("overflow while squaring the Pade approximant")
    return R


def expm_frechet(A, E):
    """Return (e^A, L(A, E)) where L is the Frechet derivative of expm.

    Uses the block trick: expm([[A, E], [0, A]]) carries e^A on the diagonal
    and L(A, E) in the upper-right block.  The adjoint identity
    L(A, .)^* = L(A^T, .) holds for this construction.
    """
    A = _as_square(A)
    E = _as_square(E)
    if A.shape != E.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {E.shape}")
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = E
    M[n:, n:] = A
    F = expm(M)
    return F[:n, :n].copy(), F[:n, n:].copy()


def spectral_radius(A, rtol: float = 1e-8, max_squarings: int = 60) -> float:
    """Spectral-radius estimate via the iterated-norm limit
    ||A^(2^k)||_2^(1/2^k) with renormalization.

    Accurate to ~1e-6 relative for diagonalizable matrices.  Emits a
    NoConvergence warning (and returns the last estimate) if successive
    estimates still differ by more than rtol after `max_squarings` rounds.
    """
    A = _as_square(A)
    if A.shape[0] == 0:
        return 0.0
    B = A.copy()
    log_est = 0.0
    est = float(np.linalg.norm(B, 2))
    if est == 0.0:
        return 0.0
    for k in range(1, max_squarings + 1):
        B = B @ B
        nu = float(np.linalg.norm(B, 2))
        if nu == 0.0:
            return 0.0  # nilpotent
        B /= nu
        log_est += np.log(nu) / (2.0 ** k)
        new_est = float(np.exp(log_est))
        if abs(new_est - est) <= rtol * max(abs(new_est), 1e-300):
            return new_est
        est = new_est
    warnings.warn(
        f"spectral radius estimate did not converge in {max_squarings} squarings",
        NoConvergence,
    )
    return est
