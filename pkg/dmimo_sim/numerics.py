"""Complex linear-algebra kernels for MIMO processing.

Matrices are two-dimensional ``numpy`` arrays of ``complex128`` in the usual
row-major layout. Ranks are decided with the relative tolerance
``dmimo_sim.config.RANK_TOLERANCE``: singular values at or below
``sigma_max * RANK_TOLERANCE`` count as zero.
"""

import warnings

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cho_factor, cho_solve

from dmimo_sim.config import RANK_TOLERANCE
from dmimo_sim.exceptions import ConvergenceError, RankDeficiencyWarning, SingularGram


def as_complex_matrix(H):
    """Validate `H` and return it as a 2D complex array.

    Raises
    ------
    ValueError
        If `H` is not two-dimensional, is empty, or has non-finite entries.

    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or 0 in H.shape:
        raise ValueError(f"`H` must be a non-empty 2D matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("`H` must have finite entries.")
    return H


def svd(H):
    """Compute the thin singular value decomposition of `H`.

    Parameters
    ----------
    H : array_like, shape (M, N)
        The matrix.

    Returns
    -------
    left : numpy.ndarray, shape (M, r)
        Left singular vectors, ``r = min(M, N)``.
    singular : numpy.ndarray, shape (r,)
        Singular values in descending order.
    right : numpy.ndarray, shape (N, r)
        Right singular vectors, so that
        ``H = left @ diag(singular) @ right.conj().T``.

    Raises
    ------
    ConvergenceError
        If LAPACK does not converge.

    Examples
    --------
    >>> _, s, _ = svd([[2, 0], [0, 1]])
    >>> s.tolist()
    [2.0, 1.0]

    """
    H = as_complex_matrix(H)
    try:
        left, singular, right_h = np.linalg.svd(H, full_matrices=False)
    except LinAlgError as err:
        raise ConvergenceError(f"SVD of a {H.shape} matrix did not converge") from err
    return left, singular, right_h.conj().T


def matrix_rank(H, rtol=RANK_TOLERANCE):
    """Count the singular values of `H` above ``sigma_max * rtol``."""
    _, s, _ = svd(H)
    if s[0] == 0:
        return 0
    return int(np.sum(s > s[0] * rtol))


def pinv(H, rtol=RANK_TOLERANCE):
    """Compute the Moore-Penrose pseudo-inverse of `H`.

    Parameters
    ----------
    H : array_like, shape (M, N)
        The matrix.
    rtol : float
        Relative rank tolerance.

    Returns
    -------
    H_pinv : numpy.ndarray, shape (N, M)
        The pseudo-inverse. For full-row-rank `H` this is the right inverse
        ``H^H (H H^H)^-1``.

    Warns
    -----
    RankDeficiencyWarning
        If singular values were discarded.

    """
    left, s, right = svd(H)
    keep = s > (s[0] * rtol if s[0] > 0 else 0.0)
    if not np.all(keep):
        warnings.warn(
            f"pinv of a {left.shape[0]}x{right.shape[0]} matrix discarded "
            f"{np.sum(~keep)} of {len(s)} singular values",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (right * inv) @ left.conj().T


def gram_inverse_diagonal(H, rtol=RANK_TOLERANCE):
    """Get the diagonal of ``(H^H H)^-1``.

    This is the noise enhancement of a zero-forcing detector on each of the
    N columns of `H`.

    Parameters
    ----------
    H : array_like, shape (M, N)
        Matrix with full column rank.
    rtol : float
        Relative rank tolerance.

    Returns
    -------
    diagonal : numpy.ndarray, shape (N,)
        Positive reals.

    Raises
    ------
    SingularGram
        If `H` does not have full column rank.

    Examples
    --------
    >>> gram_inverse_diagonal([[2, 0], [0, 1]]).tolist()
    [0.25, 1.0]

    """
    H = as_complex_matrix(H)
    n_cols = H.shape[1]
    if matrix_rank(H, rtol) < n_cols:
        raise SingularGram(f"Gram matrix of a {H.shape} channel is singular")
    gram = H.conj().T @ H
    try:
        factor = cho_factor(gram)
    except LinAlgError as err:
        raise SingularGram(f"Gram matrix of a {H.shape} channel is singular") from err
    inverse = cho_solve(factor, np.eye(n_cols, dtype=complex))
    return np.real(np.diag(inverse)).copy()
