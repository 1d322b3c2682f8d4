"""Small dense symmetric-matrix helpers (dimension ~ 10 at most)."""

from __future__ import annotations

import numpy as np
from scipy import linalg


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _cholesky(m, what="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefiniteError(f"{what} has non-finite entries")
    try:
        return linalg.cholesky(m, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def sym_inverse(m):
    """Inverse of a symmetric positive definite matrix, returned exactly symmetric."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return m.copy()
    c = _cholesky(m)
    inv = linalg.cho_solve((c, True), np.eye(m.shape[0]))
    return symmetrize(inv)


def pencil_eigvals(a, b):
    """Eigenvalues of ``b^{-1} a`` for symmetric ``a`` and SPD ``b``, descending.

    Computed from the symmetric pencil ``L^{-1} a L^{-T}`` with ``b = L L^T`` so
    the result is real by construction.
    """
    a = symmetrize(a)
    low = _cholesky(b, "pencil matrix B")
    if a.shape != low.shape:
        raise ValueError("pencil matrices must have the same shape")
    tmp = linalg.solve_triangular(low, a, lower=True)
    c = linalg.solve_triangular(low, tmp.T, lower=True)
    vals = linalg.eigvalsh(symmetrize(c))
    return vals[::-1].copy()


def repair_psd(m, rel_tol=1e-8):
    """Clamp tiny negative eigenvalues of a symmetric matrix to zero.

    Eigenvalues below ``-rel_tol * trace`` are treated as a genuine defect.
    """
    m = symmetrize(m)
    vals, vecs = np.linalg.eigh(m)
    scale = max(abs(np.trace(m)), np.finfo(float).tiny)
    if vals.min() < -rel_tol * scale:
        raise NotPositiveDefiniteError(
            f"matrix has eigenvalue {vals.min():.3e} below -{rel_tol:g} * trace"
        )
    if vals.min() >= 0:
        return m
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * vals) @ vecs.T)
