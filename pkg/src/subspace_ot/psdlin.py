"""Dense linear algebra for symmetric positive semidefinite matrices.

Everything here is a pure function of its inputs. :class:`SpdMatrix` values
are immutable once built and cache their eigendecomposition, so repeated
square roots of the same covariance cost a single ``eigh`` call.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import (
    AsymmetricInput,
    DimensionMismatch,
    FactorizationFailed,
    IndefiniteInput,
    RankDeficient,
    SingularBlock,
    SingularInput,
)

SYM_TOL = 1e-8
EIG_REL_FLOOR = 1e-10
JITTER_START = 1e-12
JITTER_MAX = 1e-6
JITTER_GROWTH = 10.0


class EigenFactorization(NamedTuple):
    """Symmetric eigendecomposition with eigenvalues in nonincreasing order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


class SpdMatrix:
    """Symmetric PSD matrix checked against symmetry and eigenvalue tolerances.

    Parameters
    ----------
    entries : array-like, shape (d, d)
        Matrix entries. They are symmetrized after the tolerance check.
    sym_tol : float
        Allowed ``max|M - M.T|`` relative to ``max|M|``.
    eig_floor : float, optional
        Absolute eigenvalue threshold. Defaults to ``1e-10 * lambda_max``.
        Eigenvalues in ``[-eig_floor, 0)`` are clipped to zero, anything
        more negative raises :class:`IndefiniteInput`.
    """

    __slots__ = ("_values", "sym_tol", "eig_floor", "_eig")

    def __init__(self, entries, sym_tol: float = SYM_TOL, eig_floor: float | None = None):
        m = np.array(entries, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        scale = np.abs(m).max()
        asym = np.abs(m - m.T).max()
        if asym > sym_tol * scale:
            raise AsymmetricInput(f"asymmetry {asym:.3e} exceeds {sym_tol:.1e} * max|M| = {sym_tol * scale:.3e}")
        m = 0.5 * (m + m.T)
        w, q = np.linalg.eigh(m)
        w, q = w[::-1], q[:, ::-1]
        floor = EIG_REL_FLOOR * max(w[0], 0.0) if eig_floor is None else float(eig_floor)
        if w[-1] < -floor:
            raise IndefiniteInput(f"min eigenvalue {w[-1]:.3e} below -eig_floor = {-floor:.3e}")
        self._init(m, EigenFactorization(np.clip(w, 0.0, None), q), sym_tol, floor)

    def _init(self, values, eig, sym_tol, eig_floor):
        values.setflags(write=False)
        eig.eigenvalues.setflags(write=False)
        eig.eigenvectors.setflags(write=False)
        self._values = values
        self._eig = eig
        self.sym_tol = sym_tol
        self.eig_floor = eig_floor

    @classmethod
    def from_eig(cls, eigenvalues, eigenvectors, sym_tol: float = SYM_TOL) -> SpdMatrix:
        """Build from a known factorization; eigenvalues must be >= 0."""
        w = np.asarray(eigenvalues, dtype=float)
        q = np.asarray(eigenvectors, dtype=float)
        order = np.argsort(-w, kind="stable")
        w, q = w[order], q[:, order]
        values = (q * w) @ q.T
        values = 0.5 * (values + values.T)
        obj = cls.__new__(cls)
        obj._init(values, EigenFactorization(w, q), sym_tol, EIG_REL_FLOOR * max(w[0], 0.0))
        return obj

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    @property
    def eig(self) -> EigenFactorization:
        return self._eig

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values.copy() if copy else self._values
        return self._values.astype(dtype)

    def __repr__(self):
        return f"SpdMatrix({self._values.tolist()!r})"


def as_spd(m) -> SpdMatrix:
    return m if isinstance(m, SpdMatrix) else SpdMatrix(m)


def sqrtm(m) -> SpdMatrix:
    """Principal square root; eigenvalues below ``eig_floor`` are treated as zero."""
    m = as_spd(m)
    w, q = m.eig
    return SpdMatrix.from_eig(np.sqrt(np.where(w < m.eig_floor, 0.0, w)), q)


def inv_sqrtm(m, reg: float = 0.0) -> SpdMatrix:
    """``(M + reg I)^{-1/2}``."""
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    m = as_spd(m)
    w, q = m.eig
    w = w + reg
    if w[-1] <= m.eig_floor:
        raise SingularInput(f"min eigenvalue {w[-1]:.3e} (after reg={reg:g}) <= eig_floor {m.eig_floor:.3e}")
    return SpdMatrix.from_eig(1.0 / np.sqrt(w), q)


def pseudo_inverse(m) -> SpdMatrix:
    """Moore-Penrose inverse: eigenvalues above ``eig_floor`` inverted, the rest zeroed."""
    m = as_spd(m)
    w, q = m.eig
    keep = w > m.eig_floor
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return SpdMatrix.from_eig(inv, q)


def _jitter_schedule(values, jitter):
    scale = max(float(np.mean(np.abs(np.diag(values)))), np.finfo(float).tiny)
    yield jitter
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-9):
        if j * scale > jitter:
            yield j * scale
        j *= JITTER_GROWTH


def cholesky_lower(m, jitter: float = 0.0, escalate: bool = True) -> np.ndarray:
    """Lower Cholesky factor of ``M + jitter I``.

    On failure the diagonal jitter is escalated from ``1e-12`` to ``1e-6``
    (relative to the mean diagonal) in factors of ten.
    """
    values = np.asarray(m, dtype=float)
    eye = np.eye(values.shape[0])
    schedule = _jitter_schedule(values, jitter) if escalate else iter([jitter])
    last = None
    for j in schedule:
        try:
            return np.linalg.cholesky(values + j * eye)
        except np.linalg.LinAlgError as exc:
            last = exc
    raise FactorizationFailed(f"Cholesky failed after jitter escalation: {last}")


def spd_solve(m, rhs, regularize: bool = True) -> np.ndarray:
    """Solve ``M X = rhs`` for symmetric PSD ``M`` via Cholesky."""
    values = np.asarray(m, dtype=float)
    try:
        low = cholesky_lower(values, escalate=regularize)
    except FactorizationFailed as exc:
        raise SingularBlock(str(exc)) from exc
    return sla.cho_solve((low, True), rhs)


def schur_complement(m, k: int, regularize: bool = True) -> SpdMatrix:
    """Schur complement ``M22 - M12.T M11^{-1} M12`` of the leading k x k block."""
    values = np.asarray(m, dtype=float)
    d = values.shape[0]
    if not 1 <= k < d:
        raise DimensionMismatch(f"need 1 <= k < {d}, got k={k}")
    try:
        low = cholesky_lower(values[:k, :k], escalate=regularize)
    except FactorizationFailed as exc:
        raise SingularBlock(f"leading {k}x{k} block is singular: {exc}") from exc
    x = sla.solve_triangular(low, values[:k, k:], lower=True)
    s = values[k:, k:] - x.T @ x
    s = 0.5 * (s + s.T)
    # cancellation can leave eigenvalues slightly below zero
    w, q = np.linalg.eigh(s)
    tol = 1e-10 * max(np.abs(values).max(), np.finfo(float).tiny)
    if w[0] < -tol:
        raise SingularBlock(f"Schur complement is indefinite (min eigenvalue {w[0]:.3e})")
    return SpdMatrix.from_eig(np.clip(w, 0.0, None), q)


def polar_unitary(m, strict: bool = False, rank_tol: float = 1e-12) -> np.ndarray:
    """Orthogonal polar factor ``W1 W2^T`` of ``M = W1 S W2^T``.

    This is the nearest orthogonal matrix in Frobenius norm. Zero singular
    values are treated as positive unless ``strict`` is set, in which case a
    smallest singular value below ``rank_tol * s_max`` raises
    :class:`RankDeficient`.
    """
    values = np.asarray(m, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionMismatch(f"polar decomposition needs a square matrix, got {values.shape}")
    w1, s, w2t = np.linalg.svd(values)
    if strict and s[-1] < rank_tol * max(s[0], np.finfo(float).tiny):
        raise RankDeficient(f"smallest singular value {s[-1]:.3e} below threshold")
    return w1 @ w2t
