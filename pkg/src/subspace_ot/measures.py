"""Value types shared by the Gaussian, subspace and discrete modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, EmptyInput
from .psdlin import SpdMatrix, as_spd

ORTHO_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subspace:
    """A k-dimensional subspace E of R^d with a full orthonormal frame.

    The first ``k`` columns of ``basis_full`` span E, the remaining ``d - k``
    span its orthogonal complement.
    """

    basis_full: np.ndarray
    k: int

    def __post_init__(self):
        v = _frozen(self.basis_full)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionMismatch(f"basis must be square, got {v.shape}")
        d = v.shape[0]
        if not 1 <= self.k <= d:
            raise DimensionMismatch(f"need 1 <= k <= {d}, got {self.k}")
        err = np.linalg.norm(v.T @ v - np.eye(d))
        if err > ORTHO_TOL:
            raise ValueError(f"basis is not orthonormal (||V^T V - I||_F = {err:.2e})")
        object.__setattr__(self, "basis_full", v)
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_basis(cls, vectors) -> Subspace:
        """Subspace spanned by the columns of a d x k matrix.

        The columns are orthonormalized (QR with a positive diagonal, so an
        orthonormal input is kept as is) and the complement is completed
        deterministically.
        """
        b = np.array(vectors, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        d, k = b.shape
        q, r = np.linalg.qr(b)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs
        comp = sla.null_space(q.T) if k < d else np.zeros((d, 0))
        return cls(np.hstack([q, comp]), k)

    @classmethod
    def from_axes(cls, d: int, axes) -> Subspace:
        """Span of the canonical axes ``axes`` (0-based); complement axes in index order."""
        axes = [int(a) for a in axes]
        if len(set(axes)) != len(axes) or any(not 0 <= a < d for a in axes):
            raise DimensionMismatch(f"invalid axes {axes} for d={d}")
        rest = [i for i in range(d) if i not in axes]
        return cls(np.eye(d)[:, axes + rest], len(axes))

    @classmethod
    def canonical(cls, d: int, k: int) -> Subspace:
        return cls(np.eye(d), k)

    @property
    def dim(self) -> int:
        return self.basis_full.shape[0]

    @property
    def basis(self) -> np.ndarray:
        """V_E, shape (d, k)."""
        return self.basis_full[:, : self.k]

    @property
    def complement(self) -> np.ndarray:
        """V_{E-perp}, shape (d, d - k)."""
        return self.basis_full[:, self.k :]

    @property
    def is_full(self) -> bool:
        return self.k == self.dim

    def projector(self) -> np.ndarray:
        v = self.basis
        return v @ v.T

    def project(self, x) -> np.ndarray:
        """Coordinates in E of the rows of ``x``."""
        return np.asarray(x, dtype=float) @ self.basis


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        cov = as_spd(self.cov)
        mean = _frozen(np.ravel(self.mean))
        if mean.shape[0] != cov.dim:
            raise DimensionMismatch(f"mean has length {mean.shape[0]}, covariance is {cov.dim}x{cov.dim}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def centered(cls, cov) -> Gaussian:
        cov = as_spd(cov)
        return cls(np.zeros(cov.dim), cov)

    @property
    def dim(self) -> int:
        return self.cov.dim

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        w, q = self.cov.eig
        z = rng.standard_normal((n, self.dim))
        return self.mean + (z * np.sqrt(w)) @ q.T


@dataclass(frozen=True)
class LinearTransport:
    """Affine map ``x -> target_mean + matrix @ (x - source_mean)``."""

    source_mean: np.ndarray
    target_mean: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        t = _frozen(self.matrix)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DimensionMismatch(f"transport matrix must be square, got {t.shape}")
        for name in ("source_mean", "target_mean"):
            m = _frozen(np.ravel(getattr(self, name)))
            if m.shape[0] != t.shape[0]:
                raise DimensionMismatch(f"{name} has length {m.shape[0]}, matrix is {t.shape}")
            object.__setattr__(self, name, m)
        object.__setattr__(self, "matrix", t)

    @classmethod
    def centered(cls, matrix) -> LinearTransport:
        matrix = np.asarray(matrix, dtype=float)
        z = np.zeros(matrix.shape[0])
        return cls(z, z, matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def apply(self, x) -> np.ndarray:
        """Map a point, or each row of an (n, d) array."""
        x = np.asarray(x, dtype=float)
        return self.target_mean + (x - self.source_mean) @ self.matrix.T

    def push_forward_cov(self, cov) -> np.ndarray:
        t = self.matrix
        out = t @ np.asarray(cov, dtype=float) @ t.T
        return 0.5 * (out + out.T)

    def push_forward(self, mu: Gaussian) -> Gaussian:
        return Gaussian(self.apply(mu.mean), SpdMatrix(self.push_forward_cov(mu.cov)))


@dataclass(frozen=True)
class GaussianCoupling:
    """Gaussian on R^d x R^d, possibly degenerate, given by its 2d x 2d covariance."""

    sigma: SpdMatrix
    mean: np.ndarray = field(default=None)

    def __post_init__(self):
        sigma = as_spd(self.sigma)
        if sigma.dim % 2:
            raise DimensionMismatch("coupling covariance must have even size")
        mean = np.zeros(sigma.dim) if self.mean is None else self.mean
        mean = _frozen(np.ravel(mean))
        if mean.shape[0] != sigma.dim:
            raise DimensionMismatch("coupling mean and covariance sizes differ")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.sigma.dim // 2

    @property
    def cross(self) -> np.ndarray:
        """E[(X - m_X)(Y - m_Y)^T]."""
        d = self.dim
        return self.sigma.values[:d, d:]

    @property
    def source_cov(self) -> np.ndarray:
        d = self.dim
        return self.sigma.values[:d, :d]

    @property
    def target_cov(self) -> np.ndarray:
        d = self.dim
        return self.sigma.values[d:, d:]

    def transport_cost(self) -> float:
        """E||X - Y||^2 under the coupling."""
        d = self.dim
        dm = self.mean[:d] - self.mean[d:]
        c = np.trace(self.source_cov) + np.trace(self.target_cov) - 2.0 * np.trace(self.cross)
        return float(max(c, 0.0) + dm @ dm)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` pairs (x, y); zero eigenvalues of the covariance are allowed."""
        w, q = self.sigma.eig
        z = rng.standard_normal((n, 2 * self.dim))
        xy = self.mean + (z * np.sqrt(w)) @ q.T
        return xy[:, : self.dim], xy[:, self.dim :]


@dataclass(frozen=True)
class WeightedMetric:
    """Quadratic cost ``(x-y)^T P (x-y)`` with ``P = V_E V_E^T + eps V_perp V_perp^T``."""

    basis: Subspace
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def matrix(self) -> np.ndarray:
        return self._power(1.0)

    def sqrt(self) -> np.ndarray:
        return self._power(0.5)

    def inv_sqrt(self) -> np.ndarray:
        return self._power(-0.5)

    def _power(self, p: float) -> np.ndarray:
        v = self.basis.basis_full
        scale = np.ones(v.shape[0])
        scale[self.basis.k :] = self.epsilon**p
        return (v * scale) @ v.T


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud; weights are nonnegative and sum to one."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise EmptyInput("a discrete measure needs at least one point")
        n = pts.shape[0]
        w = np.full(n, 1.0 / n) if self.weights is None else np.array(self.weights, dtype=float).ravel()
        if w.shape[0] != n:
            raise DimensionMismatch(f"{n} points but {w.shape[0]} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_counts(cls, points, counts) -> DiscreteMeasure:
        counts = np.asarray(counts, dtype=float)
        return cls(points, counts / counts.sum())

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def cov(self) -> np.ndarray:
        """Weighted covariance (divisor = total mass)."""
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c
