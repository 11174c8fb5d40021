"""Radial kernels, their gradients and batched kernel-matrix construction.

Points are plain numpy arrays. A single point has shape ``(d,)``; a set of
``n`` points has shape ``(n, d)``. Gradients are always taken with respect
to the *first* kernel argument, so that ``kernel_grad_matrix(k, X) @ alpha``
gives the gradient of ``x -> sum_j alpha_j k(x, X[j])`` at every training
point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError


@dataclass(frozen=True)
class Box:
    """Axis-aligned search box; ``[0, 1]^d`` by default."""

    lower: tuple[float, ...] = (0.0,)
    upper: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) == 0:
            raise InvalidInputError("box bounds must be non-empty and of equal length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise InvalidInputError(f"empty box: {self.lower} .. {self.upper}")

    @classmethod
    def unit(cls, d: int = 1) -> "Box":
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0) -> bool:
        x = as_point(x)
        return x.shape == (self.dim,) and bool(
            np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol)
        )

    def clip(self, x) -> np.ndarray:
        return np.clip(as_point(x), self.lo, self.hi)

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / self.width

    def denormalize(self, u) -> np.ndarray:
        return self.lo + np.asarray(u, dtype=float) * self.width


def as_point(x) -> np.ndarray:
    """Coerce a scalar or sequence into a 1-D float array."""
    return np.atleast_1d(np.asarray(x, dtype=float)).ravel()


def as_points(X) -> np.ndarray:
    """Coerce into an ``(n, d)`` array; a flat sequence is read as n 1-D points."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X[:, None]
    if X.ndim != 2:
        raise InvalidInputError(f"expected a point set of rank <= 2, got shape {X.shape}")
    return X


@dataclass(frozen=True)
class GaussianRBF:
    """``k(a, b) = exp(-|a - b|^2 / bandwidth^2)``; positive semidefinite."""

    bandwidth: float = 1.0
    psd: bool = field(default=True, init=False, repr=False)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidInputError(f"bandwidth must be positive, got {self.bandwidth}")

    def profile(self, sqdist):
        return np.exp(-sqdist / self.bandwidth**2)

    def grad_factor(self, sqdist):
        # d/da k = factor * (a - b)
        return -2.0 * np.exp(-sqdist / self.bandwidth**2) / self.bandwidth**2

    def diag(self, X) -> np.ndarray:
        return np.ones(len(X))


@dataclass(frozen=True)
class CubicRBF:
    """``k(a, b) = |a - b|^3``; only conditionally positive definite."""

    psd: bool = field(default=False, init=False, repr=False)

    def profile(self, sqdist):
        return sqdist * np.sqrt(sqdist)

    def grad_factor(self, sqdist):
        return 3.0 * np.sqrt(sqdist)

    def diag(self, X) -> np.ndarray:
        return np.zeros(len(X))


KernelKind = GaussianRBF | CubicRBF


def _check_pair(x1, x2):
    x1, x2 = as_point(x1), as_point(x2)
    if x1.shape != x2.shape:
        raise InvalidInputError(f"dimension mismatch: {x1.shape[0]} vs {x2.shape[0]}")
    return x1, x2


def eval_kernel(kind: KernelKind, x1, x2) -> float:
    x1, x2 = _check_pair(x1, x2)
    r = x1 - x2
    return float(kind.profile(np.dot(r, r)))


def eval_kernel_grad(kind: KernelKind, x1, x2) -> np.ndarray:
    """Gradient of ``k(x1, x2)`` with respect to ``x1``."""
    x1, x2 = _check_pair(x1, x2)
    r = x1 - x2
    return kind.grad_factor(np.dot(r, r)) * r


def cross_sqdist(A, B) -> np.ndarray:
    A, B = as_points(A), as_points(B)
    if A.shape[1] != B.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cross_kernel(kind: KernelKind, A, B) -> np.ndarray:
    """``(len(A), len(B))`` matrix of ``k(A[i], B[j])``."""
    return kind.profile(cross_sqdist(A, B))


def cross_kernel_grad(kind: KernelKind, A, B) -> np.ndarray:
    """``(len(A), d, len(B))`` tensor of gradients w.r.t. the ``A`` argument."""
    A, B = as_points(A), as_points(B)
    if A.shape[1] != B.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    diff = A[:, None, :] - B[None, :, :]
    factor = kind.grad_factor(np.einsum("ijk,ijk->ij", diff, diff))
    return np.transpose(factor[:, :, None] * diff, (0, 2, 1))


def kernel_matrix(kind: KernelKind, X) -> np.ndarray:
    X = as_points(X)
    if len(X) == 0:
        raise InvalidInputError("kernel matrix needs at least one point")
    K = cross_kernel(kind, X, X)
    # exact symmetry regardless of floating-point evaluation order
    return 0.5 * (K + K.T)


def kernel_grad_matrix(kind: KernelKind, X) -> np.ndarray:
    """``(n*d, n)`` matrix; rows ``i*d:(i+1)*d`` of column j hold grad k(X[i], X[j])."""
    X = as_points(X)
    if len(X) == 0:
        raise InvalidInputError("kernel matrix needs at least one point")
    n, d = X.shape
    return cross_kernel_grad(kind, X, X).reshape(n * d, n)


def default_kernels(d: int = 1, m: int | None = None) -> tuple:
    """Kernel list for the gradient surrogate: a Gaussian first, then cubic.

    ``m`` defaults to ``min(2, d + 1)``.  Additional kernels beyond the first
    two are Gaussians of shrinking bandwidth so they stay linearly independent.
    """
    if m is None:
        m = min(2, d + 1)
    if not 1 <= m <= d + 1:
        raise InvalidInputError(f"kernel count must lie in [1, {d + 1}], got {m}")
    kernels: list = [GaussianRBF(1.0)]
    if m >= 2:
        kernels.append(CubicRBF())
    for i in range(2, m):
        kernels.append(GaussianRBF(0.5**(i - 1)))
    return tuple(kernels)
