"""Noise-free GP regression and the gradient-based multikernel GP.

The multikernel surrogate models the loss as a sum of GPs, one per kernel,

    m(x) = sum_i K_i(x, X) c_i,      var(x) = sum_i var_i(x),

with coefficients chosen so that the value equations
``sum_i K_i(X, X) c_i = f`` hold exactly and the gradient equations
``sum_i gradK_i(X, X) c_i = grad f`` hold in the least-squares sense inside
the affine subspace cut out by the value equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import DuplicatePointError, FitFailureError, InvalidHistoryError, InvalidInputError
from .kernels import (
    as_point,
    as_points,
    cross_kernel,
    cross_kernel_grad,
    cross_sqdist,
    kernel_grad_matrix,
    kernel_matrix,
)

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# value-equation residual accepted while truncating the gradient solve
POINT_TOL = 1e-9
# interpolation tolerance every fitted model is held to, relative to 1 + |f|
INTERP_TOL = 1e-8
# relative singular-value cutoff of the reduced gradient least-squares system
GRAD_RCOND = 1e-4


@dataclass(frozen=True)
class Observation:
    point: np.ndarray
    loss: float
    grad: np.ndarray | None = None

    def __post_init__(self):
        point = as_point(self.point)
        object.__setattr__(self, "point", point)
        if not np.isfinite(self.loss):
            raise InvalidInputError(f"non-finite loss at {point}")
        object.__setattr__(self, "loss", float(self.loss))
        if self.grad is not None:
            grad = as_point(self.grad)
            if grad.shape != point.shape:
                raise InvalidInputError(
                    f"gradient has dimension {grad.size}, point has {point.size}"
                )
            object.__setattr__(self, "grad", grad)

    @property
    def has_valid_grad(self) -> bool:
        return self.grad is not None and bool(np.all(np.isfinite(self.grad)))


class History:
    """Ordered list of observations; the optimizer-side record of ``H``."""

    def __init__(self, observations: Iterable[Observation] = ()):
        self._obs: list[Observation] = []
        for obs in observations:
            self.add(obs)

    def add(self, obs: Observation) -> None:
        if self._obs and obs.point.shape != self._obs[0].point.shape:
            raise InvalidInputError("all observations must share one dimension")
        self._obs.append(obs)

    def __len__(self):
        return len(self._obs)

    def __iter__(self):
        return iter(self._obs)

    def __getitem__(self, i):
        return self._obs[i]

    @property
    def dim(self) -> int:
        return self._obs[0].point.size if self._obs else 0

    @property
    def points(self) -> np.ndarray:
        return np.array([o.point for o in self._obs], dtype=float).reshape(len(self), -1)

    @property
    def losses(self) -> np.ndarray:
        return np.array([o.loss for o in self._obs], dtype=float)

    @property
    def grads(self) -> np.ndarray:
        """``(n, d)`` array; rows of observations without a usable gradient are NaN."""
        out = np.full((len(self), self.dim), np.nan)
        for i, o in enumerate(self._obs):
            if o.grad is not None:
                out[i] = o.grad
        return out

    def contains(self, x, tol: float = 1e-9) -> bool:
        if not self._obs:
            return False
        return bool(np.any(np.max(np.abs(self.points - as_point(x)), axis=1) <= tol))

    def best(self) -> Observation:
        # earliest observation wins ties
        return min(self._obs, key=lambda o: o.loss)

    def deduplicated(self, tol: float = 1e-9) -> "History":
        kept = History()
        for o in self._obs:
            if not kept.contains(o.point, tol):
                kept.add(o)
        return kept

    def without_gradients(self) -> "History":
        return History(Observation(o.point, o.loss) for o in self._obs)


@dataclass(frozen=True)
class PosteriorEstimate:
    mean: float
    variance: float


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    """Fitted (multi)kernel GP; immutable once built.

    ``coefficients[0]`` belongs to the first kernel (``beta``), the rest to
    kernels 2..m (``alpha``).  ``per_kernel_factors[i]`` is the Cholesky factor
    of ``K_i + jitter[i] I`` for PSD kernels and ``None`` otherwise; only
    factored kernels contribute posterior variance.
    """

    kernels: tuple
    training_points: np.ndarray
    coefficients: tuple
    per_kernel_factors: tuple
    jitter: tuple
    method: str = "standard"

    @property
    def dim(self) -> int:
        return self.training_points.shape[1]

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = as_points(X)
        if X.shape[1] != self.dim:
            raise InvalidInputError(f"expected dimension {self.dim}, got {X.shape[1]}")
        mean = np.zeros(len(X))
        var = np.zeros(len(X))
        for kern, coef, factor in zip(self.kernels, self.coefficients, self.per_kernel_factors):
            Kx = cross_kernel(kern, X, self.training_points)
            mean += Kx @ coef
            if factor is not None:
                V = sla.solve_triangular(factor, Kx.T, lower=True)
                var += kern.diag(X) - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)

    def mean_many(self, X) -> np.ndarray:
        X = as_points(X)
        mean = np.zeros(len(X))
        for kern, coef in zip(self.kernels, self.coefficients):
            mean += cross_kernel(kern, X, self.training_points) @ coef
        return mean

    def mean_gradient(self, x) -> np.ndarray:
        x = as_point(x)[None, :]
        grad = np.zeros(self.dim)
        for kern, coef in zip(self.kernels, self.coefficients):
            grad += cross_kernel_grad(kern, x, self.training_points)[0] @ coef
        return grad


def predict(model: SurrogateModel, x) -> PosteriorEstimate:
    x = as_point(x)
    if x.size != model.dim:
        raise InvalidInputError(f"expected dimension {model.dim}, got {x.size}")
    mean, var = model.predict_many(x[None, :])
    return PosteriorEstimate(float(mean[0]), float(var[0]))


def mean_gradient(model: SurrogateModel, x) -> np.ndarray:
    return model.mean_gradient(x)


def jittered_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter*I`` with an escalating jitter ladder."""
    scale = float(np.mean(np.diag(K))) or 1.0
    eye = np.eye(len(K))
    for step in JITTER_LADDER:
        jitter = step * scale
        try:
            L = np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            if jitter:
                logger.debug("cholesky needed jitter %.1e", jitter)
            return L, jitter
    raise FitFailureError(
        f"kernel matrix of size {len(K)} is not positive definite even with jitter "
        f"{JITTER_LADDER[-1]:.0e}; training points are too close for this kernel"
    )


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), b)


def _check_distinct(X: np.ndarray) -> None:
    D = cross_sqdist(X, X)
    np.fill_diagonal(D, np.inf)
    if np.any(D == 0.0):
        i, j = np.argwhere(D == 0.0)[0]
        raise DuplicatePointError(f"duplicate training points at rows {i} and {j}: {X[i]}")


def _training_data(history: History) -> tuple[np.ndarray, np.ndarray]:
    if len(history) == 0:
        raise InvalidHistoryError("cannot fit a surrogate to an empty history")
    X = history.points
    _check_distinct(X)
    return X, history.losses


def _variance_factors(kernels: Sequence, X: np.ndarray):
    factors, jitters = [], []
    for kern in kernels:
        if kern.psd:
            L, jitter = jittered_cholesky(kernel_matrix(kern, X))
        else:
            L, jitter = None, 0.0
        factors.append(L)
        jitters.append(jitter)
    if all(f is None for f in factors):
        raise InvalidInputError("at least one kernel must be positive semidefinite to define a variance")
    return tuple(factors), tuple(jitters)


def fit_standard_gp(history: History, kernel) -> SurrogateModel:
    """Single-kernel noise-free GP: ``gamma = K^-1 f``; gradients are ignored."""
    if not kernel.psd:
        raise InvalidInputError(f"{kernel!r} is not positive semidefinite; use a GaussianRBF")
    X, f = _training_data(history)
    L, jitter = jittered_cholesky(kernel_matrix(kernel, X))
    gamma = _cho_solve(L, f)
    return SurrogateModel((kernel,), X, (gamma,), (L,), (jitter,), "standard")


def _gradient_rows(history: History) -> np.ndarray:
    """Flat indices into the ``(n*d)`` gradient vector that carry usable data."""
    d = history.dim
    rows = []
    for i, obs in enumerate(history):
        if obs.has_valid_grad:
            rows.extend(range(i * d, (i + 1) * d))
    return np.asarray(rows, dtype=int)


def fit_multikernel_grad_gp(
    history: History,
    kernels: Sequence,
    method: str = "nullspace",
    grad_rcond: float = GRAD_RCOND,
) -> SurrogateModel:
    """Gradient-based multikernel GP.

    ``method="nullspace"`` (default) parametrises the value-equation subspace
    with an orthonormal basis from the SVD of ``[K_1 ... K_m]`` and solves the
    gradient equations there by SVD truncated at ``grad_rcond`` (relative to
    the largest singular value).  Directions below the cutoff are the ones a
    wavy loss surface would otherwise force through with huge coefficients;
    dropping them keeps the mean on the overall trend.  If the value equations
    still lose exactness (``POINT_TOL``) the cutoff is raised tenfold until
    they hold.
    ``method="eliminate"`` eliminates the first kernel's coefficients through
    ``K_1^-1`` directly; it spans the same subspace but loses exactness once
    ``K_1`` is badly conditioned.
    """
    kernels = tuple(kernels)
    if not kernels:
        raise InvalidInputError("need at least one kernel")
    if any(o.grad is None for o in history):
        raise InvalidHistoryError("every observation needs a gradient for the multikernel fit")
    if len(history) < 2 and len(kernels) > 1:
        raise InvalidHistoryError("the multikernel fit needs at least two observations")
    d = history.dim
    if len(kernels) > d + 1:
        raise InvalidInputError(f"at most d+1 = {d + 1} kernels, got {len(kernels)}")
    if not kernels[0].psd:
        raise InvalidInputError("the first kernel must be positive semidefinite")
    if len(kernels) == 1:
        model = fit_standard_gp(history, kernels[0])
        return SurrogateModel(
            model.kernels, model.training_points, model.coefficients,
            model.per_kernel_factors, model.jitter, "multikernel",
        )
    if method not in ("nullspace", "eliminate"):
        raise InvalidInputError(f"unknown solve method {method!r}")

    X, f = _training_data(history)
    rows = _gradient_rows(history)
    g = history.grads.reshape(-1)[rows]
    Ks = [kernel_matrix(k, X) for k in kernels]
    dKs = [kernel_grad_matrix(k, X)[rows] for k in kernels]
    factors, jitters = _variance_factors(kernels, X)

    if method == "nullspace":
        P, G = np.hstack(Ks), np.hstack(dKs)
        coef = _solve_nullspace(P, G, f, g, grad_rcond)
        # the single-kernel interpolant is also feasible; truncation must not do worse than it
        L1, _ = jittered_cholesky(Ks[0])
        single = np.concatenate([_cho_solve(L1, f), np.zeros(P.shape[1] - len(f))])
        exact = np.all(np.abs(P @ single - f) <= INTERP_TOL * (1.0 + np.abs(f)))
        if exact and np.linalg.norm(G @ single - g) < np.linalg.norm(G @ coef - g):
            coef = single
    else:
        coef = _solve_eliminate(Ks, dKs, f, g, grad_rcond)
    n = len(X)
    coefficients = tuple(coef[i * n:(i + 1) * n].copy() for i in range(len(kernels)))
    return SurrogateModel(kernels, X, coefficients, factors, jitters, "multikernel")


def _solve_nullspace(P, G, f, g, rcond: float = GRAD_RCOND) -> np.ndarray:
    U, s, Vt = np.linalg.svd(P)
    rank = int(np.sum(s > s[0] * max(P.shape) * np.finfo(float).eps))
    base = Vt[:rank].T @ ((U[:, :rank].T @ f) / s[:rank])
    null = Vt[rank:].T
    pinv_P = Vt[:rank].T @ (U[:, :rank].T / s[:rank, None])
    tol = POINT_TOL * (1.0 + np.abs(f))
    if null.shape[1] == 0 or len(g) == 0:
        return base

    M = G @ null
    Um, sm, Vmt = np.linalg.svd(M, full_matrices=False)
    proj = Um.T @ (g - G @ base)
    cutoff = max(rcond, np.finfo(float).eps * max(M.shape))
    while cutoff < 1.0:
        keep = sm > cutoff * sm[0]
        z = Vmt[keep].T @ (proj[keep] / sm[keep])
        coef = base + null @ z
        # pull the coefficients back onto the value constraint
        coef -= pinv_P @ (P @ coef - f)
        if np.all(np.abs(P @ coef - f) <= tol):
            return coef
        cutoff *= 10.0
        logger.debug("value equations drifted; raising gradient cutoff to %.0e", cutoff)
    return base


def _solve_eliminate(Ks, dKs, f, g, rcond) -> np.ndarray:
    L1, _ = jittered_cholesky(Ks[0])
    K_rest = np.hstack(Ks[1:])
    dK_rest = np.hstack(dKs[1:])
    A = dK_rest - dKs[0] @ _cho_solve(L1, K_rest)
    b = g - dKs[0] @ _cho_solve(L1, f)
    alpha, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    beta = _cho_solve(L1, f - K_rest @ alpha)
    return np.concatenate([beta, alpha])


def fit_residuals(model: SurrogateModel, history: History) -> tuple[np.ndarray, np.ndarray]:
    """Value and gradient residuals of ``model`` at the training points."""
    X = history.points
    values = model.mean_many(X) - history.losses
    grads = np.array([model.mean_gradient(x) for x in X]) - history.grads
    return values, grads
