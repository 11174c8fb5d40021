"""Bilevel objectives: L2-regularised logistic regression and analytic stand-ins.

Every objective is a callable ``objective(lam) -> ObjectiveEvaluation`` where
``lam`` is a length-1 array (or a float).  For the logistic problem

    inner:  h(w, lam) = mean_i phi(y_i x_i.w) + lam |w|^2   (training split)
    outer:  f(lam)    = mean_i phi(y_i x_i.w*(lam))          (validation split)

and the hypergradient comes from the implicit function theorem,
``grad f = -(d2h/dw dlam)^T (d2h/dw2)^-1 dg/dw``, with the Hessian applied
matrix-free inside conjugate gradient.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import Dataset
from .exceptions import InvalidInputError
from .kernels import as_point

logger = logging.getLogger(__name__)


def logistic_loss(t):
    """``log(1 + exp(-t))`` evaluated without overflow."""
    return np.logaddexp(0.0, -np.asarray(t, dtype=float))


@dataclass(frozen=True)
class InnerConfig:
    sgd_epochs: int = 5
    batch_size: int = 32
    tolerance: float = 1e-8
    max_newton: int = 100
    seed: int = 0
    cg_tol: float = 1e-8
    cg_maxiter: int = 500


@dataclass(frozen=True)
class InnerSolveResult:
    weights: np.ndarray
    final_inner_loss: float
    iterations: int
    grad_norm: float
    converged: bool


@dataclass(frozen=True)
class ObjectiveEvaluation:
    loss: float
    hypergrad: np.ndarray | None = None
    inner: InnerSolveResult | None = None
    wall_time: float = 0.0


def _scalar_lambda(lam) -> float:
    lam = as_point(lam)
    if lam.size != 1:
        raise InvalidInputError(f"this objective takes a scalar hyperparameter, got {lam.size}")
    if lam[0] < 0:
        raise InvalidInputError(f"regularisation weight must be non-negative, got {lam[0]}")
    return float(lam[0])


def conjugate_gradient(matvec: Callable, b: np.ndarray, tol: float = 1e-8, maxiter: int = 500):
    """Solve ``A x = b`` for SPD ``A`` given as ``matvec``.

    Stops when ``|r| <= tol * |b|``.  Returns ``(x, converged, iterations)``.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = (tol * float(np.linalg.norm(b))) ** 2
    if rs <= target:
        return x, True, 0
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        curv = float(p @ Ap)
        if curv <= 0:
            return x, False, it
        step = rs / curv
        x += step * p
        r -= step * Ap
        rs_new = float(r @ r)
        if rs_new <= target:
            return x, True, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, False, maxiter


class LogisticProblem:
    """Loss, gradient and Hessian-vector products on one data split."""

    def __init__(self, X, y):
        self.X = X
        self.y = y
        self.n = X.shape[0]

    def margins(self, w):
        return self.y * (self.X @ w)

    def loss(self, w) -> float:
        return float(np.mean(logistic_loss(self.margins(w))))

    def grad(self, w) -> np.ndarray:
        coef = -self.y * expit(-self.margins(w))
        return np.asarray(self.X.T @ coef).ravel() / self.n

    def curvature(self, w) -> np.ndarray:
        s = expit(self.margins(w))
        return s * (1.0 - s)

    def hvp_factory(self, w, lam: float):
        weights = self.curvature(w) / self.n

        def hvp(v):
            return np.asarray(self.X.T @ (weights * (self.X @ v))).ravel() + 2.0 * lam * v

        return hvp


def _row_sq_norms(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.einsum("ij,ij->i", X, X)
    return np.asarray(X.multiply(X).sum(axis=1)).ravel()


def train_inner(data: Dataset, lam, cfg: InnerConfig = InnerConfig()) -> InnerSolveResult:
    """Minimise the regularised training loss: mini-batch SGD, then Newton-CG polish.

    SGD uses step ``1 / (L0 + 2 lam t)`` with ``L0`` the per-sample smoothness
    bound.  The polish runs damped Newton steps (Hessian solves by CG) until
    the full gradient norm reaches ``cfg.tolerance`` or ``cfg.max_newton``
    steps are spent; a step is only taken if it lowers the objective.
    """
    lam = _scalar_lambda(lam)
    X, y = data.train()
    prob = LogisticProblem(X, y)
    n, p = X.shape
    w = np.zeros(p)
    rng = np.random.default_rng(cfg.seed)

    L0 = 0.25 * float(np.max(_row_sq_norms(X), initial=0.0)) + 2.0 * lam
    t = 0
    for _ in range(cfg.sgd_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            coef = -yb * expit(-yb * (Xb @ w))
            g = np.asarray(Xb.T @ coef).ravel() / len(idx) + 2.0 * lam * w
            w = w - g / (L0 + 2.0 * lam * t)
            t += 1

    def objective(v):
        return prob.loss(v) + lam * float(v @ v)

    f = objective(w)
    g = prob.grad(w) + 2.0 * lam * w
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > cfg.tolerance and it < cfg.max_newton:
        hvp = prob.hvp_factory(w, lam)
        direction, _, _ = conjugate_gradient(hvp, -g, tol=min(0.1, math.sqrt(gnorm)), maxiter=cfg.cg_maxiter)
        slope = float(g @ direction)
        if not slope < 0:
            direction, slope = -g, -gnorm**2
        step, accepted = 1.0, False
        while step > 1e-12:
            w_new = w + step * direction
            f_new = objective(w_new)
            if f_new <= f + 1e-4 * step * slope or (f_new < f and step < 1e-3):
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            break
        w, f = w_new, f_new
        g = prob.grad(w) + 2.0 * lam * w
        gnorm = float(np.linalg.norm(g))
    converged = gnorm <= cfg.tolerance
    if not converged:
        logger.debug("inner solve stopped at |grad| = %.2e after %d Newton steps", gnorm, it)
    return InnerSolveResult(w, f, it, gnorm, converged)


def outer_loss(weights: np.ndarray, data: Dataset) -> float:
    X, y = data.validation()
    if X.shape[0] == 0:
        raise InvalidInputError("validation split is empty")
    return LogisticProblem(X, y).loss(weights)


def implicit_hypergradient(hvp: Callable, outer_grad_w: np.ndarray, cross: np.ndarray,
                           outer_grad_lam: float = 0.0, tol: float = 1e-8, maxiter: int = 500):
    """``outer_grad_lam - cross^T H^-1 outer_grad_w``; ``None`` if CG fails."""
    q, ok, _ = conjugate_gradient(hvp, outer_grad_w, tol=tol, maxiter=maxiter)
    if not ok:
        return None
    return outer_grad_lam - float(cross @ q)


def hypergradient(data: Dataset, lam, inner: InnerSolveResult, cfg: InnerConfig = InnerConfig()):
    """Gradient of the validation loss w.r.t. ``lam`` through the inner argmin.

    Returns a length-1 array, or ``None`` when the Hessian solve fails.
    """
    lam = _scalar_lambda(lam)
    Xt, yt = data.train()
    Xv, yv = data.validation()
    w = inner.weights
    hvp = LogisticProblem(Xt, yt).hvp_factory(w, lam)
    dg = LogisticProblem(Xv, yv).grad(w)
    value = implicit_hypergradient(hvp, dg, 2.0 * w, 0.0, cfg.cg_tol, cfg.cg_maxiter)
    return None if value is None else np.array([value])


class LogisticObjective:
    """``lam -> validation logistic loss`` with hypergradients."""

    def __init__(self, data: Dataset, cfg: InnerConfig = InnerConfig()):
        self.data = data
        self.cfg = cfg

    def __call__(self, lam) -> ObjectiveEvaluation:
        start = time.perf_counter()
        inner = train_inner(self.data, lam, self.cfg)
        loss = outer_loss(inner.weights, self.data)
        grad = hypergradient(self.data, lam, inner, self.cfg) if inner.converged else None
        if grad is not None and not np.all(np.isfinite(grad)):
            grad = None
        return ObjectiveEvaluation(loss, grad, inner, time.perf_counter() - start)


@dataclass(frozen=True)
class QuadraticBilevel:
    """``h = (w - a)^2 + lam w^2``, ``g = (w - b)^2``; everything in closed form."""

    a: float = 1.0
    b: float = 0.0

    def inner_solution(self, lam: float) -> float:
        return self.a / (1.0 + lam)

    def analytic_hypergradient(self, lam: float) -> float:
        A = self.inner_solution(lam)
        return -2.0 * (A - self.b) * self.a / (1.0 + lam) ** 2

    def optimum(self) -> float:
        return self.a / self.b - 1.0 if self.b else math.inf

    def __call__(self, lam) -> ObjectiveEvaluation:
        lam = _scalar_lambda(lam)
        w = np.array([self.inner_solution(lam)])
        hess = 2.0 + 2.0 * lam
        grad = implicit_hypergradient(
            lambda v: hess * v, 2.0 * (w - self.b), 2.0 * w, 0.0, tol=1e-14
        )
        inner = InnerSolveResult(w, float((w[0] - self.a) ** 2 + lam * w[0] ** 2), 0, 0.0, True)
        return ObjectiveEvaluation(float((w[0] - self.b) ** 2), np.array([grad]), inner)


SYNTHETIC_KINDS = ("unimodal", "wavy-unimodal", "multimodal")


@dataclass(frozen=True)
class SyntheticObjective:
    """Analytic 1-D losses with exact gradients.

    * ``unimodal``: ``(lam - center)^2``
    * ``wavy-unimodal``: ``(lam - center)^2 + amplitude * sin(frequency * lam)``
    * ``multimodal``: two Gaussian wells, the deeper one at ``center``, a
      shallower one (``well_ratio`` as deep) at ``second_center``.
    """

    kind: str = "wavy-unimodal"
    center: float = 0.3
    amplitude: float = 0.05
    frequency: float = 40.0
    second_center: float = 0.75
    well_ratio: float = 0.6
    well_width: float = 0.08

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise InvalidInputError(f"unknown synthetic objective {self.kind!r}")

    def value_and_grad(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "unimodal":
            return (lam - self.center) ** 2, 2.0 * (lam - self.center)
        if self.kind == "wavy-unimodal":
            A, om = self.amplitude, self.frequency
            return (
                (lam - self.center) ** 2 + A * np.sin(om * lam),
                2.0 * (lam - self.center) + A * om * np.cos(om * lam),
            )
        s2 = 2.0 * self.well_width**2
        e1 = np.exp(-((lam - self.center) ** 2) / s2)
        e2 = self.well_ratio * np.exp(-((lam - self.second_center) ** 2) / s2)
        value = -e1 - e2
        grad = 2.0 * (lam - self.center) / s2 * e1 + 2.0 * (lam - self.second_center) / s2 * e2
        return value, grad

    def trend(self, lam):
        """Wave-free part of the loss."""
        return (np.asarray(lam, dtype=float) - self.center) ** 2

    def __call__(self, lam) -> ObjectiveEvaluation:
        lam = as_point(lam)
        if lam.size != 1:
            raise InvalidInputError("synthetic objectives are one-dimensional")
        value, grad = self.value_and_grad(lam[0])
        return ObjectiveEvaluation(float(value), np.array([float(grad)]))


class WithoutGradients:
    """Wrap an objective and drop its hypergradients."""

    def __init__(self, objective):
        self.objective = objective

    def __call__(self, lam) -> ObjectiveEvaluation:
        return replace(self.objective(lam), hypergrad=None)
