"""SMBO, accelerated SMBO and the baseline optimizers.

All optimizers return a :class:`Trace` with one record per epoch.  Epoch 0
is the evaluation of the initial point; for the SMBO family each later
epoch refits the surrogate, proposes ``challengers_per_epoch`` candidates
and evaluates all of them.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .acquisition import EPDF, AcquisitionContext, expected_improvement_array, meta_ac_array
from .exceptions import AccSMBOError, EvaluationError, FitFailureError, InvalidInputError
from .gp import GRAD_RCOND, History, Observation, SurrogateModel, fit_multikernel_grad_gp, fit_standard_gp
from .kernels import Box, GaussianRBF, as_point, default_kernels

logger = logging.getLogger(__name__)

SURROGATES = ("standard-gp", "multikernel-grad-gp")
ACQUISITIONS = ("ei", "meta-ac")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SMBOConfig:
    epochs_budget: int = 15
    challengers_per_epoch: int = 4
    surrogate: str = "standard-gp"
    kernels: tuple | None = None
    acquisition: str = "ei"
    rate: float = 1.0
    seed: int = 0
    pool_size: int = 1000
    refine_steps: int = 20
    initial_point: tuple = (1.0,)
    bounds: Box = field(default_factory=Box)
    xi_fraction: float = 0.01
    dedup_tol: float = 1e-9
    grad_rcond: float = GRAD_RCOND

    def __post_init__(self):
        if self.epochs_budget < 1:
            raise InvalidInputError("epochs_budget must be at least 1")
        if self.challengers_per_epoch < 1:
            raise InvalidInputError("challengers_per_epoch must be at least 1")
        if self.surrogate not in SURROGATES:
            raise InvalidInputError(f"surrogate must be one of {SURROGATES}")
        if self.acquisition not in ACQUISITIONS:
            raise InvalidInputError(f"acquisition must be one of {ACQUISITIONS}")
        if not 0.0 <= self.rate <= 1.0:
            raise InvalidInputError("rate must lie in [0, 1]")
        if self.pool_size < self.challengers_per_epoch:
            raise InvalidInputError("pool_size must be at least challengers_per_epoch")
        if len(as_point(self.initial_point)) != self.bounds.dim:
            raise InvalidInputError("initial point and bounds disagree on dimension")

    def kernel_list(self) -> tuple:
        if self.kernels is not None:
            return tuple(self.kernels)
        if self.surrogate == "standard-gp":
            return (GaussianRBF(1.0),)
        return default_kernels(self.bounds.dim)


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    lam: tuple
    loss: float
    best_loss: float
    evals: int
    wall_ms: float


@dataclass
class Trace:
    optimizer: str
    records: list = field(default_factory=list)
    # every evaluation as (epoch, point tuple, loss)
    evaluations: list = field(default_factory=list)
    challengers: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, epoch: int, lam, loss: float, evals: int, wall_ms: float) -> None:
        best = loss if not self.records else min(loss, self.records[-1].best_loss)
        self.records.append(
            TraceRecord(epoch, tuple(float(v) for v in as_point(lam)), float(loss), float(best), evals, wall_ms)
        )

    @property
    def best_loss(self) -> float:
        return self.records[-1].best_loss

    @property
    def best_point(self) -> tuple:
        return min(self.evaluations, key=lambda e: e[2])[1]

    @property
    def total_evaluations(self) -> int:
        return len(self.evaluations)

    def epochs_to_target(self, target: float) -> int | None:
        for rec in self.records:
            if rec.best_loss <= target:
                return rec.epoch
        return None

    def flag(self, key: str, epoch: int) -> None:
        self.metadata.setdefault(key, []).append(epoch)


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def ms(self) -> float:
        return round((time.perf_counter() - self.start) * 1000.0, 3)


def _evaluate(objective, lam):
    try:
        ev = objective(lam)
    except AccSMBOError:
        raise
    except Exception as exc:  # objective code is user-supplied
        raise EvaluationError(f"objective failed at {as_point(lam)}: {exc}") from exc
    if not np.isfinite(ev.loss):
        raise EvaluationError(f"objective returned non-finite loss at {as_point(lam)}")
    return ev


def _observation(lam, ev) -> Observation:
    grad = ev.hypergrad
    if grad is not None and not np.all(np.isfinite(grad)):
        grad = None
    return Observation(as_point(lam), ev.loss, grad)


def _normalised_history(history: History, box: Box, tol: float) -> History:
    """Deduplicated history in unit-box coordinates; missing gradients become NaN."""
    out = History()
    for obs in history.deduplicated(tol):
        grad = obs.grad * box.width if obs.grad is not None else np.full(obs.point.shape, np.nan)
        out.add(Observation(box.normalize(obs.point), obs.loss, grad))
    return out


def fit_surrogate(history: History, cfg: SMBOConfig) -> SurrogateModel:
    kernels = cfg.kernel_list()
    H = _normalised_history(history, cfg.bounds, cfg.dedup_tol)
    has_grads = any(o.has_valid_grad for o in H)
    if cfg.surrogate == "standard-gp" or len(kernels) == 1 or len(H) < 2 or not has_grads:
        return fit_standard_gp(H, kernels[0])
    return fit_multikernel_grad_gp(H, kernels, grad_rcond=cfg.grad_rcond)


def make_acquisition(model: SurrogateModel, history: History, cfg: SMBOConfig,
                     epdf: EPDF | None, epoch: int) -> Callable:
    """Vectorised acquisition ``X (raw coordinates) -> scores`` for one epoch."""
    losses = history.losses
    xi = cfg.xi_fraction * float(losses.max() - losses.min())
    ctx = AcquisitionContext(float(losses.min()), epoch, cfg.rate if epdf is not None else 0.0, xi)
    box = cfg.bounds

    def acquisition(X):
        X = np.asarray(X, dtype=float).reshape(-1, box.dim)
        mean, var = model.predict_many(box.normalize(X))
        ei = expected_improvement_array(mean, var, ctx.f_best, ctx.exploration_offset)
        if cfg.acquisition == "meta-ac" and epdf is not None:
            return meta_ac_array(ei, epdf.density_many(X[:, 0]), ctx)
        return ei

    return acquisition


def _golden_refine(acq: Callable, x: float, lo: float, hi: float, steps: int) -> tuple[float, float]:
    """Golden-section maximisation of ``acq`` on ``[lo, hi]``; returns (point, value)."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = acq([[c]])[0], acq([[d]])[0]
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = acq([[c]])[0]
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = acq([[d]])[0]
    return (c, fc) if fc >= fd else (d, fd)


def propose_candidates(model: SurrogateModel | None, acq: Callable | None, cfg: SMBOConfig,
                       rng: np.random.Generator, history: History | None = None) -> list[np.ndarray]:
    """Top ``challengers_per_epoch`` points of the acquisition over a seeded pool.

    In 1-D the best pool point is refined by golden-section search between
    its pool neighbours.  Candidates within ``dedup_tol`` of the history or
    of each other are skipped.  Ties keep pool order; an all-zero (or
    missing) acquisition falls back to the pool in draw order, which is a
    uniform random sample.
    """
    box = cfg.bounds
    pool = box.lo + rng.random((cfg.pool_size, box.dim)) * box.width
    values = np.zeros(len(pool)) if model is None or acq is None else np.asarray(acq(pool), dtype=float)
    history = history if history is not None else History()

    candidates: list[np.ndarray] = []

    def take(x) -> None:
        if history.contains(x, cfg.dedup_tol):
            return
        if any(np.max(np.abs(x - c)) <= cfg.dedup_tol for c in candidates):
            return
        candidates.append(np.asarray(x, dtype=float))

    if not np.any(values > 0):
        order = np.arange(len(pool))
    else:
        order = np.argsort(-values, kind="stable")
        if box.dim == 1 and cfg.refine_steps > 0:
            top = pool[order[0], 0]
            xs = pool[:, 0]
            below, above = xs[xs < top], xs[xs > top]
            lo = below.max() if below.size else box.lower[0]
            hi = above.min() if above.size else box.upper[0]
            x_ref, v_ref = _golden_refine(acq, top, lo, hi, cfg.refine_steps)
            if v_ref >= values[order[0]]:
                take(np.array([x_ref]))
                order = order[1:]
    for i in order:
        if len(candidates) >= cfg.challengers_per_epoch:
            break
        take(pool[i])
    return candidates


def intensify_select(challengers, objective, history: History):
    """Evaluate every challenger once and keep the lowest loss (earliest on ties).

    All successful evaluations are appended to ``history``.  Returns
    ``(chosen_point, [(point, evaluation), ...])``.
    """
    if not challengers:
        raise InvalidInputError("need at least one challenger")
    evaluations = []
    chosen, chosen_loss = None, math.inf
    for lam in challengers:
        try:
            ev = _evaluate(objective, lam)
        except EvaluationError as exc:
            logger.warning("skipping challenger: %s", exc)
            continue
        history.add(_observation(lam, ev))
        evaluations.append((as_point(lam), ev))
        if ev.loss < chosen_loss:
            chosen, chosen_loss = as_point(lam), ev.loss
    if chosen is None:
        raise EvaluationError(f"all {len(challengers)} challengers failed to evaluate")
    return chosen, evaluations


def run_smbo(objective, cfg: SMBOConfig = SMBOConfig(), epdf: EPDF | None = None,
             name: str | None = None) -> Trace:
    """SMBO loop; the surrogate and acquisition come from ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    clock = _Clock()
    box = cfg.bounds
    trace = Trace(name or ("acc-smbo" if cfg.acquisition == "meta-ac" else "smbo"))
    trace.metadata.update(surrogate=cfg.surrogate, acquisition=cfg.acquisition, seed=cfg.seed)
    if cfg.acquisition == "meta-ac" and epdf is None:
        trace.metadata["downgrade"] = "no EPDF available; rate forced to 0"
    history = History()

    x0 = box.clip(cfg.initial_point)
    ev0 = _evaluate(objective, x0)
    history.add(_observation(x0, ev0))
    trace.evaluations.append((0, tuple(x0), ev0.loss))
    trace.append(0, x0, ev0.loss, 1, clock.ms())

    for epoch in range(1, cfg.epochs_budget + 1):
        try:
            model = fit_surrogate(history, cfg)
            acq = make_acquisition(model, history, cfg, epdf, epoch - 1)
        except FitFailureError as exc:
            logger.warning("epoch %d: surrogate fit failed (%s); proposing at random", epoch, exc)
            trace.flag("fit_failures", epoch)
            model, acq = None, None
        challengers = propose_candidates(model, acq, cfg, rng, history)
        if not challengers:
            trace.flag("exhausted", epoch)
            break
        chosen, evals = intensify_select(challengers, objective, history)
        for lam, ev in evals:
            trace.evaluations.append((epoch, tuple(lam), ev.loss))
        trace.challengers.append([tuple(c) for c in challengers])
        chosen_loss = min(ev.loss for _, ev in evals)
        trace.append(epoch, chosen, chosen_loss, len(history), clock.ms())
    return trace


def run_acc_smbo(objective, cfg: SMBOConfig = SMBOConfig(), epdf: EPDF | None = None) -> Trace:
    """Accelerated SMBO: gradient multikernel surrogate plus meta-acquisition."""
    acc_cfg = replace(cfg, surrogate="multikernel-grad-gp", acquisition="meta-ac")
    return run_smbo(objective, acc_cfg, epdf, name="acc-smbo")


def grid_search(objective, n_points: int = 20, bounds: Box = Box()) -> Trace:
    """Evaluate ``n_points`` evenly spaced values from the upper bound down to the lower."""
    if n_points < 2:
        raise InvalidInputError("grid search needs at least two points")
    if bounds.dim != 1:
        raise InvalidInputError("grid search is one-dimensional")
    clock = _Clock()
    trace = Trace("grid")
    for i, lam in enumerate(np.linspace(bounds.upper[0], bounds.lower[0], n_points)):
        ev = _evaluate(objective, lam)
        trace.evaluations.append((i, (float(lam),), ev.loss))
        trace.append(i, lam, ev.loss, i + 1, clock.ms())
    return trace


def random_search(objective, epochs: int = 15, seed: int = 0, bounds: Box = Box(),
                  initial_point=(1.0,)) -> Trace:
    """First evaluation at ``initial_point``, then uniform draws; one evaluation per epoch."""
    if epochs < 1:
        raise InvalidInputError("random search needs at least one epoch")
    rng = np.random.default_rng(seed)
    clock = _Clock()
    trace = Trace("random", metadata={"seed": seed})
    for epoch in range(epochs):
        lam = bounds.clip(initial_point) if epoch == 0 else bounds.lo + rng.random(bounds.dim) * bounds.width
        ev = _evaluate(objective, lam)
        trace.evaluations.append((epoch, tuple(lam), ev.loss))
        trace.append(epoch, lam, ev.loss, epoch + 1, clock.ms())
    return trace


def hoag_descent(objective, step: float = 1e-3, epochs: int = 15, initial_point=(1.0,),
                 bounds: Box = Box()) -> Trace:
    """Projected hypergradient descent with a fixed step."""
    if step <= 0:
        raise InvalidInputError("step must be positive")
    clock = _Clock()
    trace = Trace("hoag", metadata={"step": step})
    lam = bounds.clip(initial_point)
    for epoch in range(epochs):
        ev = _evaluate(objective, lam)
        trace.evaluations.append((epoch, tuple(lam), ev.loss))
        trace.append(epoch, lam, ev.loss, epoch + 1, clock.ms())
        grad = ev.hypergrad
        if grad is None or not np.all(np.isfinite(grad)):
            trace.flag("missing_gradient", epoch)
            continue
        lam = bounds.clip(lam - step * as_point(grad))
    return trace
