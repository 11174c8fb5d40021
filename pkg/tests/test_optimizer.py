import numpy as np
import pytest

import accsmbo.optimizer as opt
from accsmbo.acquisition import AcquisitionContext, fit_epdf, meta_ac_array
from accsmbo.data import synthetic_meta_records
from accsmbo.exceptions import EvaluationError, FitFailureError, InvalidInputError
from accsmbo.gp import History, Observation
from accsmbo.kernels import GaussianRBF
from accsmbo.objective import ObjectiveEvaluation, QuadraticBilevel, SyntheticObjective, WithoutGradients
from accsmbo.optimizer import (
    SMBOConfig,
    grid_search,
    hoag_descent,
    intensify_select,
    propose_candidates,
    random_search,
    run_acc_smbo,
    run_smbo,
)

WAVY = SyntheticObjective("wavy-unimodal")
UNI = SyntheticObjective("unimodal")
TAGS = ("logloss", "binary-classification", "sparse")


def evaluations_as_rows(trace):
    return [(e, p, loss) for e, p, loss in trace.evaluations]


class Counting:
    def __init__(self, objective):
        self.objective = objective
        self.calls = []

    def __call__(self, lam):
        self.calls.append(float(np.asarray(lam).ravel()[0]))
        return self.objective(lam)


class Failing:
    """Raises for every lambda in ``bad``."""

    def __init__(self, objective, bad):
        self.objective, self.bad = objective, set(bad)

    def __call__(self, lam):
        if float(np.asarray(lam).ravel()[0]) in self.bad:
            raise RuntimeError("diverged")
        return self.objective(lam)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"epochs_budget": 0}, {"challengers_per_epoch": 0}, {"surrogate": "rf"},
        {"acquisition": "ucb"}, {"rate": 1.5}, {"pool_size": 2}, {"initial_point": (0.1, 0.2)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            SMBOConfig(**kwargs)

    def test_default_kernels(self):
        assert SMBOConfig().kernel_list() == (GaussianRBF(1.0),)
        assert len(SMBOConfig(surrogate="multikernel-grad-gp").kernel_list()) == 2


class TestProposeCandidates:
    def test_single_peak_refined(self):
        peak = 0.5371
        acq = lambda X: np.exp(-((np.asarray(X)[:, 0] - peak) ** 2) / 0.01)  # noqa: E731
        cands = propose_candidates(object(), acq, SMBOConfig(), np.random.default_rng(0))
        assert len(cands) == 4
        assert abs(cands[0][0] - peak) <= 1e-6
        grid = np.linspace(0, 1, 100001)
        assert abs(cands[0][0] - grid[np.argmax(acq(grid[:, None]))]) <= 1e-5

    def test_constant_acquisition_follows_pool_order(self):
        acq = lambda X: np.ones(len(X))  # noqa: E731
        a = propose_candidates(object(), acq, SMBOConfig(), np.random.default_rng(5))
        b = propose_candidates(object(), acq, SMBOConfig(), np.random.default_rng(5))
        np.testing.assert_array_equal(np.array(a), np.array(b))
        pool = np.random.default_rng(5).random((1000, 1))
        np.testing.assert_array_equal(np.array(a[1:]), pool[1:4])

    def test_zero_acquisition_falls_back_to_pool(self):
        acq = lambda X: np.zeros(len(X))  # noqa: E731
        cands = propose_candidates(object(), acq, SMBOConfig(), np.random.default_rng(2))
        np.testing.assert_array_equal(np.array(cands), np.random.default_rng(2).random((1000, 1))[:4])

    def test_no_model_falls_back_to_pool(self):
        cands = propose_candidates(None, None, SMBOConfig(), np.random.default_rng(2))
        np.testing.assert_array_equal(np.array(cands), np.random.default_rng(2).random((1000, 1))[:4])

    def test_meta_ac_bias_at_epoch_zero(self):
        p = fit_epdf(synthetic_meta_records(center=0.62, spread=0.03, seed=0), TAGS)
        ctx = AcquisitionContext(0.0, epoch=0, rate=1.0)
        acq = lambda X: meta_ac_array(np.full(len(X), 0.3), p.density_many(np.asarray(X)[:, 0]), ctx)  # noqa: E731
        cands = propose_candidates(object(), acq, SMBOConfig(), np.random.default_rng(1))
        grid_density = p.density_many(np.linspace(0, 1, 10001))
        top_decile = np.quantile(grid_density, 0.9)
        assert all(p.density_many(c)[0] >= top_decile for c in cands)

    def test_skips_history_duplicates(self):
        acq = lambda X: np.ones(len(X))  # noqa: E731
        pool = np.random.default_rng(3).random((1000, 1))
        history = History([Observation(pool[1], 0.0), Observation(pool[2], 0.0)])
        cfg = SMBOConfig(refine_steps=0)
        cands = propose_candidates(object(), acq, cfg, np.random.default_rng(3), history)
        np.testing.assert_array_equal(np.array(cands), pool[[0, 3, 4, 5]])


class TestIntensify:
    def test_single_challenger(self):
        h = History()
        chosen, evals = intensify_select([np.array([0.9])], UNI, h)
        assert chosen[0] == 0.9 and len(evals) == 1 and len(h) == 1

    def test_argmin_matches_direct_evaluation(self):
        challengers = [np.array([x]) for x in (0.9, 0.35, 0.1, 0.6)]
        h = History()
        chosen, _ = intensify_select(challengers, WAVY, h)
        direct = [WAVY(c).loss for c in challengers]
        assert chosen[0] == challengers[int(np.argmin(direct))][0]
        np.testing.assert_array_equal(h.losses, direct)

    def test_tie_keeps_earliest(self):
        chosen, _ = intensify_select([np.array([0.2]), np.array([0.4])], UNI, History())
        assert chosen[0] == 0.2

    def test_failing_challenger_skipped(self):
        h = History()
        chosen, evals = intensify_select([np.array([0.3]), np.array([0.5])], Failing(UNI, {0.3}), h)
        assert chosen[0] == 0.5 and len(evals) == 1 and len(h) == 1

    def test_all_fail(self):
        with pytest.raises(EvaluationError):
            intensify_select([np.array([0.3])], Failing(UNI, {0.3}), History())

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            intensify_select([], UNI, History())


class TestRunSMBO:
    def test_smallest_loop(self):
        trace = run_smbo(WAVY, SMBOConfig(epochs_budget=1))
        assert [r.epoch for r in trace.records] == [0, 1]
        assert trace.records[0].lam == (1.0,)
        assert trace.total_evaluations == 5

    @pytest.mark.parametrize("runner", ["smbo", "acc"])
    def test_budget_accounting(self, runner):
        obj = Counting(WAVY)
        cfg = SMBOConfig(epochs_budget=6, challengers_per_epoch=3, seed=2)
        trace = run_smbo(obj, cfg) if runner == "smbo" else run_acc_smbo(obj, cfg, None)
        assert len(obj.calls) == 1 + 6 * 3 == trace.total_evaluations
        assert [r.evals for r in trace.records] == [1 + 3 * e for e in range(7)]

    def test_unimodal_reaches_minimum(self):
        best = [run_smbo(UNI, SMBOConfig(epochs_budget=15, seed=s)).best_loss for s in range(20)]
        assert np.median(best) <= 1e-3

    def test_best_loss_monotone(self):
        trace = run_smbo(SyntheticObjective("multimodal"), SMBOConfig(epochs_budget=10, seed=4))
        best = [r.best_loss for r in trace.records]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert best[-1] == min(e[2] for e in trace.evaluations)

    def test_fit_failure_falls_back_to_random(self, monkeypatch):
        def broken(history, cfg):
            raise FitFailureError("forced")

        monkeypatch.setattr(opt, "fit_surrogate", broken)
        trace = run_smbo(WAVY, SMBOConfig(epochs_budget=2, seed=8))
        assert trace.metadata["fit_failures"] == [1, 2]
        pool = np.random.default_rng(8).random((1000, 1))
        assert trace.challengers[0] == [tuple(x) for x in pool[:4]]

    def test_values_only_objective_with_gradient_surrogate(self):
        cfg = SMBOConfig(epochs_budget=3, surrogate="multikernel-grad-gp", seed=1)
        trace = run_smbo(WithoutGradients(WAVY), cfg)
        assert trace.total_evaluations == 13


class TestRunAccSMBO:
    def test_reduces_to_smbo(self):
        cfg = SMBOConfig(epochs_budget=8, rate=0.0, kernels=(GaussianRBF(1.0),), seed=3)
        epdf = fit_epdf(synthetic_meta_records(seed=0), TAGS)
        a = run_acc_smbo(WithoutGradients(WAVY), cfg, epdf)
        b = run_smbo(WAVY, cfg)
        assert a.challengers == b.challengers
        assert evaluations_as_rows(a) == evaluations_as_rows(b)

    def test_missing_epdf_downgrades(self):
        trace = run_acc_smbo(WAVY, SMBOConfig(epochs_budget=1), None)
        assert "downgrade" in trace.metadata

    def test_adversarial_prior_still_reaches_target(self):
        far = fit_epdf(synthetic_meta_records(center=0.9, other_fraction=0.0, seed=1), TAGS)
        grid = np.linspace(0, 1, 200001)
        target = WAVY.value_and_grad(grid)[0].min() + 0.005
        for seed in range(10):
            trace = run_acc_smbo(WAVY, SMBOConfig(epochs_budget=30, seed=seed), far)
            assert trace.epochs_to_target(target) is not None

    def test_coverage_over_long_run(self):
        far = fit_epdf(synthetic_meta_records(center=0.9, other_fraction=0.0, seed=1), TAGS)
        trace = run_acc_smbo(WAVY, SMBOConfig(epochs_budget=200, challengers_per_epoch=1, seed=0), far)
        x = np.sort([p[0] for _, p, _ in trace.evaluations])
        gaps = np.diff(np.concatenate([[0.0], x, [1.0]]))
        assert gaps.max() <= 0.15


class TestBaselines:
    def test_grid_two_points(self):
        trace = grid_search(UNI, 2)
        assert [r.lam for r in trace.records] == [(1.0,), (0.0,)]

    def test_grid_protocol(self):
        obj = Counting(WAVY)
        trace = grid_search(obj, 20)
        assert obj.calls[0] == 1.0 and obj.calls[-1] == 0.0 and len(obj.calls) == 20
        assert np.all(np.diff(obj.calls) < 0)
        assert trace.best_loss == min(WAVY(x).loss for x in np.linspace(1, 0, 20))

    def test_grid_rejects_single_point(self):
        with pytest.raises(InvalidInputError):
            grid_search(UNI, 1)

    def test_random_first_point_and_determinism(self):
        a, b = random_search(WAVY, 12, seed=4), random_search(WAVY, 12, seed=4)
        assert a.records[0].lam == (1.0,)
        assert a.evaluations == b.evaluations
        assert a.total_evaluations == 12

    def test_random_draws_uniform(self):
        trace = random_search(UNI, 10_000, seed=0)
        lams = [p[0] for _, p, _ in trace.evaluations[1:]]
        assert np.mean(lams) == pytest.approx(0.5, abs=0.02)
        assert min(lams) >= 0.0 and max(lams) <= 1.0

    def test_hoag_quadratic_monotone(self):
        q = QuadraticBilevel(a=1.0, b=0.8)
        target = q.optimum()
        trace = hoag_descent(q, step=1.0, epochs=400)
        lams = [r.lam[0] for r in trace.records]
        assert all(b <= a for a, b in zip(lams, lams[1:]))
        assert all(lam >= target - 1e-12 for lam in lams)
        assert abs(lams[-1] - target) < 1e-3

    def test_hoag_stationary_at_zero_gradient(self):
        trace = hoag_descent(SyntheticObjective("unimodal", center=1.0), epochs=5)
        assert {r.lam for r in trace.records} == {(1.0,)}

    def test_hoag_stalls_in_local_basin(self):
        grid = np.linspace(0, 1, 100001)
        v, _ = WAVY.value_and_grad(grid)
        minima = np.where((v[1:-1] < v[:-2]) & (v[1:-1] < v[2:]))[0] + 1
        maxima = np.where((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]))[0] + 1
        trap = grid[minima[-1]]
        barrier = grid[maxima[-1]]
        assert barrier < trap and v[minima[-1]] > v.min() + 0.1
        trace = hoag_descent(WAVY, epochs=300)
        final = trace.records[-1].lam[0]
        assert barrier < final <= 1.0
        assert final == pytest.approx(trap, abs=1e-3)

    def test_hoag_missing_gradient_flags(self):
        trace = hoag_descent(WithoutGradients(UNI), epochs=3)
        assert trace.metadata["missing_gradient"] == [0, 1, 2]
        assert {r.lam for r in trace.records} == {(1.0,)}

    def test_hoag_clamps_to_bounds(self):
        trace = hoag_descent(SyntheticObjective("unimodal", center=3.0), step=10.0, epochs=3)
        assert all(r.lam == (1.0,) for r in trace.records)


@pytest.mark.parametrize("name", ["smbo", "acc-smbo", "grid", "random", "hoag"])
def test_traces_deterministic(name):
    epdf = fit_epdf(synthetic_meta_records(seed=0), TAGS)

    def run():
        if name == "smbo":
            return run_smbo(WAVY, SMBOConfig(epochs_budget=5, seed=9))
        if name == "acc-smbo":
            return run_acc_smbo(WAVY, SMBOConfig(epochs_budget=5, seed=9), epdf)
        if name == "grid":
            return grid_search(WAVY)
        if name == "random":
            return random_search(WAVY, 10, seed=9)
        return hoag_descent(WAVY, epochs=10)

    a, b = run(), run()
    strip = lambda t: [(r.epoch, r.lam, r.loss, r.best_loss, r.evals) for r in t.records]  # noqa: E731
    assert strip(a) == strip(b)
    assert a.evaluations == b.evaluations


def test_missing_loss_objective_rejected():
    bad = lambda lam: ObjectiveEvaluation(float("nan"))  # noqa: E731
    with pytest.raises(EvaluationError):
        run_smbo(bad, SMBOConfig(epochs_budget=1))
