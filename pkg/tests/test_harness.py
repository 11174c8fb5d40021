import json

import numpy as np
import pytest

import accsmbo.harness as harness
from accsmbo.data import gen_synthetic
from accsmbo.exceptions import AccSMBOError, ConfigError, DataFormatError, EvaluationError
from accsmbo.harness import (
    BenchmarkReport,
    compute_aggregates,
    emit_report,
    emit_trace,
    format_trace,
    load_config,
    parse_config,
    read_report_data,
    read_trace,
    run_benchmark,
    strip_wall_time,
    trace_path,
)
from accsmbo.objective import LogisticObjective, WithoutGradients
from accsmbo.optimizer import Trace, random_search

TAGS = ["logloss", "binary-classification", "sparse"]


def base_config(tmp_path, **overrides):
    cfg = {
        "objective": {"type": "synthetic", "kind": "wavy-unimodal"},
        "optimizers": ["random"],
        "seeds": [0],
        "epochs_budget": 2,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


class TestConfig:
    def test_minimal(self, tmp_path):
        cfg = parse_config(base_config(tmp_path), tmp_path)
        assert cfg.optimizers[0].name == "random" and cfg.seeds == (0,)
        assert cfg.target_loss is None

    @pytest.mark.parametrize("change", [
        {"optimizers": []},
        {"optimizers": ["sgd"]},
        {"optimizers": ["random", "random"]},
        {"optimizers": [{"name": "grid", "settings": {"step": 1}}]},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"seeds": [-1]},
        {"seeds": [0.5]},
        {"epochs_budget": 0},
        {"epochs_budget": True},
        {"target_loss": "low"},
        {"bounds": [1, 0]},
        {"objective": {"type": "synthetic", "kind": "zigzag"}},
        {"objective": {"type": "table"}},
        {"objective": {"type": "logistic"}},
        {"objective": {"type": "logistic", "path": "missing.svm"}},
        {"objective": {"type": "logistic", "synthetic": {}, "inner": {"warp": 1}}},
        {"extra": 1},
    ])
    def test_rejected(self, tmp_path, change):
        with pytest.raises(ConfigError):
            parse_config(base_config(tmp_path, **change), tmp_path)

    def test_missing_meta_records(self, tmp_path):
        opt = {"name": "acc-smbo", "settings": {"meta_records": "nope.csv"}}
        with pytest.raises(ConfigError, match="nope.csv"):
            parse_config(base_config(tmp_path, optimizers=[opt]), tmp_path)

    def test_bad_kernel(self, tmp_path):
        opt = {"name": "smbo", "settings": {"kernels": [{"type": "matern"}]}}
        with pytest.raises(ConfigError):
            parse_config(base_config(tmp_path, optimizers=[opt]), tmp_path)

    def test_relative_paths_resolve_to_config_dir(self, tmp_path):
        sub = tmp_path / "exp"
        sub.mkdir()
        gen_synthetic("meta", {}, 0, sub / "meta.csv")
        data = base_config(tmp_path, optimizers=[{"name": "acc-smbo", "settings": {"meta_records": "meta.csv"}}])
        data["output_dir"] = "results"
        cfg = load_config(write_config(sub, data))
        assert cfg.output_dir == sub / "results"
        assert cfg.optimizers[0].settings["meta_records"] == str(sub / "meta.csv")

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n"seeds": [0,]\n}')
        with pytest.raises(ConfigError, match=":2:"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.json")


class TestBuildObjective:
    def test_logistic_from_file(self, tmp_path):
        gen_synthetic("svmlight", {"n_samples": 60, "n_features": 4}, 0, tmp_path / "d.svm")
        data = base_config(tmp_path, objective={"type": "logistic", "path": "d.svm", "gradients": False})
        obj = harness.build_objective(parse_config(data, tmp_path))
        assert isinstance(obj, WithoutGradients)
        ev = obj(0.5)
        assert ev.hypergrad is None and 0 < ev.loss < 1

    def test_logistic_synthetic(self, tmp_path):
        spec = {"type": "logistic", "synthetic": {"n_samples": 80, "n_features": 5}, "inner": {"tolerance": 1e-9}}
        obj = harness.build_objective(parse_config(base_config(tmp_path, objective=spec), tmp_path))
        assert isinstance(obj, LogisticObjective)
        assert obj.data.n_samples == 80 and obj.cfg.tolerance == 1e-9


class TestTraceFiles:
    def test_empty_trace_header_only(self, tmp_path):
        path = tmp_path / "t.csv"
        emit_trace(Trace("x"), path)
        assert path.read_text() == "epoch,lambda,loss,best_loss,evals,wall_ms\n"

    def test_roundtrip(self, tmp_path):
        trace = random_search(harness.SyntheticObjective("wavy-unimodal"), 15, seed=3)
        path = tmp_path / "t.csv"
        emit_trace(trace, path)
        assert read_trace(path).records == trace.records

    def test_decimal_point(self, tmp_path):
        trace = random_search(harness.SyntheticObjective("wavy-unimodal"), 5, seed=1)
        for line in format_trace(trace).splitlines()[1:]:
            fields = line.split(",")
            assert len(fields) == 6
            float(fields[2])
            assert "." in fields[2] or "e" in fields[2]

    def test_strip_wall_time(self):
        assert strip_wall_time("a,b,wall_ms\n1,2,3.5\n") == "a,b\n1,2\n"

    @pytest.mark.parametrize("text", ["", "epoch,lambda\n", "epoch,lambda,loss,best_loss,evals,wall_ms\n1,2\n",
                                      "epoch,lambda,loss,best_loss,evals,wall_ms\nx,0.1,1,1,1,0\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "t.csv"
        path.write_text(text)
        with pytest.raises(DataFormatError):
            read_trace(path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(AccSMBOError, match="file"):
            emit_trace(Trace("x"), blocker / "t.csv")


class TestRunBenchmark:
    def test_single_run(self, tmp_path):
        cfg = parse_config(base_config(tmp_path), tmp_path)
        report = run_benchmark(cfg)
        assert list(report.traces) == ["random"] and list(report.traces["random"]) == [0]
        assert trace_path(cfg.output_dir, "random", 0).is_file()
        assert (cfg.output_dir / "report.txt").is_file()
        assert report.failures == []

    def test_acc_faster_than_random_on_unimodal(self, tmp_path):
        gen_synthetic("meta", {"center": 0.3}, 0, tmp_path / "meta.csv")
        data = base_config(
            tmp_path,
            objective={"type": "synthetic", "kind": "unimodal"},
            optimizers=[{"name": "acc-smbo", "label": "acc",
                         "settings": {"meta_records": "meta.csv", "meta_tags": TAGS}}, "random"],
            seeds=list(range(20)), epochs_budget=15, target_loss=1e-4,
        )
        report = run_benchmark(parse_config(data, tmp_path), write=False)
        assert report.aggregates["speedup"]["acc/random"] > 1

    def test_median_curve_matches_trace_files(self, tmp_path):
        data = base_config(tmp_path, optimizers=["smbo", "random"], seeds=[0, 1, 2, 3], epochs_budget=4,
                           target_loss=-0.03)
        cfg = parse_config(data, tmp_path)
        run_benchmark(cfg)
        stored = read_report_data(cfg.output_dir / "report.txt")
        for label in ("smbo", "random"):
            curves = []
            for seed in cfg.seeds:
                recs = read_trace(trace_path(cfg.output_dir, label, seed)).records
                curves.append([r.best_loss for r in recs])
            np.testing.assert_array_equal(np.median(curves, axis=0), stored["aggregates"]["median_best_loss"][label])

    def test_failures_recorded_not_raised(self, tmp_path, monkeypatch):
        real = harness.run_optimizer

        def flaky(spec, objective, seed, budget, bounds):
            if seed == 1:
                raise EvaluationError("objective diverged")
            return real(spec, objective, seed, budget, bounds)

        monkeypatch.setattr(harness, "run_optimizer", flaky)
        cfg = parse_config(base_config(tmp_path, seeds=[0, 1, 2]), tmp_path)
        report = run_benchmark(cfg)
        assert report.failures == [["random", 1, "evaluation", "objective diverged"]]
        assert sorted(report.traces["random"]) == [0, 2]
        assert "failed: random seed 1" in (cfg.output_dir / "report.txt").read_text()

    def test_report_byte_stable(self, tmp_path):
        gen_synthetic("meta", {}, 0, tmp_path / "meta.csv")
        data = base_config(
            tmp_path,
            optimizers=[{"name": "acc-smbo", "settings": {"meta_records": "meta.csv"}}, "smbo", "grid", "hoag",
                        "random"],
            seeds=[0, 1], epochs_budget=3, target_loss=-0.04,
        )
        texts, traces = [], []
        for run in ("a", "b"):
            data["output_dir"] = str(tmp_path / run)
            cfg = parse_config(data, tmp_path)
            run_benchmark(cfg)
            texts.append((cfg.output_dir / "report.txt").read_bytes())
            traces.append({p.name: strip_wall_time(p.read_text()) for p in (cfg.output_dir / "traces").iterdir()})
        assert texts[0] == texts[1]
        assert traces[0] == traces[1] and len(traces[0]) == 10

    def test_tampered_aggregates_rejected(self, tmp_path):
        cfg = parse_config(base_config(tmp_path), tmp_path)
        report = run_benchmark(cfg, write=False)
        bad = BenchmarkReport(report.config, report.traces, [], {"median_best_loss": {"random": [0.0, 0.0, 0.0]}})
        with pytest.raises(AccSMBOError, match="do not match"):
            emit_report(bad, tmp_path / "r.txt")


class TestAggregates:
    def _trace(self, best):
        t = Trace("x")
        for e, b in enumerate(best):
            t.append(e, (0.5,), b, e + 1, 0.0)
        return t

    def test_censored_runs_count_budget_plus_one(self):
        traces = {"a": {0: self._trace([3, 2, 1]), 1: self._trace([3, 3, 3])}}
        agg = compute_aggregates(traces, target_loss=1.5, budget=2)
        assert agg["epochs_to_target"]["a"] == [2, 3]
        assert agg["reached"]["a"] == 1
        assert agg["median_epochs_to_target"]["a"] == 2.5

    def test_speedup_ratio(self):
        traces = {"fast": {0: self._trace([0, 0, 0])}, "slow": {0: self._trace([5, 5, 0])}}
        agg = compute_aggregates(traces, target_loss=0.5, budget=2)
        # fast hits at epoch 0, so its ratio is undefined; slow/fast is the reverse comparison
        assert agg["speedup"] == {"slow/fast": 0.0}
        traces["fast"] = {0: self._trace([5, 0, 0])}
        agg = compute_aggregates(traces, target_loss=0.5, budget=2)
        assert agg["speedup"]["fast/slow"] == 2.0

    def test_no_target(self):
        agg = compute_aggregates({"a": {0: self._trace([1, 0])}}, None, 1)
        assert set(agg) == {"median_best_loss"}
