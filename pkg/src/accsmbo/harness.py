"""Experiment configuration, benchmark runs and trace/report files.

A benchmark config is a JSON object::

    {
      "objective": {"type": "synthetic", "kind": "wavy-unimodal", "params": {}},
      "optimizers": [{"name": "acc-smbo", "label": "acc", "settings": {"rate": 1.0}},
                     {"name": "random"}],
      "seeds": [0, 1, 2],
      "epochs_budget": 15,
      "output_dir": "out",
      "target_loss": -0.045
    }

The objective may instead be ``{"type": "logistic", "path": "data.svm"}``
or ``{"type": "logistic", "synthetic": {...}}`` (generated on the fly);
both accept ``split_seed``, ``n_features``, ``inner`` (inner-solver
settings) and ``gradients`` (false strips hypergradients).  Relative paths
resolve against the config file's directory.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import EPDF, fit_epdf, read_meta_records
from .data import load_dataset, make_dataset, synthetic_classification
from .exceptions import AccSMBOError, ConfigError, DataFormatError
from .kernels import Box, CubicRBF, GaussianRBF
from .objective import InnerConfig, LogisticObjective, SyntheticObjective, WithoutGradients
from .optimizer import (
    SMBOConfig,
    Trace,
    TraceRecord,
    grid_search,
    hoag_descent,
    random_search,
    run_acc_smbo,
    run_smbo,
)

logger = logging.getLogger(__name__)

OPTIMIZERS = ("smbo", "acc-smbo", "random", "grid", "hoag")
TRACE_HEADER = "epoch,lambda,loss,best_loss,evals,wall_ms"
REPORT_DIVIDER = "# machine-readable"

_SMBO_KEYS = {"challengers_per_epoch", "surrogate", "acquisition", "rate", "pool_size",
              "refine_steps", "xi_fraction", "kernels"}
_SETTINGS = {
    "smbo": _SMBO_KEYS,
    "acc-smbo": _SMBO_KEYS | {"meta_records", "meta_tags", "epdf_bins"},
    "random": set(),
    "grid": {"n_points"},
    "hoag": {"step"},
}
_TOP_KEYS = {"objective", "optimizers", "seeds", "epochs_budget", "output_dir", "target_loss", "bounds"}


@dataclass(frozen=True)
class OptimizerSpec:
    name: str
    label: str
    settings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    objective: dict
    optimizers: tuple
    seeds: tuple
    epochs_budget: int = 15
    output_dir: Path = Path("out")
    target_loss: float | None = None
    bounds: tuple = (0.0, 1.0)
    base_dir: Path = Path(".")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "optimizers": [asdict(o) for o in self.optimizers],
            "seeds": list(self.seeds),
            "epochs_budget": self.epochs_budget,
            "target_loss": self.target_loss,
            "bounds": list(self.bounds),
        }


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _validate_objective(spec, base: Path) -> dict:
    _require(isinstance(spec, dict), "objective must be an object")
    kind = spec.get("type")
    if kind == "synthetic":
        _require(set(spec) <= {"type", "kind", "params", "gradients"}, "unknown key in synthetic objective")
        try:
            SyntheticObjective(spec.get("kind", "wavy-unimodal"), **spec.get("params", {}))
        except (TypeError, AccSMBOError) as exc:
            raise ConfigError(f"bad synthetic objective: {exc}") from None
    elif kind == "logistic":
        allowed = {"type", "path", "synthetic", "split_seed", "n_features", "inner", "gradients"}
        _require(set(spec) <= allowed, f"unknown key in logistic objective: {sorted(set(spec) - allowed)}")
        _require(("path" in spec) != ("synthetic" in spec), "logistic objective needs exactly one of path/synthetic")
        if "path" in spec:
            path = _resolve(base, spec["path"])
            _require(path.is_file(), f"dataset not found: {path}")
        try:
            InnerConfig(**spec.get("inner", {}))
        except TypeError as exc:
            raise ConfigError(f"bad inner settings: {exc}") from None
    else:
        raise ConfigError(f"objective type must be 'synthetic' or 'logistic', got {kind!r}")
    _require(isinstance(spec.get("gradients", True), bool), "objective.gradients must be a boolean")
    return spec


def _validate_optimizer(entry, base: Path) -> OptimizerSpec:
    if isinstance(entry, str):
        entry = {"name": entry}
    _require(isinstance(entry, dict), "optimizer entries must be names or objects")
    _require(set(entry) <= {"name", "label", "settings"}, "unknown key in optimizer entry")
    name = entry.get("name")
    _require(name in OPTIMIZERS, f"optimizer name must be one of {OPTIMIZERS}, got {name!r}")
    settings = dict(entry.get("settings", {}))
    unknown = set(settings) - _SETTINGS[name]
    _require(not unknown, f"unknown settings for {name}: {sorted(unknown)}")
    if "meta_records" in settings:
        path = _resolve(base, settings["meta_records"])
        _require(path.is_file(), f"metalearning records not found: {path}")
        settings["meta_records"] = str(path)
    if "meta_tags" in settings:
        tags = settings["meta_tags"]
        _require(isinstance(tags, list) and len(tags) == 3 and all(isinstance(t, str) for t in tags),
                 "meta_tags must be a list of three strings")
    if "kernels" in settings:
        _parse_kernels(settings["kernels"])
    label = entry.get("label", name)
    _require(isinstance(label, str) and label and "," not in label, "optimizer label must be a non-empty string")
    return OptimizerSpec(name, label, settings)


def _parse_kernels(items) -> tuple:
    _require(isinstance(items, list) and items, "kernels must be a non-empty list")
    out = []
    for item in items:
        _require(isinstance(item, dict) and item.get("type") in ("gaussian", "cubic"),
                 "each kernel needs type 'gaussian' or 'cubic'")
        if item["type"] == "gaussian":
            try:
                out.append(GaussianRBF(float(item.get("bandwidth", 1.0))))
            except (ValueError, AccSMBOError) as exc:
                raise ConfigError(f"bad kernel: {exc}") from None
        else:
            out.append(CubicRBF())
    return tuple(out)


def parse_config(data: dict, base_dir=".") -> ExperimentConfig:
    """Validate a config mapping; every problem raises :class:`ConfigError`."""
    base = Path(base_dir)
    _require(isinstance(data, dict), "config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    for key in ("objective", "optimizers", "seeds"):
        _require(key in data, f"missing config key {key!r}")
    objective = _validate_objective(data["objective"], base)

    _require(isinstance(data["optimizers"], list) and data["optimizers"], "need at least one optimizer")
    optimizers = tuple(_validate_optimizer(o, base) for o in data["optimizers"])
    labels = [o.label for o in optimizers]
    _require(len(set(labels)) == len(labels), "optimizer labels must be unique")

    seeds = data["seeds"]
    _require(isinstance(seeds, list) and seeds and all(_is_int(s) and s >= 0 for s in seeds),
             "seeds must be a non-empty list of non-negative integers")
    _require(len(set(seeds)) == len(seeds), "seeds must be distinct")

    budget = data.get("epochs_budget", 15)
    _require(_is_int(budget) and budget >= 1, "epochs_budget must be a positive integer")
    target = data.get("target_loss")
    _require(target is None or _is_number(target), "target_loss must be a number or null")
    bounds = data.get("bounds", [0.0, 1.0])
    _require(isinstance(bounds, list) and len(bounds) == 2 and all(_is_number(b) for b in bounds)
             and bounds[0] < bounds[1], "bounds must be [lower, upper] with lower < upper")

    return ExperimentConfig(
        objective=objective,
        optimizers=optimizers,
        seeds=tuple(seeds),
        epochs_budget=budget,
        output_dir=_resolve(base, data.get("output_dir", "out")),
        target_loss=None if target is None else float(target),
        bounds=(float(bounds[0]), float(bounds[1])),
        base_dir=base,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return parse_config(data, path.parent)


def build_objective(cfg: ExperimentConfig):
    spec = cfg.objective
    if spec["type"] == "synthetic":
        objective = SyntheticObjective(spec.get("kind", "wavy-unimodal"), **spec.get("params", {}))
    else:
        split_seed = spec.get("split_seed", 0)
        if "path" in spec:
            data = load_dataset(_resolve(cfg.base_dir, spec["path"]), split_seed, spec.get("n_features"))
        else:
            X, y = synthetic_classification(seed=split_seed, **spec["synthetic"])
            data = make_dataset(X, y, spec.get("n_features"), split_seed)
        objective = LogisticObjective(data, InnerConfig(**spec.get("inner", {})))
    return objective if spec.get("gradients", True) else WithoutGradients(objective)


def _load_epdf(settings: dict, bounds: tuple) -> EPDF | None:
    if "meta_records" not in settings:
        return None
    records = read_meta_records(settings["meta_records"])
    tags = settings.get("meta_tags")
    return fit_epdf(records, tags, bins=settings.get("epdf_bins", 20), bounds=bounds)


def smbo_config(spec: OptimizerSpec, seed: int, budget: int, bounds: tuple) -> SMBOConfig:
    kwargs = {k: v for k, v in spec.settings.items() if k in _SMBO_KEYS}
    if "kernels" in kwargs:
        kwargs["kernels"] = _parse_kernels(kwargs["kernels"])
    box = Box((bounds[0],), (bounds[1],))
    return SMBOConfig(epochs_budget=budget, seed=seed, bounds=box, initial_point=(bounds[1],), **kwargs)


def run_optimizer(spec: OptimizerSpec, objective, seed: int, budget: int, bounds=(0.0, 1.0)) -> Trace:
    """One optimizer run.  Baselines get ``budget + 1`` epochs so every trace spans epochs 0..budget."""
    box = Box((bounds[0],), (bounds[1],))
    s = spec.settings
    if spec.name in ("smbo", "acc-smbo"):
        cfg = smbo_config(spec, seed, budget, bounds)
        if spec.name == "smbo":
            return run_smbo(objective, cfg)
        return run_acc_smbo(objective, cfg, _load_epdf(s, bounds))
    if spec.name == "random":
        return random_search(objective, budget + 1, seed, box, (bounds[1],))
    if spec.name == "grid":
        return grid_search(objective, s.get("n_points", 20), box)
    return hoag_descent(objective, s.get("step", 1e-3), budget + 1, (bounds[1],), box)


@dataclass
class BenchmarkReport:
    config: dict
    traces: dict  # label -> {seed: Trace}
    failures: list  # [label, seed, category, message]
    aggregates: dict


def _best_curve(trace: Trace, n_epochs: int) -> list[float]:
    by_epoch = {r.epoch: r.best_loss for r in trace.records}
    curve, last = [], math.nan
    for e in range(n_epochs):
        last = by_epoch.get(e, last)
        curve.append(last)
    return curve


def compute_aggregates(traces: dict, target_loss: float | None, budget: int) -> dict:
    """Median best-loss curves, median epochs-to-target and pairwise speedups.

    Runs that never reach the target count as ``budget + 1`` epochs.
    ``speedup[a/b]`` is ``median_epochs[b] / median_epochs[a]``: values above
    one mean ``a`` reached the target in fewer epochs.
    """
    out = {"median_best_loss": {}, "epochs_to_target": {}, "reached": {}, "median_epochs_to_target": {},
           "speedup": {}}
    for label in sorted(traces):
        runs = traces[label]
        if not runs:
            continue
        n_epochs = max(r.records[-1].epoch for r in runs.values()) + 1
        curves = np.array([_best_curve(runs[s], n_epochs) for s in sorted(runs)])
        out["median_best_loss"][label] = [float(v) for v in np.median(curves, axis=0)]
        if target_loss is None:
            continue
        hits = {s: runs[s].epochs_to_target(target_loss) for s in sorted(runs)}
        epochs = [budget + 1 if h is None else h for h in hits.values()]
        out["epochs_to_target"][label] = epochs
        out["reached"][label] = sum(h is not None for h in hits.values())
        out["median_epochs_to_target"][label] = float(np.median(epochs))
    med = out["median_epochs_to_target"]
    for a in sorted(med):
        for b in sorted(med):
            if a != b and med[a] > 0:
                out["speedup"][f"{a}/{b}"] = med[b] / med[a]
    if target_loss is None:
        for key in ("epochs_to_target", "reached", "median_epochs_to_target", "speedup"):
            del out[key]
    return out


def trace_path(out_dir, label: str, seed: int) -> Path:
    return Path(out_dir) / "traces" / f"{label}_seed{seed}.csv"


def run_benchmark(cfg: ExperimentConfig, write: bool = True) -> BenchmarkReport:
    """Run every optimizer on every seed; failed runs are recorded, not raised."""
    objective = build_objective(cfg)
    traces: dict = {o.label: {} for o in cfg.optimizers}
    failures = []
    for spec in cfg.optimizers:
        for seed in cfg.seeds:
            try:
                trace = run_optimizer(spec, objective, seed, cfg.epochs_budget, cfg.bounds)
            except AccSMBOError as exc:
                logger.error("%s seed %d failed: %s", spec.label, seed, exc)
                failures.append([spec.label, seed, exc.category, str(exc)])
                continue
            traces[spec.label][seed] = trace
            if write:
                emit_trace(trace, trace_path(cfg.output_dir, spec.label, seed))
    report = BenchmarkReport(cfg.to_dict(), traces, failures,
                             compute_aggregates(traces, cfg.target_loss, cfg.epochs_budget))
    if write:
        emit_report(report, Path(cfg.output_dir) / "report.txt")
    return report


def _fmt(v: float) -> str:
    return repr(float(v))


def format_trace(trace: Trace) -> str:
    lines = [TRACE_HEADER]
    for r in trace.records:
        lam = ";".join(_fmt(v) for v in r.lam)
        lines.append(f"{r.epoch},{lam},{_fmt(r.loss)},{_fmt(r.best_loss)},{r.evals},{_fmt(r.wall_ms)}")
    return "\n".join(lines) + "\n"


def emit_trace(trace: Trace, path) -> None:
    """Write a trace as CSV; floats use ``repr`` so they read back exactly."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_trace(trace))
    except OSError as exc:
        raise AccSMBOError(f"{path}: cannot write trace: {exc.strerror}") from None


def read_trace(path, optimizer: str = "") -> Trace:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc.strerror}") from None
    if not lines or lines[0] != TRACE_HEADER:
        raise DataFormatError(f"{path}:1: expected header {TRACE_HEADER}")
    trace = Trace(optimizer)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            lam = tuple(float(v) for v in parts[1].split(";"))
            trace.records.append(TraceRecord(int(parts[0]), lam, float(parts[2]), float(parts[3]),
                                             int(parts[4]), float(parts[5])))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed trace row") from None
    return trace


def strip_wall_time(csv_text: str) -> str:
    """Drop the advisory ``wall_ms`` column, leaving the deterministic part."""
    return "\n".join(line.rsplit(",", 1)[0] for line in csv_text.splitlines()) + "\n"


def _summaries(report: BenchmarkReport) -> dict:
    out = {}
    for label in sorted(report.traces):
        out[label] = {}
        for seed in sorted(report.traces[label]):
            t = report.traces[label][seed]
            out[label][str(seed)] = {
                "best_loss": t.best_loss,
                "best_lambda": list(t.best_point),
                "epochs": t.records[-1].epoch,
                "evaluations": t.total_evaluations,
                "metadata": t.metadata,
            }
    return out


def format_report(report: BenchmarkReport) -> str:
    """Human-readable summary followed by a JSON section; no wall times, so byte-stable."""
    recomputed = compute_aggregates(report.traces, report.config.get("target_loss"),
                                    report.config["epochs_budget"])
    if json.dumps(recomputed, sort_keys=True) != json.dumps(report.aggregates, sort_keys=True):
        raise AccSMBOError("report aggregates do not match the traces they summarise")

    agg = report.aggregates
    lines = ["accsmbo benchmark report", ""]
    lines.append(f"objective: {json.dumps(report.config['objective'], sort_keys=True)}")
    lines.append(f"seeds: {len(report.config['seeds'])}  epochs_budget: {report.config['epochs_budget']}")
    target = report.config.get("target_loss")
    lines.append(f"target_loss: {'none' if target is None else _fmt(target)}")
    lines.append("")
    lines.append(f"{'optimizer':<16}{'runs':>6}{'median best':>16}{'median epochs':>15}{'reached':>9}")
    for label in sorted(report.traces):
        runs = report.traces[label]
        best = agg["median_best_loss"].get(label, [math.nan])[-1]
        epochs = agg.get("median_epochs_to_target", {}).get(label)
        reached = agg.get("reached", {}).get(label)
        lines.append(
            f"{label:<16}{len(runs):>6}{best:>16.6g}"
            f"{'-' if epochs is None else format(epochs, 'g'):>15}{'-' if reached is None else reached:>9}"
        )
    for pair, ratio in sorted(agg.get("speedup", {}).items()):
        lines.append(f"speedup {pair}: {ratio:.4g}")
    if report.failures:
        lines.append("")
        for label, seed, category, message in report.failures:
            lines.append(f"failed: {label} seed {seed}: {category}: {message}")
    payload = {
        "config": report.config,
        "aggregates": agg,
        "runs": _summaries(report),
        "failures": report.failures,
    }
    lines += ["", REPORT_DIVIDER, json.dumps(payload, sort_keys=True, indent=2)]
    return "\n".join(lines) + "\n"


def emit_report(report: BenchmarkReport, path) -> None:
    path = Path(path)
    text = format_report(report)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise AccSMBOError(f"{path}: cannot write report: {exc.strerror}") from None


def read_report_data(path) -> dict:
    """The machine-readable section of a report file."""
    path = Path(path)
    text = path.read_text()
    _, sep, tail = text.partition(REPORT_DIVIDER + "\n")
    if not sep:
        raise DataFormatError(f"{path}: no machine-readable section")
    return json.loads(tail)
