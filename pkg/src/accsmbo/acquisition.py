"""Expected improvement, metalearning density (EPDF) and meta-acquisition."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .exceptions import DataFormatError, EmptyMetadataError, InvalidInputError
from .gp import PosteriorEstimate
from .kernels import as_point

META_HEADER = ("objective_tag", "task_tag", "data_tag", "best_value")
# added to the smoothed density, as a fraction of the uniform density
DENSITY_FLOOR = 1e-3


@dataclass(frozen=True)
class AcquisitionContext:
    f_best: float
    epoch: int = 0
    rate: float = 1.0
    exploration_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise InvalidInputError(f"rate must lie in [0, 1], got {self.rate}")
        if self.epoch < 0:
            raise InvalidInputError(f"epoch must be non-negative, got {self.epoch}")
        if self.exploration_offset < 0:
            raise InvalidInputError("exploration offset must be non-negative")


def expected_improvement_array(mean, variance, f_best: float, xi: float = 0.0) -> np.ndarray:
    """Vectorised EI for minimisation."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improve = f_best - mean - xi
    out = np.maximum(improve, 0.0)
    pos = sigma > 0
    if np.any(pos):
        z = improve[pos] / sigma[pos]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        out[pos] = np.maximum(improve[pos] * ndtr(z) + sigma[pos] * pdf, 0.0)
    return out


def expected_improvement(est: PosteriorEstimate, ctx: AcquisitionContext) -> float:
    ei = expected_improvement_array(
        np.array([est.mean]), np.array([est.variance]), ctx.f_best, ctx.exploration_offset
    )
    return float(ei[0])


@dataclass(frozen=True)
class MetaRecord:
    objective_tag: str
    task_tag: str
    data_tag: str
    best_point: np.ndarray

    def __post_init__(self):
        if not (self.objective_tag and self.task_tag and self.data_tag):
            raise InvalidInputError("metalearning tags must be non-empty")
        object.__setattr__(self, "best_point", as_point(self.best_point))

    @property
    def tags(self) -> tuple[str, str, str]:
        return (self.objective_tag, self.task_tag, self.data_tag)


@dataclass(frozen=True, eq=False)
class EPDF:
    """Piecewise-constant density on ``[bin_edges[0], bin_edges[-1]]``."""

    bin_edges: np.ndarray
    densities: np.ndarray
    smoothing_bandwidth: float

    @property
    def bin_width(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    def density_many(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float).reshape(-1)
        lo, hi = self.bounds
        idx = np.searchsorted(self.bin_edges, lam, side="right") - 1
        # the closed right edge belongs to the last bin
        idx = np.where(lam == hi, len(self.densities) - 1, idx)
        inside = (lam >= lo) & (lam <= hi)
        out = np.zeros(lam.shape)
        out[inside] = self.densities[idx[inside]]
        return out

    def integral(self) -> float:
        return float(np.sum(self.densities * self.bin_width))


def scott_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) * len(values) ** (-1.0 / 5.0))


def filter_records(records: Iterable[MetaRecord], tags: Sequence[str] | None) -> list[MetaRecord]:
    if tags is None:
        return list(records)
    tags = tuple(tags)
    return [r for r in records if r.tags == tags]


def fit_epdf(
    records: Iterable[MetaRecord],
    tags: Sequence[str] | None = None,
    bins: int = 20,
    bandwidth: float | None = None,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> EPDF:
    """Histogram of best values, Gaussian-smoothed and renormalised.

    The smoothing window is renormalised per bin over the box, so a flat
    histogram stays flat up to the box edges.  ``bandwidth=None`` uses
    Scott's rule on the selected records, never narrower than half a bin.
    """
    if bins < 1:
        raise InvalidInputError("need at least one bin")
    selected = filter_records(records, tags)
    if not selected:
        raise EmptyMetadataError(f"no metalearning records match tags {tags}")
    values = np.array([r.best_point[0] for r in selected])
    lo, hi = bounds
    if np.any(values < lo) or np.any(values > hi):
        raise InvalidInputError(f"metalearning values must lie in [{lo}, {hi}]")

    edges = np.linspace(lo, hi, bins + 1)
    width = (hi - lo) / bins
    counts, _ = np.histogram(values, bins=edges)
    if bandwidth is None:
        bandwidth = scott_bandwidth(values)
    bandwidth = max(float(bandwidth), 0.5 * width)

    centers = 0.5 * (edges[:-1] + edges[1:])
    window = np.exp(-0.5 * ((centers[:, None] - centers[None, :]) / bandwidth) ** 2)
    window /= window.sum(axis=1, keepdims=True)
    smoothed = window @ counts.astype(float)
    density = smoothed / (smoothed.sum() * width)
    density = density + DENSITY_FLOOR / (hi - lo)
    density /= density.sum() * width
    return EPDF(edges, density, bandwidth)


def epdf_density(p: EPDF, lam) -> float:
    lam = as_point(lam)
    return float(p.density_many(lam[:1])[0])


def meta_ac(ac_value, lam, ctx: AcquisitionContext, p: EPDF | None) -> float:
    """``ac * (rate * p(lam) * e^-epoch + 1 - rate * e^-epoch)``."""
    if p is None or ctx.rate == 0.0:
        return float(ac_value)
    return float(meta_ac_array(np.array([ac_value]), np.array([epdf_density(p, lam)]), ctx)[0])


def meta_ac_array(ac_values, densities, ctx: AcquisitionContext) -> np.ndarray:
    ac_values = np.asarray(ac_values, dtype=float)
    if ctx.rate == 0.0:
        return ac_values.copy()
    decay = ctx.rate * math.exp(-ctx.epoch)
    # rate*p*e + 1 - rate*e, grouped so that p == 1 gives a factor of exactly 1
    return ac_values * (1.0 + decay * (np.asarray(densities, dtype=float) - 1.0))


def read_meta_records(path) -> list[MetaRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != META_HEADER:
            raise DataFormatError(f"{path}: expected header {','.join(META_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                value = float(row[3])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad best_value {row[3]!r}") from None
            try:
                records.append(MetaRecord(row[0].strip(), row[1].strip(), row[2].strip(), value))
            except InvalidInputError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    return records


def write_meta_records(records: Iterable[MetaRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(META_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.objective_tag},{r.task_tag},{r.data_tag},{repr(float(r.best_point[0]))}\n")


def write_epdf(p: EPDF, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("bin_left,bin_right,density\n")
        for left, right, dens in zip(p.bin_edges[:-1], p.bin_edges[1:], p.densities):
            fh.write(f"{repr(float(left))},{repr(float(right))},{repr(float(dens))}\n")
