"""Dataset-level metrics: constraint satisfaction, security and accuracy.

Each metric is the mean of a per-point indicator:

* satisfaction: the verifier proves the property on the whole ball;
* security: property-targeted PGD fails to find a violation;
* accuracy: fraction of uniform ball samples that satisfy the property.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackParams, point_rngs, property_pgd, sample_ball
from .data import Dataset
from .nn import Network, forward
from .parallel import ordered_map
from .properties import PropertySpec, is_violation, violation_margin
from .verifier import Budget, Status, verify

SATISFACTION = "satisfaction"
SECURITY = "security"
ACCURACY = "accuracy"
METRICS = (SATISFACTION, SECURITY, ACCURACY)


class TimeoutWarning(UserWarning):
    pass


@dataclass
class MetricReport:
    metric: str
    spec: PropertySpec
    dataset_size: int
    value: float
    verdicts: list[str]
    indicators: list[float]          # NaN marks a verifier timeout
    margins: list[float]             # witness/worst margin per point (NaN if none)
    times_ms: list[float]
    wall_clock: float = 0.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        for name in ("verdicts", "indicators", "margins", "times_ms"):
            if len(getattr(self, name)) != self.dataset_size:
                raise ValueError(f"{name} must have one entry per dataset point")

    @property
    def n_timeouts(self) -> int:
        return int(sum(math.isnan(v) for v in self.indicators))

    @property
    def interval(self) -> tuple[float, float]:
        """Bounds on the value if every timeout resolved to 0 or to 1."""
        ind = np.array(self.indicators, dtype=float)
        lo = np.nansum(ind) / self.dataset_size
        return float(lo), float(lo + self.n_timeouts / self.dataset_size)

    def metadata(self) -> dict:
        return {
            "metric": self.metric,
            "property": self.spec.to_dict(),
            "dataset_size": self.dataset_size,
            "value": self.value,
            "interval": list(self.interval),
            "timeouts": self.n_timeouts,
            "wall_clock": self.wall_clock,
            "seed": self.seed,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(self.metadata(), sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["point_index", "verdict", "margin_or_bound", "time_ms"])
            for i, (v, m, t) in enumerate(zip(self.verdicts, self.margins, self.times_ms)):
                w.writerow([i, v, repr(float(m)), repr(float(t))])

    @classmethod
    def from_csv(cls, path) -> MetricReport:
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing metadata header line")
            meta = json.loads(first[2:])
            rows = list(csv.DictReader(fh))
        verdicts = [r["verdict"] for r in rows]
        metric = meta["metric"]
        return cls(
            metric=metric,
            spec=PropertySpec.from_dict(meta["property"]),
            dataset_size=meta["dataset_size"],
            value=meta["value"],
            verdicts=verdicts,
            indicators=[_indicator(metric, v) for v in verdicts],
            margins=[float(r["margin_or_bound"]) for r in rows],
            times_ms=[float(r["time_ms"]) for r in rows],
            wall_clock=meta["wall_clock"],
            seed=meta["seed"],
            extra=meta.get("extra", {}),
        )


def _indicator(metric: str, verdict: str) -> float:
    if metric == SATISFACTION:
        return {"HOLDS": 1.0, "VIOLATED": 0.0, "TIMEOUT": math.nan}[verdict]
    if metric == SECURITY:
        return {"SECURE": 1.0, "ATTACKED": 0.0}[verdict]
    return float(verdict)


def _check(dataset: Dataset):
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")


def _chunks(n, size=256):
    return [np.arange(i, min(n, i + size)) for i in range(0, n, size)]


def constraint_security(spec: PropertySpec, net: Network, dataset: Dataset,
                        attack_params: AttackParams | None = None, seed: int = 0,
                        workers: int | None = None) -> MetricReport:
    """Fraction of points where property-targeted PGD finds no violation."""
    _check(dataset)
    params = (attack_params or AttackParams(spec.epsilon)).with_epsilon(spec.epsilon)
    start = time.perf_counter()

    def run(idx):
        t0 = time.perf_counter()
        _, m = property_pgd(spec, net, dataset.inputs[idx], dataset.labels[idx], params,
                            seed=seed, indices=idx, return_margin=True)
        return m, (time.perf_counter() - t0) * 1e3 / len(idx)

    margins, times = [], []
    for m, t in ordered_map(run, _chunks(len(dataset)), workers):
        margins.extend(m.tolist())
        times.extend([t] * len(m))
    broken = is_violation(spec, np.array(margins))
    ind = [0.0 if b else 1.0 for b in broken]
    return MetricReport(SECURITY, spec, len(dataset), float(np.mean(ind)),
                        ["ATTACKED" if b else "SECURE" for b in broken], ind, margins, times,
                        time.perf_counter() - start, seed,
                        {"steps": params.steps, "restarts": params.restarts})


def constraint_accuracy(spec: PropertySpec, net: Network, dataset: Dataset, n_samples: int = 100,
                        seed: int = 0, domain=None, workers: int | None = None) -> MetricReport:
    """Mean over points of the fraction of ``n_samples`` uniform ball samples satisfying the property."""
    _check(dataset)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    start = time.perf_counter()

    def run(i):
        t0 = time.perf_counter()
        rng = point_rngs(seed, [i])[0]
        x = dataset.inputs[i]
        pts = sample_ball(x, spec.epsilon, n_samples, rng, spec.in_metric, domain)
        m = violation_margin(spec, net, x, int(dataset.labels[i]), pts, check_ball=False)
        frac = 1.0 - is_violation(spec, m).mean()
        return frac, float(m.max()), (time.perf_counter() - t0) * 1e3

    res = ordered_map(run, range(len(dataset)), workers)
    ind = [r[0] for r in res]
    return MetricReport(ACCURACY, spec, len(dataset), float(np.mean(ind)),
                        [repr(float(v)) for v in ind], ind, [r[1] for r in res],
                        [r[2] for r in res], time.perf_counter() - start, seed,
                        {"n_samples": n_samples})


def constraint_satisfaction(spec: PropertySpec, net: Network, dataset: Dataset,
                            budget: Budget = Budget(), domain=None,
                            workers: int | None = None) -> MetricReport:
    """Fraction of points the verifier proves.

    Timeouts are excluded from ``value`` and reported through ``interval``.
    """
    _check(dataset)
    start = time.perf_counter()

    def run(i):
        t0 = time.perf_counter()
        v = verify(spec, net, dataset.inputs[i], int(dataset.labels[i]), budget, domain)
        return v, (time.perf_counter() - t0) * 1e3

    res = ordered_map(run, range(len(dataset)), workers)
    verdicts = [v.status.value for v, _ in res]
    ind = [_indicator(SATISFACTION, s) for s in verdicts]
    margins = [math.nan if v.margin is None else float(v.margin) for v, _ in res]
    decided = [v for v in ind if not math.isnan(v)]
    timeouts = len(ind) - len(decided)
    value = float(np.mean(decided)) if decided else 0.0
    report = MetricReport(SATISFACTION, spec, len(dataset), value, verdicts, ind, margins,
                          [t for _, t in res], time.perf_counter() - start, 0,
                          {"max_nodes": budget.max_nodes, "max_seconds": budget.max_seconds})
    if timeouts:
        lo, hi = report.interval
        warnings.warn(f"{timeouts} of {len(ind)} verifier queries timed out; "
                      f"satisfaction lies in [{lo:.4f}, {hi:.4f}]", TimeoutWarning, stacklevel=2)
    return report


def clean_accuracy(net: Network, dataset: Dataset) -> float:
    out = forward(net, dataset.inputs)[0]
    return float((out.argmax(axis=1) == dataset.labels).mean())


def unperturbed_rate(spec: PropertySpec, net: Network, dataset: Dataset) -> float:
    """Fraction of points whose property right-hand side holds at the center itself."""
    hits = [not is_violation(spec, violation_margin(spec, net, x, int(y), x))
            for x, y in zip(dataset.inputs, dataset.labels)]
    return float(np.mean(hits))
