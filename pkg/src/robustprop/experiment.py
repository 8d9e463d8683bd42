"""Experiment harness: configs, training runs, metric sweeps and satisfaction tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attacks import AttackParams
from .data import Dataset, gen_blobs, gen_two_moons, load_csv, load_idx, train_test_split
from .losses import LossConfig
from .metrics import (
    ACCURACY, METRICS, SATISFACTION, SECURITY, clean_accuracy, constraint_accuracy,
    constraint_satisfaction, constraint_security,
)
from .nn import Network, load_model, save_model
from .parallel import ordered_map
from .properties import Kind, PropertySpec, make_property
from .training import CONSTRAINT_KINDS, Mode, TrainConfig, parse_mode, train_network
from .verifier import Budget

# parameter defaults for properties used by constraint modes
DEFAULT_PROPERTY_PARAMS = {"SR": {"delta": 10.0}, "SCR": {"eta": 0.52}, "LR": {"lipschitz": 10.0}}

EVAL_COLUMNS = ["config_hash", "seed", "net", "property", "epsilon", "metric", "value",
                "lower", "upper", "timeouts", "n_points", "error"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    dataset: dict = field(default_factory=lambda: {"kind": "two_moons", "n": 300, "noise": 0.05})
    test_fraction: float = 1 / 3
    eval_limit: int | None = None
    hidden: list[int] = field(default_factory=lambda: [16])
    output_clamp: list[float] | None = field(default_factory=lambda: [-100.0, 100.0])
    modes: list[str] = field(default_factory=lambda: ["baseline"])
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    epsilon: float = 0.1
    domain: list[float] | None = None
    loss: dict = field(default_factory=dict)          # LossConfig fields
    attack: dict = field(default_factory=dict)        # AttackParams fields except epsilon
    constraint: dict = field(default_factory=dict)    # kind -> property parameters
    properties: list[dict] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=lambda: [0.1])
    metrics: list[str] = field(default_factory=lambda: [SECURITY, ACCURACY])
    n_samples: int = 100
    max_nodes: int = 100_000
    max_seconds: float = 30.0

    def __post_init__(self):
        if not self.epsilons:
            raise ConfigError("the epsilon sweep must be non-empty")
        if any(e < 0 for e in self.epsilons):
            raise ConfigError("sweep epsilons must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.modes:
            raise ConfigError("at least one training mode is required")
        for m in self.modes:
            parse_mode(m)
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r}; expected one of {METRICS}")
        for p in self.properties:
            if "kind" not in p:
                raise ConfigError("every property needs a kind")
        if self.dataset.get("kind") not in ("two_moons", "blobs", "csv", "idx"):
            raise ConfigError(f"unknown dataset kind {self.dataset.get('kind')!r}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path) -> ExperimentConfig:
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_toml(self) -> str:
        return dumps_toml(self.to_dict())

    def config_hash(self) -> str:
        """Stable digest of everything except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # -- derived objects ------------------------------------------------------

    def budget(self) -> Budget:
        return Budget(self.max_nodes, self.max_seconds)

    def domain_tuple(self):
        return None if self.domain is None else (float(self.domain[0]), float(self.domain[1]))

    def attack_params(self, epsilon: float) -> AttackParams:
        return AttackParams(epsilon, domain=self.domain_tuple(), **self.attack)

    def constraint_property(self, mode: Mode) -> PropertySpec | None:
        kind = CONSTRAINT_KINDS.get(mode)
        if kind is None:
            return None
        params = dict(DEFAULT_PROPERTY_PARAMS[kind.value])
        params.update(self.constraint.get(kind.value, {}))
        return make_property(kind, self.epsilon, **params)

    def eval_properties(self, epsilon: float) -> list[PropertySpec]:
        out = []
        for p in self.properties:
            p = dict(p)
            kind = p.pop("kind")
            out.append(make_property(kind, epsilon, **p))
        return out

    def train_config(self, mode, seed: int) -> TrainConfig:
        mode = parse_mode(mode)
        loss_kw = dict(self.loss)
        loss = LossConfig(**loss_kw, attack=self.attack_params(self.epsilon))
        return TrainConfig(tuple(self.hidden), mode, self.epochs, self.batch_size, self.lr,
                           self.epsilon, loss, self.constraint_property(mode),
                           self.attack_params(self.epsilon), self.domain_tuple(),
                           None if self.output_clamp is None else tuple(self.output_clamp), seed)

    def load_data(self, seed: int) -> tuple[Dataset, Dataset]:
        """Train/test split for ``seed``; the test side is truncated to ``eval_limit``."""
        d = dict(self.dataset)
        kind = d.pop("kind")
        if kind == "two_moons":
            ds = gen_two_moons(int(d.get("n", 300)), float(d.get("noise", 0.0)), seed)
        elif kind == "blobs":
            ds = gen_blobs(int(d.get("n", 300)), int(d.get("k", 2)), d.get("centers"),
                           float(d.get("sigma", 0.05)), seed, int(d.get("dim", 2)))
        elif kind == "csv":
            ds = load_csv(d["path"], d.get("n_classes"))
        else:
            ds = load_idx(d["images"], d["labels"], d.get("limit"), n_classes=d.get("n_classes"))
        if kind == "csv" and "test_path" in d:
            train, test = ds, load_csv(d["test_path"], ds.n_classes)
        elif kind == "idx" and "test_images" in d:
            train = ds
            test = load_idx(d["test_images"], d["test_labels"], d.get("test_limit"),
                            n_classes=ds.n_classes)
        else:
            train, test = train_test_split(ds, self.test_fraction, seed)
        if self.eval_limit is not None:
            test = test.head(self.eval_limit)
        return train, test


# -- minimal TOML writer for configs -------------------------------------------

def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps_toml(d: dict) -> str:
    """Top-level keys with inline tables; ``None`` values are omitted."""
    lines = [f"{k} = {_toml_value(v)}" for k, v in d.items() if v is not None]
    return "\n".join(lines) + "\n"


# -- runs -----------------------------------------------------------------

def model_path(out_dir, mode, seed) -> Path:
    return Path(out_dir) / "models" / f"{parse_mode(mode).value}_seed{seed}.json"


def train(config: ExperimentConfig, mode, seed: int, save: bool = True):
    """Train one network; returns ``(net, log)`` and writes the model and log when ``save``."""
    train_set, _ = config.load_data(seed)
    net, log = train_network(train_set, config.train_config(mode, seed))
    if save:
        path = model_path(config.out_dir, mode, seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(net, path)
        path.with_suffix(".log.json").write_text(json.dumps(log.to_dict(), indent=1))
    return net, log


def train_all(config: ExperimentConfig, save: bool = True) -> dict:
    """All (mode, seed) networks, keyed by ``(mode_value, seed)``."""
    nets = {}
    for seed in config.seeds:
        for mode in config.modes:
            nets[(parse_mode(mode).value, seed)] = train(config, mode, seed, save)[0]
    return nets


def load_nets(config: ExperimentConfig) -> dict:
    nets = {}
    for seed in config.seeds:
        for mode in config.modes:
            nets[(parse_mode(mode).value, seed)] = load_model(model_path(config.out_dir, mode, seed))
    return nets


def run_metric(metric: str, spec: PropertySpec, net: Network, data: Dataset,
               config: ExperimentConfig, seed: int):
    if metric == SECURITY:
        return constraint_security(spec, net, data, config.attack_params(spec.epsilon), seed,
                                   workers=1)
    if metric == ACCURACY:
        return constraint_accuracy(spec, net, data, config.n_samples, seed,
                                   config.domain_tuple(), workers=1)
    return constraint_satisfaction(spec, net, data, config.budget(), config.domain_tuple(),
                                   workers=1)


def evaluate(config: ExperimentConfig, nets: dict, workers: int | None = None,
             metrics=None, reports_dir=None) -> list[dict]:
    """One row per (net, property, epsilon, metric), ordered by those keys.

    Failures inside a cell are reported in that row's ``error`` column. With
    ``reports_dir`` set, per-point reports are written there as CSV.
    """
    import warnings

    metrics = list(metrics or config.metrics)
    h = config.config_hash()
    test_sets = {seed: config.load_data(seed)[1] for seed in {s for _, s in nets}}
    cells = []
    for (mode, seed), net in nets.items():
        for eps in config.epsilons:
            for pidx, spec in enumerate(config.eval_properties(eps)):
                for metric in metrics:
                    cells.append((mode, seed, pidx, spec, eps, metric, net))

    def run(cell):
        mode, seed, pidx, spec, eps, metric, net = cell
        row = {"config_hash": h, "seed": seed, "net": mode, "property": spec.label(),
               "epsilon": eps, "metric": metric, "value": math.nan, "lower": math.nan,
               "upper": math.nan, "timeouts": 0, "n_points": len(test_sets[seed]), "error": ""}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = run_metric(metric, spec, net, test_sets[seed], config, seed)
        except Exception as exc:  # reported per row
            row["error"] = f"{type(exc).__name__}: {exc}"
            return row, None
        lo, hi = rep.interval
        row.update(value=rep.value, lower=lo, upper=hi, timeouts=rep.n_timeouts)
        return row, rep

    results = ordered_map(run, cells, workers)
    if reports_dir is not None:
        rd = Path(reports_dir)
        rd.mkdir(parents=True, exist_ok=True)
        for (mode, seed, pidx, spec, eps, metric, _), (_, rep) in zip(cells, results):
            if rep is not None:
                rep.to_csv(rd / f"{mode}_seed{seed}_p{pidx}_{spec.kind.value}_eps{eps:g}_{metric}.csv")
    return [r for r, _ in results]


def verify_table(config: ExperimentConfig, nets: dict, epsilon: float | None = None,
                 workers: int | None = None) -> list[dict]:
    """CR / SR / LR satisfaction per trained net at one radius."""
    eps = config.epsilon if epsilon is None else epsilon
    specs = {}
    for p in config.properties:
        if p["kind"] in ("CR", "SR", "LR") and p["kind"] not in specs:
            kw = {k: v for k, v in p.items() if k != "kind"}
            specs[p["kind"]] = make_property(p["kind"], eps, **kw)
    for kind in ("CR", "SR", "LR"):
        if kind not in specs:
            specs[kind] = make_property(kind, eps, **DEFAULT_PROPERTY_PARAMS.get(kind, {}))
    specs = [specs[k] for k in ("CR", "SR", "LR")]
    h = config.config_hash()
    test_sets = {seed: config.load_data(seed)[1] for seed in {s for _, s in nets}}
    keys = list(nets)

    def run(key):
        mode, seed = key
        row = {"config_hash": h, "seed": seed, "net": mode, "epsilon": eps,
               "clean_accuracy": clean_accuracy(nets[key], test_sets[seed])}
        for spec in specs:
            k = spec.kind.value
            try:
                rep = constraint_satisfaction(spec, nets[key], test_sets[seed], config.budget(),
                                              config.domain_tuple(), workers=1)
                lo, hi = rep.interval
                row[f"{k}_satisfaction"] = rep.value
                row[f"{k}_lower"], row[f"{k}_upper"] = lo, hi
                row[f"{k}_timeouts"] = rep.n_timeouts
            except Exception as exc:
                row[f"{k}_satisfaction"] = math.nan
                row[f"{k}_error"] = f"{type(exc).__name__}: {exc}"
        return row

    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ordered_map(run, keys, workers)


# -- CSV helpers --------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def rows_to_csv(rows: list[dict], path=None, columns=None) -> str:
    columns = columns or (list(rows[0]) if rows else EVAL_COLUMNS)
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def summarize(rows: list[dict]) -> list[dict]:
    """Mean / min / max of ``value`` over seeds per (net, property, epsilon, metric)."""
    groups: dict = {}
    for r in rows:
        key = (r["net"], r["property"], float(r["epsilon"]), r["metric"])
        v = float(r["value"]) if r["value"] not in ("", None) else math.nan
        groups.setdefault(key, []).append(v)
    out = []
    for (net, prop, eps, metric), vals in groups.items():
        a = np.array(vals, dtype=float)
        ok = a[~np.isnan(a)]
        out.append({"net": net, "property": prop, "epsilon": eps, "metric": metric,
                    "n_seeds": len(vals),
                    "mean": float(ok.mean()) if ok.size else math.nan,
                    "min": float(ok.min()) if ok.size else math.nan,
                    "max": float(ok.max()) if ok.size else math.nan})
    return out


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(config: ExperimentConfig, files: list, path=None, **extra) -> Path:
    from . import __version__

    path = Path(path or Path(config.out_dir) / "manifest.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"name": config.name, "config_hash": config.config_hash(), "version": __version__,
           "config": config.to_dict(), "files": [str(f) for f in files], **extra}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def moons_preset(**overrides) -> ExperimentConfig:
    """Desk-scale two-moons configuration where all four properties are non-trivial."""
    base = dict(
        name="moons-preset",
        dataset={"kind": "two_moons", "n": 300, "noise": 0.05},
        eval_limit=40, hidden=[32], epochs=400, batch_size=32, lr=3e-2, epsilon=0.05,
        constraint={"SR": {"delta": 1.0}, "SCR": {"eta": 0.52}, "LR": {"lipschitz": 5.0}},
        properties=[{"kind": "SR", "delta": 1.0}, {"kind": "CR"},
                    {"kind": "SCR", "eta": 0.52}, {"kind": "LR", "lipschitz": 5.0}],
        epsilons=[0.05],
    )
    base.update(overrides)
    return ExperimentConfig(**base)
