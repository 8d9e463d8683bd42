"""Command line interface: ``robustprop {train,attack,evaluate,verify,sweep,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackParams, property_pgd
from .data import DatasetError, load_csv
from .experiment import (
    ConfigError, ExperimentConfig, evaluate, load_nets, read_rows, rows_to_csv, summarize,
    train, verify_table, write_manifest, model_path,
)
from .metrics import constraint_security
from .nn import ModelFormatError, load_model
from .properties import PropertyError, PropertySpec, is_violation, make_property
from .training import TrainingError, parse_mode
from .verifier import Budget, verify

log = logging.getLogger("robustprop")


class CLIError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "out_dir", None) is not None:
        changes["out_dir"] = args.out_dir
    if getattr(args, "budget_seconds", None) is not None:
        changes["max_seconds"] = args.budget_seconds
    if getattr(args, "mode", None):
        changes["modes"] = list(args.mode)
    return replace(cfg, **changes) if changes else cfg


def _load_property(text: str) -> PropertySpec:
    """A property from inline JSON or a JSON file path."""
    p = Path(text)
    raw = p.read_text() if not text.lstrip().startswith("{") and p.exists() else text
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CLIError(f"property is not valid JSON: {exc}") from exc
    return property_from_json(doc)


def property_from_json(doc: dict) -> PropertySpec:
    doc = dict(doc)
    if "kind" not in doc or "epsilon" not in doc:
        raise CLIError("property needs at least 'kind' and 'epsilon'")
    kind, eps = doc.pop("kind"), doc.pop("epsilon")
    if "L" in doc:
        doc["lipschitz"] = doc.pop("L")
    return make_property(kind, eps, **doc)


# -- subcommands ----------------------------------------------------------------

def cmd_train(args):
    cfg = _load_config(args)
    files = []
    for seed in cfg.seeds:
        for mode in cfg.modes:
            _, tlog = train(cfg, mode, seed)
            path = model_path(cfg.out_dir, mode, seed)
            files += [path, path.with_suffix(".log.json")]
            last = tlog.epochs[-1]
            print(f"{parse_mode(mode).value} seed={seed}: loss={last.loss:.6g} "
                  f"train_acc={last.accuracy:.4f} -> {path}")
    write_manifest(cfg, files, command="train")


def cmd_attack(args):
    net = load_model(args.model)
    data = load_csv(args.data)
    spec = _load_property(args.property)
    params = AttackParams(spec.epsilon, steps=args.steps, restarts=args.restarts,
                          domain=None if args.domain is None else tuple(args.domain))
    adv, margins = property_pgd(spec, net, data.inputs, data.labels, params, seed=args.seed,
                                return_margin=True)
    violated = is_violation(spec, margins)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{**{f"x{i}": float(v) for i, v in enumerate(x)}, "label": int(y),
             "margin": float(m), "violated": int(b)}
            for x, y, m, b in zip(adv, data.labels, margins, violated)]
    rows_to_csv(rows, out / "adversarial.csv")
    report = constraint_security(spec, net, data, params, args.seed)
    report.to_csv(out / "security.csv")
    print(f"{spec.label()}: security={report.value:.4f} "
          f"({int(violated.sum())}/{len(data)} points attacked) -> {out}")


def cmd_evaluate(args):
    cfg = _load_config(args)
    nets = load_nets(cfg)
    rows = evaluate(cfg, nets, metrics=args.metrics,
                    reports_dir=Path(cfg.out_dir) / "reports" if args.per_point else None)
    path = Path(cfg.out_dir) / "evaluation.csv"
    rows_to_csv(rows, path)
    write_manifest(cfg, [path], command="evaluate")
    print(f"{len(rows)} rows -> {path}")


def cmd_sweep(args):
    cfg = _load_config(args)
    files = []
    nets = {}
    for seed in cfg.seeds:
        for mode in cfg.modes:
            nets[(parse_mode(mode).value, seed)] = train(cfg, mode, seed)[0]
            files.append(model_path(cfg.out_dir, mode, seed))
    rows = evaluate(cfg, nets)
    path = Path(cfg.out_dir) / "evaluation.csv"
    rows_to_csv(rows, path)
    files.append(path)
    if args.verify_table:
        table = verify_table(cfg, nets)
        tpath = Path(cfg.out_dir) / "satisfaction.csv"
        rows_to_csv(table, tpath)
        files.append(tpath)
    write_manifest(cfg, files, command="sweep")
    print(f"{len(nets)} nets, {len(rows)} rows -> {cfg.out_dir}")


def cmd_verify(args):
    qpath = Path(args.query)
    try:
        query = json.loads(qpath.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"{qpath}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    for key in ("model_path", "property", "center", "label"):
        if key not in query:
            raise CLIError(f"query is missing {key!r}")
    mpath = Path(query["model_path"])
    if not mpath.is_absolute():
        mpath = qpath.parent / mpath
    net = load_model(mpath)
    spec = property_from_json(query["property"])
    b = query.get("budget", {})
    budget = Budget(int(b.get("max_nodes", Budget.max_nodes)),
                    float(args.budget_seconds if args.budget_seconds is not None
                          else b.get("max_seconds", Budget.max_seconds)))
    domain = query.get("domain")
    verdict = verify(spec, net, np.asarray(query["center"], dtype=float), int(query["label"]),
                     budget, None if domain is None else tuple(domain))
    text = verdict.to_json()
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verdict.json").write_text(text)
    print(text)


def cmd_report(args):
    rows = read_rows(args.input)
    summary = summarize(rows)
    text = rows_to_csv(summary, None if args.out_dir is None else Path(args.out_dir) / "summary.csv")
    sys.stdout.write(text)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustprop", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--budget-seconds", type=float, default=None,
                        help="per-query verifier time limit")

    sp = sub.add_parser("train", help="train networks for every mode and seed")
    common(sp)
    sp.add_argument("--mode", action="append", help="restrict to these modes (repeatable)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("attack", help="property-targeted PGD on a dataset CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="dataset CSV (x0..x{n-1},label)")
    sp.add_argument("--property", required=True, help="property JSON or path to one")
    sp.add_argument("--steps", type=int, default=20)
    sp.add_argument("--restarts", type=int, default=1)
    sp.add_argument("--domain", type=float, nargs=2, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", default="attack-out")
    sp.add_argument("--budget-seconds", type=float, default=None, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("evaluate", help="metrics for trained networks over the epsilon sweep")
    common(sp)
    sp.add_argument("--mode", action="append")
    sp.add_argument("--metrics", nargs="+", default=None)
    sp.add_argument("--per-point", action="store_true", help="also write per-point reports")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("verify", help="decide one property query (JSON) exactly")
    sp.add_argument("--query", required=True)
    sp.add_argument("--out-dir", default=None)
    sp.add_argument("--budget-seconds", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="train, then evaluate every net over the sweep")
    common(sp)
    sp.add_argument("--mode", action="append")
    sp.add_argument("--verify-table", action="store_true",
                    help="also write CR/SR/LR satisfaction per net")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate an evaluation CSV over seeds")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, ConfigError, DatasetError, ModelFormatError, PropertyError,
            TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
