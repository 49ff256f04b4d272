"""Command-line front end: simulate, sweep, calibrate, gen-dataset, train-eval, report.

Every command that takes ``--seed`` is byte-reproducible: the same flags give
the same output files, whatever ``--jobs`` is. Settings resolve as command-line
flag, then ``--config`` file, then built-in default; the resolved values and
where each came from are written to a run manifest next to the outputs.

Exit codes: 0 success, 1 some scenario or cell failed, 2 bad usage or input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attack import DEFAULT_EPSILON_PU, STRATEGIES, AttackerConfig
from .dataset import (DEFAULT_ALRS, DEFAULT_SIZES, DEFAULT_STRATEGIES, DatasetError, enumerate_combinations,
                      generate_corpus, load_corpus, save_corpus, split, window_transform)
from .feeder import FeederError, default_feeder_path, feeder_from_dict, load_feeder, save_feeder
from .localization import (Presorted, baseline_most_frequent, evaluate, fit_many, mean_rows,
                           save_trees, write_metrics_csv)
from .scenario import (CalibrationError, ScenarioConfig, ScenarioError, calibrate, run_scenario,
                       snapshot_columns, sweep_alr)

log = logging.getLogger("gridworm")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
SEED_ENV = "GRIDWORM_SEED"
SWEEP_ALRS = "0.05,0.075,0.1,0.125,0.15,0.2,0.3,0.5,1.0"
# settings that never change the content of an output file
NON_SEMANTIC = {"command", "config", "jobs", "out", "out_dir", "dump_snapshots", "trees_dir",
                "run_manifest", "verbose", "func"}
_UNSET = object()


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    """Provenance of one CLI run; the only file whose content varies between runs."""

    command: str
    config: dict
    config_sources: dict
    config_hash: str
    seeds: dict
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    exit_code: int = EXIT_OK

    def write(self, path: Path) -> None:
        self.outputs = sorted(set(self.outputs) | {str(path)})
        text = json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n"
        path.write_text(text, encoding="utf-8")


# -- argument types --------------------------------------------------------------

def _unit_interval(text) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"{x} is outside [0, 1]")
    return x


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        out = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of numbers: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    try:
        out = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of integers: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    out = [x.strip() for x in str(text).split(",") if x.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# -- parser ------------------------------------------------------------------------

def build_parser(seed_default: int = 0) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridworm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridworm {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--feeder", default=None,
                        help="feeder JSON (default: the bundled ieee123-reduced.json)")
    common.add_argument("--config", default=None,
                        help="JSON file of default settings, flat or keyed by command")
    common.add_argument("--run-manifest", default=None,
                        help="where to write the run manifest (default: next to the outputs)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="one attacked (or quiet) day")
    p.add_argument("--strategy", choices=STRATEGIES, default="none")
    p.add_argument("--alr", type=_unit_interval, default=0.1, help="attack load ratio in [0, 1]")
    p.add_argument("--nodes", default="all", help='comma list of attackable bus names, or "all"')
    p.add_argument("--seed", type=int, default=seed_default, help="attacker random stream")
    p.add_argument("--demand-seed", type=int, default=None,
                   help="demand noise seed (default: the feeder's calibration seed)")
    p.add_argument("--p", type=_unit_interval, default=0.5, help="on-probability of the random strategy")
    eps = p.add_mutually_exclusive_group()
    eps.add_argument("--epsilon", type=float, default=None,
                     help=f"heuristic threshold in pu (default {DEFAULT_EPSILON_PU})")
    eps.add_argument("--epsilon-volts", type=float, default=None,
                     help="heuristic threshold in volts at the regulated bus")
    p.add_argument("--out", default=None, help="result JSON")
    p.add_argument("--dump-snapshots", default=None, help="per-minute snapshot and label CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="taps and lifespan over ALR and strategy")
    p.add_argument("--alr-list", type=_float_list, default=SWEEP_ALRS)
    p.add_argument("--strategies", type=_str_list, default=",".join(DEFAULT_STRATEGIES))
    p.add_argument("--nodes", default="all")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV strategy,alr,taps,lifespan")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", parents=[common], help="fit the demand scale to a tap target")
    p.add_argument("--seed", type=int, default=seed_default, help="demand noise seed")
    p.add_argument("--target", type=int, default=36)
    p.add_argument("--tolerance", type=int, default=12)
    p.add_argument("--out", default=None, help="feeder JSON with the calibration block")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gen-dataset", parents=[common], help="labelled attack corpus")
    p.add_argument("--sizes", type=_int_list, default=",".join(map(str, DEFAULT_SIZES)))
    p.add_argument("--alrs", type=_float_list, default=",".join(map(repr, DEFAULT_ALRS)))
    p.add_argument("--strategies", type=_str_list, default=",".join(DEFAULT_STRATEGIES))
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train-eval", parents=[common], help="2-fold tree localization metrics")
    p.add_argument("--dataset-dir", default=None)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--seed", type=int, default=seed_default, help="fold permutation seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="per-node metric CSV")
    p.add_argument("--trees-dir", default=None, help="also dump the fitted trees as JSON")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("report", parents=[common], help="merge sweep and metric CSVs")
    p.add_argument("--in", dest="inputs", nargs="+", default=None,
                   help="CSV files or directories holding them")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def parse(argv=None):
    """Parse ``argv`` with flag > config file > default precedence.

    Returns the namespace and a dict telling where each setting came from.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser(_default_seed())
    first = parser.parse_args(argv)
    sp = _subparser(parser, first.command)
    dests = {a.dest for a in sp._actions if a.dest != "help"}

    doc = _load_config(first.config)
    cfg = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    section = doc.get(first.command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config section {first.command!r} must be an object")
    cfg.update({k.replace("-", "_"): v for k, v in section.items()})
    cfg.pop("config", None)
    unknown = sorted(set(cfg) - dests)
    if unknown:
        raise UsageError(f"unknown config keys for {first.command}: {', '.join(unknown)}")

    # which settings were typed on the command line
    sp.set_defaults(**{d: _UNSET for d in dests})
    probe = parser.parse_args(argv)
    explicit = {d for d in dests if getattr(probe, d) is not _UNSET}

    parser = build_parser(_default_seed())
    sp = _subparser(parser, first.command)
    sp.set_defaults(**cfg)
    args = parser.parse_args(argv)
    sources = {d: "flag" if d in explicit else "config" if d in cfg else "default"
               for d in sorted(dests - {"func"})}
    return args, sources


# -- helpers ---------------------------------------------------------------------

def _feeder(args):
    path = args.feeder or default_feeder_path()
    try:
        return load_feeder(path)
    except FileNotFoundError as exc:
        raise UsageError(f"feeder not found: {path}") from exc


def _controlled(feeder, nodes) -> tuple[int, ...]:
    names = feeder.attackable_names
    if nodes is None or str(nodes).strip().lower() == "all":
        return (1,) * len(names)
    wanted = _str_list(nodes)
    bad = [n for n in wanted if n not in names]
    if bad:
        raise UsageError(f"unknown node name(s) {', '.join(bad)}; attackable: {', '.join(names)}")
    return tuple(int(n in wanted) for n in names)


def _settings(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = v
    return out


def _config_hash(command: str, settings: dict, extra: dict) -> str:
    semantic = {k: v for k, v in settings.items() if k not in NON_SEMANTIC}
    doc = {"command": command, "settings": semantic, "inputs": extra, "version": __version__}
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _pmap(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _check_jobs(jobs):
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args, run: RunManifest) -> int:
    feeder = _feeder(args)
    if args.epsilon_volts is not None:
        reg = feeder.oltcs[0].to_bus
        eps = AttackerConfig.epsilon_from_volts(args.epsilon_volts,
                                                feeder.buses[feeder.bus_index(reg)].base_voltage)
    else:
        eps = DEFAULT_EPSILON_PU if args.epsilon is None else args.epsilon
    controlled = _controlled(feeder, args.nodes)
    demand_seed = args.demand_seed
    if demand_seed is None:
        demand_seed = int((feeder.calibration or {}).get("seed", 0))
    try:
        attacker = AttackerConfig(controlled, alr=float(args.alr), strategy=args.strategy,
                                  p=float(args.p), epsilon=float(eps), rng_seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    run.seeds = {"attacker": args.seed, "demand": demand_seed}
    run.config_hash = _config_hash("simulate", run.config, {"feeder": feeder.digest()})
    cfg = ScenarioConfig(attacker, demand_seed=demand_seed)
    try:
        res = run_scenario(feeder, cfg, record=args.dump_snapshots is not None)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED

    print(f"taps {res.tap_change_count}")
    print(f"lifespan {res.lifespan:.6g}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "strategy": args.strategy, "alr": float(args.alr), "epsilon_pu": float(eps),
            "nodes": [n for n, c in zip(feeder.attackable_names, controlled) if c],
            "seed": args.seed, "demand_seed": demand_seed,
            "taps": res.tap_change_count, "lifespan": res.lifespan,
            "tap_position": res.taps.tolist(),
            "attacks_per_minute": res.labels.sum(axis=1).tolist(),
        }
        out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        run.outputs.append(str(out))
    if args.dump_snapshots:
        path = Path(args.dump_snapshots)
        cols = snapshot_columns(feeder)
        header = ["minute"] + cols + [f"label_{n}" for n in feeder.attackable_names]
        rows = ([t, *res.snapshots[t].tolist(), *res.labels[t].tolist()]
                for t in range(res.snapshots.shape[0]))
        _write_csv(path, header, rows)
        run.outputs.append(str(path))
    return EXIT_OK


def _sweep_task(task):
    doc, template, alrs, strategy = task
    return sweep_alr(feeder_from_dict(doc), template, alrs, [strategy],
                     baseline_taps=template.nominal_taps)


def cmd_sweep(args, run: RunManifest) -> int:
    _check_jobs(args.jobs)
    feeder = _feeder(args)
    strategies = list(args.strategies)
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategies {bad}; choose from {STRATEGIES}")
    alrs = [float(a) for a in args.alr_list]
    if any(not 0 <= a <= 1 for a in alrs):
        raise UsageError("ALR values must lie in [0, 1]")
    controlled = _controlled(feeder, args.nodes)
    demand_seed = int((feeder.calibration or {}).get("seed", 0))
    template = ScenarioConfig(AttackerConfig(controlled, rng_seed=args.seed), demand_seed=demand_seed)
    run.seeds = {"attacker": args.seed, "demand": demand_seed}
    run.config_hash = _config_hash("sweep", run.config, {"feeder": feeder.digest()})
    tasks = [(feeder.to_dict(), template, alrs, s) for s in strategies]
    try:
        rows = [r for part in _pmap(_sweep_task, tasks, args.jobs) for r in part]
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print("strategy,alr,taps,lifespan")
    for r in rows:
        print(f"{r['strategy']},{r['alr']!r},{r['taps']},{r['lifespan']:.6g}")
    if args.out:
        out = Path(args.out)
        _write_csv(out, ["strategy", "alr", "taps", "lifespan"],
                   ([r["strategy"], r["alr"], r["taps"], r["lifespan"]] for r in rows))
        run.outputs.append(str(out))
    return EXIT_OK


def cmd_calibrate(args, run: RunManifest) -> int:
    feeder = _feeder(args)
    run.seeds = {"demand": args.seed}
    run.config_hash = _config_hash("calibrate", run.config, {"feeder": feeder.digest()})
    try:
        scale, feeder = calibrate(feeder, seed=args.seed, target_taps=args.target,
                                  tolerance=args.tolerance)
    except (CalibrationError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"scale {scale!r}")
    print(f"taps {feeder.calibration['achieved_taps']}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_feeder(feeder, out)
        run.outputs.append(str(out))
    return EXIT_OK


def cmd_gen_dataset(args, run: RunManifest) -> int:
    _check_jobs(args.jobs)
    if not args.out_dir:
        raise UsageError("--out-dir is required")
    feeder = _feeder(args)
    strategies = list(args.strategies)
    bad = [s for s in strategies if s not in STRATEGIES or s == "none"]
    if bad:
        raise UsageError(f"unknown attack strategies {bad}")
    alrs = [float(a) for a in args.alrs]
    if any(not 0 <= a <= 1 for a in alrs):
        raise UsageError("ALR values must lie in [0, 1]")
    try:
        combos = enumerate_combinations(feeder.n_attackable, args.sizes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if any(sum(c) == 0 for c in combos):
        raise UsageError("size 0 has no attacked node")
    run.config_hash = _config_hash("gen-dataset", run.config, {"feeder": feeder.digest()})
    corpus = generate_corpus(feeder, strategies, alrs, combos, seed=args.seed, jobs=args.jobs)
    run.seeds = {"attacker": args.seed, "demand": corpus.manifest["demand_seed"]}
    out = Path(args.out_dir)
    manifest = save_corpus(corpus, out)
    run.outputs += [str(out / f) for f in ("corpus.bin", "labels.csv", "manifest.json")]
    n, t, d, k = corpus.shape
    print(f"N {n}")
    print(f"T {t}")
    print(f"d {d}")
    print(f"K {k}")
    failures = manifest["failures"]
    for f in failures:
        print(f"failed cell {f['index']}: {f['strategy']} ALR {f['alr']} "
              f"combination {f['combination']}: {f['error']}", file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def _fold_task(task):
    X, Y, train, test, names = task
    trees = fit_many(Presorted(X[train]), Y[train])
    report = evaluate(trees, X[test], Y[test], names)
    base = evaluate(baseline_most_frequent(Y[train]), X[test], Y[test], names)
    return trees, report, base


def _baseline_row(rows: list[dict]) -> dict:
    out = {"node": "baseline"}
    for c in ("TP", "TN", "FP", "FN"):
        out[c] = sum(r[c] for r in rows)
    for c in ("acc", "acc_B", "normacc", "tpr", "tnr"):
        vals = [r[c] for r in rows if not math.isnan(r[c])]
        out[c] = float(np.mean(vals)) if vals else math.nan
    return out


def cmd_train_eval(args, run: RunManifest) -> int:
    _check_jobs(args.jobs)
    if not args.dataset_dir:
        raise UsageError("--dataset-dir is required")
    if not args.out:
        raise UsageError("--out is required")
    corpus = load_corpus(args.dataset_dir)
    run.seeds = {"split": args.seed}
    run.config_hash = _config_hash("train-eval", run.config, {
        "x_sha256": corpus.manifest.get("x_sha256"), "y_sha256": corpus.manifest.get("y_sha256")})
    ws = window_transform(corpus, args.window)
    names = corpus.manifest.get("nodes")
    folds = split(ws, args.seed)
    tasks = [(ws.X, ws.Y, f.train, f.test, names) for f in folds]
    results = _pmap(_fold_task, tasks, args.jobs)

    rows = mean_rows([r[1] for r in results])
    rows.append(_baseline_row(mean_rows([r[2] for r in results])))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out)
    run.outputs.append(str(out))
    if args.trees_dir:
        tdir = Path(args.trees_dir)
        tdir.mkdir(parents=True, exist_ok=True)
        for i, (trees, _, _) in enumerate(results):
            path = tdir / f"trees_fold{i}.json"
            save_trees(trees, path, names)
            run.outputs.append(str(path))
    print(f"{'node':>9} {'normacc':>8} {'tpr':>7} {'tnr':>7}")
    for r in rows:
        print(f"{r['node']:>9} {r['normacc']:8.4f} {r['tpr']:7.4f} {r['tnr']:7.4f}")
    return EXIT_OK


def _read_csv(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _collect(inputs) -> tuple[list[dict], list[dict]]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.glob("*.csv"))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"missing input {p}")
    sweep, metrics = [], []
    for f in files:
        header, rows = _read_csv(f)
        if {"strategy", "alr", "taps", "lifespan"} <= set(header):
            sweep += rows
        elif {"node", "normacc", "tpr", "tnr"} <= set(header):
            metrics += rows
    return sweep, metrics


def cmd_report(args, run: RunManifest) -> int:
    if not args.inputs:
        raise UsageError("--in is required")
    if not args.out:
        raise UsageError("--out is required")
    sweep, metrics = _collect(args.inputs)
    if not sweep and not metrics:
        raise UsageError("no sweep or metric CSV found in the inputs")
    run.seeds = {}
    digest = hashlib.sha256(json.dumps([sweep, metrics], sort_keys=True).encode()).hexdigest()
    run.config_hash = _config_hash("report", run.config, {"inputs": digest})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["gridworm summary", ""]

    if sweep:
        strategies = list(dict.fromkeys(r["strategy"] for r in sweep))
        alrs = sorted({float(r["alr"]) for r in sweep})
        cell = {(r["strategy"], float(r["alr"])): r for r in sweep}
        table = []
        lines.append("Lifespan (nominal / observed taps) by ALR")
        lines.append("  " + f"{'ALR':>7}" + "".join(f"{s:>12}" for s in strategies))
        for a in alrs:
            vals = [cell.get((s, a), {}).get("lifespan") for s in strategies]
            table.append([a] + [float(v) if v is not None else "" for v in vals])
            lines.append("  " + f"{a:7.3f}" + "".join(
                f"{float(v):12.4f}" if v is not None else f"{'-':>12}" for v in vals))
        _write_csv(out / "lifespan.csv", ["alr"] + [f"lifespan_{s}" for s in strategies], table)
        run.outputs.append(str(out / "lifespan.csv"))
        lines.append("")

    nodes = [r for r in metrics if r["node"] != "baseline"]
    if nodes:
        ranked = sorted(nodes, key=lambda r: (float(r["normacc"]), r["node"]))
        worst, best = ranked[0], ranked[-1]
        lines.append("Localization (normalized accuracy per node, worst first)")
        for r in ranked:
            lines.append(f"  node {r['node']:>6}  normacc {float(r['normacc']):.4f}  "
                         f"tpr {float(r['tpr']):.4f}  tnr {float(r['tnr']):.4f}")
        lines.append(f"worst node {worst['node']} ({float(worst['normacc']):.4f}), "
                     f"best node {best['node']} ({float(best['normacc']):.4f})")
        lines.append("three worst nodes: " + ", ".join(r["node"] for r in ranked[:3]))
        base = [r for r in metrics if r["node"] == "baseline"]
        if base:
            lines.append(f"most-frequent baseline normacc {float(base[0]['normacc']):.4f}")
        _write_csv(out / "nodes.csv", ["rank", "node", "normacc", "tpr", "tnr"],
                   ([i + 1, r["node"], float(r["normacc"]), float(r["tpr"]), float(r["tnr"])]
                    for i, r in enumerate(ranked)))
        run.outputs.append(str(out / "nodes.csv"))

    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.outputs.append(str(out / "summary.txt"))
    print("\n".join(lines))
    return EXIT_OK


def _manifest_path(args) -> Path | None:
    if args.run_manifest:
        return Path(args.run_manifest)
    if getattr(args, "out_dir", None):
        return Path(args.out_dir) / "run_manifest.json"
    out = getattr(args, "out", None)
    if out:
        p = Path(out)
        return p / "run_manifest.json" if args.command == "report" else p.with_name(p.name + ".run.json")
    return None


def main(argv=None) -> int:
    start = time.perf_counter()
    try:
        args, sources = parse(argv)
    except UsageError as exc:
        print(f"gridworm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    settings = _settings(args)
    run = RunManifest(command=args.command, config=settings, config_sources=sources,
                      config_hash="", seeds={})
    try:
        code = args.func(args, run)
    except (UsageError, FeederError, DatasetError, ValueError) as exc:
        print(f"gridworm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run.exit_code = code
    run.wall_clock_s = round(time.perf_counter() - start, 3)
    path = _manifest_path(args)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        run.write(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
