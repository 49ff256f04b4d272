"""Labelled corpus generation, window transform and train/test splitting.

On disk a corpus is three files in one directory:

``corpus.bin``
    X as little-endian float64 in C order, shape (N, T, d).
``labels.csv``
    one row per (scenario, minute) with one 0/1 column per attackable node.
``manifest.json``
    shapes, grid axes, seeds, feeder digest, column names, failed cells
    and SHA-256 digests of the two data files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .attack import AttackerConfig
from .feeder import Feeder, feeder_from_dict
from .scenario import ScenarioConfig, ScenarioError, run_batch, snapshot_columns, snapshot_dim

log = logging.getLogger(__name__)

DEFAULT_SIZES = (1, 2, 11, 12)
DEFAULT_ALRS = (0.050, 0.075, 0.100, 0.125)
DEFAULT_STRATEGIES = ("random", "flipping", "heuristic")
CHUNK = 32  # scenarios per engine batch; fixed so output never depends on --jobs


class DatasetError(ValueError):
    pass


def enumerate_combinations(k: int = 13, sizes=DEFAULT_SIZES) -> list[tuple[int, ...]]:
    """All 0/1 vectors of length ``k`` with a weight in ``sizes``.

    Sizes are taken in ascending order and, within a size, subsets in
    lexicographic order of their node indices.
    """
    sizes = sorted(set(int(s) for s in sizes))
    if any(s < 0 or s > k for s in sizes):
        raise ValueError(f"sizes must lie in 0..{k}")
    out = []
    for s in sizes:
        for chosen in itertools.combinations(range(k), s):
            v = [0] * k
            for i in chosen:
                v[i] = 1
            out.append(tuple(v))
    return out


def corpus_size(k: int, sizes, n_strategies: int, n_alrs: int) -> int:
    return sum(comb(k, s) for s in set(sizes)) * n_strategies * n_alrs


def derive_seed(seed: int, index: int) -> int:
    """64-bit attacker seed for scenario ``index`` of a corpus seeded with ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class Corpus:
    X: np.ndarray  # (N, T, d)
    Y: np.ndarray  # (N, T, K) int8
    manifest: dict

    @property
    def shape(self) -> tuple[int, int, int, int]:
        n, t, d = self.X.shape
        return n, t, d, self.Y.shape[2]

    @property
    def valid(self) -> np.ndarray:
        """Mask of scenarios that completed (failed cells are left as gaps)."""
        ok = np.ones(self.X.shape[0], dtype=bool)
        for f in self.manifest.get("failures", []):
            ok[f["index"]] = False
        return ok


@dataclass
class WindowedSet:
    X: np.ndarray  # (N*T/w, d*w)
    Y: np.ndarray  # (N*T/w, K)
    w: int
    scenario: np.ndarray = field(default=None)  # originating scenario per sample


def _cells(combos, strategies, alrs):
    return [(c, s, float(a)) for c in combos for s in strategies for a in alrs]


def scenario_configs(feeder: Feeder, combos, strategies, alrs, seed: int = 0,
                     demand_seed: int | None = None) -> list[ScenarioConfig]:
    """One config per (combination, strategy, ALR), in that nesting order."""
    if not combos or not strategies or not alrs:
        raise DatasetError("combinations, strategies and ALRs must be non-empty")
    if demand_seed is None:
        demand_seed = int((feeder.calibration or {}).get("seed", 0))
    return [
        ScenarioConfig(
            AttackerConfig(tuple(c), alr=a, strategy=s, rng_seed=derive_seed(seed, i)),
            demand_seed=demand_seed,
        )
        for i, (c, s, a) in enumerate(_cells(combos, strategies, alrs))
    ]


def _run_chunk(args):
    feeder_doc, configs = args
    feeder = feeder_from_dict(feeder_doc)
    try:
        res = run_batch(feeder, configs)
        return [(r.snapshots, r.labels, None) for r in res]
    except ScenarioError:
        pass
    # rows are independent, so retrying one by one isolates the bad cells
    out = []
    for c in configs:
        try:
            r = run_batch(feeder, [c])[0]
            out.append((r.snapshots, r.labels, None))
        except ScenarioError as exc:
            out.append((None, None, str(exc)))
    return out


def generate_corpus(feeder: Feeder, strategies=DEFAULT_STRATEGIES, alrs=DEFAULT_ALRS,
                    combos=None, seed: int = 0, jobs: int = 1,
                    demand_seed: int | None = None, steps: int | None = None) -> Corpus:
    """Simulate every grid cell and stack snapshots and labels.

    Scenario ``i`` draws its attacker stream from ``derive_seed(seed, i)``.
    Failed cells are listed in the manifest and left as zero rows.
    """
    k = feeder.n_attackable
    combos = enumerate_combinations(k) if combos is None else [tuple(c) for c in combos]
    strategies, alrs = list(strategies), [float(a) for a in alrs]
    configs = scenario_configs(feeder, combos, strategies, alrs, seed, demand_seed)
    if steps is not None:
        configs = [ScenarioConfig(c.attacker, c.demand_seed, steps=steps) for c in configs]
    n, t, d = len(configs), configs[0].steps, snapshot_dim(feeder)
    X = np.zeros((n, t, d))
    Y = np.zeros((n, t, k), dtype=np.int8)

    doc = feeder.to_dict()
    chunks = [configs[i:i + CHUNK] for i in range(0, n, CHUNK)]
    tasks = [(doc, ch) for ch in chunks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(task) for task in tasks]

    cells = _cells(combos, strategies, alrs)
    failures = []
    for ci, res in enumerate(results):
        for j, (snap, lab, err) in enumerate(res):
            i = ci * CHUNK + j
            if err is None:
                X[i], Y[i] = snap, lab
            else:
                c, s, a = cells[i]
                log.warning("cell %d (%s, ALR %.3f) failed: %s", i, s, a, err)
                failures.append({"index": i, "strategy": s, "alr": a,
                                 "combination": list(c), "error": err})

    manifest = {
        "N": n, "T": t, "d": d, "K": k,
        "seed": seed,
        "demand_seed": configs[0].demand_seed,
        "attacker_seeds": "SeedSequence(seed, spawn_key=(scenario index,))",
        "strategies": strategies,
        "alrs": alrs,
        "combinations": [list(c) for c in combos],
        "cell_order": "combination, strategy, alr",
        "feeder": feeder.name,
        "feeder_sha256": feeder.digest(),
        "calibration_scale": (feeder.calibration or {}).get("scale", 1.0),
        "columns": snapshot_columns(feeder),
        "nodes": feeder.attackable_names,
        "failures": failures,
    }
    return Corpus(X=X, Y=Y, manifest=manifest)


# -- storage -------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_corpus(corpus: Corpus, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, t, d, k = corpus.shape
    corpus.X.astype("<f8", copy=False).tofile(out / "corpus.bin")

    names = corpus.manifest.get("nodes") or [str(j) for j in range(k)]
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["scenario", "minute"] + [f"node_{x}" for x in names])
    flat = corpus.Y.reshape(n * t, k)
    for i in range(n):
        for m in range(t):
            w.writerow([i, m, *flat[i * t + m].tolist()])
    (out / "labels.csv").write_text(buf.getvalue(), encoding="utf-8", newline="")

    manifest = dict(corpus.manifest)
    manifest.update({
        "N": n, "T": t, "d": d, "K": k,
        "x_file": "corpus.bin", "x_dtype": "<f8", "x_order": "C (scenario, minute, feature)",
        "y_file": "labels.csv",
        "x_sha256": _sha256(out / "corpus.bin"),
        "y_sha256": _sha256(out / "labels.csv"),
    })
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out / "manifest.json").write_text(text, encoding="utf-8")
    corpus.manifest = manifest
    return manifest


def load_corpus(in_dir: str | Path) -> Corpus:
    """Read a saved corpus and check every shape against the manifest."""
    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"no manifest.json in {src}") from exc
    n, t, d, k = (int(manifest[x]) for x in ("N", "T", "d", "K"))
    raw = np.fromfile(src / "corpus.bin", dtype="<f8")
    if raw.size != n * t * d:
        raise DatasetError(f"corpus.bin holds {raw.size} values, manifest says {n}x{t}x{d}")
    X = raw.reshape(n, t, d)
    with open(src / "labels.csv", newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if len(header) != k + 2:
            raise DatasetError(f"labels.csv has {len(header) - 2} node columns, manifest says {k}")
        body = np.array([r[2:] for r in rows], dtype=np.int8)
    if body.shape != (n * t, k):
        raise DatasetError(f"labels.csv has shape {body.shape}, expected {(n * t, k)}")
    if np.any((body != 0) & (body != 1)):
        raise DatasetError("labels must be 0/1")
    return Corpus(X=X, Y=body.reshape(n, t, k), manifest=manifest)


# -- windows and splits ----------------------------------------------------------

def window_transform(corpus: Corpus | tuple, w: int, drop_failed: bool = True) -> WindowedSet:
    """Non-overlapping windows of ``w`` minutes.

    Each scenario's T snapshots become T/w samples of the w snapshots
    concatenated in time order; a window's label is the OR of its minutes.
    """
    if isinstance(corpus, Corpus):
        X, Y = corpus.X, corpus.Y
        keep = corpus.valid if drop_failed else np.ones(X.shape[0], dtype=bool)
    else:
        X, Y = corpus
        keep = np.ones(X.shape[0], dtype=bool)
    n, t, d = X.shape
    k = Y.shape[2]
    if w < 1 or t % w:
        raise DatasetError(f"window {w} does not divide T = {t}")
    ids = np.flatnonzero(keep)
    X, Y = X[ids], Y[ids]
    per = t // w
    Xw = X.reshape(len(ids) * per, w * d)
    Yw = Y.reshape(len(ids), per, w, k).max(axis=2).reshape(len(ids) * per, k)
    return WindowedSet(X=Xw, Y=Yw.astype(np.int8), w=w, scenario=np.repeat(ids, per))


def unwindow(ws: WindowedSet, d: int) -> np.ndarray:
    """Inverse of the feature concatenation: back to (samples*w, d)."""
    return ws.X.reshape(-1, d)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray


def split(ws: WindowedSet | int, seed: int, fraction: float = 0.5) -> tuple[Split, Split]:
    """Seeded permutation cut into two folds.

    Returns ``(fold_a, fold_b)``: fold A trains on the first part and tests
    on the rest, fold B swaps the roles, so every sample is tested once.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    n = ws if isinstance(ws, int) else ws.X.shape[0]
    if n < 2:
        raise DatasetError("need at least two samples to split")
    perm = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed))).permutation(n)
    cut = min(max(int(round(n * fraction)), 1), n - 1)
    a, b = np.sort(perm[:cut]), np.sort(perm[cut:])
    return Split(train=a, test=b), Split(train=b, test=a)


def misprediction_count(y_true, y_pred) -> int:
    """Wrong bits summed over samples and nodes."""
    return int(np.sum(np.asarray(y_true) != np.asarray(y_pred)))
