"""Desk-scale benchmark tables: build, persist, replay searches, compare tasks.

A table maps each canonical activation string to its median validation
accuracy over several training runs and to the validity of its Fisher
spectrum.  Replaying a search against a table replaces training with a lookup.
"""
from __future__ import annotations

import csv
import gzip
import json
import logging
import statistics
from functools import lru_cache
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .afdsl import BASELINES, dedup, enumerate_space, fingerprint, parse, probe_inputs
from .afdsl.space import PROBE_SEED
from .embed import FeatureSource, LayoutConfig, fit_atlas
from .features import clean_outputs, output_feature, spectral_cdf
from .kfac import SpectrumFeature, fim_spectrum
from .search import (
    Curve,
    MissingRowError,
    SearchConfig,
    SearchSpace,
    SearchTrace,
    aggregate,
    random_search,
    run_search,
)
from .tensornet import TrainConfig, init_weights, load_task, train_detailed

log = logging.getLogger(__name__)

# Histogram bins per layer are w // divisor; the desk networks have only a few
# hundred weights per layer, so a small divisor keeps the histograms informative.
DESK_BIN_DIVISOR = 4
DESK_SIZE = 200
ALGORITHMS = ("random", "knr-spectra", "knr-outputs", "knr-both")
FEATURE_SETS = {"knr-spectra": ("spectra",), "knr-outputs": ("outputs",), "knr-both": ("spectra", "outputs")}
N_NEIGHBORS = {"spectra": 3, "outputs": 15}


class BenchmarkError(ValueError):
    pass


# --- desk space ----------------------------------------------------------------------


def unique_space(space: str = "three-node") -> dict[str, str]:
    """``digest -> representative canonical`` for the deduplicated space."""
    return {h: g.canonical for h, g in dedup(enumerate_space(space)).items()}


def baseline_representatives(reps: dict[str, str]) -> dict[str, str]:
    """Baseline name -> canonical of the space member with identical outputs."""
    probes = probe_inputs()
    out = {}
    for name, g in BASELINES.items():
        h = fingerprint(g, probes).hash
        if h in reps:
            out[name] = reps[h]
    return out


def desk_space(n: int = DESK_SIZE, seed: int = 0, space: str = "three-node") -> tuple[list[str], dict[str, str]]:
    """Representatives of the baselines plus a seeded random sample of the other
    unique functions, ``n`` in total.  Returns (canonicals, baseline map)."""
    reps = unique_space(space)
    base = baseline_representatives(reps)
    chosen = list(dict.fromkeys(base.values()))
    rest = sorted(set(reps.values()) - set(chosen))
    if n <= 0 or n > len(reps):
        n = len(reps)
    rng = np.random.default_rng(seed)
    take = max(0, n - len(chosen))
    chosen += [rest[i] for i in sorted(rng.choice(len(rest), size=take, replace=False))]
    return chosen[:n], base


# --- table --------------------------------------------------------------------------------


@dataclass
class BenchmarkRow:
    canonical: str
    accuracy: float
    valid_spectrum: bool
    degenerate: bool = False
    runs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"canonical": self.canonical, "accuracy": self.accuracy, "valid_spectrum": self.valid_spectrum,
                "degenerate": self.degenerate, "runs": self.runs}

    @classmethod
    def from_json(cls, d: dict) -> "BenchmarkRow":
        acc = float(d["accuracy"])
        if not 0.0 <= acc <= 1.0:
            raise BenchmarkError(f"accuracy {acc} for {d['canonical']!r} is outside [0, 1]")
        return cls(d["canonical"], acc, bool(d.get("valid_spectrum", True)), bool(d.get("degenerate", False)),
                   [float(r) for r in d.get("runs", [])])


def _open(path: Path, mode: str):
    return gzip.open(path, mode + "t") if str(path).endswith(".gz") else open(path, mode)


@dataclass
class BenchmarkTable:
    header: dict
    rows: dict[str, BenchmarkRow] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, canonical: str) -> bool:
        return canonical in self.rows

    @property
    def chance(self) -> float:
        return 1.0 / int(self.header.get("num_classes", 10))

    def accuracy(self, canonical: str) -> float:
        try:
            return self.rows[canonical].accuracy
        except KeyError:
            raise MissingRowError(canonical) from None

    def canonicals(self) -> list[str]:
        return list(self.rows)

    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.rows.values()])

    def write(self, path: str | Path) -> None:
        path = Path(path)
        with _open(path, "w") as fh:
            fh.write(json.dumps({"header": self.header}) + "\n")
            for r in self.rows.values():
                fh.write(json.dumps(r.to_json()) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "BenchmarkTable":
        """Load a table; a truncated last line (interrupted build) is skipped."""
        path = Path(path)
        header: dict | None = None
        rows: dict[str, BenchmarkRow] = {}
        with _open(path, "r") as fh:
            lines = fh.read().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    log.warning("%s: ignoring truncated final line", path)
                    continue
                raise BenchmarkError(f"{path}:{i + 1}: malformed JSON") from None
            if "header" in d:
                header = d["header"]
            else:
                row = BenchmarkRow.from_json(d)
                rows.setdefault(row.canonical, row)
        if header is None:
            raise BenchmarkError(f"{path}: missing header line")
        return cls(header, rows)


# --- build -----------------------------------------------------------------------------


def median_of_runs(runs: Sequence[float]) -> float:
    return float(statistics.median(runs))


@lru_cache(maxsize=4)
def _task(task: str, seed: int):
    return load_task(task, seed=seed)


def evaluate_function(
    canonical: str, task: str, runs_per_fn: int = 3, seed: int = 0, train_cfg: TrainConfig | None = None,
    divisor: int = DESK_BIN_DIVISOR,
) -> tuple[BenchmarkRow, SpectrumFeature]:
    """Spectrum at initialisation plus ``runs_per_fn`` training runs for one function."""
    train_cfg = train_cfg or TrainConfig()
    data, arch = _task(task, seed)
    chance = 1.0 / data.num_classes
    graph = parse(canonical)
    spec = arch.with_activation(graph)
    try:
        sf = fim_spectrum(graph, arch, data.x_train, seed=seed, divisor=divisor)
    except Exception as exc:  # never abort a build over one function
        log.warning("spectrum failed for %s: %s", canonical, exc)
        sf = SpectrumFeature(canonical, [], False)
    runs = []
    for r in range(runs_per_fn):
        try:
            net = init_weights(spec, seed * 1000 + r)
            cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": seed * 1000 + r})
            _, res = train_detailed(net, data, cfg)
            acc = res.accuracy if np.isfinite(res.accuracy) else chance
        except Exception as exc:
            log.warning("training failed for %s run %d: %s", canonical, r, exc)
            acc = chance
        runs.append(float(acc))
    row = BenchmarkRow(canonical, median_of_runs(runs), bool(sf.valid), bool(sf.degenerate), runs)
    return row, sf


def _job(args):
    return evaluate_function(*args)


def bench_header(task: str, runs_per_fn: int, seed: int, train_cfg: TrainConfig, divisor: int,
                 baselines: dict[str, str] | None = None) -> dict:
    data, arch = load_task(task, seed=seed)
    return {
        "task": task,
        "network_digest": arch.architecture_digest(),
        "train_config": train_cfg.to_dict(),
        "probe_seed": PROBE_SEED,
        "runs_per_fn": runs_per_fn,
        "num_classes": data.num_classes,
        "seed": seed,
        "bin_divisor": divisor,
        "baselines": baselines or {},
    }


def build_benchmark(
    canonicals: Sequence[str],
    task: str = "blobs",
    runs_per_fn: int = 3,
    path: str | Path | None = None,
    seed: int = 0,
    train_cfg: TrainConfig | None = None,
    divisor: int = DESK_BIN_DIVISOR,
    workers: int = 1,
    baselines: dict[str, str] | None = None,
    spectra_out: Callable[[SpectrumFeature], None] | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> BenchmarkTable:
    """Train every function ``runs_per_fn`` times and record the median.

    With ``path`` each row is appended as soon as it is done and rows already
    present are skipped, so an interrupted build resumes where it stopped.
    """
    if runs_per_fn < 1:
        raise BenchmarkError("runs_per_fn must be >= 1")
    train_cfg = train_cfg or TrainConfig()
    header = bench_header(task, runs_per_fn, seed, train_cfg, divisor, baselines)
    table = BenchmarkTable(header)
    path = Path(path) if path is not None else None
    if path is not None and path.exists():
        old = BenchmarkTable.read(path)
        keys = ("task", "network_digest", "train_config", "runs_per_fn", "seed", "bin_divisor")
        if any(old.header.get(k) != header[k] for k in keys):
            raise BenchmarkError(f"{path}: existing table was built with a different configuration")
        table.rows = old.rows
        table.write(path)  # drops any truncated tail before appending
    todo = [c for c in dict.fromkeys(canonicals) if c not in table.rows]
    if path is not None and not path.exists():
        table.write(path)
    jobs = [(c, task, runs_per_fn, seed, train_cfg, divisor) for c in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_job, jobs, chunksize=4)
            _collect(results, table, path, spectra_out, progress, len(jobs))
    else:
        _collect(map(_job, jobs), table, path, spectra_out, progress, len(jobs))
    return table


def _collect(results: Iterable, table: BenchmarkTable, path: Path | None, spectra_out, progress, total: int) -> None:
    # single writer: rows land in input order whatever the worker count
    for i, (row, sf) in enumerate(results):
        table.rows[row.canonical] = row
        if path is not None:
            with _open(path, "a") as fh:
                fh.write(json.dumps(row.to_json()) + "\n")
        if spectra_out is not None:
            spectra_out(sf)
        if progress is not None:
            progress(i + 1, total)


# --- replay -----------------------------------------------------------------------------


def feature_sources(
    canonicals: Sequence[str], spectra: dict[str, SpectrumFeature], feature_set: Sequence[str],
    outputs: dict[str, np.ndarray] | None = None,
) -> list[FeatureSource]:
    """Feature matrices for the atlas; output features are computed when not supplied."""
    sources = []
    for name in feature_set:
        if name == "outputs":
            probes = probe_inputs()
            mat = np.stack([clean_outputs(outputs[c] if outputs is not None and c in outputs
                                          else output_feature(c, probes).values) for c in canonicals])
            sources.append(FeatureSource("outputs", mat, "outputs", N_NEIGHBORS["outputs"]))
        elif name == "spectra":
            mat = np.stack([spectral_cdf(spectra[c]).values for c in canonicals])
            sources.append(FeatureSource("spectra", mat, "spectra", N_NEIGHBORS["spectra"]))
        else:
            raise BenchmarkError(f"unknown feature family {name!r}")
    return sources


def replay_space(
    table: BenchmarkTable,
    algorithm: str,
    spectra: dict[str, SpectrumFeature] | None = None,
    layout_cfg: LayoutConfig | None = None,
    outputs: dict[str, np.ndarray] | None = None,
) -> SearchSpace:
    """Search space for one algorithm.  Surrogate atlases are fitted over the
    functions with valid spectra (the filtered pool)."""
    names = sorted(table.canonicals())
    valid = np.array([table.rows[c].valid_spectrum for c in names])
    base = table.header.get("baselines", {})
    if algorithm == "random":
        return SearchSpace(names, None, valid, table.chance, base)
    if algorithm not in FEATURE_SETS:
        raise BenchmarkError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    pool = [c for c, ok in zip(names, valid) if ok]
    if "spectra" in FEATURE_SETS[algorithm]:
        if spectra is None:
            raise BenchmarkError(f"{algorithm} needs spectrum features")
        missing = [c for c in pool if c not in spectra]
        if missing:
            raise BenchmarkError(f"no spectrum for {len(missing)} functions, e.g. {missing[0]!r}")
    atlas, _ = fit_atlas(feature_sources(pool, spectra or {}, FEATURE_SETS[algorithm], outputs), pool, layout_cfg)
    return SearchSpace(pool, atlas.coordinates, np.ones(len(pool), bool), table.chance, base)


def replay(
    algorithm: str, table: BenchmarkTable, cfg: SearchConfig, space: SearchSpace | None = None,
    spectra: dict[str, SpectrumFeature] | None = None,
) -> tuple[Curve, list[SearchTrace]]:
    """Run ``cfg.trials`` searches with evaluation by table lookup; trial ``t``
    uses seed ``cfg.seed + t``.  The table is never modified."""
    if space is None:
        space = replay_space(table, algorithm, spectra)
    traces = []
    for t in range(cfg.trials):
        if algorithm == "random":
            tr = random_search(cfg, table.accuracy, space, seed=cfg.seed + t)
        else:
            tr = run_search(cfg, table.accuracy, space, seed=cfg.seed + t, algorithm=algorithm)
        traces.append(tr)
    return aggregate(traces, cfg.budget, algorithm), traces


# --- cross-task comparison -----------------------------------------------------------------


@dataclass
class Scatter:
    records: list[tuple[str, float, float]]
    pearson: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["canonical", "acc1", "acc2"])
            for c, a, b in self.records:
                w.writerow([c, repr(a), repr(b)])


def cross_task_scatter(t1: BenchmarkTable, t2: BenchmarkTable) -> Scatter:
    shared = sorted(set(t1.rows) & set(t2.rows))
    if not shared:
        raise BenchmarkError("tables share no functions")
    recs = [(c, t1.rows[c].accuracy, t2.rows[c].accuracy) for c in shared]
    a = np.array([r[1] for r in recs])
    b = np.array([r[2] for r in recs])
    r = float(np.corrcoef(a, b)[0, 1]) if len(recs) > 1 and a.std() > 0 and b.std() > 0 else float("nan")
    return Scatter(recs, r)
