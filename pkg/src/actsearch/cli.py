"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .afdsl import SPACES, enumerate_space, parse, probe_inputs, unique_indices
from .afdsl.space import PROBE_SEED
from .bench import (
    ALGORITHMS,
    DESK_BIN_DIVISOR,
    FEATURE_SETS,
    BenchmarkError,
    BenchmarkTable,
    build_benchmark,
    cross_task_scatter,
    desk_space,
    evaluate_function,
    feature_sources,
    replay,
    replay_space,
)
from .config import ConfigError, load_config
from .embed import EmbeddingAtlas, LayoutConfig, fit_atlas
from .features import output_feature, read_outputs, write_outputs
from .kfac import fim_spectrum, read_spectra, write_spectra
from .pipeline import Pipeline, PipelineError, read_lines
from .plot import curves_svg, scatter_svg, write_svg
from .search import SearchConfig, SearchError, read_curves, random_search, run_search, write_curves
from .tensornet import TrainConfig, load_task
from .tensornet.data import TASKS


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _write_lines(out: str | None, lines) -> int:
    n = 0
    fh = open(out, "w") if out else sys.stdout
    try:
        for line in lines:
            fh.write(line + "\n")
            n += 1
    finally:
        if out:
            fh.close()
    return n


def _check_space(space: str) -> None:
    if space not in SPACES:
        raise UsageError(f"unknown space {space!r}; choose from {sorted(SPACES)}")


def cmd_enumerate(args) -> int:
    _check_space(args.space)
    n = _write_lines(args.out, (g.canonical for g in enumerate_space(args.space)))
    print(n, file=sys.stderr)
    return 0


def cmd_dedup(args) -> int:
    _check_space(args.space)
    keep = set(unique_indices(args.space))
    names = (g.canonical for i, g in enumerate(enumerate_space(args.space)) if i in keep)
    n = _write_lines(args.out, names)
    print(n, file=sys.stderr)
    return 0


def _inputs(args) -> list[str]:
    if args.input:
        return read_lines(args.input)
    names, _ = desk_space(args.desk_size, args.seed)
    return names


def cmd_features(args) -> int:
    probes = probe_inputs()
    feats = [output_feature(parse(c), probes) for c in _inputs(args)]
    write_outputs(args.out, feats, PROBE_SEED)
    print(len(feats), file=sys.stderr)
    return 0


def cmd_spectra(args) -> int:
    data, arch = load_task(args.task, seed=args.seed)
    feats = [fim_spectrum(c, arch, data.x_train, seed=args.seed, divisor=args.divisor) for c in _inputs(args)]
    write_spectra(args.out, feats, {"task": args.task, "seed": args.seed, "bin_divisor": args.divisor})
    print(f"{len(feats)} spectra, {sum(not f.valid for f in feats)} invalid", file=sys.stderr)
    return 0


def cmd_embed(args) -> int:
    outputs = {o.canonical: o.values for o in read_outputs(args.outputs)[1]} if args.outputs else None
    spectra = {s.canonical: s for s in read_spectra(args.spectra)[1]} if args.spectra else {}
    fam = FEATURE_SETS[f"knr-{args.features}"]
    if "spectra" in fam and not spectra:
        raise UsageError("--spectra is required for this feature set")
    if "outputs" in fam and outputs is None:
        raise UsageError("--outputs is required for this feature set")
    names = sorted(outputs if outputs is not None else spectra)
    if spectra:
        names = [c for c in names if c in spectra and spectra[c].valid]
    atlas, _ = fit_atlas(feature_sources(names, spectra, fam, outputs), names,
                         LayoutConfig(epochs=args.epochs, seed=args.seed))
    atlas.config["metric"] = args.features
    atlas.write_jsonl(args.out)
    if args.csv:
        atlas.write_csv(args.csv)
    print(len(names), file=sys.stderr)
    return 0


def cmd_bench_build(args) -> int:
    if args.input:
        names, base = read_lines(args.input), {}
    else:
        names, base = desk_space(args.desk_size, args.seed)

    def progress(i, n):
        if i % 20 == 0 or i == n:
            print(f"{i}/{n}", file=sys.stderr)

    table = build_benchmark(names, args.task, args.runs, args.out, args.seed, TrainConfig(epochs=args.epochs),
                            args.divisor, args.workers, base, progress=progress)
    print(len(table), file=sys.stderr)
    return 0


def _spectra_map(path):
    return {s.canonical: s for s in read_spectra(path)[1]} if path else None


def cmd_search(args) -> int:
    table = BenchmarkTable.read(args.bench)
    cfg = SearchConfig(k=args.k, budget=args.budget, init=args.init, batch_width=args.batch_width, seed=args.seed)
    if args.live:
        task = table.header["task"]
        runs = int(table.header.get("runs_per_fn", 3))

        def evaluator(c):
            return evaluate_function(c, task, runs, int(table.header.get("seed", 0)))[0].accuracy
    else:
        evaluator = table.accuracy
    alg = args.algorithm if args.algorithm == "random" else f"knr-{args.features}"
    space = replay_space(table, alg, _spectra_map(args.spectra))
    if alg == "random":
        trace = random_search(cfg, evaluator, space)
    else:
        trace = run_search(cfg, evaluator, space, algorithm=alg)
    trace.write_csv(args.out)
    print(f"best {trace.best_so_far()[-1]:.4f} after {len(trace)} evaluations", file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    table = BenchmarkTable.read(args.bench)
    cfg = SearchConfig(k=args.k, budget=args.budget, trials=args.trials, seed=args.seed)
    spectra = _spectra_map(args.spectra)
    curves = []
    for alg in args.algorithms.split(","):
        if alg not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {alg!r}; choose from {ALGORITHMS}")
        curve, _ = replay(alg, table, cfg, spectra=spectra)
        curves.append(curve)
        print(f"{alg}: final mean best {curve.mean[-1]:.4f}", file=sys.stderr)
    write_curves(args.out, curves)
    return 0


def cmd_scatter(args) -> int:
    sc = cross_task_scatter(BenchmarkTable.read(args.bench1), BenchmarkTable.read(args.bench2))
    sc.write_csv(args.out)
    print(f"{len(sc.records)} shared functions, pearson r = {sc.pearson:.4f}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    if args.curves:
        if not Path(args.curves).exists():
            raise FileNotFoundError(args.curves)
        write_svg(args.out, curves_svg(read_curves(args.curves)))
    elif args.atlas:
        atlas = EmbeddingAtlas.read_jsonl(args.atlas)
        if args.bench:
            table = BenchmarkTable.read(args.bench)
            acc = np.array([table.accuracy(c) for c in atlas.canonicals])
        else:
            acc = np.zeros(len(atlas.canonicals))
        write_svg(args.out, scatter_svg(atlas.coordinates, acc, atlas.canonicals))
    else:
        raise UsageError("plot needs --curves or --atlas")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    Pipeline(cfg, args.out_dir, echo=lambda m: print(m, file=sys.stderr)).run()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="actsearch", description="Activation-function search with Fisher spectra.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def desk_args(sp):
        sp.add_argument("--input", help="file with one canonical per line (default: desk space)")
        sp.add_argument("--desk-size", type=int, default=200)
        sp.add_argument("--seed", type=int, default=0)

    sp = add("enumerate", cmd_enumerate, "list every graph of a space")
    sp.add_argument("--space", required=True)
    sp.add_argument("--out")

    sp = add("dedup", cmd_dedup, "list one representative per distinct output fingerprint")
    sp.add_argument("--space", required=True)
    sp.add_argument("--out")

    sp = add("features", cmd_features, "output features at the shared probe points")
    desk_args(sp)
    sp.add_argument("--out", required=True)

    sp = add("spectra", cmd_spectra, "Fisher spectra at initialisation")
    desk_args(sp)
    sp.add_argument("--task", choices=sorted(TASKS), default="blobs")
    sp.add_argument("--divisor", type=int, default=DESK_BIN_DIVISOR)
    sp.add_argument("--out", required=True)

    sp = add("embed", cmd_embed, "fit a 2-D atlas")
    sp.add_argument("--outputs")
    sp.add_argument("--spectra")
    sp.add_argument("--features", choices=("outputs", "spectra", "both"), default="both")
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv")

    sp = add("bench-build", cmd_bench_build, "train functions into a benchmark table")
    desk_args(sp)
    sp.add_argument("--task", choices=sorted(TASKS), default="blobs")
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--divisor", type=int, default=DESK_BIN_DIVISOR)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)

    def search_args(sp):
        sp.add_argument("--bench", required=True)
        sp.add_argument("--spectra")
        sp.add_argument("--k", type=int, default=3)
        sp.add_argument("--budget", type=int, default=100)
        sp.add_argument("--seed", type=int, default=0)

    sp = add("search", cmd_search, "one search trial")
    search_args(sp)
    sp.add_argument("--algorithm", choices=("knr", "random"), default="knr")
    sp.add_argument("--features", choices=("outputs", "spectra", "both"), default="both")
    sp.add_argument("--init", choices=("relu-plus-random", "baselines"), default="relu-plus-random")
    sp.add_argument("--batch-width", type=int, default=1)
    sp.add_argument("--live", action="store_true", help="train each pick instead of looking it up")
    sp.add_argument("--out", required=True)

    sp = add("replay", cmd_replay, "multi-trial replay against a benchmark table")
    search_args(sp)
    sp.add_argument("--algorithms", default=",".join(ALGORITHMS))
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--out", required=True)

    sp = add("scatter", cmd_scatter, "pair accuracies of two tables")
    sp.add_argument("--bench1", required=True)
    sp.add_argument("--bench2", required=True)
    sp.add_argument("--out", required=True)

    sp = add("plot", cmd_plot, "static SVG plots")
    sp.add_argument("--curves")
    sp.add_argument("--atlas")
    sp.add_argument("--bench")
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "run every stage from a config file")
    sp.add_argument("--config")
    sp.add_argument("--out-dir")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, SearchError) as exc:
        _err(str(exc))
        return 2
    except PipelineError as exc:
        _err(f"stage {exc}")
        return 1
    except (FileNotFoundError, BenchmarkError, OSError, ValueError, KeyError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
