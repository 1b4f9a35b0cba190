"""End-to-end pipeline: dedup -> features -> spectra -> bench -> embed -> replay -> plot.

Each stage writes its artifacts atomically into the output directory and is
skipped when they already exist, so an interrupted or partially deleted run
resumes from the first missing artifact.
"""
from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .bench import (
    FEATURE_SETS,
    BenchmarkTable,
    build_benchmark,
    desk_space,
    feature_sources,
    replay,
    replay_space,
)
from .config import ConfigError, RunConfig
from .embed import EmbeddingAtlas, LayoutConfig, fit_atlas
from .features import output_feature, read_outputs, write_outputs
from .afdsl import probe_inputs
from .afdsl.space import PROBE_SEED
from .kfac import fim_spectrum, read_spectra, write_spectra
from .plot import curves_svg, scatter_svg, write_svg
from .search import SearchConfig, SearchSpace, read_curves, write_curves
from .tensornet import load_task

log = logging.getLogger(__name__)

STAGES = ("dedup", "features", "spectra", "bench", "embed", "replay", "plot")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    """Write through a temporary sibling and rename, leaving no partial file."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_lines(path: str | Path) -> list[str]:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


class Pipeline:
    def __init__(self, cfg: RunConfig, out_dir: str | Path | None = None, echo: Callable[[str], None] = print):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.out_dir)
        self.echo = echo
        self.ran: list[str] = []

    # artifact paths
    def p(self, name: str) -> Path:
        return self.out / name

    @property
    def knr_name(self) -> str:
        return f"knr-{self.cfg.features}"

    def search_config(self) -> SearchConfig:
        c = self.cfg
        return SearchConfig(k=c.k, budget=c.budget, init=c.init, batch_width=c.batch_width, trials=c.trials,
                            seed=c.seed)

    def layout_config(self) -> LayoutConfig:
        return LayoutConfig(min_dist=self.cfg.layout.min_dist, epochs=self.cfg.layout.epochs, seed=self.cfg.seed)

    def _check_resolved(self) -> None:
        path = self.p("resolved_config.yaml")
        if path.exists():
            with open(path) as fh:
                old = yaml.safe_load(fh) or {}
            new = self.cfg.to_dict()
            for key in ("workers", "out_dir"):  # neither changes any artifact
                old.pop(key, None)
                new.pop(key, None)
            if old != new:
                raise ConfigError(f"{self.out} holds artifacts from a different configuration; "
                                  "use a fresh out_dir")
        atomic_write(path, self.cfg.write_resolved)

    def run(self, until: str | None = None) -> list[str]:
        self.out.mkdir(parents=True, exist_ok=True)
        self._check_resolved()
        for stage in STAGES:
            fn = getattr(self, f"stage_{stage}")
            try:
                fn()
            except (ConfigError, PipelineError):
                raise
            except Exception as exc:
                raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc
            if stage == until:
                break
        return self.ran

    def _skip(self, stage: str, *names: str) -> bool:
        if all(self.p(n).exists() for n in names):
            self.echo(f"[{stage}] up to date")
            return True
        self.echo(f"[{stage}] running")
        self.ran.append(stage)
        return False

    # --- stages ---------------------------------------------------------------------------

    def stage_dedup(self) -> None:
        if self._skip("dedup", "space.json"):
            return
        if self.cfg.desk_size == 0:
            log.warning("desk_size 0 builds the whole unique space; expect hours of training")
        names, base = desk_space(self.cfg.desk_size, self.cfg.seed, self.cfg.space)
        doc = {"space": self.cfg.space, "seed": self.cfg.seed, "canonicals": names, "baselines": base}
        atomic_write(self.p("space.json"), lambda t: t.write_text(json.dumps(doc, indent=1) + "\n"))

    def space(self) -> tuple[list[str], dict[str, str]]:
        doc = json.loads(self.p("space.json").read_text())
        return doc["canonicals"], doc["baselines"]

    def stage_features(self) -> None:
        if self._skip("features", "outputs.jsonl"):
            return
        names, _ = self.space()
        probes = probe_inputs()
        feats = [output_feature(c, probes) for c in names]
        atomic_write(self.p("outputs.jsonl"), lambda t: write_outputs(t, feats, PROBE_SEED))

    def stage_spectra(self) -> None:
        if self._skip("spectra", "spectra.jsonl"):
            return
        names, _ = self.space()
        data, arch = load_task(self.cfg.task, seed=self.cfg.seed)
        feats = [fim_spectrum(c, arch, data.x_train, seed=self.cfg.seed, divisor=self.cfg.bin_divisor)
                 for c in names]
        header = {"task": self.cfg.task, "seed": self.cfg.seed, "bin_divisor": self.cfg.bin_divisor}
        atomic_write(self.p("spectra.jsonl"), lambda t: write_spectra(t, feats, header))

    def stage_bench(self) -> None:
        names, base = self.space()
        path = self.p("bench.jsonl")
        if path.exists() and set(names) <= set(BenchmarkTable.read(path).rows):
            self.echo("[bench] up to date")
            return
        self.echo("[bench] running")
        self.ran.append("bench")
        t0 = time.time()

        def progress(i, n):
            if i % 20 == 0 or i == n:
                self.echo(f"[bench] {i}/{n} functions ({time.time() - t0:.0f} s)")

        build_benchmark(names, self.cfg.task, self.cfg.runs_per_fn, path, self.cfg.seed, self.cfg.train_config(),
                        self.cfg.bin_divisor, self.cfg.resolved_workers(), base, progress=progress)

    def _features(self):
        _, outs = read_outputs(self.p("outputs.jsonl"))
        _, specs = read_spectra(self.p("spectra.jsonl"))
        return {o.canonical: o.values for o in outs}, {s.canonical: s for s in specs}

    def stage_embed(self) -> None:
        if self._skip("embed", "atlas.jsonl", "atlas.csv"):
            return
        outputs, spectra = self._features()
        names, _ = self.space()
        pool = [c for c in sorted(names) if spectra[c].valid]
        sources = feature_sources(pool, spectra, FEATURE_SETS[self.knr_name], outputs)
        atlas, _ = fit_atlas(sources, pool, self.layout_config())
        atlas.config["metric"] = self.cfg.features
        atomic_write(self.p("atlas.jsonl"), atlas.write_jsonl)
        atomic_write(self.p("atlas.csv"), atlas.write_csv)

    def stage_replay(self) -> None:
        if self._skip("replay", "curves.csv", "trace.csv"):
            return
        table = BenchmarkTable.read(self.p("bench.jsonl"))
        outputs, spectra = self._features()
        scfg = self.search_config()
        algos = ["random", self.knr_name]
        if self.cfg.compare_features:
            algos = ["random"] + [a for a in FEATURE_SETS]
        atlas = EmbeddingAtlas.read_jsonl(self.p("atlas.jsonl"))
        curves, trace = [], None
        for alg in algos:
            if alg == self.knr_name:
                space = SearchSpace(atlas.canonicals, atlas.coordinates, np.ones(len(atlas.canonicals), bool),
                                    table.chance, table.header.get("baselines", {}))
            else:
                space = replay_space(table, alg, spectra, self.layout_config(), outputs)
            curve, traces = replay(alg, table, scfg, space)
            curves.append(curve)
            if alg == (self.knr_name if self.cfg.algorithm == "knr" else "random"):
                trace = traces[0]
        atomic_write(self.p("trace.csv"), trace.write_csv)
        atomic_write(self.p("curves.csv"), lambda t: write_curves(t, curves))

    def stage_plot(self) -> None:
        if self._skip("plot", "curves.svg", "atlas.svg"):
            return
        curves = read_curves(self.p("curves.csv"))
        atomic_write(self.p("curves.svg"), lambda t: write_svg(t, curves_svg(curves)))
        atlas = EmbeddingAtlas.read_jsonl(self.p("atlas.jsonl"))
        table = BenchmarkTable.read(self.p("bench.jsonl"))
        acc = np.array([table.accuracy(c) for c in atlas.canonicals])
        atomic_write(self.p("atlas.svg"), lambda t: write_svg(t, scatter_svg(atlas.coordinates, acc,
                                                                              atlas.canonicals)))
