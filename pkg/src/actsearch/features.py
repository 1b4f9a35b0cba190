"""Output-vector and spectral features with their distances.

Output distance is the root-mean-square difference over the shared probes.
Spectral distance is the layer-weighted sum of 1-Wasserstein distances
between per-layer eigenvalue histograms, ``sum_l W1(mu_l, nu_l) / w_l``.
On a shared bin grid W1 equals the bin width times the L1 distance of the
CDFs, so each histogram is turned into a scaled CDF vector once and the
distance becomes a plain Manhattan distance between those vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .afdsl import ActivationGraph, evaluate, parse, probe_inputs
from .kfac import SpectrumFeature

# Output values are clipped so distances stay finite; nan maps to 0.
OUTPUT_CLIP = 1e6


class InvalidSpectrumError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass
class OutputFeature:
    canonical: str
    values: np.ndarray


def output_feature(graph: ActivationGraph | str, probes: np.ndarray | None = None) -> OutputFeature:
    if isinstance(graph, str):
        graph = parse(graph)
    if probes is None:
        probes = probe_inputs()
    return OutputFeature(graph.canonical, evaluate(graph, probes))


def clean_outputs(values: np.ndarray) -> np.ndarray:
    """Finite copy of raw outputs used for distances and embeddings."""
    v = np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.0, posinf=OUTPUT_CLIP, neginf=-OUTPUT_CLIP)
    return np.clip(v, -OUTPUT_CLIP, OUTPUT_CLIP)


def dist_outputs(a, b) -> float:
    """``sqrt(mean((a - b)^2))`` over the probe points."""
    va = a.values if isinstance(a, OutputFeature) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, OutputFeature) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"output features differ in length: {va.shape} vs {vb.shape}")
    d = clean_outputs(va) - clean_outputs(vb)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class SpectralCdfFeature:
    canonical: str
    values: np.ndarray
    grid: tuple[tuple[int, int], ...]  # (bins, w) per layer

    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for bins, _ in self.grid:
            out.append(slice(start, start + bins))
            start += bins
        return out


def spectral_cdf(sf: SpectrumFeature) -> SpectralCdfFeature:
    """Per layer: normalise to probability, cumulative-sum, scale by ``bin_width / w``."""
    if not sf.valid:
        raise InvalidSpectrumError(f"spectrum of {sf.canonical!r} is invalid")
    parts, grid = [], []
    for layer in sf.layers:
        counts = np.asarray(layer.counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise InvalidSpectrumError(f"layer with w={layer.w} has an empty histogram")
        parts.append(np.cumsum(counts / total) * (layer.bin_width / layer.w))
        grid.append((layer.bins, layer.w))
    return SpectralCdfFeature(sf.canonical, np.concatenate(parts), tuple(grid))


def dist_spectra(a: SpectralCdfFeature, b: SpectralCdfFeature) -> float:
    """``sum_l W1(mu_l, nu_l) / w_l`` as the Manhattan distance of scaled CDFs."""
    if a.grid != b.grid:
        raise GridMismatchError(f"bin grids differ: {a.grid} vs {b.grid}")
    return float(np.sum(np.abs(a.values - b.values)))


def output_matrix(features: list[OutputFeature]) -> np.ndarray:
    return np.stack([clean_outputs(f.values) for f in features])


def spectral_matrix(features: list[SpectralCdfFeature]) -> np.ndarray:
    grids = {f.grid for f in features}
    if len(grids) > 1:
        raise GridMismatchError("spectral features use different bin grids")
    return np.stack([f.values for f in features])


# --- persistence -------------------------------------------------------------


def write_outputs(path: str | Path, features: list[OutputFeature], probe_seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": {"probe_seed": probe_seed, "n_probes": int(features[0].values.size)
                                        if features else 0}}) + "\n")
        for f in features:
            vals = [float(v) if np.isfinite(v) else str(float(v)) for v in f.values]
            fh.write(json.dumps({"canonical": f.canonical, "values": vals}) + "\n")


def read_outputs(path: str | Path) -> tuple[dict, list[OutputFeature]]:
    header, out = {}, []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
                continue
            vals = np.array([float(v) for v in d["values"]], dtype=np.float64)
            out.append(OutputFeature(d["canonical"], vals))
    return header, out
