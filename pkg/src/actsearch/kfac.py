"""Kronecker-factored Fisher blocks, their eigenvalue spectra and histograms.

For weighted layer ``l`` the Fisher block is approximated by
``Omega_{l-1} (x) Gamma_l`` where ``Omega`` is the second moment of the
layer's homogeneous inputs and ``Gamma`` that of the loss gradient with
respect to its pre-activations.  Eigenvalues of the block are all pairwise
products of the factor eigenvalues, computed here as sums of logs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .afdsl import ActivationGraph, parse
from .linalg import jacobi_eigvalsh
from .tensornet import BatchTrace, NetworkSpec, backward_sampled, forward, init_weights
from .tensornet.layers import expand_patches, expand_patches_depthwise, param_count

__all__ = [
    "EIG_CLAMP", "HIST_RANGE", "KfacFactors", "LayerSpectrum", "SpectrumFeature",
    "expand_patches", "expand_patches_depthwise", "fim_spectrum", "histogram_bins",
    "is_valid", "kfac_factors", "read_spectra", "spectrum", "write_spectra",
]

EIG_CLAMP = 1e-30
HIST_RANGE = (-100.0, 100.0)
BIN_DIVISOR = 100
FIM_BATCH = 128


@dataclass
class KfacFactors:
    omegas: list[np.ndarray]
    gammas: list[np.ndarray]
    param_counts: list[int]

    def __len__(self) -> int:
        return len(self.omegas)

    def dense_block(self, l: int) -> np.ndarray:
        """``Omega (x) Gamma`` for layer ``l`` assembled explicitly (test oracle use)."""
        return np.kron(self.omegas[l], self.gammas[l])


def kfac_factors(trace: BatchTrace, spec: NetworkSpec | None = None) -> KfacFactors:
    """Empirical Kronecker factors from one forward and sampled-label backward pass.

    ``Omega = sum over rows of a a^T / M`` (rows: samples, or samples x
    locations [x channels] for convolutions), ``Gamma = mean over rows and
    label draws of ds ds^T``, which carries the ``1/|T|`` spatial factor.
    Non-finite values propagate.
    """
    m = trace.batch_size
    layers = spec.weighted_layers if spec is not None else trace.layers
    omegas, gammas, counts = [], [], []
    with np.errstate(all="ignore"):
        for a, g, layer in zip(trace.activations, trace.preact_grads, layers):
            omegas.append(a.T @ a / m)
            s, rows, k = g.shape
            flat = g.reshape(s * rows, k)
            gammas.append(flat.T @ flat / (s * rows))
            counts.append(param_count(layer))
    return KfacFactors(omegas, gammas, counts)


def histogram_bins(w: int, divisor: int = BIN_DIVISOR) -> int:
    """Bins for a layer with ``w`` parameters: ``max(1, w // divisor)``."""
    return max(1, w // divisor)


@dataclass
class LayerSpectrum:
    w: int
    bins: int
    counts: np.ndarray
    log_eigs: np.ndarray | None = None  # sorted natural-log eigenvalues of the block
    clamped: int = 0  # factor eigenvalues raised to EIG_CLAMP
    zero_factor: bool = False  # every eigenvalue of Omega or of Gamma was clamped
    out_of_range: int = 0  # log-eigenvalues outside HIST_RANGE, clipped into edge bins

    @property
    def bin_width(self) -> float:
        return (HIST_RANGE[1] - HIST_RANGE[0]) / self.bins

    @property
    def degenerate(self) -> bool:
        """True when a whole factor sits at the clamp floor (no signal through the
        layer) or histogram mass had to be clipped into an edge bin."""
        return self.zero_factor or self.out_of_range > 0


@dataclass
class SpectrumFeature:
    canonical: str
    layers: list[LayerSpectrum]
    valid: bool
    meta: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return any(layer.degenerate for layer in self.layers)

    def to_json(self) -> dict:
        return {
            "canonical": self.canonical,
            "per_layer": [
                {"w": l.w, "bins": l.bins, "counts": [int(c) for c in l.counts],
                 "clamped": l.clamped, "zero_factor": l.zero_factor, "out_of_range": l.out_of_range}
                for l in self.layers
            ],
            "valid": self.valid,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SpectrumFeature":
        layers = [
            LayerSpectrum(int(l["w"]), int(l["bins"]), np.asarray(l["counts"], dtype=np.int64), None,
                          int(l.get("clamped", 0)), bool(l.get("zero_factor", False)),
                          int(l.get("out_of_range", 0)))
            for l in d["per_layer"]
        ]
        return cls(d["canonical"], layers, bool(d["valid"]))


def _log_clamped(vals: np.ndarray) -> tuple[np.ndarray, int]:
    low = vals < EIG_CLAMP
    return np.log(np.where(low, EIG_CLAMP, vals)), int(low.sum())


def spectrum(factors: KfacFactors, canonical: str = "", divisor: int = BIN_DIVISOR) -> SpectrumFeature:
    """Per-layer log-eigenvalue multisets and histograms over [-100, 100].

    Factor eigenvalues below 1e-30 are clamped before the natural log;
    out-of-range log-eigenvalues land in the edge bins.
    """
    layers = []
    valid = True
    for omega, gamma, w in zip(factors.omegas, factors.gammas, factors.param_counts):
        bins = histogram_bins(w, divisor)
        finite = np.all(np.isfinite(omega)) and np.all(np.isfinite(gamma))
        eo = jacobi_eigvalsh(omega) if finite else None
        eg = jacobi_eigvalsh(gamma) if finite else None
        if not finite or not (np.all(np.isfinite(eo)) and np.all(np.isfinite(eg))):
            valid = False
            layers.append(LayerSpectrum(w, bins, np.zeros(bins, dtype=np.int64)))
            continue
        lo, co = _log_clamped(eo)
        lg, cg = _log_clamped(eg)
        log_eigs = np.sort((lo[:, None] + lg[None, :]).ravel())
        counts, _ = np.histogram(np.clip(log_eigs, *HIST_RANGE), bins=bins, range=HIST_RANGE)
        zero = co == eo.size or cg == eg.size
        outside = int(np.sum((log_eigs < HIST_RANGE[0]) | (log_eigs > HIST_RANGE[1])))
        layers.append(LayerSpectrum(w, bins, counts.astype(np.int64), log_eigs, co + cg, zero, outside))
    return SpectrumFeature(canonical, layers, valid)


def is_valid(sf: SpectrumFeature) -> bool:
    return bool(sf.valid)


def fim_spectrum(
    activation: ActivationGraph | str,
    spec: NetworkSpec,
    inputs: np.ndarray,
    seed: int = 0,
    batch_size: int = FIM_BATCH,
    mc_samples: int = 1,
    divisor: int = BIN_DIVISOR,
) -> SpectrumFeature:
    """Spectrum at initialisation for one activation on one architecture.

    Uses the first ``batch_size`` rows of ``inputs`` and ``mc_samples`` label
    draws per input; weights come from ``init_weights(spec, seed)``.
    """
    if isinstance(activation, str):
        activation = parse(activation)
    net = init_weights(spec.with_activation(activation), seed)
    trace = forward(net, inputs[:batch_size])
    bt = backward_sampled(net, trace, mc_samples=mc_samples, seed=seed)
    sf = spectrum(kfac_factors(bt, net.spec), activation.canonical, divisor)
    return sf


# --- JSON-lines persistence ------------------------------------------------


def write_spectra(path: str | Path, features: Iterable[SpectrumFeature], header: dict | None = None,
                  append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w") as fh:
        if new:
            fh.write(json.dumps({"header": header or {}}) + "\n")
        for sf in features:
            fh.write(json.dumps(sf.to_json()) + "\n")


def read_spectra(path: str | Path) -> tuple[dict, list[SpectrumFeature]]:
    header: dict = {}
    out = []
    for d in _iter_jsonl(path):
        if "header" in d:
            header = d["header"]
        else:
            out.append(SpectrumFeature.from_json(d))
    return header, out


def _iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
