"""Minimal numpy networks with pluggable activation graphs.

The activation is applied after every weighted layer except the last one
(the classifier head), whose outputs are the logits of a softmax.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..afdsl import ActivationGraph, evaluate, evaluate_dual, parse
from .layers import (
    Conv2D,
    Dense,
    Depthwise2D,
    Flatten,
    GlobalAvgPool,
    SoftmaxHead,
    conv_output_size,
    expand_patches,
    expand_patches_depthwise,
    fold_patches,
    fold_patches_depthwise,
    layer_from_dict,
    layer_to_dict,
    param_count,
)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]  # per-sample shape: (features,) or (height, width, channels)
    layers: tuple
    activation: ActivationGraph | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.output_shapes()  # validates layer compatibility

    @property
    def weighted_layers(self) -> list:
        return [layer for layer in self.layers if layer.weighted]

    @property
    def param_counts(self) -> list[int]:
        return [param_count(layer) for layer in self.weighted_layers]

    @property
    def num_classes(self) -> int:
        return self.weighted_layers[-1].n_outputs()

    def with_activation(self, activation: ActivationGraph | str) -> "NetworkSpec":
        if isinstance(activation, str):
            activation = parse(activation)
        return replace(self, activation=activation)

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample output shape after each layer; raises ShapeError on mismatch."""
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.in_features:
                    raise ShapeError(f"layer {i}: dense expects ({layer.in_features},), got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, (Conv2D, Depthwise2D)):
                ch = layer.in_ch if isinstance(layer, Conv2D) else layer.ch
                if len(shape) != 3 or shape[2] != ch:
                    raise ShapeError(f"layer {i}: convolution expects {ch} channels, got {shape}")
                h = conv_output_size(shape[0], layer.kernel, layer.stride, layer.padding)
                w = conv_output_size(shape[1], layer.kernel, layer.stride, layer.padding)
                if h < 1 or w < 1:
                    raise ShapeError(f"layer {i}: kernel larger than padded input {shape}")
                shape = (h, w, layer.n_outputs())
            elif isinstance(layer, GlobalAvgPool):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: pooling expects an image, got {shape}")
                shape = (shape[2],)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, SoftmaxHead):
                if i != len(self.layers) - 1:
                    raise ShapeError("softmax_head must be the last layer")
            shapes.append(shape)
        if not self.weighted_layers:
            raise ShapeError("network has no weighted layers")
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_to_dict(layer) for layer in self.layers],
            "activation": None if self.activation is None else self.activation.canonical,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        act = d.get("activation")
        return cls(
            tuple(d["input_shape"]),
            tuple(layer_from_dict(x) for x in d["layers"]),
            None if act is None else parse(act),
        )

    def architecture_digest(self) -> str:
        """Digest of the architecture alone (activation excluded)."""
        d = self.to_dict()
        d.pop("activation")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Network:
    spec: NetworkSpec
    weights: list[np.ndarray]  # one (out, fan_in) matrix per weighted layer
    biases: list[np.ndarray | None]

    def copy(self) -> "Network":
        return Network(
            self.spec,
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def homogeneous_weights(self, i: int) -> np.ndarray:
        """``[b | W]`` for weighted layer ``i`` (just ``W`` without bias)."""
        b = self.biases[i]
        if b is None:
            return self.weights[i]
        return np.concatenate([b[:, None], self.weights[i]], axis=1)


def init_weights(spec: NetworkSpec, seed: int) -> Network:
    """He-style init: weights ~ N(0, 2/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer in spec.weighted_layers:
        std = np.sqrt(2.0 / layer.fan_in())
        weights.append(rng.normal(0.0, std, size=layer.weight_shape()))
        biases.append(np.zeros(layer.n_outputs()) if layer.bias else None)
    return Network(spec, weights, biases)


@dataclass
class LayerRecord:
    """Forward quantities of one weighted layer."""

    layer: object
    patches: np.ndarray  # input rows as consumed by the weights (no homogeneous column)
    input_shape: tuple[int, ...]  # full batch shape of the layer input
    preact: np.ndarray  # s_l in natural output shape
    dphi: np.ndarray | None  # activation derivative at s_l (None for the head)


@dataclass
class ForwardTrace:
    logits: np.ndarray
    records: list[LayerRecord]
    shapes: list[tuple[int, ...]] = field(default_factory=list)  # input shape per layer


@dataclass
class BatchTrace:
    """Per-weighted-layer K-FAC inputs.

    ``activations[l]`` holds the homogeneous input rows (column of ones first
    when the layer has a bias).  ``preact_grads[l]`` has a leading axis over
    sampled labels: shape ``(mc_samples, rows, outputs)`` where rows is the
    batch for dense layers and batch*locations for convolutions.
    """

    activations: list[np.ndarray]
    preact_grads: list[np.ndarray]
    batch_size: int
    labels: np.ndarray  # (mc_samples, batch)
    logits: np.ndarray
    layers: list = field(default_factory=list)


def _act(spec: NetworkSpec, s: np.ndarray, need_grad: bool):
    g = spec.activation
    if g is None:
        raise ValueError("network spec has no activation")
    if need_grad:
        return evaluate_dual(g, s)
    return evaluate(g, s), None


def forward(net: Network, inputs: np.ndarray, need_grad: bool = True) -> ForwardTrace:
    """Run the network; records every weighted layer's inputs and pre-activations.

    Non-finite values propagate; nothing is raised.
    """
    spec = net.spec
    h = np.asarray(inputs, dtype=np.float64)
    if h.shape[1:] != spec.input_shape:
        raise ShapeError(f"expected inputs of shape (M, {spec.input_shape}), got {h.shape}")
    m = h.shape[0]
    n_weighted = len(spec.weighted_layers)
    records: list[LayerRecord] = []
    shapes = []
    wi = 0
    with np.errstate(all="ignore"):
        for layer in spec.layers:
            shapes.append(h.shape)
            if layer.weighted:
                w, b = net.weights[wi], net.biases[wi]
                if isinstance(layer, Dense):
                    p = h
                    s = p @ w.T
                elif isinstance(layer, Conv2D):
                    p = expand_patches(h, layer.kernel, layer.stride, layer.padding)
                    ho = conv_output_size(h.shape[1], layer.kernel, layer.stride, layer.padding)
                    wo = conv_output_size(h.shape[2], layer.kernel, layer.stride, layer.padding)
                    s = (p @ w.T).reshape(m, ho, wo, layer.out_ch)
                else:
                    p = expand_patches_depthwise(h, layer.kernel, layer.stride, layer.padding)
                    ho = conv_output_size(h.shape[1], layer.kernel, layer.stride, layer.padding)
                    wo = conv_output_size(h.shape[2], layer.kernel, layer.stride, layer.padding)
                    p3 = p.reshape(-1, layer.ch, layer.kernel * layer.kernel)
                    s = np.einsum("ncd,cd->nc", p3, w).reshape(m, ho, wo, layer.ch)
                if b is not None:
                    s = s + b
                is_head = wi == n_weighted - 1
                if is_head:
                    h, dphi = s, None
                else:
                    h, dphi = _act(spec, s, need_grad)
                records.append(LayerRecord(layer, p, shapes[-1], s, dphi))
                wi += 1
            elif isinstance(layer, GlobalAvgPool):
                h = h.mean(axis=(1, 2))
            elif isinstance(layer, Flatten):
                h = h.reshape(m, -1)
    return ForwardTrace(h, records, shapes)


def softmax(z: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def backward(net: Network, trace: ForwardTrace, dlogits: np.ndarray):
    """Backpropagate ``dL/dlogits``.

    Returns ``(preact_grads, weight_grads, bias_grads)`` per weighted layer,
    with pre-activation gradients flattened to ``(rows, outputs)``.
    """
    spec = net.spec
    g = dlogits
    n_weighted = len(trace.records)
    wi = n_weighted
    ds_list: list = [None] * n_weighted
    dw_list: list = [None] * n_weighted
    db_list: list = [None] * n_weighted
    with np.errstate(all="ignore"):
        for li in range(len(spec.layers) - 1, -1, -1):
            layer = spec.layers[li]
            in_shape = trace.shapes[li]
            if layer.weighted:
                wi -= 1
                rec = trace.records[wi]
                ds = g if rec.dphi is None else g * rec.dphi
                w = net.weights[wi]
                if isinstance(layer, Dense):
                    ds2 = ds
                    dw_list[wi] = ds2.T @ rec.patches
                    g = ds2 @ w
                elif isinstance(layer, Conv2D):
                    ds2 = ds.reshape(-1, layer.out_ch)
                    dw_list[wi] = ds2.T @ rec.patches
                    g = fold_patches(ds2 @ w, in_shape, layer.kernel, layer.stride, layer.padding)
                else:
                    ds2 = ds.reshape(-1, layer.ch)
                    kk = layer.kernel * layer.kernel
                    p3 = rec.patches.reshape(-1, layer.ch, kk)
                    dw_list[wi] = np.einsum("nc,ncd->cd", ds2, p3)
                    dp = (ds2[:, :, None] * w[None, :, :]).reshape(-1, kk)
                    g = fold_patches_depthwise(dp, in_shape, layer.kernel, layer.stride, layer.padding)
                ds_list[wi] = ds2
                if net.biases[wi] is not None:
                    db_list[wi] = ds2.sum(axis=0)
            elif isinstance(layer, GlobalAvgPool):
                _, h, w_, _ = in_shape
                g = np.broadcast_to(g[:, None, None, :] / (h * w_), in_shape).copy()
            elif isinstance(layer, Flatten):
                g = g.reshape(in_shape)
    return ds_list, dw_list, db_list


def homogeneous(patches: np.ndarray, bias: bool) -> np.ndarray:
    if not bias:
        return patches
    return np.concatenate([np.ones((patches.shape[0], 1)), patches], axis=1)


def sample_labels(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1)) * cdf[:, -1:]
    labels = (u >= cdf).sum(axis=1)
    return np.minimum(labels, probs.shape[1] - 1)


def backward_sampled(net: Network, trace: ForwardTrace, mc_samples: int = 1, seed: int = 0) -> BatchTrace:
    """Pre-activation gradients of the per-sample cross-entropy under labels drawn
    from the model's own softmax (the true-Fisher convention)."""
    rng = np.random.default_rng(seed)
    probs = softmax(trace.logits)
    m, c = probs.shape
    grads_per_layer: list[list[np.ndarray]] = [[] for _ in trace.records]
    labels = np.empty((mc_samples, m), dtype=np.int64)
    for s in range(mc_samples):
        if np.all(np.isfinite(probs)):
            y = sample_labels(probs, rng)
        else:
            y = rng.integers(0, c, size=m)
        labels[s] = y
        dlogits = probs.copy()
        dlogits[np.arange(m), y] -= 1.0
        ds_list, _, _ = backward(net, trace, dlogits)
        for i, ds in enumerate(ds_list):
            grads_per_layer[i].append(ds)
    acts = [homogeneous(r.patches, net.biases[i] is not None) for i, r in enumerate(trace.records)]
    return BatchTrace(
        activations=acts,
        preact_grads=[np.stack(g) for g in grads_per_layer],
        batch_size=m,
        labels=labels,
        logits=trace.logits,
        layers=[r.layer for r in trace.records],
    )


def negated_network(net: Network) -> Network:
    """Sign-flip transform pairing activation ``phi`` with ``-phi``.

    Weights of every weighted layer after the first are negated; biases are
    kept.  With the negated activation the network computes the same
    pre-activations everywhere, hence the same logits.
    """
    from ..afdsl import negate

    out = net.copy()
    for i in range(1, len(out.weights)):
        out.weights[i] = -out.weights[i]
    out.spec = out.spec.with_activation(negate(net.spec.activation))
    return out
