"""Declarative super-resolution graphs and their executor.

A model is an ordered chain of nodes (conv2d / relu / pixel_shuffle /
add / replicate_input). Each node consumes its predecessor's output,
except replicate_input (reads the graph input) and add (predecessor
plus a named earlier node). Convolutions are stride 1 with zero-filled
"same" padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .. import _kernels
from ..errors import ShapeError, ValidationError
from ..image import Tensor
from .weights import WeightStore


@dataclass(frozen=True)
class Conv2d:
    name: str
    kernel: tuple[int, int]  # (kh, kw)
    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class Relu:
    name: str


@dataclass(frozen=True)
class PixelShuffle:
    name: str
    factor: int


@dataclass(frozen=True)
class Add:
    name: str
    source: str  # earlier node name, or "input"


@dataclass(frozen=True)
class ReplicateInput:
    name: str
    times: int


Node = Union[Conv2d, Relu, PixelShuffle, Add, ReplicateInput]


@dataclass(frozen=True)
class ModelGraph:
    name: str
    scale_factor: int
    nodes: tuple
    input_channels: int = 3


@dataclass
class LoadedModel:
    graph: ModelGraph
    weights: WeightStore
    load_time_ms: float = 0.0

    @property
    def name(self) -> str:
        return self.graph.name

    @property
    def scale_factor(self) -> int:
        return self.graph.scale_factor


@dataclass(frozen=True)
class ValidationReport:
    model_name: str
    input_shape: tuple
    output_shape: tuple
    load_time_ms: float


def conv2d(t: Tensor, weights: np.ndarray, bias: np.ndarray, padding: str = "same") -> Tensor:
    """Stride-1 convolution with zero "same" padding on an NCHW tensor."""
    if padding != "same":
        raise ValueError(f"only 'same' padding is supported, got {padding!r}")
    if t.layout != "nchw":
        raise ShapeError(f"conv2d expects nchw, got {t.layout}")
    w = np.asarray(weights, dtype=np.float32)
    b = np.asarray(bias, dtype=np.float32)
    if w.ndim != 4 or b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ShapeError(f"bad weight/bias shapes {w.shape} / {b.shape}")
    if t.data.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: input has {t.data.shape[1]}, weights expect {w.shape[1]}")
    out = np.stack([_kernels.conv2d_same(img, w, b) for img in t.data])
    return Tensor(out, "nchw")


def pixel_shuffle(t: Tensor, r: int) -> Tensor:
    """(N, C*r^2, H, W) -> (N, C, rH, rW) sub-pixel rearrangement."""
    if t.layout != "nchw":
        raise ShapeError(f"pixel_shuffle expects nchw, got {t.layout}")
    if r < 1:
        raise ValueError(f"shuffle factor must be >= 1, got {r}")
    c = t.data.shape[1]
    if c % (r * r) != 0:
        raise ShapeError(f"channels {c} not divisible by r^2={r * r}")
    if r == 1:
        return t
    out = np.stack([_kernels.pixel_shuffle(img, r) for img in t.data])
    return Tensor(out, "nchw")


def propagate_shapes(graph: ModelGraph, input_shape: tuple) -> dict[str, tuple]:
    """Symbolic shape propagation; ValidationError names the offending node."""
    if len(input_shape) != 4 or input_shape[0] != 1:
        raise ValidationError(f"input shape must be (1, C, H, W), got {input_shape}")
    if input_shape[1] != graph.input_channels:
        raise ValidationError(
            f"input has {input_shape[1]} channels, model expects {graph.input_channels}"
        )
    shapes: dict[str, tuple] = {"input": tuple(input_shape)}
    cur = tuple(input_shape)
    shuffle_product = 1
    for node in graph.nodes:
        if isinstance(node, Conv2d):
            if cur[1] != node.in_channels:
                raise ValidationError(
                    f"node {node.name!r}: expects {node.in_channels} channels, gets {cur[1]}"
                )
            cur = (1, node.out_channels, cur[2], cur[3])
        elif isinstance(node, Relu):
            pass
        elif isinstance(node, PixelShuffle):
            r = node.factor
            if cur[1] % (r * r) != 0:
                raise ValidationError(
                    f"node {node.name!r}: channels {cur[1]} not divisible by {r * r}"
                )
            cur = (1, cur[1] // (r * r), cur[2] * r, cur[3] * r)
            shuffle_product *= r
        elif isinstance(node, Add):
            if node.source not in shapes:
                raise ValidationError(f"node {node.name!r}: unknown add source {node.source!r}")
            if shapes[node.source] != cur:
                raise ValidationError(
                    f"node {node.name!r}: add shapes differ, {shapes[node.source]} vs {cur}"
                )
        elif isinstance(node, ReplicateInput):
            if node.times < 1:
                raise ValidationError(f"node {node.name!r}: times must be >= 1")
            cur = (1, input_shape[1] * node.times, input_shape[2], input_shape[3])
        else:
            raise ValidationError(f"unknown node type {type(node).__name__}")
        shapes[node.name] = cur
    r = graph.scale_factor
    expected = (1, input_shape[1], input_shape[2] * r, input_shape[3] * r)
    if cur != expected:
        raise ValidationError(f"output shape {cur} does not match {expected} for scale {r}")
    if shuffle_product != r:
        raise ValidationError(
            f"pixel-shuffle factors multiply to {shuffle_product}, scale is {r}"
        )
    return shapes


def validate(model: LoadedModel, input_shape: tuple) -> ValidationReport:
    """Check that shapes chain consistently for this input shape."""
    shapes = propagate_shapes(model.graph, tuple(input_shape))
    last = model.graph.nodes[-1].name if model.graph.nodes else "input"
    return ValidationReport(
        model_name=model.graph.name,
        input_shape=tuple(input_shape),
        output_shape=shapes[last],
        load_time_ms=model.load_time_ms,
    )


def infer(model: LoadedModel, t: Tensor) -> Tensor:
    """Run the graph on an NCHW tensor; deterministic and side-effect free."""
    if t.layout != "nchw":
        raise ShapeError(f"infer expects nchw, got {t.layout}")
    graph = model.graph
    x_in = t.data[0]  # batch of 1; kernels operate on (C, H, W)
    if x_in.shape[0] != graph.input_channels:
        raise ShapeError(
            f"input has {x_in.shape[0]} channels, model expects {graph.input_channels}"
        )
    outputs: dict[str, np.ndarray] = {"input": x_in}
    needed = {n.source for n in graph.nodes if isinstance(n, Add)}
    cur = x_in
    for node in graph.nodes:
        if isinstance(node, Conv2d):
            cur = _kernels.conv2d_same(
                np.ascontiguousarray(cur), model.weights.weight(node.name),
                model.weights.bias(node.name),
            )
        elif isinstance(node, Relu):
            cur = np.maximum(cur, np.float32(0.0))
        elif isinstance(node, PixelShuffle):
            if node.factor > 1:
                cur = _kernels.pixel_shuffle(np.ascontiguousarray(cur), node.factor)
        elif isinstance(node, Add):
            src = outputs[node.source]
            if src.shape != cur.shape:
                raise ShapeError(f"add {node.name!r}: {src.shape} vs {cur.shape}")
            cur = cur + src
        elif isinstance(node, ReplicateInput):
            cur = np.repeat(x_in, node.times, axis=0)
        if node.name in needed:
            outputs[node.name] = cur
    return Tensor(cur[None, ...], "nchw")


def check_weights(graph: ModelGraph, store: WeightStore):
    """Verify every conv layer has matching-shape weight and bias entries."""
    from ..errors import LoadError

    for node in graph.nodes:
        if not isinstance(node, Conv2d):
            continue
        for suffix in (".weight", ".bias"):
            if f"{node.name}{suffix}" not in store:
                raise LoadError(f"missing weights for layer {node.name!r}")
        w = store.weight(node.name)
        b = store.bias(node.name)
        expected_w = (node.out_channels, node.in_channels, node.kernel[0], node.kernel[1])
        if tuple(w.shape) != expected_w:
            raise LoadError(
                f"layer {node.name!r}: weight shape {tuple(w.shape)}, expected {expected_w}"
            )
        if tuple(b.shape) != (node.out_channels,):
            raise LoadError(
                f"layer {node.name!r}: bias shape {tuple(b.shape)}, expected ({node.out_channels},)"
            )
