"""Model manifest parsing and built-in model constructions.

Manifest grammar (line oriented, `#` comments):

    name = espcn_x4
    scale = 4
    input_channels = 3
    node conv1 conv2d kernel=5x5 in=3 out=64
    node act1 relu
    node up pixel_shuffle r=4

Ops: conv2d (kernel=KHxKW in=N out=N), relu, pixel_shuffle (r=N),
add (source=NODE|input), replicate_input (times=N).

Two analytic weight-free constructions are built in: "nearest"
(replicate + shuffle, exactly nearest-neighbor upsampling) and
"bilinear" (a sub-pixel conv whose taps are the bilinear FIR weights).
"""

from __future__ import annotations

import math
import time
from importlib import resources

import numpy as np

from ..errors import LoadError
from .graph import (Add, Conv2d, LoadedModel, ModelGraph, PixelShuffle,
                    Relu, ReplicateInput, check_weights, propagate_shapes)
from .weights import WeightStore, load_weights

_OPS = {"conv2d", "relu", "pixel_shuffle", "add", "replicate_input"}


def _parse_kv(parts: list[str], lineno: int) -> dict[str, str]:
    kv = {}
    for part in parts:
        if "=" not in part:
            raise LoadError(f"manifest line {lineno}: expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        kv[k] = v
    return kv


def parse_manifest(text: str) -> ModelGraph:
    """Parse manifest text into a ModelGraph (structure only, no weights)."""
    header: dict[str, str] = {}
    nodes: list = []
    names: set[str] = {"input"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("node "):
            parts = line.split()
            if len(parts) < 3:
                raise LoadError(f"manifest line {lineno}: node needs a name and an op")
            _, name, op = parts[0], parts[1], parts[2]
            if name in names:
                raise LoadError(f"manifest line {lineno}: duplicate node name {name!r}")
            if op not in _OPS:
                raise LoadError(f"manifest line {lineno}: unknown op {op!r}")
            kv = _parse_kv(parts[3:], lineno)
            try:
                if op == "conv2d":
                    kh, kw = kv["kernel"].lower().split("x")
                    nodes.append(Conv2d(name, (int(kh), int(kw)), int(kv["in"]), int(kv["out"])))
                elif op == "relu":
                    nodes.append(Relu(name))
                elif op == "pixel_shuffle":
                    nodes.append(PixelShuffle(name, int(kv["r"])))
                elif op == "add":
                    src = kv["source"]
                    if src not in names:
                        raise LoadError(
                            f"manifest line {lineno}: add source {src!r} not defined yet"
                        )
                    nodes.append(Add(name, src))
                elif op == "replicate_input":
                    nodes.append(ReplicateInput(name, int(kv["times"])))
            except KeyError as exc:
                raise LoadError(f"manifest line {lineno}: missing {exc} for op {op}") from None
            except ValueError as exc:
                raise LoadError(f"manifest line {lineno}: {exc}") from None
            names.add(name)
        elif "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            header[k] = v
        else:
            raise LoadError(f"manifest line {lineno}: unparseable {line!r}")
    if "name" not in header or "scale" not in header:
        raise LoadError("manifest must declare `name` and `scale`")
    try:
        scale = int(header["scale"])
        in_ch = int(header.get("input_channels", "3"))
    except ValueError as exc:
        raise LoadError(f"manifest header: {exc}") from None
    if scale < 2:
        raise LoadError(f"scale must be >= 2, got {scale}")
    if not nodes:
        raise LoadError("manifest has no nodes")
    return ModelGraph(header["name"], scale, tuple(nodes), in_ch)


def load_model(manifest_text: str, weight_bytes: bytes | None) -> LoadedModel:
    """Parse + structurally validate a model; LoadError on any mismatch."""
    t0 = time.perf_counter()
    graph = parse_manifest(manifest_text)
    store = load_weights(weight_bytes) if weight_bytes else WeightStore()
    check_weights(graph, store)
    # channel chaining and shuffle factors are input-size independent
    probe_side = 8
    from ..errors import ValidationError

    try:
        propagate_shapes(graph, (1, graph.input_channels, probe_side, probe_side))
    except ValidationError as exc:
        raise LoadError(f"inconsistent graph: {exc}") from exc
    load_ms = (time.perf_counter() - t0) * 1000.0
    return LoadedModel(graph=graph, weights=store, load_time_ms=load_ms)


def make_nearest_model(r: int = 4) -> LoadedModel:
    """Replicate + shuffle: bit-exact nearest-neighbor upsampling."""
    graph = ModelGraph(
        f"nearest_x{r}", r,
        (ReplicateInput("rep", r * r), PixelShuffle("up", r)),
    )
    return LoadedModel(graph=graph, weights=WeightStore())


def _bilinear_taps(r: int) -> np.ndarray:
    """Per-phase 3x3 FIR taps reproducing half-pixel-center bilinear sampling."""
    taps = np.zeros((r * r, 3, 3), dtype=np.float64)
    for dy in range(r):
        oy = (dy + 0.5) / r - 0.5
        wy = {0: 1.0 - abs(oy)}
        wy[1 if oy >= 0 else -1] = abs(oy)
        for dx in range(r):
            ox = (dx + 0.5) / r - 0.5
            wx = {0: 1.0 - abs(ox)}
            wx[1 if ox >= 0 else -1] = abs(ox)
            for iy, vy in wy.items():
                for ix, vx in wx.items():
                    taps[dy * r + dx, 1 + iy, 1 + ix] = vy * vx
    return taps


def make_bilinear_model(r: int = 4, channels: int = 3) -> LoadedModel:
    """Sub-pixel conv with analytic bilinear taps, then shuffle.

    Matches bilinear resize exactly in the interior; borders differ
    because the conv zero-pads where resize edge-clamps.
    """
    taps = _bilinear_taps(r)
    w = np.zeros((channels * r * r, channels, 3, 3), dtype=np.float32)
    for c in range(channels):
        for p in range(r * r):
            w[c * r * r + p, c] = taps[p]
    store = WeightStore()
    store.put("taps.weight", w)
    store.put("taps.bias", np.zeros(channels * r * r, dtype=np.float32))
    graph = ModelGraph(
        f"bilinear_x{r}", r,
        (Conv2d("taps", (3, 3), channels, channels * r * r), PixelShuffle("up", r)),
        input_channels=channels,
    )
    return LoadedModel(graph=graph, weights=store)


def generate_random_weights(graph: ModelGraph, seed: int = 0) -> WeightStore:
    """He-normal conv weights, zero bias. For validation and benchmarks
    only; no trained checkpoints ship with the package."""
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for node in graph.nodes:
        if isinstance(node, Conv2d):
            fan_in = node.in_channels * node.kernel[0] * node.kernel[1]
            std = math.sqrt(2.0 / fan_in)
            w = rng.normal(0.0, std, (node.out_channels, node.in_channels, *node.kernel))
            store.put(f"{node.name}.weight", w.astype(np.float32))
            store.put(f"{node.name}.bias", np.zeros(node.out_channels, dtype=np.float32))
    return store


REFERENCE_MANIFESTS = ("espcn_x4", "quicksrnet_small_x4", "sesr_m5_x4")


def reference_manifest_text(name: str) -> str:
    if name not in REFERENCE_MANIFESTS:
        raise LoadError(f"unknown reference manifest {name!r}; have {REFERENCE_MANIFESTS}")
    return resources.files("imglift.models").joinpath(f"{name}.manifest").read_text()


def resolve_model(spec: str, weights_path: str | None = None, seed: int | None = None) -> LoadedModel:
    """Turn a CLI model spec into a loaded model.

    Accepts "nearest[_xR]", "bilinear[_xR]", a reference manifest name,
    or a filesystem path to a .manifest (weights default to the sibling
    .pxlw file). `seed` generates random weights instead, for manifests
    without a checkpoint.
    """
    base = spec.lower()
    if base.startswith("nearest") or base.startswith("bilinear"):
        r = 4
        if "_x" in base:
            try:
                r = int(base.rsplit("_x", 1)[1])
            except ValueError:
                raise LoadError(f"bad scale in model spec {spec!r}") from None
        return make_nearest_model(r) if base.startswith("nearest") else make_bilinear_model(r)

    if spec in REFERENCE_MANIFESTS:
        text = reference_manifest_text(spec)
    else:
        from pathlib import Path

        p = Path(spec)
        if not p.is_file():
            raise LoadError(
                f"model {spec!r} is neither built-in (nearest/bilinear/"
                f"{'/'.join(REFERENCE_MANIFESTS)}) nor a manifest path"
            )
        text = p.read_text()
        if weights_path is None:
            sibling = p.with_suffix(".pxlw")
            weights_path = str(sibling) if sibling.is_file() else None

    graph = parse_manifest(text)
    if weights_path is not None:
        from pathlib import Path

        weight_bytes = Path(weights_path).read_bytes()
        return load_model(text, weight_bytes)
    if seed is not None:
        model = LoadedModel(graph=graph, weights=generate_random_weights(graph, seed))
        check_weights(graph, model.weights)
        return model
    raise LoadError(
        f"model {graph.name!r} needs weights: pass a .pxlw path or a --seed "
        f"to generate untrained weights (validation/benchmarks only)"
    )
