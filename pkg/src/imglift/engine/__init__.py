"""Super-resolution inference engine: graphs, weights, manifests."""

from .graph import (Add, Conv2d, LoadedModel, ModelGraph, PixelShuffle, Relu,
                    ReplicateInput, ValidationReport, conv2d, infer,
                    pixel_shuffle, propagate_shapes, validate)
from .manifest import (REFERENCE_MANIFESTS, generate_random_weights,
                       load_model, make_bilinear_model, make_nearest_model,
                       parse_manifest, reference_manifest_text, resolve_model)
from .weights import WeightStore, load_weights, save_weights

__all__ = [
    "Add", "Conv2d", "LoadedModel", "ModelGraph", "PixelShuffle", "Relu",
    "ReplicateInput", "ValidationReport", "WeightStore",
    "conv2d", "infer", "pixel_shuffle", "propagate_shapes", "validate",
    "load_model", "load_weights", "save_weights", "parse_manifest",
    "make_nearest_model", "make_bilinear_model", "generate_random_weights",
    "reference_manifest_text", "resolve_model", "REFERENCE_MANIFESTS",
]
