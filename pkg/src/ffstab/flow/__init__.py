"""Filter, spectral flow, transformed-perturbation decomposition and decay bounds."""

from .bound_functions import BoundParams, assemble, bound_functions
from .decompose import (
    TransformedPerturbation,
    WDecomposition,
    anchor_projectors,
    anchor_split,
    centred_shells,
    delta_bound_check,
    localize,
    transform_decompose,
    w_decomposition,
)
from .filter import FilterSpec, filter_apply
from .spectral_flow import FlowResult, spectral_flow
from .telescoping import telescoping_curve, telescoping_norm

__all__ = [
    "BoundParams", "FilterSpec", "FlowResult", "TransformedPerturbation", "WDecomposition",
    "anchor_projectors", "anchor_split", "assemble", "bound_functions", "centred_shells",
    "delta_bound_check", "filter_apply", "localize", "spectral_flow", "telescoping_curve",
    "telescoping_norm", "transform_decompose", "w_decomposition",
]
