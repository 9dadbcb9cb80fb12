"""UC sampling: decompositions, slice intersection, frontier traversal."""
from .frontier import FaceLabel, FrontierGraph, frontier_step, traverse
from .sampler import (
    ACRSampleResult,
    ACRSampler,
    CayleyVolume,
    Variant,
    easal_cayley_volume,
    sample_acr,
    seed_cubes,
)

__all__ = [
    "ACRSampleResult", "ACRSampler", "CayleyVolume", "FaceLabel", "FrontierGraph", "Variant",
    "easal_cayley_volume", "frontier_step", "sample_acr", "seed_cubes", "traverse",
]
