"""Shared modular policies: one small network reused at every limb of every agent."""
from .morphology import (LimbSpec, MorphologyGraph, VariantSet, enumerate_variants, load_morphology,
                         parse_morphology, reroot, topological_ordering)
from .policy import SmpParams, act, batch_actions
from .sim import EnvConfig, PlanarEnv

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "LimbSpec", "MorphologyGraph", "PlanarEnv", "SmpParams", "VariantSet", "act",
    "batch_actions", "enumerate_variants", "load_morphology", "parse_morphology", "reroot",
    "topological_ordering",
]
