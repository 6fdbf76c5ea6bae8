"""Synthetic scenes: analytic primitives and self-consistent dataset generation."""

from .primitives import BasePrimitive, Box, Plane, Sphere
from .factory import PrimitiveFactory
from .generator import (
    AnalyticScene,
    NoiseConfig,
    SynthDataset,
    ViewConfig,
    analytic_sdf,
    fit_rpc,
    generate_dataset,
    ground_truth_dsm,
    load_scene,
)

__all__ = [
    'BasePrimitive',
    'Plane',
    'Box',
    'Sphere',
    'PrimitiveFactory',
    'AnalyticScene',
    'ViewConfig',
    'NoiseConfig',
    'SynthDataset',
    'analytic_sdf',
    'fit_rpc',
    'generate_dataset',
    'ground_truth_dsm',
    'load_scene',
]
