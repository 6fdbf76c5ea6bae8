"""Learnable field: hash encoding, SDF/color MLPs and volume rendering."""

from .hash_encoding import HashGridConfig, HashGridEncoder, FrequencyEmbedding
from .neural_field import FieldConfig, FieldSample, SdfField
from .renderer import RenderResult, SamplingConfig, render_rays

__all__ = [
    'HashGridConfig',
    'HashGridEncoder',
    'FrequencyEmbedding',
    'FieldConfig',
    'FieldSample',
    'SdfField',
    'RenderResult',
    'SamplingConfig',
    'render_rays',
]
