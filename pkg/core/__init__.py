"""Core components: domain types, errors, camera geometry, priors, losses and metrics."""

from .types import Dsm, DsmDiffReport, FusedDepthMap, NormalMap, PointSet, RpcModel, SparseObservation, TriangleMesh
from .errors import SatDNError
from .evaluation import ReconstructionEvaluator

__all__ = [
    'Dsm',
    'DsmDiffReport',
    'FusedDepthMap',
    'NormalMap',
    'PointSet',
    'RpcModel',
    'SparseObservation',
    'TriangleMesh',
    'SatDNError',
    'ReconstructionEvaluator',
]
