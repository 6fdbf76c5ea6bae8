"""Training: ray batches, the progressive training loop and checkpoints."""

from .batching import RayBatch, TrainingData, build_batch
from .trainer import TrainConfig, Trainer, create_field, load_field, schedule_lambda

__all__ = [
    'RayBatch',
    'TrainingData',
    'build_batch',
    'TrainConfig',
    'Trainer',
    'create_field',
    'load_field',
    'schedule_lambda',
]
