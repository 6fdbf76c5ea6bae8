"""Progressive training loop: level schedule, Adam with per-group rates, loss log and checkpoints."""

import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from core.errors import NonFiniteError
from core.losses import LossWeights, color_loss, depth_loss, eikonal_loss, normal_loss, total_loss
from core.types import BatchLosses
from field.hash_encoding import HashGridConfig
from field.neural_field import FieldConfig, SdfField, backprop
from field.renderer import SamplingConfig, dump_rays, render_rays
from storage.reports import append_rows
from .batching import RayBatch, TrainingData, build_batch
from .checkpoint import Checkpoint, read_checkpoint, restore_field, restore_optimizer, save_checkpoint


logger = logging.getLogger(__name__)

LOSS_COLUMNS = ['iter', 'color', 'depth', 'normal', 'eikonal', 'total', 'lambda_level', 's']


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 100000
    batch_rays: int = 4096
    samples_per_ray: int = 128
    lambda_init: int = 4
    lambda_step_fraction: float = 0.025
    progressive: bool = True
    lr_hash: float = 1e-2
    lr_mlp: float = 1e-3
    lr_bandwidth: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-15
    decay_start: float = 0.5
    seed: int = 0
    checkpoint_every: int = 5000
    log_every: int = 100
    opacity_threshold: float = 0.5

    def __post_init__(self):
        if self.batch_rays <= 0:
            raise ValueError("batch_rays must be > 0")
        if not 0.0 < self.lambda_step_fraction <= 1.0:
            raise ValueError("lambda_step_fraction must be in (0, 1]")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")

    @property
    def lambda_step_iters(self) -> int:
        return max(1, int(round(self.lambda_step_fraction * self.total_iters)))


def schedule_lambda(iteration: int, config: TrainConfig, levels: int) -> int:
    """Gating level: min(L, lambda_init + floor(iter / step)), or L without progressive training."""
    if not config.progressive:
        return levels
    return min(levels, config.lambda_init + iteration // config.lambda_step_iters)


def learning_rate_factor(iteration: int, config: TrainConfig) -> float:
    """1 until decay_start of training, then a cosine tail towards 0."""
    start = int(config.decay_start * config.total_iters)
    if iteration < start or config.total_iters <= start:
        return 1.0
    progress = (iteration - start) / (config.total_iters - start)
    return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def make_optimizer(field: SdfField, config: TrainConfig) -> torch.optim.Adam:
    groups = field.parameter_groups()
    rates = {'hash': config.lr_hash, 'mlp': config.lr_mlp, 'bandwidth': config.lr_bandwidth}
    return torch.optim.Adam(
        [{'params': groups[name], 'lr': rates[name], 'base_lr': rates[name], 'name': name} for name in rates],
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )


def create_field(grid: HashGridConfig, field_config: FieldConfig, seed: int,
                 plane_altitude: float = 0.0) -> SdfField:
    field = SdfField(grid, field_config, seed=seed)
    field.set_plane(plane_altitude)
    return field


def load_field(path: Path) -> Tuple[SdfField, Checkpoint]:
    """Rebuild a field from a checkpoint's configuration echo and load its parameters."""
    checkpoint = read_checkpoint(path)
    config = checkpoint.config
    field = SdfField(HashGridConfig(**config['hash_grid']), FieldConfig(**config['field']),
                     seed=int(config.get('seed', 0)))
    restore_field(checkpoint, field)
    return field, checkpoint


class Trainer:
    """Owns the field, optimizer and iteration counter of one training run."""

    def __init__(self, field: SdfField, data: TrainingData, config: TrainConfig,
                 weights: LossWeights = LossWeights(), sampling: SamplingConfig = SamplingConfig(),
                 output_dir: Optional[Path] = None, config_echo: Optional[Dict[str, Any]] = None):
        """
        Initialize a training run.

        Args:
            field: Field to optimize
            data: Memory-resident training rays
            config: Training configuration
            weights: Loss weights
            sampling: Ray sampling configuration
            output_dir: Directory for checkpoints and the loss log (None disables writing)
            config_echo: Configuration stored in checkpoints
        """
        if sampling.n_total != config.samples_per_ray:
            raise ValueError(
                f"samples_per_ray ({config.samples_per_ray}) differs from the sampler total ({sampling.n_total})"
            )
        self.field = field
        self.data = data
        self.config = config
        self.weights = weights
        self.sampling = sampling
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.config_echo = config_echo or {
            'hash_grid': asdict(field.grid_config), 'field': asdict(field.config), 'seed': config.seed,
        }
        self.optimizer = make_optimizer(field, config)
        self.iteration = 0
        self.last_checkpoint: Optional[Path] = None
        self._pending_rows: List[Dict[str, float]] = []

    @property
    def levels(self) -> int:
        return self.field.grid_config.levels

    @property
    def lam(self) -> int:
        return schedule_lambda(self.iteration, self.config, self.levels)

    @property
    def loss_log(self) -> Optional[Path]:
        return self.output_dir / 'loss_log.csv' if self.output_dir else None

    def _set_learning_rates(self) -> None:
        factor = learning_rate_factor(self.iteration, self.config)
        for group in self.optimizer.param_groups:
            group['lr'] = group['base_lr'] * factor

    def next_batch(self) -> RayBatch:
        rng = np.random.default_rng([self.config.seed, self.iteration])
        return build_batch(self.data, rng, self.config.batch_rays)

    def train_step(self, batch: RayBatch, dump_path: Optional[Path] = None) -> BatchLosses:
        """
        One optimization step: render, losses, backprop, Adam update.

        Raises:
            NonFiniteError: With the last good checkpoint in the message
        """
        lam = self.lam
        self._set_learning_rates()
        generator = torch.Generator().manual_seed(self.config.seed * 1_000_003 + self.iteration)
        self.optimizer.zero_grad(set_to_none=True)

        try:
            result = render_rays(self.field, batch.origins, batch.directions, batch.t_far, batch.sun,
                                 lam, self.sampling, generator)
            color = color_loss(result.color, batch.colors)
            depth = depth_loss(result.depth, batch.depth, batch.depth_mask)
            eikonal = eikonal_loss(result.gradients)
            n_normal = 0
            normal = color.new_zeros(())
            if self.weights.normal > 0:
                normal, n_normal = normal_loss(
                    self.field, lam, batch.origins, batch.directions,
                    batch.neighbour_origins, batch.neighbour_directions,
                    result.depth, result.opacity, batch.consistency, batch.normal_mask,
                    self.config.opacity_threshold,
                )
            total = total_loss(color, depth, normal, eikonal, self.weights)
            backprop(total, self.field)
        except NonFiniteError as e:
            raise NonFiniteError(
                f"{e} at iteration {self.iteration}; last good checkpoint: {self.last_checkpoint}"
            ) from e

        if dump_path is not None:
            dump_rays(result, dump_path)

        self.field.encoder.mask_inactive_gradients(lam)
        self.optimizer.step()

        losses = BatchLosses(
            color=float(color), depth=float(depth), normal=float(normal), eikonal=float(eikonal),
            total=float(total), n_color=len(batch), n_depth=int(batch.depth_mask.sum()),
            n_normal=n_normal, n_eikonal=int(result.gradients.shape[0] * result.gradients.shape[1]),
        )
        self._pending_rows.append({
            'iter': self.iteration, 'color': losses.color, 'depth': losses.depth,
            'normal': losses.normal, 'eikonal': losses.eikonal, 'total': losses.total,
            'lambda_level': lam, 's': float(self.field.bandwidth),
        })
        self.iteration += 1
        return losses

    def flush_log(self) -> None:
        if self.loss_log is not None and self._pending_rows:
            append_rows(self.loss_log, self._pending_rows, LOSS_COLUMNS)
        self._pending_rows = []

    def checkpoint_path(self, final: bool = False) -> Path:
        name = 'final.ckpt' if final else f"iter_{self.iteration:06d}.ckpt"
        return self.output_dir / 'checkpoints' / name

    def save(self, path: Path) -> Path:
        self.flush_log()
        self.last_checkpoint = save_checkpoint(path, self.field, self.optimizer, self.iteration, self.config_echo)
        return self.last_checkpoint

    def resume(self, path: Path) -> None:
        """Continue from a checkpoint; the gating level follows from the restored iteration."""
        checkpoint = read_checkpoint(path)
        restore_field(checkpoint, self.field)
        restore_optimizer(checkpoint, self.field, self.optimizer)
        self.iteration = checkpoint.iteration
        self.last_checkpoint = Path(path)
        logger.info(f"Resumed from {path} at iteration {self.iteration} (lambda {self.lam})")

    def train(self, dump_rays_at: Optional[int] = None) -> Optional[Path]:
        """
        Run until total_iters, checkpointing on cadence and at the end.

        Args:
            dump_rays_at: Iteration whose first rays are dumped to CSV

        Returns:
            Optional[Path]: Final checkpoint, or None without an output directory
        """
        start_time = time.time()
        start = self.iteration
        if start == 0 and self.loss_log is not None and self.loss_log.exists():
            self.loss_log.unlink()
        logger.info(
            f"Training {self.config.total_iters - start} iteration(s) from {start}: "
            f"batch {self.config.batch_rays}, {self.sampling.n_total} samples/ray, lambda {self.lam}"
        )
        progress = tqdm(range(start, self.config.total_iters), desc='train', unit='it', leave=False)
        for _ in progress:
            dump = None
            if dump_rays_at is not None and self.iteration == dump_rays_at and self.output_dir:
                dump = self.output_dir / f"rays_{self.iteration:06d}.csv"
            losses = self.train_step(self.next_batch(), dump)

            if self.iteration % self.config.log_every == 0:
                progress.set_postfix(total=f"{losses.total:.4f}", lam=self.lam)
                logger.info(
                    f"iter {self.iteration}: total {losses.total:.5f} color {losses.color:.5f} "
                    f"depth {losses.depth:.5f} normal {losses.normal:.5f} eikonal {losses.eikonal:.5f} "
                    f"s {float(self.field.bandwidth):.2f}"
                )
                self.flush_log()
            if self.output_dir and self.config.checkpoint_every and self.iteration % self.config.checkpoint_every == 0:
                self.save(self.checkpoint_path())

        self.flush_log()
        logger.info(f"Training finished in {time.time() - start_time:.1f}s")
        if self.output_dir is None:
            return None
        return self.save(self.checkpoint_path(final=True))
