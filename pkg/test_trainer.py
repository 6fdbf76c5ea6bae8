#!/usr/bin/env python3
"""
Tests for the progressive schedule, ray batching, training steps and checkpoints.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from scipy.stats import chisquare

from core.errors import DatasetError, EmptyDatasetError
from core.losses import LossWeights
from field.hash_encoding import HashGridConfig
from field.neural_field import FieldConfig
from field.renderer import SamplingConfig
from training.batching import ImageRays, TrainingData, build_batch
from training.checkpoint import read_checkpoint, save_checkpoint
from training.trainer import (
    LOSS_COLUMNS,
    TrainConfig,
    Trainer,
    create_field,
    learning_rate_factor,
    load_field,
    make_optimizer,
    schedule_lambda,
)
from testutil import run_suite


GRID = HashGridConfig(levels=6, base_resolution=4, max_resolution=32, table_log2=10, feature_dim=2)
FIELD = FieldConfig(hidden_width=32, feature_dim=16)
FIELD_F64 = FieldConfig(hidden_width=32, feature_dim=16, dtype='float64')
SAMPLING = SamplingConfig(n_coarse=8, n_importance=8, up_sample_steps=2)


def image(image_id: str = 'img', size: int = 6, color: float = 0.3, supervised: bool = True) -> ImageRays:
    axis = np.linspace(-0.5, 0.5, size)
    rows, cols = np.meshgrid(axis, axis, indexing='ij')
    origins = np.stack([cols, -rows, np.ones_like(rows)], axis=-1)
    directions = np.broadcast_to([0.0, 0.0, -1.0], (size, size, 3)).copy()
    return ImageRays(
        image_id=image_id,
        colors=np.full((size, size, 3), color),
        origins=origins,
        directions=directions,
        t_far=np.full((size, size), 2.0),
        sun=np.array([0.0, 0.6, 0.8]),
        depth=np.full((size, size), 1.0),
        depth_mask=np.full((size, size), supervised),
        consistency=np.ones((size, size)),
        normal_mask=np.full((size, size), supervised),
    )


def trainer(data: TrainingData, output_dir=None, weights: LossWeights = LossWeights(),
            field_config: FieldConfig = FIELD, **overrides) -> Trainer:
    options = dict(total_iters=1000, batch_rays=16, samples_per_ray=SAMPLING.n_total, seed=3,
                   checkpoint_every=0, log_every=1)
    options.update(overrides)
    config = TrainConfig(**options)
    field = create_field(GRID, field_config, seed=config.seed)
    return Trainer(field, data, config, weights, SAMPLING, output_dir)


def parameters(field):
    return {name: p.detach().clone() for name, p in field.named_parameters()}


def test_schedule_defaults():
    config = TrainConfig()
    assert config.lambda_step_iters == 2500
    assert schedule_lambda(0, config, 24) == 4
    assert schedule_lambda(5000, config, 24) == 6
    assert schedule_lambda(49999, config, 24) == 23
    assert schedule_lambda(50000, config, 24) == 24
    assert schedule_lambda(100000, config, 24) == 24


def test_schedule_is_monotone():
    config = TrainConfig()
    levels = [schedule_lambda(i, config, 24) for i in range(0, 100001, 50)]
    assert levels == sorted(levels)


def test_schedule_without_progressive_training():
    assert schedule_lambda(0, TrainConfig(progressive=False), 24) == 24


def test_invalid_train_config_rejected():
    for kwargs in ({'lambda_step_fraction': 0.0}, {'lambda_step_fraction': 1.5}, {'batch_rays': 0}):
        try:
            TrainConfig(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"{kwargs} should be rejected")


def test_learning_rate_tail():
    config = TrainConfig(total_iters=1000)
    assert learning_rate_factor(0, config) == 1.0
    assert learning_rate_factor(499, config) == 1.0
    assert abs(learning_rate_factor(750, config) - 0.5) < 1e-12
    assert learning_rate_factor(1000, config) < 1e-12


def test_optimizer_groups():
    config = TrainConfig()
    optimizer = make_optimizer(create_field(GRID, FIELD, seed=0), config)
    rates = {group['name']: group['lr'] for group in optimizer.param_groups}
    assert rates == {'hash': config.lr_hash, 'mlp': config.lr_mlp, 'bandwidth': config.lr_bandwidth}


def test_empty_dataset_rejected():
    try:
        TrainingData([image(supervised=False)])
    except EmptyDatasetError:
        return
    raise AssertionError("dataset without depth supervision should raise")


def test_locate_covers_interior_pixels_once():
    data = TrainingData([image('a', 6), image('b', 5)])
    assert data.pixel_count == 16 + 9
    image_index, rows, cols = data.locate(np.arange(data.pixel_count))
    seen = set(zip(image_index.tolist(), rows.tolist(), cols.tolist()))
    assert len(seen) == data.pixel_count
    for i, r, c in seen:
        size = data.images[i].shape[0]
        assert 1 <= r <= size - 2 and 1 <= c <= size - 2


def test_build_batch_is_deterministic_with_neighbours():
    data = TrainingData([image('a'), image('b', color=0.6)], dtype=torch.float64)
    first = build_batch(data, np.random.default_rng(7), 32)
    second = build_batch(data, np.random.default_rng(7), 32)
    assert torch.equal(first.origins, second.origins)
    assert np.array_equal(first.pixels, second.pixels)

    for k in range(len(first)):
        source = data.images[first.image_index[k]]
        r, c = first.pixels[k]
        assert np.allclose(first.neighbour_origins[k, 0].numpy(), source.origins[r - 1, c])
        assert np.allclose(first.neighbour_origins[k, 3].numpy(), source.origins[r, c + 1])
        assert float(first.colors[k, 0]) == source.colors[r, c, 0]


def test_build_batch_samples_pixels_uniformly():
    data = TrainingData([image('a', 6), image('b', 5)])
    batch = build_batch(data, np.random.default_rng(11), 400 * data.pixel_count)
    drawn = np.column_stack([batch.image_index, batch.pixels])
    _, counts = np.unique(drawn, axis=0, return_counts=True)
    assert len(counts) == data.pixel_count
    assert chisquare(counts).pvalue > 1e-3


def test_loss_descends_over_early_iterations():
    improved = 0
    for seed in range(5):
        run = trainer(TrainingData([image(color=0.8)]), seed=seed)
        totals = [run.train_step(run.next_batch()).total for _ in range(40)]
        if np.mean(totals[-5:]) < np.mean(totals[:5]):
            improved += 1
    assert improved >= 4, f"loss fell for {improved} of 5 seeds"


def test_step_leaves_gated_levels_untouched():
    run = trainer(TrainingData([image()]))
    assert run.lam == 4
    before = run.field.encoder.table.detach().clone()
    # zero-initialized output rows block table gradients on the first step
    for _ in range(2):
        run.train_step(run.next_batch())
    after = run.field.encoder.table.detach()
    assert run.lam == 4 and run.iteration == 2
    assert torch.equal(after[4:], before[4:])
    assert not torch.equal(after[:4], before[:4])


def test_total_matches_weighted_parts():
    run = trainer(TrainingData([image()]))
    losses = run.train_step(run.next_batch())
    expected = losses.color + 0.1 * (losses.depth + losses.normal + losses.eikonal)
    assert abs(losses.total - expected) < 1e-5
    assert losses.n_color == 16 and losses.n_depth == 16


def test_color_bias_moves_toward_image_color():
    zero = LossWeights(depth=0.0, normal=0.0, eikonal=0.0)
    for color, direction in ((0.8, 1.0), (0.1, -1.0)):
        run = trainer(TrainingData([image(color=color)]), weights=zero)
        before = run.field.color_mlp[-1].bias.detach().clone()
        run.train_step(run.next_batch())
        moved = (run.field.color_mlp[-1].bias.detach() - before) * direction
        assert torch.all(moved > 0), f"color {color}: bias moved by {moved.tolist()}"


def test_same_seed_same_steps():
    data = TrainingData([image()])
    a, b = trainer(data), trainer(data)
    for _ in range(2):
        la = a.train_step(a.next_batch())
        lb = b.train_step(b.next_batch())
        assert la == lb
    pa, pb = parameters(a.field), parameters(b.field)
    assert all(torch.equal(pa[name], pb[name]) for name in pa)


def test_checkpoint_roundtrip_is_exact():
    for field_config, dtype in ((FIELD, torch.float32), (FIELD_F64, torch.float64)):
        run = trainer(TrainingData([image()], dtype=dtype), field_config=field_config)
        run.train_step(run.next_batch())
        with tempfile.TemporaryDirectory() as tmp:
            path = run.save(Path(tmp) / 'checkpoints' / 'iter_000001.ckpt')
            checkpoint = read_checkpoint(path)
            field, _ = load_field(path)
        assert checkpoint.iteration == 1
        assert checkpoint.config['hash_grid']['levels'] == GRID.levels
        assert field.dtype == dtype
        restored = parameters(field)
        for name, value in parameters(run.field).items():
            assert restored[name].dtype == dtype, name
            assert torch.equal(restored[name], value), name

        moments = run.optimizer.state[run.field.color_mlp[-1].weight]
        stored = checkpoint.tensors['adam/color_mlp.4.weight/exp_avg_sq']
        assert stored.dtype == (np.float64 if dtype == torch.float64 else np.float32)
        assert np.array_equal(stored, moments['exp_avg_sq'].numpy().reshape(stored.shape))


def test_resume_reproduces_uninterrupted_run():
    data = TrainingData([image()])
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        straight = trainer(data, tmp / 'straight', total_iters=4, checkpoint_every=2)
        final = straight.train()
        assert final == tmp / 'straight' / 'checkpoints' / 'final.ckpt'
        midway = tmp / 'straight' / 'checkpoints' / 'iter_000002.ckpt'
        assert midway.exists()

        resumed = trainer(data, tmp / 'resumed', total_iters=4)
        resumed.resume(midway)
        assert resumed.iteration == 2
        resumed.train()

        expected, actual = parameters(straight.field), parameters(resumed.field)
        for name in expected:
            assert torch.equal(expected[name], actual[name]), name

        log = pd.read_csv(tmp / 'straight' / 'loss_log.csv')
        assert list(log.columns) == LOSS_COLUMNS
        assert log['iter'].tolist() == [0, 1, 2, 3]
        assert (log['lambda_level'] == 4).all()


def test_fresh_run_truncates_loss_log():
    data = TrainingData([image()])
    with tempfile.TemporaryDirectory() as tmp:
        for _ in range(2):
            trainer(data, Path(tmp), total_iters=2).train()
        assert len(pd.read_csv(Path(tmp) / 'loss_log.csv')) == 2


def test_corrupt_checkpoint_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'bad.ckpt'
        path.write_bytes(b'not a checkpoint')
        for target in (path, Path(tmp) / 'missing.ckpt'):
            try:
                read_checkpoint(target)
            except DatasetError:
                continue
            raise AssertionError(f"{target.name} should be rejected")


def test_checkpoint_without_optimizer():
    field = create_field(GRID, FIELD, seed=1)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(Path(tmp) / 'field.ckpt', field, None, 0,
                               {'hash_grid': vars(GRID), 'field': vars(FIELD), 'seed': 1})
        checkpoint = read_checkpoint(path)
    assert not any(key.startswith('adam/') for key in checkpoint.tensors)


def main():
    return run_suite("TRAINER", [
        test_schedule_defaults,
        test_schedule_is_monotone,
        test_schedule_without_progressive_training,
        test_invalid_train_config_rejected,
        test_learning_rate_tail,
        test_optimizer_groups,
        test_empty_dataset_rejected,
        test_locate_covers_interior_pixels_once,
        test_build_batch_is_deterministic_with_neighbours,
        test_build_batch_samples_pixels_uniformly,
        test_loss_descends_over_early_iterations,
        test_step_leaves_gated_levels_untouched,
        test_total_matches_weighted_parts,
        test_color_bias_moves_toward_image_color,
        test_same_seed_same_steps,
        test_checkpoint_roundtrip_is_exact,
        test_resume_reproduces_uninterrupted_run,
        test_fresh_run_truncates_loss_log,
        test_corrupt_checkpoint_rejected,
        test_checkpoint_without_optimizer,
    ])


if __name__ == '__main__':
    sys.exit(main())
