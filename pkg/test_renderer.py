#!/usr/bin/env python3
"""
Tests for ray sampling, SDF-to-alpha conversion and compositing.
"""

import math
import sys
import tempfile
from pathlib import Path
from typing import Optional

import pandas as pd
import torch

from field.hash_encoding import HashGridConfig
from field.neural_field import FieldConfig, SdfField
from field.renderer import (
    SamplingConfig,
    alpha_from_sdf,
    composite,
    dump_rays,
    render_rays,
    sample_ray,
    stratified_samples,
)
from testutil import run_suite


GRID = HashGridConfig(levels=4, base_resolution=4, max_resolution=16, table_log2=10, feature_dim=2)


def plane_field(altitude: float, bandwidth: Optional[float] = None) -> SdfField:
    field = SdfField(GRID, FieldConfig(dtype='float64'), seed=0)
    field.set_plane(altitude)
    if bandwidth is not None:
        with torch.no_grad():
            field.log_bandwidth.fill_(math.log(bandwidth))
    return field


def vertical_rays(count: int = 4):
    xy = torch.linspace(-0.5, 0.5, count, dtype=torch.float64)
    origins = torch.stack([xy, -xy, torch.ones_like(xy)], dim=-1)
    directions = torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64).expand(count, 3).clone()
    t_far = torch.full((count,), 2.0, dtype=torch.float64)
    sun = torch.tensor([0.0, 0.6, 0.8], dtype=torch.float64).expand(count, 3).clone()
    return origins, directions, t_far, sun


def test_alpha_worked_example():
    alpha = alpha_from_sdf(torch.tensor(1.0, dtype=torch.float64), torch.tensor(-1.0, dtype=torch.float64),
                           torch.tensor(1.0, dtype=torch.float64))
    assert abs(float(alpha) - 0.632121) < 1e-6


def test_alpha_zero_without_decrease():
    s = torch.tensor(5.0)
    assert float(alpha_from_sdf(torch.tensor(0.3), torch.tensor(0.3), s)) == 0.0
    assert float(alpha_from_sdf(torch.tensor(-0.2), torch.tensor(0.4), s)) == 0.0


def test_alpha_finite_deep_inside():
    alpha = alpha_from_sdf(torch.tensor([-100.0]), torch.tensor([-101.0]), torch.tensor(100.0))
    assert torch.isfinite(alpha).all()
    assert 0.0 <= float(alpha) <= 1.0


def test_composite_two_samples():
    alpha = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    colors = torch.tensor([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]], dtype=torch.float64)
    t = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
    weights, color, depth, opacity = composite(alpha, colors, t)
    assert torch.allclose(weights, torch.tensor([[0.5, 0.25]], dtype=torch.float64))
    assert torch.allclose(color, torch.tensor([[0.5, 0.25, 0.0]], dtype=torch.float64))
    assert abs(float(depth) - 1.0) < 1e-12
    assert abs(float(opacity) - 0.75) < 1e-12


def test_composite_opaque_first_hit_and_empty_ray():
    colors = torch.rand(1, 3, 3, generator=torch.Generator().manual_seed(0))
    t = torch.tensor([[0.5, 1.0, 1.5]])
    _, color, depth, _ = composite(torch.tensor([[1.0, 0.3, 0.7]]), colors, t)
    assert torch.allclose(color, colors[:, 0]) and abs(float(depth) - 0.5) < 1e-7

    _, color, depth, opacity = composite(torch.zeros(1, 3), colors, t)
    assert torch.all(color == 0) and float(depth) == 0.0 and float(opacity) == 0.0


def test_occlusion_behind_opaque_sample():
    g = torch.Generator().manual_seed(1)
    alpha = torch.tensor([[0.2, 1.0, 0.4, 0.9]], dtype=torch.float64)
    colors = torch.rand(1, 4, 3, generator=g, dtype=torch.float64)
    t = torch.tensor([[0.1, 0.2, 0.3, 0.4]], dtype=torch.float64)
    _, color, _, _ = composite(alpha, colors, t)
    swapped = colors.clone()
    swapped[:, [2, 3]] = colors[:, [3, 2]]
    _, color_swapped, _, _ = composite(alpha, swapped, t)
    assert torch.equal(color, color_swapped)


def test_weights_sum_to_one_minus_transmittance():
    alpha = torch.rand(5, 32, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    weights, _, _, opacity = composite(alpha, torch.zeros(5, 32, 3, dtype=torch.float64), torch.zeros(5, 32, dtype=torch.float64))
    assert torch.all(weights >= 0)
    assert torch.allclose(opacity, 1.0 - torch.prod(1.0 - alpha, dim=-1), atol=1e-9)


def test_weight_peak_at_zero_crossing():
    t = torch.linspace(0.0, 2.0, 65, dtype=torch.float64)[None]
    spacing = float(t[0, 1] - t[0, 0])
    t_star = 0.73
    sdf = t_star - t
    for s in (1.0, 10.0, 100.0):
        alpha = alpha_from_sdf(sdf[:, :-1], sdf[:, 1:], torch.tensor(s, dtype=torch.float64))
        alpha = torch.cat([alpha, torch.zeros_like(alpha[:, :1])], dim=-1)
        weights, _, _, _ = composite(alpha, torch.zeros(1, 65, 3, dtype=torch.float64), t)
        peak = float(t[0, int(torch.argmax(weights[0]))])
        assert abs(peak - t_star) <= spacing, f"s={s}: peak at {peak}"


def test_stratified_centers_and_jitter():
    t_near = torch.zeros(3, dtype=torch.float64)
    t_far = torch.ones(3, dtype=torch.float64)
    centers = stratified_samples(t_near, t_far, 4)
    assert torch.allclose(centers[0], torch.tensor([0.125, 0.375, 0.625, 0.875], dtype=torch.float64))

    jittered = stratified_samples(t_near, t_far, 8, torch.Generator().manual_seed(3))
    strata = torch.arange(8, dtype=torch.float64) / 8
    assert torch.all(jittered >= strata) and torch.all(jittered < strata + 1.0 / 8)


def test_importance_samples_concentrate_at_surface():
    field = plane_field(-0.2)
    origins, directions, t_far, _ = vertical_rays()
    config = SamplingConfig(perturb=False)
    t = sample_ray(field, origins, directions, torch.zeros_like(t_far), t_far, GRID.levels, config)
    assert t.shape == (4, config.n_total)
    assert torch.all(t[:, 1:] >= t[:, :-1])
    t_star = 1.2
    near = (t - t_star).abs() <= 0.05 * 2.0
    assert torch.all(near.sum(dim=-1) >= config.n_total // 2)


def test_importance_samples_bounded_without_surface():
    field = plane_field(-2.0)
    origins, directions, t_far, _ = vertical_rays()
    t = sample_ray(field, origins, directions, torch.zeros_like(t_far), t_far, GRID.levels,
                   SamplingConfig(), torch.Generator().manual_seed(4))
    assert torch.all(t >= 0) and torch.all(t <= 2.0)
    assert torch.all(t[:, 1:] >= t[:, :-1])


def test_render_plane_depth_and_normal():
    field = plane_field(0.25, bandwidth=200.0)
    origins, directions, t_far, sun = vertical_rays()
    result = render_rays(field, origins, directions, t_far, sun, GRID.levels,
                         SamplingConfig(perturb=False), compute_normal=True)
    assert torch.all((result.depth - 0.75).abs() < 0.02)
    assert torch.all(result.opacity > 0.95) and torch.all(result.opacity <= 1.0 + 1e-6)
    assert torch.all(result.weights >= 0)
    assert torch.allclose(result.color, torch.full_like(result.color, 0.5), atol=0.05)
    assert torch.allclose(result.normal, torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).expand(4, 3), atol=1e-9)


def test_render_is_deterministic_for_a_seed():
    field = plane_field(0.0, bandwidth=50.0)
    origins, directions, t_far, sun = vertical_rays()
    first = render_rays(field, origins, directions, t_far, sun, 2, SamplingConfig(), torch.Generator().manual_seed(9))
    second = render_rays(field, origins, directions, t_far, sun, 2, SamplingConfig(), torch.Generator().manual_seed(9))
    assert torch.equal(first.t, second.t)
    assert torch.equal(first.depth, second.depth)


def test_dump_rays_writes_samples():
    field = plane_field(0.0)
    origins, directions, t_far, sun = vertical_rays(3)
    config = SamplingConfig(n_coarse=8, n_importance=8, up_sample_steps=2, perturb=False)
    result = render_rays(field, origins, directions, t_far, sun, 2, config)
    with tempfile.TemporaryDirectory() as tmp:
        path = dump_rays(result, Path(tmp) / 'debug' / 'rays.csv', max_rays=2)
        frame = pd.read_csv(path)
    assert list(frame.columns) == ['ray', 'sample', 't', 'sdf', 'alpha', 'weight']
    assert len(frame) == 2 * config.n_total


def test_invalid_sampling_config_rejected():
    for kwargs in ({'n_coarse': 1}, {'n_importance': 10, 'up_sample_steps': 4}, {'n_importance': 8, 'up_sample_steps': 0}):
        try:
            SamplingConfig(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"{kwargs} should be rejected")


def main():
    return run_suite("RENDERER", [
        test_alpha_worked_example,
        test_alpha_zero_without_decrease,
        test_alpha_finite_deep_inside,
        test_composite_two_samples,
        test_composite_opaque_first_hit_and_empty_ray,
        test_occlusion_behind_opaque_sample,
        test_weights_sum_to_one_minus_transmittance,
        test_weight_peak_at_zero_crossing,
        test_stratified_centers_and_jitter,
        test_importance_samples_concentrate_at_surface,
        test_importance_samples_bounded_without_surface,
        test_render_plane_depth_and_normal,
        test_render_is_deterministic_for_a_seed,
        test_dump_rays_writes_samples,
        test_invalid_sampling_config_rejected,
    ])


if __name__ == '__main__':
    sys.exit(main())
