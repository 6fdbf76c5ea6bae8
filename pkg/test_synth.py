#!/usr/bin/env python3
"""
Tests for analytic scenes, RPC fitting and synthetic dataset generation.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from core.errors import DatasetError
from core.priors import PriorsConfig, fuse_depth_map
from core.rpc_camera import project
from storage.dataset import load_manifest
from storage.formats import read_asc
from storage.reports import ReportStore
from synth.factory import PrimitiveFactory
from synth.generator import (
    NoiseConfig,
    ViewConfig,
    analytic_sdf,
    fit_rpc,
    generate_dataset,
    ground_truth_dsm,
    load_scene,
)
from synth.primitives import BasePrimitive, Box
from testutil import run_suite, scene_rpc


TINY = Path(__file__).parent / 'scenes' / 'tiny.yaml'


def small_scene():
    scene = load_scene(TINY)
    scene.views = ViewConfig(count=2, height=24, width=24)
    scene.noise = NoiseConfig(pixel_sigma=0.0, sparse_points=60)
    return scene


def local_to_utm(scene, east: float, north: float, alt: float) -> np.ndarray:
    e0, n0 = scene.origin_utm
    return np.array([[e0 + east, n0 + north, alt]])


def test_load_tiny_scene():
    scene = load_scene(TINY)
    assert scene.name == 'tiny' and scene.utm_zone == '17N'
    assert [p.name for p in scene.primitives] == ['ground', 'low_block', 'tower']
    assert scene.views.count == 8 and scene.noise.sparse_points == 200
    e0, e1, n0, n1 = scene.bounds.utm_box
    assert abs((e1 - e0) - 64.0) < 1.0 and abs((n1 - n0) - 64.0) < 1.0


def test_analytic_sdf_values():
    scene = load_scene(TINY)
    above_ground = analytic_sdf(scene, local_to_utm(scene, 0.0, -25.0, 5.0))
    assert abs(float(above_ground[0]) - 5.0) < 1e-9
    inside_block = analytic_sdf(scene, local_to_utm(scene, -12.0, -8.0, 5.0))
    assert abs(float(inside_block[0]) + 5.0) < 1e-9
    on_roof = analytic_sdf(scene, local_to_utm(scene, 12.0, 10.0, 20.0))
    assert abs(float(on_roof[0])) < 1e-9


def test_box_distance_outside_corner():
    box = Box({'type': 'box', 'center': [0.0, 0.0], 'size': [2.0, 2.0], 'height': 2.0})
    assert abs(float(box.sdf(np.array([[4.0, 5.0, 1.0]]))[0]) - 5.0) < 1e-12
    assert box.top == 2.0


def test_ground_truth_dsm_heights():
    scene = load_scene(TINY)
    dsm = ground_truth_dsm(scene)
    east, north = dsm.cell_centers()
    e0, n0 = scene.origin_utm
    for (x, y), expected in (((12.0, 10.0), 20.0), ((-12.0, -8.0), 10.0), ((0.0, -25.0), 0.0)):
        idx = np.unravel_index(np.argmin((east - e0 - x) ** 2 + (north - n0 - y) ** 2), dsm.shape)
        assert dsm.heights[idx] == expected, (x, y)
    assert dsm.valid.all()


def test_fit_rpc_recovers_affine_camera():
    truth = scene_rpc(tilt=0.1)
    model, residual = fit_rpc(lambda lon, lat, alt: project(truth, lon, lat, alt),
                              (30.2995, 30.3005), (-81.7006, -81.6994), (-5.0, 30.0))
    assert residual < 1e-6
    rng = np.random.default_rng(0)
    lon = rng.uniform(-81.7006, -81.6994, 50)
    lat = rng.uniform(30.2995, 30.3005, 50)
    alt = rng.uniform(-5.0, 30.0, 50)
    line_t, samp_t = project(truth, lon, lat, alt)
    line_p, samp_p = project(model, lon, lat, alt)
    assert np.max(np.abs(line_p - line_t)) < 1e-6 and np.max(np.abs(samp_p - samp_t)) < 1e-6


def test_load_scene_errors():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        broken = tmp / 'broken.yaml'
        broken.write_text("scene: broken\ncenter: {lat: 30.3, lon: -81.7}\nhalf_extent: 10\n")
        unknown = tmp / 'unknown.yaml'
        unknown.write_text(TINY.read_text().replace('type: box', 'type: cone', 1))
        for path in (tmp / 'missing.yaml', broken, unknown):
            try:
                load_scene(path)
            except DatasetError:
                continue
            raise AssertionError(f"{path.name} should be rejected")


def test_view_config_validation():
    for kwargs in ({'count': 1}, {'height': 2}, {'off_nadir': (10.0, 30.0)}):
        try:
            ViewConfig(**kwargs)
        except ValueError:
            continue
        raise AssertionError(f"{kwargs} should be rejected")


def test_primitive_factory():
    assert set(PrimitiveFactory.get_registered_types()) >= {'plane', 'box', 'sphere'}
    try:
        PrimitiveFactory.create({'name': 'nameless'})
    except KeyError:
        pass
    else:
        raise AssertionError("missing type should raise")
    try:
        PrimitiveFactory.register('bogus', dict)
    except TypeError:
        pass
    else:
        raise AssertionError("non-primitive class should be rejected")

    class Slab(BasePrimitive):
        def sdf(self, points):
            return np.abs(points[..., 2]) - 1.0

        def max_height(self, east, north):
            return np.ones(np.shape(east))

    PrimitiveFactory.register('slab', Slab)
    assert isinstance(PrimitiveFactory.create({'type': 'slab'}), Slab)


def test_generated_dataset_is_self_consistent():
    scene = small_scene()
    with tempfile.TemporaryDirectory() as tmp:
        dataset = generate_dataset(scene, Path(tmp), seed=0, threads=1)
        manifest = load_manifest(dataset.manifest)
        assert [r.image_id for r in manifest.images] == ['view_00', 'view_01']
        assert manifest.gt_dsm == dataset.gt_dsm.resolve()

        gt = read_asc(dataset.gt_dsm)
        expected = ground_truth_dsm(scene)
        assert gt.same_grid(expected)
        assert np.allclose(gt.heights, expected.heights, atol=1e-6)

        truth = ReportStore(Path(tmp) / 'truth.json').load()
        assert truth['metadata'] == {'scene': 'tiny', 'seed': 0}

        for record in manifest.images:
            relative = record.load_relative_depth()
            mask = record.load_mask(relative.shape)
            sparse = record.load_sparse()
            assert relative.shape == (24, 24) and len(sparse) == 60
            assert record.load_image().shape == (24, 24, 3)

            fused, _ = fuse_depth_map(relative, mask, sparse, record.rpc, manifest.bounds, PriorsConfig())
            expected = truth['data'][record.image_id]
            assert expected['rpc_residual_px'] <= 0.05
            assert abs(fused.scale - expected['scale']) <= 1e-3 * expected['scale']
            assert abs(fused.offset - expected['offset']) <= 1e-3 * max(expected['offset'], 1.0)


def test_generation_is_deterministic():
    scene = small_scene()
    with tempfile.TemporaryDirectory() as tmp:
        first = generate_dataset(scene, Path(tmp) / 'a', seed=4, threads=1)
        second = generate_dataset(scene, Path(tmp) / 'b', seed=4, threads=2)
        assert first.truth == second.truth
        for name in ('images/view_00.png', 'sparse/view_01.csv', 'rpc/view_01.rpc'):
            assert (Path(tmp) / 'a' / name).read_bytes() == (Path(tmp) / 'b' / name).read_bytes(), name


def main():
    return run_suite("SYNTH", [
        test_load_tiny_scene,
        test_analytic_sdf_values,
        test_box_distance_outside_corner,
        test_ground_truth_dsm_heights,
        test_fit_rpc_recovers_affine_camera,
        test_load_scene_errors,
        test_view_config_validation,
        test_primitive_factory,
        test_generated_dataset_is_self_consistent,
        test_generation_is_deterministic,
    ])


if __name__ == '__main__':
    sys.exit(main())
