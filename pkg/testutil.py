"""Script runner and small fixtures shared by the root-level test files."""

import logging
import traceback
from typing import Callable, List

import numpy as np
import torch

from core.rpc_camera import SceneBounds
from core.types import RpcModel
from field.hash_encoding import HashGridConfig
from field.neural_field import FieldConfig, SdfField


def run_suite(title: str, tests: List[Callable[[], None]]) -> int:
    """
    Run test functions in order and print a summary.

    Returns:
        int: 0 if every test passed, 1 otherwise
    """
    logging.basicConfig(
        level=logging.WARNING,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    print("\n" + "=" * 60)
    print(f"{title} TEST SUITE")
    print("=" * 60 + "\n")

    results = []
    for test in tests:
        try:
            test()
            results.append((test.__name__, True))
            print(f"✓ {test.__name__}")
        except Exception as e:
            results.append((test.__name__, False))
            print(f"✗ {test.__name__}: {e}")
            traceback.print_exc()

    print("\n" + "=" * 60)
    print("TEST SUMMARY")
    print("=" * 60)
    for name, passed in results:
        print(f"  {name:<50} {'✓ PASSED' if passed else '✗ FAILED'}")
    print("=" * 60)

    if all(passed for _, passed in results):
        print("\n✓ ALL TESTS PASSED\n")
        return 0
    print("\n✗ SOME TESTS FAILED\n")
    return 1


def unit(index: int, value: float = 1.0) -> np.ndarray:
    """20 RPC coefficients with a single non-zero term."""
    coeffs = np.zeros(20)
    coeffs[index] = value
    return coeffs


def identity_rpc() -> RpcModel:
    """line <- lat, samp <- lon, unit scales, zero offsets."""
    return RpcModel(
        line_num=unit(2), line_den=unit(0), samp_num=unit(1), samp_den=unit(0),
        lat_off=0.0, lat_scale=1.0, lon_off=0.0, lon_scale=1.0, alt_off=0.0, alt_scale=1.0,
        line_off=0.0, line_scale=1.0, samp_off=0.0, samp_scale=1.0,
    )


def scene_rpc(tilt: float = 0.0) -> RpcModel:
    """Affine 96 x 96 camera over scene_bounds(); tilt couples altitude into both pixel axes."""
    line_num = unit(2, -1.0)
    line_num[3] = tilt
    samp_num = unit(1, 1.0)
    samp_num[3] = 0.5 * tilt
    return RpcModel(
        line_num=line_num, line_den=unit(0), samp_num=samp_num, samp_den=unit(0),
        lat_off=30.30, lat_scale=0.0005, lon_off=-81.70, lon_scale=0.0006,
        alt_off=12.5, alt_scale=17.5,
        line_off=47.5, line_scale=48.0, samp_off=47.5, samp_scale=48.0,
    )


def scene_bounds() -> SceneBounds:
    return SceneBounds(30.2997, 30.3003, -81.7004, -81.6996, -5.0, 30.0, '17N')


def toy_field(seed: int = 0, perturb: float = 0.1) -> SdfField:
    """
    Two-level float64 field with every output layer randomized, so all
    parameter groups carry gradient.
    """
    grid = HashGridConfig(levels=2, base_resolution=4, max_resolution=8, table_log2=8, feature_dim=2)
    config = FieldConfig(hidden_width=16, feature_dim=8, point_bands=2, direction_bands=1,
                         softplus_beta=10.0, dtype='float64')
    field = SdfField(grid, config, seed=seed)
    generator = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        field.encoder.table.uniform_(-perturb, perturb, generator=generator)
        for layer in (field.sdf_mlp[-1], field.color_mlp[-1]):
            layer.weight.copy_(perturb * torch.randn(layer.weight.shape, generator=generator, dtype=torch.float64))
            layer.bias.copy_(perturb * torch.randn(layer.bias.shape, generator=generator, dtype=torch.float64))
    return field
