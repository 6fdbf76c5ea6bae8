#!/usr/bin/env python3
"""
Tests for configuration loading, validation, environment expansion and overrides.
"""

import os
import sys
import tempfile
from pathlib import Path

from config_loader import ConfigLoader, PipelineConfig, validate_config
from core.errors import ConfigError
from testutil import run_suite


def write_config(tmp: str, text: str) -> Path:
    path = Path(tmp) / 'config.yaml'
    path.write_text(text, encoding='utf-8')
    return path


def expect_config_error(text: str, key_fragment: str):
    with tempfile.TemporaryDirectory() as tmp:
        try:
            validate_config(write_config(tmp, text))
        except ConfigError as e:
            assert key_fragment in str(e), f"'{key_fragment}' not in '{e}'"
            return e
    raise AssertionError(f"config should be rejected:\n{text}")


def test_empty_config_gives_defaults():
    with tempfile.TemporaryDirectory() as tmp:
        config = validate_config(write_config(tmp, ''))
    assert config.hash_grid.levels == 24
    assert config.hash_grid.base_resolution == 16 and config.hash_grid.max_resolution == 2048
    assert 2 ** config.hash_grid.table_log2 == 524288 and config.hash_grid.feature_dim == 2
    assert config.train.samples_per_ray == 128
    assert config.train.batch_rays == 4096 and config.train.total_iters == 100000
    assert (config.loss.depth, config.loss.normal, config.loss.eikonal) == (0.1, 0.1, 0.1)
    assert config.loss.neighbours == 4
    assert config.priors.fit_mode == 'residual'
    assert config.seed == 0 and config.threads is None


def test_repository_config_matches_defaults():
    config = validate_config(Path(__file__).parent / 'config.yaml')
    defaults = PipelineConfig()
    for section in ('hash_grid', 'field', 'train', 'loss', 'priors', 'extraction', 'evaluation'):
        assert getattr(config, section) == getattr(defaults, section), section
    assert config.logging.file == 'logs/satdn.log'


def test_built_components():
    config = PipelineConfig()
    assert config.hash_grid.build().output_dim == 48
    assert config.train_config().lambda_step_iters == 2500
    assert config.renderer.build().n_total == 128
    assert config.loss.build().depth == 0.1
    echo = config.echo()
    assert echo['hash_grid']['levels'] == 24 and echo['seed'] == 0


def test_unknown_keys_rejected():
    error = expect_config_error("foo: 1\n", 'foo')
    assert error.key == 'foo'
    error = expect_config_error("train:\n  batch_size: 10\n", 'batch_size')
    assert error.key == 'train.batch_size'


def test_invalid_values_rejected():
    expect_config_error("train:\n  lambda_step_fraction: 0\n", 'train.lambda_step_fraction')
    expect_config_error("hash_grid:\n  base_resolution: 64\n  max_resolution: 32\n", 'max_resolution')
    expect_config_error("priors:\n  fit_mode: ransac\n", 'priors.fit_mode')
    expect_config_error("loss:\n  neighbours: 8\n", 'loss.neighbours')
    expect_config_error("renderer:\n  n_coarse: 32\n", 'samples_per_ray')
    expect_config_error("- just\n- a list\n", 'mapping')


def test_missing_file_rejected():
    try:
        validate_config('/nonexistent/satdn.yaml')
    except ConfigError as e:
        assert 'not found' in str(e)
        return
    raise AssertionError("missing file should raise")


def test_env_var_expansion():
    os.environ['SATDN_TEST_OUTPUT'] = '/tmp/satdn-out'
    try:
        with tempfile.TemporaryDirectory() as tmp:
            config = validate_config(write_config(tmp, 'paths:\n  output: "${SATDN_TEST_OUTPUT}/run"\n'))
        assert config.paths.output == '/tmp/satdn-out/run'
    finally:
        del os.environ['SATDN_TEST_OUTPUT']

    expect_config_error('paths:\n  output: "${SATDN_TEST_UNSET_VARIABLE}"\n', 'SATDN_TEST_UNSET_VARIABLE')


def test_overrides_and_dotted_get():
    with tempfile.TemporaryDirectory() as tmp:
        loader = ConfigLoader(write_config(tmp, 'seed: 3\nlogging:\n  level: debug\n'))
        config = loader.load({'seed': 7, 'threads': None, 'extraction.fill_nodata': True})
    assert config.seed == 7 and config.threads is None
    assert config.extraction.fill_nodata is True
    assert config.logging.level == 'DEBUG'
    assert loader.get('train.batch_rays') == 4096
    assert loader.get('train.missing', 'fallback') == 'fallback'


def test_get_before_load_raises():
    try:
        ConfigLoader(None).get('seed')
    except RuntimeError:
        return
    raise AssertionError("get() before load() should raise")


def main():
    return run_suite("CONFIG", [
        test_empty_config_gives_defaults,
        test_repository_config_matches_defaults,
        test_built_components,
        test_unknown_keys_rejected,
        test_invalid_values_rejected,
        test_missing_file_rejected,
        test_env_var_expansion,
        test_overrides_and_dotted_get,
        test_get_before_load_raises,
    ])


if __name__ == '__main__':
    sys.exit(main())
