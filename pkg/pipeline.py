"""Pipeline runner: synthetic data, depth fusion, training, extraction and evaluation jobs."""

import logging
import os
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from config_loader import PipelineConfig
from core.errors import DatasetError, DegenerateFitError
from core.evaluation import METRIC_COLUMNS, ReconstructionEvaluator, surface_eikonal_stats
from core.priors import fuse_depth_map
from core.types import Dsm
from extraction.dsm import GridSpec, fill_nodata, rasterize_dsm, write_dsm
from extraction.marching import field_sdf_function, marching_cubes, mesh_to_utm, read_mesh, write_mesh
from storage.dataset import DatasetManifest, load_manifest
from storage.formats import read_asc, write_asc, write_mask, write_pfm
from storage.reports import ReportStore, write_table
from synth.generator import SynthDataset, generate_dataset, load_scene
from training.batching import TrainingData
from training.trainer import Trainer, create_field, load_field


logger = logging.getLogger(__name__)

FUSION_COLUMNS = ['image', 'n_sparse', 'scale', 'offset', 'residual_mean', 'residual_median', 'mean_reproj_error']
ABLATION_COLUMNS = ['variant', 'mae', 'med', 'cd']

# jobs that read paths.dataset without generating it first
MANIFEST_JOBS = ('fuse-depth', 'train', 'extract', 'ablate')

# variant -> (progressive, depth weight on, normal weight on)
ABLATIONS = {
    'hash_grid': (False, False, False),
    'progressive': (True, False, False),
    'progressive_depth': (True, True, False),
    'full': (True, True, True),
}


def configure_torch(seed: int, threads: Optional[int]) -> None:
    """Deterministic single-process torch with a fixed thread count."""
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads or os.cpu_count() or 1)
    torch.manual_seed(seed)


def usable_neighbourhood(usable: np.ndarray) -> np.ndarray:
    """Pixels that are usable together with their 4 neighbours."""
    padded = np.pad(usable, 1, constant_values=False)
    return (usable & padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])


class PipelineRunner:
    """Runs the pipeline jobs against one configuration."""

    def __init__(self, config: PipelineConfig, fused_dir: Optional[Path] = None):
        """
        Initialize the runner.

        Args:
            config: Validated pipeline configuration
            fused_dir: Fused depth directory (default: <output>/fused)
        """
        self.config = config
        self.output_dir = Path(config.paths.output)
        self.fused_dir = Path(fused_dir) if fused_dir is not None else self.output_dir / 'fused'
        self.dataset_path = Path(config.paths.dataset)
        self._manifest: Optional[DatasetManifest] = None
        configure_torch(config.seed, config.threads)

    @property
    def manifest(self) -> DatasetManifest:
        if self._manifest is None:
            self._manifest = load_manifest(self.dataset_path)
        return self._manifest

    @property
    def final_checkpoint(self) -> Path:
        return self.output_dir / 'checkpoints' / 'final.ckpt'

    @property
    def dsm_path(self) -> Path:
        return self.output_dir / 'dsm.asc'

    @property
    def mesh_path(self) -> Path:
        return self.output_dir / f"mesh.{self.config.extraction.mesh_format}"

    def synth(self) -> SynthDataset:
        """Job: generate the synthetic dataset described by synth.scene."""
        start = time.time()
        scene = load_scene(self.config.synth.scene)
        dataset = generate_dataset(scene, self.config.synth.output, seed=self.config.seed,
                                   threads=self.config.threads)
        self.dataset_path = dataset.manifest
        self._manifest = None
        logger.info(f"synth finished in {time.time() - start:.1f}s")
        return dataset

    def fuse_depth(self) -> List[Dict[str, float]]:
        """
        Job: fuse every image's relative depth with its sparse points.

        Writes <id>.pfm (absolute depth), <id>_mask.png, <id>_consistency.pfm and
        <id>.json per image plus fusion_report.csv. Images whose fit fails are
        logged and skipped.
        """
        start = time.time()
        manifest = self.manifest
        rows = []
        for record in manifest.images:
            relative = record.load_relative_depth()
            if relative is None:
                logger.warning(f"{record.image_id}: no relative depth, skipped")
                continue
            try:
                fused, normals = fuse_depth_map(
                    relative, record.load_mask(relative.shape), record.load_sparse(),
                    record.rpc, manifest.bounds, self.config.priors.build(),
                )
            except DegenerateFitError as e:
                logger.warning(f"{record.image_id}: depth fusion failed: {e}")
                continue

            supervised = usable_neighbourhood(fused.mask)
            write_pfm(np.where(fused.mask, fused.absolute, np.nan), self.fused_dir / f"{record.image_id}.pfm")
            write_mask(fused.mask, self.fused_dir / f"{record.image_id}_mask.png")
            write_pfm(np.where(supervised, normals.consistency, np.nan),
                      self.fused_dir / f"{record.image_id}_consistency.pfm")
            row = {
                'image': record.image_id,
                'n_sparse': fused.n_sparse,
                'scale': fused.scale,
                'offset': fused.offset,
                'residual_mean': fused.residual_mean,
                'residual_median': fused.residual_median,
                'mean_reproj_error': fused.mean_reproj_error,
            }
            ReportStore(self.fused_dir / f"{record.image_id}.json").save(row)
            rows.append(row)
            logger.info(
                f"{record.image_id}: s={fused.scale:.6g} o={fused.offset:.6g}, "
                f"{fused.n_sparse} points, median |r| {fused.residual_median:.3g}"
            )

        write_table(self.output_dir / 'fusion_report.csv', rows, FUSION_COLUMNS)
        logger.info(f"fuse-depth: {len(rows)}/{len(manifest.images)} image(s) in {time.time() - start:.1f}s")
        return rows

    def ground_altitude(self) -> float:
        """Canonical altitude of the median sparse point, used to initialize the SDF plane."""
        bounds = self.manifest.bounds
        altitudes = [obs.alt for record in self.manifest.images for obs in record.load_sparse()]
        if not altitudes:
            logger.warning("No sparse points; SDF plane starts at the lower reference plane")
            return -1.0
        return float(bounds.utm_to_canonical(0.0, 0.0, float(np.median(altitudes)))[..., 2])

    def train(self, checkpoint: Optional[Path] = None, dump_rays: Optional[int] = None) -> Optional[Path]:
        """Job: train the field, optionally resuming from a checkpoint."""
        start = time.time()
        config = self.config
        field_config = config.field.build()
        data = TrainingData.from_manifest(self.manifest, self.fused_dir, dtype=field_config.torch_dtype)
        field = create_field(config.hash_grid.build(), field_config, config.seed, self.ground_altitude())
        trainer = Trainer(
            field, data, config.train_config(), config.loss.build(), config.renderer.build(),
            output_dir=self.output_dir, config_echo=config.echo(),
        )
        if checkpoint is not None:
            trainer.resume(checkpoint)
        final = trainer.train(dump_rays_at=dump_rays if dump_rays is not None else config.renderer.dump_rays)
        logger.info(f"train finished in {time.time() - start:.1f}s")
        return final

    def extract(self, checkpoint: Optional[Path] = None, fill: Optional[bool] = None) -> Dict[str, object]:
        """Job: checkpoint -> mesh (UTM) + DSM, with the near-surface eikonal report."""
        start = time.time()
        settings = self.config.extraction
        field, ckpt = load_field(checkpoint or self.final_checkpoint)
        # all levels active, whatever stage the checkpoint was saved at
        lam = field.grid_config.levels
        bounds = self.manifest.bounds

        mesh = marching_cubes(field_sdf_function(field, lam, settings.chunk), settings.resolution, settings.iso)
        mesh_utm = mesh_to_utm(mesh, bounds)
        write_mesh(mesh_utm, self.mesh_path)

        if self.manifest.gt_dsm is not None and self.manifest.gt_dsm.exists():
            grid = GridSpec.from_dsm(read_asc(self.manifest.gt_dsm))
        else:
            grid = GridSpec.from_bounds(bounds, settings.cell_size)
        dsm = rasterize_dsm(mesh_utm, grid)
        if settings.fill_nodata if fill is None else fill:
            dsm = fill_nodata(dsm, settings.fill_radius)
        write_dsm(dsm, self.dsm_path)

        def gradients(points: np.ndarray) -> np.ndarray:
            out = []
            with torch.no_grad():
                for i in range(0, len(points), settings.chunk):
                    x = torch.as_tensor(points[i:i + settings.chunk], dtype=field.dtype)
                    out.append(field.spatial_gradient(x, lam).cpu().numpy().astype(np.float64))
            return np.concatenate(out)

        eikonal = surface_eikonal_stats(gradients, mesh, settings.eikonal_samples, settings.eikonal_band,
                                        seed=self.config.seed)
        report = {
            'checkpoint': str(checkpoint or self.final_checkpoint),
            'iteration': ckpt.iteration,
            'lambda_level': lam,
            'vertices': int(len(mesh.vertices)),
            'triangles': int(len(mesh.triangles)),
            'dsm_valid_fraction': float(dsm.valid.mean()),
            'eikonal_mean': eikonal['mean'],
            'eikonal_max': eikonal['max'],
            'eikonal_count': eikonal['count'],
        }
        ReportStore(self.output_dir / 'extraction.json').save(report)
        logger.info(
            f"extract: {report['triangles']} triangles, DSM valid {report['dsm_valid_fraction']:.3f}, "
            f"eikonal mean {eikonal['mean']:.4f} in {time.time() - start:.1f}s"
        )
        return report

    def evaluate(self, pred: Optional[Path] = None, truth: Optional[Path] = None,
                 pred_mesh: Optional[Path] = None, truth_mesh: Optional[Path] = None) -> Dict[str, float]:
        """Job: compare two DSMs (and meshes) and write metrics.csv plus the error grid."""
        pred = Path(pred) if pred is not None else self.dsm_path
        if truth is None:
            truth = self.manifest.gt_dsm
            if truth is None:
                raise DatasetError("No reference DSM: pass one or add gt_dsm to the manifest")
        for path in filter(None, (pred, truth, pred_mesh, truth_mesh)):
            if not Path(path).exists():
                raise FileNotFoundError(f"Input not found: {path}")

        extraction = ReportStore(self.output_dir / 'extraction.json').load() if pred == self.dsm_path else None
        if extraction is not None:
            logger.info(f"Evaluating DSM extracted from {extraction['data']['checkpoint']} "
                        f"(iteration {extraction['data']['iteration']})")

        pred_dsm, truth_dsm = read_asc(pred), read_asc(truth)
        evaluator = ReconstructionEvaluator(self.config.evaluation.align, self.config.evaluation.mesh_samples,
                                            self.config.seed)
        result = evaluator.evaluate(
            Path(truth).parent.name or 'scene', pred_dsm, truth_dsm,
            read_mesh(pred_mesh) if pred_mesh else None,
            read_mesh(truth_mesh) if truth_mesh else None,
        )
        row = dict(result['row'])
        row['mesh_cd'] = result['mesh_cd']
        write_table(self.output_dir / 'metrics.csv', [row], METRIC_COLUMNS + ['mesh_cd'])

        errors = result['report'].error_grid
        write_asc(
            Dsm(heights=np.where(np.isfinite(errors), errors, truth_dsm.nodata), x_origin=truth_dsm.x_origin,
                y_origin=truth_dsm.y_origin, cell_size=truth_dsm.cell_size, nodata=truth_dsm.nodata),
            self.output_dir / 'dsm_error.asc',
        )
        return row

    def run_all(self, dump_rays: Optional[int] = None) -> Dict[str, float]:
        """synth -> fuse-depth -> train -> extract -> evaluate."""
        logger.info("=" * 60)
        logger.info("PIPELINE")
        logger.info("=" * 60)
        self.synth()
        self.fuse_depth()
        self.train(dump_rays=dump_rays)
        self.extract()
        return self.evaluate()

    def ablate(self) -> List[Dict[str, float]]:
        """
        Train and evaluate the four ablation variants on the current dataset
        (fused once, shared) and write ablation.csv.
        """
        if not any(self.fused_dir.glob('*.pfm')):
            self.fuse_depth()

        rows = []
        for variant, (progressive, use_depth, use_normal) in ABLATIONS.items():
            logger.info(f"Ablation variant '{variant}'")
            config = self.config.model_copy(update={
                'paths': self.config.paths.model_copy(update={
                    'output': str(self.output_dir / 'ablation' / variant),
                    'dataset': str(self.dataset_path),
                }),
                'train': self.config.train.model_copy(update={'progressive': progressive}),
                'loss': self.config.loss.model_copy(update={
                    'depth': self.config.loss.depth if use_depth else 0.0,
                    'normal': self.config.loss.normal if use_normal else 0.0,
                }),
            })
            runner = PipelineRunner(config, fused_dir=self.fused_dir)
            runner.train()
            runner.extract()
            metrics = runner.evaluate()
            rows.append({'variant': variant, 'mae': metrics['mae'], 'med': metrics['med'], 'cd': metrics['cd']})

        write_table(self.output_dir / 'ablation.csv', rows, ABLATION_COLUMNS)
        return rows


def run_job(runner: PipelineRunner, command: str, **options: Union[None, int, bool, Path]) -> object:
    """Dispatch one subcommand to its job."""
    jobs = {
        'synth': lambda: runner.synth(),
        'fuse-depth': lambda: runner.fuse_depth(),
        'train': lambda: runner.train(options.get('checkpoint'), options.get('dump_rays')),
        'extract': lambda: runner.extract(options.get('checkpoint'), options.get('fill_nodata')),
        'evaluate': lambda: runner.evaluate(options.get('pred'), options.get('truth'),
                                            options.get('pred_mesh'), options.get('truth_mesh')),
        'pipeline': lambda: runner.run_all(options.get('dump_rays')),
        'ablate': lambda: runner.ablate(),
    }
    if command not in jobs:
        raise ValueError(f"Unknown command '{command}'")
    reads_manifest = command in MANIFEST_JOBS or (command == 'evaluate' and options.get('truth') is None)
    if reads_manifest and not runner.dataset_path.exists():
        raise DatasetError(f"Dataset manifest not found: {runner.dataset_path} (paths.dataset)")
    return jobs[command]()
