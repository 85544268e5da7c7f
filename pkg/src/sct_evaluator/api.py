"""
sct-evaluator - Composable API

This module is the main API surface of the package. The building blocks
(readers, preprocessing, metric kernels) can be used on their own or chained
into custom pipelines; ModelEvaluator runs the whole evaluation from a config.

Usage Examples:
    # Composable approach
    from sct_evaluator.api import read_nifti, preprocess_ct, pixel_metrics, simos

    gt = preprocess_ct(read_nifti("patients/P001/ct.nii.gz", ValueKind.HU))
    pred = read_nifti("predictions/unet/P001.nii", ValueKind.NORMALIZED)
    print(pixel_metrics(pred, gt), simos(gt, pred))

    # Config-driven approach
    from sct_evaluator.api import ModelEvaluator, load_run_config, render_report

    evaluator = ModelEvaluator(load_run_config("run.env"))
    print(render_report(evaluator.evaluate(), "markdown"))
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

from .analysis.frechet import (
    EmbeddingSet,
    GaussianStats,
    embed_slices,
    fid,
    fit_gaussian,
    frechet_distance,
    get_embedder,
    read_embeddings,
    write_embeddings,
)
from .analysis.metrics import PixelMetrics, SsimParams, iou, pixel_metrics, simos, ssim
from .analysis.preprocess import (
    MultiChannelSlice,
    NormalizationParams,
    build_multichannel,
    denormalize_ct,
    intensity_histogram,
    preprocess_ct,
    preprocess_mri,
)
from .analysis.segmentation import (
    LabelMaskVolume,
    mean_label_iou,
    read_label_mask,
    select_eval_subset,
    slice_label_iou,
)
from .config import RunConfig, get_log_level, load_run_config
from .data.dataset import (
    PatientRecord,
    SlicePair,
    SplitAssignment,
    build_manifest,
    pair_slices,
    scan_dataset,
    stratified_split,
)
from .data.nifti import read_nifti, read_slice_stack, write_nifti, write_slice_stack
from .data.volume import Slice, ValueKind, Volume, VolumeGeometry, extract_transverse_slices, stack_slices
from .errors import SctEvaluatorError
from .evaluator import ModelEvaluator
from .report import MetricReport, load_report, render_report, save_report

logging.basicConfig(level=get_log_level(), format='%(levelname)s: %(message)s')

__all__ = [
    # === VOLUMES & FILES ===
    'read_nifti',
    'write_nifti',
    'extract_transverse_slices',
    'stack_slices',
    'read_slice_stack',
    'write_slice_stack',
    'Volume',
    'Slice',
    'VolumeGeometry',
    'ValueKind',

    # === PREPROCESSING ===
    'preprocess_ct',
    'denormalize_ct',
    'preprocess_mri',
    'build_multichannel',
    'intensity_histogram',
    'NormalizationParams',
    'MultiChannelSlice',

    # === DATASET ===
    'build_manifest',
    'scan_dataset',
    'stratified_split',
    'pair_slices',
    'PatientRecord',
    'SlicePair',
    'SplitAssignment',

    # === METRICS ===
    'pixel_metrics',
    'ssim',
    'simos',
    'iou',
    'embed_slices',
    'fit_gaussian',
    'frechet_distance',
    'fid',
    'get_embedder',
    'read_embeddings',
    'write_embeddings',
    'PixelMetrics',
    'SsimParams',
    'EmbeddingSet',
    'GaussianStats',

    # === SEGMENTATION ===
    'read_label_mask',
    'select_eval_subset',
    'mean_label_iou',
    'slice_label_iou',
    'LabelMaskVolume',

    # === ORCHESTRATION & REPORTS ===
    'ModelEvaluator',
    'RunConfig',
    'load_run_config',
    'MetricReport',
    'render_report',
    'save_report',
    'load_report',

    # === CONVENIENCE FUNCTIONS ===
    'evaluate_volume_pair',
    'evaluate_models',
    'check_dataset',
    'get_api_help',
]


def _as_volume(volume: Union[Volume, str, Path], value_kind: ValueKind) -> Volume:
    if isinstance(volume, Volume):
        return volume
    return read_nifti(volume, value_kind)


def evaluate_volume_pair(gt: Union[Volume, str, Path], syn: Union[Volume, str, Path],
                         peak: float = 1.0, ssim_params: Optional[SsimParams] = None) -> Dict:
    """
    Convenience function running the slice and volume metrics on a single pair.

    Both volumes must already be on the same scale (e.g. normalized CT). SSIM,
    PSNR, MAE and MSE are computed per slice and averaged; SIMOS over the volume.

    Args:
        gt: ground-truth volume or path to it
        syn: synthetic volume or path to it
        peak: PSNR peak and SSIM dynamic range (1.0 for normalized data)
        ssim_params: SSIM window and constants; defaults to 11x11, sigma 1.5

    Returns:
        dict with keys ssim, psnr, mae, mse, simos and n_slices
    """
    gt = _as_volume(gt, ValueKind.RAW)
    syn = _as_volume(syn, ValueKind.RAW)
    ssim_params = ssim_params or SsimParams(dynamic_range=peak)

    logging.info(f"Step 1/2: Per-slice metrics over {gt.dims[2]} slices...")
    totals = {'ssim': 0.0, 'psnr': 0.0, 'mae': 0.0, 'mse': 0.0}
    pairs = list(zip(extract_transverse_slices(syn), extract_transverse_slices(gt)))
    for p, t in pairs:
        pm = pixel_metrics(p, t, peak)
        totals['mae'] += pm.mae
        totals['mse'] += pm.mse
        totals['psnr'] += pm.psnr
        totals['ssim'] += ssim(p, t, ssim_params)
    result = {key: value / len(pairs) for key, value in totals.items()}

    logging.info("Step 2/2: Slice continuity (SIMOS)...")
    result['simos'] = simos(gt, syn) if gt.dims[2] >= 2 else None
    result['n_slices'] = len(pairs)
    logging.info("✓ Volume pair evaluated")
    return result


def evaluate_models(config_path: Union[str, Path], models: Optional[Sequence[str]] = None,
                    **overrides) -> Optional[MetricReport]:
    """
    Convenience function: load a run config, evaluate models and return the report.

    Returns None (after logging the error) when the run cannot be completed.
    """
    try:
        config = load_run_config(config_path, **overrides)
        return ModelEvaluator(config).evaluate(models)
    except SctEvaluatorError as e:
        logging.error(f"evaluate_models: {e}")
        return None


def check_dataset(root: Union[str, Path]) -> Dict:
    """
    Check what a dataset root holds without evaluating anything.

    Returns:
        dict: patient counts per stratum, exclusions and whether masks exist
    """
    result = {
        'root': str(root),
        'patients': 0,
        'strata': {},
        'with_mask': 0,
        'excluded': {},
        'errors': [],
    }
    try:
        scan = scan_dataset(root)
        result['patients'] = len(scan.records)
        result['excluded'] = dict(scan.exclusions)
        for record in scan.records:
            key = f"{record.region.value}/{record.hospital}"
            result['strata'][key] = result['strata'].get(key, 0) + 1
            if record.mask_path is not None:
                result['with_mask'] += 1
    except (SctEvaluatorError, OSError) as e:
        result['errors'].append(str(e))
    result['evaluation_feasible'] = result['patients'] > 0 and not result['errors']
    return result


def get_api_help() -> str:
    """
    Get help text explaining the API structure and usage patterns.

    Returns:
        str: Formatted help text
    """
    help_text = """
sct-evaluator API Help
======================

VOLUMES & FILES:
- read_nifti(path, value_kind) / write_nifti(volume, path)
- extract_transverse_slices(volume) / stack_slices(slices, geometry)

PREPROCESSING:
- preprocess_ct(volume, params)   # HU -> [0, 1], cap 2000, floor -1000
- denormalize_ct(volume, params)  # [0, 1] -> HU
- preprocess_mri(volume, params)  # 98th-percentile cap, min-max
- build_multichannel(mri_slices, ct_slices, k=3)

DATASET:
- build_manifest(root)
- stratified_split(manifest, ratios=(0.7, 0.15, 0.15), seed=0)
- pair_slices(record)

METRICS:
- pixel_metrics(pred, target, peak)  # MAE, MSE, PSNR
- ssim(pred, target, params)
- simos(gt, syn)                     # slice continuity
- fid(reference, synthetic)          # from EmbeddingSets
- mean_label_iou(gt_mask, syn_mask)

CONVENIENCE FUNCTIONS:
- evaluate_volume_pair(gt, syn)      # one pair, all slice/volume metrics
- evaluate_models(config_path)       # full run, returns a MetricReport
- check_dataset(root)                # what a dataset root holds

USAGE PATTERNS:

1. One pair:
   result = evaluate_volume_pair("gt.nii", "pred.nii")

2. Full run:
   report = evaluate_models("run.env", seed=7)
   print(render_report(report, "markdown"))

For file formats and config keys, see the README.md file.
"""
    return help_text.strip()
