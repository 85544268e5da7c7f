import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from .analysis.preprocess import NormalizationParams, build_multichannel, intensity_histogram, preprocess_ct, preprocess_mri
from .analysis.segmentation import mean_label_iou, read_label_mask, slice_label_iou
from .config import get_log_level, load_run_config, set_log_level
from .data.dataset import read_manifest, scan_dataset, stratified_split, write_manifest, write_split
from .data.nifti import read_nifti, read_slice_stack, write_nifti, write_slice_stack
from .data.volume import ValueKind, Volume, VolumeGeometry, extract_transverse_slices, stack_slices
from .display import display_report
from .errors import ConfigError, SctEvaluatorError, UsageError
from .evaluator import ModelEvaluator
from .report import REPORT_FORMATS, load_report, render_report, save_report

# Explicitly load .env file from the current working directory
load_dotenv(os.path.join(os.getcwd(), '.env'))

logging.basicConfig(level=get_log_level(), format='%(levelname)s: %(message)s')

REPORT_FILES = {'json': 'report.json', 'csv': 'report.csv', 'markdown': 'report.md'}


class _Parser(argparse.ArgumentParser):
    """Argument errors surface as UsageError so they share the JSON error line."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_ratios(text: str):
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated fractions, got '{text}'")


def _write_histogram(volume: Volume, path: Path, bins: int, value_range=None) -> None:
    counts, edges = intensity_histogram(volume, bins, value_range)
    pd.DataFrame({
        'bin_left': edges[:-1],
        'bin_right': edges[1:],
        'count': counts,
    }).to_csv(path, index=False, lineterminator="\n", float_format="%.6f")


def cmd_ingest(args) -> int:
    scan = scan_dataset(args.root)
    write_manifest(scan.records, args.out)
    print(f"{len(scan.records)} patients written to {args.out} ({len(scan.exclusions)} excluded)")
    return 0


def cmd_preprocess(args) -> int:
    records = read_manifest(args.manifest)
    params = NormalizationParams(args.ct_floor, args.ct_cap, args.mri_percentile)
    out = Path(args.out)
    failed = 0
    for i, record in enumerate(records, start=1):
        logging.info(f"Step {i}/{len(records)}: Preprocessing {record.patient_id}...")
        try:
            ct = read_nifti(record.ct_path, ValueKind.HU)
            mri = read_nifti(record.mri_path, ValueKind.RAW_MRI)
            ct_norm = preprocess_ct(ct, params)
            mri_norm = preprocess_mri(mri, params)
            patient_dir = out / record.patient_id
            write_nifti(ct_norm, patient_dir / "ct.nii")
            write_nifti(mri_norm, patient_dir / "mri.nii")
            if args.histogram:
                _write_histogram(ct, patient_dir / "ct_hist_raw.csv", args.bins)
                _write_histogram(ct_norm, patient_dir / "ct_hist.csv", args.bins, (0.0, 1.0))
                _write_histogram(mri, patient_dir / "mri_hist_raw.csv", args.bins)
                _write_histogram(mri_norm, patient_dir / "mri_hist.csv", args.bins, (0.0, 1.0))
        except (SctEvaluatorError, OSError) as e:
            logging.error(f"Preprocessing failed for {record.patient_id}: {e}")
            failed += 1
    logging.info(f"✓ Preprocessed {len(records) - failed} of {len(records)} patients into {out}")
    return 1 if failed else 0


def cmd_split(args) -> int:
    records = read_manifest(args.manifest)
    try:
        split = stratified_split(records, args.ratios, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from e
    write_split(split, args.out)
    counts = split.counts()
    print(f"train={counts['train']} val={counts['val']} test={counts['test']} written to {args.out}")
    return 0


def cmd_slices(args) -> int:
    volume = read_nifti(args.volume)
    index = write_slice_stack(extract_transverse_slices(volume), args.out, volume.geometry)
    print(f"{volume.dims[2]} slices written, index {index}")
    return 0


def cmd_multichannel(args) -> int:
    mri = read_nifti(args.mri)
    ct = read_nifti(args.ct)
    samples = build_multichannel(extract_transverse_slices(mri), extract_transverse_slices(ct), args.k)
    out = Path(args.out)
    rows = []
    nx, ny, _ = mri.dims
    sz = mri.spacing[2]
    for sample in samples:
        z = sample.center_index
        mri_name, ct_name = f"mri_{z:04d}.nii", f"ct_{z:04d}.nii"
        channels = np.moveaxis(sample.stacked(), 0, 2)
        write_nifti(Volume(channels, VolumeGeometry((nx, ny, sample.k), (*mri.geometry.in_plane_spacing, sz))),
                    out / mri_name)
        write_nifti(Volume(np.asarray(sample.target.pixels)[:, :, np.newaxis],
                           VolumeGeometry((nx, ny, 1), (*ct.geometry.in_plane_spacing, ct.spacing[2]))),
                    out / ct_name)
        rows.append({'center_index': z, 'mri_path': mri_name, 'ct_path': ct_name})
    pd.DataFrame(rows, columns=['center_index', 'mri_path', 'ct_path']).to_csv(
        out / "samples.csv", index=False, lineterminator="\n"
    )
    print(f"{len(samples)} samples with k={args.k} written to {out}")
    return 0


def cmd_stack(args) -> int:
    template = read_nifti(args.template)
    volume = stack_slices(read_slice_stack(args.slices), template.geometry)
    write_nifti(volume, args.out)
    print(f"Volume {volume.dims} written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = load_run_config(args.config, seed=args.seed, metric_scale=args.scale, jobs=args.jobs)
    evaluator = ModelEvaluator(config)
    report = evaluator.evaluate(args.model)

    output_dir = Path(args.out) if args.out else config.output_dir
    if output_dir is None:
        print(render_report(report, "markdown"), end="")
        return 0

    output_dir.mkdir(parents=True, exist_ok=True)
    save_report(report, output_dir / REPORT_FILES['json'])
    for fmt in ('csv', 'markdown'):
        (output_dir / REPORT_FILES[fmt]).write_text(render_report(report, fmt), encoding="utf-8")
    for row in report.rows:
        evaluator.to_dataframe(row.model_name).to_csv(
            output_dir / f"{row.model_name}_patients.csv",
            index=False, lineterminator="\n", na_rep="n/a", float_format="%.6f",
        )
    display_report(report)
    logging.info(f"✓ Reports written to {output_dir}")
    return 0


def cmd_seg_eval(args) -> int:
    gt = read_label_mask(args.gt, args.gt_labels)
    syn = read_label_mask(args.syn, args.syn_labels)
    result = slice_label_iou(gt, syn) if args.two_d else mean_label_iou(gt, syn)
    print(json.dumps({'mean_iou': result.mean, 'per_label': result.per_label}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    text = render_report(load_report(args.input), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sct-evaluator",
        description="Evaluate synthetic CT from 2D slice-based MRI-to-CT translation."
    )
    parser.add_argument(
        "--log-level",
        help="Logging level (DEBUG, INFO, WARNING, ERROR). Overrides SCT_EVALUATOR_LOG_LEVEL."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Build a patient manifest CSV from a dataset root.")
    p.add_argument("--root", required=True, help="Dataset root with one directory per patient.")
    p.add_argument("--out", required=True, help="Manifest CSV to write.")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="Normalize CT and MRI volumes of a manifest.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="Output directory (one subdirectory per patient).")
    p.add_argument("--histogram", action="store_true",
                   help="Also write intensity histograms before and after normalization.")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--ct-floor", type=float, default=-1000.0)
    p.add_argument("--ct-cap", type=float, default=2000.0)
    p.add_argument("--mri-percentile", type=float, default=0.98)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="Stratified per-patient train/val/test split.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.7, 0.15, 0.15),
                   help="Comma-separated train,val,test fractions (default 0.7,0.15,0.15).")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("slices", help="Decompose a volume into transverse slice files.")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slices)

    p = sub.add_parser("multichannel", help="Write k-channel MRI inputs with their center CT slices.")
    p.add_argument("--mri", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_multichannel)

    p = sub.add_parser("stack", help="Restack a slice directory into a volume with a template's geometry.")
    p.add_argument("--slices", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("eval", help="Evaluate models as configured in a run config file.")
    p.add_argument("--config", required=True)
    p.add_argument("--model", action="append", help="Model to evaluate (repeatable). Defaults to MODELS.")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", choices=["normalized", "hu"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="Output directory. Defaults to OUTPUT_DIR.")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("seg-eval", help="Mean label IoU between two segmentation masks.")
    p.add_argument("--gt", required=True)
    p.add_argument("--gt-labels", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--syn-labels", required=True)
    p.add_argument("--2d", dest="two_d", action="store_true", help="Evaluate slice by slice.")
    p.set_defaults(func=cmd_seg_eval)

    p = sub.add_parser("report", help="Render a saved JSON report.")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=REPORT_FORMATS, default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def _fail(code: str, message: str, status: int) -> int:
    logging.error(message)
    sys.stderr.write(json.dumps({'error': code, 'message': message}) + "\n")
    return status


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the sct-evaluator CLI.

    Returns 0 on success, 2 for usage and configuration errors and 1 for any
    other failure; failures also print one JSON line to stderr.
    """
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            set_log_level(args.log_level)
        return args.func(args)
    except (UsageError, ConfigError) as e:
        return _fail(e.code, str(e), 2)
    except SctEvaluatorError as e:
        return _fail(e.code, str(e), 1)
    except FileNotFoundError as e:
        return _fail("not_found", str(e), 1)
    except (OSError, ValueError) as e:
        return _fail("invalid_input", str(e), 1)


if __name__ == "__main__":
    sys.exit(main())
