import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .analysis.frechet import EmbeddingSet, embed_slices, fid, get_embedder, read_embeddings
from .analysis.metrics import SsimParams, pixel_metrics, simos, ssim
from .analysis.preprocess import NormalizationParams, denormalize_ct, preprocess_ct
from .analysis.segmentation import (
    LabelIouResult,
    LabelMaskVolume,
    mean_label_iou,
    read_label_mask,
    select_eval_subset,
    slice_label_iou,
)
from .config import EXTERNAL_EMBEDDER, RunConfig
from .data.dataset import PatientRecord, read_split, scan_dataset
from .data.nifti import SLICE_INDEX_FILE, read_nifti, read_slice_stack
from .data.volume import ValueKind, Volume, extract_transverse_slices, stack_slices
from .errors import DimensionError, InsufficientDataError, SctEvaluatorError, UsageError
from .report import SLICE_METRIC_KEYS, MetricReport, MetricSummary, ModelRow, Provenance
from .utils.provenance import config_hash, dataset_hash

GROUND_TRUTH = "ground_truth"


@dataclass
class PatientResult:
    """All metric values for one patient and one model."""

    patient_id: str
    slice_values: Dict[str, List[float]]
    simos: float
    gt_embeddings: Optional[EmbeddingSet] = None
    syn_embeddings: Optional[EmbeddingSet] = None
    iou_3d: Optional[LabelIouResult] = None
    iou_2d: Optional[LabelIouResult] = None

    def mean(self, key: str) -> float:
        """Mean over slices; +inf propagates (PSNR of identical slices)."""
        return float(np.mean(self.slice_values[key]))

    def as_dict(self) -> Dict:
        record = {'patient_id': self.patient_id}
        for key in SLICE_METRIC_KEYS:
            record[key] = self.mean(key)
        record['simos'] = self.simos
        record['iou_3d'] = self.iou_3d.mean if self.iou_3d else None
        record['iou_2d'] = self.iou_2d.mean if self.iou_2d else None
        record['n_slices'] = len(self.slice_values['mae'])
        return record


@dataclass
class ModelRun:
    """Per-patient results and exclusions of one model, before aggregation."""

    model_name: str
    results: List[PatientResult] = field(default_factory=list)
    excluded: Dict[str, str] = field(default_factory=dict)


class ModelEvaluator:
    """
    Orchestrates evaluation of one or more models against ground-truth CT.

    Per-patient work (loading, per-slice metrics, SIMOS, masks) runs on a thread
    pool; results are reduced in patient-id order so reports do not depend on
    scheduling. A patient whose prediction cannot be loaded or evaluated is
    logged, recorded as an exclusion and left out of every aggregate.
    """

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        self.norm_params = NormalizationParams(config.ct_floor, config.ct_cap, config.mri_percentile)
        hu_scale = config.metric_scale == "hu"
        self.peak = self.norm_params.ct_range if hu_scale else 1.0
        self.ssim_params = SsimParams(
            window=config.ssim_window,
            sigma=config.ssim_sigma,
            k1=config.ssim_k1,
            k2=config.ssim_k2,
            dynamic_range=self.peak,
        )
        self.embedder = None if config.embedder == EXTERNAL_EMBEDDER else get_embedder(config.embedder)
        self._records: Optional[List[PatientRecord]] = None
        self._seg_patients: Optional[List[str]] = None
        self.runs: Dict[str, ModelRun] = {}

    @property
    def test_records(self) -> List[PatientRecord]:
        """Test-split patients (all manifest patients when no split CSV is configured)."""
        if self._records is None:
            records = scan_dataset(self.config.dataset_root).records
            if self.config.split_csv is not None:
                split = read_split(self.config.split_csv)
                unknown = sorted(pid for pid, s in split.items() if s == "test" and
                                 pid not in {r.patient_id for r in records})
                if unknown:
                    logging.warning(f"Test patients missing from the dataset: {', '.join(unknown)}")
                records = [r for r in records if split.get(r.patient_id) == "test"]
            self._records = sorted(records, key=lambda r: r.patient_id)
            logging.info(f"Evaluating on {len(self._records)} test patients")
        return self._records

    @property
    def segmentation_patients(self) -> List[str]:
        if self._seg_patients is None:
            ids = [r.patient_id for r in self.test_records]
            if self.config.mask_dir is None or not ids:
                self._seg_patients = []
            else:
                self._seg_patients = select_eval_subset(ids, self.config.seg_fraction, self.config.seed)
                logging.info(f"Segmentation subset: {len(self._seg_patients)} of {len(ids)} test patients")
        return self._seg_patients

    def _to_metric_scale(self, normalized: Volume) -> Volume:
        if self.config.metric_scale == "hu":
            return denormalize_ct(normalized, self.norm_params)
        return normalized

    def load_ground_truth(self, record: PatientRecord) -> Volume:
        ct = read_nifti(record.ct_path, ValueKind.HU)
        normalized = preprocess_ct(ct, self.norm_params)
        # predictions are stored as float32; compare at that precision
        normalized = normalized.replace_voxels(np.asarray(normalized.voxels, dtype=np.float32))
        return self._to_metric_scale(normalized)

    def _prediction_source(self, model_name: str, patient_id: str) -> Optional[Path]:
        model_dir = self.config.prediction_dir / model_name
        for candidate in (model_dir / f"{patient_id}.nii.gz", model_dir / f"{patient_id}.nii"):
            if candidate.is_file():
                return candidate
        stack_dir = model_dir / patient_id
        if (stack_dir / SLICE_INDEX_FILE).is_file():
            return stack_dir
        return None

    def load_prediction(self, model_name: str, record: PatientRecord, gt: Volume) -> Volume:
        """
        The model's sCT for a patient at metric scale, in the ground-truth geometry.

        Accepts a full volume or a slice stack directory; slice stacks are
        restacked with the ground-truth geometry.
        """
        source = self._prediction_source(model_name, record.patient_id)
        if source is None:
            raise FileNotFoundError(f"no prediction for patient {record.patient_id} under model '{model_name}'")
        if source.is_dir():
            slices = read_slice_stack(source)
            indices = [s.index for s in slices]
            if indices != list(range(gt.dims[2])):
                raise DimensionError(
                    f"{source}: slice indices must cover 0..{gt.dims[2] - 1}, got {len(indices)} slices"
                )
            predicted = stack_slices(slices, gt.geometry, ValueKind.RAW)
        else:
            predicted = read_nifti(source)
        if predicted.dims != gt.dims:
            raise DimensionError(f"{source}: prediction dims {predicted.dims} differ from ground truth {gt.dims}")

        values = np.asarray(predicted.voxels, dtype=np.float64)
        if self.config.prediction_kind == "hu":
            normalized = preprocess_ct(Volume(values, gt.geometry, ValueKind.HU), self.norm_params)
        else:
            normalized = Volume(np.clip(values, 0.0, 1.0), gt.geometry, ValueKind.NORMALIZED)
        return self._to_metric_scale(normalized)

    def _mask_paths(self, source: str, patient_id: str, stem: str) -> Optional[Tuple[Path, Path]]:
        directory = self.config.mask_dir / source / patient_id
        labels = directory / f"{stem}.labels.tsv"
        for suffix in (".nii.gz", ".nii"):
            mask = directory / f"{stem}{suffix}"
            if mask.is_file() and labels.is_file():
                return mask, labels
        return None

    def _load_mask(self, source: str, record: PatientRecord, stem: str) -> Optional[LabelMaskVolume]:
        paths = self._mask_paths(source, record.patient_id, stem)
        if paths is None and source == GROUND_TRUTH and stem == "seg3d" and record.mask_path is not None:
            fallback_labels = record.mask_path.parent / "mask.labels.tsv"
            if fallback_labels.is_file():
                paths = (record.mask_path, fallback_labels)
        if paths is None:
            return None
        return read_label_mask(*paths)

    def _evaluate_masks(self, model_name: str, record: PatientRecord, stem: str) -> Optional[LabelIouResult]:
        try:
            gt_mask = self._load_mask(GROUND_TRUTH, record, stem)
            syn_mask = self._load_mask(model_name, record, stem)
            if gt_mask is None or syn_mask is None:
                logging.warning(f"Patient {record.patient_id}: no {stem} masks for '{model_name}', skipping IoU")
                return None
            if stem == "seg2d":
                return slice_label_iou(gt_mask, syn_mask)
            return mean_label_iou(gt_mask, syn_mask)
        except (SctEvaluatorError, OSError, ValueError) as e:
            logging.warning(f"Patient {record.patient_id}: {stem} IoU failed for '{model_name}': {e}")
            return None

    def evaluate_patient(self, model_name: str, record: PatientRecord) -> PatientResult:
        """All per-patient metrics for one model. Raises on any failure."""
        gt = self.load_ground_truth(record)
        pred = self.load_prediction(model_name, record, gt)
        gt_slices = extract_transverse_slices(gt)
        pred_slices = extract_transverse_slices(pred)

        values: Dict[str, List[float]] = {key: [] for key in SLICE_METRIC_KEYS}
        for p, t in zip(pred_slices, gt_slices):
            pm = pixel_metrics(p, t, self.peak)
            values['mae'].append(pm.mae)
            values['mse'].append(pm.mse)
            values['psnr'].append(pm.psnr)
            values['ssim'].append(ssim(p, t, self.ssim_params))

        result = PatientResult(record.patient_id, values, simos(gt, pred))
        if self.embedder is not None:
            result.gt_embeddings = embed_slices(gt_slices, self.embedder)
            result.syn_embeddings = embed_slices(pred_slices, self.embedder)
        if record.patient_id in self.segmentation_patients:
            result.iou_3d = self._evaluate_masks(model_name, record, "seg3d")
            result.iou_2d = self._evaluate_masks(model_name, record, "seg2d")
        return result

    def _safe_evaluate(self, model_name: str, record: PatientRecord) -> Tuple[str, Optional[PatientResult], str]:
        try:
            return record.patient_id, self.evaluate_patient(model_name, record), ""
        except (SctEvaluatorError, OSError, ValueError) as e:
            code = getattr(e, "code", type(e).__name__)
            logging.warning(f"Excluding patient {record.patient_id} from '{model_name}': {e}")
            return record.patient_id, None, f"{code}: {e}"

    def run_model(self, model_name: str) -> ModelRun:
        # lazy state is resolved once, before the workers start
        records = self.test_records
        seg_patients = self.segmentation_patients
        logging.debug(f"{len(seg_patients)} patients in the segmentation subset")
        run = ModelRun(model_name)
        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            outcomes = list(pool.map(lambda r: self._safe_evaluate(model_name, r), records))
        for patient_id, result, reason in outcomes:
            if result is None:
                run.excluded[patient_id] = reason
            else:
                run.results.append(result)
        self.runs[model_name] = run
        return run

    def _model_fid(self, run: ModelRun) -> Optional[float]:
        try:
            if self.embedder is None:
                directory = self.config.embedding_dir
                reference = read_embeddings(directory / f"{GROUND_TRUTH}.emb")
                synthetic = read_embeddings(directory / f"{run.model_name}.emb")
            else:
                reference = EmbeddingSet.concatenate([r.gt_embeddings for r in run.results])
                synthetic = EmbeddingSet.concatenate([r.syn_embeddings for r in run.results])
            return fid(reference, synthetic)
        except (SctEvaluatorError, OSError) as e:
            logging.warning(f"FID unavailable for '{run.model_name}': {e}")
            return None

    @staticmethod
    def _iou_summaries(results: Sequence[PatientResult], attr: str) -> Tuple[MetricSummary, Optional[float]]:
        scored = [getattr(r, attr) for r in results if getattr(r, attr) is not None]
        per_patient = MetricSummary.of([s.mean for s in scored])
        pooled_values = [v for s in scored for _, v in sorted(s.per_label.items())]
        pooled = float(np.mean(pooled_values)) if pooled_values else None
        return per_patient, pooled

    def aggregate(self, run: ModelRun) -> ModelRow:
        row = ModelRow(model_name=run.model_name, n_patients=len(run.results), excluded=dict(run.excluded))
        if not run.results:
            logging.error(f"No patients could be evaluated for '{run.model_name}'")
            return row

        for key in SLICE_METRIC_KEYS:
            row.metrics[key] = MetricSummary.of([r.mean(key) for r in run.results])
            pooled = [v for r in run.results for v in r.slice_values[key]]
            row.slice_means[key] = float(np.mean(pooled))
        row.metrics['simos'] = MetricSummary.of([r.simos for r in run.results])

        fid_value = self._model_fid(run)
        row.metrics['fid'] = MetricSummary(mean=fid_value, n=len(run.results) if fid_value is not None else 0)

        for key, attr in (('iou_3d', 'iou_3d'), ('iou_2d', 'iou_2d')):
            row.metrics[key], row.pooled_iou[key] = self._iou_summaries(run.results, attr)
        return row

    def evaluate_model(self, model_name: str) -> ModelRow:
        """Evaluate one model on the test patients and aggregate mean ± std over patients."""
        logging.info(f"Step 1/2: Evaluating '{model_name}' on {len(self.test_records)} patients")
        run = self.run_model(model_name)
        logging.info(f"Step 2/2: Aggregating {len(run.results)} patients ({len(run.excluded)} excluded)")
        row = self.aggregate(run)
        logging.info(f"✓ Model '{model_name}' evaluated")
        return row

    def provenance(self) -> Provenance:
        return Provenance(
            config_hash=config_hash(self.config.canonical_items()),
            dataset_hash=dataset_hash(self.test_records),
            seed=self.config.seed,
            toolkit_version=__version__,
            metric_scale=self.config.metric_scale,
            embedder=self.config.embedder,
            patients=tuple(r.patient_id for r in self.test_records),
            segmentation_patients=tuple(self.segmentation_patients),
        )

    def evaluate(self, models: Optional[Sequence[str]] = None) -> MetricReport:
        """Evaluate every model (default: MODELS from the config) into one report."""
        models = list(models or self.config.models)
        if not models:
            raise UsageError("no models to evaluate; set MODELS or pass --model")
        if not self.test_records:
            raise InsufficientDataError("no test patients found")
        rows = []
        for i, model_name in enumerate(models, start=1):
            logging.info(f"Model {i}/{len(models)}: {model_name}")
            rows.append(self.evaluate_model(model_name))
        return MetricReport(rows=rows, provenance=self.provenance())

    def to_dataframe(self, model_name: str) -> pd.DataFrame:
        """Per-patient metric table of an evaluated model."""
        if model_name not in self.runs:
            raise KeyError(f"model '{model_name}' has not been evaluated")
        run = self.runs[model_name]
        return pd.DataFrame([r.as_dict() for r in run.results])
