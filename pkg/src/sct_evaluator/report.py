"""
Per-model metric reports: types, rendering and JSON (de)serialisation.

A report holds one row per model with mean and std over patients for the eight
metric columns, plus a provenance block identifying config, data, seed and
metric scale. Rendering is deterministic: the same report always produces the
same bytes.
"""

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from .errors import UsageError

# (key, column label, higher is better)
METRIC_COLUMNS: List[Tuple[str, str, bool]] = [
    ('ssim', 'SSIM', True),
    ('psnr', 'PSNR', True),
    ('mae', 'MAE', False),
    ('mse', 'MSE', False),
    ('fid', 'FID', False),
    ('simos', 'SIMOS', False),
    ('iou_2d', '2D IoU', True),
    ('iou_3d', '3D IoU', True),
]
METRIC_KEYS = [key for key, _, _ in METRIC_COLUMNS]
SLICE_METRIC_KEYS = ['ssim', 'psnr', 'mae', 'mse']
REPORT_FORMATS = ('csv', 'json', 'markdown')
NOT_AVAILABLE = "n/a"


@dataclass(frozen=True)
class MetricSummary:
    mean: Optional[float] = None
    std: Optional[float] = None
    n: int = 0

    @classmethod
    def of(cls, values: Sequence[float]) -> "MetricSummary":
        """
        Mean and sample std (ddof=1) over patients.

        std is unavailable with fewer than two values or when any value is
        infinite (identical-image PSNR).
        """
        if not values:
            return cls()
        series = pd.Series(list(values), dtype="float64")
        mean = float(series.mean())
        std = float(series.std()) if len(series) > 1 else math.nan
        if math.isinf(mean) or not math.isfinite(std):
            std = None
        return cls(mean=mean, std=std, n=len(series))

    @property
    def available(self) -> bool:
        return self.mean is not None


@dataclass
class ModelRow:
    model_name: str
    metrics: Dict[str, MetricSummary] = field(default_factory=dict)
    slice_means: Dict[str, Optional[float]] = field(default_factory=dict)
    pooled_iou: Dict[str, Optional[float]] = field(default_factory=dict)
    n_patients: int = 0
    excluded: Dict[str, str] = field(default_factory=dict)

    def summary(self, key: str) -> MetricSummary:
        return self.metrics.get(key, MetricSummary())


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    dataset_hash: str
    seed: int
    toolkit_version: str
    metric_scale: str
    embedder: str
    patients: Tuple[str, ...] = ()
    segmentation_patients: Tuple[str, ...] = ()


@dataclass
class MetricReport:
    rows: List[ModelRow]
    provenance: Provenance

    def row(self, model_name: str) -> ModelRow:
        for row in self.rows:
            if row.model_name == model_name:
                return row
        raise KeyError(model_name)


def format_value(value: Optional[float], digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NOT_AVAILABLE
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def _json_number(value: Optional[float]):
    if value is None or math.isnan(value):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _from_json_number(value) -> Optional[float]:
    return None if value is None else float(value)


def report_to_dict(report: MetricReport) -> Dict:
    prov = report.provenance
    return {
        'provenance': {
            'config_hash': prov.config_hash,
            'dataset_hash': prov.dataset_hash,
            'seed': prov.seed,
            'toolkit_version': prov.toolkit_version,
            'metric_scale': prov.metric_scale,
            'embedder': prov.embedder,
            'patients': list(prov.patients),
            'segmentation_patients': list(prov.segmentation_patients),
        },
        'models': [
            {
                'model': row.model_name,
                'n_patients': row.n_patients,
                'excluded': dict(sorted(row.excluded.items())),
                'metrics': {
                    key: {
                        'mean': _json_number(row.summary(key).mean),
                        'std': _json_number(row.summary(key).std),
                        'n': row.summary(key).n,
                    }
                    for key in METRIC_KEYS
                },
                'slice_means': {k: _json_number(v) for k, v in sorted(row.slice_means.items())},
                'pooled_iou': {k: _json_number(v) for k, v in sorted(row.pooled_iou.items())},
            }
            for row in report.rows
        ],
    }


def report_from_dict(data: Dict) -> MetricReport:
    try:
        prov = data['provenance']
        provenance = Provenance(
            config_hash=prov['config_hash'],
            dataset_hash=prov['dataset_hash'],
            seed=int(prov['seed']),
            toolkit_version=prov['toolkit_version'],
            metric_scale=prov['metric_scale'],
            embedder=prov['embedder'],
            patients=tuple(prov.get('patients', [])),
            segmentation_patients=tuple(prov.get('segmentation_patients', [])),
        )
        rows = []
        for entry in data['models']:
            metrics = {
                key: MetricSummary(
                    mean=_from_json_number(value.get('mean')),
                    std=_from_json_number(value.get('std')),
                    n=int(value.get('n', 0)),
                )
                for key, value in entry.get('metrics', {}).items()
            }
            rows.append(ModelRow(
                model_name=entry['model'],
                metrics=metrics,
                slice_means={k: _from_json_number(v) for k, v in entry.get('slice_means', {}).items()},
                pooled_iou={k: _from_json_number(v) for k, v in entry.get('pooled_iou', {}).items()},
                n_patients=int(entry.get('n_patients', 0)),
                excluded=dict(entry.get('excluded', {})),
            ))
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"malformed report: {e}") from e
    return MetricReport(rows=rows, provenance=provenance)


def _render_json(report: MetricReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def report_to_dataframe(report: MetricReport) -> pd.DataFrame:
    """One row per model: mean and std columns per metric, plus bookkeeping."""
    records = []
    for row in report.rows:
        record = {
            'model': row.model_name,
            'n_patients': row.n_patients,
            'n_excluded': len(row.excluded),
            'metric_scale': report.provenance.metric_scale,
        }
        for key in METRIC_KEYS:
            summary = row.summary(key)
            record[f'{key}_mean'] = summary.mean
            record[f'{key}_std'] = summary.std
        records.append(record)
    return pd.DataFrame(records)


def _render_csv(report: MetricReport) -> str:
    buffer = io.StringIO()
    report_to_dataframe(report).to_csv(
        buffer, index=False, lineterminator="\n", na_rep=NOT_AVAILABLE, float_format="%.6f"
    )
    return buffer.getvalue()


def _best_models(report: MetricReport) -> Dict[str, set]:
    """Per metric, the model(s) with the best mean. Only meaningful with two or more models."""
    best = {}
    if len(report.rows) < 2:
        return best
    for key, _, higher in METRIC_COLUMNS:
        values = {r.model_name: r.summary(key).mean for r in report.rows if r.summary(key).available}
        if not values:
            continue
        target = max(values.values()) if higher else min(values.values())
        best[key] = {name for name, v in values.items() if v == target}
    return best


def _render_markdown(report: MetricReport) -> str:
    header = ["Model"] + [f"{label} {'↑' if higher else '↓'}" for _, label, higher in METRIC_COLUMNS]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + [":---:"] * len(METRIC_COLUMNS)) + "|",
    ]
    best = _best_models(report)
    for row in report.rows:
        cells = [row.model_name]
        for key, _, _ in METRIC_COLUMNS:
            summary = row.summary(key)
            if not summary.available:
                cell = NOT_AVAILABLE
            elif summary.std is None:
                cell = format_value(summary.mean)
            else:
                cell = f"{format_value(summary.mean)} ± {format_value(summary.std)}"
            if row.model_name in best.get(key, ()):
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append("| " + " | ".join(cells) + " |")

    prov = report.provenance
    lines.append("")
    lines.append(
        f"Metric scale: {prov.metric_scale}; seed: {prov.seed}; embedder: {prov.embedder}; "
        f"patients: {len(prov.patients)}; config: {prov.config_hash[:12]}; "
        f"dataset: {prov.dataset_hash[:12]}; toolkit: {prov.toolkit_version}"
    )
    for row in report.rows:
        if row.excluded:
            lines.append(f"{row.model_name}: {len(row.excluded)} patient(s) excluded "
                         f"({', '.join(sorted(row.excluded))})")
    return "\n".join(lines) + "\n"


_RENDERERS = {
    'csv': _render_csv,
    'json': _render_json,
    'markdown': _render_markdown,
}


def render_report(report: MetricReport, fmt: str = "markdown") -> str:
    """
    Render a report as CSV, JSON or a Markdown table with ↑/↓ column markers.

    Raises:
        UsageError: the report has no model rows, or the format is unknown
    """
    if not report.rows:
        raise UsageError("cannot render a report without model rows")
    if fmt not in _RENDERERS:
        raise UsageError(f"unknown report format '{fmt}'; choose one of {', '.join(REPORT_FORMATS)}")
    return _RENDERERS[fmt](report)


def save_report(report: MetricReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_render_json(report), encoding="utf-8")
    return path


def load_report(path: Union[str, Path]) -> MetricReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not a JSON report ({e})") from e
    return report_from_dict(data)
