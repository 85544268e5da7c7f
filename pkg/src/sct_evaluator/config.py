import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

load_dotenv()

LOG_LEVEL_ENV = "SCT_EVALUATOR_LOG_LEVEL"

METRIC_SCALES = ("normalized", "hu")
PREDICTION_KINDS = ("normalized", "hu")
EXTERNAL_EMBEDDER = "external"


def get_log_level(default: str = "INFO") -> int:
    """Logging level from SCT_EVALUATOR_LOG_LEVEL (names like DEBUG or WARNING)."""
    name = (os.getenv(LOG_LEVEL_ENV) or default).upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        logging.warning(f"Unknown log level '{name}' in {LOG_LEVEL_ENV}, using {default}")
        return logging.getLevelName(default.upper())
    return level


def set_log_level(name: str) -> None:
    os.environ[LOG_LEVEL_ENV] = name
    logging.getLogger().setLevel(get_log_level())


@dataclass(frozen=True)
class RunConfig:
    """
    Everything an evaluation run depends on.

    Loaded from a KEY=VALUE file (see load_run_config). Paths are absolute once
    loaded; relative entries are resolved against the config file's directory.
    """

    dataset_root: Path
    seed: int
    prediction_dir: Path
    models: Tuple[str, ...] = ()
    split_csv: Optional[Path] = None
    output_dir: Optional[Path] = None
    ct_floor: float = -1000.0
    ct_cap: float = 2000.0
    mri_percentile: float = 0.98
    metric_scale: str = "normalized"
    prediction_kind: str = "normalized"
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    embedder: str = "downsample-8x8"
    embedding_dir: Optional[Path] = None
    mask_dir: Optional[Path] = None
    seg_fraction: float = 0.5
    split_ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    jobs: int = 1
    source: Optional[Path] = field(default=None, compare=False)

    def validate(self) -> "RunConfig":
        """Raise ConfigError on the first violated constraint; returns self."""
        problems = []
        for name in ("dataset_root", "prediction_dir", "split_csv", "embedding_dir", "mask_dir"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                problems.append(f"{name.upper()} does not exist: {path}")
        if self.metric_scale not in METRIC_SCALES:
            problems.append(f"METRIC_SCALE must be one of {METRIC_SCALES}, got '{self.metric_scale}'")
        if self.prediction_kind not in PREDICTION_KINDS:
            problems.append(f"PREDICTION_KIND must be one of {PREDICTION_KINDS}, got '{self.prediction_kind}'")
        if self.embedder == EXTERNAL_EMBEDDER and self.embedding_dir is None:
            problems.append("EMBEDDER=external requires EMBEDDING_DIR")
        if not 0.0 < self.seg_fraction <= 1.0:
            problems.append(f"SEG_FRACTION must be in (0, 1], got {self.seg_fraction}")
        if self.jobs < 1:
            problems.append(f"JOBS must be at least 1, got {self.jobs}")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            problems.append(f"SSIM_WINDOW must be a positive odd integer, got {self.ssim_window}")
        if self.ct_cap <= self.ct_floor:
            problems.append(f"CT_CAP ({self.ct_cap}) must exceed CT_FLOOR ({self.ct_floor})")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def canonical_items(self) -> List[Tuple[str, str]]:
        """
        Sorted (KEY, value) pairs that identify the run's results.

        OUTPUT_DIR and JOBS are left out: they do not change any reported value.
        """
        items = []
        for f in fields(self):
            if f.name in ("output_dir", "jobs", "source"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            items.append((f.name.upper(), "" if value is None else str(value)))
        return sorted(items)


def _parse_list(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _parse_ratios(text: str) -> Tuple[float, float, float]:
    parts = _parse_list(text)
    if len(parts) != 3:
        raise ConfigError(f"SPLIT_RATIOS needs three comma-separated values, got '{text}'")
    return tuple(float(p) for p in parts)


_CONVERTERS = {
    'SEED': int,
    'JOBS': int,
    'SSIM_WINDOW': int,
    'CT_FLOOR': float,
    'CT_CAP': float,
    'MRI_PERCENTILE': float,
    'SSIM_SIGMA': float,
    'SSIM_K1': float,
    'SSIM_K2': float,
    'SEG_FRACTION': float,
    'MODELS': _parse_list,
    'SPLIT_RATIOS': _parse_ratios,
    'METRIC_SCALE': lambda v: v.strip().lower(),
    'PREDICTION_KIND': lambda v: v.strip().lower(),
    'EMBEDDER': str.strip,
}

_PATH_KEYS = ('DATASET_ROOT', 'PREDICTION_DIR', 'SPLIT_CSV', 'OUTPUT_DIR', 'EMBEDDING_DIR', 'MASK_DIR')


def parse_run_config(values: Mapping[str, Optional[str]], base_dir: Path = Path("."), **overrides) -> RunConfig:
    """Build a RunConfig from raw KEY=VALUE strings; non-None overrides (CLI flags) win over file values."""
    known = set(_CONVERTERS) | set(_PATH_KEYS)
    unknown = sorted(k for k in values if k not in known)
    if unknown:
        logging.warning(f"Ignoring unknown config keys: {', '.join(unknown)}")

    kwargs: Dict[str, object] = {}
    for key, raw in values.items():
        if key not in known or raw is None or raw.strip() == "":
            continue
        if key in _PATH_KEYS:
            path = Path(raw.strip()).expanduser()
            kwargs[key.lower()] = path if path.is_absolute() else (base_dir / path).resolve()
            continue
        try:
            kwargs[key.lower()] = _CONVERTERS[key](raw)
        except ValueError as e:
            raise ConfigError(f"invalid value for {key}: '{raw}' ({e})") from e

    kwargs.update({k: v for k, v in overrides.items() if v is not None})

    for required in ('DATASET_ROOT', 'PREDICTION_DIR', 'SEED'):
        if required.lower() not in kwargs:
            raise ConfigError(f"{required} must be set explicitly")
    return RunConfig(**kwargs)


def load_run_config(path, **overrides) -> RunConfig:
    """
    Read a run config file and apply CLI overrides (None values are ignored).

    The file uses dotenv syntax: KEY=VALUE lines, '#' comments.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = parse_run_config(dotenv_values(path), base_dir=path.parent.resolve(), **overrides)
    return replace(config, source=path.resolve())
