"""
Patient manifest, per-patient stratified splitting and cross-modality slice pairing.

Directory layout:

    root/<patient_id>/mri.nii[.gz]
    root/<patient_id>/ct.nii[.gz]
    root/<patient_id>/mask.nii[.gz]      optional
    root/<patient_id>/meta.txt           region=brain|pelvis, hospital=A|B|C
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from dotenv import dotenv_values

from ..errors import PairingError
from ..utils.prng import XorShift64Star, derive_seed
from .nifti import read_nifti, read_nifti_dims
from .volume import Slice, ValueKind, extract_transverse_slices

PathLike = Union[str, Path]

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.7, 0.15, 0.15)
HOSPITALS = ("A", "B", "C")
META_FILE = "meta.txt"


class Region(str, enum.Enum):
    BRAIN = "brain"
    PELVIS = "pelvis"


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    region: Region
    hospital: str
    mri_path: Path
    ct_path: Path
    mask_path: Optional[Path] = None

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        object.__setattr__(self, "region", Region(self.region))
        if self.hospital not in HOSPITALS:
            raise ValueError(f"hospital must be one of {HOSPITALS}, got {self.hospital!r}")
        object.__setattr__(self, "mri_path", Path(self.mri_path))
        object.__setattr__(self, "ct_path", Path(self.ct_path))
        if self.mask_path is not None:
            object.__setattr__(self, "mask_path", Path(self.mask_path))
        if self.mri_path == self.ct_path:
            raise ValueError(f"{self.patient_id}: MRI and CT paths must differ")

    @property
    def stratum(self) -> Tuple[str, str]:
        return self.region.value, self.hospital


@dataclass
class ManifestScan:
    records: List[PatientRecord] = field(default_factory=list)
    exclusions: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Dict[str, str]
    seed: int
    ratios: Tuple[float, float, float]

    def patients_in(self, split: str) -> List[str]:
        return sorted(pid for pid, s in self.assignment.items() if s == split)

    def counts(self) -> Dict[str, int]:
        return {split: len(self.patients_in(split)) for split in SPLITS}


@dataclass(frozen=True, eq=False)
class SlicePair:
    patient_id: str
    index: int
    mri: Slice
    ct: Slice


def _find_volume(directory: Path, stem: str) -> Optional[Path]:
    for suffix in (".nii.gz", ".nii"):
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _read_patient(patient_dir: Path) -> Tuple[Optional[PatientRecord], Optional[str]]:
    """Record for one patient directory, or the reason it is excluded."""
    patient_id = patient_dir.name
    mri_path = _find_volume(patient_dir, "mri")
    ct_path = _find_volume(patient_dir, "ct")
    missing = [name for name, p in (("mri", mri_path), ("ct", ct_path)) if p is None]
    if missing:
        return None, f"missing modality: {', '.join(missing)}"

    meta_path = patient_dir / META_FILE
    if not meta_path.is_file():
        return None, f"missing {META_FILE}"
    meta = dotenv_values(meta_path)
    try:
        record = PatientRecord(
            patient_id=patient_id,
            region=(meta.get("region") or "").strip().lower(),
            hospital=(meta.get("hospital") or "").strip().upper(),
            mri_path=mri_path,
            ct_path=ct_path,
            mask_path=_find_volume(patient_dir, "mask"),
        )
    except ValueError as e:
        return None, f"invalid metadata: {e}"

    mri_dims, ct_dims = read_nifti_dims(mri_path), read_nifti_dims(ct_path)
    if mri_dims != ct_dims:
        raise PairingError(f"patient {patient_id}: MRI dims {mri_dims} differ from CT dims {ct_dims}")
    return record, None


def scan_dataset(root: PathLike) -> ManifestScan:
    """Walk the dataset root and split patient directories into records and exclusions."""
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"dataset root {root} is not a readable directory")
    scan = ManifestScan()
    for patient_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        record, reason = _read_patient(patient_dir)
        if record is None:
            logging.warning(f"Excluding patient {patient_dir.name}: {reason}")
            scan.exclusions[patient_dir.name] = reason
        else:
            scan.records.append(record)
    logging.info(f"Manifest: {len(scan.records)} patients, {len(scan.exclusions)} excluded")
    return scan


def build_manifest(root: PathLike) -> List[PatientRecord]:
    """One record per patient directory with both modalities, sorted by patient id."""
    return scan_dataset(root).records


def manifest_to_dataframe(records: Sequence[PatientRecord]) -> pd.DataFrame:
    rows = [{
        'patient_id': r.patient_id,
        'region': r.region.value,
        'hospital': r.hospital,
        'mri_path': str(r.mri_path),
        'ct_path': str(r.ct_path),
        'mask_path': str(r.mask_path) if r.mask_path else '',
    } for r in sorted(records, key=lambda r: r.patient_id)]
    return pd.DataFrame(rows, columns=['patient_id', 'region', 'hospital', 'mri_path', 'ct_path', 'mask_path'])


def write_manifest(records: Sequence[PatientRecord], path: PathLike) -> None:
    manifest_to_dataframe(records).to_csv(path, index=False, lineterminator="\n")


def read_manifest(path: PathLike) -> List[PatientRecord]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        PatientRecord(
            patient_id=row.patient_id,
            region=row.region,
            hospital=row.hospital,
            mri_path=row.mri_path,
            ct_path=row.ct_path,
            mask_path=row.mask_path or None,
        )
        for row in df.itertuples(index=False)
    ]


def _check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != len(SPLITS):
        raise ValueError(f"expected {len(SPLITS)} split ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    return tuple(float(r) for r in ratios)


def apportion(n: int, ratios: Sequence[float]) -> List[int]:
    """
    Largest-remainder apportionment of n items to the given ratios.

    Ties in the remainder go to the earlier split.
    """
    quotas = [r * n for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    order = sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(manifest: Sequence[PatientRecord], ratios: Sequence[float] = DEFAULT_RATIOS,
                     seed: int = 0) -> SplitAssignment:
    """
    Per-patient train/val/test split balanced over (region, hospital) strata.

    Within each stratum the patients (sorted by id) are shuffled with a
    xorshift64* generator seeded from (seed, stratum key) and cut by the
    largest-remainder counts, in train, val, test order.
    """
    ratios = _check_ratios(ratios)
    ids = [r.patient_id for r in manifest]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest contains duplicate patient ids")

    strata: Dict[Tuple[str, str], List[str]] = {}
    for record in manifest:
        strata.setdefault(record.stratum, []).append(record.patient_id)

    assignment = {}
    for key in sorted(strata):
        patients = sorted(strata[key])
        if len(patients) < len(SPLITS):
            logging.warning(
                f"Stratum {key[0]}/{key[1]} has {len(patients)} patients for {len(SPLITS)} splits"
            )
        rng = XorShift64Star(derive_seed(seed, f"{key[0]}|{key[1]}"))
        shuffled = rng.shuffled(patients)
        start = 0
        for split, count in zip(SPLITS, apportion(len(patients), ratios)):
            for pid in shuffled[start:start + count]:
                assignment[pid] = split
            start += count
        logging.debug(f"Stratum {key}: {dict(zip(SPLITS, apportion(len(patients), ratios)))}")

    return SplitAssignment(assignment=assignment, seed=seed, ratios=ratios)


def write_split(split: SplitAssignment, path: PathLike) -> None:
    df = pd.DataFrame(sorted(split.assignment.items()), columns=['patient_id', 'split'])
    df.to_csv(path, index=False, lineterminator="\n")


def read_split(path: PathLike) -> Dict[str, str]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    unknown = set(df['split']) - set(SPLITS)
    if unknown:
        raise ValueError(f"{path}: unknown split names {sorted(unknown)}")
    return dict(zip(df['patient_id'], df['split']))


def pair_slices(record: PatientRecord) -> List[SlicePair]:
    """Slice z of the MRI paired with slice z of the CT, for every z."""
    mri = read_nifti(record.mri_path, ValueKind.RAW_MRI)
    ct = read_nifti(record.ct_path, ValueKind.HU)
    if mri.dims != ct.dims:
        raise PairingError(f"patient {record.patient_id}: MRI dims {mri.dims} differ from CT dims {ct.dims}")
    return [
        SlicePair(record.patient_id, z, m, c)
        for z, (m, c) in enumerate(zip(extract_transverse_slices(mri), extract_transverse_slices(ct)))
    ]
