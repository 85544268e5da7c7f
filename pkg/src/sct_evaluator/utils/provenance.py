"""Content hashes that tie a report to its configuration and input data."""

import hashlib
from typing import Iterable, Sequence, Tuple

from ..data.dataset import PatientRecord


def _sha256_lines(lines: Iterable[str]) -> str:
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def config_hash(items: Sequence[Tuple[str, str]]) -> str:
    """SHA-256 of the sorted KEY=value rendering."""
    return _sha256_lines(f"{key}={value}" for key, value in sorted(items))


def dataset_hash(records: Sequence[PatientRecord]) -> str:
    """
    SHA-256 over each patient's id, region, hospital and the names and byte
    sizes of its files. Moving the dataset root does not change the hash.
    """
    lines = []
    for record in sorted(records, key=lambda r: r.patient_id):
        parts = [record.patient_id, record.region.value, record.hospital]
        for path in (record.mri_path, record.ct_path, record.mask_path):
            if path is None:
                parts.append("-")
            else:
                size = path.stat().st_size if path.exists() else -1
                parts.append(f"{path.name}:{size}")
        lines.append("|".join(parts))
    return _sha256_lines(lines)
