import numpy as np
import pytest

from sct_evaluator.data.dataset import (
    PatientRecord,
    Region,
    apportion,
    build_manifest,
    pair_slices,
    read_manifest,
    read_split,
    scan_dataset,
    stratified_split,
    write_manifest,
    write_split,
)
from sct_evaluator.data.nifti import write_nifti
from sct_evaluator.data.volume import make_volume
from sct_evaluator.errors import PairingError

from conftest import smooth_ct, write_patient


def _synthetic_manifest(per_stratum=60):
    records = []
    for region in ("brain", "pelvis"):
        for hospital in ("A", "B", "C"):
            for i in range(per_stratum):
                pid = f"{region[0].upper()}{hospital}{i:03d}"
                records.append(PatientRecord(pid, region, hospital, f"/d/{pid}/mri.nii", f"/d/{pid}/ct.nii"))
    return records


def test_build_manifest_sorted_records(dataset_root):
    records = build_manifest(dataset_root)
    assert [r.patient_id for r in records] == ["P001", "P002", "P003"]
    assert records[1].region == Region.PELVIS
    assert records[1].hospital == "B"
    assert records[0].mask_path is not None


def test_manifest_excludes_incomplete_patients(dataset_root):
    (dataset_root / "P002" / "mri.nii").unlink()
    (dataset_root / "P004").mkdir()
    scan = scan_dataset(dataset_root)
    assert [r.patient_id for r in scan.records] == ["P001", "P003"]
    assert "mri" in scan.exclusions["P002"]
    assert "P004" in scan.exclusions


def test_manifest_excludes_bad_metadata(dataset_root):
    (dataset_root / "P003" / "meta.txt").write_text("region=knee\nhospital=A\n")
    scan = scan_dataset(dataset_root)
    assert "P003" in scan.exclusions
    assert len(scan.records) == 2


def test_manifest_dims_mismatch_names_patient(dataset_root):
    write_nifti(make_volume(np.zeros((8, 8, 8), dtype=np.float32)), dataset_root / "P002" / "mri.nii")
    with pytest.raises(PairingError, match="P002"):
        build_manifest(dataset_root)


def test_empty_root_gives_empty_manifest(tmp_path):
    assert build_manifest(tmp_path) == []


def test_missing_root_raises(tmp_path):
    with pytest.raises(NotADirectoryError):
        build_manifest(tmp_path / "nope")


def test_manifest_csv_round_trip(dataset_root, tmp_path):
    records = build_manifest(dataset_root)
    write_manifest(records, tmp_path / "manifest.csv")
    header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
    assert header == "patient_id,region,hospital,mri_path,ct_path,mask_path"
    assert read_manifest(tmp_path / "manifest.csv") == records


def test_patient_record_validation():
    with pytest.raises(ValueError):
        PatientRecord("X", "brain", "D", "/a/mri.nii", "/a/ct.nii")
    with pytest.raises(ValueError):
        PatientRecord("X", "brain", "A", "/a/same.nii", "/a/same.nii")
    with pytest.raises(ValueError):
        PatientRecord("X", "thorax", "A", "/a/mri.nii", "/a/ct.nii")


@pytest.mark.parametrize("n, expected", [
    (60, [42, 9, 9]),
    (10, [7, 2, 1]),
    (3, [2, 1, 0]),
    (2, [2, 0, 0]),
    (0, [0, 0, 0]),
])
def test_apportion(n, expected):
    assert apportion(n, (0.7, 0.15, 0.15)) == expected


def test_split_counts_per_stratum():
    manifest = _synthetic_manifest()
    split = stratified_split(manifest, (0.7, 0.15, 0.15), seed=2024)
    assert set(split.assignment) == {r.patient_id for r in manifest}
    for region in ("brain", "pelvis"):
        for hospital in ("A", "B", "C"):
            stratum = [r.patient_id for r in manifest if r.stratum == (region, hospital)]
            counts = [sum(split.assignment[p] == s for p in stratum) for s in ("train", "val", "test")]
            assert counts == [42, 9, 9]


def test_split_has_no_leakage_and_is_deterministic():
    manifest = _synthetic_manifest()
    a = stratified_split(manifest, seed=1)
    b = stratified_split(list(reversed(manifest)), seed=1)
    assert a.assignment == b.assignment
    train, val, test = (set(a.patients_in(s)) for s in ("train", "val", "test"))
    assert not (train & val or train & test or val & test)
    assert len(train | val | test) == 360


def test_split_depends_on_seed():
    manifest = _synthetic_manifest()
    assert stratified_split(manifest, seed=1).assignment != stratified_split(manifest, seed=2).assignment


def test_split_reference_assignment():
    manifest = [PatientRecord(f"P{i:02d}", "brain", "A", f"/d/P{i:02d}/mri.nii", f"/d/P{i:02d}/ct.nii")
                for i in range(1, 11)]
    split = stratified_split(manifest, (0.7, 0.15, 0.15), seed=7)
    assert split.patients_in("train") == ["P01", "P03", "P04", "P05", "P06", "P07", "P10"]
    assert split.patients_in("val") == ["P08", "P09"]
    assert split.patients_in("test") == ["P02"]


def test_small_stratum_warns(caplog):
    manifest = _synthetic_manifest(per_stratum=2)
    split = stratified_split(manifest, seed=0)
    assert split.counts()['train'] == 12
    assert "Stratum" in caplog.text


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.8, 0.15, 0.15), (1.0, 0.0, 0.0)])
def test_split_rejects_bad_ratios(ratios):
    with pytest.raises(ValueError):
        stratified_split(_synthetic_manifest(2), ratios, seed=0)


def test_split_csv_sorted(tmp_path):
    split = stratified_split(_synthetic_manifest(5), seed=3)
    write_split(split, tmp_path / "split.csv")
    lines = (tmp_path / "split.csv").read_text().splitlines()
    assert lines[0] == "patient_id,split"
    ids = [line.split(",")[0] for line in lines[1:]]
    assert ids == sorted(ids)
    assert read_split(tmp_path / "split.csv") == split.assignment


def test_pair_slices(tmp_path, rng):
    ct = smooth_ct(rng, (8, 8, 5))
    write_patient(tmp_path / "ds", "Q1", "pelvis", "A", ct)
    record = build_manifest(tmp_path / "ds")[0]
    pairs = pair_slices(record)
    assert [p.index for p in pairs] == [0, 1, 2, 3, 4]
    np.testing.assert_array_equal(pairs[2].ct.pixels, ct[:, :, 2])
    np.testing.assert_allclose(pairs[2].mri.pixels, (ct[:, :, 2] + 1000.0) * 0.4, rtol=1e-6)
    assert all(p.patient_id == "Q1" for p in pairs)
