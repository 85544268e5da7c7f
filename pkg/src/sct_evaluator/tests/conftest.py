import numpy as np
import pytest

from sct_evaluator.analysis.preprocess import preprocess_ct
from sct_evaluator.analysis.segmentation import write_label_map
from sct_evaluator.data.nifti import read_nifti, write_nifti
from sct_evaluator.data.volume import ValueKind, make_volume

DIMS = (32, 32, 8)
PATIENTS = [("P001", "brain", "A"), ("P002", "pelvis", "B"), ("P003", "brain", "C")]


def smooth_ct(rng, dims=DIMS):
    """HU volume with structure along every axis (so SSIM and SIMOS are non-trivial)."""
    x, y, z = np.meshgrid(*(np.linspace(0, 1, n) for n in dims), indexing="ij")
    phase = rng.uniform(0, np.pi)
    body = 600 * np.sin(3 * x + phase) * np.cos(2 * y) + 300 * z
    return (body + rng.normal(0, 80, dims)).astype(np.float32)


def write_patient(root, patient_id, region, hospital, ct, mri=None, mask=None):
    patient_dir = root / patient_id
    patient_dir.mkdir(parents=True, exist_ok=True)
    write_nifti(make_volume(ct, (1.0, 1.0, 2.5), ValueKind.HU), patient_dir / "ct.nii")
    if mri is None:
        mri = (ct + 1000.0) * 0.4
    write_nifti(make_volume(np.asarray(mri, dtype=np.float32), (1.0, 1.0, 2.5)), patient_dir / "mri.nii")
    if mask is not None:
        write_nifti(make_volume(mask.astype(np.float32), (1.0, 1.0, 2.5)), patient_dir / "mask.nii")
    (patient_dir / "meta.txt").write_text(f"region={region}\nhospital={hospital}\n")
    return patient_dir


def organ_mask(ct):
    """Two labels derived from the CT intensities: 1 = bone-like, 2 = soft tissue."""
    mask = np.zeros(ct.shape, dtype=np.int32)
    mask[ct > 400] = 1
    mask[(ct > -100) & (ct <= 100)] = 2
    return mask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dataset_root(tmp_path, rng):
    """Three patients with 32x32x8 CT/MRI volumes and ground-truth masks."""
    root = tmp_path / "dataset"
    for patient_id, region, hospital in PATIENTS:
        ct = smooth_ct(rng)
        write_patient(root, patient_id, region, hospital, ct, mask=organ_mask(ct))
    return root


@pytest.fixture
def write_predictions(tmp_path, dataset_root):
    """
    Factory writing normalized predictions for a model: the preprocessed ground
    truth plus Gaussian noise of the given sigma (0 gives an exact copy).
    """

    def _write(model, sigma=0.0, seed=0, skip=(), masks=True):
        noise_rng = np.random.default_rng(seed)
        model_dir = tmp_path / "predictions" / model
        for patient_id, _, _ in PATIENTS:
            if patient_id in skip:
                continue
            gt = preprocess_ct(read_nifti(dataset_root / patient_id / "ct.nii", ValueKind.HU))
            values = np.asarray(gt.voxels, dtype=np.float64)
            if sigma:
                values = np.clip(values + noise_rng.normal(0, sigma, values.shape), 0.0, 1.0)
            write_nifti(make_volume(values.astype(np.float32), (1.0, 1.0, 2.5)), model_dir / f"{patient_id}.nii")
            if masks:
                ct = np.asarray(read_nifti(dataset_root / patient_id / "ct.nii").voxels)
                for source in ("ground_truth", model):
                    mask_dir = tmp_path / "masks" / source / patient_id
                    mask_dir.mkdir(parents=True, exist_ok=True)
                    for stem in ("seg3d", "seg2d"):
                        write_nifti(make_volume(organ_mask(ct).astype(np.float32)), mask_dir / f"{stem}.nii")
                        write_label_map({1: "bone", 2: "soft_tissue"}, mask_dir / f"{stem}.labels.tsv")
        return tmp_path / "predictions"

    return _write


@pytest.fixture
def config_file(tmp_path, dataset_root):
    """Factory writing a run config next to the dataset; extra keys override defaults."""

    def _write(**extra):
        values = {
            'DATASET_ROOT': "dataset",
            'PREDICTION_DIR': "predictions",
            'MASK_DIR': "masks",
            'MODELS': "identity",
            'SEED': "7",
            'SEG_FRACTION': "1.0",
        }
        values.update({k: str(v) for k, v in extra.items()})
        path = tmp_path / "run.env"
        path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
        return path

    return _write
