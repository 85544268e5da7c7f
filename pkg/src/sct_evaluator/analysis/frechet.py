"""
Fréchet distance between Gaussians fitted to slice embeddings (FID).

The feature extractor is pluggable. The built-in `downsample-8x8` embedder
(block means on an 8x8 grid) is deterministic and self-contained; features from
any external network can be supplied through the binary embedding file format:

    little-endian header: count (u64), dim (u64)
    payload:              count * dim float32 values, row-major
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Sequence, Union

import numpy as np
from scipy import linalg

from ..data.volume import Slice
from ..errors import DimensionError, EmbeddingError, InsufficientDataError, NumericError, TruncatedPayloadError

COVARIANCE_EPS = 1e-6
EIGENVALUE_FLOOR = 1e-9
EMBEDDING_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    vectors: np.ndarray
    embedder_id: str

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionError(f"embedding vectors must form a 2D array, got shape {vectors.shape}")
        if vectors.shape[1] < 2:
            raise DimensionError(f"embedding dimension must be at least 2, got {vectors.shape[1]}")
        object.__setattr__(self, "vectors", vectors)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def concatenate(cls, sets: Sequence["EmbeddingSet"]) -> "EmbeddingSet":
        if not sets:
            raise InsufficientDataError("no embedding sets to pool")
        ids = {s.embedder_id for s in sets}
        if len(ids) != 1:
            raise EmbeddingError(f"cannot pool embeddings from different embedders: {sorted(ids)}")
        return cls(np.concatenate([s.vectors for s in sets], axis=0), ids.pop())


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class BlockMeanEmbedder:
    """
    Mean intensity of each cell of a grid x grid partition of the slice.

    Cells follow numpy.array_split, so dimensions need not be divisible by the
    grid size; for a 64x64 slice and grid 8 every cell is an 8x8 block.
    """

    def __init__(self, grid: int = 8):
        if grid < 2:
            raise ValueError("grid must be at least 2")
        self.grid = grid
        self.embedder_id = f"downsample-{grid}x{grid}"

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 2 or min(pixels.shape) < self.grid:
            raise DimensionError(f"slice {pixels.shape} is too small for a {self.grid}x{self.grid} grid")
        rows = np.array_split(pixels, self.grid, axis=0)
        return np.array([block.mean() for row in rows for block in np.array_split(row, self.grid, axis=1)])


EMBEDDERS: Dict[str, Callable[[], BlockMeanEmbedder]] = {
    "downsample-8x8": lambda: BlockMeanEmbedder(8),
    "downsample-4x4": lambda: BlockMeanEmbedder(4),
}


def get_embedder(name: str) -> BlockMeanEmbedder:
    if name not in EMBEDDERS:
        raise EmbeddingError(f"unknown embedder '{name}'; available: {sorted(EMBEDDERS)}")
    return EMBEDDERS[name]()


def embed_slices(slices: Sequence[Union[Slice, np.ndarray]], embedder=None) -> EmbeddingSet:
    """One feature vector per slice, in input order."""
    if not slices:
        raise InsufficientDataError("embed_slices needs at least one slice")
    embedder = embedder or BlockMeanEmbedder(8)
    embedder_id = getattr(embedder, "embedder_id", type(embedder).__name__)
    vectors = []
    for i, s in enumerate(slices):
        pixels = s.pixels if isinstance(s, Slice) else s
        try:
            vectors.append(np.asarray(embedder(pixels), dtype=np.float64).ravel())
        except Exception as e:
            raise EmbeddingError(f"embedder '{embedder_id}' failed on slice {i}: {e}") from e
    if len({v.shape for v in vectors}) != 1:
        raise EmbeddingError(f"embedder '{embedder_id}' produced vectors of different lengths")
    return EmbeddingSet(np.vstack(vectors), embedder_id)


def fit_gaussian(embeddings: EmbeddingSet) -> GaussianStats:
    """
    Sample mean and unbiased covariance of the embeddings.

    The covariance is symmetrized; if its smallest eigenvalue is below 1e-9 it
    is regularized with 1e-6 * I.
    """
    if embeddings.count < 2:
        raise InsufficientDataError(f"need at least 2 vectors to fit a Gaussian, got {embeddings.count}")
    vectors = embeddings.vectors
    if not np.all(np.isfinite(vectors)):
        raise NumericError("embeddings contain non-finite values")
    mean = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False, ddof=1)
    cov = (cov + cov.T) / 2.0
    if embeddings.count < embeddings.dim + 1:
        logging.debug(f"Fitting {embeddings.dim}-dim Gaussian from only {embeddings.count} vectors")
    if linalg.eigvalsh(cov)[0] < EIGENVALUE_FLOOR:
        cov = cov + COVARIANCE_EPS * np.eye(cov.shape[0])
    return GaussianStats(mean=mean, covariance=cov)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues are clipped to 0."""
    eigenvalues, eigenvectors = linalg.eigh((matrix + matrix.T) / 2.0)
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * root) @ eigenvectors.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
    """
    if a.dim != b.dim or a.covariance.shape != b.covariance.shape:
        raise DimensionError(f"Gaussian dimensions differ: {a.dim} vs {b.dim}")
    for stats in (a, b):
        if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.covariance))):
            raise NumericError("Gaussian statistics contain non-finite values")

    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.covariance)
    middle = root_a @ b.covariance @ root_a
    middle = (middle + middle.T) / 2.0
    cross = np.sqrt(np.clip(linalg.eigvalsh(middle), 0.0, None)).sum()
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    if not np.isfinite(value):
        raise NumericError("Fréchet distance is not finite")
    return max(value, 0.0)


def fid(reference: EmbeddingSet, synthetic: EmbeddingSet) -> float:
    """Fréchet distance between Gaussians fitted to two embedding sets."""
    if reference.embedder_id != synthetic.embedder_id:
        logging.warning(
            f"Comparing embeddings from '{reference.embedder_id}' and '{synthetic.embedder_id}'"
        )
    return frechet_distance(fit_gaussian(reference), fit_gaussian(synthetic))


def read_embeddings(path: Union[str, Path], embedder_id: str = "external") -> EmbeddingSet:
    """Load an external embedding file (u64 count, u64 dim, float32 row-major payload)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < EMBEDDING_HEADER.size:
        raise TruncatedPayloadError(f"{path}: embedding header needs {EMBEDDING_HEADER.size} bytes")
    count, dim = EMBEDDING_HEADER.unpack_from(raw)
    needed = EMBEDDING_HEADER.size + count * dim * 4
    if len(raw) < needed:
        raise TruncatedPayloadError(f"{path}: payload needs {needed} bytes, file has {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=EMBEDDING_HEADER.size)
    return EmbeddingSet(values.astype(np.float64).reshape(count, dim), embedder_id)


def write_embeddings(embeddings: EmbeddingSet, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes()
    path.write_bytes(EMBEDDING_HEADER.pack(embeddings.count, embeddings.dim) + payload)
