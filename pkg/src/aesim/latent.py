"""2-D latent representation of patches: PCA embedding, external ingestion, snapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from aesim.dataset import PatchSet
from aesim.errors import EmbeddingError


@dataclass(frozen=True)
class LatentEmbedding:
    """N x 2 latent coordinates (z1, z2) for every patch.

    When source == "pca" the fitted transform (mean vector + two orthonormal
    component directions) is kept so the embedding is reproducible.
    """

    coords: np.ndarray  # (N, 2)
    source: str  # "pca" | "external"
    mean: np.ndarray | None = None  # (d,) when source == "pca"
    components: np.ndarray | None = None  # (2, d) orthonormal rows when source == "pca"

    def __len__(self) -> int:
        return self.coords.shape[0]


class LatentDistribution:
    """Embedding plus cached bounding box and pairwise-distance percentiles.

    The percentiles supply default radii for exclusion zones and the
    stagnation detector.
    """

    def __init__(self, embedding: LatentEmbedding):
        self.embedding = embedding
        c = embedding.coords
        self.bbox_min = c.min(axis=0)
        self.bbox_max = c.max(axis=0)
        self._pairwise_sorted = np.sort(pdist(c))

    def pairwise_percentile(self, pct: float) -> float:
        """Percentile of all pairwise latent distances."""
        return float(np.percentile(self._pairwise_sorted, pct))


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each component's largest-magnitude entry positive (deterministic sign)."""
    out = components.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def pca_embed(patches: PatchSet) -> LatentEmbedding:
    """Project patches onto the two leading principal directions.

    Components are ordered by descending eigenvalue; eigenvector signs follow
    the largest-magnitude-entry-positive convention so repeated calls are
    bit-identical.
    """
    x = np.asarray(patches.patches, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise EmbeddingError(f"need at least 3 patches for PCA, got {n}")
    if not np.all(np.isfinite(x)):
        raise EmbeddingError("patch vectors contain non-finite values")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    if evals[order[0]] <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise EmbeddingError("degenerate embedding: all patches identical (rank-0 data)")
    components = _fix_signs(evecs[:, order[:2]].T)
    coords = xc @ components.T
    return LatentEmbedding(coords=coords, source="pca", mean=mean, components=components)


def ingest_external_embedding(path, n_expected: int) -> LatentEmbedding:
    """Read externally computed latent coordinates (raw little-endian float32).

    No recentering is applied; the file must hold exactly n_expected rows of
    two coordinates.
    """
    from pathlib import Path

    data = Path(path).read_bytes()
    expected = n_expected * 2 * 4
    if len(data) != expected:
        raise EmbeddingError(
            f"latent file holds {len(data) // 8} rows, expected {n_expected}"
        )
    coords = np.frombuffer(data, dtype="<f4").reshape(n_expected, 2).astype(np.float64)
    bad = np.nonzero(~np.isfinite(coords).all(axis=1))[0]
    if bad.size:
        raise EmbeddingError(f"non-finite latent coordinates at row {int(bad[0])}")
    return LatentEmbedding(coords=coords, source="external")


def save_embedding(embedding: LatentEmbedding, path) -> None:
    """Write coords as raw little-endian float32 (the `latent.bin` layout)."""
    from pathlib import Path

    Path(path).write_bytes(np.asarray(embedding.coords, dtype="<f4").tobytes())


def nearest_index(embedding: LatentEmbedding, query) -> int:
    """Index of the Euclidean-nearest latent point; ties break to the smallest index."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (2,) or not np.all(np.isfinite(q)):
        raise EmbeddingError(f"query must be a finite 2-D point, got {query!r}")
    d2 = np.sum((embedding.coords - q) ** 2, axis=1)
    return int(np.argmin(d2))


def nearest_indices(embedding: LatentEmbedding, queries: np.ndarray) -> np.ndarray:
    """Vectorized nearest_index over an (M, 2) batch of queries."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 2 or not np.all(np.isfinite(q)):
        raise EmbeddingError("queries must be a finite (M, 2) array")
    d2 = ((q[:, None, :] - embedding.coords[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)
