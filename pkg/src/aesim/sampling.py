"""Probabilistic sampling models over latent space.

Seed initialization models: GD (Gaussian KDE over the latent distribution),
UD (uniform over the KDE support), ULS (uniform over the inflated latent
bounding box). Intervention models: regional exclusion (base model with
zero probability inside excluded balls) and regional prioritizing (KDE over
the points inside an operator-chosen region). Every model produces real
patch indices by snapping sampled latent points to their nearest neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath

from aesim.errors import SamplingError
from aesim.latent import LatentEmbedding, nearest_indices

DEFAULT_SUPPORT_THRESHOLD = 0.05  # UD: density >= eps * max center density
DEFAULT_BBOX_MARGIN = 0.05  # ULS: bounding-box inflation per side
MAX_PROPOSALS = 1_000_000
MIN_ACCEPT_RATE = 1e-4


@dataclass(frozen=True)
class KdeModel:
    """Isotropic Gaussian KDE with centers in latent space."""

    centers: np.ndarray  # (m, 2)
    bandwidth: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if c.shape[0] == 0:
            raise SamplingError("KDE needs at least one center")
        if self.bandwidth <= 0:
            raise SamplingError(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "centers", c)


def scott_bandwidth(coords: np.ndarray) -> float:
    """Scott-style rule for 2-D data: n^(-1/6) times the geometric mean of per-axis std."""
    c = np.atleast_2d(coords)
    n = c.shape[0]
    stds = np.std(c, axis=0)
    geo = float(np.sqrt(np.prod(np.maximum(stds, 1e-12))))
    return max(n ** (-1.0 / 6.0) * geo, 1e-12)


def kde_density(model: KdeModel, z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise SamplingError(f"density query must be a finite 2-D point, got {z!r}")
    return float(kde_density_many(model, z[None, :])[0])


def kde_density_many(model: KdeModel, z: np.ndarray) -> np.ndarray:
    """Vectorized KDE density over an (M, 2) batch."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    c = model.centers
    h2 = model.bandwidth**2
    d2 = (z**2).sum(axis=1)[:, None] + (c**2).sum(axis=1)[None, :] - 2.0 * (z @ c.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * h2)).sum(axis=1) / (c.shape[0] * 2.0 * math.pi * h2)


def max_center_density(model: KdeModel) -> float:
    """Maximum KDE density over the centers themselves (support normalizer for UD)."""
    return float(np.max(kde_density_many(model, model.centers)))


# ---------------------------------------------------------------------------
# region specification (shared schema with the service API and UI)


@dataclass(frozen=True)
class Region:
    """Rectangle (z-min/z-max per axis) or lasso polygon (vertex list) in latent space."""

    kind: str  # "rectangle" | "polygon"
    z1_min: float = 0.0
    z1_max: float = 0.0
    z2_min: float = 0.0
    z2_max: float = 0.0
    vertices: tuple = ()

    @classmethod
    def rectangle(cls, z1_min, z1_max, z2_min, z2_max) -> "Region":
        if z1_max <= z1_min or z2_max <= z2_min:
            raise SamplingError("rectangle region must have positive extent on both axes")
        return cls(kind="rectangle", z1_min=z1_min, z1_max=z1_max, z2_min=z2_min, z2_max=z2_max)

    @classmethod
    def polygon(cls, vertices) -> "Region":
        verts = tuple(tuple(map(float, v)) for v in vertices)
        if len(verts) < 3:
            raise SamplingError("polygon region needs at least 3 vertices")
        return cls(kind="polygon", vertices=verts)

    @classmethod
    def from_dict(cls, spec: dict) -> "Region":
        if spec.get("kind") == "rectangle":
            try:
                return cls.rectangle(spec["z1_min"], spec["z1_max"], spec["z2_min"], spec["z2_max"])
            except KeyError as exc:
                raise SamplingError(f"rectangle region missing field {exc}") from exc
        if spec.get("kind") == "polygon":
            if "vertices" not in spec:
                raise SamplingError("polygon region missing field 'vertices'")
            return cls.polygon(spec["vertices"])
        raise SamplingError(f"unknown region kind {spec.get('kind')!r}")

    def to_dict(self) -> dict:
        if self.kind == "rectangle":
            return {
                "kind": "rectangle",
                "z1_min": self.z1_min,
                "z1_max": self.z1_max,
                "z2_min": self.z2_min,
                "z2_max": self.z2_max,
            }
        return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind == "rectangle":
            return (
                (pts[:, 0] >= self.z1_min)
                & (pts[:, 0] <= self.z1_max)
                & (pts[:, 1] >= self.z2_min)
                & (pts[:, 1] <= self.z2_max)
            )
        return MplPath(np.asarray(self.vertices)).contains_points(pts)

    def bounds(self) -> str:
        if self.kind == "rectangle":
            return f"z1 in [{self.z1_min}, {self.z1_max}], z2 in [{self.z2_min}, {self.z2_max}]"
        return f"polygon with {len(self.vertices)} vertices"


# ---------------------------------------------------------------------------
# sampling models


@dataclass
class SamplingModel:
    """A probability model over latent space yielding patch indices via snapping."""

    kind: str  # gd | ud | uls | exclusion | prioritizing
    kde: KdeModel | None = None
    bbox_min: np.ndarray | None = None
    bbox_max: np.ndarray | None = None
    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD
    exclusion_zones: list = field(default_factory=list)  # [(center (2,), radius)]
    base_kind: str = "ud"
    region: Region | None = None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise SamplingError(f"sample count must be >= 1, got {n}")
        if self.kind != "exclusion" and self.exclusion_zones:
            raise SamplingError("exclusion zones only valid on kind='exclusion'")
        if self.kind in ("gd", "prioritizing"):
            pts = sample_gd(self.kde, n, rng)
        elif self.kind == "ud":
            pts = _sample_ud_points(self, n, rng)
        elif self.kind == "uls":
            pts = rng.uniform(self.bbox_min, self.bbox_max, size=(n, 2))
        elif self.kind == "exclusion":
            pts = _sample_excluded(self, n, rng)
        else:
            raise SamplingError(f"unknown sampling model kind {self.kind!r}")
        return pts


def build_gd_model(embedding: LatentEmbedding, bandwidth: float | None = None) -> SamplingModel:
    h = bandwidth if bandwidth is not None else scott_bandwidth(embedding.coords)
    return SamplingModel(kind="gd", kde=KdeModel(embedding.coords, h))


def build_ud_model(
    embedding: LatentEmbedding,
    bandwidth: float | None = None,
    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD,
) -> SamplingModel:
    if not 0 < support_threshold < 1:
        raise SamplingError("support threshold must lie in (0, 1)")
    h = bandwidth if bandwidth is not None else scott_bandwidth(embedding.coords)
    kde = KdeModel(embedding.coords, h)
    lo = embedding.coords.min(axis=0) - 3.0 * h
    hi = embedding.coords.max(axis=0) + 3.0 * h
    return SamplingModel(
        kind="ud", kde=kde, bbox_min=lo, bbox_max=hi, support_threshold=support_threshold
    )


def build_uls_model(embedding: LatentEmbedding, margin: float = DEFAULT_BBOX_MARGIN) -> SamplingModel:
    lo = embedding.coords.min(axis=0)
    hi = embedding.coords.max(axis=0)
    span = hi - lo
    return SamplingModel(kind="uls", bbox_min=lo - margin * span, bbox_max=hi + margin * span)


def sample_gd(model: KdeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact KDE sampling: uniform center choice plus Gaussian noise of std h."""
    if n < 1:
        raise SamplingError(f"sample count must be >= 1, got {n}")
    idx = rng.integers(0, model.centers.shape[0], size=n)
    return model.centers[idx] + model.bandwidth * rng.standard_normal((n, 2))


def _rejection_sample(n, rng, propose, accept):
    """Generic chunked rejection sampler with an acceptance-rate guard."""
    out = []
    got = 0
    proposed = 0
    chunk = min(max(4 * n, 256), 32_768)
    while got < n:
        pts = propose(chunk, rng)
        keep = pts[accept(pts)]
        proposed += len(pts)
        got += len(keep)
        out.append(keep)
        if proposed >= MAX_PROPOSALS and got / proposed < MIN_ACCEPT_RATE:
            raise SamplingError(
                f"support too small: acceptance rate {got / proposed:.2e} "
                f"over {proposed} proposals"
            )
    return np.concatenate(out)[:n]


def _ud_accept(model: SamplingModel):
    threshold = model.support_threshold * max_center_density(model.kde)
    return lambda pts: kde_density_many(model.kde, pts) >= threshold


def _sample_ud_points(model: SamplingModel, n, rng):
    propose = lambda m, r: r.uniform(model.bbox_min, model.bbox_max, size=(m, 2))
    return _rejection_sample(n, rng, propose, _ud_accept(model))


def sample_ud(model: SamplingModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if model.kind != "ud":
        raise SamplingError(f"sample_ud needs a UD model, got {model.kind!r}")
    return _sample_ud_points(model, n, rng)


def sample_uls(
    embedding: LatentEmbedding,
    n: int,
    rng: np.random.Generator,
    margin: float = DEFAULT_BBOX_MARGIN,
) -> np.ndarray:
    return build_uls_model(embedding, margin=margin).sample(n, rng)


def _outside_exclusions(zones):
    def accept(pts):
        ok = np.ones(pts.shape[0], dtype=bool)
        for center, radius in zones:
            ok &= np.sum((pts - center) ** 2, axis=1) > radius**2
        return ok

    return accept


def _sample_excluded(model: SamplingModel, n, rng):
    outside = _outside_exclusions(model.exclusion_zones)
    if model.base_kind == "ud":
        base_accept = _ud_accept(model)
        propose = lambda m, r: r.uniform(model.bbox_min, model.bbox_max, size=(m, 2))
        return _rejection_sample(n, rng, propose, lambda pts: base_accept(pts) & outside(pts))
    if model.base_kind == "gd":
        propose = lambda m, r: sample_gd(model.kde, m, r)
        return _rejection_sample(n, rng, propose, outside)
    if model.base_kind == "uls":
        propose = lambda m, r: r.uniform(model.bbox_min, model.bbox_max, size=(m, 2))
        return _rejection_sample(n, rng, propose, outside)
    raise SamplingError(f"unknown exclusion base kind {model.base_kind!r}")


def build_exclusion_model(
    embedding: LatentEmbedding,
    trapped_centers: np.ndarray,
    radius: float,
    base_kind: str = "ud",
    bandwidth: float | None = None,
    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD,
) -> SamplingModel:
    """Base sampling model whose acceptance additionally rejects excluded balls."""
    if radius <= 0:
        raise SamplingError(f"exclusion radius must be positive, got {radius}")
    centers = np.atleast_2d(np.asarray(trapped_centers, dtype=np.float64))
    zones = [(centers[i].copy(), float(radius)) for i in range(centers.shape[0])]

    if base_kind == "uls":
        base = build_uls_model(embedding)
    elif base_kind == "gd":
        base = build_gd_model(embedding, bandwidth=bandwidth)
    else:
        base = build_ud_model(embedding, bandwidth=bandwidth, support_threshold=support_threshold)

    model = SamplingModel(
        kind="exclusion",
        kde=base.kde,
        bbox_min=base.bbox_min,
        bbox_max=base.bbox_max,
        support_threshold=base.support_threshold,
        exclusion_zones=zones,
        base_kind=base_kind,
    )

    # construction-time support check: some embedding point must remain reachable
    outside = _outside_exclusions(zones)(embedding.coords)
    if base_kind == "ud":
        threshold = support_threshold * max_center_density(model.kde)
        outside &= kde_density_many(model.kde, embedding.coords) >= threshold
    if not np.any(outside):
        raise SamplingError("exclusion zones cover the entire sampling support")
    return model


def build_prioritizing_model(
    embedding: LatentEmbedding, region: Region, bandwidth: float | None = None
) -> SamplingModel:
    """KDE fitted only to the embedding points inside the operator-chosen region."""
    inside = region.contains(embedding.coords)
    if not np.any(inside):
        raise SamplingError(f"prioritizing region contains no latent points: {region.bounds()}")
    pts = embedding.coords[inside]
    if bandwidth is None:
        if pts.shape[0] >= 2 and np.all(np.std(pts, axis=0) > 0):
            bandwidth = scott_bandwidth(pts)
        else:
            # single point (or collinear degenerate): vanishing spread
            span = float(np.max(embedding.coords.max(axis=0) - embedding.coords.min(axis=0)))
            bandwidth = max(1e-9 * max(span, 1.0), 1e-12)
    return SamplingModel(kind="prioritizing", kde=KdeModel(pts, bandwidth), region=region)


def model_allowed_mask(model: SamplingModel | None, embedding: LatentEmbedding) -> np.ndarray:
    """Embedding indices a model's samples may snap to.

    Exclusion models forbid snapping into the excluded balls (otherwise a
    sample just outside a ball could land on a patch inside it); every other
    model allows all indices.
    """
    mask = np.ones(len(embedding), dtype=bool)
    if model is not None and model.kind == "exclusion":
        mask = _outside_exclusions(model.exclusion_zones)(embedding.coords)
        if not np.any(mask):
            raise SamplingError("exclusion zones cover every latent point")
    return mask


def _masked_nearest(embedding: LatentEmbedding, pts: np.ndarray, mask: np.ndarray) -> np.ndarray:
    allowed = np.nonzero(mask)[0]
    sub = LatentEmbedding(coords=embedding.coords[allowed], source=embedding.source)
    return allowed[nearest_indices(sub, pts)]


def snap_to_indices(
    embedding: LatentEmbedding,
    points: np.ndarray,
    dedupe: bool = False,
    model: SamplingModel | None = None,
    rng: np.random.Generator | None = None,
    occupied: set | None = None,
    max_retries: int = 200,
) -> np.ndarray:
    """Snap latent points to nearest patch indices.

    With dedupe, colliding indices (and any in ``occupied``) are replaced by
    resampling from the generating model until distinct, within a bounded
    retry budget; the first occurrence of each index is preserved.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.all(np.isfinite(pts)):
        raise SamplingError("cannot snap non-finite latent points")
    mask = model_allowed_mask(model, embedding)
    idx = _masked_nearest(embedding, pts, mask)
    if not dedupe:
        return idx
    if model is None or rng is None:
        raise SamplingError("dedupe requires the generating model and an RNG stream")
    taken = set(occupied) if occupied else set()
    out = np.empty(len(idx), dtype=int)
    for i, j in enumerate(idx):
        j = int(j)
        retries = 0
        while j in taken:
            retries += 1
            if retries > max_retries:
                raise SamplingError(
                    f"could not find {len(idx)} distinct unmeasured indices "
                    f"within {max_retries} retries"
                )
            j = int(_masked_nearest(embedding, model.sample(1, rng), mask)[0])
        taken.add(j)
        out[i] = j
    return out
