"""Virtual specimen: global image, per-pixel hysteresis loops, patches, scalarizers.

The synthetic generator produces a domain-like structural image (smoothed,
soft-thresholded random field) and one hysteresis loop per pixel whose
parameters (saturation, coercive voltage, vertical offset) are smooth
functions of the local domain structure, so the loop-area field correlates
with the structure and gives the surrogate something learnable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from aesim.errors import ConfigurationError, DatasetIOError, DimensionError

MANIFEST_NAME = "manifest.json"
CONTAINER_SCHEMA_VERSION = 1

SCALARIZER_KINDS = ("area", "height", "imprint")


@dataclass(frozen=True)
class GlobalImage:
    """Row-major scalar field playing the role of the structural scan."""

    values: np.ndarray  # (height, width), finite

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"global image must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("global image contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HysteresisLoop:
    """Closed response-vs-bias cycle measured at one pixel.

    The bias sweep runs up branch then down branch and closes on itself
    (first and last bias equal).
    """

    bias: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bias, dtype=np.float64)
        r = np.asarray(self.response, dtype=np.float64)
        if b.ndim != 1 or r.ndim != 1 or b.shape != r.shape:
            raise DimensionError("bias and response must be 1-D arrays of equal length")
        if b.size < 4:
            raise ConfigurationError("hysteresis loop needs at least 4 samples")
        if b[0] != b[-1]:
            raise ConfigurationError("bias sweep must close (first and last bias equal)")
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "response", r)

    def branches(self) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
        """Split the cycle at the extreme bias index into (up, down) branches."""
        split = int(np.argmax(self.bias))
        if split == 0:  # sweep starts at the maximum; split at the minimum instead
            split = int(np.argmin(self.bias))
        up = (self.bias[: split + 1], self.response[: split + 1])
        down = (self.bias[split:], self.response[split:])
        return up, down


@dataclass(frozen=True)
class PatchSet:
    """Valid-mode sliding k x k windows of the global image, flattened row-major.

    ``locations`` holds the center pixel of each window; for even k the center
    convention is offset (k/2 - 1, k/2 - 1) from the window origin.
    """

    patch_size: int
    locations: np.ndarray  # (N, 2) int, (row, col) centers
    patches: np.ndarray  # (N, k*k) float

    def __len__(self) -> int:
        return self.patches.shape[0]


@dataclass
class Dataset:
    """The virtual specimen the engine 'measures'."""

    image: GlobalImage
    bias: np.ndarray  # (n_bias,) shared voltage sweep
    loops: np.ndarray  # (n_pixels, n_bias) responses, row-major pixel order
    latent: np.ndarray | None = None  # optional externally computed (N, 2) coords
    scalar_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_pixels(self) -> int:
        return self.image.height * self.image.width

    def loop_at(self, row: int, col: int) -> HysteresisLoop:
        idx = row * self.image.width + col
        return HysteresisLoop(self.bias, self.loops[idx])

    def scalarizer_field(self, patches: PatchSet, kind: str) -> np.ndarray:
        """Ground-truth scalarizer at every patch center (hidden from the surrogate)."""
        key = (kind, patches.patch_size)
        if key not in self.scalar_cache:
            vals = np.empty(len(patches))
            for i, (r, c) in enumerate(patches.locations):
                vals[i] = scalarize_loop(self.loop_at(int(r), int(c)), kind)
            self.scalar_cache[key] = vals
        return self.scalar_cache[key]


def _domain_field(height, width, domain_scale, rng):
    """Smoothed, soft-thresholded random field in [-1, 1] with stripe/island domains."""
    raw = rng.standard_normal((height, width))
    smooth = gaussian_filter(raw, sigma=domain_scale, mode="wrap")
    smooth = smooth / (np.std(smooth) + 1e-12)
    return np.tanh(2.0 * smooth)


def make_bias_sweep(v_max: float = 4.0, n_half: int = 32) -> np.ndarray:
    """Closed triangular sweep: -v_max -> +v_max -> -v_max."""
    up = np.linspace(-v_max, v_max, n_half)
    down = np.linspace(v_max, -v_max, n_half)
    return np.concatenate([up, down[1:]])


def _loop_response(bias, sat, v_c, width, offset):
    """Two tanh branches: up branch switches at +v_c, down branch at -v_c."""
    split = int(np.argmax(bias))
    resp = np.empty_like(bias)
    resp[: split + 1] = sat * np.tanh((bias[: split + 1] - v_c) / width) + offset
    resp[split + 1 :] = sat * np.tanh((bias[split + 1 :] + v_c) / width) + offset
    return resp


def generate_synthetic_dataset(
    height: int,
    width: int,
    domain_scale: float = 4.0,
    loop_noise: float = 0.02,
    rng_seed: int = 0,
    v_max: float = 4.0,
    n_half: int = 32,
) -> Dataset:
    """Generate a reproducible virtual specimen.

    Loop parameters vary smoothly with the local domain field s in [-1, 1]:
    saturation and coercive voltage both grow with s, so loop area increases
    in one domain type and decreases in the other.
    """
    if height < 16 or width < 16:
        raise ConfigurationError(f"dataset must be at least 16x16, got {height}x{width}")
    if domain_scale <= 0:
        raise ConfigurationError("domain_scale must be positive")
    if loop_noise < 0:
        raise ConfigurationError("loop_noise must be non-negative")

    rng = np.random.default_rng(rng_seed)
    s = _domain_field(height, width, domain_scale, rng)
    texture = gaussian_filter(rng.standard_normal((height, width)), sigma=0.8, mode="wrap")
    image_vals = s + 0.25 * texture

    bias = make_bias_sweep(v_max=v_max, n_half=n_half)
    flat_s = s.ravel()
    sat = 1.0 + 0.5 * flat_s
    v_c = 0.45 * v_max + 0.15 * v_max * flat_s
    loop_w = 0.6 + 0.1 * flat_s
    offset = 0.3 * flat_s

    loops = np.empty((height * width, bias.size))
    for i in range(height * width):
        loops[i] = _loop_response(bias, sat[i], v_c[i], loop_w[i], offset[i])
    if loop_noise > 0:
        loops += loop_noise * rng.standard_normal(loops.shape)

    return Dataset(image=GlobalImage(image_vals), bias=bias, loops=loops)


def structure_functional(image: GlobalImage, sigma: float = 2.0) -> np.ndarray:
    """Smoothed image: the designated structure field the loop parameters follow."""
    return gaussian_filter(image.values, sigma=sigma, mode="wrap")


def extract_patches(image: GlobalImage, k: int) -> PatchSet:
    """Valid-mode stride-1 window extraction, row-major anchor ordering."""
    if k < 1:
        raise ConfigurationError(f"patch size must be >= 1, got {k}")
    if k > min(image.height, image.width):
        raise DimensionError(
            f"patch size {k} exceeds image dimensions {image.height}x{image.width}"
        )
    h, w = image.height, image.width
    n_r, n_c = h - k + 1, w - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(image.values, (k, k))
    patches = windows.reshape(n_r * n_c, k * k).copy()
    off = (k - 1) // 2 if k % 2 == 1 else k // 2 - 1
    rows, cols = np.meshgrid(np.arange(n_r) + off, np.arange(n_c) + off, indexing="ij")
    locations = np.stack([rows.ravel(), cols.ravel()], axis=1)
    return PatchSet(patch_size=k, locations=locations, patches=patches)


def _branch_zero_crossing(bias: np.ndarray, response: np.ndarray) -> float:
    """Bias of the first response zero crossing (linear interpolation), or NaN."""
    sign = np.sign(response)
    for i in range(len(response) - 1):
        if sign[i] == 0:
            return float(bias[i])
        if sign[i] * sign[i + 1] < 0:
            r0, r1 = response[i], response[i + 1]
            t = r0 / (r0 - r1)
            return float(bias[i] + t * (bias[i + 1] - bias[i]))
    if sign[-1] == 0:
        return float(bias[-1])
    return math.nan


def scalarize_loop(loop: HysteresisLoop, kind: str) -> float:
    """Scalar functional of a hysteresis loop: area, height, or imprint.

    area    absolute shoelace polygon area of the (bias, response) cycle
    height  |response difference between branches at the bias nearest 0|
    imprint midpoint (Vc+ + Vc-)/2 of the two branch zero crossings; NaN
            (flagged undefined, never a silent 0) when a branch has none
    """
    if kind == "area":
        x, y = loop.bias, loop.response
        # closed cycle: shoelace over all consecutive segments incl. wrap
        return float(abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) / 2.0)
    (b_up, r_up), (b_dn, r_dn) = loop.branches()
    if kind == "height":
        i_up = int(np.argmin(np.abs(b_up)))
        i_dn = int(np.argmin(np.abs(b_dn)))
        return float(abs(r_dn[i_dn] - r_up[i_up]))
    if kind == "imprint":
        vc_up = _branch_zero_crossing(b_up, r_up)
        vc_dn = _branch_zero_crossing(b_dn, r_dn)
        if math.isnan(vc_up) or math.isnan(vc_dn):
            return math.nan
        return (vc_up + vc_dn) / 2.0
    raise ConfigurationError(f"unknown scalarizer kind {kind!r}; expected one of {SCALARIZER_KINDS}")


# ---------------------------------------------------------------------------
# container I/O: manifest.json + raw little-endian float32 binaries


def _write_array(path, arr):
    np.asarray(arr, dtype="<f4").tofile(path)


def _read_array(path, shape, name):
    expected = int(np.prod(shape)) * 4
    data = path.read_bytes()
    if len(data) != expected:
        raise DatasetIOError(
            f"array {name!r}: expected {expected} bytes for shape {tuple(shape)}, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise DatasetIOError(f"array {name!r} contains non-finite values")
    return arr


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset container (manifest + raw float32 LE arrays)."""
    from pathlib import Path

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = {
        "image": np.asarray(dataset.image.values),
        "bias": np.asarray(dataset.bias),
        "loops": np.asarray(dataset.loops),
    }
    if dataset.latent is not None:
        arrays["latent"] = np.asarray(dataset.latent)
    manifest = {
        "schema_version": CONTAINER_SCHEMA_VERSION,
        "byte_order": "little",
        "dtype": "float32",
        "layout": "row-major",
        "arrays": {name: {"file": f"{name}.bin", "shape": list(a.shape)} for name, a in arrays.items()},
    }
    for name, a in arrays.items():
        _write_array(root / f"{name}.bin", a)
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def load_dataset(path) -> Dataset:
    """Load a dataset container, validating shapes and finiteness."""
    from pathlib import Path

    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetIOError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"malformed manifest: {exc}") from exc
    if manifest.get("schema_version") != CONTAINER_SCHEMA_VERSION:
        raise DatasetIOError(f"unsupported schema version {manifest.get('schema_version')}")
    entries = manifest.get("arrays", {})
    for required in ("image", "bias", "loops"):
        if required not in entries:
            raise DatasetIOError(f"manifest missing required array {required!r}")

    arrays = {}
    for name, entry in entries.items():
        f = root / entry["file"]
        if not f.is_file():
            raise DatasetIOError(f"array {name!r}: missing file {entry['file']}")
        arrays[name] = _read_array(f, entry["shape"], name)

    image = GlobalImage(arrays["image"])
    bias = arrays["bias"]
    loops = arrays["loops"]
    if loops.ndim != 2:
        raise DatasetIOError(f"array 'loops' must be 2-D, got shape {loops.shape}")
    if loops.shape[0] != image.height * image.width:
        raise DatasetIOError(
            f"array 'loops': {loops.shape[0]} loops for {image.height * image.width} pixels"
        )
    if loops.shape[1] != bias.size:
        raise DatasetIOError(
            f"array 'loops': {loops.shape[1]} samples per loop but bias has {bias.size}"
        )
    latent = arrays.get("latent")
    if latent is not None and (latent.ndim != 2 or latent.shape[1] != 2):
        raise DatasetIOError(f"array 'latent' must have shape [N, 2], got {latent.shape}")
    return Dataset(image=image, bias=bias, loops=loops, latent=latent)
