"""Experiment loop: seed init, BO steps, interventions, stagnation, batch studies.

One experiment owns a mutable ExperimentState; every measurement appends a
trace record and a learning-curve entry and retrains the surrogate (warm
start). Batch studies run the bifurcated-branch protocol: each rep runs to
the bifurcation step, then continues once with an intervention and once
untouched.
"""

from __future__ import annotations

import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from aesim.acquisition import AcquisitionConfig, acquisition_values, select_next
from aesim.dataset import Dataset, extract_patches
from aesim.errors import CheckpointError, ConfigurationError, ExperimentError, SamplingError
from aesim.latent import LatentDistribution, LatentEmbedding
from aesim.sampling import (
    Region,
    build_exclusion_model,
    build_gd_model,
    build_prioritizing_model,
    build_ud_model,
    build_uls_model,
    snap_to_indices,
)
from aesim import surrogate
from aesim.surrogate import TrainOpts

SEED_MODELS = ("gd", "ud", "uls", "random")
STATE_VERSION = 1

# named RNG substreams of the master seed
_STREAMS = {"seeding": 0, "surrogate": 1, "sampling": 2}


@dataclass(frozen=True)
class StagnationParams:
    window: int = 10
    radius_pct: float = 5.0
    frac: float = 0.8
    consecutive: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    seed_model: str = "gd"
    n_seed: int = 5
    budget: int = 55
    scalarizer: str = "area"
    patch_size: int = 8
    train_iters: int = 200
    train_step_size: float = 0.01
    stagnation: StagnationParams = field(default_factory=StagnationParams)
    master_seed: int = 0

    def __post_init__(self):
        if self.seed_model not in SEED_MODELS:
            raise ConfigurationError(f"unknown seed model {self.seed_model!r}")
        if self.n_seed < 2:
            raise ConfigurationError(f"n_seed must be >= 2, got {self.n_seed}")
        if self.budget < self.n_seed:
            raise ConfigurationError("budget must be at least n_seed")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "acquisition" in d and isinstance(d["acquisition"], dict):
            d["acquisition"] = AcquisitionConfig(**d["acquisition"])
        if "stagnation" in d and isinstance(d["stagnation"], dict):
            d["stagnation"] = StagnationParams(**d["stagnation"])
        return cls(**d)


@dataclass(frozen=True)
class TraceRecord:
    step: int
    index: int
    location: tuple  # (row, col)
    latent: tuple  # (z1, z2)
    value: float
    loop_index: int  # row-major pixel index of the measured loop
    source: str  # seed | bo | intervention


@dataclass
class CurveEntry:
    step: int  # 0 at init, +1 per subsequent measurement
    sigma_vector: np.ndarray  # full per-patch predictive sigma (float32)
    mean_sigma: float
    sigma_of_sigma: float
    mae: float


class ExperimentState:
    """Mutable state of one experiment; mutate only through engine operations."""

    def __init__(self, dataset: Dataset, embedding: LatentEmbedding, config: ExperimentConfig):
        self.dataset = dataset
        self.embedding = embedding
        self.config = config
        self.patches = extract_patches(dataset.image, config.patch_size)
        if len(self.patches) != len(embedding):
            raise ConfigurationError(
                f"embedding has {len(embedding)} points for {len(self.patches)} patches"
            )
        if config.budget > len(self.patches):
            raise ConfigurationError("budget exceeds the number of patches")
        self.truth = dataset.scalarizer_field(self.patches, config.scalarizer)
        if not np.all(np.isfinite(self.truth)):
            raise ConfigurationError(
                f"scalarizer {config.scalarizer!r} undefined at some locations"
            )
        self.latent_dist = LatentDistribution(embedding)
        self.measured = np.zeros(len(self.patches), dtype=bool)
        self.trace: list[TraceRecord] = []
        self.curve: list[CurveEntry] = []
        self.model = None
        self.last_prediction = None
        self.status = "running"
        self.rng = {
            name: np.random.default_rng(
                np.random.SeedSequence(config.master_seed, spawn_key=(key,))
            )
            for name, key in _STREAMS.items()
        }

    # -- helpers ----------------------------------------------------------

    @property
    def measured_indices(self) -> np.ndarray:
        return np.array([r.index for r in self.trace], dtype=int)

    @property
    def measured_values(self) -> np.ndarray:
        return np.array([r.value for r in self.trace], dtype=float)

    def _measure(self, index: int, source: str) -> None:
        if self.measured[index]:
            raise ExperimentError(f"location {index} already measured")
        row, col = (int(v) for v in self.patches.locations[index])
        z = self.embedding.coords[index]
        self.measured[index] = True
        self.trace.append(
            TraceRecord(
                step=len(self.trace),
                index=int(index),
                location=(row, col),
                latent=(float(z[0]), float(z[1])),
                value=float(self.truth[index]),
                loop_index=row * self.dataset.image.width + col,
                source=source,
            )
        )

    def _retrain(self, warm: bool) -> None:
        x = self.patches.patches[self.measured_indices]
        y = self.measured_values
        opts = TrainOpts(
            iters=self.config.train_iters,
            step_size=self.config.train_step_size,
            rng_seed=int(self.rng["surrogate"].integers(2**31)),
        )
        self.model = surrogate.train(self.model if warm else None, x, y, opts)

    def _record_curve(self) -> None:
        metrics = compute_learning_metrics(self)
        self.curve.append(
            CurveEntry(
                step=len(self.curve),
                sigma_vector=metrics["sigma_distribution"].astype(np.float32),
                mean_sigma=metrics["mean_sigma"],
                sigma_of_sigma=metrics["sigma_of_sigma"],
                mae=metrics["mae"],
            )
        )

    def _update_status(self) -> None:
        if len(self.trace) >= self.config.budget:
            self.status = "budget_exhausted"

    def seed_sampling_model(self):
        kind = self.config.seed_model
        if kind in ("gd", "random"):  # random selection == GD over the latent distribution
            return build_gd_model(self.embedding)
        if kind == "ud":
            return build_ud_model(self.embedding)
        return build_uls_model(self.embedding)


def init_experiment(
    dataset: Dataset, embedding: LatentEmbedding, config: ExperimentConfig
) -> ExperimentState:
    """Draw distinct seed locations, measure them, train once, record step 0."""
    state = ExperimentState(dataset, embedding, config)
    model = state.seed_sampling_model()
    rng = state.rng["seeding"]
    pts = model.sample(config.n_seed, rng)
    indices = snap_to_indices(
        state.embedding, pts, dedupe=True, model=model, rng=rng, occupied=set()
    )
    for idx in indices:
        state._measure(int(idx), "seed")
    state._retrain(warm=False)
    state._record_curve()
    state._update_status()
    return state


def step(state: ExperimentState) -> ExperimentState:
    """One BO iteration: predict, score, select, measure, retrain, record."""
    if state.status != "running":
        raise ExperimentError(f"cannot step an experiment with status {state.status!r}")
    pred = surrogate.predict(state.model, state.patches.patches)
    state.last_prediction = pred
    scores = acquisition_values(pred.mean, pred.sigma, state.measured_values, state.config.acquisition)
    idx = select_next(scores, state.measured)
    state._measure(idx, "bo")
    state._retrain(warm=True)
    state._record_curve()
    state._update_status()
    return state


def default_exclusion_params(state: ExperimentState) -> tuple[np.ndarray, float]:
    """Default trapped centers and radius for an exclusion intervention.

    Radius: 10th percentile of all pairwise latent distances. Trapped
    centers: distinct cluster centers among the last 5 selections (greedy
    agglomeration at half the radius).
    """
    radius = state.latent_dist.pairwise_percentile(10.0)
    recent = np.array([r.latent for r in state.trace[-5:]], dtype=float)
    clusters: list[list[np.ndarray]] = []
    for p in recent:
        for members in clusters:
            if np.linalg.norm(np.mean(members, axis=0) - p) <= radius / 2.0:
                members.append(p)
                break
        else:
            clusters.append([p])
    centers = np.array([np.mean(members, axis=0) for members in clusters])
    return centers, radius


def build_intervention_model(state: ExperimentState, spec: dict):
    kind = spec.get("type")
    if kind == "exclusion":
        centers = spec.get("trapped_centers")
        radius = spec.get("radius")
        if centers is None or radius is None:
            default_centers, default_radius = default_exclusion_params(state)
            centers = default_centers if centers is None else np.asarray(centers, dtype=float)
            radius = default_radius if radius is None else float(radius)
        return build_exclusion_model(
            state.embedding, centers, radius, base_kind=spec.get("base", "ud")
        )
    if kind == "prioritizing":
        region_spec = spec.get("region")
        if region_spec is None:
            raise SamplingError("prioritizing intervention needs a region")
        region = region_spec if isinstance(region_spec, Region) else Region.from_dict(region_spec)
        return build_prioritizing_model(state.embedding, region)
    raise SamplingError(f"unknown intervention type {kind!r}")


def apply_intervention(state: ExperimentState, spec: dict, n_points: int = 5) -> ExperimentState:
    """Halt BO, inject n_points model-selected measurements, then hand back to BO."""
    if state.status != "running":
        raise ExperimentError(f"cannot intervene on an experiment with status {state.status!r}")
    if n_points < 1:
        raise ExperimentError(f"n_points must be >= 1, got {n_points}")
    if len(state.trace) + n_points > state.config.budget:
        raise ExperimentError(
            f"intervention of {n_points} points would exceed budget {state.config.budget}"
        )
    if int(np.sum(~state.measured)) < n_points:
        raise ExperimentError("not enough unmeasured locations for the intervention")

    model = build_intervention_model(state, spec)
    rng = state.rng["sampling"]
    pts = model.sample(n_points, rng)
    indices = snap_to_indices(
        state.embedding,
        pts,
        dedupe=True,
        model=model,
        rng=rng,
        occupied=set(int(i) for i in state.measured_indices),
    )
    for idx in indices:
        state._measure(int(idx), "intervention")
        state._retrain(warm=True)
        state._record_curve()
    state._update_status()
    return state


def detect_stagnation(
    trace: list[TraceRecord],
    latent_dist: LatentDistribution,
    params: StagnationParams = StagnationParams(),
) -> bool:
    """Flag exploratory stagnation: recent BO selections clustering in latent space.

    True iff, for `consecutive` successive windows of the last W BO
    selections, at least `frac` of each window's latent points lie within r
    of the window centroid, where r is the radius_pct-th percentile of all
    pairwise latent distances.
    """
    bo_points = np.array([r.latent for r in trace if r.source == "bo"], dtype=float)
    needed = params.window + params.consecutive - 1
    if bo_points.shape[0] < needed:
        return False
    r = latent_dist.pairwise_percentile(params.radius_pct)
    n = bo_points.shape[0]
    for j in range(params.consecutive):
        end = n - j
        window = bo_points[end - params.window : end]
        centroid = window.mean(axis=0)
        dists = np.linalg.norm(window - centroid, axis=1)
        if np.mean(dists <= r) < params.frac:
            return False
    return True


def compute_learning_metrics(state: ExperimentState) -> dict:
    """Mean predictive sigma, the full sigma vector, and MAE vs ground truth.

    MAE uses the full ground-truth scalarizer field, available only because
    this is a simulator.
    """
    if state.model is None:
        raise ExperimentError("no trained model")
    pred = surrogate.predict(state.model, state.patches.patches)
    sigma = pred.sigma
    return {
        "mean_sigma": float(np.mean(sigma)),
        "sigma_of_sigma": float(np.std(sigma)),
        "sigma_distribution": sigma,
        "mae": float(np.mean(np.abs(pred.mean - state.truth))),
    }


def is_stagnant(state: ExperimentState) -> bool:
    return detect_stagnation(state.trace, state.latent_dist, state.config.stagnation)


# ---------------------------------------------------------------------------
# checkpointing


def _pack(arr) -> dict | None:
    """Canonical array encoding so checkpoint bytes are reproducible."""
    if arr is None:
        return None
    a = np.ascontiguousarray(arr)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": a.tobytes()}


def _unpack(packed):
    if packed is None:
        return None
    return (
        np.frombuffer(packed["data"], dtype=packed["dtype"]).reshape(packed["shape"]).copy()
    )


def _state_to_payload(state: ExperimentState) -> dict:
    return {
        "version": STATE_VERSION,
        "config": state.config.to_dict(),
        "dataset": {
            "image": _pack(state.dataset.image.values),
            "bias": _pack(state.dataset.bias),
            "loops": _pack(state.dataset.loops),
            "latent": _pack(state.dataset.latent),
        },
        "embedding": {
            "coords": _pack(state.embedding.coords),
            "source": state.embedding.source,
            "mean": _pack(state.embedding.mean),
            "components": _pack(state.embedding.components),
        },
        "trace": [asdict(r) for r in state.trace],
        "curve": [
            {
                "step": e.step,
                "sigma_vector": _pack(e.sigma_vector),
                "mean_sigma": e.mean_sigma,
                "sigma_of_sigma": e.sigma_of_sigma,
                "mae": e.mae,
            }
            for e in state.curve
        ],
        "status": state.status,
        "model": None if state.model is None else surrogate.model_to_bytes(state.model),
        "rng": {name: gen.bit_generator.state for name, gen in state.rng.items()},
    }


def _state_from_payload(payload: dict) -> ExperimentState:
    from aesim.dataset import GlobalImage

    if payload.get("version") != STATE_VERSION:
        raise CheckpointError(f"unsupported experiment checkpoint version {payload.get('version')}")
    dataset = Dataset(
        image=GlobalImage(_unpack(payload["dataset"]["image"])),
        bias=_unpack(payload["dataset"]["bias"]),
        loops=_unpack(payload["dataset"]["loops"]),
        latent=_unpack(payload["dataset"]["latent"]),
    )
    emb = payload["embedding"]
    embedding = LatentEmbedding(
        coords=_unpack(emb["coords"]),
        source=emb["source"],
        mean=_unpack(emb["mean"]),
        components=_unpack(emb["components"]),
    )
    config = ExperimentConfig.from_dict(payload["config"])
    state = ExperimentState(dataset, embedding, config)
    for r in payload["trace"]:
        r = dict(r)
        r["location"] = tuple(r["location"])
        r["latent"] = tuple(r["latent"])
        state.trace.append(TraceRecord(**r))
        state.measured[r["index"]] = True
    for e in payload["curve"]:
        e = dict(e)
        e["sigma_vector"] = _unpack(e["sigma_vector"])
        state.curve.append(CurveEntry(**e))
    state.status = payload["status"]
    if payload["model"] is not None:
        state.model = surrogate.model_from_bytes(payload["model"])
    for name, rng_state in payload["rng"].items():
        state.rng[name].bit_generator.state = rng_state
    return state


def checkpoint_bytes(state: ExperimentState) -> bytes:
    return pickle.dumps(_state_to_payload(state), protocol=4)


def checkpoint(state: ExperimentState, path) -> None:
    from pathlib import Path

    Path(path).write_bytes(checkpoint_bytes(state))


def restore(path) -> ExperimentState:
    from pathlib import Path

    try:
        payload = pickle.loads(Path(path).read_bytes())
    except Exception as exc:
        raise CheckpointError(f"cannot read experiment checkpoint: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError("experiment checkpoint has unexpected structure")
    return _state_from_payload(payload)


# ---------------------------------------------------------------------------
# batch studies with branch bifurcation


@dataclass
class BranchResult:
    rep: int
    branch: str  # "intervention" | "control"
    stagnant_at_bifurcation: bool
    released: bool
    steps: int
    trace: list = field(default_factory=list)
    mean_sigma: np.ndarray = field(default_factory=lambda: np.empty(0))
    sigma_of_sigma: np.ndarray = field(default_factory=lambda: np.empty(0))
    mae: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class ConfigReport:
    label: str
    config: ExperimentConfig
    branches: list[BranchResult]

    def stagnation_rate(self) -> float:
        flags = [b.stagnant_at_bifurcation for b in self.branches if b.branch == "control"]
        return float(np.mean(flags)) if flags else 0.0

    def release_rate(self, branch: str = "intervention") -> float | None:
        stagnant = [b for b in self.branches if b.branch == branch and b.stagnant_at_bifurcation]
        if not stagnant:
            return None
        return float(np.mean([b.released for b in stagnant]))


@dataclass
class StudyReport:
    master_seed: int
    reps: int
    bifurcate_at: int
    intervention: dict | None
    configs: list[ConfigReport]


@dataclass
class StudySpec:
    configs: list  # [(label, ExperimentConfig)]
    reps: int = 15
    bifurcate_at: int | None = 20  # BO steps before branching; None disables
    intervention: dict | None = None
    intervention_points: int = 5
    release_horizon: int = 10
    master_seed: int = 0


def _rep_seed(master_seed: int, config_idx: int, rep: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(1000 + config_idx, rep))
    return int(ss.generate_state(1)[0])


def _run_branch(state: ExperimentState, spec: StudySpec, rep: int, branch: str) -> BranchResult:
    stagnant_at_bif = is_stagnant(state)
    if branch == "intervention":
        apply_intervention(state, spec.intervention, n_points=spec.intervention_points)
    released = False
    post = 0
    while state.status == "running":
        step(state)
        post += 1
        if stagnant_at_bif and post <= spec.release_horizon and not is_stagnant(state):
            released = True
    return BranchResult(
        rep=rep,
        branch=branch,
        stagnant_at_bifurcation=stagnant_at_bif,
        released=released,
        steps=len(state.trace),
        trace=[asdict(r) for r in state.trace],
        mean_sigma=np.array([e.mean_sigma for e in state.curve]),
        sigma_of_sigma=np.array([e.sigma_of_sigma for e in state.curve]),
        mae=np.array([e.mae for e in state.curve]),
    )


def _run_rep(args) -> tuple[int, int, list]:
    """One rep: run to the bifurcation point, then continue each branch. Picklable."""
    config_idx, rep, config_dict, spec, dataset_payload = args
    from aesim.dataset import GlobalImage

    dataset = Dataset(
        image=GlobalImage(dataset_payload["image"]),
        bias=dataset_payload["bias"],
        loops=dataset_payload["loops"],
    )
    embedding = LatentEmbedding(coords=dataset_payload["coords"], source=dataset_payload["source"])
    config = ExperimentConfig.from_dict(config_dict)
    config = replace(config, master_seed=_rep_seed(spec.master_seed, config_idx, rep))
    try:
        state = init_experiment(dataset, embedding, config)
        bo_steps = 0
        while (
            state.status == "running"
            and spec.bifurcate_at is not None
            and bo_steps < spec.bifurcate_at
        ):
            step(state)
            bo_steps += 1
        if spec.bifurcate_at is None or spec.intervention is None:
            result = _run_branch(state, replace_branchless(spec), rep, "control")
            return config_idx, rep, [result]
        snapshot = checkpoint_bytes(state)
        branch_a = _run_branch(state, spec, rep, "intervention")
        control_state = _state_from_payload(pickle.loads(snapshot))
        branch_b = _run_branch(control_state, spec, rep, "control")
        return config_idx, rep, [branch_a, branch_b]
    except Exception as exc:  # per-rep failures must not abort the study
        failed = BranchResult(
            rep=rep, branch="error", stagnant_at_bifurcation=False, released=False, steps=0
        )
        failed.trace = [{"error": f"{type(exc).__name__}: {exc}"}]
        return config_idx, rep, [failed]


def replace_branchless(spec: StudySpec) -> StudySpec:
    return replace(spec, intervention=None)


def run_study(
    spec: StudySpec,
    dataset: Dataset,
    embedding: LatentEmbedding,
    n_jobs: int = 1,
) -> StudyReport:
    """Run the bifurcated-branch study on one dataset/embedding pair."""
    if spec.reps < 1:
        raise ConfigurationError(f"reps must be >= 1, got {spec.reps}")
    dataset_payload = {
        "image": np.asarray(dataset.image.values),
        "bias": np.asarray(dataset.bias),
        "loops": np.asarray(dataset.loops),
        "coords": np.asarray(embedding.coords),
        "source": embedding.source,
    }
    tasks = [
        (ci, rep, config.to_dict(), spec, dataset_payload)
        for ci, (label, config) in enumerate(spec.configs)
        for rep in range(spec.reps)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_rep, tasks))
    else:
        results = [_run_rep(t) for t in tasks]

    # order-independent aggregation: sort by (config, rep, branch)
    by_config: dict[int, list[BranchResult]] = {ci: [] for ci in range(len(spec.configs))}
    for ci, rep, branches in results:
        by_config[ci].extend(branches)
    for ci in by_config:
        by_config[ci].sort(key=lambda b: (b.rep, b.branch))

    reports = [
        ConfigReport(label=label, config=config, branches=by_config[ci])
        for ci, (label, config) in enumerate(spec.configs)
    ]
    return StudyReport(
        master_seed=spec.master_seed,
        reps=spec.reps,
        bifurcate_at=spec.bifurcate_at,
        intervention=spec.intervention,
        configs=reports,
    )


# alias matching the batch-study surface name used by the CLI
run_batch = run_study
