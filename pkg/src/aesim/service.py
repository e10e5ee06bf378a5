"""HTTP control plane: experiments, live step streaming, interventions.

One lock per experiment serializes state-changing commands; snapshots are
read from the last published state without blocking writers. Every completed
step or intervention appends one event to the experiment's event log, which
the SSE endpoint replays (gapless, ordered) to any number of subscribers.
State-changing endpoints are atomic: on failure the pre-command state is
restored from an in-memory checkpoint.
"""

from __future__ import annotations

import json
import pickle
import threading
import uuid
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from aesim import engine
from aesim.dataset import Dataset
from aesim.errors import AesimError, ExperimentError, SamplingError
from aesim.latent import LatentEmbedding

SCHEMA_VERSION = 1
SIGMA_QUANTILES = (5.0, 25.0, 50.0, 75.0, 95.0)


class AcquisitionModel(BaseModel):
    kind: str = "ei"
    beta: float = Field(default=2.0, ge=0)
    xi: float = Field(default=0.0, ge=0)
    direction: str = "maximize"


class StagnationModel(BaseModel):
    window: int = 10
    radius_pct: float = 5.0
    frac: float = 0.8
    consecutive: int = 2


class ExperimentConfigModel(BaseModel):
    acquisition: AcquisitionModel = AcquisitionModel()
    seed_model: str = "gd"
    n_seed: int = Field(default=5, ge=2)
    budget: int = Field(default=55, ge=2)
    scalarizer: str = "area"
    patch_size: int = Field(default=8, ge=1)
    train_iters: int = Field(default=200, ge=1)
    train_step_size: float = Field(default=0.01, gt=0)
    stagnation: StagnationModel = StagnationModel()
    master_seed: int = 0


class StepsRequest(BaseModel):
    n: int = Field(default=1, ge=1)


class RegionModel(BaseModel):
    kind: str
    z1_min: float | None = None
    z1_max: float | None = None
    z2_min: float | None = None
    z2_max: float | None = None
    vertices: list[list[float]] | None = None


class InterventionRequest(BaseModel):
    type: str
    n_points: int = Field(default=5, ge=1)
    region: RegionModel | None = None
    radius: float | None = None
    trapped_centers: list[list[float]] | None = None
    base: str = "ud"


class EventModel(BaseModel):
    step: int
    type: str  # step | intervention
    source: str
    index: int
    mean_sigma: float
    stagnant: bool


class _Runtime:
    """Per-experiment single-writer state plus the append-only event log."""

    def __init__(self, state: engine.ExperimentState, config_echo: dict):
        self.state = state
        self.config_echo = config_echo
        self.created_at = datetime.now(timezone.utc).isoformat()
        self.lock = threading.Lock()
        self.events: list[dict] = []
        self.cond = threading.Condition()

    def publish(self, event_type: str) -> None:
        rec = self.state.trace[-1]
        event = {
            "step": rec.step,
            "type": event_type,
            "source": rec.source,
            "index": rec.index,
            "mean_sigma": self.state.curve[-1].mean_sigma,
            "stagnant": engine.is_stagnant(self.state),
        }
        with self.cond:
            self.events.append(event)
            self.cond.notify_all()


def _snapshot(exp_id: str, rt: _Runtime, exam_mode: bool) -> dict:
    state = rt.state
    snap = {
        "id": exp_id,
        "created_at": rt.created_at,
        "config": rt.config_echo,
        "status": state.status,
        "stagnant": engine.is_stagnant(state),
        "measured_count": int(np.sum(state.measured)),
        "default_exclusion_radius": state.latent_dist.pairwise_percentile(10.0),
        "trace": [
            {
                "step": r.step,
                "index": r.index,
                "location": list(r.location),
                "latent": list(r.latent),
                "value": r.value,
                "source": r.source,
            }
            for r in state.trace
        ],
        "prediction_summary": None,
    }
    if state.curve:
        last = state.curve[-1]
        summary = {
            "mean_sigma": last.mean_sigma,
            "sigma_of_sigma": last.sigma_of_sigma,
            "sigma_quantiles": [
                float(np.percentile(last.sigma_vector, p)) for p in SIGMA_QUANTILES
            ],
        }
        if not exam_mode:
            summary["mae"] = last.mae
        snap["prediction_summary"] = summary
    return snap


def create_app(
    dataset: Dataset, embedding: LatentEmbedding, exam_mode: bool = False
) -> FastAPI:
    app = FastAPI(title="aesim control plane")
    experiments: dict[str, _Runtime] = {}

    def get_runtime(exp_id: str) -> _Runtime:
        rt = experiments.get(exp_id)
        if rt is None:
            raise HTTPException(status_code=404, detail=f"unknown experiment {exp_id!r}")
        return rt

    def run_command(rt: _Runtime, fn):
        """Run a mutating command atomically: restore pre-command state on error."""
        with rt.lock:
            before = engine.checkpoint_bytes(rt.state)
            try:
                return fn()
            except Exception:
                rt.state = engine._state_from_payload(pickle.loads(before))
                raise

    @app.post("/experiments", status_code=201)
    def create_experiment(cfg: ExperimentConfigModel):
        try:
            config = engine.ExperimentConfig.from_dict(cfg.model_dump())
            state = engine.init_experiment(dataset, embedding, config)
        except AesimError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        exp_id = uuid.uuid4().hex[:12]
        experiments[exp_id] = _Runtime(state, cfg.model_dump())
        return {"id": exp_id, "status": state.status, "created_at": experiments[exp_id].created_at}

    @app.get("/experiments/{exp_id}")
    def get_experiment(exp_id: str):
        return _snapshot(exp_id, get_runtime(exp_id), exam_mode)

    @app.post("/experiments/{exp_id}/steps")
    def advance(exp_id: str, req: StepsRequest):
        rt = get_runtime(exp_id)

        def do():
            for _ in range(req.n):
                engine.step(rt.state)
                rt.publish("step")
            return {"status": rt.state.status, "measured_count": int(np.sum(rt.state.measured))}

        try:
            return run_command(rt, do)
        except ExperimentError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except AesimError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/experiments/{exp_id}/interventions")
    def intervene(exp_id: str, req: InterventionRequest):
        rt = get_runtime(exp_id)
        spec: dict = {"type": req.type, "base": req.base}
        if req.region is not None:
            spec["region"] = {k: v for k, v in req.region.model_dump().items() if v is not None}
        if req.radius is not None:
            spec["radius"] = req.radius
        if req.trapped_centers is not None:
            spec["trapped_centers"] = req.trapped_centers

        try:
            # one event per injected point, in trace order
            with rt.lock:
                before = engine.checkpoint_bytes(rt.state)
                try:
                    start = len(rt.state.trace)
                    engine.apply_intervention(rt.state, spec, n_points=req.n_points)
                    for _ in range(start, len(rt.state.trace)):
                        rt.publish("intervention")
                    return {
                        "status": rt.state.status,
                        "measured_count": int(np.sum(rt.state.measured)),
                    }
                except Exception:
                    rt.state = engine._state_from_payload(pickle.loads(before))
                    raise
        except ExperimentError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except SamplingError as exc:
            raise HTTPException(status_code=422, detail={"field": "region" if req.region else "spec", "message": str(exc)})
        except AesimError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/experiments/{exp_id}/curve")
    def curve(exp_id: str):
        rt = get_runtime(exp_id)
        entries = []
        for e in rt.state.curve:
            entry = {
                "step": e.step,
                "mean_sigma": e.mean_sigma,
                "sigma_of_sigma": e.sigma_of_sigma,
                "sigma_quantiles": [float(np.percentile(e.sigma_vector, p)) for p in SIGMA_QUANTILES],
            }
            if not exam_mode:
                entry["mae"] = e.mae
            entries.append(entry)
        return {"id": exp_id, "quantile_levels": list(SIGMA_QUANTILES), "entries": entries}

    @app.get("/experiments/{exp_id}/events")
    def events(
        exp_id: str,
        request: Request,
        after: int = -1,
        follow: bool = True,
        limit: int | None = None,
    ):
        """SSE stream of step/intervention events, replayed from `after`.

        Reconnection: send the last seen step in `after` or the
        Last-Event-ID header and the stream replays everything newer.
        `follow=false` (or a `limit`) ends the stream instead of waiting for
        new events, which suits polling clients and tests.
        """
        rt = get_runtime(exp_id)
        last_id = request.headers.get("last-event-id")
        start_after = int(last_id) if last_id is not None else after

        def stream():
            sent = 0
            delivered = 0
            while True:
                with rt.cond:
                    pending = list(rt.events[sent:])
                for event in pending:
                    sent += 1
                    if event["step"] <= start_after:
                        continue
                    payload = json.dumps(event, sort_keys=True)
                    yield f"id: {event['step']}\nevent: {event['type']}\ndata: {payload}\n\n"
                    delivered += 1
                    if limit is not None and delivered >= limit:
                        return
                with rt.cond:
                    if len(rt.events) == sent:
                        if not follow:
                            return
                        if not rt.cond.wait(timeout=0.5):
                            yield ": ping\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/dataset/summary")
    def dataset_summary():
        summary = {
            "image_height": dataset.image.height,
            "image_width": dataset.image.width,
            "image": np.asarray(dataset.image.values).tolist(),
            "n_patches": len(embedding),
            "latent_coords": np.asarray(embedding.coords).tolist(),
            "latent_source": embedding.source,
            "exam_mode": exam_mode,
        }
        return summary

    @app.get("/schema")
    def schema():
        return {
            "version": SCHEMA_VERSION,
            "config": ExperimentConfigModel.model_json_schema(),
            "intervention": InterventionRequest.model_json_schema(),
            "region": RegionModel.model_json_schema(),
            "event": EventModel.model_json_schema(),
        }

    return app


def create_app_from_dir(dataset_dir, exam_mode: bool = False) -> FastAPI:
    from aesim.dataset import extract_patches, load_dataset
    from aesim.latent import pca_embed

    dataset = load_dataset(dataset_dir)
    if dataset.latent is not None:
        embedding = LatentEmbedding(coords=dataset.latent, source="external")
    else:
        embedding = pca_embed(extract_patches(dataset.image, 8))
    return create_app(dataset, embedding, exam_mode=exam_mode)
