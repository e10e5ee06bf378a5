"""Command-line interface: synth, embed, run, batch, serve."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from aesim import engine
from aesim.acquisition import AcquisitionConfig
from aesim.dataset import extract_patches, generate_synthetic_dataset, load_dataset, save_dataset
from aesim.errors import AesimError
from aesim.latent import LatentEmbedding, ingest_external_embedding, pca_embed, save_embedding
from aesim.report import write_run_report, write_study_report

ACQ_CHOICES = click.Choice(["ei", "ucb", "mu"])
SEED_CHOICES = click.Choice(["gd", "ud", "uls", "random"])


@click.group()
def main():
    """Autonomous-experiment simulator for DKL-driven microscopy."""


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load(dataset_dir, patch_size):
    dataset = load_dataset(dataset_dir)
    patches = extract_patches(dataset.image, patch_size)
    if dataset.latent is not None:
        if dataset.latent.shape[0] != len(patches):
            _fail(
                f"dataset latent has {dataset.latent.shape[0]} rows "
                f"for {len(patches)} patches; re-run `aesim embed`"
            )
        embedding = LatentEmbedding(coords=dataset.latent, source="external")
    else:
        embedding = pca_embed(patches)
    return dataset, embedding


@main.command()
@click.option("--height", default=64, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--domain-scale", default=4.0, show_default=True)
@click.option("--loop-noise", default=0.02, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def synth(height, width, domain_scale, loop_noise, seed, out):
    """Generate a synthetic virtual specimen and write its container."""
    try:
        dataset = generate_synthetic_dataset(
            height, width, domain_scale=domain_scale, loop_noise=loop_noise, rng_seed=seed
        )
        save_dataset(dataset, out)
    except AesimError as exc:
        _fail(str(exc))
    click.echo(f"wrote {height}x{width} dataset to {out}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--patch-size", default=8, show_default=True)
@click.option("--external", type=click.Path(exists=True), help="ingest latent.bin instead of PCA")
def embed(dataset_dir, patch_size, external):
    """Compute (or ingest) 2-D latents and attach them to the dataset container."""
    try:
        dataset = load_dataset(dataset_dir)
        patches = extract_patches(dataset.image, patch_size)
        if external:
            embedding = ingest_external_embedding(external, len(patches))
        else:
            embedding = pca_embed(patches)
        save_embedding(embedding, Path(dataset_dir) / "latent.bin")
        dataset.latent = np.asarray(embedding.coords)
        save_dataset(dataset, dataset_dir)
    except AesimError as exc:
        _fail(str(exc))
    click.echo(f"attached {len(embedding)} latent coordinates ({embedding.source})")


def _build_config(acq, beta, xi, seed_model, n_seed, steps, scalarizer, patch_size,
                  train_iters, master_seed):
    return engine.ExperimentConfig(
        acquisition=AcquisitionConfig(kind=acq, beta=beta, xi=xi),
        seed_model=seed_model,
        n_seed=n_seed,
        budget=n_seed + steps,
        scalarizer=scalarizer,
        patch_size=patch_size,
        train_iters=train_iters,
        master_seed=master_seed,
    )


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--acq", default="ei", type=ACQ_CHOICES, show_default=True)
@click.option("--beta", default=2.0, show_default=True)
@click.option("--xi", default=0.0, show_default=True)
@click.option("--seed-model", default="gd", type=SEED_CHOICES, show_default=True)
@click.option("--n-seed", default=5, show_default=True)
@click.option("--steps", default=50, show_default=True, help="BO steps after seeding")
@click.option("--scalarizer", default="area", show_default=True)
@click.option("--patch-size", default=8, show_default=True)
@click.option("--train-iters", default=200, show_default=True)
@click.option("--master-seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def run(dataset_dir, acq, beta, xi, seed_model, n_seed, steps, scalarizer, patch_size,
        train_iters, master_seed, out):
    """Run a single experiment; write trace/curve CSVs and figures."""
    if steps < 1:
        raise click.UsageError("--steps must be >= 1")
    try:
        dataset, embedding = _load(dataset_dir, patch_size)
        config = _build_config(acq, beta, xi, seed_model, n_seed, steps, scalarizer,
                               patch_size, train_iters, master_seed)
        state = engine.init_experiment(dataset, embedding, config)
        while state.status == "running":
            engine.step(state)
        write_run_report(state, out)
    except AesimError as exc:
        _fail(str(exc))
    click.echo(f"finished after {len(state.trace)} measurements; report in {out}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--acq", default="ei,mu", show_default=True, help="comma-separated acquisition kinds")
@click.option("--seed-model", default="gd,ud,uls", show_default=True,
              help="comma-separated seed models")
@click.option("--reps", default=15, show_default=True)
@click.option("--n-seed", default=5, show_default=True)
@click.option("--steps", default=40, show_default=True, help="total BO steps per branch")
@click.option("--bifurcate-at", default=20, show_default=True)
@click.option("--intervention", default="exclusion",
              type=click.Choice(["exclusion", "none"]), show_default=True)
@click.option("--intervention-points", default=5, show_default=True)
@click.option("--scalarizer", default="area", show_default=True)
@click.option("--patch-size", default=8, show_default=True)
@click.option("--train-iters", default=200, show_default=True)
@click.option("--master-seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def batch(dataset_dir, acq, seed_model, reps, n_seed, steps, bifurcate_at, intervention,
          intervention_points, scalarizer, patch_size, train_iters, master_seed, jobs, out):
    """Run a bifurcated-branch study across acquisition x seed-model configs."""
    if steps < 1:
        raise click.UsageError("--steps must be >= 1")
    if bifurcate_at >= steps:
        raise click.UsageError("--bifurcate-at must be smaller than --steps")
    acqs = [a.strip() for a in acq.split(",") if a.strip()]
    seeds = [s.strip() for s in seed_model.split(",") if s.strip()]
    try:
        dataset, embedding = _load(dataset_dir, patch_size)
        configs = []
        for a in acqs:
            for s in seeds:
                configs.append(
                    (
                        f"{a}_{s}",
                        _build_config(a, 2.0, 0.0, s, n_seed, steps, scalarizer,
                                      patch_size, train_iters, master_seed),
                    )
                )
        spec = engine.StudySpec(
            configs=configs,
            reps=reps,
            bifurcate_at=bifurcate_at,
            intervention=None if intervention == "none" else {"type": intervention},
            intervention_points=intervention_points,
            master_seed=master_seed,
        )
        report = engine.run_study(spec, dataset, embedding, n_jobs=jobs)
        write_study_report(report, out)
    except AesimError as exc:
        _fail(str(exc))
    click.echo(f"study complete: {len(configs)} configs x {reps} reps; report in {out}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--exam-mode", is_flag=True, help="hide ground-truth-derived fields")
def serve(dataset_dir, host, port, exam_mode):
    """Start the HTTP control plane for the operator console."""
    import uvicorn

    from aesim.service import create_app_from_dir

    try:
        app = create_app_from_dir(dataset_dir, exam_mode=exam_mode)
    except AesimError as exc:
        _fail(str(exc))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
