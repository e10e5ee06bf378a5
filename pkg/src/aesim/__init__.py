"""Autonomous-experiment simulator for deep-kernel-learning driven microscopy.

Subpackages cover the virtual specimen (dataset), the 2-D latent embedding of
microstructural patches (latent), the deep-kernel GP surrogate (surrogate),
acquisition functions (acquisition), latent-space sampling models (sampling),
the experiment loop with interventions (engine), and the CLI / HTTP control
plane (cli, service).
"""

from aesim.dataset import (
    Dataset,
    GlobalImage,
    HysteresisLoop,
    PatchSet,
    extract_patches,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    scalarize_loop,
)
from aesim.latent import LatentEmbedding, ingest_external_embedding, nearest_index, pca_embed

__all__ = [
    "Dataset",
    "GlobalImage",
    "HysteresisLoop",
    "PatchSet",
    "LatentEmbedding",
    "extract_patches",
    "generate_synthetic_dataset",
    "load_dataset",
    "save_dataset",
    "scalarize_loop",
    "pca_embed",
    "ingest_external_embedding",
    "nearest_index",
]
