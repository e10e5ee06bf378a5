"""Acquisition functions (EI, UCB, MU) and masked selection of the next location."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from aesim.errors import AcquisitionError

ACQUISITION_KINDS = ("ei", "ucb", "mu")


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "ei"
    beta: float = 2.0  # UCB exploration weight
    xi: float = 0.0  # EI improvement margin
    direction: str = "maximize"

    def __post_init__(self):
        if self.kind not in ACQUISITION_KINDS:
            raise AcquisitionError(f"unknown acquisition kind {self.kind!r}")
        if self.beta < 0 or self.xi < 0:
            raise AcquisitionError("beta and xi must be non-negative")
        if self.direction not in ("maximize", "minimize"):
            raise AcquisitionError(f"unknown direction {self.direction!r}")


def acquisition_values(mean, sigma, measured_y, cfg: AcquisitionConfig) -> np.ndarray:
    """Per-patch acquisition scores from predictive mean/sigma.

    Under minimize, the mean terms are negated symmetrically (EI of -mean
    against -best, UCB = -mean + beta*sigma); MU is direction-free.
    """
    mu = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.size == 0:
        raise AcquisitionError("empty prediction")
    if np.any(np.isnan(mu)) or np.any(np.isnan(sigma)):
        raise AcquisitionError("NaN in predictive mean or sigma")

    if cfg.kind == "mu":
        return sigma.copy()

    if cfg.direction == "minimize":
        mu = -mu
        measured_y = -np.asarray(measured_y, dtype=np.float64) if measured_y is not None else None

    if cfg.kind == "ucb":
        return mu + cfg.beta * sigma

    # EI against the best measured value
    measured_y = np.asarray(measured_y, dtype=np.float64)
    if measured_y.size == 0:
        raise AcquisitionError("EI needs at least one measured value")
    if np.any(np.isnan(measured_y)):
        raise AcquisitionError("NaN in measured values")
    best = float(np.max(measured_y))
    improve = mu - best - cfg.xi
    ei = np.where(improve > 0, improve, 0.0)
    pos = sigma > 0
    u = improve[pos] / sigma[pos]
    ei = ei.astype(np.float64)
    ei[pos] = improve[pos] * norm.cdf(u) + sigma[pos] * norm.pdf(u)
    return ei


def select_next(scores, measured_mask) -> int:
    """Argmax of scores over unmeasured locations; ties go to the smallest index."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(measured_mask, dtype=bool)
    if scores.shape != mask.shape:
        raise AcquisitionError("scores and measured mask must have equal length")
    if mask.all():
        raise AcquisitionError("budget exhausted: every location already measured")
    masked = np.where(mask, -np.inf, scores)
    return int(np.argmax(masked))
