"""Deep-kernel GP surrogate.

A small fully connected network (k^2 -> 32 -> 16 -> 2, tanh) maps flattened
patches to 2-D descriptors; an exact GP with an isotropic squared-exponential
kernel over those descriptors supplies predictive mean and uncertainty.
Training minimizes the exact negative log marginal likelihood of the
standardized targets with Adam, with gradients flowing through the kernel
into the feature network (full backpropagation, derived by hand).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from aesim.errors import TrainingError

NOISE_FLOOR = 1e-4
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
HIDDEN = (32, 16)
FEATURE_DIM = 2

CHECKPOINT_MAGIC = b"AESM"
CHECKPOINT_VERSION = 1

ARRAY_PARAMS = ("w1", "b1", "w2", "b2", "w3", "b3")
SCALAR_PARAMS = ("log_ell", "log_out", "raw_noise")
ALL_PARAMS = ARRAY_PARAMS + SCALAR_PARAMS


@dataclass
class TrainOpts:
    iters: int = 200
    step_size: float = 0.01
    rng_seed: int = 0


@dataclass
class Prediction:
    """Per-patch predictive scalarizer mean and standard deviation (original units)."""

    mean: np.ndarray
    sigma: np.ndarray


@dataclass
class DeepKernelModel:
    """Feature-network weights plus GP hyperparameters and target normalization."""

    params: dict = field(default_factory=dict)
    y_mean: float = 0.0
    y_scale: float = 1.0
    degenerate_targets: bool = False
    # training cache (set by train): standardized targets, features, cholesky, alpha
    _cache: dict | None = field(default=None, repr=False)

    @property
    def trained(self) -> bool:
        return self._cache is not None

    @property
    def noise_variance(self) -> float:
        return NOISE_FLOOR + math.exp(self.params["raw_noise"])

    @property
    def prior_sigma(self) -> float:
        """Predictive std far from all training data (original units)."""
        return self.y_scale * math.sqrt(math.exp(self.params["log_out"]))


def init_model(input_dim: int, rng: np.random.Generator) -> DeepKernelModel:
    """Deterministic Xavier-style initialization from the given RNG stream."""
    dims = (input_dim,) + HIDDEN + (FEATURE_DIM,)
    params = {}
    for i, name in enumerate(("w1", "w2", "w3")):
        fan_in, fan_out = dims[i], dims[i + 1]
        params[name] = rng.standard_normal((fan_in, fan_out)) * math.sqrt(1.0 / fan_in)
        params[f"b{i + 1}"] = np.zeros(fan_out)
    params["log_ell"] = 0.0
    params["log_out"] = 0.0
    params["raw_noise"] = math.log(1e-2)
    return DeepKernelModel(params=params)


def _forward(params, x):
    """Feature-net forward pass; returns activations needed for backprop."""
    a1 = np.tanh(x @ params["w1"] + params["b1"])
    a2 = np.tanh(a1 @ params["w2"] + params["b2"])
    f = a2 @ params["w3"] + params["b3"]
    return f, a1, a2


def features(model: DeepKernelModel, x: np.ndarray) -> np.ndarray:
    return _forward(model.params, np.asarray(x, dtype=np.float64))[0]


def _sq_dists(f1, f2):
    d2 = np.sum(f1**2, axis=1)[:, None] + np.sum(f2**2, axis=1)[None, :] - 2.0 * f1 @ f2.T
    return np.maximum(d2, 0.0)


def _kernel(params, f1, f2):
    ell2 = math.exp(2.0 * params["log_ell"])
    out = math.exp(params["log_out"])
    return out * np.exp(-_sq_dists(f1, f2) / (2.0 * ell2))


def _chol_with_jitter(k_full):
    base = float(np.mean(np.diag(k_full)))
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(k_full + jitter * base * np.eye(k_full.shape[0])), jitter
        except np.linalg.LinAlgError:
            continue
    return None, None


def _nll_terms(params, x, y_std):
    """NLL and everything needed for its gradient. Returns None on non-PD failure."""
    f, a1, a2 = _forward(params, x)
    n = x.shape[0]
    kf = _kernel(params, f, f)
    noise = NOISE_FLOOR + math.exp(params["raw_noise"])
    k_full = kf + noise * np.eye(n)
    chol, _ = _chol_with_jitter(k_full)
    if chol is None:
        return None
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y_std))
    nll = (
        0.5 * float(y_std @ alpha)
        + float(np.sum(np.log(np.diag(chol))))
        + 0.5 * n * math.log(2.0 * math.pi)
    )
    return {"nll": nll, "f": f, "a1": a1, "a2": a2, "kf": kf, "chol": chol, "alpha": alpha}


def nll(model: DeepKernelModel, x, y) -> float:
    """Exact Gaussian negative log marginal likelihood of standardized targets.

    Returns +inf when the kernel matrix is not positive definite even at the
    maximum jitter.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y_std = (y - model.y_mean) / model.y_scale
    terms = _nll_terms(model.params, x, y_std)
    return math.inf if terms is None else terms["nll"]


def nll_and_grads(params, x, y_std):
    """NLL and its gradient w.r.t. every parameter (hand-derived backprop)."""
    terms = _nll_terms(params, x, y_std)
    if terms is None:
        return math.inf, None
    f, a1, a2 = terms["f"], terms["a1"], terms["a2"]
    kf, chol, alpha = terms["kf"], terms["chol"], terms["alpha"]
    n = x.shape[0]

    k_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(n)))
    g = 0.5 * (k_inv - np.outer(alpha, alpha))  # dNLL/dK, symmetric

    ell2 = math.exp(2.0 * params["log_ell"])
    d2 = _sq_dists(f, f)
    b = g * kf

    grads = {
        "log_out": float(np.sum(b)),
        "log_ell": float(np.sum(b * d2) / ell2),
        "raw_noise": float(np.trace(g)) * math.exp(params["raw_noise"]),
    }

    # dNLL/dF_p = (2/ell^2) * (B F - rowsum(B) * F)_p, B = G o Kf
    row = b.sum(axis=1, keepdims=True)
    d_f = (2.0 / ell2) * (b @ f - row * f)

    d_a2 = d_f @ params["w3"].T
    g2 = d_a2 * (1.0 - a2**2)
    d_a1 = g2 @ params["w2"].T
    g1 = d_a1 * (1.0 - a1**2)
    grads["w3"] = a2.T @ d_f
    grads["b3"] = d_f.sum(axis=0)
    grads["w2"] = a1.T @ g2
    grads["b2"] = g2.sum(axis=0)
    grads["w1"] = x.T @ g1
    grads["b1"] = g1.sum(axis=0)
    return terms["nll"], grads


def train(
    warm: DeepKernelModel | None,
    x: np.ndarray,
    y: np.ndarray,
    opts: TrainOpts | None = None,
) -> DeepKernelModel:
    """Fit (or warm-start and refit) the model on measured (patch, scalarizer) pairs.

    Adam on the exact NLL of standardized targets. The returned model carries
    the best parameters seen over the run, so its final NLL never exceeds the
    initial one.
    """
    opts = opts or TrainOpts()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise TrainingError(f"X/y shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise TrainingError("need at least 2 measured points to train")

    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    degenerate = y_scale < 1e-12
    if degenerate:
        y_scale = 1.0
    y_std = (y - y_mean) / y_scale

    rng = np.random.default_rng(opts.rng_seed)
    if warm is None:
        model = init_model(x.shape[1], rng)
    else:
        model = DeepKernelModel(params={k: np.copy(v) if isinstance(v, np.ndarray) else v
                                        for k, v in warm.params.items()})

    params = model.params
    m = {k: np.zeros_like(np.asarray(params[k], dtype=np.float64)) for k in ALL_PARAMS}
    v = {k: np.zeros_like(np.asarray(params[k], dtype=np.float64)) for k in ALL_PARAMS}
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    best_nll, _ = nll_and_grads(params, x, y_std)
    if not math.isfinite(best_nll):
        raise TrainingError("kernel matrix not positive definite at initialization")
    best_params = _copy_params(params)

    for t in range(1, opts.iters + 1):
        cur_nll, grads = nll_and_grads(params, x, y_std)
        if grads is None:
            raise TrainingError("kernel matrix lost positive definiteness during training")
        if cur_nll < best_nll:
            best_nll = cur_nll
            best_params = _copy_params(params)
        for k in ALL_PARAMS:
            gk = grads[k]
            m[k] = beta1 * m[k] + (1 - beta1) * gk
            v[k] = beta2 * v[k] + (1 - beta2) * np.square(gk)
            m_hat = m[k] / (1 - beta1**t)
            v_hat = v[k] / (1 - beta2**t)
            step = opts.step_size * m_hat / (np.sqrt(v_hat) + eps)
            if k in SCALAR_PARAMS:
                params[k] = float(params[k] - step)
            else:
                params[k] = params[k] - step
        if not all(np.all(np.isfinite(np.asarray(params[k]))) for k in ALL_PARAMS):
            raise TrainingError("non-finite parameters after optimizer step")

    final_nll, _ = nll_and_grads(params, x, y_std)
    if final_nll < best_nll:
        best_nll = final_nll
        best_params = _copy_params(params)

    model = DeepKernelModel(
        params=best_params, y_mean=y_mean, y_scale=y_scale, degenerate_targets=degenerate
    )
    terms = _nll_terms(best_params, x, y_std)
    if terms is None:
        raise TrainingError("kernel matrix not positive definite at final parameters")
    model._cache = {
        "x": x,
        "y_std": y_std,
        "f_train": terms["f"],
        "chol": terms["chol"],
        "alpha": terms["alpha"],
    }
    return model


def _copy_params(params):
    return {k: (np.copy(v) if isinstance(v, np.ndarray) else v) for k, v in params.items()}


def predict(model: DeepKernelModel, x_all: np.ndarray, batch: int = 2048) -> Prediction:
    """Exact GP posterior mean/std over feature-space inputs, in original units.

    The reported sigma is the latent-function std (no observation noise),
    clamped at 0 from below.
    """
    if not model.trained:
        raise TrainingError("predict called on an untrained model")
    x_all = np.asarray(x_all, dtype=np.float64)
    cache = model._cache
    out = math.exp(model.params["log_out"])
    means = np.empty(x_all.shape[0])
    variances = np.empty(x_all.shape[0])
    for start in range(0, x_all.shape[0], batch):
        xb = x_all[start : start + batch]
        fb = features(model, xb)
        k_star = _kernel(model.params, fb, cache["f_train"])  # (b, n)
        means[start : start + batch] = k_star @ cache["alpha"]
        w = np.linalg.solve(cache["chol"], k_star.T)  # (n, b)
        variances[start : start + batch] = out - np.sum(w**2, axis=0)
    variances = np.maximum(variances, 0.0)
    return Prediction(
        mean=model.y_mean + model.y_scale * means,
        sigma=model.y_scale * np.sqrt(variances),
    )


# ---------------------------------------------------------------------------
# checkpoint blob: magic + version + json header + raw float64 arrays


def model_to_bytes(model: DeepKernelModel) -> bytes:
    header = {
        "y_mean": model.y_mean,
        "y_scale": model.y_scale,
        "degenerate_targets": model.degenerate_targets,
        "scalars": {k: float(model.params[k]) for k in SCALAR_PARAMS},
        "arrays": {k: list(model.params[k].shape) for k in ARRAY_PARAMS},
        "trained": model.trained,
    }
    if model.trained:
        header["train_shape"] = list(model._cache["x"].shape)
    hjson = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
    buf.write(len(hjson).to_bytes(4, "little"))
    buf.write(hjson)
    for k in ARRAY_PARAMS:
        buf.write(np.asarray(model.params[k], dtype="<f8").tobytes())
    if model.trained:
        buf.write(np.asarray(model._cache["x"], dtype="<f8").tobytes())
        buf.write(np.asarray(model._cache["y_std"], dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(blob: bytes) -> DeepKernelModel:
    from aesim.errors import CheckpointError

    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version = int.from_bytes(blob[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported model checkpoint version {version}")
    hlen = int.from_bytes(blob[8:12], "little")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupted model checkpoint header: {exc}") from exc
    offset = 12 + hlen
    params = {}
    for k in ARRAY_PARAMS:
        shape = tuple(header["arrays"][k])
        count = int(np.prod(shape))
        end = offset + count * 8
        if end > len(blob):
            raise CheckpointError(f"truncated model checkpoint (array {k!r})")
        params[k] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    for k in SCALAR_PARAMS:
        params[k] = float(header["scalars"][k])
    model = DeepKernelModel(
        params=params,
        y_mean=header["y_mean"],
        y_scale=header["y_scale"],
        degenerate_targets=header["degenerate_targets"],
    )
    if header.get("trained"):
        n, d = header["train_shape"]
        end = offset + n * d * 8
        x = np.frombuffer(blob[offset:end], dtype="<f8").reshape(n, d).copy()
        offset = end
        end = offset + n * 8
        if end > len(blob):
            raise CheckpointError("truncated model checkpoint (training data)")
        y_std = np.frombuffer(blob[offset:end], dtype="<f8").copy()
        terms = _nll_terms(params, x, y_std)
        if terms is None:
            raise CheckpointError("checkpointed model has a non-PD kernel")
        model._cache = {
            "x": x,
            "y_std": y_std,
            "f_train": terms["f"],
            "chol": terms["chol"],
            "alpha": terms["alpha"],
        }
    return model
