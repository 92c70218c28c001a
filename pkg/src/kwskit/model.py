"""Feedforward multitask acoustic model trained from scratch with SGD.

One ReLU trunk feeds two softmax heads: keyword HMM states (the detector's
inputs) and an auxiliary phone classifier. The two cross-entropy streams are
combined with fixed weights (0.9 keyword / 0.1 auxiliary by default).
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

LOG_PROB_FLOOR = math.log(1e-30)
MODEL_FORMAT_VERSION = "kws-model-v1"


@dataclass
class ModelConfig:
    keyword_states: int
    aux_phones: int
    hidden_layers: int = 3
    hidden_units: int = 128
    loss_weight_keyword: float = 0.9
    loss_weight_aux: float = 0.1
    learning_rate: float = 0.1
    batch_size: int = 256
    epochs: int = 8
    init_seed: int = 0
    halve_lr_on_plateau: bool = True

    def __post_init__(self) -> None:
        if self.keyword_states < 1 or self.aux_phones < 1:
            raise ValueError("head sizes must be >= 1")
        if self.hidden_layers < 0 or (self.hidden_layers > 0 and self.hidden_units < 1):
            raise ValueError("bad hidden layer shape")
        if self.loss_weight_keyword < 0 or self.loss_weight_aux < 0:
            raise ValueError("loss weights must be nonnegative")
        if abs(self.loss_weight_keyword + self.loss_weight_aux - 1.0) > 1e-9:
            raise ValueError("loss weights must sum to 1")


@dataclass
class AcousticModel:
    config: ModelConfig
    feature_dim: int
    trunk_weights: list[np.ndarray]
    trunk_biases: list[np.ndarray]
    kw_weight: np.ndarray
    kw_bias: np.ndarray
    aux_weight: np.ndarray
    aux_bias: np.ndarray
    log_priors: np.ndarray | None = None

    def parameters(self) -> list[np.ndarray]:
        return (
            self.trunk_weights
            + self.trunk_biases
            + [self.kw_weight, self.kw_bias, self.aux_weight, self.aux_bias]
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "AcousticModel":
        return AcousticModel(
            config=replace(self.config),
            feature_dim=self.feature_dim,
            trunk_weights=[w.copy() for w in self.trunk_weights],
            trunk_biases=[b.copy() for b in self.trunk_biases],
            kw_weight=self.kw_weight.copy(),
            kw_bias=self.kw_bias.copy(),
            aux_weight=self.aux_weight.copy(),
            aux_bias=self.aux_bias.copy(),
            log_priors=None if self.log_priors is None else self.log_priors.copy(),
        )


def init_model(config: ModelConfig, feature_dim: int) -> AcousticModel:
    """Uniform init scaled by 1/sqrt(fan_in), zero biases, seeded."""
    rng = np.random.default_rng(config.init_seed)

    def layer(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)

    trunk_weights, trunk_biases = [], []
    width = feature_dim
    for _ in range(config.hidden_layers):
        w, b = layer(width, config.hidden_units)
        trunk_weights.append(w)
        trunk_biases.append(b)
        width = config.hidden_units
    kw_w, kw_b = layer(width, config.keyword_states)
    aux_w, aux_b = layer(width, config.aux_phones)
    return AcousticModel(
        config=config,
        feature_dim=feature_dim,
        trunk_weights=trunk_weights,
        trunk_biases=trunk_biases,
        kw_weight=kw_w,
        kw_bias=kw_b,
        aux_weight=aux_w,
        aux_bias=aux_b,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _forward_cached(model: AcousticModel, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    activations = [x]
    preacts = []
    h = x
    for w, b in zip(model.trunk_weights, model.trunk_biases):
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)
    kw_post = softmax(h @ model.kw_weight + model.kw_bias)
    aux_post = softmax(h @ model.aux_weight + model.aux_bias)
    return kw_post, aux_post, activations, preacts


def forward(model: AcousticModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame posteriors from both heads; each row sums to 1."""
    x = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise ValueError(
            f"feature dim mismatch: got {x.shape}, model expects (*, {model.feature_dim})"
        )
    kw_post, aux_post, _, _ = _forward_cached(model, x)
    return kw_post, aux_post


def _pick_log_probs(posteriors: np.ndarray, targets: np.ndarray, head: str) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= posteriors.shape[1]):
        raise ValueError(
            f"{head} target out of range [0, {posteriors.shape[1]}): "
            f"min {targets.min()}, max {targets.max()}"
        )
    picked = posteriors[np.arange(posteriors.shape[0]), targets]
    return np.maximum(np.log(np.maximum(picked, 1e-300)), LOG_PROB_FLOOR)


def weighted_ce_loss(
    kw_posteriors: np.ndarray,
    aux_posteriors: np.ndarray,
    kw_targets: np.ndarray,
    aux_targets: np.ndarray,
    weights: tuple[float, float] = (0.9, 0.1),
) -> float:
    """w_kw * mean(-log p_kw[target]) + w_aux * mean(-log p_aux[target])."""
    w_kw, w_aux = weights
    kw_loss = float(-_pick_log_probs(kw_posteriors, kw_targets, "keyword").mean())
    aux_loss = float(-_pick_log_probs(aux_posteriors, aux_targets, "aux").mean())
    return w_kw * kw_loss + w_aux * aux_loss


def _backward(model: AcousticModel, x, kw_targets, aux_targets):
    """Loss and gradients of weighted_ce_loss for one batch."""
    n = x.shape[0]
    w_kw = model.config.loss_weight_keyword
    w_aux = model.config.loss_weight_aux
    kw_post, aux_post, activations, preacts = _forward_cached(model, x)
    loss = weighted_ce_loss(kw_post, aux_post, kw_targets, aux_targets, (w_kw, w_aux))

    # d loss / d logits for a softmax-CE head is (p - onehot) * weight / n.
    d_kw = kw_post.copy()
    d_kw[np.arange(n), kw_targets] -= 1.0
    d_kw *= w_kw / n
    d_aux = aux_post.copy()
    d_aux[np.arange(n), aux_targets] -= 1.0
    d_aux *= w_aux / n

    h = activations[-1]
    grads = {
        "kw_weight": h.T @ d_kw,
        "kw_bias": d_kw.sum(axis=0),
        "aux_weight": h.T @ d_aux,
        "aux_bias": d_aux.sum(axis=0),
    }
    d_h = d_kw @ model.kw_weight.T + d_aux @ model.aux_weight.T
    trunk_w_grads = [None] * len(model.trunk_weights)
    trunk_b_grads = [None] * len(model.trunk_weights)
    for i in reversed(range(len(model.trunk_weights))):
        d_z = d_h * (preacts[i] > 0.0)
        trunk_w_grads[i] = activations[i].T @ d_z
        trunk_b_grads[i] = d_z.sum(axis=0)
        d_h = d_z @ model.trunk_weights[i].T
    grads["trunk_weights"] = trunk_w_grads
    grads["trunk_biases"] = trunk_b_grads
    return loss, grads


def _apply_sgd(model: AcousticModel, grads: dict, lr: float) -> None:
    for w, g in zip(model.trunk_weights, grads["trunk_weights"]):
        w -= lr * g
    for b, g in zip(model.trunk_biases, grads["trunk_biases"]):
        b -= lr * g
    model.kw_weight -= lr * grads["kw_weight"]
    model.kw_bias -= lr * grads["kw_bias"]
    model.aux_weight -= lr * grads["aux_weight"]
    model.aux_bias -= lr * grads["aux_bias"]


def _dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, kts, ats = [], [], []
    for features, kw_targets, aux_targets in dataset:
        x = np.asarray(getattr(features, "data", features), dtype=np.float64)
        if x.shape[0] != len(kw_targets) or x.shape[0] != len(aux_targets):
            raise ValueError("frame targets are not aligned with features")
        xs.append(x)
        kts.append(np.asarray(kw_targets, dtype=np.int64))
        ats.append(np.asarray(aux_targets, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(kts), np.concatenate(ats)


def train(
    model: AcousticModel,
    dataset,
    shuffle_seed: int = 0,
) -> tuple[AcousticModel, list[dict]]:
    """Mini-batch SGD over frames; returns the trained model and loss history.

    `dataset` is an iterable of (features, keyword_targets, aux_targets)
    triples with frame-aligned integer targets. Shuffling is seeded, so equal
    seeds and data give bit-identical histories. The learning rate is halved
    whenever an epoch fails to improve the full-set loss by 1%.
    """
    cfg = model.config
    model = model.copy()
    x, kw_t, aux_t = _dataset_arrays(dataset)
    rng = np.random.default_rng(shuffle_seed)
    lr = cfg.learning_rate
    history: list[dict] = []
    prev_loss = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = _backward(model, x[batch], kw_t[batch], aux_t[batch])
            if math.isnan(loss):
                raise RuntimeError(
                    f"NaN loss at epoch {epoch + 1}, batch starting at index {start}"
                )
            _apply_sgd(model, grads, lr)
        kw_post, aux_post, _, _ = _forward_cached(model, x)
        epoch_loss = weighted_ce_loss(
            kw_post, aux_post, kw_t, aux_t, (cfg.loss_weight_keyword, cfg.loss_weight_aux)
        )
        history.append({"epoch": epoch + 1, "loss": epoch_loss, "learning_rate": lr})
        if cfg.halve_lr_on_plateau and prev_loss is not None and epoch_loss > 0.99 * prev_loss:
            lr *= 0.5
        prev_loss = epoch_loss
    return model, history


def gradient_check(
    model: AcousticModel,
    features,
    kw_targets,
    aux_targets,
    num_checks: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    corrupt: bool = False,
) -> float:
    """Max relative error between backprop and central finite differences.

    Checks `num_checks` randomly chosen parameters on one batch. Central
    differences are meaningless across a ReLU kink, so any candidate whose
    perturbation flips an activation is skipped and replaced by the next
    random candidate. With `corrupt=True` the analytic gradient of the
    strongest checked parameter is doubled first; verifies that the check
    itself can catch a broken gradient.
    """
    if model.num_parameters() > 5000:
        raise ValueError("gradient_check is for small models (<= 5000 parameters)")
    x = np.asarray(getattr(features, "data", features), dtype=np.float64)
    kw_t = np.asarray(kw_targets, dtype=np.int64)
    aux_t = np.asarray(aux_targets, dtype=np.int64)
    weights = (model.config.loss_weight_keyword, model.config.loss_weight_aux)

    _, grads = _backward(model, x, kw_t, aux_t)
    flat_analytic = np.concatenate(
        [g.ravel() for g in grads["trunk_weights"]]
        + [g.ravel() for g in grads["trunk_biases"]]
        + [
            grads["kw_weight"].ravel(),
            grads["kw_bias"].ravel(),
            grads["aux_weight"].ravel(),
            grads["aux_bias"].ravel(),
        ]
    )
    params = model.parameters()
    sizes = [p.size for p in params]
    total = sum(sizes)
    starts = np.cumsum([0] + sizes)

    rng = np.random.default_rng(seed)
    candidates = rng.permutation(total)

    def loss_and_masks() -> tuple[float, list[np.ndarray]]:
        kw_post, aux_post, _, preacts = _forward_cached(model, x)
        loss = weighted_ce_loss(kw_post, aux_post, kw_t, aux_t, weights)
        return loss, [z > 0.0 for z in preacts]

    _, base_masks = loss_and_masks()
    numeric, analytic = [], []
    for flat_idx in candidates:
        if len(numeric) >= num_checks:
            break
        layer = int(np.searchsorted(starts, flat_idx, side="right")) - 1
        local = np.unravel_index(flat_idx - starts[layer], params[layer].shape)
        original = params[layer][local]
        params[layer][local] = original + step
        up, masks_up = loss_and_masks()
        params[layer][local] = original - step
        down, masks_down = loss_and_masks()
        params[layer][local] = original
        kink = any(
            not (np.array_equal(mu, mb) and np.array_equal(md, mb))
            for mu, md, mb in zip(masks_up, masks_down, base_masks)
        )
        if kink:
            continue
        numeric.append((up - down) / (2.0 * step))
        analytic.append(flat_analytic[flat_idx])
    if not numeric:
        raise RuntimeError("no kink-free parameters to check; batch is degenerate")

    numeric = np.asarray(numeric)
    analytic = np.asarray(analytic)
    if corrupt:
        analytic = analytic.copy()
        analytic[int(np.argmax(np.abs(numeric)))] *= 2.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# Serialization


def _encode(array: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(array, dtype="<f4").tobytes()).decode()


def _decode(blob: str, shape: tuple[int, ...]) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(blob), dtype="<f4").astype(np.float64)
    return data.reshape(shape)


def save_model(model: AcousticModel, path: str | Path) -> None:
    """Single JSON document: config, layer shapes, base64 float32 blobs."""
    named = _named_params(model)
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "feature_dim": model.feature_dim,
        "layers": [{"name": name, "shape": list(p.shape)} for name, p in named],
        "params": {name: _encode(p) for name, p in named},
    }
    if model.log_priors is not None:
        doc["log_priors"] = [float(v) for v in model.log_priors]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str | Path) -> AcousticModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    config = ModelConfig(**doc["config"])
    shapes = {layer["name"]: tuple(layer["shape"]) for layer in doc["layers"]}
    params = {name: _decode(doc["params"][name], shape) for name, shape in shapes.items()}
    model = AcousticModel(
        config=config,
        feature_dim=doc["feature_dim"],
        trunk_weights=[params[f"trunk_w{i}"] for i in range(config.hidden_layers)],
        trunk_biases=[params[f"trunk_b{i}"] for i in range(config.hidden_layers)],
        kw_weight=params["kw_weight"],
        kw_bias=params["kw_bias"],
        aux_weight=params["aux_weight"],
        aux_bias=params["aux_bias"],
    )
    if "log_priors" in doc:
        model.log_priors = np.asarray(doc["log_priors"], dtype=np.float64)
    return model


def _named_params(model: AcousticModel) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, (w, b) in enumerate(zip(model.trunk_weights, model.trunk_biases)):
        named.append((f"trunk_w{i}", w))
        named.append((f"trunk_b{i}", b))
    named.extend(
        [
            ("kw_weight", model.kw_weight),
            ("kw_bias", model.kw_bias),
            ("aux_weight", model.aux_weight),
            ("aux_bias", model.aux_bias),
        ]
    )
    return named
