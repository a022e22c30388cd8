"""Graph convolutional network over Chebyshev filter bases.

Architecture: L hidden layers (dropout on the layer input at train time, then
a Chebyshev graph convolution, then ReLU) followed by one output convolution
producing logits. The loss is softmax cross-entropy averaged over masked
(labeled training) nodes plus an L2 penalty on weights; unmasked nodes carry
features into the convolutions but never touch the loss. Gradients are exact
and hand-derived; the optimizer is Adam. Everything is float64 numpy.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractError, DivergenceError, ParameterError
from .popgraph import PopulationGraph
from .spectral import (
    ChebyshevBasis,
    LaplacianMatrix,
    chebyshev_basis,
    chebyshev_weighted_sum,
    estimate_lambda_max,
    normalized_laplacian,
    scale_laplacian,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GcnConfig:
    n_classes: int = 2
    hidden_layers: int = 1  # L
    hidden_width: int | None = None  # None -> input feature count
    cheb_order: int = 3  # K
    dropout_rate: float = 0.3
    l2_coeff: float = 5e-4
    learning_rate: float = 0.005
    epochs: int = 150
    seed: int = 0
    use_bias: bool = True

    def validate(self):
        if self.n_classes < 2:
            raise ParameterError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.hidden_layers < 0:
            raise ParameterError(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if self.hidden_width is not None and self.hidden_width < 1:
            raise ParameterError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.cheb_order < 1:
            raise ParameterError(f"cheb_order must be >= 1, got {self.cheb_order}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.l2_coeff < 0:
            raise ParameterError(f"l2_coeff must be >= 0, got {self.l2_coeff}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class Layer:
    weight: np.ndarray  # (K+1, C_in, C_out)
    bias: np.ndarray  # (C_out,)


@dataclass
class GcnModel:
    config: GcnConfig
    layers: list[Layer]
    step: int = 0
    moment1: list[np.ndarray] = field(default_factory=list)
    moment2: list[np.ndarray] = field(default_factory=list)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def init_model(config: GcnConfig, n_features: int, rng=None) -> GcnModel:
    """Glorot-uniform weights over fan_in = C_in * (K+1), zero biases."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    width = config.hidden_width if config.hidden_width is not None else n_features
    sizes = [n_features] + [width] * config.hidden_layers + [config.n_classes]
    k1 = config.cheb_order + 1
    layers = []
    for c_in, c_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (c_in * k1 + c_out))
        weight = rng.uniform(-limit, limit, size=(k1, c_in, c_out))
        layers.append(Layer(weight=weight, bias=np.zeros(c_out)))
    model = GcnModel(config=config, layers=layers)
    model.moment1 = [np.zeros_like(p) for p in model.parameters()]
    model.moment2 = [np.zeros_like(p) for p in model.parameters()]
    return model


def cheb_conv_forward(basis, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """out[n, j] = sum_k sum_i basis[k][n, i] * weight[k, i, j] (+ bias[j])."""
    terms = basis.terms if isinstance(basis, ChebyshevBasis) else list(basis)
    if len(terms) != weight.shape[0]:
        raise ContractError(
            f"basis has {len(terms)} orders, weight expects {weight.shape[0]}"
        )
    if terms[0].shape[1] != weight.shape[1]:
        raise ContractError(
            f"basis feature dim {terms[0].shape[1]} != weight C_in {weight.shape[1]}"
        )
    out = terms[0] @ weight[0]
    for k in range(1, len(terms)):
        out += terms[k] @ weight[k]
    if bias is not None:
        out = out + bias
    return out


def scaled_operator(graph: PopulationGraph) -> LaplacianMatrix:
    """Normalized Laplacian rescaled to the Chebyshev domain for this graph."""
    lap = normalized_laplacian(graph)
    lam = estimate_lambda_max(lap)
    return scale_laplacian(lap, lam.value)


@dataclass
class _LayerCache:
    keep: np.ndarray | None  # dropout keep mask, None when not applied
    basis: ChebyshevBasis
    z: np.ndarray  # pre-activation


def _layer_basis(scaled, h, order):
    if order == 0:
        return ChebyshevBasis(terms=[h.copy()], order=0)
    if scaled is None:
        raise ContractError("cheb_order > 0 requires a scaled Laplacian")
    return chebyshev_basis(scaled, h, order)


def _forward(model, scaled, x, train, rng):
    cfg = model.config
    h = np.asarray(x, dtype=np.float64)
    caches = []
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        keep = None
        if li < last and train and cfg.dropout_rate > 0.0:
            if rng is None:
                raise ContractError("train-mode forward with dropout requires an rng")
            keep = rng.random(h.shape) >= cfg.dropout_rate
            h = h * keep / (1.0 - cfg.dropout_rate)
        basis = _layer_basis(scaled, h, layer.weight.shape[0] - 1)
        z = cheb_conv_forward(basis, layer.weight, layer.bias)
        caches.append(_LayerCache(keep=keep, basis=basis, z=z))
        h = np.maximum(z, 0.0) if li < last else z
    return h, caches


def forward(model: GcnModel, scaled: LaplacianMatrix | None, x, mode: str = "eval", rng=None):
    """Logits for every node; mode 'train' applies dropout to hidden-layer inputs."""
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    logits, _ = _forward(model, scaled, x, train=(mode == "train"), rng=rng)
    return logits


def _stable_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def masked_loss(logits, labels, mask, l2_coeff: float, model: GcnModel) -> float:
    """Mean softmax cross-entropy over masked nodes + l2_coeff * sum(W^2).

    Only labels at masked positions are ever read; biases are excluded from
    the penalty.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("mask must select at least one node")
    z = logits[mask]
    y = np.asarray(labels)[mask]
    zmax = z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    data = float(np.mean(log_norm - z[np.arange(len(y)), y]))
    reg = l2_coeff * sum(float((layer.weight**2).sum()) for layer in model.layers)
    return data + reg


def loss_and_grads(model, scaled, x, labels, mask, l2_coeff, train=False, rng=None):
    """One forward/backward pass; dropout masks are shared between the two.

    Returns (loss, grads, logits) with grads aligned to model.parameters().
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("mask must select at least one node")
    labels = np.asarray(labels)
    logits, caches = _forward(model, scaled, x, train=train, rng=rng)
    loss = masked_loss(logits, labels, mask, l2_coeff, model)

    n_masked = int(mask.sum())
    masked_idx = np.flatnonzero(mask)
    grad_z = np.zeros_like(logits)
    grad_z[masked_idx] = _stable_softmax(logits[masked_idx])
    grad_z[masked_idx, labels[masked_idx]] -= 1.0
    grad_z[masked_idx] /= n_masked

    cfg = model.config
    grads: list[np.ndarray | None] = [None] * (2 * len(model.layers))
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        cache = caches[li]
        order = layer.weight.shape[0] - 1
        # dL/dW_k = T_k(Ls)H)^T G, plus the L2 term; dL/db = column sums of G.
        grad_w = np.stack([cache.basis.terms[k].T @ grad_z for k in range(order + 1)])
        grad_w += 2.0 * l2_coeff * layer.weight
        grad_b = grad_z.sum(axis=0) if cfg.use_bias else np.zeros_like(layer.bias)
        grads[2 * li] = grad_w
        grads[2 * li + 1] = grad_b
        if li == 0:
            break
        # dL/dH = sum_k T_k(Ls) (G W_k^T), evaluated by one Clenshaw pass;
        # T_k(Ls) is symmetric so no transpose is needed.
        parts = [grad_z @ layer.weight[k].T for k in range(order + 1)]
        grad_h = parts[0] if order == 0 else chebyshev_weighted_sum(scaled, parts)
        if cache.keep is not None:
            grad_h = grad_h * cache.keep / (1.0 - cfg.dropout_rate)
        grad_z = grad_h * (caches[li - 1].z > 0.0)
    return loss, grads, logits


def backward(model, scaled, x, labels, mask, l2_coeff, train=False, rng=None):
    """Gradients of masked_loss for every weight and bias tensor."""
    _, grads, _ = loss_and_grads(model, scaled, x, labels, mask, l2_coeff, train=train, rng=rng)
    return grads


def adam_step(model: GcnModel, grads, lr: float | None = None) -> GcnModel:
    """In-place Adam update with bias correction."""
    if lr is None:
        lr = model.config.learning_rate
    model.step += 1
    t = model.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(model.parameters(), grads, model.moment1, model.moment2):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return model


def _check_training_inputs(graph, x, labels, mask):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if x.shape[0] != graph.n_nodes:
        raise ContractError(f"{x.shape[0]} feature rows for {graph.n_nodes} nodes")
    if len(labels) != graph.n_nodes or len(mask) != graph.n_nodes:
        raise ContractError("labels and mask must have one entry per node")
    if not mask.any():
        raise ContractError("training mask must select at least one node")
    if np.any((labels[mask] < 0) | (labels[mask] > 1)):
        raise ContractError("masked nodes must carry known labels in {0, 1}")
    return x, labels, mask


def train(config: GcnConfig, graph: PopulationGraph, x, labels, mask, val_mask=None):
    """Full-graph semi-supervised training for config.epochs Adam steps.

    Returns (model, history) where history holds one record per epoch with the
    loss and masked training accuracy (plus validation accuracy when val_mask
    is given). Raises DivergenceError on a non-finite loss.
    """
    config.validate()
    x, labels, mask = _check_training_inputs(graph, x, labels, mask)
    scaled = scaled_operator(graph)
    rng = np.random.default_rng(config.seed)
    model = init_model(config, x.shape[1], rng)
    history = []
    for epoch in range(config.epochs):
        loss, grads, logits = loss_and_grads(
            model, scaled, x, labels, mask, config.l2_coeff, train=True, rng=rng
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        adam_step(model, grads)
        pred = np.argmax(logits, axis=1)
        entry = {
            "epoch": epoch,
            "loss": loss,
            "train_accuracy": float(np.mean(pred[mask] == labels[mask])),
        }
        if val_mask is not None:
            vm = np.asarray(val_mask, dtype=bool)
            entry["val_accuracy"] = float(np.mean(pred[vm] == labels[vm]))
        history.append(entry)
    return model, history


def predict(model: GcnModel, graph: PopulationGraph, x):
    """Per-node class probabilities and argmax labels (ties -> lower index)."""
    scaled = scaled_operator(graph)
    logits = forward(model, scaled, x, mode="eval")
    probs = _stable_softmax(logits)
    return probs, np.argmax(probs, axis=1)


def save_model(model: GcnModel, path):
    """Versioned npz checkpoint: config, shapes, parameters, optimizer state."""
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "config_json": np.frombuffer(
            json.dumps(asdict(model.config), sort_keys=True).encode(), dtype=np.uint8
        ),
        "n_layers": np.array(len(model.layers)),
        "step": np.array(model.step),
    }
    for i, layer in enumerate(model.layers):
        payload[f"weight_{i}"] = layer.weight
        payload[f"bias_{i}"] = layer.bias
    for i, (m, v) in enumerate(zip(model.moment1, model.moment2)):
        payload[f"moment1_{i}"] = m
        payload[f"moment2_{i}"] = v
    np.savez(path, **payload)


def load_model(path) -> GcnModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        cfg_dict = json.loads(bytes(data["config_json"]).decode())
        cfg_dict["hidden_width"] = cfg_dict.get("hidden_width")
        config = GcnConfig(**cfg_dict)
        n_layers = int(data["n_layers"])
        layers = [
            Layer(weight=data[f"weight_{i}"].copy(), bias=data[f"bias_{i}"].copy())
            for i in range(n_layers)
        ]
        model = GcnModel(config=config, layers=layers, step=int(data["step"]))
        model.moment1 = [data[f"moment1_{i}"].copy() for i in range(2 * n_layers)]
        model.moment2 = [data[f"moment2_{i}"].copy() for i in range(2 * n_layers)]
    return model
