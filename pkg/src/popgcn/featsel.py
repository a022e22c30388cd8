"""Dimensionality-reduction front-ends fitted on training rows only.

Four strategies: recursive feature elimination driven by a closed-form ridge
classifier, PCA by SVD, the hidden layer of a small supervised MLP, and a
tied-weight autoencoder (sigmoid code, tanh reconstruction, MSE loss).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import ContractError, DivergenceError, ParameterError

AE_DEFAULT_EPOCHS = 100
AE_DEFAULT_LR = 5e-4


def ridge_fit(x, y, alpha: float):
    """Ridge weights by direct solve on mean-centered data.

    Solves (Xc^T Xc + alpha I) w = Xc^T yc exactly, switching to the
    equivalent dual system when there are more features than rows. Labels are
    +/-1; the decision for a new row is the sign of (row - train mean) . w
    plus the label mean.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError("need a 2-D matrix with at least 2 rows")
    if len(np.unique(y)) < 2:
        raise ContractError("both classes must be present")
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    n, c = x.shape
    if c <= n:
        gram = xc.T @ xc
        gram[np.diag_indices(c)] += alpha
        return np.linalg.solve(gram, xc.T @ yc)
    outer = xc @ xc.T
    outer[np.diag_indices(n)] += alpha
    return xc.T @ np.linalg.solve(outer, yc)


def rfe_select(
    x_train, y_train, target_c: int, step_fraction: float = 0.1, alpha: float = 1.0
) -> np.ndarray:
    """Recursive feature elimination: repeatedly drop the features with the
    smallest |ridge coefficient| until exactly target_c remain.

    Each iteration removes ceil(step_fraction * current_C) features, clipped
    so the last step lands exactly on target_c. Returns sorted original
    column indices.
    """
    x = np.asarray(x_train, dtype=np.float64)
    c = x.shape[1]
    if not 1 <= target_c <= c:
        raise ParameterError(f"target_c must be in [1, {c}], got {target_c}")
    if not 0 < step_fraction <= 1:
        raise ParameterError(f"step_fraction must be in (0, 1], got {step_fraction}")
    active = np.arange(c)
    while len(active) > target_c:
        w = ridge_fit(x[:, active], y_train, alpha)
        n_drop = min(math.ceil(step_fraction * len(active)), len(active) - target_c)
        order = np.argsort(np.abs(w), kind="stable")
        active = np.delete(active, order[:n_drop])
    return np.sort(active)


@dataclass
class PcaInfo:
    mean: np.ndarray
    components: np.ndarray  # (target_c, C); rows beyond rank are zero
    explained_variance_ratio: np.ndarray  # per kept component
    cumulative_explained: float
    rank: int
    rank_deficient: bool


def pca_fit_transform(x_train, x_all, target_c: int):
    """Project all rows onto the top target_c principal directions of the
    training rows (mean-centered, singular values descending).

    Returns (reduced, PcaInfo); components beyond the training-data rank are
    zero vectors and rank_deficient is flagged.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    x_all = np.asarray(x_all, dtype=np.float64)
    n, c = x_train.shape
    if not 1 <= target_c <= min(n, c):
        raise ParameterError(f"target_c must be in [1, {min(n, c)}], got {target_c}")
    mean = x_train.mean(axis=0)
    centered = x_train - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    # Deterministic sign: largest-|entry| coordinate of each component positive.
    for i in range(vt.shape[0]):
        j = int(np.argmax(np.abs(vt[i])))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
    rank = int(np.sum(s > (s[0] * 1e-12 if s.size and s[0] > 0 else 0.0)))
    components = vt[:target_c].copy()
    rank_deficient = target_c > rank
    if rank_deficient:
        components[rank:] = 0.0
    total_var = float((s**2).sum())
    ratios = (s[:target_c] ** 2 / total_var) if total_var > 0 else np.zeros(target_c)
    if rank_deficient:
        ratios = np.concatenate([ratios[:rank], np.zeros(target_c - rank)])
    info = PcaInfo(
        mean=mean,
        components=components,
        explained_variance_ratio=ratios,
        cumulative_explained=float(ratios.sum()),
        rank=rank,
        rank_deficient=rank_deficient,
    )
    return (x_all - mean) @ components.T, info


class _Adam:
    """Minimal Adam for the small selector networks."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _mlp_loss_and_grads(x, y, w1, b1, w2, b2):
    n = x.shape[0]
    z1 = x @ w1 + b1
    h = np.maximum(z1, 0.0)
    z2 = h @ w2 + b2
    zmax = z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z2 - zmax).sum(axis=1)) + zmax[:, 0]
    loss = float(np.mean(log_norm - z2[np.arange(n), y]))
    probs = np.exp(z2 - zmax)
    probs /= probs.sum(axis=1, keepdims=True)
    dz2 = probs
    dz2[np.arange(n), y] -= 1.0
    dz2 /= n
    dw2 = h.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, (dw1, db1, dw2, db2)


def _fit_mlp(x, y, width, epochs, lr, seed):
    c = x.shape[1]
    rng = np.random.default_rng(seed)
    w1 = _glorot(rng, (c, width), c, width)
    b1 = np.zeros(width)
    w2 = _glorot(rng, (width, 2), width, 2)
    b2 = np.zeros(2)
    opt = _Adam([w1, b1, w2, b2], lr)
    history = []
    for epoch in range(epochs):
        loss, grads = _mlp_loss_and_grads(x, y, w1, b1, w2, b2)
        if not np.isfinite(loss):
            raise DivergenceError(f"MLP selector diverged at epoch {epoch}", epoch=epoch)
        history.append(loss)
        opt.step(list(grads))
    return w1, b1, history


def mlp_feature_extract(
    x_train,
    y_train,
    x_all,
    target_c: int,
    epochs: int = 100,
    lr: float = 1e-3,
    seed: int = 0,
    diagnostics: dict | None = None,
):
    """Hidden activations of a one-hidden-layer softmax classifier.

    The classifier (ReLU hidden layer of width target_c) is trained on the
    training rows; the returned matrix holds the hidden activations of every
    row in x_all.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(np.unique(y_train)) < 2:
        raise ContractError("both classes must be present")
    if target_c < 1:
        raise ParameterError(f"target_c must be >= 1, got {target_c}")
    w1, b1, history = _fit_mlp(x_train, y_train, target_c, epochs, lr, seed)
    if diagnostics is not None:
        diagnostics["loss_history"] = history
    return np.maximum(np.asarray(x_all, dtype=np.float64) @ w1 + b1, 0.0)


def _minmax_scale_params(x_train):
    lo = x_train.min(axis=0)
    hi = x_train.max(axis=0)
    span = hi - lo
    degenerate = span == 0.0
    span = np.where(degenerate, 1.0, span)
    return lo, span, degenerate


def _minmax_apply(x, lo, span, degenerate):
    scaled = 2.0 * (x - lo) / span - 1.0
    scaled[:, degenerate] = 0.0  # constant training feature carries no signal
    return scaled


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _ae_loss_and_grads(xs, w, b_enc, b_dec):
    """MSE loss of the tied-weight autoencoder and its exact gradients."""
    z1 = xs @ w + b_enc
    h = _sigmoid(z1)
    z2 = h @ w.T + b_dec
    recon = np.tanh(z2)
    diff = recon - xs
    loss = float(np.mean(diff**2))
    dz2 = (2.0 / diff.size) * diff * (1.0 - recon**2)
    db_dec = dz2.sum(axis=0)
    dz1 = (dz2 @ w) * h * (1.0 - h)
    db_enc = dz1.sum(axis=0)
    dw = xs.T @ dz1 + dz2.T @ h  # encoder + tied decoder contributions
    return loss, (dw, db_enc, db_dec)


def _fit_autoencoder(xs, width, epochs, lr, seed):
    c = xs.shape[1]
    rng = np.random.default_rng(seed)
    w = _glorot(rng, (c, width), c, width)  # tied: decoder uses w.T
    b_enc = np.zeros(width)
    b_dec = np.zeros(c)
    opt = _Adam([w, b_enc, b_dec], lr)
    history = []
    for epoch in range(epochs):
        loss, grads = _ae_loss_and_grads(xs, w, b_enc, b_dec)
        if not np.isfinite(loss):
            raise DivergenceError(f"autoencoder diverged at epoch {epoch}", epoch=epoch)
        history.append(loss)
        opt.step(list(grads))
    return w, b_enc, b_dec, history


def autoencoder_encode(
    x_train,
    x_all,
    target_c: int,
    epochs: int = AE_DEFAULT_EPOCHS,
    lr: float = AE_DEFAULT_LR,
    seed: int = 0,
    diagnostics: dict | None = None,
):
    """Codes from a tied-weight autoencoder trained on the training rows.

    Inputs are rescaled per feature to [-1, 1] using training min/max so the
    tanh output layer can reconstruct them; constant training features map to
    0 and are flagged in diagnostics. Codes are sigmoid activations in (0, 1).
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    x_all = np.asarray(x_all, dtype=np.float64)
    if target_c < 1:
        raise ParameterError(f"target_c must be >= 1, got {target_c}")
    lo, span, degenerate = _minmax_scale_params(x_train)
    xs_train = _minmax_apply(x_train, lo, span, degenerate)
    w, b_enc, b_dec, history = _fit_autoencoder(xs_train, target_c, epochs, lr, seed)
    if diagnostics is not None:
        diagnostics["loss_history"] = history
        diagnostics["degenerate_features"] = np.flatnonzero(degenerate).tolist()
    xs_all = _minmax_apply(x_all, lo, span, degenerate)
    return _sigmoid(xs_all @ w + b_enc)


SELECTOR_KINDS = ("none", "rfe", "pca", "mlp", "autoencoder")


@dataclass(frozen=True)
class SelectorConfig:
    kind: str = "none"
    target_c: int = 0  # ignored for kind 'none'
    ridge_alpha: float = 1.0
    rfe_step_fraction: float = 0.1
    mlp_epochs: int = 100
    mlp_lr: float = 1e-3
    ae_epochs: int = AE_DEFAULT_EPOCHS
    ae_lr: float = AE_DEFAULT_LR
    seed: int = 0

    def validate(self):
        if self.kind not in SELECTOR_KINDS:
            raise ParameterError(f"unknown selector kind {self.kind!r}")
        if self.kind != "none" and self.target_c < 1:
            raise ParameterError("target_c must be >= 1 for fitted selectors")


class FeatureSelector:
    """Fit on training rows, transform any rows; fitted state is serializable."""

    def __init__(self, config: SelectorConfig):
        config.validate()
        self.config = config
        self.fitted = False
        self.selected_indices = None
        self.pca_info: PcaInfo | None = None
        self.weights: dict | None = None
        self.scale: tuple | None = None
        self.diagnostics: dict = {}

    def fit(self, x_train, y_train=None):
        cfg = self.config
        x_train = np.asarray(x_train, dtype=np.float64)
        if cfg.kind in ("rfe", "mlp") and y_train is None:
            raise ContractError(f"selector kind {cfg.kind!r} needs training labels")
        if cfg.kind == "none":
            pass
        elif cfg.kind == "rfe":
            y_signed = 2.0 * np.asarray(y_train, dtype=np.float64) - 1.0
            self.selected_indices = rfe_select(
                x_train, y_signed, cfg.target_c, cfg.rfe_step_fraction, cfg.ridge_alpha
            )
        elif cfg.kind == "pca":
            _, self.pca_info = pca_fit_transform(x_train, x_train, cfg.target_c)
        elif cfg.kind == "mlp":
            y = np.asarray(y_train, dtype=np.int64)
            if len(np.unique(y)) < 2:
                raise ContractError("both classes must be present")
            w1, b1, history = _fit_mlp(
                x_train, y, cfg.target_c, cfg.mlp_epochs, cfg.mlp_lr, cfg.seed
            )
            self.weights = {"w1": w1, "b1": b1}
            self.diagnostics["loss_history"] = history
        else:  # autoencoder
            lo, span, degenerate = _minmax_scale_params(x_train)
            xs = _minmax_apply(x_train, lo, span, degenerate)
            w, b_enc, _, history = _fit_autoencoder(
                xs, cfg.target_c, cfg.ae_epochs, cfg.ae_lr, cfg.seed
            )
            self.weights = {"w": w, "b_enc": b_enc}
            self.scale = (lo, span, degenerate)
            self.diagnostics["loss_history"] = history
            self.diagnostics["degenerate_features"] = np.flatnonzero(degenerate).tolist()
        self.fitted = True
        return self

    def transform(self, x):
        if not self.fitted:
            raise ContractError("selector must be fitted before transform")
        x = np.asarray(x, dtype=np.float64)
        kind = self.config.kind
        if kind == "none":
            return x
        if kind == "rfe":
            return x[:, self.selected_indices]
        if kind == "pca":
            return (x - self.pca_info.mean) @ self.pca_info.components.T
        if kind == "mlp":
            return np.maximum(x @ self.weights["w1"] + self.weights["b1"], 0.0)
        lo, span, degenerate = self.scale
        xs = _minmax_apply(x, lo, span, degenerate)
        return _sigmoid(xs @ self.weights["w"] + self.weights["b_enc"])

    def save(self, path):
        payload = {"config_json": np.frombuffer(
            json.dumps(asdict(self.config), sort_keys=True).encode(), dtype=np.uint8
        )}
        if self.selected_indices is not None:
            payload["selected_indices"] = self.selected_indices
        if self.pca_info is not None:
            payload["pca_mean"] = self.pca_info.mean
            payload["pca_components"] = self.pca_info.components
        if self.weights is not None:
            for key, val in self.weights.items():
                payload[f"weights_{key}"] = val
        if self.scale is not None:
            lo, span, degenerate = self.scale
            payload["scale_lo"] = lo
            payload["scale_span"] = span
            payload["scale_degenerate"] = degenerate
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "FeatureSelector":
        with np.load(path) as data:
            config = SelectorConfig(**json.loads(bytes(data["config_json"]).decode()))
            sel = cls(config)
            if "selected_indices" in data:
                sel.selected_indices = data["selected_indices"].copy()
            if "pca_mean" in data:
                sel.pca_info = PcaInfo(
                    mean=data["pca_mean"].copy(),
                    components=data["pca_components"].copy(),
                    explained_variance_ratio=np.zeros(config.target_c),
                    cumulative_explained=0.0,
                    rank=0,
                    rank_deficient=False,
                )
            weights = {
                key[len("weights_"):]: data[key].copy()
                for key in data.files
                if key.startswith("weights_")
            }
            if weights:
                sel.weights = weights
            if "scale_lo" in data:
                sel.scale = (
                    data["scale_lo"].copy(),
                    data["scale_span"].copy(),
                    data["scale_degenerate"].copy(),
                )
        sel.fitted = True
        return sel
