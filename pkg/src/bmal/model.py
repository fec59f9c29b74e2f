"""Fully-connected regression network in neural-tangent parametrization.

Layer rule: z_{l+1} = (sigma_w / sqrt(d_l)) W_{l+1} x_l + sigma_b b_{l+1},
weights initialized i.i.d. standard normal, biases zero.  Training uses
minibatch Adam on the mean squared loss with a learning rate that decays
linearly to zero, and restores the parameters from the epoch with the
lowest validation RMSE.

Training runs in float32; forward passes and feature extraction follow the
parameter dtype, so a model cast to float64 (``TrainedModel.to_float64``)
yields float64 features for high-precision cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class ConfigurationError(ValueError):
    """Invalid network or training configuration."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss in epoch {epoch}")
        self.epoch = epoch


def _relu(z):
    return np.maximum(z, 0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1 + z * (1 - s))


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "silu": (_silu, _silu_grad)}

DEFAULT_LEARNING_RATES = {"relu": 0.375, "silu": 0.15}
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture: widths = (d_0, ..., d_L) with a single output d_L = 1."""

    widths: tuple
    activation: str = "relu"
    sigma_w: float = 0.2
    sigma_b: float = 0.2
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("need at least one layer (input and output width)")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"all widths must be >= 1, got {widths}")
        if widths[-1] != 1:
            raise ConfigurationError(f"output width must be 1, got {widths[-1]}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if not (self.sigma_w > 0 and self.sigma_b > 0):
            raise ConfigurationError("sigma_w and sigma_b must be positive")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1


@dataclass
class ModelParams:
    """Per-layer weight matrices W_l (d_l x d_{l-1}) and bias vectors b_l (d_l,)."""

    weights: list
    biases: list

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


@dataclass
class TrainConfig:
    epochs: int = 256
    minibatch_size: int = 256
    initial_lr: float | None = None  # None: per-activation default
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    valid_size: int = 1024
    train_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.minibatch_size < 1:
            raise ConfigurationError("minibatch_size must be >= 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")

    def resolve_lr(self, activation: str) -> float:
        if self.initial_lr is not None:
            if self.initial_lr < 0:
                raise ConfigurationError("initial_lr must be non-negative")
            return float(self.initial_lr)
        return DEFAULT_LEARNING_RATES[activation]


def init_network(config: ModelConfig) -> ModelParams:
    """Draw i.i.d. standard-normal weights and zero biases, float32."""
    rng = np.random.default_rng(config.init_seed)
    weights, biases = [], []
    for l in range(1, len(config.widths)):
        d_out, d_in = config.widths[l], config.widths[l - 1]
        weights.append(rng.standard_normal((d_out, d_in)).astype(np.float32))
        biases.append(np.zeros(d_out, dtype=np.float32))
    return ModelParams(weights, biases)


def _forward_pass(params: ModelParams, config: ModelConfig, X: np.ndarray):
    """Return (per-layer post-activations x_0..x_{L-1}, pre-activations z_1..z_L)."""
    act, _ = _ACTIVATIONS[config.activation]
    dtype = params.dtype
    X = np.ascontiguousarray(X, dtype=dtype)
    if X.ndim != 2 or X.shape[1] != config.widths[0]:
        raise ValueError(
            f"input has shape {X.shape}, expected (n, {config.widths[0]})"
        )
    L = config.depth
    xs, zs = [X], []
    x = X
    for l in range(1, L + 1):
        scale = dtype.type(config.sigma_w / math.sqrt(config.widths[l - 1]))
        z = scale * (x @ params.weights[l - 1].T) + dtype.type(config.sigma_b) * params.biases[l - 1]
        zs.append(z)
        if l < L:
            x = act(z)
            xs.append(x)
    return xs, zs


def forward(params: ModelParams, config: ModelConfig, X: np.ndarray):
    """Evaluate the network; returns (predictions, cache of per-layer x and z)."""
    xs, zs = _forward_pass(params, config, X)
    return zs[-1][:, 0], {"x": xs, "z": zs}


def _loss_and_grads(params: ModelParams, config: ModelConfig, X, y):
    """Mean-squared loss over the minibatch and its parameter gradients."""
    _, act_grad = _ACTIVATIONS[config.activation]
    xs, zs = _forward_pass(params, config, X)
    dtype = params.dtype
    resid = zs[-1][:, 0] - y
    m = len(y)
    loss = float(np.mean(resid * resid))
    L = config.depth
    grads_w = [None] * L
    grads_b = [None] * L
    delta = (resid * dtype.type(2.0 / m))[:, None]  # dLoss/dz_l, walking backwards
    for l in range(L, 0, -1):
        scale = dtype.type(config.sigma_w / math.sqrt(config.widths[l - 1]))
        grads_w[l - 1] = scale * (delta.T @ xs[l - 1])
        grads_b[l - 1] = dtype.type(config.sigma_b) * delta.sum(axis=0)
        if l > 1:
            delta = (delta @ params.weights[l - 1]) * scale * act_grad(zs[l - 2])
    return loss, grads_w, grads_b


@dataclass
class TrainedModel:
    """Network restored from the best-validation epoch, plus the RMSE history."""

    config: ModelConfig
    params: ModelParams
    train_history: list = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return forward(self.params, self.config, X)[0]

    def to_float64(self) -> "TrainedModel":
        return TrainedModel(self.config, self.params.astype(np.float64), list(self.train_history))


def train(
    params: ModelParams,
    config: ModelConfig,
    train_config: TrainConfig,
    train_data,
    valid_data,
) -> TrainedModel:
    """Run minibatch Adam for the configured number of epochs.

    ``train_data`` and ``valid_data`` are (X, y) pairs; labels are assumed
    standardized by the caller.  Minibatches are drawn by shuffling without
    replacement each epoch (seeded), the final short minibatch is used as-is,
    and parameters are snapshotted at epoch ends only.
    """
    X, y = train_data
    X_valid, y_valid = valid_data
    if len(y_valid) < 1:
        raise ConfigurationError("validation set must be non-empty")
    X = np.ascontiguousarray(X, dtype=np.float32)
    y = np.ascontiguousarray(y, dtype=np.float32)
    X_valid = np.ascontiguousarray(X_valid, dtype=np.float32)
    y_valid = np.ascontiguousarray(y_valid, dtype=np.float32)

    lr0 = train_config.resolve_lr(config.activation)
    beta1, beta2 = train_config.adam_beta1, train_config.adam_beta2
    weights = [w.astype(np.float32).copy() for w in params.weights]
    biases = [b.astype(np.float32).copy() for b in params.biases]
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    rng = np.random.default_rng(train_config.train_seed)
    n = len(y)
    mb = train_config.minibatch_size
    steps_per_epoch = max(1, math.ceil(n / mb))
    total_steps = train_config.epochs * steps_per_epoch

    cur = ModelParams(weights, biases)
    history = []
    best_rmse = math.inf
    best_params = cur.copy()
    step = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = order[k * mb : (k + 1) * mb]
            loss, gw, gb = _loss_and_grads(cur, config, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            lr = lr0 * (1.0 - step / total_steps)
            t = step + 1
            corr1 = 1.0 - beta1**t
            corr2 = 1.0 - beta2**t
            for p, m_, v_, g in zip(
                weights + biases, m_w + m_b, v_w + v_b, gw + gb
            ):
                m_ *= beta1
                m_ += (1 - beta1) * g
                v_ *= beta2
                v_ += (1 - beta2) * (g * g)
                p -= (lr / corr1) * m_ / (np.sqrt(v_ / corr2) + _ADAM_EPS)
            step += 1
        preds = forward(cur, config, X_valid)[0]
        val_rmse = float(np.sqrt(np.mean((preds - y_valid) ** 2)))
        history.append(val_rmse)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_params = cur.copy()
    return TrainedModel(config, best_params, history)


def extract_ll_features(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Input to the last layer, scaled and with the sigma_b slot appended.

    Row i is (sigma_w / sqrt(d_{L-1}) * x_i^{(L-1)}, sigma_b); equal to the
    gradient of the output with respect to the combined last-layer weights.
    """
    cfg = model.config
    xs, _ = _forward_pass(model.params, cfg, X)
    dtype = model.params.dtype
    scale = dtype.type(cfg.sigma_w / math.sqrt(cfg.widths[cfg.depth - 1]))
    n = xs[-1].shape[0]
    bias_col = np.full((n, 1), cfg.sigma_b, dtype=dtype)
    return np.hstack([scale * xs[-1], bias_col])


@dataclass
class GradFactors:
    """Per-layer factorization of the output's parameter gradients.

    ``in_factors[l-1]`` holds the scaled layer inputs with the sigma_b slot,
    shape (n, d_{l-1}+1); ``out_factors[l-1]`` holds the sensitivities
    dz_L/dz_l, shape (n, d_l).  The outer product of row i of the two
    factors is the gradient of output i with respect to layer l's combined
    weight matrix.
    """

    in_factors: list
    out_factors: list


def extract_grad_factors(model: TrainedModel, X: np.ndarray) -> GradFactors:
    """Compute the input/sensitivity factor pairs for every layer."""
    cfg = model.config
    params = model.params
    _, act_grad = _ACTIVATIONS[cfg.activation]
    xs, zs = _forward_pass(params, cfg, X)
    dtype = params.dtype
    n = X.shape[0]
    L = cfg.depth

    in_factors = []
    for l in range(1, L + 1):
        scale = dtype.type(cfg.sigma_w / math.sqrt(cfg.widths[l - 1]))
        bias_col = np.full((n, 1), cfg.sigma_b, dtype=dtype)
        in_factors.append(np.hstack([scale * xs[l - 1], bias_col]))

    out_factors = [None] * L
    out = np.ones((n, 1), dtype=dtype)
    out_factors[L - 1] = out
    for l in range(L - 1, 0, -1):
        # sensitivity through layer l+1: (out_{l+1} @ W_{l+1}) * s_{l+1} * phi'(z_l)
        scale = dtype.type(cfg.sigma_w / math.sqrt(cfg.widths[l]))
        out = (out @ params.weights[l]) * scale * act_grad(zs[l - 1])
        out_factors[l - 1] = out
    return GradFactors(in_factors, out_factors)
