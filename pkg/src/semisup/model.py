"""Small fully connected classifier with a feature head and an EMA shadow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ModelConfig:
    input_dim: int
    n_classes: int
    hidden: list[int] = field(default_factory=lambda: [256])
    feature_dim: int = 128
    seed: int = 0
    # take matched features after the penultimate nonlinearity (True) or before it
    features_after_relu: bool = True

    def __post_init__(self):
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")


class MLP:
    """D -> hidden... -> F -> C with relu between layers.

    ``forward`` returns ``(features, probs)`` where features are the
    penultimate activations and probs the softmax of the linear head.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = [config.input_dim, *config.hidden, config.feature_dim, config.n_classes]
        self.params: list[Tensor] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
            self.params.append(Tensor(np.zeros(fan_out), requires_grad=True))
        # fixed input standardization, applied identically to every view
        self.input_mean = np.zeros(config.input_dim)
        self.input_std = np.ones(config.input_dim)

    def set_normalization(self, mean, std) -> None:
        mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (self.config.input_dim,)).copy()
        std = np.broadcast_to(np.asarray(std, dtype=np.float64), (self.config.input_dim,)).copy()
        if np.any(std <= 0):
            raise ValueError("normalization std must be positive")
        self.input_mean, self.input_std = mean, std

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, batch, params: list[Tensor] | None = None) -> tuple[Tensor, Tensor]:
        params = self.params if params is None else params
        x = ad.as_tensor(batch)
        if x.values.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ad.ShapeError(f"expected batch of width {self.config.input_dim}, got shape {x.shape}")
        if x.is_leaf and not x.requires_grad:
            h = ad.Tensor((x.values - self.input_mean) / self.input_std)
        else:
            h = ad.div(ad.sub(x, self.input_mean), self.input_std)
        features = None
        last = self.n_layers - 1
        for i in range(last):
            pre = ad.affine(h, params[2 * i], params[2 * i + 1])
            h = ad.relu(pre)
            if i == last - 1:
                features = h if self.config.features_after_relu else pre
        logits = ad.affine(h, params[2 * last], params[2 * last + 1])
        return features, ad.softmax_rows(logits)

    def state(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.params]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(self.params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"parameter shape mismatch: {p.shape} vs {a.shape}")
            p.values = np.array(a, dtype=np.float64)
            p.grad = np.zeros_like(p.values)


class EmaState:
    """Shadow parameters updated as ``s <- decay * s + (1 - decay) * p``."""

    def __init__(self, model: MLP, decay: float = 0.999):
        if not 0.0 <= decay <= 1.0:
            raise ValueError("EMA decay must lie in [0, 1]")
        self.decay = decay
        self.shadow = [Tensor(p.values.copy()) for p in model.params]

    def update(self, model: MLP) -> EmaState:
        d = self.decay
        for s, p in zip(self.shadow, model.params):
            if s.shape != p.shape:
                raise ValueError("EMA shadow and model shapes disagree")
            s.values *= d
            s.values += (1.0 - d) * p.values
        return self


def fit_normalization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std for (N, D) payloads, per-channel for (N, H, W, ch) images.

    Returned arrays are already broadcast to the flattened sample length.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        mean, std = X.mean(axis=0), X.std(axis=0)
    else:
        axes = tuple(range(X.ndim - 1))
        mean = np.broadcast_to(X.mean(axis=axes), X.shape[1:]).reshape(-1)
        std = np.broadcast_to(X.std(axis=axes), X.shape[1:]).reshape(-1)
    return mean, np.where(std > 1e-8, std, 1.0)


def ema_update(model: MLP, ema: EmaState) -> EmaState:
    return ema.update(model)


def predict_eval(model: MLP, ema: EmaState, batch) -> np.ndarray:
    """Class probabilities from the shadow weights; records no graph."""
    with ad.no_grad():
        _, probs = model.forward(batch, params=ema.shadow)
    return probs.values


def embed_eval(model: MLP, batch, params: list[Tensor] | None = None) -> tuple[np.ndarray, np.ndarray]:
    with ad.no_grad():
        f, p = model.forward(batch, params=params)
    return f.values, p.values
