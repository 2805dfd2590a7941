"""Stacked HeIHNN layers with a linear softmax head."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffmath as dm
from .diffmath import ShapeError, Value
from .hor import HorConfig
from .hypergraph import Hypergraph
from .propagation import LayerParameters, StageConfig, heihnn_layer, init_hyperedge_features

SWEEP_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    att_width: int = 64
    alpha: float = 1.0
    beta: float = 1.0
    stage: StageConfig = field(default_factory=StageConfig)
    hor: HorConfig = field(default_factory=HorConfig)
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class HeIHNN:
    """Input projection, ``cfg.layers`` convolution layers, linear classifier.

    Raw features are projected to ``hidden`` width once so that the residual
    terms of every layer have matching widths. The hyperedge features Y^0 are
    the member means of the raw features, projected by the same matrix.
    """

    def __init__(self, cfg: ModelConfig, in_features: int, n_classes: int):
        self.cfg = cfg
        self.in_features = in_features
        self.n_classes = n_classes
        rng = dm.make_rng(cfg.seed)
        d = cfg.hidden
        self.w_in = dm.glorot(rng, in_features, d, "w_in")
        self.layers = [
            LayerParameters.init(rng, d, d, d, cfg.att_width, cfg.alpha, cfg.beta,
                                 cfg.stage.chebyshev_k, cfg.stage.learn_chebyshev)
            for _ in range(cfg.layers)
        ]
        self.w_out = dm.glorot(rng, d, n_classes, "w_out")
        self.b_out = Value(np.zeros((1, n_classes)), requires_grad=True, name="b_out")
        self.dropout_rng = dm.make_rng(cfg.seed + 0x5EED)

    def named_parameters(self) -> dict[str, Value]:
        out = {"w_in": self.w_in}
        for i, layer in enumerate(self.layers):
            for name, v in layer.named().items():
                out[f"layer{i}.{name}"] = v
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out

    def trainable(self) -> dict[str, Value]:
        return {k: v for k, v in self.named_parameters().items() if v.requires_grad}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"snapshot lacks parameters: {sorted(missing)}")
        for k, v in params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != v.shape:
                raise ShapeError(f"snapshot {k} has shape {a.shape}, model expects {v.shape}")
            v.data[...] = a

    def forward(self, h: Hypergraph, x0, training: bool = False) -> Value:
        x0 = x0 if isinstance(x0, Value) else Value(x0)
        if x0.shape != (h.n, self.in_features):
            raise ShapeError(f"features {x0.shape} do not match ({h.n}, {self.in_features})")
        p = self.cfg.dropout
        y0 = init_hyperedge_features(h, x0)
        x = dm.matmul(dm.dropout(x0, p, self.dropout_rng, training), self.w_in)
        y = dm.matmul(y0, self.w_in)
        for layer in self.layers:
            x, y = heihnn_layer(h, x, y, layer, self.cfg.stage, self.cfg.hor)
            x = dm.dropout(x, p, self.dropout_rng, training)
        return dm.add(dm.matmul(x, self.w_out), self.b_out)

    __call__ = forward


def predict(logits) -> np.ndarray:
    z = logits.data if isinstance(logits, Value) else np.asarray(logits)
    return np.argmax(z, axis=1)  # first maximum, i.e. lowest class id on ties
