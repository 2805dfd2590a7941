"""Node-to-hyperedge, hyperedge-to-hyperedge and hyperedge-to-node stages.

All incidence-shaped quantities are per-entry columns in the hypergraph's
canonical entry order (see :class:`~heihnn.hypergraph.Hypergraph`), combined
with the fixed pattern through :func:`~heihnn.diffmath.pattern_matmul`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import diffmath as dm
from .diffmath import Value
from .hor import HorConfig, apply_mask, hor_mask
from .hypergraph import Hypergraph, interaction_adjacency, normalized_interaction_with_self_loop

N2HE = "n2he"
HE2N = "he2n"


@dataclass(frozen=True)
class StageConfig:
    use_attention: bool = True
    hor_n2he: bool = False
    hor_he2n: bool = False
    chebyshev_k: int = 0
    residual: bool = True
    he2he: bool = True
    activation: str = "relu"
    # activation of the N2HE and HE2HE stages; None means same as ``activation``
    inner_activation: str | None = None
    normalization: str = "interaction"
    learn_chebyshev: bool = True

    def __post_init__(self):
        if self.chebyshev_k < 0:
            raise ValueError(f"chebyshev_k must be >= 0, got {self.chebyshev_k}")
        for act in (self.activation, self.inner_activation):
            if act is not None and act not in dm.ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    def act(self, stage: str):
        name = self.activation if stage == HE2N or self.inner_activation is None else self.inner_activation
        return dm.ACTIVATIONS[name]


@dataclass
class LayerParameters:
    theta1: Value
    theta2: Value
    theta3: Value
    wq: Value
    wk: Value
    wq2: Value
    wk2: Value
    alpha: float = 1.0
    beta: float = 1.0
    cheb: Value | None = None

    MATRICES = ("theta1", "theta2", "theta3", "wq", "wk", "wq2", "wk2")

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_hid: int, d_out: int, d_att: int,
             alpha: float = 1.0, beta: float = 1.0, chebyshev_k: int = 0,
             learn_chebyshev: bool = True) -> "LayerParameters":
        g = dm.glorot
        cheb = None
        if chebyshev_k > 0:
            c = np.zeros((1, chebyshev_k + 1))
            c[0, 0] = 1.0
            cheb = Value(c, requires_grad=learn_chebyshev, name="cheb")
        return cls(
            theta1=g(rng, d_in, d_hid, "theta1"),
            theta2=g(rng, d_hid, d_hid, "theta2"),
            theta3=g(rng, d_hid, d_out, "theta3"),
            wq=g(rng, d_in, d_att, "wq"),
            wk=g(rng, d_in, d_att, "wk"),
            wq2=g(rng, d_in, d_att, "wq2"),
            wk2=g(rng, d_hid, d_att, "wk2"),
            alpha=alpha,
            beta=beta,
            cheb=cheb,
        )

    def named(self) -> dict[str, Value]:
        out = {k: getattr(self, k) for k in self.MATRICES}
        if self.cheb is not None:
            out["cheb"] = self.cheb
        return out


def init_hyperedge_features(h: Hypergraph, x0) -> Value:
    """Mean of member-node features for every hyperedge (D_E^-1 H^T X)."""
    w = 1.0 / h.edge_degrees[h.cols].astype(np.float64)
    return dm.pattern_matmul(Value(w), h.rows, h.cols, (h.n, h.m), x0, transpose=True)


def attention_incidence(x, y, wq, wk, h: Hypergraph, direction: str) -> Value:
    """Softmax-normalized attention weight for every incidence entry.

    ``n2he`` normalizes over the members of each hyperedge, ``he2n`` over the
    hyperedges containing each node.
    """
    q = dm.matmul(x, wq)
    k = dm.matmul(y, wk)
    logits = dm.gather_dot(q, k, h.rows, h.cols)
    if direction == N2HE:
        return dm.segment_softmax(logits, h.cols, h.m)
    if direction == HE2N:
        return dm.segment_softmax(logits, h.rows, h.n)
    raise ValueError(f"unknown direction {direction!r}")


def _incidence_values(h: Hypergraph, weights, mask, groups, n_groups, renormalize) -> Value:
    vals = weights if weights is not None else Value(np.ones(h.nnz))
    if mask is not None:
        # plain 0/1 incidence is not a distribution, so it is never renormalized
        vals = apply_mask(vals, mask, groups, n_groups, renormalize and weights is not None)
    return dm.mul_const(vals, h.entry_scale())


def n2he(h: Hypergraph, x, y, params: LayerParameters, cfg: StageConfig,
         weights: Value | None = None, mask: np.ndarray | None = None,
         renormalize: bool = True) -> Value:
    """sigma((alpha D_E^-1/2 hor(H_att)^T D_V^-1/2 X + Y) theta1)."""
    vals = _incidence_values(h, weights, mask, h.cols, h.m, renormalize)
    agg = dm.pattern_matmul(vals, h.rows, h.cols, (h.n, h.m), x, transpose=True)
    pre = dm.scale(agg, params.alpha)
    if cfg.residual:
        pre = dm.add(pre, y)
    return cfg.act(N2HE)(dm.matmul(pre, params.theta1))


def he2n(h: Hypergraph, y2, x, params: LayerParameters, cfg: StageConfig,
         weights: Value | None = None, mask: np.ndarray | None = None,
         renormalize: bool = True) -> Value:
    """sigma((beta D_V^-1/2 hor(H_att') D_E^-1/2 Y + X) theta3)."""
    vals = _incidence_values(h, weights, mask, h.rows, h.n, renormalize)
    agg = dm.pattern_matmul(vals, h.rows, h.cols, (h.n, h.m), y2)
    pre = dm.scale(agg, params.beta)
    if cfg.residual:
        pre = dm.add(pre, x)
    return cfg.act(HE2N)(dm.matmul(pre, params.theta3))


@lru_cache(maxsize=32)
def _self_loop_operator(h: Hypergraph, normalization: str) -> np.ndarray:
    return normalized_interaction_with_self_loop(h, normalization)


@lru_cache(maxsize=32)
def _chebyshev_operator(h: Hypergraph) -> np.ndarray:
    a = interaction_adjacency(h).astype(np.float64)
    return scaled_laplacian(a)


def he2he(h: Hypergraph, y1, params: LayerParameters, cfg: StageConfig) -> Value:
    if not cfg.he2he:
        return y1
    if cfg.chebyshev_k == 0:
        op = _self_loop_operator(h, cfg.normalization)
        return cfg.act(N2HE)(dm.matmul(dm.sparse_scatter_matmul(op, y1), params.theta2))
    return chebyshev_he2he(_chebyshev_operator(h), y1, params.cheb, params.theta2,
                           cfg.chebyshev_k, cfg.act(N2HE), scaled=True)


def lambda_max(a: np.ndarray, tol: float = 1e-6, max_iter: int = 1000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Stops once the eigen-residual |Av - lam v| falls below ``tol`` (relative);
    watching only successive Rayleigh quotients stalls when the top two
    eigenvalues are close.
    """
    v = np.linspace(1.0, 2.0, a.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * max(abs(lam), 1.0):
            return lam
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam


def normalized_laplacian(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.allclose(a, a.T):
        raise ValueError("interaction matrix must be symmetric")
    deg = a.sum(axis=1)
    dd = np.outer(deg, deg)
    scaled = np.where(dd > 0, a / np.sqrt(np.where(dd > 0, dd, 1.0)), 0.0)
    return np.eye(a.shape[0]) - scaled


def scaled_laplacian(a: np.ndarray, lam: float | None = None) -> np.ndarray:
    """2 L / lambda_max - I for the symmetric normalized Laplacian L of ``a``."""
    lap = normalized_laplacian(a)
    if lam is None:
        lam = lambda_max(lap)
    if lam < 1e-12:
        lam = 2.0  # L == 0 (e.g. a single hyperedge); fall back to the spectral bound
    return (2.0 / lam) * lap - np.eye(a.shape[0])


def chebyshev_he2he(a_he: np.ndarray, y, coeffs, theta2, k: int, act=dm.relu,
                    scaled: bool = False) -> Value:
    """sigma(sum_i c_i T_i(L') Y theta2) via the three-term recursion.

    ``a_he`` is the interaction adjacency, or already the scaled Laplacian
    when ``scaled`` is true.
    """
    if k < 1:
        raise ValueError(f"Chebyshev order must be >= 1, got {k}")
    lp = a_he if scaled else scaled_laplacian(a_he)
    if coeffs is None:
        c = np.zeros((1, k + 1))
        c[0, 0] = 1.0
        coeffs = Value(c)
    terms = [dm.identity(y), dm.sparse_scatter_matmul(lp, y)]
    for _ in range(2, k + 1):
        nxt = dm.add(dm.scale(dm.sparse_scatter_matmul(lp, terms[-1]), 2.0), dm.scale(terms[-2], -1.0))
        terms.append(nxt)
    filtered = dm.weighted_sum(terms, coeffs)
    return act(dm.matmul(filtered, theta2))


def heihnn_layer(h: Hypergraph, x, y, params: LayerParameters, cfg: StageConfig,
                 hor_cfg: HorConfig | None = None) -> tuple[Value, Value]:
    """One full convolution: N2HE, HE2HE, HE2N. Returns (X^{l+1}, Y^{l+1})."""
    x, y = dm._lift(x), dm._lift(y)
    hor_cfg = hor_cfg or HorConfig()
    mask = None
    if cfg.hor_n2he or cfg.hor_he2n:
        mask = hor_mask(x.data, y.data, h, hor_cfg)

    w1 = attention_incidence(x, y, params.wq, params.wk, h, N2HE) if cfg.use_attention else None
    y1 = n2he(h, x, y, params, cfg, w1, mask if cfg.hor_n2he else None, hor_cfg.renormalize)
    y2 = he2he(h, y1, params, cfg)
    w2 = attention_incidence(x, y2, params.wq2, params.wk2, h, HE2N) if cfg.use_attention else None
    x2 = he2n(h, y2, x, params, cfg, w2, mask if cfg.hor_he2n else None, hor_cfg.renormalize)
    return x2, y2


def hgnn_layer(h: Hypergraph, x, theta, act=dm.relu) -> Value:
    """sigma(D_V^-1/2 H D_E^-1 H^T D_V^-1/2 X theta)."""
    s = Value(h.entry_scale())
    up = dm.pattern_matmul(s, h.rows, h.cols, (h.n, h.m), x, transpose=True)
    down = dm.pattern_matmul(s, h.rows, h.cols, (h.n, h.m), up)
    return act(dm.matmul(down, theta))


REDUCTION = StageConfig(use_attention=False, residual=False, he2he=False, inner_activation="identity")
