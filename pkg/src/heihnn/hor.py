"""Hyperedge outlier removal.

Each (node, hyperedge) incidence entry is scored by the cosine similarity of
the node embedding and the hyperedge embedding. Entries scoring below a
threshold are dropped for the current forward pass only; a per-hyperedge
floor keeps the best-scoring members so no hyperedge is emptied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import ShapeError, Value, mul_const, segment_normalize
from .hypergraph import Hypergraph

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class HorConfig:
    tau: float = 0.0
    min_keep: int = 1
    renormalize: bool = True

    def __post_init__(self):
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [-1, 1], got {self.tau}")
        if self.min_keep < 1:
            raise ValueError(f"min_keep must be >= 1, got {self.min_keep}")


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"vector lengths differ: {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < NORM_FLOOR or ny < NORM_FLOOR:
        return 0.0
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def entry_similarities(x: np.ndarray, y: np.ndarray, h: Hypergraph) -> np.ndarray:
    """Cosine similarity for every incidence entry, in the hypergraph's entry order."""
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"node width {x.shape[1]} != hyperedge width {y.shape[1]}")
    if x.shape[0] != h.n or y.shape[0] != h.m:
        raise ShapeError(f"embeddings {x.shape}/{y.shape} do not match hypergraph ({h.n}, {h.m})")
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    dots = np.einsum("ij,ij->i", x[h.rows], y[h.cols])
    denom = nx[h.rows] * ny[h.cols]
    degenerate = (nx[h.rows] < NORM_FLOOR) | (ny[h.cols] < NORM_FLOOR)
    sims = np.where(degenerate, 0.0, dots / np.where(degenerate, 1.0, denom))
    return np.clip(sims, -1.0, 1.0)


def hor_mask(x, y, h: Hypergraph, cfg: HorConfig) -> np.ndarray:
    """Boolean survivor flag per incidence entry."""
    x = x.data if isinstance(x, Value) else np.asarray(x, dtype=np.float64)
    y = y.data if isinstance(y, Value) else np.asarray(y, dtype=np.float64)
    sims = entry_similarities(x, y, h)
    keep = sims >= cfg.tau
    survivors = np.bincount(h.cols, weights=keep, minlength=h.m)
    short = np.flatnonzero(survivors < np.minimum(cfg.min_keep, h.edge_degrees))
    if short.size:
        starts = np.concatenate(([0], np.cumsum(h.edge_degrees)))
        for j in short:
            lo, hi = starts[j], starts[j + 1]
            # members are stored ascending, so a stable sort on -sim breaks ties by lower node id
            order = np.argsort(-sims[lo:hi], kind="stable")
            keep[lo:hi] = False
            keep[lo + order[: cfg.min_keep]] = True
    return keep


def apply_mask(weights, mask: np.ndarray, groups: np.ndarray, n_groups: int,
               renormalize: bool = True) -> Value:
    """Zero masked entries; optionally rescale each group that lost entries back to sum 1.

    Groups that kept every entry are passed through unchanged, so an all-true
    mask is an exact identity.
    """
    mask = np.asarray(mask, dtype=bool)
    if isinstance(weights, Value):
        if weights.shape != (mask.size, 1):
            raise ShapeError(f"mask of {mask.size} entries does not match weights {weights.shape}")
    elif np.shape(weights)[0] != mask.size:
        raise ShapeError(f"mask of {mask.size} entries does not match {np.shape(weights)[0]} weights")
    if mask.all():
        return weights if isinstance(weights, Value) else Value(weights)
    out = mul_const(weights, mask.astype(np.float64))
    if renormalize:
        lost = np.bincount(groups, weights=~mask, minlength=n_groups) > 0
        out = segment_normalize(out, groups, n_groups, active=lost)
    return out
