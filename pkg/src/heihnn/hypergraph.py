"""Hypergraph container: incidence structure, degrees, interaction graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class HypergraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Immutable hypergraph over nodes ``0..n-1``.

    Incidence entries are kept in one canonical order, column-major
    (hyperedge by hyperedge, members ascending). ``rows[k]``/``cols[k]`` is
    the k-th (node, hyperedge) pair; every per-entry array in the package
    (attention weights, outlier masks) uses this order.
    """

    n: int
    m: int
    edges: tuple[tuple[int, ...], ...]
    rows: np.ndarray
    cols: np.ndarray
    node_degrees: np.ndarray
    edge_degrees: np.ndarray
    incidence: sp.csr_matrix = field(repr=False)
    incidence_csc: sp.csc_matrix = field(repr=False)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def dense(self) -> np.ndarray:
        return self.incidence.toarray()

    def entry_scale(self) -> np.ndarray:
        """Per-entry factor d_v^-1/2 * d_e^-1/2 of the symmetric normalization."""
        return 1.0 / np.sqrt(self.node_degrees[self.rows] * self.edge_degrees[self.cols])


def build_hypergraph(n: int, edges: Iterable[Iterable[int]]) -> Hypergraph:
    n = int(n)
    if n < 1:
        raise HypergraphError(f"node count must be positive, got {n}")
    canon = []
    for j, members in enumerate(edges):
        ids = [int(v) for v in members]
        if not ids:
            raise HypergraphError(f"hyperedge {j} is empty")
        if len(set(ids)) != len(ids):
            raise HypergraphError(f"hyperedge {j} lists a node more than once")
        for v in ids:
            if v < 0 or v >= n:
                raise HypergraphError(f"hyperedge {j}: node id {v} outside [0, {n})")
        canon.append(tuple(sorted(ids)))
    if not canon:
        raise HypergraphError("hypergraph needs at least one hyperedge")

    m = len(canon)
    edge_degrees = np.array([len(e) for e in canon], dtype=np.int64)
    cols = np.repeat(np.arange(m, dtype=np.int64), edge_degrees)
    rows = np.fromiter((v for e in canon for v in e), dtype=np.int64, count=len(cols))
    node_degrees = np.bincount(rows, minlength=n).astype(np.int64)
    isolated = np.flatnonzero(node_degrees == 0)
    if isolated.size:
        raise HypergraphError(f"node {isolated[0]} belongs to no hyperedge")

    ones = np.ones(len(rows))
    csr = sp.csr_matrix((ones, (rows, cols)), shape=(n, m))
    return Hypergraph(
        n=n,
        m=m,
        edges=tuple(canon),
        rows=rows,
        cols=cols,
        node_degrees=node_degrees,
        edge_degrees=edge_degrees,
        incidence=csr,
        incidence_csc=csr.tocsc(),
    )


def interaction_adjacency(h: Hypergraph) -> np.ndarray:
    """H^T H as a dense integer matrix; entry (i, j) = |e_i & e_j|."""
    a = (h.incidence_csc.T @ h.incidence_csc).toarray()
    return np.rint(a).astype(np.int64)


def normalized_interaction_with_self_loop(h: Hypergraph, normalization: str = "interaction") -> np.ndarray:
    """D^-1/2 (H^T H + I) D^-1/2.

    ``normalization="interaction"`` takes D as the row sums of H^T H + I.
    ``"paper-literal"`` uses the hyperedge degrees D_E instead, which is not
    guaranteed to give spectral radius <= 1.
    """
    a = interaction_adjacency(h).astype(np.float64) + np.eye(h.m)
    if normalization == "interaction":
        deg = a.sum(axis=1)
    elif normalization == "paper-literal":
        deg = h.edge_degrees.astype(np.float64)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return a / np.sqrt(np.outer(deg, deg))


def structure_stats(h: Hypergraph) -> dict:
    return {"n": h.n, "m": h.m, "max_e": int(h.edge_degrees.max())}


def permute(h: Hypergraph, node_perm: Sequence[int], edge_perm: Sequence[int]) -> Hypergraph:
    """Relabel: old node v becomes ``node_perm[v]``; new hyperedge j is old ``edge_perm[j]``."""
    node_perm = np.asarray(node_perm)
    return build_hypergraph(h.n, [[int(node_perm[v]) for v in h.edges[j]] for j in edge_perm])
