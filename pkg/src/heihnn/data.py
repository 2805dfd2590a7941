"""Datasets: text formats, hypergraph construction, synthetic benchmark.

File formats (UTF-8, ``#`` starts a comment, any line endings):

* hypergraph: ``n m`` header, then m lines of 0-based node ids.
* features: ``n d`` header, then n lines of d reals, or of sparse
  ``index:value`` tokens (missing indices are 0).
* labels: n lines, one integer each.
* graph edge list: one ``u v`` pair per line.
* manifest: ``key=value`` lines (``expected_n``, ``expected_m``,
  ``expected_max_e``, ``classes``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffmath import make_rng
from .hypergraph import Hypergraph, HypergraphError, build_hypergraph, structure_stats

TRAIN_FRACTION = 0.8


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def resplit(self, seed: int) -> "Dataset":
        train, test = split_indices(len(self.labels), seed, self.labels)
        return Dataset(self.hypergraph, self.features, self.labels, train, test)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(self.hypergraph, features, self.labels, self.train_idx, self.test_idx)


def split_indices(n: int, seed: int, labels=None, train_fraction: float = TRAIN_FRACTION):
    """Seeded uniform split; every class must land in the training part."""
    perm = make_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    if cut == 0 or cut == n:
        raise ValueError(f"cannot split {n} nodes into nonempty train/test parts")
    train, test = np.sort(perm[:cut]), np.sort(perm[cut:])
    if labels is not None:
        labels = np.asarray(labels)
        absent = np.setdiff1d(np.unique(labels), labels[train])
        if absent.size:
            raise ValueError(f"split seed {seed}: class {absent[0]} missing from training nodes")
    return train, test


def majority_baseline(labels) -> float:
    counts = np.bincount(np.asarray(labels))
    return counts.max() / counts.sum()


# ---------------------------------------------------------------- parsing


def _content_lines(text: str):
    """Yield (line_number, content-without-comment, was_comment_only) for every line."""
    for i, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        yield i, body, raw.strip().startswith("#")


def _ints(tokens, lineno, what):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise DataFormatError(f"line {lineno}: expected integers in {what}") from None


def parse_hypergraph(text: str) -> tuple[int, list[list[int]]]:
    header = None
    edges: list[list[int]] = []
    m = 0
    for lineno, body, comment in _content_lines(text):
        if comment:
            continue
        if header is None:
            if not body:
                continue
            vals = _ints(body.split(), lineno, "hypergraph header")
            if len(vals) != 2:
                raise DataFormatError(f"line {lineno}: header must be 'n m'")
            header = vals
            m = vals[1]
            continue
        if len(edges) == m:
            if body:
                raise DataFormatError(f"line {lineno}: more hyperedge lines than the declared {m}")
            continue
        if not body:
            raise DataFormatError(f"line {lineno}: empty hyperedge")
        edges.append(_ints(body.split(), lineno, "hyperedge"))
    if header is None:
        raise DataFormatError("hypergraph file has no header")
    if len(edges) != m:
        raise DataFormatError(f"header declares {m} hyperedges, found {len(edges)}")
    return header[0], edges


def parse_features(text: str) -> np.ndarray:
    header = None
    rows = []
    for lineno, body, comment in _content_lines(text):
        if comment or (not body and header is None):
            continue
        if header is None:
            vals = _ints(body.split(), lineno, "feature header")
            if len(vals) != 2:
                raise DataFormatError(f"line {lineno}: header must be 'n d'")
            header = vals
            continue
        if not body and len(rows) == header[0]:
            continue
        n, d = header
        if len(rows) == n:
            raise DataFormatError(f"line {lineno}: more feature rows than the declared {n}")
        row = np.zeros(d)
        toks = body.split()
        try:
            if any(":" in t for t in toks):
                for t in toks:
                    idx, val = t.split(":")
                    j = int(idx)
                    if not 0 <= j < d:
                        raise DataFormatError(f"line {lineno}: feature index {j} outside [0, {d})")
                    row[j] = float(val)
            else:
                if len(toks) != d:
                    raise DataFormatError(f"line {lineno}: expected {d} values, found {len(toks)}")
                row[:] = [float(t) for t in toks]
        except ValueError as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"line {lineno}: malformed feature value") from None
        rows.append(row)
    if header is None:
        raise DataFormatError("feature file has no header")
    if len(rows) != header[0]:
        raise DataFormatError(f"header declares {header[0]} rows, found {len(rows)}")
    return np.vstack(rows) if rows else np.zeros((0, header[1]))


def parse_labels(text: str) -> np.ndarray:
    out = []
    for lineno, body, comment in _content_lines(text):
        if comment or not body:
            continue
        vals = _ints(body.split(), lineno, "label")
        if len(vals) != 1 or vals[0] < 0:
            raise DataFormatError(f"line {lineno}: expected one nonnegative integer label")
        out.append(vals[0])
    return np.array(out, dtype=np.int64)


def parse_edge_list(text: str) -> list[tuple[int, int]]:
    out = []
    for lineno, body, comment in _content_lines(text):
        if comment or not body:
            continue
        vals = _ints(body.split(), lineno, "edge")
        if len(vals) != 2:
            raise DataFormatError(f"line {lineno}: expected 'u v'")
        out.append((vals[0], vals[1]))
    return out


def parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for lineno, body, comment in _content_lines(text):
        if comment or not body:
            continue
        if "=" not in body:
            raise DataFormatError(f"line {lineno}: expected key=value")
        k, v = body.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _read(path) -> str:
    return Path(path).read_text(encoding="utf-8")


# ---------------------------------------------------------------- writing


def format_hypergraph(h: Hypergraph) -> str:
    lines = [f"{h.n} {h.m}"] + [" ".join(map(str, e)) for e in h.edges]
    return "\n".join(lines) + "\n"


def format_features(x: np.ndarray) -> str:
    lines = [f"{x.shape[0]} {x.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in x]
    return "\n".join(lines) + "\n"


def format_labels(labels) -> str:
    return "".join(f"{int(v)}\n" for v in labels)


def write_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "hypergraph.txt").write_text(format_hypergraph(ds.hypergraph), encoding="utf-8")
    (d / "features.txt").write_text(format_features(ds.features), encoding="utf-8")
    (d / "labels.txt").write_text(format_labels(ds.labels), encoding="utf-8")
    stats = structure_stats(ds.hypergraph)
    (d / "manifest.txt").write_text(
        f"expected_n={stats['n']}\nexpected_m={stats['m']}\n"
        f"expected_max_e={stats['max_e']}\nclasses={ds.n_classes}\n",
        encoding="utf-8",
    )
    return d


# ---------------------------------------------------------------- loading


def attach_isolated(n: int, edges: list) -> list:
    """Append a singleton hyperedge for every node that appears in no hyperedge."""
    seen = np.zeros(n, dtype=bool)
    for e in edges:
        for v in e:
            if 0 <= v < n:
                seen[v] = True
    return list(edges) + [[int(v)] for v in np.flatnonzero(~seen)]


def check_manifest(h: Hypergraph, labels: np.ndarray, manifest: dict[str, str]) -> None:
    stats = structure_stats(h)
    actual = {
        "expected_n": stats["n"],
        "expected_m": stats["m"],
        "expected_max_e": stats["max_e"],
        "classes": int(labels.max()) + 1,
    }
    for key, have in actual.items():
        if key in manifest and int(manifest[key]) != have:
            raise DataFormatError(f"manifest mismatch: {key}={manifest[key]} but dataset has {have}")


def load_dataset(hypergraph_path, features_path, labels_path, split_seed: int = 0,
                 manifest_path=None) -> Dataset:
    n, edges = parse_hypergraph(_read(hypergraph_path))
    return _assemble(n, edges, features_path, labels_path, split_seed, manifest_path)


def _assemble(n, edges, features_path, labels_path, split_seed, manifest_path) -> Dataset:
    h = build_hypergraph(n, attach_isolated(n, edges))
    x = parse_features(_read(features_path))
    y = parse_labels(_read(labels_path))
    if x.shape[0] != n:
        raise DataFormatError(f"features have {x.shape[0]} rows, hypergraph has {n} nodes")
    if len(y) != n:
        raise DataFormatError(f"labels have {len(y)} entries, hypergraph has {n} nodes")
    if manifest_path is not None and os.path.exists(manifest_path):
        check_manifest(h, y, parse_manifest(_read(manifest_path)))
    train, test = split_indices(n, split_seed, y)
    return Dataset(h, x, y, train, test)


def load_dataset_dir(directory, split_seed: int = 0, hops: int = 1, knn: int | None = None,
                     metric: str = "euclidean") -> Dataset:
    """Load ``hypergraph.txt`` or build one from ``edges.txt`` / KNN, plus features and labels."""
    d = Path(directory)
    feats, labels, manifest = d / "features.txt", d / "labels.txt", d / "manifest.txt"
    if knn is not None:
        x = parse_features(_read(feats))
        h = knn_hypergraph(x, knn, metric)
        return _assemble(h.n, [list(e) for e in h.edges], feats, labels, split_seed, manifest)
    if (d / "hypergraph.txt").exists():
        return load_dataset(d / "hypergraph.txt", feats, labels, split_seed, manifest)
    if (d / "edges.txt").exists():
        n = len(parse_labels(_read(labels)))
        h = neighbor_hypergraph(parse_edge_list(_read(d / "edges.txt")), n, hops)
        return _assemble(n, [list(e) for e in h.edges], feats, labels, split_seed, manifest)
    raise FileNotFoundError(f"{d} has neither hypergraph.txt nor edges.txt")


# ---------------------------------------------------------------- construction


def neighbor_hypergraph(adjacency, n: int, hops: int = 1) -> Hypergraph:
    """One hyperedge per node: the node and everything within ``hops`` steps.

    Identical member sets are merged, keeping the first (lowest node id).
    """
    nbrs = [set() for _ in range(n)]
    for u, v in adjacency:
        for w in (u, v):
            if not 0 <= w < n:
                raise HypergraphError(f"edge ({u}, {v}): endpoint {w} outside [0, {n})")
        if u != v:
            nbrs[u].add(v)
            nbrs[v].add(u)
    seen = set()
    edges = []
    for v in range(n):
        reach, frontier = {v}, {v}
        for _ in range(hops):
            frontier = {w for f in frontier for w in nbrs[f]} - reach
            reach |= frontier
        key = frozenset(reach)
        if key not in seen:
            seen.add(key)
            edges.append(sorted(reach))
    return build_hypergraph(n, edges)


def knn_hypergraph(features, k: int, metric: str = "euclidean") -> Hypergraph:
    """One hyperedge per node: the node and its k-1 nearest others (ties to lower id)."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    if metric == "euclidean":
        sq = (x * x).sum(axis=1)
        dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0))
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        dist = 1.0 - (x / safe[:, None]) @ (x / safe[:, None]).T
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ids = np.arange(n)
    edges = []
    for v in range(n):
        d = dist[v].copy()
        d[v] = -np.inf
        order = np.lexsort((ids, d))
        edges.append([int(v)] + [int(u) for u in order[1:k]])
    return build_hypergraph(n, edges)


def synth_generate(classes: int = 4, nodes_per_class: int = 50, edge_size: int = 6,
                   homophily: float = 0.9, feature_noise: float = 1.0, seed: int = 7,
                   n_hyperedges: int = 120, feature_dim: int = 16,
                   outlier_rate: float = 0.0) -> Dataset:
    """Seeded class-structured benchmark.

    Class c has mean feature vector e_c (unit vector on axis c) plus isotropic
    Gaussian noise. Each hyperedge picks a class, then fills each of its
    ``edge_size`` slots from that class with probability ``homophily``, else
    from all nodes. With probability ``outlier_rate`` a hyperedge additionally
    receives one member from another class. Nodes left uncovered are added to
    a random hyperedge of their own class (a new singleton if none exists).
    """
    if classes < 2 or nodes_per_class < 1 or edge_size < 1 or n_hyperedges < 1:
        raise ValueError("classes >= 2 and positive sizes are required")
    if not 0.0 <= homophily <= 1.0 or not 0.0 <= outlier_rate <= 1.0:
        raise ValueError("homophily and outlier_rate must lie in [0, 1]")
    if feature_noise < 0:
        raise ValueError("feature_noise must be nonnegative")
    if edge_size > nodes_per_class:
        raise ValueError(f"edge_size {edge_size} exceeds nodes_per_class {nodes_per_class}")
    if feature_dim < classes:
        raise ValueError(f"feature_dim {feature_dim} must be >= classes {classes}")

    rng = make_rng(seed)
    n = classes * nodes_per_class
    labels = np.repeat(np.arange(classes), nodes_per_class)
    means = np.eye(classes, feature_dim)
    features = means[labels] + feature_noise * rng.standard_normal((n, feature_dim))

    members = [np.flatnonzero(labels == c) for c in range(classes)]
    edges, edge_class = [], []
    for _ in range(n_hyperedges):
        c = int(rng.integers(classes))
        chosen: list[int] = []
        for _ in range(edge_size):
            pool = members[c] if rng.random() < homophily else np.arange(n)
            pool = np.setdiff1d(pool, chosen, assume_unique=True)
            if pool.size == 0:
                pool = np.setdiff1d(np.arange(n), chosen, assume_unique=True)
            chosen.append(int(rng.choice(pool)))
        if rng.random() < outlier_rate:
            others = np.setdiff1d(np.flatnonzero(labels != c), chosen, assume_unique=True)
            chosen.append(int(rng.choice(others)))
        edges.append(chosen)
        edge_class.append(c)

    covered = np.zeros(n, dtype=bool)
    for e in edges:
        covered[e] = True
    for v in np.flatnonzero(~covered):
        same = [j for j, c in enumerate(edge_class) if c == labels[v]]
        if same:
            edges[int(rng.choice(same))].append(int(v))
        else:
            edges.append([int(v)])
            edge_class.append(int(labels[v]))

    h = build_hypergraph(n, edges)
    train, test = split_indices(n, seed, labels)
    return Dataset(h, features, labels, train, test)
