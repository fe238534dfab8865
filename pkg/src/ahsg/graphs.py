"""Graph data model, on-disk formats, and adjacency/perturbation algebra.

Graphs are undirected, unweighted, and stored dense: at desk scale
(n <= ~3500) a dense adjacency keeps the gradient math direct and costs
a few tens of MB at most. All functions here are pure; `Graph` arrays are
frozen after construction so instances can be shared across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

UNKNOWN = -1


class GraphFormatError(ValueError):
    """Raised when a dataset file is missing, malformed, or inconsistent."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph with a train/test node split.

    Attributes
    ----------
    adjacency : (n, n) int8 array
        Symmetric binary adjacency with zero diagonal.
    features : (n, d) float array
        Node feature matrix.
    labels : (n,) int array
        Class id in {0..c-1}, or UNKNOWN (-1).
    c : int
        Number of classes.
    train_mask, test_mask : (n,) bool arrays
        Disjoint node splits; every train node must have a known label.
    """

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    c: int
    train_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.adjacency, dtype=np.int8)
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        tr = np.ascontiguousarray(self.train_mask, dtype=bool)
        te = np.ascontiguousarray(self.test_mask, dtype=bool)
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n):
            raise ValueError(f"adjacency must be square, got {A.shape}")
        if X.shape[0] != n or y.shape[0] != n or tr.shape[0] != n or te.shape[0] != n:
            raise ValueError("features/labels/masks must have one row per node")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.isin(A, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        known = y != UNKNOWN
        if np.any((y[known] < 0) | (y[known] >= self.c)):
            raise ValueError(f"labels must lie in 0..{self.c - 1} or be UNKNOWN")
        if np.any(tr & te):
            raise ValueError("train and test masks overlap")
        if np.any(tr & ~known):
            raise ValueError("every train-masked node needs a known label")
        for name, arr in (("adjacency", A), ("features", X), ("labels", y),
                          ("train_mask", tr), ("test_mask", te)):
            object.__setattr__(self, name, _freeze(arr))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def with_adjacency(self, adjacency: np.ndarray) -> "Graph":
        """Same nodes/features/labels/splits on a different edge set."""
        return Graph(adjacency, self.features, self.labels, self.c,
                     self.train_mask, self.test_mask)


@dataclass(frozen=True)
class AttackBudget:
    """Maximum number of unordered node pairs an attack may flip."""

    epsilon_flips: int
    source_ratio: float | None = None

    def __post_init__(self):
        if self.epsilon_flips < 0:
            raise ValueError("epsilon_flips must be nonnegative")


def budget_from_ratio(graph: Graph, ratio: float) -> AttackBudget:
    """Budget as floor(ratio * |E|); additions and deletions count equally."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"budget ratio must be in [0, 1], got {ratio}")
    return AttackBudget(int(np.floor(ratio * graph.num_edges)), source_ratio=ratio)


# ---------------------------------------------------------------------------
# Unordered-pair indexing: bijection between pairs (i < j) and 0..n(n-1)/2 - 1,
# in the row-major order of the strict upper triangle.
# ---------------------------------------------------------------------------

def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pack_pair(n: int, i, j):
    """Flat index of the unordered pair {i, j}, i != j."""
    i, j = np.minimum(i, j), np.maximum(i, j)
    if np.any(i == j):
        raise ValueError("pairs must have distinct endpoints")
    if np.any(i < 0) or np.any(j >= n):
        raise ValueError("node id out of range")
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


@lru_cache(maxsize=4)
def _triu_rows_cols(n: int):
    rows, cols = np.triu_indices(n, k=1)
    return _freeze(rows), _freeze(cols)


def unpack_pair(n: int, k):
    """Inverse of pack_pair: flat index -> (i, j) with i < j."""
    rows, cols = _triu_rows_cols(n)
    return rows[k], cols[k]


def pairs_to_matrix(n: int, s: np.ndarray) -> np.ndarray:
    """Expand a pair vector to a symmetric n x n matrix with zero diagonal."""
    if s.shape != (pair_count(n),):
        raise ValueError(f"expected {pair_count(n)} pair entries, got {s.shape}")
    rows, cols = _triu_rows_cols(n)
    S = np.zeros((n, n), dtype=s.dtype)
    S[rows, cols] = s
    S[cols, rows] = s
    return S


def matrix_to_pairs(M: np.ndarray) -> np.ndarray:
    """Strict upper triangle of M as a pair vector (pack_pair order)."""
    n = M.shape[0]
    rows, cols = _triu_rows_cols(n)
    return M[rows, cols]


# ---------------------------------------------------------------------------
# Adjacency algebra
# ---------------------------------------------------------------------------

def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric renormalization with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I.
    Accepts any symmetric nonnegative matrix (relaxed or defense-weighted
    adjacencies included); self-loops keep every degree positive.
    """
    A = np.asarray(A, dtype=np.float64)
    At = A + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(At.sum(axis=1))
    return At * d[:, None] * d[None, :]


def complement_delta(A: np.ndarray) -> np.ndarray:
    """Flip-direction matrix: +1 where an edge can be added, -1 where one
    can be removed, 0 on the diagonal. Equals 11^T - I - 2A."""
    n = A.shape[0]
    C = np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8) - 2 * np.asarray(A, dtype=np.int8)
    return C


def apply_perturbation(A: np.ndarray, s_binary: np.ndarray) -> np.ndarray:
    """Toggle the edge state of every pair with s = 1.

    `s_binary` is a {0,1} vector over unordered pairs; the result stays
    symmetric, binary, and zero-diagonal. Applying the same vector twice
    returns the original adjacency.
    """
    s_binary = np.asarray(s_binary)
    if not np.isin(s_binary, (0, 1)).all():
        raise ValueError("s_binary must contain only 0 and 1")
    S = pairs_to_matrix(A.shape[0], s_binary.astype(np.int8))
    return np.where(S == 1, 1 - np.asarray(A, dtype=np.int8), A).astype(np.int8)


def flip_count(A: np.ndarray, A_hat: np.ndarray) -> int:
    """Number of unordered pairs where the two adjacencies differ."""
    A = np.asarray(A)
    A_hat = np.asarray(A_hat)
    if A.shape != A_hat.shape:
        raise ValueError(f"adjacency shapes differ: {A.shape} vs {A_hat.shape}")
    return int(np.sum(np.triu(A != A_hat, k=1)))


# ---------------------------------------------------------------------------
# Dataset directory format (plain text, whitespace separated):
#   graph.edges   one "u v" per line, 0-based, u != v, each pair at most once
#   features.txt  header "n d", then n rows of d reals
#   labels.txt    header "c", then "node label" rows (omitted -> UNKNOWN)
#   splits.txt    "node train|test" rows
# ---------------------------------------------------------------------------

def _read_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                yield lineno, line


def load_graph(directory_path) -> Graph:
    """Load a dataset directory into a validated Graph.

    Rejects self-loops, duplicate pairs, out-of-range node/label ids, and
    overlapping splits; error messages carry the offending file and line.
    """
    directory = Path(directory_path)
    for fname in ("graph.edges", "features.txt", "labels.txt", "splits.txt"):
        if not (directory / fname).is_file():
            raise GraphFormatError(f"missing dataset file: {directory / fname}")

    feat_path = directory / "features.txt"
    lines = _read_lines(feat_path)
    try:
        _, header = next(lines)
        n, d = (int(tok) for tok in header.split())
    except (StopIteration, ValueError) as exc:
        raise GraphFormatError(f"{feat_path}:1: expected header 'n d'") from exc
    X = np.empty((n, d), dtype=np.float64)
    row = 0
    for lineno, line in lines:
        if row >= n:
            raise GraphFormatError(f"{feat_path}:{lineno}: more than {n} feature rows")
        vals = line.split()
        if len(vals) != d:
            raise GraphFormatError(f"{feat_path}:{lineno}: expected {d} values, got {len(vals)}")
        try:
            X[row] = [float(v) for v in vals]
        except ValueError as exc:
            raise GraphFormatError(f"{feat_path}:{lineno}: non-numeric feature value") from exc
        row += 1
    if row != n:
        raise GraphFormatError(f"{feat_path}: expected {n} feature rows, found {row}")

    lab_path = directory / "labels.txt"
    lines = _read_lines(lab_path)
    try:
        _, header = next(lines)
        c = int(header)
    except (StopIteration, ValueError) as exc:
        raise GraphFormatError(f"{lab_path}:1: expected header 'c'") from exc
    labels = np.full(n, UNKNOWN, dtype=np.int64)
    for lineno, line in lines:
        try:
            node, label = (int(tok) for tok in line.split())
        except ValueError as exc:
            raise GraphFormatError(f"{lab_path}:{lineno}: expected 'node label'") from exc
        if not 0 <= node < n:
            raise GraphFormatError(f"{lab_path}:{lineno}: node id {node} out of range (n={n})")
        if not 0 <= label < c:
            raise GraphFormatError(f"{lab_path}:{lineno}: label {label} out of range (c={c})")
        labels[node] = label

    edge_path = directory / "graph.edges"
    A = np.zeros((n, n), dtype=np.int8)
    for lineno, line in _read_lines(edge_path):
        try:
            u, v = (int(tok) for tok in line.split())
        except ValueError as exc:
            raise GraphFormatError(f"{edge_path}:{lineno}: expected 'u v'") from exc
        if u == v:
            raise GraphFormatError(f"{edge_path}:{lineno}: self-loop {u} {v} not allowed")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"{edge_path}:{lineno}: node id out of range (n={n})")
        if A[u, v]:
            raise GraphFormatError(f"{edge_path}:{lineno}: duplicate pair {u} {v}")
        A[u, v] = A[v, u] = 1

    split_path = directory / "splits.txt"
    train_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    for lineno, line in _read_lines(split_path):
        toks = line.split()
        if len(toks) != 2 or toks[1] not in ("train", "test"):
            raise GraphFormatError(f"{split_path}:{lineno}: expected 'node train|test'")
        node = int(toks[0])
        if not 0 <= node < n:
            raise GraphFormatError(f"{split_path}:{lineno}: node id {node} out of range (n={n})")
        if toks[1] == "train":
            train_mask[node] = True
        else:
            test_mask[node] = True
    if np.any(train_mask & test_mask):
        raise GraphFormatError(f"{split_path}: train and test masks overlap")

    try:
        return Graph(A, X, labels, c, train_mask, test_mask)
    except ValueError as exc:
        raise GraphFormatError(f"{directory}: {exc}") from exc


def save_graph(graph: Graph, directory_path) -> None:
    """Write a Graph as a dataset directory (inverse of load_graph)."""
    directory = Path(directory_path)
    directory.mkdir(parents=True, exist_ok=True)
    rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
    with open(directory / "graph.edges", "w", encoding="utf-8") as fh:
        for u, v in zip(rows, cols):
            fh.write(f"{u} {v}\n")
    with open(directory / "features.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{graph.n} {graph.d}\n")
        for row in graph.features:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    with open(directory / "labels.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{graph.c}\n")
        for node, label in enumerate(graph.labels):
            if label != UNKNOWN:
                fh.write(f"{node} {label}\n")
    with open(directory / "splits.txt", "w", encoding="utf-8") as fh:
        for node in np.nonzero(graph.train_mask)[0]:
            fh.write(f"{node} train\n")
        for node in np.nonzero(graph.test_mask)[0]:
            fh.write(f"{node} test\n")


def save_attacked_graph(A_hat: np.ndarray, original: Graph, directory_path,
                        manifest: dict) -> None:
    """Emit an attacked edge list plus its JSON manifest.

    The manifest must carry at least method/seed/budget; the realized flip
    count is filled in here.
    """
    directory = Path(directory_path)
    directory.mkdir(parents=True, exist_ok=True)
    rows, cols = np.nonzero(np.triu(A_hat, k=1))
    with open(directory / "graph.edges", "w", encoding="utf-8") as fh:
        for u, v in zip(rows, cols):
            fh.write(f"{u} {v}\n")
    manifest = dict(manifest)
    manifest["flip_count"] = flip_count(original.adjacency, A_hat)
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
