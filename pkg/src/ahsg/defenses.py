"""Preprocessing defenses (similarity pruning, low-rank reconstruction) and
the evasion evaluation harness.

Evasion contract: the victim's weights always come from training on the
clean graph; a defense only transforms the graph the victim sees at
inference time. Low-rank reconstructions stay real-valued downstream (the
normalization accepts any nonnegative matrix) unless binarization is asked
for explicitly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse.linalg

from .graphs import Graph, flip_count, normalized_adjacency
from .gcn import GcnParams, TrainConfig, accuracy, train_surrogate


@dataclass(frozen=True)
class DefenseConfig:
    jaccard_threshold: float = 0.01
    svd_rank: int = 15
    binarize_svd: bool = False

    def __post_init__(self):
        if not 0.0 <= self.jaccard_threshold <= 1.0:
            raise ValueError("jaccard threshold must be in [0, 1]")
        if self.svd_rank < 1:
            raise ValueError("svd rank must be >= 1")


def _pairwise_similarity(x_u: np.ndarray, x_v: np.ndarray, binary: bool) -> float:
    if binary:
        intersection = float(np.minimum(x_u, x_v).sum())
        union = float(np.maximum(x_u, x_v).sum())
        return intersection / union if union > 0 else 0.0
    nu = float(np.linalg.norm(x_u))
    nv = float(np.linalg.norm(x_v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(x_u @ x_v) / (nu * nv)


def jaccard_defense(graph: Graph, threshold: float = 0.01) -> Graph:
    """Drop edges between dissimilar endpoints; never adds edges.

    Binary features use Jaccard similarity |u & v| / |u | v|; continuous
    features fall back to cosine similarity. An edge is removed when its
    similarity is strictly below the threshold.
    """
    X = graph.features
    binary = bool(np.isin(X, (0.0, 1.0)).all())
    A = np.array(graph.adjacency)
    rows, cols = np.nonzero(np.triu(A, k=1))
    for u, v in zip(rows, cols):
        if _pairwise_similarity(X[u], X[v], binary) < threshold:
            A[u, v] = A[v, u] = 0
    return graph.with_adjacency(A)


def svd_defense(graph: Graph, rank: int = 15, binarize: bool = False) -> np.ndarray:
    """Best rank-k approximation of the adjacency (real-valued).

    Downstream consumers normalize the nonnegative-clamped reconstruction
    with self-loops; with `binarize`, entries above 1/2 become edges instead.
    """
    A = graph.adjacency.astype(np.float64)
    n = A.shape[0]
    if rank > n:
        raise ValueError(f"rank {rank} exceeds node count {n}")
    if not np.isfinite(A).all():
        raise ValueError("non-finite adjacency")
    if rank >= n - 1 or n <= 64:
        U, sigma, Vt = np.linalg.svd(A)
        rec = (U[:, :rank] * sigma[:rank]) @ Vt[:rank]
    else:
        # fixed start vector keeps the iterative solver deterministic
        U, sigma, Vt = scipy.sparse.linalg.svds(A, k=rank, v0=np.ones(n))
        rec = (U * sigma) @ Vt
    rec = 0.5 * (rec + rec.T)  # symmetrize away solver roundoff
    if binarize:
        return (rec > 0.5).astype(np.float64)
    return rec


def defended_eval_matrix(eval_graph: Graph, defense: str | None,
                         config: DefenseConfig = DefenseConfig()) -> np.ndarray:
    """Adjacency the victim sees at inference time, after the defense."""
    if defense in (None, "none"):
        return eval_graph.adjacency.astype(np.float64)
    if defense == "jaccard":
        return jaccard_defense(eval_graph, config.jaccard_threshold).adjacency.astype(np.float64)
    if defense == "svd":
        rec = svd_defense(eval_graph, config.svd_rank, binarize=config.binarize_svd)
        return np.maximum(rec, 0.0)
    raise ValueError(f"unknown defense {defense!r}")


def evaluate_victim(attacked_graph: Graph, clean_graph: Graph,
                    defense: str | None = None,
                    train_config: TrainConfig = TrainConfig(),
                    seed: int | None = None,
                    defense_config: DefenseConfig = DefenseConfig(),
                    params: GcnParams | None = None) -> dict:
    """Masked test accuracy of a clean-trained victim on the attacked graph.

    The victim trains on the clean structure (pass `params` to reuse an
    already-trained victim); the optional defense transforms only the graph
    used at evaluation. Returns the metrics plus a provenance record.
    """
    if attacked_graph.n != clean_graph.n:
        raise ValueError("attacked and clean graphs differ in node count")
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    start = time.perf_counter()
    if params is None:
        params = train_surrogate(clean_graph, train_config)
    eval_A = defended_eval_matrix(attacked_graph, defense, defense_config)
    A_norm = normalized_adjacency(eval_A)
    test_accuracy = accuracy(attacked_graph, params, attacked_graph.test_mask, A_norm=A_norm)
    return {
        "accuracy": test_accuracy,
        "defense": defense or "none",
        "flip_count": flip_count(clean_graph.adjacency, attacked_graph.adjacency),
        "train_seed": train_config.seed,
        "train_config_hash": train_config.digest(),
        "wall_time": time.perf_counter() - start,
    }
