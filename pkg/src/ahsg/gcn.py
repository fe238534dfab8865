"""Two-layer GCN surrogate/victim: forward pass, training, checkpoints.

Architecture is fixed: H1 = relu(A_norm X W1), logits = A_norm H1 W2, no
dropout. The first-layer activations H1 are the latent representations the
attack operates on. Training is full-batch Adam on the masked cross-entropy
of the train nodes; everything is plain numpy so runs are reproducible
bit-for-bit for a given seed in single-threaded mode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .graphs import Graph, normalized_adjacency
from .kernels import relu, relu_vjp, masked_cross_entropy, masked_cross_entropy_grad


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class GcnParams:
    """Weights of the two-layer GCN."""

    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.W1).all() and np.isfinite(self.W2).all()):
            raise ValueError("GCN weights must be finite")
        if self.W1.shape[1] != self.W2.shape[0]:
            raise ValueError(f"W1 {self.W1.shape} and W2 {self.W2.shape} disagree on hidden dim")

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    weight_decay: float = 5e-4
    seed: int = 0
    optimizer: str = "adam"
    hidden_dim: int = 128
    dropout: float = 0.5  # input/hidden dropout during training only

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def forward(A_norm: np.ndarray, X: np.ndarray, params: GcnParams):
    """Full forward pass; returns (H1, logits).

    H1 is the nonnegative latent matrix (post-ReLU first layer); logits are
    the pre-softmax class scores.
    """
    if A_norm.shape[1] != X.shape[0] or X.shape[1] != params.W1.shape[0]:
        raise ValueError("dimension mismatch in forward pass")
    if not (np.isfinite(A_norm).all() and np.isfinite(X).all()):
        raise ValueError("non-finite input to forward pass")
    H1 = relu(A_norm @ (X @ params.W1))
    logits = A_norm @ (H1 @ params.W2)
    return H1, logits


def forward_from_latent(A_norm: np.ndarray, H_hat: np.ndarray, W2: np.ndarray) -> np.ndarray:
    """Downstream half of the network: logits from a (possibly perturbed) latent."""
    if A_norm.shape[1] != H_hat.shape[0] or H_hat.shape[1] != W2.shape[0]:
        raise ValueError("dimension mismatch in latent forward pass")
    return A_norm @ (H_hat @ W2)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def train_surrogate(graph: Graph, config: TrainConfig = TrainConfig()) -> GcnParams:
    """Train the two-layer GCN on the graph's train mask.

    Full-batch updates on masked cross-entropy with L2 weight decay and
    inverted dropout on the input and hidden activations (training only;
    the attack-time forward pass is deterministic). Deterministic for a
    fixed seed and thread count.
    """
    if not graph.train_mask.any():
        raise ValueError("graph has an empty train mask")
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    W1 = glorot_uniform(rng, graph.d, h)
    W2 = glorot_uniform(rng, h, graph.c)

    A_norm = normalized_adjacency(graph.adjacency)
    X = graph.features
    keep = 1.0 - config.dropout
    AX = A_norm @ X if config.dropout == 0.0 else None
    labels = graph.labels
    mask = graph.train_mask

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m1 = np.zeros_like(W1)
    v1 = np.zeros_like(W1)
    m2 = np.zeros_like(W2)
    v2 = np.zeros_like(W2)

    for epoch in range(1, config.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            if config.dropout > 0.0:
                drop_x = (rng.random(X.shape) < keep) / keep
                AX_e = A_norm @ (X * drop_x)
            else:
                AX_e = AX
            Z1 = AX_e @ W1
            H1 = relu(Z1)
            if config.dropout > 0.0:
                drop_h = (rng.random(H1.shape) < keep) / keep
                H1 = H1 * drop_h
            logits = A_norm @ (H1 @ W2)
            loss = masked_cross_entropy(logits, labels, mask) if np.isfinite(logits).all() else np.nan
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch)

        G = masked_cross_entropy_grad(logits, labels, mask)
        AG = A_norm @ G
        gW2 = H1.T @ AG + config.weight_decay * W2
        gH1 = AG @ W2.T
        if config.dropout > 0.0:
            gH1 = gH1 * drop_h
        gZ1 = relu_vjp(gH1, Z1)
        gW1 = AX_e.T @ gZ1 + config.weight_decay * W1

        if config.optimizer == "adam":
            m1 = beta1 * m1 + (1 - beta1) * gW1
            v1 = beta2 * v1 + (1 - beta2) * gW1**2
            m2 = beta1 * m2 + (1 - beta1) * gW2
            v2 = beta2 * v2 + (1 - beta2) * gW2**2
            bc1 = 1 - beta1**epoch
            bc2 = 1 - beta2**epoch
            W1 = W1 - config.learning_rate * (m1 / bc1) / (np.sqrt(v1 / bc2) + eps)
            W2 = W2 - config.learning_rate * (m2 / bc1) / (np.sqrt(v2 / bc2) + eps)
        else:
            W1 = W1 - config.learning_rate * gW1
            W2 = W2 - config.learning_rate * gW2

    return GcnParams(W1, W2)


def predict(graph: Graph, params: GcnParams, A_norm: np.ndarray | None = None) -> np.ndarray:
    """Argmax class per node on the given (default: clean) structure."""
    if A_norm is None:
        A_norm = normalized_adjacency(graph.adjacency)
    _, logits = forward(A_norm, graph.features, params)
    return logits.argmax(axis=1)


def accuracy(graph: Graph, params: GcnParams, mask: np.ndarray,
             A_norm: np.ndarray | None = None) -> float:
    """Fraction of masked nodes classified to their ground-truth label."""
    pred = predict(graph, params, A_norm=A_norm)
    mask = np.asarray(mask, dtype=bool)
    return float((pred[mask] == graph.labels[mask]).mean())


def save_checkpoint(params: GcnParams, path, *, seed: int | None = None,
                    config: TrainConfig | None = None) -> None:
    """Write W1/W2 as an .npz plus a JSON header with dims and provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path.with_suffix(".npz"), W1=params.W1, W2=params.W2)
    header = {
        "W1_shape": list(params.W1.shape),
        "W2_shape": list(params.W2.shape),
        "dtype": str(params.W1.dtype),
        "seed": seed,
        "config_hash": config.digest() if config is not None else None,
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> GcnParams:
    path = Path(path)
    with np.load(path.with_suffix(".npz")) as data:
        return GcnParams(data["W1"].copy(), data["W2"].copy())
