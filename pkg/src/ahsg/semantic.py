"""Adversarial latent construction by class-restricted combination.

Each node's latent row is replaced by a normalized nonnegative combination
of same-class latent rows. Because same-class rows share their task-relevant
component, any such combination keeps that component (with a rescaled
coefficient) while mixing the node-specific residuals - which is the channel
the attack exploits. The combination weights are optimized to raise the
downstream classification loss while a KL penalty keeps the perturbed latent
close to the original.

Sign conventions, fixed once here and reused by the structure mapper:
  similarity(Ha, Hb) = -mean_i KL(softmax(Ha_i) || softmax(Hb_i))  (<= 0)
  attack loss        = -CE(labels, downstream(H_hat)) - beta * similarity(H, H_hat)
so minimizing the attack loss maximizes classification error and penalizes
divergence from the original latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import Graph, UNKNOWN, normalized_adjacency
from .gcn import GcnParams, forward, forward_from_latent
from .kernels import (
    masked_cross_entropy,
    masked_cross_entropy_grad,
    mean_row_kl,
    mean_row_kl_vjp,
)


@dataclass(frozen=True)
class PerturbConfig:
    """Knobs of the latent-combination optimization."""

    iterations: int = 300
    learning_rate: float = 0.3
    beta: float = 0.2
    eps_den: float = 1e-8
    label_mode: str = "train"  # "train": only train labels known to the attacker;
                               # "pseudo": surrogate predictions fill in the rest

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.label_mode not in ("train", "pseudo"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")


def attack_labels(graph: Graph, params: GcnParams, mode: str) -> np.ndarray:
    """Labels as seen by the attacker.

    "train" keeps ground truth on the train mask and UNKNOWN elsewhere;
    "pseudo" fills every other node with the surrogate's clean prediction.
    """
    labels = np.full(graph.n, UNKNOWN, dtype=np.int64)
    labels[graph.train_mask] = graph.labels[graph.train_mask]
    if mode == "pseudo":
        A_norm = normalized_adjacency(graph.adjacency)
        _, logits = forward(A_norm, graph.features, params)
        pred = logits.argmax(axis=1)
        fill = ~graph.train_mask
        labels[fill] = pred[fill]
    elif mode != "train":
        raise ValueError(f"unknown label_mode {mode!r}")
    return labels


def clip_combination_weights(weights: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Project combination weights onto the class-restricted feasible set.

    Entry (i, j) survives (clamped to >= 0) only when both labels are known
    and equal; rows of unknown-label nodes become exact one-hot self rows;
    everything else is zeroed.
    """
    labels = np.asarray(labels)
    known = labels != UNKNOWN
    same = known[:, None] & known[None, :] & (labels[:, None] == labels[None, :])
    out = np.where(same, np.maximum(weights, 0.0), 0.0)
    unknown_idx = np.nonzero(~known)[0]
    out[unknown_idx, :] = 0.0
    out[unknown_idx, unknown_idx] = 1.0
    return out


def combine_representations(weights: np.ndarray, H: np.ndarray,
                            eps_den: float = 1e-8) -> np.ndarray:
    """Row-normalized combination: row i -> sum_j w_ij H_j / (sum_j w_ij + eps).

    The denominator guard makes an all-zero weight row yield the zero vector
    instead of dividing by zero.
    """
    denom = weights.sum(axis=1) + eps_den
    return (weights @ H) / denom[:, None]


def similarity(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Negated mean row-wise KL between row softmaxes; 0 iff identical rows."""
    return -mean_row_kl(h_a, h_b)


class LatentAttackProblem:
    """Precomputed state for evaluating/optimizing the latent attack loss.

    Holds the clean latent, normalized adjacency, attacker-visible labels,
    and the node set for the cross-entropy term, so per-iteration work is
    just the combination forward/backward.
    """

    def __init__(self, graph: Graph, params: GcnParams, config: PerturbConfig):
        self.graph = graph
        self.params = params
        self.config = config
        self.A_norm = normalized_adjacency(graph.adjacency)
        self.H, _ = forward(self.A_norm, graph.features, params)
        self.labels = attack_labels(graph, params, config.label_mode)
        self.ce_mask = self.labels != UNKNOWN

    def _terms(self, weights: np.ndarray):
        H_hat = combine_representations(weights, self.H, self.config.eps_den)
        logits = forward_from_latent(self.A_norm, H_hat, self.params.W2)
        ce = masked_cross_entropy(logits, self.labels, self.ce_mask)
        kl = mean_row_kl(self.H, H_hat)
        return H_hat, logits, ce, kl

    def loss(self, weights: np.ndarray) -> float:
        _, _, ce, kl = self._terms(weights)
        return -ce + self.config.beta * kl

    def loss_terms(self, weights: np.ndarray):
        """(loss, ce, sim) for trajectory logging."""
        _, _, ce, kl = self._terms(weights)
        return -ce + self.config.beta * kl, ce, -kl

    def loss_and_grad(self, weights: np.ndarray):
        loss, _, _, grad = self.loss_terms_and_grad(weights)
        return loss, grad

    def loss_terms_and_grad(self, weights: np.ndarray):
        """(loss, ce, sim, grad) in a single forward/backward pass."""
        H_hat, logits, ce, kl = self._terms(weights)
        value = -ce + self.config.beta * kl

        g_logits = masked_cross_entropy_grad(logits, self.labels, self.ce_mask)
        g_H_hat = -(self.A_norm @ g_logits @ self.params.W2.T)
        g_H_hat += self.config.beta * mean_row_kl_vjp(self.H, H_hat)[1]

        denom = weights.sum(axis=1) + self.config.eps_den
        g_num = g_H_hat / denom[:, None]
        g_denom = -(g_H_hat * H_hat).sum(axis=1) / denom
        grad = g_num @ self.H.T + g_denom[:, None]
        return value, ce, -kl, grad


def latent_attack_loss(weights: np.ndarray, graph: Graph, params: GcnParams,
                       beta: float, config: PerturbConfig | None = None) -> float:
    """Attack loss of a given weight matrix (see module docstring for signs)."""
    config = replace(config or PerturbConfig(), beta=beta)
    return LatentAttackProblem(graph, params, config).loss(weights)


@dataclass
class CombinationResult:
    """Best combination weights found, the perturbed latent, and the search log."""

    weights: np.ndarray
    latent: np.ndarray
    trajectory: list = field(default_factory=list)  # (iteration, ce, sim) rows


def optimize_combination(graph: Graph, params: GcnParams,
                         config: PerturbConfig = PerturbConfig()) -> CombinationResult:
    """Gradient-descend the combination weights under the class-mask projection.

    Starts at the identity (the exact, unperturbed combination), alternates
    gradient steps with clip_combination_weights, and returns the best iterate
    seen, so the result never scores worse than the identity.
    """
    problem = LatentAttackProblem(graph, params, config)
    labels = problem.labels
    weights = clip_combination_weights(np.eye(graph.n), labels)

    best_loss = np.inf
    best_weights = weights
    trajectory = []
    for iteration in range(config.iterations + 1):
        if iteration < config.iterations:
            loss, ce, sim, grad = problem.loss_terms_and_grad(weights)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite weight gradient at iteration {iteration}")
        else:
            loss, ce, sim = problem.loss_terms(weights)
            grad = None
        trajectory.append((iteration, ce, sim))
        if loss < best_loss:
            best_loss = loss
            best_weights = weights.copy()
        if grad is None:
            break
        weights = clip_combination_weights(weights - config.learning_rate * grad, labels)
        dead = weights.sum(axis=1) == 0.0
        if dead.any():
            idx = np.nonzero(dead)[0]
            weights[idx, idx] = 1.0  # a node must keep some representation

    latent = combine_representations(best_weights, problem.H, config.eps_den)
    return CombinationResult(best_weights, latent, trajectory)


def dump_combination(result: CombinationResult, directory) -> None:
    """Write weights/latent as text matrices and the loss trajectory as CSV."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "combination_weights.txt", result.weights)
    np.savetxt(directory / "perturbed_latent.txt", result.latent)
    with open(directory / "latent_loss_trajectory.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,ce_term,sim_term\n")
        for iteration, ce, sim in result.trajectory:
            fh.write(f"{iteration},{ce!r},{sim!r}\n")
