"""Comparison attacks: random flips, one-shot gradient greedy, PGD on the
classification loss, and the two single-stage ablation variants of the main
attack (random reconstruction / noise-perturbed latent).

The gradient-greedy attack is a deliberately simplified stand-in for
argmax-gradient edge attacks: one gradient of the classification loss on the
relaxed adjacency, then the budget-many pairs whose flip direction agrees
with increasing loss.
"""

from __future__ import annotations

import numpy as np

from .graphs import (
    Graph,
    AttackBudget,
    apply_perturbation,
    complement_delta,
    matrix_to_pairs,
    normalized_adjacency,
    pair_count,
    pairs_to_matrix,
)
from .gcn import GcnParams, forward
from .kernels import (
    masked_cross_entropy,
    masked_cross_entropy_grad,
    mean_row_kl,
    normalized_adjacency_vjp,
    relu,
    relu_vjp,
)
from .mapping import (
    MapConfig,
    StructureMatchProblem,
    ahsg_attack,
    pgd_minimize,
    sample_binary,
)
from .semantic import PerturbConfig, attack_labels, optimize_combination


def random_attack(graph: Graph, budget: AttackBudget, seed: int) -> np.ndarray:
    """Flip exactly `budget.epsilon_flips` distinct uniform-random pairs."""
    n_pairs = pair_count(graph.n)
    if budget.epsilon_flips > n_pairs:
        raise ValueError(f"budget {budget.epsilon_flips} exceeds {n_pairs} pairs")
    rng = np.random.default_rng(seed)
    s = np.zeros(n_pairs, dtype=np.int8)
    if budget.epsilon_flips:
        s[rng.choice(n_pairs, size=budget.epsilon_flips, replace=False)] = 1
    return apply_perturbation(graph.adjacency, s)


class CeAttackProblem:
    """Negated masked cross-entropy of the full two-layer forward pass as a
    function of the relaxed pair variables (both layers see the relaxed
    graph). Minimizing it maximizes the classification loss."""

    def __init__(self, graph: Graph, params: GcnParams, labels: np.ndarray,
                 mask: np.ndarray, frozen_degrees: bool = False):
        self.graph = graph
        self.params = params
        self.labels = labels
        self.mask = mask
        self.A = graph.adjacency.astype(np.float64)
        self.C = complement_delta(graph.adjacency).astype(np.float64)
        self.XW1 = graph.features @ params.W1
        self.frozen_degrees = frozen_degrees
        self.n_pairs = pair_count(graph.n)

    def _forward(self, s: np.ndarray):
        S = pairs_to_matrix(self.graph.n, np.asarray(s, dtype=np.float64))
        A_hat = self.A + self.C * S
        M = normalized_adjacency(A_hat)
        Z1 = M @ self.XW1
        H1 = relu(Z1)
        logits = M @ (H1 @ self.params.W2)
        return A_hat, M, Z1, H1, logits

    def loss(self, s: np.ndarray) -> float:
        _, _, _, _, logits = self._forward(s)
        return -masked_cross_entropy(logits, self.labels, self.mask)

    def loss_and_grad(self, s: np.ndarray):
        A_hat, M, Z1, H1, logits = self._forward(s)
        ce = masked_cross_entropy(logits, self.labels, self.mask)
        g_logits = -masked_cross_entropy_grad(logits, self.labels, self.mask)
        g_M = g_logits @ (H1 @ self.params.W2).T
        g_H1 = M @ g_logits @ self.params.W2.T
        g_Z1 = relu_vjp(g_H1, Z1)
        g_M += g_Z1 @ self.XW1.T
        g_A = normalized_adjacency_vjp(g_M, A_hat,
                                       include_degree_terms=not self.frozen_degrees)
        folded = self.C * g_A
        return -ce, matrix_to_pairs(folded + folded.T)


def grad_greedy_attack(graph: Graph, params: GcnParams, budget: AttackBudget,
                       label_mode: str = "train") -> np.ndarray:
    """One-shot greedy: flip the budget-many pairs whose toggle direction
    agrees with the gradient of increasing classification loss."""
    labels = attack_labels(graph, params, label_mode)
    mask = labels >= 0
    problem = CeAttackProblem(graph, params, labels, mask)
    _, grad = problem.loss_and_grad(np.zeros(problem.n_pairs))
    benefit = -grad  # descent direction of -CE == ascent direction of CE
    order = np.argsort(-benefit, kind="stable")[:budget.epsilon_flips]
    s = np.zeros(problem.n_pairs, dtype=np.int8)
    s[order[benefit[order] > 0]] = 1
    return apply_perturbation(graph.adjacency, s)


def pgd_ce_attack(graph: Graph, params: GcnParams, budget: AttackBudget,
                  map_config: MapConfig, seed: int,
                  label_mode: str = "train") -> np.ndarray:
    """PGD topology attack on the classification loss, with the same
    projection and rounding machinery as the latent-matching attack."""
    labels = attack_labels(graph, params, label_mode)
    mask = labels >= 0
    problem = CeAttackProblem(graph, params, labels, mask,
                              frozen_degrees=map_config.frozen_degrees)
    pgd = pgd_minimize(problem, map_config, budget.epsilon_flips)
    d = sample_binary(pgd.s, map_config.samples, budget.epsilon_flips,
                      problem.loss, seed)
    return apply_perturbation(graph.adjacency, d)


def ahsg_rec_attack(graph: Graph, params: GcnParams, perturb_config: PerturbConfig,
                    budget: AttackBudget, seed: int) -> np.ndarray:
    """Ablation: keep the latent-combination stage, then replace the
    structure mapping with random feasible flips."""
    optimize_combination(graph, params, perturb_config)
    return random_attack(graph, budget, seed)


def ahsg_hid_attack(graph: Graph, params: GcnParams, perturb_config: PerturbConfig,
                    map_config: MapConfig, budget: AttackBudget, seed: int) -> np.ndarray:
    """Ablation: keep the structure mapping, but replace the optimized latent
    with Gaussian noise whose divergence from the clean latent matches the
    one a full run would have spent."""
    combination = optimize_combination(graph, params, perturb_config)
    A_norm = normalized_adjacency(graph.adjacency)
    H, _ = forward(A_norm, graph.features, params)
    kl_budget = mean_row_kl(H, combination.latent)

    rng = np.random.default_rng(seed)
    noise = rng.normal(size=H.shape)
    sigma = _match_noise_scale(H, noise, kl_budget)
    H_noisy = H + sigma * noise

    problem = StructureMatchProblem(graph, params, H_noisy,
                                    frozen_degrees=map_config.frozen_degrees)
    pgd = pgd_minimize(problem, map_config, budget.epsilon_flips)
    d = sample_binary(pgd.s, map_config.samples, budget.epsilon_flips,
                      problem.loss, seed)
    return apply_perturbation(graph.adjacency, d)


ATTACKS = ("identity", "random", "grad_greedy", "pgd_ce", "ahsg", "ahsg_rec", "ahsg_hid")


def run_attack(name: str, graph: Graph, params: GcnParams, budget: AttackBudget,
               seed: int, perturb_config: PerturbConfig = PerturbConfig(),
               map_config: MapConfig = MapConfig()):
    """Dispatch an attack by registry name; returns (A_hat, info).

    `info` carries the stage trajectories when the attack has them, for
    manifests and plots.
    """
    if name in ("identity", "none"):
        return np.array(graph.adjacency), {}
    if name == "random":
        return random_attack(graph, budget, seed), {}
    if name == "grad_greedy":
        return grad_greedy_attack(graph, params, budget,
                                  label_mode=perturb_config.label_mode), {}
    if name == "pgd_ce":
        return pgd_ce_attack(graph, params, budget, map_config, seed,
                             label_mode=perturb_config.label_mode), {}
    if name == "ahsg":
        result = ahsg_attack(graph, params, perturb_config, map_config, budget, seed)
        return result.A_hat, {
            "latent_trajectory": result.latent_trajectory,
            "map_trajectory": result.map_trajectory,
            "binary_loss": result.binary_loss,
        }
    if name == "ahsg_rec":
        return ahsg_rec_attack(graph, params, perturb_config, budget, seed), {}
    if name == "ahsg_hid":
        return ahsg_hid_attack(graph, params, perturb_config, map_config, budget, seed), {}
    raise ValueError(f"unknown attack {name!r}; known: {', '.join(ATTACKS)}")


def _match_noise_scale(H: np.ndarray, noise: np.ndarray, kl_target: float,
                       tol: float = 1e-4, max_iter: int = 60) -> float:
    """Scale sigma with mean_row_kl(H, H + sigma * noise) ~= kl_target."""
    if kl_target <= 0:
        return 0.0
    hi = 1.0
    while mean_row_kl(H, H + hi * noise) < kl_target:
        hi *= 2.0
        if hi > 1e6:
            return hi
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = mean_row_kl(H, H + mid * noise)
        if abs(val - kl_target) <= tol * max(kl_target, 1e-12):
            return mid
        if val < kl_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
