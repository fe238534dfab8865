"""Map a perturbed latent back to edge flips: relaxed PGD + randomized rounding.

Edge changes are parameterized by a vector s over unordered node pairs,
relaxed to [0, 1] with a total-mass budget. Gradient descent on the
divergence between the latent computed from the relaxed graph and the target
latent alternates with a Euclidean projection onto the box-plus-budget set
(bisection on the shift). The final continuous s is rounded by repeated
Bernoulli draws, keeping the feasible draw with the smallest objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

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
from .gcn import GcnParams
from .kernels import mean_row_kl, mean_row_kl_vjp, normalized_adjacency_vjp, relu, relu_vjp
from .semantic import PerturbConfig, optimize_combination


@dataclass(frozen=True)
class MapConfig:
    """Knobs of the PGD structure mapping."""

    iterations: int = 300
    step_scale: float = 20.0      # step at iteration t is step_scale / sqrt(t + 1)
    samples: int = 20
    bisect_tol: float = 1e-6
    bisect_max_iter: int = 100
    frozen_degrees: bool = False  # skip the degree chain in the gradient (faster, cruder)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be positive")
        if self.samples < 1:
            raise ValueError("need at least one rounding sample")


def clip_box(x):
    """Clamp to [0, 1] (scalars or arrays)."""
    return np.clip(x, 0.0, 1.0)


def bisect_budget_shift(a: np.ndarray, epsilon: float, tol: float = 1e-6,
                        max_iter: int = 100) -> float:
    """Shift mu > 0 with sum(clip_box(a - mu)) = epsilon, by bisection.

    Requires sum(clip_box(a)) > epsilon (otherwise no shift is needed).
    The residual is monotone and piecewise linear in mu, so the bracket
    [0, max(a)] always contains a root.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("non-finite input to bisection")
    if clip_box(a).sum() <= epsilon:
        raise ValueError("projection shift not needed: mass already within budget")
    lo, hi = 0.0, float(a.max())
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        residual = clip_box(a - mid).sum() - epsilon
        if abs(residual) <= tol:
            return mid
        if residual > 0:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection residual above {tol} after {max_iter} iterations")


def project_budget(a: np.ndarray, epsilon: float, tol: float = 1e-6,
                   max_iter: int = 100) -> np.ndarray:
    """Project onto {s : s in [0,1]^N, sum(s) <= epsilon} (within tol).

    Feasible inputs come back unchanged; otherwise the whole vector is
    shifted down by the bisection result before clamping.
    """
    a = np.asarray(a, dtype=np.float64)
    clipped = clip_box(a)
    if clipped.sum() <= epsilon:
        return clipped
    mu = bisect_budget_shift(a, epsilon, tol=tol, max_iter=max_iter)
    return clip_box(a - mu)


class StructureMatchProblem:
    """Divergence between the relaxed-graph latent and a target latent.

    Evaluating at a binary s gives the exact divergence of the corresponding
    flipped graph. The gradient runs through the degree terms of the
    adjacency normalization unless frozen_degrees is set.
    """

    def __init__(self, graph: Graph, params: GcnParams, H_target: np.ndarray,
                 frozen_degrees: bool = False):
        if H_target.shape != (graph.n, params.hidden_dim):
            raise ValueError("target latent shape does not match graph/params")
        self.graph = graph
        self.A = graph.adjacency.astype(np.float64)
        self.C = complement_delta(graph.adjacency).astype(np.float64)
        self.XW1 = graph.features @ params.W1
        self.H_target = H_target
        self.frozen_degrees = frozen_degrees
        self.n_pairs = pair_count(graph.n)

    def _relaxed_forward(self, s: np.ndarray):
        S = pairs_to_matrix(self.graph.n, np.asarray(s, dtype=np.float64))
        A_hat = self.A + self.C * S
        M = normalized_adjacency(A_hat)
        Z = M @ self.XW1
        H = relu(Z)
        return A_hat, M, Z, H

    def loss(self, s: np.ndarray) -> float:
        _, _, _, H = self._relaxed_forward(s)
        return mean_row_kl(H, self.H_target)

    def loss_and_grad(self, s: np.ndarray):
        A_hat, M, Z, H = self._relaxed_forward(s)
        value = mean_row_kl(H, self.H_target)
        g_H = mean_row_kl_vjp(H, self.H_target)[0]
        g_Z = relu_vjp(g_H, Z)
        g_M = g_Z @ self.XW1.T
        g_A = normalized_adjacency_vjp(g_M, A_hat, include_degree_terms=not self.frozen_degrees)
        folded = self.C * g_A
        grad = matrix_to_pairs(folded + folded.T)
        return value, grad


def structure_match_loss(s: np.ndarray, graph: Graph, params: GcnParams,
                         H_hat: np.ndarray) -> float:
    """Divergence of the relaxed graph's latent from H_hat (>= 0)."""
    return StructureMatchProblem(graph, params, H_hat).loss(s)


@dataclass
class PgdResult:
    s: np.ndarray
    trajectory: list = field(default_factory=list)  # (iteration, loss) rows


def pgd_minimize(problem, config: MapConfig, epsilon: float) -> PgdResult:
    """Projected gradient descent over relaxed pair variables.

    `problem` needs `loss(s)`, `loss_and_grad(s)`, and `n_pairs`. Starts from
    the zero vector (the clean graph), uses the decaying step schedule,
    projects after every step, and returns the best iterate seen.
    """
    s = np.zeros(problem.n_pairs)
    best_loss = np.inf
    best_s = s
    trajectory = []
    for t in range(config.iterations + 1):
        if t < config.iterations:
            loss, grad = problem.loss_and_grad(s)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite structure gradient at iteration {t}")
        else:
            loss, grad = problem.loss(s), None
        trajectory.append((t, loss))
        if loss < best_loss:
            best_loss = loss
            best_s = s.copy()
        if grad is None:
            break
        step = config.step_scale / np.sqrt(t + 1)
        s = project_budget(s - step * grad, epsilon,
                           tol=config.bisect_tol, max_iter=config.bisect_max_iter)
    return PgdResult(best_s, trajectory)


def pgd_map(graph: Graph, params: GcnParams, H_hat: np.ndarray,
            config: MapConfig, epsilon: float,
            problem: StructureMatchProblem | None = None) -> PgdResult:
    """PGD on the structure-match loss toward a target latent."""
    if problem is None:
        problem = StructureMatchProblem(graph, params, H_hat,
                                        frozen_degrees=config.frozen_degrees)
    return pgd_minimize(problem, config, epsilon)


def sample_binary(s: np.ndarray, K: int, epsilon: float, loss_fn, seed: int) -> np.ndarray:
    """Round a relaxed s to a feasible binary vector.

    Draws K independent uniform thresholds (streams derived from (seed, k),
    so results do not depend on evaluation order), keeps draws within budget,
    and returns the one with the smallest loss. If every draw is infeasible,
    falls back to the largest floor(epsilon) positive entries of s.
    """
    s = np.asarray(s, dtype=np.float64)
    best_loss = np.inf
    best_d = None
    for k in range(K):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        draw = (s > rng.random(s.shape)).astype(np.int8)
        if draw.sum() <= epsilon:
            loss = loss_fn(draw.astype(np.float64))
            if loss < best_loss:
                best_loss = loss
                best_d = draw
    if best_d is None:
        best_d = np.zeros(s.shape, dtype=np.int8)
        take = int(np.floor(epsilon))
        if take > 0:
            order = np.argsort(-s, kind="stable")[:take]
            best_d[order[s[order] > 0]] = 1
    return best_d


@dataclass
class AhsgResult:
    """Attacked adjacency together with both optimization trajectories."""

    A_hat: np.ndarray
    s_binary: np.ndarray
    latent_trajectory: list
    map_trajectory: list
    binary_loss: float
    flips: int


def ahsg_attack(graph: Graph, surrogate_params: GcnParams,
                perturb_config: PerturbConfig, map_config: MapConfig,
                budget: AttackBudget, seed: int) -> AhsgResult:
    """Full evasion attack: latent combination -> PGD mapping -> rounding."""
    combination = optimize_combination(graph, surrogate_params, perturb_config)
    problem = StructureMatchProblem(graph, surrogate_params, combination.latent,
                                    frozen_degrees=map_config.frozen_degrees)
    pgd = pgd_map(graph, surrogate_params, combination.latent, map_config,
                  budget.epsilon_flips, problem=problem)
    d = sample_binary(pgd.s, map_config.samples, budget.epsilon_flips,
                      problem.loss, seed)
    A_hat = apply_perturbation(graph.adjacency, d)
    return AhsgResult(
        A_hat=A_hat,
        s_binary=d,
        latent_trajectory=combination.trajectory,
        map_trajectory=pgd.trajectory,
        binary_loss=problem.loss(d.astype(np.float64)),
        flips=int(d.sum()),
    )
