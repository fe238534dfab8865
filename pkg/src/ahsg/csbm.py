"""Contextual stochastic block model graphs and the Bayes semantic audit.

The generator couples two balanced-probability communities (within-class
edge probability p_in, cross-class q_out) with Gaussian features whose class
means sit at +-mean per coordinate. Because the generative distribution is
known exactly, the optimal (Bayes) classifier is computable in closed form;
an attack that leaves a node's Bayes classification correct and unchanged
has, by this audit's definition, preserved that node's task semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import Graph


@dataclass(frozen=True)
class CsbmParams:
    """Generative parameters; defaults give mean degree ~3.9 at n=1000."""

    n: int = 1000
    p_in: float = 0.006326
    q_out: float = 0.001481
    sigma: float = 1.0
    feat_dim: int = 21          # n / ln(n)^2 at n = 1000, rounded
    mean_scale: float = 0.5     # separability knob: feature-only accuracy is Phi(mean_scale / 2)
    train_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.q_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= q_out <= p_in <= 1")
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")

    @property
    def feature_mean(self) -> float:
        """Per-coordinate magnitude of the class mean vector."""
        return self.mean_scale * self.sigma / (2.0 * np.sqrt(self.feat_dim))


def csbm_sample(params: CsbmParams, seed: int) -> Graph:
    """Draw a two-class CSBM graph with all labels known.

    Labels are fair coin flips; features are isotropic Gaussians around
    (2y - 1) * feature_mean per coordinate; each unordered pair gets an edge
    with probability p_in (same class) or q_out (different class). A random
    train/test split is attached for the GCN victims.
    """
    rng = np.random.default_rng(seed)
    n = params.n
    y = rng.integers(0, 2, size=n)
    mu = params.feature_mean
    X = rng.normal(0.0, params.sigma, size=(n, params.feat_dim))
    X += (2 * y - 1)[:, None] * mu

    same = y[:, None] == y[None, :]
    prob = np.where(same, params.p_in, params.q_out)
    A = (rng.random((n, n)) < prob).astype(np.int8)
    A = np.triu(A, 1)
    A = A + A.T

    order = rng.permutation(n)
    n_train = int(round(params.train_fraction * n))
    train_mask = np.zeros(n, dtype=bool)
    train_mask[order[:n_train]] = True
    test_mask = ~train_mask
    return Graph(A, X, y, 2, train_mask, test_mask)


def bayes_classify(adjacency: np.ndarray, features: np.ndarray,
                   other_labels: np.ndarray, params: CsbmParams) -> np.ndarray:
    """Closed-form Bayes predictions under the generative model.

    Per node, the score of each candidate class adds the Gaussian feature
    log-density to the Bernoulli log-likelihood of that node's incident
    edge/non-edge pattern given every *other* node's true label. Ties break
    toward class 0.
    """
    p, q = params.p_in, params.q_out
    if p in (0.0, 1.0) or q in (0.0, 1.0):
        raise ValueError("edge probabilities must lie strictly inside (0, 1)")
    n = adjacency.shape[0]
    if features.shape[0] != n or other_labels.shape[0] != n:
        raise ValueError("adjacency, features, and labels disagree on node count")
    y = np.asarray(other_labels)
    A = np.asarray(adjacency, dtype=np.float64)
    mu = params.feature_mean
    var = params.sigma**2

    feat = np.empty((n, 2))
    feat[:, 0] = -0.5 * ((features + mu) ** 2).sum(axis=1) / var
    feat[:, 1] = -0.5 * ((features - mu) ** 2).sum(axis=1) / var

    onehot = np.zeros((n, 2))
    onehot[np.arange(n), y] = 1.0
    edges_to = A @ onehot                      # incident edges per class
    others = onehot.sum(axis=0)[None, :] - onehot  # class counts excluding self
    non_edges_to = others - edges_to

    lp, l1p = np.log(p), np.log1p(-p)
    lq, l1q = np.log(q), np.log1p(-q)
    struct = np.empty((n, 2))
    for cand in (0, 1):
        same_e, same_n = edges_to[:, cand], non_edges_to[:, cand]
        diff_e = edges_to[:, 1 - cand]
        diff_n = non_edges_to[:, 1 - cand]
        struct[:, cand] = same_e * lp + same_n * l1p + diff_e * lq + diff_n * l1q

    score = feat + struct
    return np.argmax(score, axis=1)  # first maximum -> class 0 on ties


def bayes_accuracy(graph: Graph, params: CsbmParams) -> float:
    pred = bayes_classify(graph.adjacency, graph.features, graph.labels, params)
    return float((pred == graph.labels).mean())


def bayes_maintain(clean_graph: Graph, attacked_graph: Graph,
                   params: CsbmParams) -> float:
    """Fraction of nodes whose Bayes prediction is correct and unchanged.

    Features and labels are shared (structure-only attacks), so this is the
    fraction of nodes classified to the true label on both adjacencies.
    """
    if clean_graph.n != attacked_graph.n:
        raise ValueError("graphs differ in node count")
    y = clean_graph.labels
    pred_clean = bayes_classify(clean_graph.adjacency, clean_graph.features, y, params)
    pred_attacked = bayes_classify(attacked_graph.adjacency, clean_graph.features, y, params)
    return float(((pred_clean == y) & (pred_attacked == y)).mean())


@dataclass
class SemanticReport:
    """Per-attack victim accuracy and semantic preservation, seed-averaged."""

    rows: list = field(default_factory=list)
    clean_bayes_accuracy: float = float("nan")
    clean_gcn_accuracy: float = float("nan")
    seeds: tuple = ()


def semantic_detect_experiment(attack_list, params: CsbmParams, budget_ratio: float,
                               seeds, train_config=None, perturb_config=None,
                               map_config=None) -> SemanticReport:
    """Attack CSBM graphs and audit how much Bayes semantics each method keeps.

    For every seed a fresh graph is drawn and the same victim is shared by
    all attacks (paired comparison). Victim accuracy is evasion-style: clean
    training, attacked-graph evaluation.
    """
    from .baselines import run_attack
    from .defenses import evaluate_victim
    from .gcn import TrainConfig, train_surrogate
    from .graphs import budget_from_ratio
    from .mapping import MapConfig
    from .semantic import PerturbConfig

    train_config = train_config or TrainConfig()
    perturb_config = perturb_config or PerturbConfig()
    map_config = map_config or MapConfig()
    seeds = tuple(seeds)

    per_attack = {name: {"gcn": [], "maintain": []} for name in attack_list}
    clean_bayes = []
    clean_gcn = []
    for seed in seeds:
        graph = csbm_sample(params, seed)
        budget = budget_from_ratio(graph, budget_ratio)
        victim = train_surrogate(graph, replace(train_config, seed=seed))
        clean_bayes.append(bayes_accuracy(graph, params))
        clean_metrics = evaluate_victim(graph, graph, defense=None,
                                        train_config=train_config, seed=seed,
                                        params=victim)
        clean_gcn.append(clean_metrics["accuracy"])
        for name in attack_list:
            A_hat, _ = run_attack(name, graph, victim, budget, seed,
                                  perturb_config, map_config)
            attacked = graph.with_adjacency(A_hat)
            metrics = evaluate_victim(attacked, graph, defense=None,
                                      train_config=train_config, seed=seed,
                                      params=victim)
            per_attack[name]["gcn"].append(metrics["accuracy"])
            per_attack[name]["maintain"].append(bayes_maintain(graph, attacked, params))

    rows = []
    for name in attack_list:
        gcn = np.array(per_attack[name]["gcn"])
        maintain = np.array(per_attack[name]["maintain"])
        rows.append({
            "attack": name,
            "gcn_accuracy_mean": float(gcn.mean()),
            "gcn_accuracy_std": float(gcn.std()),
            "bayes_maintain_mean": float(maintain.mean()),
            "bayes_maintain_std": float(maintain.std()),
            "seeds": list(seeds),
        })
    return SemanticReport(
        rows=rows,
        clean_bayes_accuracy=float(np.mean(clean_bayes)),
        clean_gcn_accuracy=float(np.mean(clean_gcn)),
        seeds=seeds,
    )


def write_semantic_report(report: SemanticReport, directory) -> None:
    """Emit the report as CSV (rows) plus JSON (rows and clean references)."""
    import json
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "semantic_report.csv", "w", encoding="utf-8") as fh:
        fh.write("attack,gcn_accuracy_mean,gcn_accuracy_std,"
                 "bayes_maintain_mean,bayes_maintain_std,n_seeds\n")
        for row in report.rows:
            fh.write(f"{row['attack']},{row['gcn_accuracy_mean']!r},"
                     f"{row['gcn_accuracy_std']!r},{row['bayes_maintain_mean']!r},"
                     f"{row['bayes_maintain_std']!r},{len(row['seeds'])}\n")
    payload = {
        "clean_bayes_accuracy": report.clean_bayes_accuracy,
        "clean_gcn_accuracy": report.clean_gcn_accuracy,
        "seeds": list(report.seeds),
        "rows": report.rows,
    }
    with open(directory / "semantic_report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
