"""Experiment orchestration: attack/defense grids, sweeps, reports, RNG rules.

One master seed per run; every stage draws from a stream derived by hashing
(stage name, cell identifiers, master seed), so any single cell can be rerun
in isolation and the full grid is reproducible regardless of scheduling.
Grid cells are independent; a bounded thread pool may run them concurrently
(the heavy work is BLAS, which releases the GIL).
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import ATTACKS, run_attack
from .csbm import CsbmParams, bayes_maintain, csbm_sample
from .defenses import DefenseConfig, evaluate_victim
from .gcn import TrainConfig, train_surrogate
from .graphs import Graph, budget_from_ratio, load_graph, save_attacked_graph
from .mapping import MapConfig, StructureMatchProblem, pgd_minimize, sample_binary
from .semantic import PerturbConfig, optimize_combination

DEFENSES = ("none", "jaccard", "svd")


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from the stage name and cell identifiers."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid: dataset x attacks x defenses x budgets x seeds."""

    dataset: str = "csbm"              # dataset directory path, or "csbm"
    attacks: tuple = ("ahsg",)
    defenses: tuple = ("none",)
    budgets: tuple = (0.1,)
    seeds: tuple = (0,)
    ablation: str = "none"             # none | rec | hid; rewrites "ahsg" cells
    out_dir: str = "runs"
    threads: int = 1
    csbm: CsbmParams = CsbmParams()
    train: TrainConfig = TrainConfig()
    perturb: PerturbConfig = PerturbConfig()
    map: MapConfig = MapConfig()
    defense_config: DefenseConfig = DefenseConfig()
    save_graphs: bool = True

    def __post_init__(self):
        for attack in self.attacks:
            if attack not in ATTACKS:
                raise ValueError(f"unknown attack {attack!r}; known: {', '.join(ATTACKS)}")
        for defense in self.defenses:
            if defense not in DEFENSES:
                raise ValueError(f"unknown defense {defense!r}; known: {', '.join(DEFENSES)}")
        if self.ablation not in ("none", "rec", "hid"):
            raise ValueError(f"unknown ablation mode {self.ablation!r}")
        for ratio in self.budgets:
            if not 0.0 <= ratio <= 1.0:
                raise ValueError(f"budget ratio {ratio} out of [0, 1]")

    def effective_attacks(self) -> tuple:
        if self.ablation == "none":
            return self.attacks
        variant = f"ahsg_{self.ablation}"
        return tuple(variant if a == "ahsg" else a for a in self.attacks)


@dataclass
class MetricsRecord:
    dataset: str
    attack: str
    defense: str
    budget_ratio: float
    budget_flips: int
    seed: int
    clean_accuracy: float
    attacked_accuracy: float
    flip_count: int
    bayes_maintain: float | None
    wall_time: float
    status: str = "ok"

    FIELDS = ("dataset", "attack", "defense", "budget_ratio", "budget_flips",
              "seed", "clean_accuracy", "attacked_accuracy", "flip_count",
              "bayes_maintain", "wall_time", "status")

    def as_row(self):
        return [getattr(self, name) for name in self.FIELDS]


class _Workspace:
    """Per-seed cache of graphs, victims, and attacked adjacencies."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._graphs: dict = {}
        self._victims: dict = {}
        self._attacks: dict = {}

    def dataset_name(self) -> str:
        if self.config.dataset == "csbm":
            return "csbm"
        return Path(self.config.dataset).name

    def graph(self, seed: int) -> Graph:
        key = seed if self.config.dataset == "csbm" else "fixed"
        if key not in self._graphs:
            if self.config.dataset == "csbm":
                self._graphs[key] = csbm_sample(self.config.csbm,
                                                derive_seed("csbm", seed))
            else:
                self._graphs[key] = load_graph(self.config.dataset)
        return self._graphs[key]

    def victim(self, seed: int):
        if seed not in self._victims:
            graph = self.graph(seed)
            train_config = replace(self.config.train,
                                   seed=derive_seed("train", self.dataset_name(), seed))
            self._victims[seed] = (train_surrogate(graph, train_config), train_config)
        return self._victims[seed]

    def attacked(self, attack: str, ratio: float, seed: int):
        key = (attack, ratio, seed)
        if key not in self._attacks:
            graph = self.graph(seed)
            params, _ = self.victim(seed)
            budget = budget_from_ratio(graph, ratio)
            A_hat, info = run_attack(
                attack, graph, params, budget,
                derive_seed("attack", attack, ratio, seed),
                self.config.perturb, self.config.map)
            self._attacks[key] = (A_hat, info, budget)
        return self._attacks[key]


def _run_cell(workspace: _Workspace, attack: str, defense: str, ratio: float,
              seed: int) -> MetricsRecord:
    config = workspace.config
    dataset = workspace.dataset_name()
    start = time.perf_counter()
    graph = workspace.graph(seed)
    params, train_config = workspace.victim(seed)
    A_hat, info, budget = workspace.attacked(attack, ratio, seed)
    attacked_graph = graph.with_adjacency(A_hat)

    clean = evaluate_victim(graph, graph, defense=defense,
                            train_config=train_config,
                            defense_config=config.defense_config, params=params)
    hit = evaluate_victim(attacked_graph, graph, defense=defense,
                          train_config=train_config,
                          defense_config=config.defense_config, params=params)
    maintain = None
    if config.dataset == "csbm":
        maintain = bayes_maintain(graph, attacked_graph, config.csbm)

    if config.save_graphs:
        cell_dir = (Path(config.out_dir) / "cells"
                    / f"{dataset}_{attack}_{defense}_b{ratio:g}_s{seed}")
        manifest = {
            "dataset": dataset,
            "method": attack,
            "defense": defense,
            "seed": seed,
            "budget_ratio": ratio,
            "budget": budget.epsilon_flips,
            "clean_accuracy": clean["accuracy"],
            "attacked_accuracy": hit["accuracy"],
        }
        for key, value in info.items():
            manifest[key] = value
        save_attacked_graph(A_hat, graph, cell_dir, manifest)

    return MetricsRecord(
        dataset=dataset,
        attack=attack,
        defense=defense,
        budget_ratio=ratio,
        budget_flips=budget.epsilon_flips,
        seed=seed,
        clean_accuracy=clean["accuracy"],
        attacked_accuracy=hit["accuracy"],
        flip_count=hit["flip_count"],
        bayes_maintain=maintain,
        wall_time=time.perf_counter() - start,
    )


def run_experiment(config: ExperimentConfig) -> list[MetricsRecord]:
    """Run the full grid; one record per (attack x defense x budget x seed).

    Cell failures are recorded (status="error") without aborting the rest.
    """
    workspace = _Workspace(config)
    cells = [(attack, defense, ratio, seed)
             for seed in config.seeds
             for attack in config.effective_attacks()
             for ratio in config.budgets
             for defense in config.defenses]

    def run(cell):
        attack, defense, ratio, seed = cell
        try:
            return _run_cell(workspace, attack, defense, ratio, seed)
        except Exception as exc:  # keep the grid alive, mark the cell
            return MetricsRecord(
                dataset=workspace.dataset_name(), attack=attack, defense=defense,
                budget_ratio=ratio, budget_flips=-1, seed=seed,
                clean_accuracy=float("nan"), attacked_accuracy=float("nan"),
                flip_count=-1, bayes_maintain=None, wall_time=0.0,
                status=f"error: {exc}")

    if config.threads > 1:
        # warm shared caches sequentially first: victims/graphs are per-seed
        for seed in config.seeds:
            workspace.victim(seed)
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(run, cells))
    else:
        records = [run(cell) for cell in cells]
    return records


def sweep(config: ExperimentConfig, parameter: str, values) -> list[dict]:
    """Seed-averaged attacked accuracy as one knob moves.

    budget: reuses the per-seed latent target across budgets (the
    combination stage does not depend on the budget). beta / hidden_dim:
    reruns with the modified config.
    """
    values = list(values)
    if not values:
        raise ValueError("empty sweep value list")
    if parameter not in ("budget", "beta", "hidden_dim"):
        raise ValueError(f"unknown sweep parameter {parameter!r}")

    rows = []
    if parameter == "budget":
        per_value = {v: [] for v in values}
        for seed in config.seeds:
            workspace = _Workspace(replace(config, budgets=tuple(values)))
            graph = workspace.graph(seed)
            params, train_config = workspace.victim(seed)
            clean = evaluate_victim(graph, graph, defense=None,
                                    train_config=train_config, params=params)
            shared = None
            if "ahsg" in config.effective_attacks():
                shared = optimize_combination(graph, params, config.perturb)
            for ratio in values:
                budget = budget_from_ratio(graph, ratio)
                attack = config.effective_attacks()[0]
                if attack == "ahsg":
                    problem = StructureMatchProblem(
                        graph, params, shared.latent,
                        frozen_degrees=config.map.frozen_degrees)
                    pgd = pgd_minimize(problem, config.map, budget.epsilon_flips)
                    d = sample_binary(pgd.s, config.map.samples, budget.epsilon_flips,
                                      problem.loss,
                                      derive_seed("attack", attack, ratio, seed))
                    from .graphs import apply_perturbation

                    A_hat = apply_perturbation(graph.adjacency, d)
                else:
                    A_hat, _, _ = workspace.attacked(attack, ratio, seed)
                hit = evaluate_victim(graph.with_adjacency(A_hat), graph,
                                      defense=None, train_config=train_config,
                                      params=params)
                per_value[ratio].append(hit["accuracy"])
        for v in values:
            acc = np.array(per_value[v])
            rows.append({"value": v, "mean": float(acc.mean()),
                         "std": float(acc.std()), "n_seeds": len(config.seeds)})
        return rows

    for v in values:
        if parameter == "beta":
            varied = replace(config, perturb=replace(config.perturb, beta=float(v)))
        else:
            varied = replace(config, train=replace(config.train, hidden_dim=int(v)))
        records = run_experiment(replace(varied, defenses=("none",), save_graphs=False))
        acc = np.array([r.attacked_accuracy for r in records if r.status == "ok"])
        rows.append({"value": v, "mean": float(acc.mean()), "std": float(acc.std()),
                     "n_seeds": len(config.seeds)})
    return rows


def write_sweep_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "mean", "std", "n_seeds"])
        for row in rows:
            writer.writerow([row["value"], repr(row["mean"]), repr(row["std"]),
                             row["n_seeds"]])


def emit_report(records: list[MetricsRecord], out_dir) -> dict:
    """Write results.csv, summary.json, and plotdata/ sweep curves.

    Output bytes are stable: records are sorted, JSON keys sorted, floats
    emitted via repr.
    """
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: (r.dataset, r.attack, r.defense,
                                             r.budget_ratio, r.seed))
    with open(out / "results.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRecord.FIELDS)
        for record in ordered:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in record.as_row()])

    groups: dict = {}
    for record in ordered:
        if record.status != "ok":
            continue
        key = (record.dataset, record.attack, record.defense, record.budget_ratio)
        groups.setdefault(key, []).append(record)
    summary = {}
    for (dataset, attack, defense, ratio), group in sorted(groups.items()):
        acc = np.array([r.attacked_accuracy for r in group])
        clean = np.array([r.clean_accuracy for r in group])
        entry = {
            "clean_accuracy_mean": float(clean.mean()),
            "attacked_accuracy_mean": float(acc.mean()),
            "attacked_accuracy_std": float(acc.std()),
            "n_seeds": len(group),
        }
        maintain = [r.bayes_maintain for r in group if r.bayes_maintain is not None]
        if maintain:
            entry["bayes_maintain_mean"] = float(np.mean(maintain))
        summary[f"{dataset}/{attack}/{defense}/b{ratio:g}"] = entry
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    plot_dir = out / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    curves: dict = {}
    for (dataset, attack, defense, ratio), group in sorted(groups.items()):
        acc = np.array([r.attacked_accuracy for r in group])
        curves.setdefault((dataset, attack, defense), []).append(
            (ratio, float(acc.mean()), float(acc.std()), len(group)))
    for (dataset, attack, defense), points in curves.items():
        rows = [{"value": v, "mean": m, "std": s, "n_seeds": k}
                for v, m, s, k in sorted(points)]
        write_sweep_csv(rows, plot_dir / f"{dataset}_{attack}_{defense}.csv")
    return summary


def read_records_csv(path) -> list[MetricsRecord]:
    """Inverse of the results.csv emission (for the report subcommand)."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(MetricsRecord(
                dataset=row["dataset"],
                attack=row["attack"],
                defense=row["defense"],
                budget_ratio=float(row["budget_ratio"]),
                budget_flips=int(row["budget_flips"]),
                seed=int(row["seed"]),
                clean_accuracy=float(row["clean_accuracy"]),
                attacked_accuracy=float(row["attacked_accuracy"]),
                flip_count=int(row["flip_count"]),
                bayes_maintain=float(row["bayes_maintain"]) if row["bayes_maintain"] else None,
                wall_time=float(row["wall_time"]),
                status=row["status"],
            ))
    return records
