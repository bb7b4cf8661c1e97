"""Seeded batch experiments, summary statistics and file export.

A plan names one environment and several algorithm configurations. Repeat
``j`` runs every configuration with seed ``base_seed + j``, so all
configurations face the same initial designs and episode start states.
Unsolved runs enter every summary at their full budget.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from joblib import Parallel, delayed

from . import search
from .cgp import CgpConfig
from .envs import get_spec
from .phd import InputStrategy
from .stats import conover_posthoc, kruskal_wallis

log = logging.getLogger(__name__)

ALPHA = 0.05
_ALGORITHMS = (search.SMBNE, search.CGP_ES, search.RANDOM_SEARCH)


@dataclass
class AlgorithmConfig:
    label: str
    algorithm: str
    budget: int
    mutation_rate: float = 0.05
    strategy: str = "dyn"
    num_s: int = 5
    surrogate_evals: int = 1000
    sample_count: int | None = None
    reference: str | None = None
    init_size: int = 20
    num_m: int = 100
    num_nodes: int | None = None
    arity: int | None = None

    def __post_init__(self):
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {_ALGORITHMS}")


@dataclass
class ExperimentPlan:
    environment: str
    configs: list[AlgorithmConfig]
    repeats: int = 30
    base_seed: int = 0
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        get_spec(self.environment)
        if self.repeats < 2:
            raise ValueError("repeats must be >= 2")
        labels = [c.label for c in self.configs]
        if len(set(labels)) != len(labels):
            raise ValueError("configuration labels must be unique")
        if not self.configs:
            raise ValueError("plan has no configurations")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        configs = [AlgorithmConfig(**c) for c in d.pop("configs")]
        return cls(configs=configs, **d)


def load_plan(path) -> ExperimentPlan:
    with open(path) as fh:
        return ExperimentPlan.from_dict(yaml.safe_load(fh))


@dataclass
class RunCell:
    label: str
    repeat: int
    seed: int
    episodes: float
    solved: bool
    evaluations: int
    best_fitness: float
    candidate_reward: list[float] = field(default_factory=list)
    error: str | None = None
    result: dict | None = field(default=None, repr=False)


@dataclass
class ResultTable:
    labels: list[str]
    cells: list[RunCell]
    budgets: dict[str, int]

    def episodes(self, label: str) -> np.ndarray:
        return np.array([c.episodes for c in self.cells if c.label == label and c.error is None])

    def solved(self, label: str) -> np.ndarray:
        return np.array([c.solved for c in self.cells if c.label == label and c.error is None])

    def mean(self, label: str) -> float:
        return float(np.mean(self.episodes(label)))

    def sd(self, label: str) -> float:
        e = self.episodes(label)
        return float(np.std(e, ddof=1)) if len(e) > 1 else 0.0

    def statistics(self, labels: list[str] | None = None) -> dict:
        labels = labels or self.labels
        groups = [self.episodes(lab) for lab in labels]
        h, p = kruskal_wallis(groups)
        return {
            "labels": labels,
            "alpha": ALPHA,
            "kruskal_wallis": {"H": h, "p": p},
            "conover": conover_posthoc(groups).tolist(),
        }


def cgp_config_for(cfg: AlgorithmConfig, spec) -> CgpConfig:
    base = search.default_cgp_config(spec)
    return CgpConfig(
        base.num_inputs, base.num_outputs,
        num_nodes=cfg.num_nodes or base.num_nodes,
        arity=cfg.arity or base.arity,
        weight_range=base.weight_range,
        function_set=base.function_set,
    )


def run_single(cfg: AlgorithmConfig, environment: str, seed: int) -> search.RunResult:
    spec = get_spec(environment)
    ccfg = cgp_config_for(cfg, spec)
    if cfg.algorithm == search.SMBNE:
        strategy = InputStrategy(cfg.strategy, num_s=cfg.num_s,
                                 sample_count=cfg.sample_count, reference=cfg.reference)
        scfg = search.SmbneConfig(
            init_size=cfg.init_size, budget=cfg.budget, num_m=cfg.num_m,
            surrogate_evals=cfg.surrogate_evals, es_mutation_rate=cfg.mutation_rate,
            strategy=strategy,
        )
        return search.run_smbne(scfg, spec, ccfg, seed)
    if cfg.algorithm == search.CGP_ES:
        return search.run_cgp_es(spec, ccfg, cfg.mutation_rate, cfg.budget, seed, cfg.init_size)
    return search.run_random_search(spec, ccfg, cfg.budget, seed)


def _run_cell(cfg: AlgorithmConfig, environment: str, repeat: int, seed: int) -> RunCell:
    try:
        res = run_single(cfg, environment, seed)
    except Exception:
        log.exception("run %s seed %d failed", cfg.label, seed)
        return RunCell(cfg.label, repeat, seed, float("nan"), False, 0, float("nan"),
                       error=traceback.format_exc(limit=3))
    out = res.to_dict()
    out["label"] = cfg.label
    return RunCell(cfg.label, repeat, seed, float(res.episodes_to_solve), res.solved,
                   res.evaluations, float(res.best_fitness[-1]), res.candidate_reward,
                   result=out)


def run_plan(plan: ExperimentPlan, workers: int | None = None) -> ResultTable:
    jobs = [(cfg, j, plan.base_seed + j) for j in range(plan.repeats) for cfg in plan.configs]
    n_jobs = workers or plan.workers
    if n_jobs == 1:
        cells = [_run_cell(cfg, plan.environment, j, s) for cfg, j, s in jobs]
    else:
        cells = Parallel(n_jobs=n_jobs)(
            delayed(_run_cell)(cfg, plan.environment, j, s) for cfg, j, s in jobs)
    order = {c.label: i for i, c in enumerate(plan.configs)}
    cells.sort(key=lambda c: (order[c.label], c.repeat))
    return ResultTable([c.label for c in plan.configs], cells,
                       {c.label: c.budget for c in plan.configs})


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", label).strip("_")


def _num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def convergence(table: ResultTable, label: str) -> list[tuple[int, float, float]]:
    """Per-evaluation mean/sd of the candidate reward over the repeats that
    reached that evaluation."""
    series = [c.candidate_reward for c in table.cells if c.label == label and c.error is None]
    rows = []
    length = max((len(s) for s in series), default=0)
    for i in range(length):
        vals = np.array([s[i] for s in series if len(s) > i])
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append((i + 1, float(vals.mean()), sd))
    return rows


def write_stats(table: ResultTable, directory, labels: list[str] | None = None) -> Path:
    path = Path(directory) / "stats.json"
    with open(path, "w") as fh:
        json.dump(table.statistics(labels), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def emit_results(table: ResultTable, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    repeats = max((c.repeat for c in table.cells), default=-1) + 1
    path = out / "results.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "mean", "sd", "solved", "runs"] + [f"run_{j}" for j in range(repeats)])
        for lab in table.labels:
            by_rep = {c.repeat: c for c in table.cells if c.label == lab}
            vals = ["" if j not in by_rep or by_rep[j].error else _num(by_rep[j].episodes)
                    for j in range(repeats)]
            e = table.episodes(lab)
            w.writerow([lab, repr(table.mean(lab)) if len(e) else "", repr(table.sd(lab)),
                        int(table.solved(lab).sum()), len(e)] + vals)
    written.append(path)

    path = out / "runs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "repeat", "seed", "episodes", "solved", "evaluations",
                    "best_fitness", "budget", "error"])
        for c in table.cells:
            w.writerow([c.label, c.repeat, c.seed, _num(c.episodes) if c.error is None else "",
                        int(c.solved), c.evaluations,
                        repr(c.best_fitness) if c.error is None else "",
                        table.budgets.get(c.label, ""),
                        (c.error or "").strip().splitlines()[-1] if c.error else ""])
    written.append(path)

    written.append(write_stats(table, out))

    conv = out / "convergence"
    conv.mkdir(exist_ok=True)
    for lab in table.labels:
        path = conv / f"{slug(lab)}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "mean_reward", "sd_reward"])
            for it, m, s in convergence(table, lab):
                w.writerow([it, repr(m), repr(s)])
        written.append(path)

    runs_dir = out / "runs"
    for c in table.cells:
        if c.result is None:
            continue
        d = runs_dir / slug(c.label)
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"seed_{c.seed}.json"
        with open(path, "w") as fh:
            json.dump(c.result, fh, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written


def load_runs(directory) -> ResultTable:
    """Rebuild a table from ``runs.csv`` (and per-run JSON when present)."""
    directory = Path(directory)
    cells, labels, budgets = [], [], {}
    with open(directory / "runs.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            lab = row["label"]
            if lab not in labels:
                labels.append(lab)
            if row["budget"]:
                budgets[lab] = int(row["budget"])
            err = row["error"] or None
            rewards = []
            js = directory / "runs" / slug(lab) / f"seed_{row['seed']}.json"
            if js.exists():
                rewards = json.loads(js.read_text())["candidate_reward"]
            cells.append(RunCell(
                lab, int(row["repeat"]), int(row["seed"]),
                float(row["episodes"]) if row["episodes"] else float("nan"),
                bool(int(row["solved"])), int(row["evaluations"]),
                float(row["best_fitness"]) if row["best_fitness"] else float("nan"),
                rewards, error=err,
            ))
    return ResultTable(labels, cells, budgets)
