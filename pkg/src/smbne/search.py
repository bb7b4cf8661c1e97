"""Optimisation loops: surrogate-assisted neuroevolution and its baselines.

All three algorithms share one evaluation path (``Evaluator``): a genotype is
decoded, run for one episode, archived, and - if it became the incumbent -
checked against the environment's solve criterion on fresh trials. Runs
stop at the episode budget or as soon as the check passes.

Randomness per run is split into independent streams derived from the seed:
one for the algorithm's own choices and one for episode initial states. The
i-th episode of every algorithm started from the same seed therefore sees the
same initial state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kriging
from .cgp import CgpConfig, Genotype, decode_active, mutate_random, random_genotype
from .envs import EnvSpec, run_episode, solve_trial_rng, solved_check
from .phd import InputStrategy, InputVector, build_input_vector, phenotype, update_dynamic

log = logging.getLogger(__name__)

SMBNE, CGP_ES, RANDOM_SEARCH = "smbne", "cgp", "rs"
LAMBDA = 4


@dataclass
class Record:
    genotype: Genotype
    fitness: float
    reward: float
    trace: np.ndarray
    iteration: int


class Archive:
    """Every truly evaluated genotype, in evaluation order."""

    def __init__(self):
        self.records: list[Record] = []
        self.best_index: int = -1

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def best(self) -> Record:
        return self.records[self.best_index]

    def add(self, rec: Record) -> bool:
        """Append ``rec``; True if it became the incumbent (ties go to the newest)."""
        self.records.append(rec)
        if self.best_index < 0 or rec.fitness <= self.best.fitness:
            self.best_index = len(self.records) - 1
            return True
        return False


@dataclass
class SmbneConfig:
    init_size: int = 20
    budget: int = 3020
    num_m: int = 100
    best_fraction: float = 0.2
    surrogate_evals: int = 1000
    es_mutation_rate: float = 0.05
    strategy: InputStrategy = field(default_factory=lambda: InputStrategy("dyn", num_s=5))
    theta_bounds: tuple[float, float] = kriging.THETA_BOUNDS

    def __post_init__(self):
        if self.init_size < 2:
            raise ValueError("init_size must be >= 2")
        if self.budget < self.init_size:
            raise ValueError("budget must cover the initial design")
        if not 0 < self.best_fraction < 1:
            raise ValueError("best_fraction must lie in (0, 1)")
        if self.num_m < 5:
            raise ValueError("num_m must be >= 5")


@dataclass
class RunResult:
    algorithm: str
    seed: int
    config: dict
    solved: bool
    evaluations: int
    episodes_to_solve: int
    best_fitness: list[float]
    candidate_reward: list[float]
    fit_failures: int = 0
    archive: Archive | None = field(default=None, repr=False)

    @property
    def best_genotype(self) -> Genotype | None:
        return self.archive.best.genotype if self.archive else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("archive")
        return d


class Evaluator:
    """True-episode bookkeeping shared by all algorithms."""

    def __init__(self, spec: EnvSpec, seed: int, budget: int):
        self.spec = spec
        self.seed = seed
        self.budget = budget
        self.env_rng = env_stream(seed)
        self.archive = Archive()
        self.best_fitness: list[float] = []
        self.candidate_reward: list[float] = []
        self.solved_at: int | None = None

    @property
    def done(self) -> bool:
        return self.solved_at is not None or len(self.archive) >= self.budget

    def evaluate(self, g: Genotype) -> Record:
        if self.done:
            raise RuntimeError("evaluation budget exhausted")
        net = decode_active(g)
        res = run_episode(self.spec, net, self.env_rng)
        rec = Record(g, res.fitness, res.total_reward, res.trace, len(self.archive) + 1)
        # episode fitness is noisy: a robust network need not beat a lucky
        # incumbent, so candidates whose own episode passes are checked too
        if self.archive.add(rec) or res.solved_flag:
            if solved_check(self.spec, net, solve_trial_rng(self.seed, rec.iteration)):
                self.solved_at = rec.iteration
        self.best_fitness.append(self.archive.best.fitness)
        self.candidate_reward.append(res.total_reward)
        return rec

    def result(self, algorithm: str, config: dict, fit_failures: int = 0) -> RunResult:
        solved = self.solved_at is not None
        return RunResult(
            algorithm=algorithm,
            seed=self.seed,
            config=config,
            solved=solved,
            evaluations=len(self.archive),
            episodes_to_solve=self.solved_at if solved else self.budget,
            best_fitness=list(self.best_fitness),
            candidate_reward=list(self.candidate_reward),
            fit_failures=fit_failures,
            archive=self.archive,
        )


def algo_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])


def env_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])


def select_model_subset(archive, num_m: int, best_fraction: float,
                        rng: np.random.Generator) -> list[Record]:
    """Best ``ceil(best_fraction * num_m)`` records plus a random remainder."""
    if num_m < 5:
        raise ValueError("num_m must be >= 5")
    records = list(archive)
    if len(records) <= num_m:
        return records
    n_best = math.ceil(best_fraction * num_m)
    # newest first among equal fitness
    order = sorted(range(len(records)), key=lambda i: (records[i].fitness, -i))
    best, rest = order[:n_best], np.array(order[n_best:])
    picked = rng.choice(len(rest), size=num_m - n_best, replace=False)
    return [records[i] for i in best] + [records[i] for i in rest[np.sort(picked)]]


def propose_candidate(model: kriging.KrigingModel, v: InputVector, start: Genotype,
                      evals: int, rate: float, rng: np.random.Generator,
                      y_best: float) -> Genotype:
    """(1+4)-ES maximising expected improvement on the surrogate.

    The parent is replaced whenever an offspring's EI is at least as high,
    so the final parent is the best genotype seen, newest among ties.
    """
    def ei_of(genotypes):
        P = np.stack([phenotype(decode_active(g), v) for g in genotypes])
        return kriging.ei_from_moments(*model.predict_many(P), y_best)

    parent, parent_ei = start, float(ei_of([start])[0])
    used = 0
    while used < evals:
        kids = [mutate_random(parent, rate, rng) for _ in range(min(LAMBDA, evals - used))]
        scores = ei_of(kids)
        used += len(kids)
        for kid, score in zip(kids, scores):
            if score >= parent_ei:
                parent, parent_ei = kid, float(score)
    return parent


def run_smbne(cfg: SmbneConfig, spec: EnvSpec, ccfg: CgpConfig, seed: int) -> RunResult:
    rng = algo_stream(seed)
    ev = Evaluator(spec, seed, cfg.budget)
    for _ in range(cfg.init_size):
        if ev.done:
            break
        ev.evaluate(random_genotype(ccfg, rng))

    failures = 0
    if not ev.done:
        v = build_input_vector(cfg.strategy, ev.archive, spec, rng)
        cache: dict[int, np.ndarray] = {}
        while not ev.done:
            subset = select_model_subset(ev.archive, cfg.num_m, cfg.best_fraction, rng)
            for r in subset:
                if r.iteration not in cache:
                    cache[r.iteration] = phenotype(decode_active(r.genotype), v)
            try:
                model = kriging.fit([cache[r.iteration] for r in subset],
                                    [r.fitness for r in subset], cfg.theta_bounds)
            except kriging.FitError as exc:
                log.warning("seed %d iteration %d: model fit failed (%s); sampling at random",
                            seed, len(ev.archive) + 1, exc)
                failures += 1
                cand = random_genotype(ccfg, rng)
            else:
                cand = propose_candidate(model, v, ev.archive.best.genotype,
                                         cfg.surrogate_evals, cfg.es_mutation_rate, rng,
                                         ev.archive.best.fitness)
            prev_best = ev.archive.best.fitness
            rec = ev.evaluate(cand)
            if cfg.strategy.kind == "dyn" and rec.fitness < prev_best:
                v = update_dynamic(v, rec.trace, rec.fitness)
                cache.clear()

    config = asdict(cfg)
    config["strategy"] = asdict(cfg.strategy)
    config["cgp"] = ccfg.to_dict()
    config["environment"] = spec.name
    return ev.result(SMBNE, config, failures)


def run_cgp_es(spec: EnvSpec, ccfg: CgpConfig, rate: float, budget: int, seed: int,
               init_size: int = 20) -> RunResult:
    """Model-free (1+4)-ES started from the best of a random initial design."""
    rng = algo_stream(seed)
    ev = Evaluator(spec, seed, budget)
    for _ in range(init_size):
        if ev.done:
            break
        ev.evaluate(random_genotype(ccfg, rng))
    while not ev.done:
        parent = ev.archive.best.genotype
        kids = [mutate_random(parent, rate, rng) for _ in range(LAMBDA)]
        for kid in kids:
            if ev.done:
                break
            # the archive's incumbent is the elitist: offspring with equal
            # fitness take over because Archive.add prefers the newest
            ev.evaluate(kid)
    config = {"mutation_rate": rate, "budget": budget, "init_size": init_size,
              "cgp": ccfg.to_dict(), "environment": spec.name}
    return ev.result(CGP_ES, config)


def run_random_search(spec: EnvSpec, ccfg: CgpConfig, budget: int, seed: int) -> RunResult:
    rng = algo_stream(seed)
    ev = Evaluator(spec, seed, budget)
    while not ev.done:
        ev.evaluate(random_genotype(ccfg, rng))
    config = {"budget": budget, "cgp": ccfg.to_dict(), "environment": spec.name}
    return ev.result(RANDOM_SEARCH, config)


def default_cgp_config(spec: EnvSpec) -> CgpConfig:
    """Network sizes used for each benchmark: 200 nodes/arity 20 for
    CartPole, 100 nodes/arity 10 for MountainCar."""
    if spec.name == "CartPole":
        return CgpConfig(spec.obs_dim, spec.action_count, num_nodes=200, arity=20)
    return CgpConfig(spec.obs_dim, spec.action_count, num_nodes=100, arity=10)
