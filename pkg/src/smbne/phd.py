"""Phenotypic distance: input vectors, network phenotypes and the L1 kernel.

Two networks are compared by feeding both the same sequence of normalised
environment states and measuring the Manhattan distance between the
concatenated outputs. How that state sequence is chosen is the input
strategy: fixed reference traces (``pre``), traces of the initial design
(``init``), a Latin hypercube over the observation box (``lhs``), or the
traces of the best runs so far, refreshed whenever the incumbent improves
(``dyn``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .cgp import ActiveNetwork, evaluate_batch
from .envs import EnvSpec

TOTAL_SCALARS = 800
STRATEGIES = ("pre", "init", "lhs", "dyn")


@dataclass(frozen=True)
class InputStrategy:
    kind: str
    num_s: int = 5
    sample_count: int | None = None
    reference: str | None = None   # path to a reference-trace CSV for ``pre``

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown input strategy {self.kind!r}")
        if self.num_s < 1:
            raise ValueError("num_s must be >= 1")


@dataclass(frozen=True, eq=False)
class InputVector:
    """Ordered blocks of normalised states, best source fitness first."""

    traces: tuple[np.ndarray, ...]
    source_fitnesses: tuple[float, ...]
    capacity: int
    per_trace_cap: int

    @property
    def states(self) -> np.ndarray:
        try:
            return self._states
        except AttributeError:
            s = np.ascontiguousarray(np.concatenate(self.traces, axis=0))
            s.flags.writeable = False
            object.__setattr__(self, "_states", s)
            return s

    @property
    def num_states(self) -> int:
        return sum(len(t) for t in self.traces)

    def __len__(self):
        return self.states.size


def per_trace_cap(num_s: int, obs_dim: int, total: int = TOTAL_SCALARS) -> int:
    return max(1, total // (num_s * obs_dim))


def subsample(trace: np.ndarray, cap: int) -> np.ndarray:
    """Evenly spaced subset of at most ``cap`` states, keeping first and last."""
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) <= cap:
        return trace
    if cap == 1:
        return trace[:1]
    idx = np.round(np.linspace(0, len(trace) - 1, cap)).astype(np.int64)
    return trace[idx]


def _ordered(traces, fitnesses):
    # stable sort: among equal fitness, keep the caller's order
    order = sorted(range(len(fitnesses)), key=lambda i: fitnesses[i])
    return tuple(traces[i] for i in order), tuple(float(fitnesses[i]) for i in order)


def from_traces(traces: Sequence[np.ndarray], fitnesses: Sequence[float], num_s: int,
                obs_dim: int) -> InputVector:
    """Take the ``num_s`` best traces, subsample each and order by fitness."""
    if len(traces) == 0:
        raise ValueError("no traces to build an input vector from")
    cap = per_trace_cap(num_s, obs_dim)
    traces, fitnesses = _ordered(list(traces), list(fitnesses))
    traces = tuple(subsample(t, cap) for t in traces[:num_s])
    return InputVector(traces, fitnesses[:num_s], num_s, cap)


def lhs_states(sample_count: int, obs_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of the normalised box [-1, 1]^obs_dim."""
    unit = qmc.LatinHypercube(d=obs_dim, seed=rng).random(sample_count)
    return 2.0 * unit - 1.0


def load_reference_traces(path) -> tuple[list[np.ndarray], list[float]]:
    """Read a reference-trace CSV (columns: trace, fitness, obs_1..obs_d)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"reference trace file not found: {path}")
    blocks: dict[int, list[list[float]]] = {}
    fits: dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tid = int(row["trace"])
            obs = [float(v) for k, v in row.items() if k.startswith("obs_")]
            blocks.setdefault(tid, []).append(obs)
            fits[tid] = float(row["fitness"])
    ids = sorted(blocks)
    return [np.array(blocks[i]) for i in ids], [fits[i] for i in ids]


def write_reference_traces(path, traces: Sequence[np.ndarray], fitnesses: Sequence[float]) -> None:
    dim = np.asarray(traces[0]).shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace", "fitness"] + [f"obs_{i + 1}" for i in range(dim)])
        for tid, (t, f) in enumerate(zip(traces, fitnesses)):
            for state in np.asarray(t):
                w.writerow([tid, repr(float(f))] + [repr(float(v)) for v in state])


def default_reference(spec: EnvSpec) -> Path:
    return Path(str(resources.files("smbne") / "data" / f"pre_{spec.name.lower()}.csv"))


def build_input_vector(strategy: InputStrategy, archive, spec: EnvSpec,
                       rng: np.random.Generator) -> InputVector:
    """Build the state sequence used to excite networks.

    ``archive`` is any sequence of records with ``trace`` and ``fitness``.
    """
    if strategy.kind in ("init", "dyn"):
        if len(archive) == 0:
            raise ValueError(f"{strategy.kind} input vector needs a non-empty archive")
        return from_traces([r.trace for r in archive], [r.fitness for r in archive],
                           strategy.num_s, spec.obs_dim)
    if strategy.kind == "lhs":
        count = strategy.sample_count or TOTAL_SCALARS // spec.obs_dim
        pts = lhs_states(count, spec.obs_dim, rng)
        return InputVector((pts,), (math.nan,), 1, count)
    path = strategy.reference or default_reference(spec)
    traces, fits = load_reference_traces(path)
    return from_traces(traces, fits, strategy.num_s, spec.obs_dim)


def update_dynamic(v: InputVector, new_trace: np.ndarray, new_fitness: float) -> InputVector:
    """Swap the worst contributing trace for a new (better) one."""
    new = subsample(new_trace, v.per_trace_cap)
    traces, fits = list(v.traces), list(v.source_fitnesses)
    if len(traces) >= v.capacity:
        worst = max(range(len(fits)), key=lambda i: (fits[i], i))
        del traces[worst], fits[worst]
    traces.append(new)
    fits.append(float(new_fitness))
    traces, fits = _ordered(traces, fits)
    return InputVector(traces, fits, v.capacity, v.per_trace_cap)


def phenotype(net: ActiveNetwork, v: InputVector) -> np.ndarray:
    """Network outputs for every state of ``v``, flattened state-major."""
    states = v.states
    if states.shape[1] != net.num_inputs:
        raise ValueError("input vector dimension does not match network inputs")
    return evaluate_batch(*net._kernel_args, states).ravel()


def manhattan(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"phenotype length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def kernel_phd(a, b, theta: float) -> float:
    if not theta > 0:
        raise ValueError("theta must be positive")
    return math.exp(-theta * manhattan(a, b))
