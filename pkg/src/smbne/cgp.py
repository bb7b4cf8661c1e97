"""Cartesian genetic programming encoding of feed-forward neural networks.

A genotype is a fixed row of ``num_nodes`` nodes. Each node holds a transfer
function gene plus ``arity`` (connection, weight) pairs. Addresses
``0 .. num_inputs-1`` refer to network inputs, address ``num_inputs + i``
refers to node ``i``. Node ``i`` may only read from addresses below
``num_inputs + i``, so every genotype is acyclic by construction.

Only nodes reachable backwards from an output gene are active; the rest are
carried along silently and never influence the network's behaviour.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

FUNCTIONS = ("tanh", "softsign", "step", "sigmoid", "gauss")
_FUNCTION_CODES = {name: code for code, name in enumerate(FUNCTIONS)}


@dataclass(frozen=True)
class CgpConfig:
    num_inputs: int
    num_outputs: int
    num_nodes: int
    arity: int
    weight_range: tuple[float, float] = (-1.0, 1.0)
    function_set: tuple[str, ...] = FUNCTIONS

    def __post_init__(self):
        if self.num_inputs < 1 or self.num_outputs < 1:
            raise ValueError("need at least one input and one output")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        if self.arity < 1:
            raise ValueError("arity must be >= 1")
        lo, hi = self.weight_range
        if not lo < hi:
            raise ValueError("weight_range lower bound must be below upper bound")
        if len(self.function_set) == 0:
            raise ValueError("function_set must not be empty")
        unknown = [f for f in self.function_set if f not in _FUNCTION_CODES]
        if unknown:
            raise ValueError(f"unknown transfer functions: {unknown}")
        object.__setattr__(self, "weight_range", (float(lo), float(hi)))
        object.__setattr__(self, "function_set", tuple(self.function_set))

    @property
    def num_addresses(self) -> int:
        return self.num_inputs + self.num_nodes

    @property
    def genes_per_node(self) -> int:
        return 1 + 2 * self.arity

    @property
    def num_genes(self) -> int:
        return self.num_nodes * self.genes_per_node + self.num_outputs

    @property
    def function_codes(self) -> np.ndarray:
        return np.array([_FUNCTION_CODES[f] for f in self.function_set], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "num_inputs": self.num_inputs,
            "num_outputs": self.num_outputs,
            "num_nodes": self.num_nodes,
            "arity": self.arity,
            "weight_range": list(self.weight_range),
            "function_set": list(self.function_set),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CgpConfig":
        return cls(
            num_inputs=d["num_inputs"],
            num_outputs=d["num_outputs"],
            num_nodes=d["num_nodes"],
            arity=d["arity"],
            weight_range=tuple(d["weight_range"]),
            function_set=tuple(d["function_set"]),
        )


@dataclass(frozen=True)
class NodeGene:
    function: int
    connections: tuple[int, ...]
    weights: tuple[float, ...]


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Genotype:
    """Immutable CGP chromosome stored as parallel arrays.

    ``functions[i]`` indexes ``config.function_set``; ``connections[i, j]`` and
    ``weights[i, j]`` are the j-th input of node i; ``outputs[o]`` is the
    address read by output o.
    """

    config: CgpConfig
    functions: np.ndarray
    connections: np.ndarray
    weights: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "functions", _frozen(self.functions, np.int64))
        object.__setattr__(self, "connections", _frozen(self.connections, np.int64))
        object.__setattr__(self, "weights", _frozen(self.weights, np.float64))
        object.__setattr__(self, "outputs", _frozen(self.outputs, np.int64))

    @property
    def nodes(self) -> list[NodeGene]:
        return [self.node(i) for i in range(self.config.num_nodes)]

    def node(self, i: int) -> NodeGene:
        return NodeGene(
            int(self.functions[i]),
            tuple(int(c) for c in self.connections[i]),
            tuple(float(w) for w in self.weights[i]),
        )

    def __eq__(self, other):
        if not isinstance(other, Genotype):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.functions, other.functions)
            and np.array_equal(self.connections, other.connections)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.outputs, other.outputs)
        )

    __hash__ = None

    @classmethod
    def _adopt(cls, config, functions, connections, weights, outputs) -> "Genotype":
        # takes ownership of freshly built arrays instead of copying them
        g = object.__new__(cls)
        object.__setattr__(g, "config", config)
        for name, a in (("functions", functions), ("connections", connections),
                        ("weights", weights), ("outputs", outputs)):
            a.flags.writeable = False
            object.__setattr__(g, name, a)
        return g

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is broken."""
        cfg = self.config
        n, a = cfg.num_nodes, cfg.arity
        if self.functions.shape != (n,) or self.connections.shape != (n, a):
            raise ValueError("node arrays do not match config")
        if self.weights.shape != (n, a) or self.outputs.shape != (cfg.num_outputs,):
            raise ValueError("weight/output arrays do not match config")
        if self.functions.min() < 0 or self.functions.max() >= len(cfg.function_set):
            raise ValueError("function gene out of range")
        limits = cfg.num_inputs + np.arange(n)[:, None]
        if (self.connections < 0).any() or (self.connections >= limits).any():
            raise ValueError("connection gene violates feed-forward ordering")
        lo, hi = cfg.weight_range
        if (self.weights < lo).any() or (self.weights > hi).any():
            raise ValueError("weight outside weight_range")
        if (self.outputs < 0).any() or (self.outputs >= cfg.num_addresses).any():
            raise ValueError("output gene out of range")

    def flat_genes(self) -> np.ndarray:
        """All genes as one float vector, node by node, outputs last."""
        per_node = np.hstack(
            [self.functions[:, None].astype(float), self.connections.astype(float), self.weights]
        )
        return np.concatenate([per_node.ravel(), self.outputs.astype(float)])

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "functions": self.functions.tolist(),
            "connections": self.connections.tolist(),
            "weights": self.weights.tolist(),
            "outputs": self.outputs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        cfg = CgpConfig.from_dict(d["config"])
        g = cls(
            cfg,
            np.array(d["functions"], dtype=np.int64),
            np.array(d["connections"], dtype=np.int64).reshape(cfg.num_nodes, cfg.arity),
            np.array(d["weights"], dtype=np.float64).reshape(cfg.num_nodes, cfg.arity),
            np.array(d["outputs"], dtype=np.int64),
        )
        g.validate()
        return g

    def to_json(self) -> str:
        # json writes floats via repr, which round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Genotype":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class ActiveNetwork:
    """The output-reachable part of a genotype, ready to evaluate.

    ``nodes`` holds active node indices in ascending (topological) order.
    ``functions`` are global transfer-function codes (see ``FUNCTIONS``),
    already resolved through the genotype's function set.
    """

    num_inputs: int
    num_addresses: int
    nodes: np.ndarray
    functions: np.ndarray
    connections: np.ndarray
    weights: np.ndarray
    outputs: np.ndarray
    _kernel_args: tuple = field(init=False, repr=False)

    def __post_init__(self):
        for name, dt in (("nodes", np.int64), ("functions", np.int64),
                         ("connections", np.int64), ("weights", np.float64),
                         ("outputs", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        object.__setattr__(self, "_kernel_args", (
            self.nodes, self.functions, self.connections, self.weights,
            self.outputs, self.num_inputs, self.num_addresses,
        ))

    @property
    def num_outputs(self) -> int:
        return len(self.outputs)

    def __eq__(self, other):
        if not isinstance(other, ActiveNetwork):
            return NotImplemented
        return (
            self.num_inputs == other.num_inputs
            and self.num_addresses == other.num_addresses
            and all(np.array_equal(a, b) for a, b in zip(self._kernel_args[:5], other._kernel_args[:5]))
        )

    __hash__ = None


def random_genotype(config: CgpConfig, rng: np.random.Generator) -> Genotype:
    n, a = config.num_nodes, config.arity
    lo, hi = config.weight_range
    functions = rng.integers(0, len(config.function_set), size=n)
    limits = np.repeat(config.num_inputs + np.arange(n), a).reshape(n, a)
    connections = rng.integers(0, limits)
    weights = rng.uniform(lo, hi, size=(n, a))
    outputs = rng.integers(0, config.num_addresses, size=config.num_outputs)
    return Genotype._adopt(config, functions, connections, weights, outputs)


@njit(cache=True)
def _active_mask(connections, outputs, num_inputs):
    n = connections.shape[0]
    active = np.zeros(n, dtype=np.bool_)
    for o in outputs:
        if o >= num_inputs:
            active[o - num_inputs] = True
    for i in range(n - 1, -1, -1):
        if active[i]:
            for c in connections[i]:
                if c >= num_inputs:
                    active[c - num_inputs] = True
    return active


def active_mask(g: Genotype) -> np.ndarray:
    return _active_mask(g.connections, g.outputs, g.config.num_inputs)


def decode_active(g: Genotype) -> ActiveNetwork:
    nodes = np.flatnonzero(active_mask(g))
    codes = g.config.function_codes
    return ActiveNetwork(
        num_inputs=g.config.num_inputs,
        num_addresses=g.config.num_addresses,
        nodes=nodes,
        functions=codes[g.functions[nodes]],
        connections=g.connections[nodes],
        weights=g.weights[nodes],
        outputs=g.outputs,
    )


def decode_full(g: Genotype) -> ActiveNetwork:
    """Like ``decode_active`` but keeps passive nodes; evaluates identically."""
    return ActiveNetwork(
        num_inputs=g.config.num_inputs,
        num_addresses=g.config.num_addresses,
        nodes=np.arange(g.config.num_nodes),
        functions=g.config.function_codes[g.functions],
        connections=g.connections,
        weights=g.weights,
        outputs=g.outputs,
    )


@njit(cache=True)
def evaluate_batch(nodes, functions, connections, weights, outputs,
                   num_inputs, num_addresses, states):
    """Evaluate a network on every row of ``states``; returns (rows, outputs).

    Per-node sums run over connections in gene order, so the result for a
    state never depends on how many other states share the batch.
    """
    n_states = states.shape[0]
    values = np.empty((num_addresses, n_states))
    for i in range(num_inputs):
        for s in range(n_states):
            values[i, s] = states[s, i]
    arity = connections.shape[1]
    for k in range(nodes.shape[0]):
        acc = values[num_inputs + nodes[k]]
        acc[:] = 0.0
        for j in range(arity):
            w = weights[k, j]
            src = values[connections[k, j]]
            for s in range(n_states):
                acc[s] += w * src[s]
        code = functions[k]
        if code == 0:
            for s in range(n_states):
                acc[s] = math.tanh(acc[s])
        elif code == 1:
            for s in range(n_states):
                acc[s] = acc[s] / (1.0 + abs(acc[s]))
        elif code == 2:
            for s in range(n_states):
                acc[s] = 1.0 if acc[s] > 0.0 else 0.0
        elif code == 3:
            for s in range(n_states):
                acc[s] = 1.0 / (1.0 + math.exp(-acc[s]))
        else:
            for s in range(n_states):
                acc[s] = math.exp(-acc[s] * acc[s])
    out = np.empty((n_states, outputs.shape[0]))
    for o in range(outputs.shape[0]):
        src = values[outputs[o]]
        for s in range(n_states):
            out[s, o] = src[s]
    return out


def forward(net: ActiveNetwork, state) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (net.num_inputs,):
        raise ValueError(f"expected state of length {net.num_inputs}, got shape {state.shape}")
    if not np.isfinite(state).all():
        raise ValueError("non-finite network input; state normalisation is corrupt")
    return evaluate_batch(*net._kernel_args, state[None, :])[0]


def forward_many(net: ActiveNetwork, states) -> np.ndarray:
    states = np.ascontiguousarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != net.num_inputs:
        raise ValueError(f"expected states of shape (n, {net.num_inputs}), got {states.shape}")
    if not np.isfinite(states).all():
        raise ValueError("non-finite network input; state normalisation is corrupt")
    return evaluate_batch(*net._kernel_args, states)


def select_action(outputs: np.ndarray) -> int:
    # argmax returns the lowest index among ties
    return int(np.argmax(outputs))


def mutate_random(g: Genotype, rate: float, rng: np.random.Generator) -> Genotype:
    """Resample every gene independently with probability ``rate``."""
    if not 0.0 < rate <= 1.0:
        raise ValueError("mutation rate must lie in (0, 1]")
    cfg = g.config
    n, a = cfg.num_nodes, cfg.arity
    lo, hi = cfg.weight_range

    functions = g.functions.copy()
    hit = rng.random(n) < rate
    functions[hit] = rng.integers(0, len(cfg.function_set), size=hit.sum())

    connections = g.connections.copy()
    hit = rng.random((n, a)) < rate
    rows = np.nonzero(hit)[0]
    connections[hit] = rng.integers(0, cfg.num_inputs + rows)

    weights = g.weights.copy()
    hit = rng.random((n, a)) < rate
    weights[hit] = rng.uniform(lo, hi, size=hit.sum())

    outputs = g.outputs.copy()
    hit = rng.random(cfg.num_outputs) < rate
    outputs[hit] = rng.integers(0, cfg.num_addresses, size=hit.sum())

    return Genotype._adopt(cfg, functions, connections, weights, outputs)


def mutate_single_active(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Mutate uniformly chosen genes until one active gene changes value.

    Activity is judged on the parent. Output genes always count as active,
    which guarantees termination even when no node is active.
    """
    cfg = g.config
    n, a = cfg.num_nodes, cfg.arity
    per_node = cfg.genes_per_node
    lo, hi = cfg.weight_range
    active = active_mask(g)

    functions = g.functions.copy()
    connections = g.connections.copy()
    weights = g.weights.copy()
    outputs = g.outputs.copy()

    while True:
        gene = int(rng.integers(cfg.num_genes))
        if gene >= n * per_node:
            o = gene - n * per_node
            old = outputs[o]
            outputs[o] = rng.integers(cfg.num_addresses)
            changed, is_active = outputs[o] != old, True
        else:
            node, slot = divmod(gene, per_node)
            is_active = active[node]
            if slot == 0:
                old = functions[node]
                functions[node] = rng.integers(len(cfg.function_set))
                changed = functions[node] != old
            elif slot <= a:
                old = connections[node, slot - 1]
                connections[node, slot - 1] = rng.integers(cfg.num_inputs + node)
                changed = connections[node, slot - 1] != old
            else:
                old = weights[node, slot - 1 - a]
                weights[node, slot - 1 - a] = rng.uniform(lo, hi)
                changed = weights[node, slot - 1 - a] != old
        if changed and is_active:
            break

    return Genotype._adopt(cfg, functions, connections, weights, outputs)


def genotype_from_nodes(config: CgpConfig, nodes: Sequence[NodeGene], outputs: Sequence[int]) -> Genotype:
    g = Genotype(
        config,
        np.array([nd.function for nd in nodes], dtype=np.int64),
        np.array([nd.connections for nd in nodes], dtype=np.int64).reshape(config.num_nodes, config.arity),
        np.array([nd.weights for nd in nodes], dtype=np.float64).reshape(config.num_nodes, config.arity),
        np.array(outputs, dtype=np.int64),
    )
    g.validate()
    return g
