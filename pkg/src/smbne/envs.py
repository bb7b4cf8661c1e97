"""Native CartPole-v1 and MountainCar-v0 dynamics and episode rollouts.

The physics follows the classic-control reference implementations step for
step (same constants, same Euler update order), so trajectories match the
published environments bit for bit given the same initial state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cgp import ActiveNetwork, evaluate_batch

CARTPOLE = "CartPole"
MOUNTAINCAR = "MountainCar"

# CartPole constants
GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_POLE + MASS_CART
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4
CARTPOLE_SCALE = np.array([4.8, 10.0, 0.418, 10.0])

# MountainCar constants
MC_MIN_POSITION = -1.2
MC_MAX_POSITION = 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_POSITION = 0.5
MC_FORCE = 0.001
MC_GRAVITY = 0.0025

MAX_STEPS = 200
SOLVE_TRIALS = 100


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_count: int
    max_steps: int
    normalization_bounds: tuple[tuple[float, float], ...]
    solve_threshold: float

    def solved(self, mean_reward: float) -> bool:
        if self.name == CARTPOLE:
            return mean_reward >= self.solve_threshold
        return mean_reward > self.solve_threshold


CARTPOLE_SPEC = EnvSpec(
    CARTPOLE, 4, 2, MAX_STEPS,
    tuple((-s, s) for s in CARTPOLE_SCALE.tolist()),
    195.0,
)
MOUNTAINCAR_SPEC = EnvSpec(
    MOUNTAINCAR, 2, 3, MAX_STEPS,
    ((MC_MIN_POSITION, MC_MAX_POSITION), (-MC_MAX_SPEED, MC_MAX_SPEED)),
    -110.0,
)

_SPECS = {CARTPOLE: CARTPOLE_SPEC, MOUNTAINCAR: MOUNTAINCAR_SPEC}
_ALIASES = {"cartpole": CARTPOLE, "cartpole-v1": CARTPOLE,
            "mountaincar": MOUNTAINCAR, "mountaincar-v0": MOUNTAINCAR}


def get_spec(name: str) -> EnvSpec:
    key = _ALIASES.get(name.lower(), name)
    try:
        return _SPECS[key]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}") from None


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    total_reward: float
    fitness: float
    steps: int
    trace: np.ndarray      # (steps, obs_dim) normalised observations fed to the network
    raw_states: np.ndarray  # (steps + 1, obs_dim) physical states incl. the final one
    actions: np.ndarray
    rewards: np.ndarray
    solved_flag: bool


# -- physics ---------------------------------------------------------------

@njit(cache=True)
def _cartpole_step(x, x_dot, theta, theta_dot, action):
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot ** 2 * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costheta ** 2 / TOTAL_MASS)
    )
    xacc = temp - POLEMASS_LENGTH * thetaacc * costheta / TOTAL_MASS
    x = x + TAU * x_dot
    x_dot = x_dot + TAU * xacc
    theta = theta + TAU * theta_dot
    theta_dot = theta_dot + TAU * thetaacc
    terminated = x < -X_LIMIT or x > X_LIMIT or theta < -THETA_LIMIT or theta > THETA_LIMIT
    return x, x_dot, theta, theta_dot, terminated


@njit(cache=True)
def _mountaincar_step(position, velocity, action):
    velocity += (action - 1) * MC_FORCE + math.cos(3 * position) * (-MC_GRAVITY)
    velocity = min(max(velocity, -MC_MAX_SPEED), MC_MAX_SPEED)
    position += velocity
    position = min(max(position, MC_MIN_POSITION), MC_MAX_POSITION)
    if position == MC_MIN_POSITION and velocity < 0:
        velocity = 0.0
    terminated = position >= MC_GOAL_POSITION and velocity >= 0.0
    return position, velocity, terminated


@njit(cache=True)
def _normalize(env_id, state, out):
    if env_id == 0:
        for i in range(4):
            v = state[i] / CARTPOLE_SCALE[i]
            out[i] = min(max(v, -1.0), 1.0)
    else:
        p = 2.0 * (state[0] - MC_MIN_POSITION) / (MC_MAX_POSITION - MC_MIN_POSITION) - 1.0
        out[0] = min(max(p, -1.0), 1.0)
        out[1] = min(max(state[1] / MC_MAX_SPEED, -1.0), 1.0)


@njit(cache=True)
def _step(env_id, state, action):
    """Advance ``state`` in place; returns the terminated flag."""
    if env_id == 0:
        x, x_dot, theta, theta_dot, done = _cartpole_step(state[0], state[1], state[2], state[3], action)
        state[0] = x
        state[1] = x_dot
        state[2] = theta
        state[3] = theta_dot
    else:
        p, v, done = _mountaincar_step(state[0], state[1], action)
        state[0] = p
        state[1] = v
    return done


@njit(cache=True)
def _rollout(env_id, init, max_steps, nodes, functions, connections, weights,
             outputs, num_inputs, num_addresses):
    dim = init.shape[0]
    trace = np.empty((max_steps, dim))
    raw = np.empty((max_steps + 1, dim))
    actions = np.empty(max_steps, dtype=np.int64)
    state = init.copy()
    obs = np.empty((1, dim))
    raw[0] = state
    steps = 0
    while steps < max_steps:
        _normalize(env_id, state, obs[0])
        trace[steps] = obs[0]
        out = evaluate_batch(nodes, functions, connections, weights, outputs,
                             num_inputs, num_addresses, obs)[0]
        # lowest index wins ties
        a = 0
        for i in range(1, out.shape[0]):
            if out[i] > out[a]:
                a = i
        actions[steps] = a
        done = _step(env_id, state, a)
        steps += 1
        raw[steps] = state
        if done:
            break
    return trace[:steps], raw[:steps + 1], actions[:steps], steps


def _env_id(spec: EnvSpec) -> int:
    return 0 if spec.name == CARTPOLE else 1


# -- public API ------------------------------------------------------------

def reset(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.name == CARTPOLE:
        return rng.uniform(-0.05, 0.05, size=4)
    return np.array([rng.uniform(-0.6, -0.4), 0.0])


def step(spec: EnvSpec, state, action: int) -> tuple[np.ndarray, float, bool]:
    if not 0 <= action < spec.action_count:
        raise ValueError(f"invalid action {action} for {spec.name}")
    s = np.array(state, dtype=np.float64)
    done = _step(_env_id(spec), s, int(action))
    reward = 1.0 if spec.name == CARTPOLE else -1.0
    return s, reward, bool(done)


def normalize(spec: EnvSpec, state) -> np.ndarray:
    out = np.empty(spec.obs_dim)
    _normalize(_env_id(spec), np.asarray(state, dtype=np.float64), out)
    return out


def height(position):
    return np.sin(3 * np.asarray(position)) * 0.45 + 0.55


def fitness_for(spec: EnvSpec, total_reward: float, raw_states) -> float:
    """Minimisation fitness of one episode.

    CartPole uses the negated reward. MountainCar mixes the best height the
    car reached with the reward: ``-(max_height + reward / 100)``.
    ``raw_states`` are the physical states visited, final state included.
    """
    raw_states = np.asarray(raw_states)
    if raw_states.size == 0:
        raise ValueError("empty state trace")
    if spec.name == CARTPOLE:
        return -float(total_reward)
    max_height = float(np.max(height(raw_states[:, 0])))
    return -(max_height + total_reward / 100.0)


def _check_net(spec: EnvSpec, net: ActiveNetwork):
    if net.num_inputs != spec.obs_dim or net.num_outputs != spec.action_count:
        raise ValueError(
            f"network has {net.num_inputs} inputs/{net.num_outputs} outputs, "
            f"{spec.name} needs {spec.obs_dim}/{spec.action_count}"
        )


def run_from(spec: EnvSpec, net: ActiveNetwork, init) -> EpisodeResult:
    """Roll out one episode from a given physical initial state."""
    _check_net(spec, net)
    init = np.asarray(init, dtype=np.float64)
    if not np.isfinite(init).all():
        raise ValueError("non-finite initial state")
    trace, raw, actions, steps = _rollout(_env_id(spec), init, spec.max_steps, *net._kernel_args)
    per_step = 1.0 if spec.name == CARTPOLE else -1.0
    total = per_step * steps
    return EpisodeResult(
        total_reward=total,
        fitness=fitness_for(spec, total, raw),
        steps=steps,
        trace=trace,
        raw_states=raw,
        actions=actions,
        rewards=np.full(steps, per_step),
        solved_flag=spec.solved(total),
    )


def run_episode(spec: EnvSpec, net: ActiveNetwork, rng: np.random.Generator) -> EpisodeResult:
    return run_from(spec, net, reset(spec, rng))


def solve_trial_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x5017ED, tag]))


def solved_check(spec: EnvSpec, net: ActiveNetwork, rng: np.random.Generator,
                 trials: int = SOLVE_TRIALS) -> bool:
    """Mean reward over ``trials`` fresh episodes meets the solve threshold."""
    _check_net(spec, net)
    env_id = _env_id(spec)
    per_step = 1.0 if spec.name == CARTPOLE else -1.0
    # best reward any remaining trial could still add
    best_case = spec.max_steps if spec.name == CARTPOLE else -1.0
    total = 0.0
    for done in range(1, trials + 1):
        init = reset(spec, rng)
        _, _, _, steps = _rollout(env_id, init, spec.max_steps, *net._kernel_args)
        total += per_step * steps
        if not spec.solved((total + (trials - done) * best_case) / trials):
            return False
    return spec.solved(total / trials)


def write_trace_csv(path, spec: EnvSpec, result: EpisodeResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"obs_{i + 1}" for i in range(spec.obs_dim)] + ["action", "reward"])
        for t in range(result.steps):
            w.writerow([t] + [repr(float(v)) for v in result.trace[t]]
                       + [int(result.actions[t]), repr(float(result.rewards[t]))])
