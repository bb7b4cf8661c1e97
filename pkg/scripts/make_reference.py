"""Regenerate the reference traces used by the ``pre`` input strategy.

A model-free CGP run is repeated over seeds until one solves the task; the
solving network is then rolled out on fresh initial states and its traces
are written next to the package data.

    python scripts/make_reference.py CartPole
    python scripts/make_reference.py MountainCar
"""

import argparse
import json
from pathlib import Path

import numpy as np

from smbne.cgp import decode_active
from smbne.envs import get_spec, run_episode
from smbne.phd import write_reference_traces
from smbne.search import default_cgp_config, run_cgp_es

DATA = Path(__file__).resolve().parents[1] / "src" / "smbne" / "data"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("env")
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--rate", type=float, default=0.02)
    ap.add_argument("--max-seeds", type=int, default=20)
    args = ap.parse_args()

    spec = get_spec(args.env)
    cc = default_cgp_config(spec)
    budget = 3020 if spec.name == "CartPole" else 5020
    for seed in range(args.max_seeds):
        run = run_cgp_es(spec, cc, args.rate, budget, seed)
        print(f"seed {seed}: solved={run.solved} episodes={run.episodes_to_solve}")
        if run.solved:
            break
    else:
        raise SystemExit("no seed solved the task")

    net = decode_active(run.best_genotype)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E7E]))
    episodes = [run_episode(spec, net, rng) for _ in range(args.episodes)]
    name = spec.name.lower()
    write_reference_traces(DATA / f"pre_{name}.csv", [e.trace for e in episodes],
                           [e.fitness for e in episodes])
    meta = {"environment": spec.name, "seed": seed, "mutation_rate": args.rate,
            "episodes_to_solve": run.episodes_to_solve,
            "rewards": [e.total_reward for e in episodes],
            "genotype": run.best_genotype.to_dict()}
    (DATA / f"pre_{name}.json").write_text(json.dumps(meta, indent=1))


if __name__ == "__main__":
    main()
