"""Command line entry point: ``smbne run|solve|stats|trace``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .cgp import Genotype, decode_active
from .envs import get_spec, run_episode, write_trace_csv


def _cmd_run(args) -> int:
    plan = harness.load_plan(args.plan)
    if args.repeats is not None:
        plan.repeats = args.repeats
    out = args.output or plan.output or "results"
    table = harness.run_plan(plan, workers=args.workers)
    harness.emit_results(table, out)
    for lab in table.labels:
        e = table.episodes(lab)
        print(f"{lab:<24} {table.mean(lab):9.2f} +- {table.sd(lab):8.2f}  "
              f"solved {int(table.solved(lab).sum())}/{len(e)}")
    stats = table.statistics() if len(table.labels) > 1 else None
    if stats:
        kw = stats["kruskal_wallis"]
        print(f"Kruskal-Wallis H={kw['H']:.3f} p={kw['p']:.3g}")
    print(f"results written to {out}")
    return 0


def _cmd_solve(args) -> int:
    cfg = harness.AlgorithmConfig(
        label=args.label or args.algorithm,
        algorithm=args.algorithm,
        budget=args.budget or (3020 if get_spec(args.env).name == "CartPole" else 5020),
        mutation_rate=args.mutation_rate,
        strategy=args.strategy,
        num_s=args.num_s,
        surrogate_evals=args.surrogate_evals,
        reference=args.reference,
    )
    res = harness.run_single(cfg, args.env, args.seed)
    status = "solved" if res.solved else "not solved"
    print(f"{cfg.label} seed {args.seed}: {status} after {res.episodes_to_solve} episodes "
          f"(best fitness {res.best_fitness[-1]:g})")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        d = res.to_dict()
        d["label"] = cfg.label
        (out / "run.json").write_text(json.dumps(d, sort_keys=True) + "\n")
        (out / "best_genotype.json").write_text(res.best_genotype.to_json() + "\n")
        print(f"run written to {out}")
    return 0


def _cmd_stats(args) -> int:
    table = harness.load_runs(args.directory)
    labels = args.labels or table.labels
    path = harness.write_stats(table, args.directory, labels)
    stats = json.loads(path.read_text())
    kw = stats["kruskal_wallis"]
    print(f"Kruskal-Wallis H={kw['H']:.3f} p={kw['p']:.3g}")
    p = np.array(stats["conover"])
    width = max(len(lab) for lab in labels)
    for i, lab in enumerate(labels):
        print(f"{lab:<{width}} " + " ".join(f"{v:8.3g}" for v in p[i]))
    return 0


def _cmd_trace(args) -> int:
    spec = get_spec(args.env)
    g = Genotype.from_json(Path(args.genotype).read_text())
    rng = np.random.default_rng(args.seed)
    res = run_episode(spec, decode_active(g), rng)
    write_trace_csv(args.output, spec, res)
    print(f"{res.steps} steps, reward {res.total_reward:g}, fitness {res.fitness:g} -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smbne", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment plan")
    r.add_argument("plan")
    r.add_argument("-o", "--output")
    r.add_argument("-j", "--workers", type=int)
    r.add_argument("--repeats", type=int, help="override the plan's repeat count")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("solve", help="run a single configuration once")
    s.add_argument("--env", default="CartPole")
    s.add_argument("--algorithm", choices=["smbne", "cgp", "rs"], default="smbne")
    s.add_argument("--label")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int)
    s.add_argument("--mutation-rate", type=float, default=0.05)
    s.add_argument("--strategy", choices=["pre", "init", "lhs", "dyn"], default="dyn")
    s.add_argument("--num-s", type=int, default=5)
    s.add_argument("--surrogate-evals", type=int, default=1000)
    s.add_argument("--reference", help="reference-trace CSV for the pre strategy")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_solve)

    st = sub.add_parser("stats", help="recompute statistics from stored results")
    st.add_argument("directory")
    st.add_argument("--labels", nargs="+")
    st.set_defaults(func=_cmd_stats)

    t = sub.add_parser("trace", help="export one episode of a stored genotype")
    t.add_argument("genotype")
    t.add_argument("--env", default="CartPole")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("-o", "--output", default="trace.csv")
    t.set_defaults(func=_cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
