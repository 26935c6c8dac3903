"""Command-line harness: ``run``, ``matrix``, ``compare`` and ``plot``."""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, parse_matrix
from .loop import default_run_dir, run_experiment
from .plots import FIGURES, find_runs, plot_figure, read_csv
from .stats import mann_whitney


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out) if args.out else default_run_dir(cfg)
    res = run_experiment(cfg, out)
    last = res.metrics[-1] if res.metrics else None
    print(f"{out}: {len(res.metrics)} generations, {res.total_evaluations} evaluations"
          + (f", best fitness {last.best_fitness:.4f}" if last else ""))
    return 0


def matrix_configs(spec, replicates: int, root: Path, master_seed: int | None = None):
    """(config, directory) pairs; replicate seeds are shared across variants for pairing."""
    master = spec.base.seed if master_seed is None else master_seed
    seeds = [int(s) for s in np.random.SeedSequence(master).generate_state(replicates)]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("replicate seeds collide")
    jobs = []
    for env in spec.environments:
        for budget, gens in spec.splits:
            for variant in spec.variants:
                for rep, seed in enumerate(seeds):
                    cfg = spec.base.replace(environment=env, per_body_budget=budget, generations=gens,
                                            use_archive=variant == "MELAI", seed=seed, replicate=rep,
                                            parallel=False)
                    jobs.append((cfg, root / env / f"{budget}x{gens}" / variant / f"rep_{rep:02d}"))
    return jobs


def _run_job(job):
    cfg, out = job
    run_experiment(cfg, out)
    return str(out)


def cmd_matrix(args) -> int:
    spec = parse_matrix(Path(args.config).read_text())
    jobs = matrix_configs(spec, args.replicates, Path(args.out), args.seed)
    existing = [str(o) for _, o in jobs if (o / "generations.csv").exists()]
    if existing:
        print(f"skipping {len(existing)} completed run(s)", file=sys.stderr)
    jobs = [j for j in jobs if not (j[1] / "generations.csv").exists()]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            for done in pool.map(_run_job, jobs):
                print(done)
    else:
        for job in jobs:
            print(_run_job(job))
    return 0


def final_values(path, metric: str) -> np.ndarray:
    vals = []
    for run in find_runs(path):
        data = read_csv(run / "generations.csv")
        if metric not in data:
            raise ConfigError(f"metric {metric!r} not in {run / 'generations.csv'}")
        vals.append(data[metric][-1])
    return np.array(vals, dtype=float)


def cmd_compare(args) -> int:
    a, b = final_values(args.a, args.metric), final_values(args.b, args.metric)
    if a.size == 0 or b.size == 0:
        raise ConfigError("both sides need at least one run directory with generations.csv")
    if a.size != b.size:
        warnings.warn(f"replicate counts differ ({a.size} vs {b.size}); testing the available samples")
    res = mann_whitney(a, b)
    print(f"metric {args.metric} at final generation")
    print(f"  A {args.a}: n={a.size} median={res.median_a:.6g}")
    print(f"  B {args.b}: n={b.size} median={res.median_b:.6g}")
    print(f"  median difference (A-B) {res.median_a - res.median_b:.6g}")
    print(f"  Mann-Whitney U={res.u:g} p={res.p_value:.4g} ({res.method})")
    return 0


def cmd_plot(args) -> int:
    groups = {Path(d).name or str(d): find_runs(d) for d in args.dirs}
    if not any(groups.values()):
        raise ConfigError("no run directories found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.figure}.svg"
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; pass --force to replace it")
    plot_figure(groups, args.figure, path)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="melai", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="run directory (must not exist or be empty)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", help="variants x environments x splits x replicates")
    m.add_argument("--config", required=True)
    m.add_argument("--replicates", type=int, default=10)
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--seed", type=int, help="master seed (default: [run] seed)")
    m.add_argument("--out", default="runs")
    m.set_defaults(func=cmd_matrix)

    c = sub.add_parser("compare", help="Mann-Whitney U test on a final-generation metric")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--metric", required=True)
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render a figure from one or more run groups")
    pl.add_argument("dirs", nargs="+")
    pl.add_argument("--figure", required=True, choices=[*FIGURES, "organs"])
    pl.add_argument("--out", default="figures")
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileExistsError, FileNotFoundError, ValueError) as e:
        print(f"melai {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
