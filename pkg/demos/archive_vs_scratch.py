#!/usr/bin/env python3
"""A short MEL against MELAI comparison on the amphitheatre.

Both variants share the seed, so generation 0 starts from the same bodies.
With the archive, later learners of an already seen robot type start from
the stored controller.  Eight generations of twelve robots keep this to a
minute or two, and at that size the difference in initial task performance
and evaluations per generation is mostly noise; use ``melai matrix`` with
replicates for the real comparison.
"""

import sys
from pathlib import Path

from melai.config import RunConfig
from melai.cppn_neat import NeatParams
from melai.loop import run_experiment
from melai.plots import plot_figure

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_compare")
runs = {}
for variant, use_archive in (("MEL", False), ("MELAI", True)):
    cfg = RunConfig("amphitheatre", use_archive=use_archive, per_body_budget=200, generations=8, seed=5,
                    neat=NeatParams(population_size=12))
    runs[variant] = run_experiment(cfg, root / variant, plots=False)

print("gen   best F (MEL / MELAI)   best initial F (MEL / MELAI)   evaluations (MEL / MELAI)   archive")
for a, b in zip(runs["MEL"].metrics, runs["MELAI"].metrics):
    print(f"{a.generation:3d}   {a.best_fitness:.3f} / {b.best_fitness:.3f}          "
          f"{a.best_initial_tp:.3f} / {b.best_initial_tp:.3f}                  "
          f"{a.evaluations_this_gen:5d} / {b.evaluations_this_gen:5d}           {b.archive_count:3d}")

groups = {v: [r.directory] for v, r in runs.items()}
for fig in ("best_fitness", "initial_tp", "evaluations"):
    plot_figure(groups, fig, root / f"{fig}.svg")
print(f"curves in {root}/")
