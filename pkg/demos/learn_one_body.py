#!/usr/bin/env python3
"""Learn a controller for one body in the hard race, then reuse it.

First the learner starts from a random controller.  Then the controller it
found is handed back as a seed for the same body, the way the archive does
for a later robot of the same type: the first population already contains
it, so learning usually stops after one iteration.
"""

import sys
from pathlib import Path

import numpy as np

from melai.arena import evaluate, load_environment, render_svg
from melai.cppn_neat import NeatParams, create_population
from melai.morphogen import DegenerateBodyError, build_body
from melai.nipes import learn

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_learning")
out.mkdir(exist_ok=True)
env = load_environment("hard_race")

# pick the first wheeled body of a random population
rng = np.random.default_rng(3)
plan = None
while plan is None:
    for g in create_population(NeatParams(), rng).genomes:
        try:
            p = build_body(g)
        except DegenerateBodyError:
            continue
        if p.type.num_wheels >= 2:
            plan = p
            break
print("robot type", tuple(plan.type))

scratch = learn(plan, None, 1000, env, np.random.default_rng(1))
print(f"from scratch: f0 {scratch.f0:.3f} -> f* {scratch.f_star:.3f} after {scratch.n_best} evaluations "
      f"({scratch.evaluations_used} used, {scratch.restarts} restarts, stop: {scratch.stop_reason})")
for row in scratch.log[::5]:
    print(f"  it {row['iteration']:3d}  lambda {row['lambda']:3d}  eta {row['eta']:.2f}  best r {row['best_r']:.3f}")

seeded = learn(plan, scratch.best_controller, 1000, env, np.random.default_rng(2))
print(f"seeded:       f0 {seeded.f0:.3f} -> f* {seeded.f_star:.3f} after {seeded.n_best} evaluations "
      f"(stop: {seeded.stop_reason})")

res = evaluate(plan, scratch.best_controller, env)
render_svg(env, out / "hard_race.svg", [res.trajectory])
print(f"trajectory drawn in {out}/hard_race.svg")
