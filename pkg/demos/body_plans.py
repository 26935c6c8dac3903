#!/usr/bin/env python3
"""Decode a handful of random CPPN genomes into body-plans.

A fresh NEAT population is mostly tiny fully connected CPPNs, yet the bodies
they decode already vary a lot.  Each one is summarised by its robot type,
the (sensors, wheels, joints) tuple the controller archive is keyed by.
"""

import sys
from collections import Counter
from pathlib import Path

import numpy as np

from melai.cppn_neat import NeatParams, create_population
from melai.morphogen import DegenerateBodyError, build_body, plan_to_svg, plan_to_text

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_bodies")
out.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
pop = create_population(NeatParams(population_size=40), rng)

types = Counter()
degenerate = 0
for i, genome in enumerate(pop.genomes):
    try:
        plan = build_body(genome)
    except DegenerateBodyError:
        degenerate += 1
        continue
    types[plan.type] += 1
    if i < 6:
        plan_to_svg(plan, out / f"body_{i}.svg")
        print(plan_to_text(plan).splitlines()[1])

print(f"\n{degenerate} degenerate bodies out of {len(pop.genomes)}")
print("most common robot types (sensors, wheels, joints):")
for t, n in types.most_common(5):
    print(f"  {tuple(t)}: {n}")
print(f"top-down drawings in {out}/")
