"""NEAT evolution of CPPN genomes.

A CPPN here always has four inputs (x, y, z, distance to centre) and five
sigmoid outputs (skeleton, wheel, sensor, joint, caster).  Genomes are
immutable; mutation and crossover return new genomes.  Graphs are kept
feed-forward so a query is a single stateless pass.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

N_INPUTS = 4
N_OUTPUTS = 5
INPUT_IDS = tuple(range(N_INPUTS))
OUTPUT_IDS = tuple(range(N_INPUTS, N_INPUTS + N_OUTPUTS))
FIRST_HIDDEN_ID = N_INPUTS + N_OUTPUTS


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "sigmoid": _sigmoid,
    "sine": np.sin,
    "gaussian": lambda x: np.exp(-np.square(x)),
    "linear": lambda x: x,
    "absolute": np.abs,
}
HIDDEN_ACTIVATIONS = ("sigmoid", "sine", "gaussian", "linear", "absolute")


class StructuralError(ValueError):
    """Raised for genomes or plans whose structure is inconsistent."""


@dataclass(frozen=True)
class NodeGene:
    id: int
    role: str  # "input" | "hidden" | "output"
    activation: str = "sigmoid"
    bias: float = 0.0


@dataclass(frozen=True)
class ConnectionGene:
    innovation: int
    source: int
    target: int
    weight: float
    enabled: bool = True


@dataclass(frozen=True)
class CppnGenome:
    nodes: tuple[NodeGene, ...]
    connections: tuple[ConnectionGene, ...]
    fitness: float | None = field(default=None, compare=False)

    @cached_property
    def node_map(self) -> dict[int, NodeGene]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def eval_order(self) -> list[int]:
        """Non-input node ids in topological order of the enabled graph."""
        self.validate()
        incoming = {n.id: [] for n in self.nodes}
        for c in self.connections:
            if c.enabled:
                incoming[c.target].append(c.source)
        order, done = [], set(INPUT_IDS)
        pending = [n.id for n in self.nodes if n.role != "input"]
        while pending:
            ready = [i for i in pending if all(s in done for s in incoming[i])]
            if not ready:
                raise StructuralError("cycle in CPPN graph")
            for i in ready:
                order.append(i)
                done.add(i)
            pending = [i for i in pending if i not in done]
        return order

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise StructuralError("duplicate node ids")
        roles = {n.id: n.role for n in self.nodes}
        if tuple(i for i in ids if roles[i] == "input") != INPUT_IDS:
            raise StructuralError(f"expected input nodes {INPUT_IDS}")
        if tuple(i for i in ids if roles[i] == "output") != OUTPUT_IDS:
            raise StructuralError(f"expected output nodes {OUTPUT_IDS}")
        innovations = [c.innovation for c in self.connections]
        if len(set(innovations)) != len(innovations):
            raise StructuralError("duplicate innovation ids")
        for n in self.nodes:
            if n.activation not in ACTIVATIONS:
                raise StructuralError(f"unknown activation {n.activation!r}")
            if not math.isfinite(n.bias):
                raise StructuralError(f"non-finite bias on node {n.id}")
        for c in self.connections:
            if c.source not in roles or c.target not in roles:
                raise StructuralError(f"dangling connection {c.innovation}")
            if roles[c.target] == "input" or roles[c.source] == "output":
                raise StructuralError(f"connection {c.innovation} has wrong direction")
            if not math.isfinite(c.weight):
                raise StructuralError(f"non-finite weight on connection {c.innovation}")

    def max_node_id(self) -> int:
        return max(n.id for n in self.nodes)

    def max_innovation(self) -> int:
        return max((c.innovation for c in self.connections), default=-1)


def query_batch(genome: CppnGenome, points: np.ndarray) -> np.ndarray:
    """Evaluate the CPPN on an (N, 4) array of inputs, returning (N, 5)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != N_INPUTS:
        raise ValueError(f"CPPN takes {N_INPUTS} inputs, got {points.shape[1]}")
    values = {i: points[:, i] for i in INPUT_IDS}
    incoming: dict[int, list[ConnectionGene]] = {}
    for c in genome.connections:
        if c.enabled:
            incoming.setdefault(c.target, []).append(c)
    nodes = genome.node_map
    for nid in genome.eval_order:
        total = np.full(points.shape[0], nodes[nid].bias)
        for c in incoming.get(nid, ()):
            total = total + c.weight * values[c.source]
        values[nid] = ACTIVATIONS[nodes[nid].activation](total)
    return np.stack([values[i] for i in OUTPUT_IDS], axis=1)


def query_cppn(genome: CppnGenome, x: float, y: float, z: float, d: float) -> np.ndarray:
    return query_batch(genome, np.array([[x, y, z, d]]))[0]


# ---------------------------------------------------------------------------
# parameters and innovation bookkeeping


@dataclass
class NeatParams:
    population_size: int = 20
    add_node_rate: float = 0.03
    add_connection_rate: float = 0.1
    weight_perturb_rate: float = 0.8
    weight_replace_rate: float = 0.1
    weight_perturb_scale: float = 0.5
    weight_init_std: float = 1.0
    weight_max: float = 8.0
    compatibility_excess: float = 1.0
    compatibility_disjoint: float = 1.0
    compatibility_weight: float = 0.4
    compatibility_threshold: float = 3.0
    elitism: int = 1
    crossover_prob: float = 0.75
    survival_threshold: float = 0.5
    stagnation_limit: int = 15
    add_connection_attempts: int = 20

    def __post_init__(self):
        for name in ("add_node_rate", "add_connection_rate", "weight_perturb_rate",
                     "weight_replace_rate", "crossover_prob", "survival_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.weight_perturb_rate + self.weight_replace_rate > 1.0:
            raise ValueError("weight_perturb_rate + weight_replace_rate must not exceed 1")
        if self.elitism >= self.population_size:
            raise ValueError("elitism must be smaller than the population")


class InnovationTracker:
    """Hands out innovation numbers and hidden node ids.

    Structural events are cached per generation so the same split or the
    same new link made twice in one generation gets the same ids.
    """

    def __init__(self, next_innovation: int = 0, next_node_id: int = FIRST_HIDDEN_ID):
        self.next_innovation = next_innovation
        self.next_node_id = next_node_id
        self._links: dict[tuple[int, int], int] = {}
        self._splits: dict[int, tuple[int, int, int]] = {}

    @classmethod
    def for_genome(cls, genome: CppnGenome) -> "InnovationTracker":
        return cls(genome.max_innovation() + 1, max(genome.max_node_id() + 1, FIRST_HIDDEN_ID))

    def new_generation(self) -> None:
        self._links.clear()
        self._splits.clear()

    def link(self, source: int, target: int) -> int:
        key = (source, target)
        if key not in self._links:
            self._links[key] = self.next_innovation
            self.next_innovation += 1
        return self._links[key]

    def split(self, innovation: int) -> tuple[int, int, int]:
        """Return (node id, innovation in, innovation out) for splitting a link."""
        if innovation not in self._splits:
            self._splits[innovation] = (self.next_node_id, self.next_innovation, self.next_innovation + 1)
            self.next_node_id += 1
            self.next_innovation += 2
        return self._splits[innovation]


def minimal_genome(rng: np.random.Generator, params: NeatParams, tracker: InnovationTracker) -> CppnGenome:
    """Fully connected input->output genome with random weights and biases."""
    nodes = [NodeGene(i, "input", "linear") for i in INPUT_IDS]
    nodes += [NodeGene(o, "output", "sigmoid", float(rng.normal(0.0, params.weight_init_std)))
              for o in OUTPUT_IDS]
    conns = [ConnectionGene(tracker.link(i, o), i, o, float(rng.normal(0.0, params.weight_init_std)))
             for i in INPUT_IDS for o in OUTPUT_IDS]
    return CppnGenome(tuple(nodes), tuple(conns))


# ---------------------------------------------------------------------------
# variation


def _creates_cycle(connections, source: int, target: int) -> bool:
    if source == target:
        return True
    succ: dict[int, list[int]] = {}
    for c in connections:
        if c.enabled:
            succ.setdefault(c.source, []).append(c.target)
    stack, seen = [target], {target}
    while stack:
        n = stack.pop()
        if n == source:
            return True
        for m in succ.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return False


def mutate(genome: CppnGenome, params: NeatParams, rng: np.random.Generator,
           tracker: InnovationTracker | None = None) -> CppnGenome:
    if tracker is None:
        tracker = InnovationTracker.for_genome(genome)
    nodes = list(genome.nodes)
    conns = list(genome.connections)

    if conns and rng.random() < params.add_node_rate:
        enabled = [k for k, c in enumerate(conns) if c.enabled]
        if enabled:
            k = enabled[int(rng.integers(len(enabled)))]
            old = conns[k]
            node_id, innov_in, innov_out = tracker.split(old.innovation)
            if node_id not in {n.id for n in nodes}:
                act = HIDDEN_ACTIVATIONS[int(rng.integers(len(HIDDEN_ACTIVATIONS)))]
                conns[k] = dataclasses.replace(old, enabled=False)
                nodes.append(NodeGene(node_id, "hidden", act))
                conns.append(ConnectionGene(innov_in, old.source, node_id, 1.0))
                conns.append(ConnectionGene(innov_out, node_id, old.target, old.weight))

    if rng.random() < params.add_connection_rate:
        sources = [n.id for n in nodes if n.role != "output"]
        targets = [n.id for n in nodes if n.role != "input"]
        existing = {(c.source, c.target) for c in conns}
        for _ in range(params.add_connection_attempts):
            s = sources[int(rng.integers(len(sources)))]
            t = targets[int(rng.integers(len(targets)))]
            if (s, t) in existing or _creates_cycle(conns, s, t):
                continue
            w = float(rng.normal(0.0, params.weight_init_std))
            conns.append(ConnectionGene(tracker.link(s, t), s, t, w))
            break

    def new_value(w: float) -> float:
        u = rng.random()
        if u < params.weight_replace_rate:
            w = float(rng.normal(0.0, params.weight_init_std))
        elif u < params.weight_replace_rate + params.weight_perturb_rate:
            w = w + float(rng.normal(0.0, params.weight_perturb_scale))
        return float(np.clip(w, -params.weight_max, params.weight_max))

    if params.weight_perturb_rate > 0 or params.weight_replace_rate > 0:
        conns = [dataclasses.replace(c, weight=new_value(c.weight)) for c in conns]
        nodes = [n if n.role == "input" else dataclasses.replace(n, bias=new_value(n.bias))
                 for n in nodes]

    return CppnGenome(tuple(nodes), tuple(conns))


def crossover(fitter: CppnGenome, other: CppnGenome, rng: np.random.Generator) -> CppnGenome:
    """NEAT crossover; disjoint and excess genes come from ``fitter``."""
    other_conns = {c.innovation: c for c in other.connections}
    conns = []
    for c in fitter.connections:
        match = other_conns.get(c.innovation)
        if match is None:
            conns.append(c)
            continue
        weight = c.weight if rng.random() < 0.5 else match.weight
        enabled = c.enabled and match.enabled
        if c.enabled != match.enabled:
            enabled = rng.random() >= 0.75
        conns.append(dataclasses.replace(c, weight=weight, enabled=enabled))
    other_nodes = other.node_map
    nodes = []
    for n in fitter.nodes:
        m = other_nodes.get(n.id)
        if m is not None and n.role != "input" and rng.random() < 0.5:
            n = dataclasses.replace(n, bias=m.bias, activation=m.activation if n.role == "hidden" else n.activation)
        nodes.append(n)
    child = CppnGenome(tuple(nodes), tuple(conns))
    # re-enabling a link can close a cycle only if the parents disagree on structure
    try:
        child.eval_order
    except StructuralError:
        return fitter
    return child


def compatibility_distance(a: CppnGenome, b: CppnGenome, params: NeatParams) -> float:
    ca = {c.innovation: c for c in a.connections}
    cb = {c.innovation: c for c in b.connections}
    if not ca and not cb:
        return 0.0
    max_a = max(ca, default=-1)
    max_b = max(cb, default=-1)
    cutoff = min(max_a, max_b)
    matching = ca.keys() & cb.keys()
    unmatched = (ca.keys() | cb.keys()) - matching
    excess = sum(1 for i in unmatched if i > cutoff)
    disjoint = len(unmatched) - excess
    w_diff = float(np.mean([abs(ca[i].weight - cb[i].weight) for i in matching])) if matching else 0.0
    n = max(len(ca), len(cb))
    n = 1 if n < 20 else n
    return (params.compatibility_excess * excess / n + params.compatibility_disjoint * disjoint / n
            + params.compatibility_weight * w_diff)


# ---------------------------------------------------------------------------
# population


@dataclass
class Species:
    id: int
    representative: CppnGenome
    members: list[int]
    best_fitness: float = -math.inf
    last_improved: int = 0


@dataclass
class NeatPopulation:
    genomes: list[CppnGenome]
    species: list[Species]
    generation: int
    tracker: InnovationTracker
    next_species_id: int = 0

    @property
    def innovation_counter(self) -> int:
        return self.tracker.next_innovation

    def species_of(self, index: int) -> int:
        for s in self.species:
            if index in s.members:
                return s.id
        raise KeyError(index)


def speciate(genomes: list[CppnGenome], previous: list[Species], params: NeatParams,
             next_species_id: int) -> tuple[list[Species], int]:
    species = [Species(s.id, s.representative, [], s.best_fitness, s.last_improved) for s in previous]
    for i, g in enumerate(genomes):
        for s in species:
            if compatibility_distance(g, s.representative, params) < params.compatibility_threshold:
                s.members.append(i)
                break
        else:
            species.append(Species(next_species_id, g, [i]))
            next_species_id += 1
    return [s for s in species if s.members], next_species_id


def create_population(params: NeatParams, rng: np.random.Generator) -> NeatPopulation:
    tracker = InnovationTracker()
    genomes = [minimal_genome(rng, params, tracker) for _ in range(params.population_size)]
    species, next_id = speciate(genomes, [], params, 0)
    return NeatPopulation(genomes, species, 0, tracker, next_id)


def _allocate(shares: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``total`` proportional to ``shares``."""
    exact = shares / shares.sum() * total
    counts = np.floor(exact).astype(int)
    remainder = exact - counts
    # stable sort keeps species order on ties
    for k in np.argsort(-remainder, kind="stable")[: total - counts.sum()]:
        counts[k] += 1
    return counts


def next_generation(pop: NeatPopulation, fitnesses, params: NeatParams,
                    rng: np.random.Generator) -> NeatPopulation:
    fit = np.asarray(fitnesses, dtype=float)
    if fit.shape != (len(pop.genomes),):
        raise ValueError(f"expected {len(pop.genomes)} fitness values, got {fit.shape}")
    if np.all(np.isnan(fit)):
        raise ValueError("all fitness values are NaN")
    fit = np.where(np.isnan(fit), np.nanmin(fit), fit)
    evaluated = [dataclasses.replace(g, fitness=float(f)) for g, f in zip(pop.genomes, fit)]

    best_index = int(np.argmax(fit))
    species = []
    for s in pop.species:
        s_best = max(fit[i] for i in s.members)
        last = s.last_improved
        if s_best > s.best_fitness:
            last = pop.generation
        stagnant = pop.generation - last >= params.stagnation_limit
        if stagnant and best_index not in s.members:
            continue
        rep = evaluated[max(s.members, key=lambda i: (fit[i], -i))]
        species.append(Species(s.id, rep, list(s.members), max(s.best_fitness, s_best), last))

    n_children = params.population_size - params.elitism
    shares = np.array([sum(max(fit[i], 0.0) + 1e-9 for i in s.members) for s in species])
    counts = _allocate(shares, n_children)

    order = sorted(range(len(evaluated)), key=lambda i: (-fit[i], i))
    children = [evaluated[i] for i in order[: params.elitism]]

    pop.tracker.new_generation()
    for s, k in zip(species, counts):
        ranked = sorted(s.members, key=lambda i: (-fit[i], i))
        parents = ranked[: max(1, math.ceil(params.survival_threshold * len(ranked)))]
        for _ in range(int(k)):
            if len(parents) > 1 and rng.random() < params.crossover_prob:
                a, b = rng.choice(len(parents), size=2, replace=False)
                pa, pb = parents[int(a)], parents[int(b)]
                if (fit[pb], -pb) > (fit[pa], -pa):
                    pa, pb = pb, pa
                child = crossover(evaluated[pa], evaluated[pb], rng)
            else:
                child = evaluated[parents[int(rng.integers(len(parents)))]]
            children.append(dataclasses.replace(mutate(child, params, rng, pop.tracker), fitness=None))

    new_species, next_id = speciate(children, species, params, pop.next_species_id)
    return NeatPopulation(children, new_species, pop.generation + 1, pop.tracker, next_id)


# ---------------------------------------------------------------------------
# text serialization
#
#   cppn-genome 1
#   node <id> <role> <activation> <bias>
#   conn <innovation> <source> <target> <weight> <enabled 0|1>
#
# nodes first (file order preserved), then connections; floats use repr()


def genome_to_text(genome: CppnGenome) -> str:
    lines = ["cppn-genome 1"]
    lines += [f"node {n.id} {n.role} {n.activation} {n.bias!r}" for n in genome.nodes]
    lines += [f"conn {c.innovation} {c.source} {c.target} {c.weight!r} {int(c.enabled)}"
              for c in genome.connections]
    return "\n".join(lines) + "\n"


def genome_from_text(text: str) -> CppnGenome:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != ["cppn-genome", "1"]:
        raise StructuralError("missing 'cppn-genome 1' header")
    nodes, conns = [], []
    for parts in lines[1:]:
        if parts[0] == "node":
            nodes.append(NodeGene(int(parts[1]), parts[2], parts[3], float(parts[4])))
        elif parts[0] == "conn":
            conns.append(ConnectionGene(int(parts[1]), int(parts[2]), int(parts[3]),
                                        float(parts[4]), parts[5] == "1"))
        else:
            raise StructuralError(f"unknown record {parts[0]!r}")
    genome = CppnGenome(tuple(nodes), tuple(conns))
    genome.validate()
    return genome
