import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from melai.cppn_neat import (
    INPUT_IDS, OUTPUT_IDS, ConnectionGene, CppnGenome, InnovationTracker, NeatParams, NodeGene,
    StructuralError, _allocate, compatibility_distance, create_population, crossover, genome_from_text,
    genome_to_text, minimal_genome, mutate, next_generation, query_batch, query_cppn,
)

from conftest import constant_genome

NO_MUTATION = dict(add_node_rate=0.0, add_connection_rate=0.0, weight_perturb_rate=0.0, weight_replace_rate=0.0)


def random_genome(seed, steps=10):
    rng = np.random.default_rng(seed)
    p = NeatParams(add_node_rate=0.3, add_connection_rate=0.5)
    tr = InnovationTracker()
    g = minimal_genome(rng, p, tr)
    for _ in range(steps):
        g = mutate(g, p, rng, tr)
    return g


# -- queries ------------------------------------------------------------------

def test_zero_weight_network_outputs_sigmoid_of_zero():
    conns = [ConnectionGene(k, i, o, 0.0) for k, (i, o) in enumerate((i, o) for i in INPUT_IDS for o in OUTPUT_IDS)]
    g = constant_genome([0.0] * 5, conns=conns)
    for x in (-1.0, 0.3, 1.0):
        np.testing.assert_array_equal(query_cppn(g, x, -x, 0.5, 0.2), np.full(5, 0.5))


def test_query_is_deterministic():
    g = random_genome(1)
    a = query_cppn(g, 0.3, -0.1, 0.5, 0.34)
    b = query_cppn(g, 0.3, -0.1, 0.5, 0.34)
    np.testing.assert_array_equal(a, b)


@given(st.floats(-1, 1), st.floats(-5, 5))
def test_single_edge_linear_network_matches_hand_evaluation(x, w):
    g = constant_genome([0.0] * 5, activation="linear", conns=[ConnectionGene(0, 0, OUTPUT_IDS[0], w)])
    out = query_cppn(g, x, 0.2, -0.4, 0.7)
    assert out[0] == pytest.approx(x * w, abs=1e-12)
    np.testing.assert_array_equal(out[1:], 0.0)


def test_hidden_node_chain_matches_hand_evaluation():
    nodes = [NodeGene(i, "input", "linear") for i in INPUT_IDS]
    nodes += [NodeGene(o, "output", "sigmoid") for o in OUTPUT_IDS]
    nodes += [NodeGene(9, "hidden", "gaussian", 0.1), NodeGene(10, "hidden", "sine", -0.2)]
    conns = [ConnectionGene(0, 0, 9, 1.5), ConnectionGene(1, 9, 10, 2.0), ConnectionGene(2, 10, 4, -1.0),
             ConnectionGene(3, 1, 4, 0.5)]
    g = CppnGenome(tuple(nodes), tuple(conns))
    x, y = 0.4, -0.6
    h9 = np.exp(-(1.5 * x + 0.1) ** 2)
    h10 = np.sin(2.0 * h9 - 0.2)
    expected = 1 / (1 + np.exp(-(-h10 + 0.5 * y)))
    assert query_cppn(g, x, y, 0, 0)[0] == pytest.approx(expected, abs=1e-12)


def test_dangling_connection_is_structural_error():
    g = constant_genome([0.0] * 5, conns=[ConnectionGene(0, 0, 42, 1.0)])
    with pytest.raises(StructuralError):
        query_cppn(g, 0, 0, 0, 0)


def test_cycle_is_structural_error():
    nodes = [NodeGene(i, "input", "linear") for i in INPUT_IDS] + [NodeGene(o, "output") for o in OUTPUT_IDS]
    nodes += [NodeGene(9, "hidden"), NodeGene(10, "hidden")]
    conns = [ConnectionGene(0, 9, 10, 1.0), ConnectionGene(1, 10, 9, 1.0)]
    with pytest.raises(StructuralError):
        query_cppn(CppnGenome(tuple(nodes), tuple(conns)), 0, 0, 0, 0)


def test_batch_matches_pointwise_queries():
    g = random_genome(2)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 4))
    batch = query_batch(g, pts)
    for p, row in zip(pts, batch):
        np.testing.assert_allclose(query_cppn(g, *p), row, rtol=0, atol=1e-15)


# -- mutation -----------------------------------------------------------------

def test_zero_rates_return_identical_genome(rng):
    g = random_genome(3)
    assert mutate(g, NeatParams(**NO_MUTATION), rng) == g


def test_add_node_splits_the_only_connection(rng):
    g = constant_genome([0.0] * 5, conns=[ConnectionGene(0, 0, OUTPUT_IDS[0], 0.7)])
    p = NeatParams(**{**NO_MUTATION, "add_node_rate": 1.0})
    child = mutate(g, p, rng)
    old = [c for c in child.connections if c.innovation == 0]
    assert len(old) == 1 and not old[0].enabled
    hidden = [n for n in child.nodes if n.role == "hidden"]
    assert len(hidden) == 1
    h = hidden[0].id
    new = sorted((c for c in child.connections if c.innovation != 0), key=lambda c: c.innovation)
    assert [(c.source, c.target) for c in new] == [(0, h), (h, OUTPUT_IDS[0])]
    assert new[0].weight == 1.0 and new[1].weight == 0.7
    assert {c.innovation for c in new}.isdisjoint({0})


def test_weight_perturbation_scale():
    scale = 0.3
    p = NeatParams(**{**NO_MUTATION, "weight_perturb_rate": 1.0, "weight_perturb_scale": scale})
    g = constant_genome([0.0] * 5, conns=[ConnectionGene(0, 0, OUTPUT_IDS[0], 0.5)])
    rng = np.random.default_rng(7)
    deltas = np.array([mutate(g, p, rng).connections[0].weight - 0.5 for _ in range(1000)])
    assert np.all(deltas != 0.0)
    assert abs(deltas.mean()) < 4 * scale / np.sqrt(1000)
    assert deltas.std() == pytest.approx(scale, rel=0.1)


@given(st.integers(0, 10_000))
def test_mutation_and_crossover_keep_io_nodes(seed):
    rng = np.random.default_rng(seed)
    p = NeatParams(add_node_rate=0.5, add_connection_rate=0.5)
    tr = InnovationTracker()
    a, b = minimal_genome(rng, p, tr), minimal_genome(rng, p, tr)
    for _ in range(8):
        a, b = mutate(a, p, rng, tr), mutate(b, p, rng, tr)
        child = crossover(a, b, rng)
        for g in (a, b, child):
            g.validate()
            g.eval_order  # acyclic
            assert [n.id for n in g.nodes if n.role == "input"] == list(INPUT_IDS)
            assert [n.id for n in g.nodes if n.role == "output"] == list(OUTPUT_IDS)
            assert all(np.isfinite(c.weight) for c in g.connections)


def test_same_split_in_one_generation_shares_innovations(rng):
    tr = InnovationTracker()
    p = NeatParams(**{**NO_MUTATION, "add_node_rate": 1.0})
    g = constant_genome([0.0] * 5, conns=[ConnectionGene(tr.link(0, 4), 0, 4, 1.0)])
    a, b = mutate(g, p, rng, tr), mutate(g, p, rng, tr)
    key = lambda g: sorted((c.innovation, c.source, c.target) for c in g.connections)
    assert key(a) == key(b)
    tr.new_generation()
    c = mutate(g, p, rng, tr)
    assert key(c) != key(a)


def test_innovation_ids_unique_per_structural_event():
    pop = create_population(NeatParams(add_node_rate=0.5, add_connection_rate=0.5), np.random.default_rng(0))
    seen: dict[int, tuple[int, int]] = {}
    for gen in range(6):
        pop = next_generation(pop, np.arange(20) / 20.0, NeatParams(add_node_rate=0.5, add_connection_rate=0.5),
                              np.random.default_rng(gen))
        for g in pop.genomes:
            for c in g.connections:
                assert seen.setdefault(c.innovation, (c.source, c.target)) == (c.source, c.target)


def test_crossover_of_identical_parents_keeps_structure(rng):
    g = random_genome(5)
    child = crossover(g, g, rng)
    assert [c.innovation for c in child.connections] == [c.innovation for c in g.connections]


def test_compatibility_distance_of_self_is_zero():
    g = random_genome(6)
    assert compatibility_distance(g, g, NeatParams()) == 0.0


def test_params_validate_probabilities():
    with pytest.raises(ValueError):
        NeatParams(crossover_prob=1.5)
    with pytest.raises(ValueError):
        NeatParams(weight_perturb_rate=0.8, weight_replace_rate=0.3)


# -- populations --------------------------------------------------------------

def test_next_generation_size_elite_and_counter():
    p = NeatParams()
    pop = create_population(p, np.random.default_rng(1))
    fit = np.linspace(0.0, 0.5, 20)
    fit[3] = 0.9
    elite = pop.genomes[3]
    new = next_generation(pop, fit, p, np.random.default_rng(2))
    assert len(new.genomes) == 20
    assert new.generation == pop.generation + 1
    assert new.genomes[0] == elite
    assert genome_to_text(new.genomes[0]) == genome_to_text(elite)
    members = sorted(i for s in new.species for i in s.members)
    assert members == list(range(20))


def test_all_nan_fitness_raises():
    p = NeatParams()
    pop = create_population(p, np.random.default_rng(1))
    with pytest.raises(ValueError):
        next_generation(pop, [np.nan] * 20, p, np.random.default_rng(2))


def test_uniform_fitness_allocates_by_species_size():
    sizes = np.array([9, 6, 3, 1], dtype=float)
    counts = _allocate(sizes, 19)
    assert counts.sum() == 19
    np.testing.assert_allclose(counts, sizes / sizes.sum() * 19, atol=1)
    assert np.all(counts >= 1)


def test_population_step_is_deterministic():
    p = NeatParams()

    def trajectory():
        rng = np.random.default_rng(11)
        pop = create_population(p, rng)
        for g in range(4):
            pop = next_generation(pop, rng.uniform(size=20), p, rng)
        return [genome_to_text(g) for g in pop.genomes]

    assert trajectory() == trajectory()


def test_stagnant_species_without_best_is_removed():
    p = NeatParams(stagnation_limit=2, compatibility_threshold=0.5)
    pop = create_population(p, np.random.default_rng(3))
    assert len(pop.species) > 1
    fit = np.zeros(20)
    best = pop.species[0].members[0]
    fit[best] = 1.0
    for s in pop.species:
        s.last_improved = -5
        s.best_fitness = 2.0  # nothing counts as an improvement
    new = next_generation(pop, fit, p, np.random.default_rng(4))
    assert len(new.genomes) == 20
    kept_ids = {s.id for s in new.species}
    assert pop.species[0].id in kept_ids


# -- text format --------------------------------------------------------------

@given(st.integers(0, 1000))
def test_genome_text_round_trip(seed):
    g = random_genome(seed, steps=6)
    back = genome_from_text(genome_to_text(g))
    assert back == g
    pts = np.random.default_rng(seed).uniform(-1, 1, (5, 4))
    np.testing.assert_array_equal(query_batch(back, pts), query_batch(g, pts))


def test_bad_header_rejected():
    with pytest.raises(StructuralError):
        genome_from_text("not a genome\n")
