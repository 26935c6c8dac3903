import dataclasses

import pytest

from melai.config import ConfigError, RunConfig, config_to_text, load_config, parse_config, parse_matrix
from melai.cppn_neat import NeatParams
from melai.nipes import NipesParams


def test_minimal_config_uses_defaults():
    cfg = parse_config("[run]\nenvironment = amphitheatre\n")
    assert cfg.environment == "amphitheatre"
    assert cfg.use_archive and cfg.variant == "MELAI"
    assert (cfg.per_body_budget, cfg.generations, cfg.total_budget) == (200, 20, 80_000)
    assert cfg.population_size == 20
    assert cfg.nipes == NipesParams() and cfg.neat == NeatParams()


def test_budget_splits_against_the_total_budget():
    # 100x40 and 200x20 fit exactly; 150x30 asks for 90000 and is capped by the total budget
    assert [b * g * 20 for b, g in [(100, 40), (200, 20)]] == [80_000, 80_000]
    assert 150 * 30 * 20 > 80_000
    cfg = parse_config("[run]\nenvironment = amphitheatre\nper_body_budget = 150\ngenerations = 30\n")
    assert cfg.total_budget == 80_000


def test_variant_and_sections():
    cfg = parse_config("""
[run]
environment = two_rooms
variant = mel
population_size = 8
seed = 7
[nipes]
lambda0 = 12
novelty = false
[arena]
sim_time = 30
""")
    assert not cfg.use_archive and cfg.variant == "MEL"
    assert cfg.population_size == 8 and cfg.seed == 7
    assert cfg.nipes.lambda0 == 12 and cfg.nipes.novelty is False
    assert cfg.arena.sim_time == 30.0


@pytest.mark.parametrize("text, field", [
    ("[run]\nseed = 1\n", "environment"),
    ("[run]\nenvironment = x\nbogus = 1\n", "bogus"),
    ("[run]\nenvironment = x\nper_body_budget = ten\n", "per_body_budget"),
    ("[run]\nenvironment = x\nvariant = NEAT\n", "variant"),
    ("[run]\nenvironment = x\n[nipes]\nsigma = 2\n", "sigma"),
    ("[run]\nenvironment = x\n[physics]\na = 1\n", "physics"),
    ("[run]\nenvironment = x\ngenerations = 0\n", "generations"),
])
def test_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(text)


def test_round_trip(tmp_path):
    cfg = RunConfig("hard_race", use_archive=False, seed=99, neat=NeatParams(population_size=10),
                    nipes=dataclasses.replace(NipesParams(), sigma0=0.37))
    again = parse_config(config_to_text(cfg))
    assert again == cfg
    p = tmp_path / "c.ini"
    p.write_text(config_to_text(cfg))
    assert load_config(p) == cfg


def test_matrix_section():
    spec = parse_matrix("""
[run]
seed = 5
[matrix]
variants = MEL, MELAI
environments = amphitheatre, hard_race
splits = 200x20, 100x40
""")
    assert spec.variants == ["MEL", "MELAI"]
    assert spec.environments == ["amphitheatre", "hard_race"]
    assert spec.splits == [(200, 20), (100, 40)]
    assert spec.base.seed == 5
    with pytest.raises(ConfigError, match="splits"):
        parse_matrix("[matrix]\nsplits = 200-20\n")
