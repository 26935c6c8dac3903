import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from melai.cppn_neat import INPUT_IDS, OUTPUT_IDS, ConnectionGene, CppnGenome, NodeGene

settings.register_profile("melai", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("melai")


def constant_genome(biases, activation="sigmoid", conns=()):
    """Genome whose outputs are activation(bias) plus optional extra connections."""
    nodes = [NodeGene(i, "input", "linear") for i in INPUT_IDS]
    nodes += [NodeGene(o, "output", activation, float(b)) for o, b in zip(OUTPUT_IDS, biases)]
    return CppnGenome(tuple(nodes), tuple(conns))


def logit(p):
    return float(np.log(p / (1 - p)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report(capsys):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    def emit(name: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
