import numpy as np
import pytest

from latencut.model_io import Model, ModelConfig

_acceptance_lines: list[str] = []


@pytest.fixture
def tiny_config():
    return ModelConfig(num_layers=2, hidden_size=16, num_heads=4, max_seq=16, vocab_size=50, num_labels=3)


@pytest.fixture
def tiny_model(tiny_config):
    return Model.random(tiny_config, seed=7)


@pytest.fixture
def tiny_decoder():
    cfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=4, max_seq=16, vocab_size=50,
                      mode="decoder")
    return Model.random(cfg, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    _acceptance_lines.append(f"{status}  {name}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
