import os

import numpy as np
import pytest

from editlab.bench.build import collect_candidates, EvalSuite, PortabilityEntry, SpecificityEntry
from editlab.bench.mappings import default_mappings, libraries_for
from editlab.bench.vocab import build_vocabulary
from editlab.model import ModelConfig, TransformerLM


@pytest.fixture(autouse=True)
def env_setup(monkeypatch):
    # actually run in parallel by default
    if "EDITLAB_NUM_PYTHON_SUBPROCESSES" not in os.environ:
        monkeypatch.setenv("EDITLAB_NUM_PYTHON_SUBPROCESSES", "2")


################################################
# Skip particular tests
# code from Pytest documentation at:
# https://docs.pytest.org/en/latest/example/simple.html#control-skipping-of-tests-according-to-command-line-option
#################################################
editlab_markers = [("slow", "slow tests, end-to-end training and editing runs"),
                   ("perf", "tests checking performance")]


def pytest_addoption(parser):
    for marker_name, marker_desc in editlab_markers:
        parser.addoption(f"--run{marker_name}", action="store_true", default=False, help="run " + marker_desc)


def pytest_configure(config):
    for marker_name, marker_desc in editlab_markers:
        config.addinivalue_line("markers", f"{marker_name}: mark {marker_desc}")


def pytest_collection_modifyitems(config, items):
    for marker_name, _ in editlab_markers:
        if not config.getoption(f"--run{marker_name}"):
            skip = pytest.mark.skip(reason=f"need --run{marker_name} option to run")
            for item in items:
                if marker_name in item.keywords:
                    item.add_marker(skip)


################################################
# tiny models and benchmark data
################################################
@pytest.fixture(scope="session")
def mappings():
    return default_mappings(16)


@pytest.fixture(scope="session")
def libraries(mappings):
    return libraries_for(mappings)


@pytest.fixture(scope="session")
def vocab(mappings, libraries):
    return build_vocabulary(libraries, mappings)


def tiny_model(vocab, n_layers=3, seed=0):
    config = ModelConfig(vocab_size=len(vocab), d_model=16, n_heads=2, n_layers=n_layers, d_ffn=32,
                         max_seq_len=128, seed=seed)
    return TransformerLM(config, vocab)


@pytest.fixture()
def model(vocab):
    return tiny_model(vocab)


@pytest.fixture(scope="session")
def model_factory(vocab):
    def _factory(**kwargs):
        return tiny_model(vocab, **kwargs)
    return _factory


@pytest.fixture(scope="session")
def instances(mappings, libraries):
    """two candidates for each of the first four mappings"""
    return collect_candidates(mappings[:4], libraries, 2, seed=0)


def make_suite(inst, other):
    """suite from raw inputs, no model involved"""
    return EvalSuite(inst.id, list(inst.input), list(inst.target_line),
                     [PortabilityEntry(other.id, list(other.input), list(other.target_line))],
                     [SpecificityEntry(f"pool/{i:05d}", list(other.input), ["x", "=", "a"], ["x"])
                      for i in range(5)])


@pytest.fixture(scope="session")
def suites(instances):
    return {inst.id: make_suite(inst, instances[(i + 1) % len(instances)]) for i, inst in enumerate(instances)}


@pytest.fixture()
def rng():
    return np.random.default_rng(5)


class ScriptedModel:
    """stand-in for a language model: completions looked up by prompt, a default otherwise"""

    def __init__(self, script=None, default=(), checksum="fake"):
        self.script = {tuple(k): list(v) for k, v in (script or {}).items()}
        self.default = list(default)
        self._checksum = checksum

    def complete_tokens(self, prompt_tokens, max_new=24):
        return list(self.script.get(tuple(prompt_tokens), self.default))

    def checksum(self):
        return self._checksum
