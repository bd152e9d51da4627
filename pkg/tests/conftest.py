from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_gen import write_multiwoz_fixture  # noqa: E402

from opendst.datasets import load_multiwoz, load_sgd  # noqa: E402
from opendst.datasets.multiwoz import multiwoz_schema  # noqa: E402
from opendst.prompts import load_assets  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def schema():
    return multiwoz_schema()


@pytest.fixture(scope="session")
def library():
    return load_assets()


@pytest.fixture(scope="session")
def mini_corpus():
    return load_multiwoz(FIXTURES / "multiwoz_mini.json")


@pytest.fixture(scope="session")
def sgd_corpus():
    return load_sgd(FIXTURES / "sgd_mini")


@pytest.fixture(scope="session")
def gen_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("gen") / "data.json"
    return write_multiwoz_fixture(path, n_dialogues=20, seed=7)


@pytest.fixture(scope="session")
def gen_corpus(gen_corpus_path):
    return load_multiwoz(gen_corpus_path)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdicts after the run, outside output capture."""
    verdicts = sys.modules.get("test_acceptance")
    lines = getattr(verdicts, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
