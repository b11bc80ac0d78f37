import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shapecomp import datagen as D  # noqa: E402


@pytest.fixture(scope="session")
def small_pairs():
    """A small canonical toy dataset (5 families x 6 poses, n=64)."""
    cfg = D.SynthConfig.default("toy", seed=3, poses_per_family=6, n=64, dense_count=20000)
    pairs, objects = D.synthesize(cfg)
    return pairs, objects


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "small"
    cfg = D.SynthConfig.default("toy", seed=3, poses_per_family=6, n=64, dense_count=20000)
    D.synthesize_dataset(root, cfg)
    return root


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
