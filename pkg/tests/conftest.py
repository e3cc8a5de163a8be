"""Shared fixtures for command tests."""

import pytest

from edgeselect.commands.gen_data import run as gen_data


@pytest.fixture
def split_args():
    """Partition sizes for the command tests; 300 labeled samples keep epsilon = 0.0099 feasible."""
    return ["--n-labeled", "300", "--n-unlabeled", "300"]


@pytest.fixture(scope="session")
def manifest(tmp_path_factory):
    """A 900-sample, 5-label benchmark dataset written by gen-data."""
    out_dir = tmp_path_factory.mktemp("data")
    assert gen_data(["--n", "900", "--labels", "5", "--seed", "1", "--out-dir", str(out_dir)]) == 0
    return out_dir / "manifest.json"
