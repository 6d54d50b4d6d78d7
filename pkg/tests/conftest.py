import numpy as np
import pytest

import conceptgcn as cg
from conceptgcn.datasets import data_root, find_dataset


def dataset_or_skip(name: str):
    """Load a real benchmark dataset or skip with a pointer to the README."""
    found = find_dataset(name)
    if found is None:
        pytest.skip(
            f"dataset {name!r} not present under {data_root()} "
            f"(no network in this environment); see README 'Data' section"
        )
    from conceptgcn.datasets import load_dataset

    return load_dataset(name)


@pytest.fixture
def toy_graph():
    """6-node graph with features, labels, and a little structure."""
    return cg.make_synthetic_graph(n=6, m=5, c=3, seed=11)


@pytest.fixture
def small_graph():
    return cg.make_synthetic_graph(n=60, m=24, c=3, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
