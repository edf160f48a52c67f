"""
conftest.py for pytest
"""
import shutil
import tempfile
from typing import Generator, Optional

import numpy as np
import parsl
import pytest

from qwalklab.utils import _default_parsl_config
from qwalklab.walks import HalfLineWalk, TruncatedChain, add_self_loop, make_family


@pytest.fixture(name="load_parsl", scope="session", autouse=True)
def fixture_load_parsl() -> None:
    """
    Fixture for loading parsl for tests
    """
    parsl.load(_default_parsl_config())


# note: we use name here to avoid pylint flagging W0621
@pytest.fixture(name="get_tempdir", scope="session")
def fixture_get_tempdir() -> Generator:
    """
    Provide temporary directory for testing
    """

    tmpdir = tempfile.mkdtemp()

    yield tmpdir

    shutil.rmtree(path=tmpdir, ignore_errors=True)


@pytest.fixture(name="homogeneous_pr")
def fixture_homogeneous_pr() -> HalfLineWalk:
    """
    Positive recurrent homogeneous walk p=0.3, q=0.7
    """

    return make_family("homogeneous", (0.3, 0.7))


@pytest.fixture(name="homogeneous_nr")
def fixture_homogeneous_nr() -> HalfLineWalk:
    """
    Null recurrent homogeneous walk p=q=0.5
    """

    return make_family("homogeneous", (0.5, 0.5))


@pytest.fixture(name="example_a_one_loop")
def fixture_example_a_one_loop() -> HalfLineWalk:
    """
    Transient example walk with r_0 = 0.5 taken from the right
    """

    return add_self_loop(make_family("example_a"), 0, 0.5, "right")


@pytest.fixture(name="homogeneous_nr_two_loops")
def fixture_homogeneous_nr_two_loops(homogeneous_nr: HalfLineWalk) -> HalfLineWalk:
    """
    Null recurrent walk with loops at 0 and 3
    """

    return add_self_loop(
        add_self_loop(homogeneous_nr, 0, 0.5, "right"), 3, 0.4, "proportional"
    )


def small_graph_chain(
    kind: str, size: int, loops: Optional[list] = None, seed: int = 0
) -> TruncatedChain:
    """
    Column-stochastic chain on a cycle or complete graph with random
    symmetric-support weights and optional self loops.
    """

    rng = np.random.default_rng(seed)
    adjacency = np.zeros((size, size), dtype=bool)
    if kind == "cycle":
        index = np.arange(size)
        adjacency[index, (index + 1) % size] = True
    elif kind == "complete":
        adjacency[:] = True
    else:
        raise ValueError(kind)
    adjacency |= adjacency.T
    adjacency[np.diag_indices(size)] = False
    for site in loops or []:
        adjacency[site, site] = True

    weights = np.where(adjacency, rng.random((size, size)) + 0.1, 0.0)
    return TruncatedChain(
        matrix=weights / weights.sum(axis=0, keepdims=True), label=f"{kind}({size})"
    )


@pytest.fixture(name="graph_chains")
def fixture_graph_chains() -> list:
    """
    Small non half-line chains for dimension counts
    """

    return [
        small_graph_chain("cycle", 5),
        small_graph_chain("cycle", 6),
        small_graph_chain("cycle", 6, loops=[0, 2], seed=1),
        small_graph_chain("complete", 4),
        small_graph_chain("complete", 5, loops=[1], seed=2),
    ]
