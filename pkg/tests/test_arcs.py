"""
Tests for QWalkLab.arcs
"""

import numpy as np
import pytest

from qwalklab.arcs import (
    apply_U,
    build_arc_space,
    build_operators,
    cesaro_averages,
    dense_evolution_matrix,
    evolve_and_average,
    incidence_vector,
    position_distribution,
    shift_eigenspace_dimensions,
)
from qwalklab.exceptions import ParameterException
from qwalklab.walks import HalfLineWalk, add_self_loop, truncate


def test_build_arc_space(homogeneous_pr: HalfLineWalk):
    """
    Tests build_arc_space
    """

    basis = build_arc_space(truncate(homogeneous_pr, 4))
    assert basis.arc_count == 8
    assert basis.edge_count == 4
    assert basis.loop_count == 0
    assert basis.vertex_count == 5
    assert basis.arcs[:3] == ((0, "R"), (1, "L"), (1, "R"))
    assert basis.arcs[-1] == (4, "L")
    # flip-flop shift is an involution
    assert np.array_equal(basis.shift[basis.shift], np.arange(basis.arc_count))

    looped = build_arc_space(truncate(add_self_loop(homogeneous_pr, 0, 0.5), 4))
    assert looped.arc_count == 9
    assert looped.loop_count == 1
    assert looped.edge_count == 5
    assert looped.arcs[:2] == ((0, "O"), (0, "R"))
    assert looped.shift[looped.index_of(0, "O")] == looped.index_of(0, "O")
    assert list(looped.arcs_at(1)) == [2, 3]

    with pytest.raises(ParameterException):
        basis.index_of(0, "O")
    with pytest.raises(ParameterException):
        basis.index_of(2, "X")


def test_shift_eigenspace_dimensions(example_a_one_loop: HalfLineWalk):
    """
    Tests shift_eigenspace_dimensions against the permutation matrix of S
    """

    basis = build_arc_space(truncate(example_a_one_loop, 7))
    dimensions = shift_eigenspace_dimensions(basis)
    shift = np.eye(basis.arc_count)[basis.shift]
    assert dimensions[1] + dimensions[-1] == basis.arc_count
    assert dimensions[1] - dimensions[-1] == int(round(np.trace(shift)))


def test_operators(example_a_one_loop: HalfLineWalk):
    """
    Tests unitarity, coin and shift identities of the walk operators
    """

    chain = truncate(example_a_one_loop, 12)
    ops = build_operators(chain)
    size = ops.basis.arc_count
    identity = np.eye(size)

    evolution = ops.apply_U(identity)
    assert np.allclose(evolution.T @ evolution, identity, atol=1e-12)
    assert np.allclose(evolution, dense_evolution_matrix(ops.basis, chain), atol=1e-12)

    # U^2 is the Szegedy step ref_B ref_A
    assert np.allclose(ops.apply_W(identity), evolution @ evolution, atol=1e-12)
    # the coin is a reflection
    coin = ops.apply_coin(identity)
    assert np.allclose(coin @ coin, identity, atol=1e-12)

    incidence = ops.incidence.toarray()
    swapped = ops.swapped.toarray()
    assert np.allclose(incidence.T @ incidence, np.eye(chain.size), atol=1e-12)
    assert np.allclose(apply_U(ops, incidence), swapped, atol=1e-12)
    assert np.allclose(ops.apply_shift(incidence), swapped)

    assert np.allclose(incidence_vector(ops.basis, chain, 3), incidence[:, 3])
    with pytest.raises(ParameterException):
        incidence_vector(ops.basis, chain, 13)


def test_operators_on_graphs(graph_chains: list):
    """
    Tests the matrix-free walk against the local rule on non half-line chains
    """

    for chain in graph_chains:
        ops = build_operators(chain)
        identity = np.eye(ops.basis.arc_count)
        evolution = ops.apply_U(identity)
        dense = dense_evolution_matrix(ops.basis, chain)
        assert np.allclose(evolution, dense, atol=1e-12)
        assert np.allclose(evolution.T @ evolution, identity, atol=1e-12)


def test_position_distribution(homogeneous_pr: HalfLineWalk):
    """
    Tests position_distribution
    """

    basis = build_arc_space(truncate(homogeneous_pr, 6))
    start = position_distribution(basis, basis.basis_vector(2, "L"))
    assert start[2] == 1.0
    assert start.total() == 1.0

    rng = np.random.default_rng(7)
    psi = rng.normal(size=basis.arc_count) + 1j * rng.normal(size=basis.arc_count)
    psi /= np.linalg.norm(psi)
    assert position_distribution(basis, psi).total() == pytest.approx(1.0)


def test_cesaro_averages(homogeneous_pr: HalfLineWalk):
    """
    Tests cesaro_averages and evolve_and_average
    """

    ops = build_operators(truncate(homogeneous_pr, 20))
    psi0 = ops.basis.basis_vector(0, "R")
    results = cesaro_averages(ops, psi0, [50, 1, 10])

    assert sorted(results) == [1, 10, 50]
    assert results[1][0] == 1.0
    for T, table in results.items():
        assert table.total() == pytest.approx(1.0, abs=1e-10)
        assert table.diagnostics["max_norm_drift"] < 1e-12
        assert table.provenance == f"direct_cesaro(T={T},N=20)"

    single = evolve_and_average(ops, ops.basis, psi0, 50)
    assert np.allclose(single.values, results[50].values)

    with pytest.raises(ParameterException):
        cesaro_averages(ops, psi0, [0])
    with pytest.raises(ParameterException):
        cesaro_averages(ops, 2 * psi0, [5])
    with pytest.raises(ParameterException):
        evolve_and_average(ops, build_arc_space(ops.chain), psi0, 5)
