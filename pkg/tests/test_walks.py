"""
Tests for QWalkLab.walks and related.
"""

import numpy as np
import pytest

from qwalklab.exceptions import ParameterException, PreconditionException
from qwalklab.walks import (
    HalfLineWalk,
    _evaluate_series,
    add_self_loop,
    classify,
    conjugation_residual,
    jacobi_matrix,
    log_products,
    make_family,
    signed_eigenvector,
    stationary_distribution,
    stochastic_matrix,
    terminal_norm_series,
    truncate,
)


def test_make_family(homogeneous_pr: HalfLineWalk):
    """
    Tests make_family
    """

    # boundary site sends all mass to the right
    assert homogeneous_pr.p(0) == 1.0
    assert homogeneous_pr.q(0) == 0.0
    assert (homogeneous_pr.p(5), homogeneous_pr.q(5), homogeneous_pr.r(5)) == (
        0.3,
        0.7,
        0.0,
    )
    assert not homogeneous_pr.has_loops

    example_a = make_family("example_a")
    assert example_a.p(2) == pytest.approx(4 / 6)
    assert example_a.q(2) == pytest.approx(2 / 6)

    example_c = make_family("example_c")
    assert (example_c.p(1), example_c.q(1)) == (0.5, 0.5)
    assert example_c.p(3) == pytest.approx(1 / 3)

    # custom tables repeat their last row
    custom = make_family("custom", (1.0, 0.0, 0.0, 0.4, 0.4, 0.2))
    assert custom.r(10) == pytest.approx(0.2)
    assert custom.loop_tail == 2

    # homogeneous walks with r > 0 carry loops everywhere
    lazy = make_family("homogeneous", (0.2, 0.5, 0.3))
    assert lazy.loop_tail == 0
    assert lazy.loop_set(4) == (0, 1, 2, 3, 4)

    with pytest.raises(ParameterException):
        make_family("homogeneous", (0.6, 0.6))
    with pytest.raises(ParameterException):
        make_family("example_a", (0.1,))
    with pytest.raises(ParameterException):
        make_family("no_such_family")


def test_make_family_without_loops():
    """
    Tests that (p, q) pairs whose sum rounds below 1 carry no loops
    """

    # 1.0 - 0.7 - 0.3 leaves a residue near 5.6e-17
    transient = make_family("homogeneous", (0.7, 0.3))
    assert transient.loop_tail is None
    assert not transient.has_loops
    assert transient.loop_set(50) == ()
    assert transient.r(7) == 0.0

    # only explicit loops remain once one is added
    looped = add_self_loop(transient, 0, 0.5)
    assert looped.loop_sites == (0,)
    assert looped.loop_tail is None


def test_add_self_loop(homogeneous_nr: HalfLineWalk):
    """
    Tests add_self_loop
    """

    one_loop = add_self_loop(homogeneous_nr, 0, 0.5, "right")
    assert (one_loop.p(0), one_loop.r(0)) == (0.5, 0.5)
    assert one_loop.loop_sites == (0,)

    two_loops = add_self_loop(one_loop, 3, 0.4, "proportional")
    assert two_loops.loop_sites == (0, 3)
    assert two_loops.p(3) == pytest.approx(0.3)
    assert two_loops.q(3) == pytest.approx(0.3)
    # the original walk is untouched
    assert not homogeneous_nr.has_loops

    with pytest.raises(ParameterException):
        add_self_loop(homogeneous_nr, 0, 1.5)
    with pytest.raises(ParameterException):
        add_self_loop(homogeneous_nr, 0, 0.5, "left")
    with pytest.raises(ParameterException):
        add_self_loop(homogeneous_nr, 2, 0.5, "sideways")


def test_evaluate_series():
    """
    Tests _evaluate_series
    """

    # geometric series stabilizes on its sum
    geometric = _evaluate_series(np.arange(1, 200) * np.log(0.5))
    assert geometric.status == "stabilized"
    assert geometric.value == pytest.approx(1.0)

    # harmonic series is caught by the ratio test
    harmonic = _evaluate_series(-np.log(np.arange(2, 10**4 + 1)))
    assert harmonic.status == "diverged"

    # exponential growth crosses the threshold early
    growing = _evaluate_series(np.arange(1, 100) * np.log(2.0))
    assert growing.status == "diverged"
    assert growing.partial_sums[-1] > 1e8
    assert len(growing.partial_sums) < 99

    # inverse squares converge with a tail estimate
    squares = _evaluate_series(-2 * np.log(np.arange(1, 10**4)))
    assert squares.converged
    assert squares.value == pytest.approx(np.pi**2 / 6, rel=1e-6)


@pytest.mark.parametrize(
    "family, params, expected",
    [
        ("homogeneous", (0.3, 0.7), "positive_recurrent"),
        ("homogeneous", (0.5, 0.5), "null_recurrent"),
        ("homogeneous", (0.7, 0.3), "transient"),
        ("example_a", (), "transient"),
        ("example_b", (), "null_recurrent"),
        ("example_c", (), "positive_recurrent"),
    ],
)
def test_classify(family: str, params: tuple, expected: str):
    """
    Tests classify
    """

    report = classify(make_family(family, params), cutoff=10**5)
    assert report.recurrence_class == expected
    assert report.verified
    assert report.consistent_with_declared
    assert report.is_recurrent == (expected != "transient")


def test_classify_loops_keep_class(homogeneous_nr: HalfLineWalk):
    """
    Tests that finitely many loops leave the recurrence class alone
    """

    walk = add_self_loop(add_self_loop(homogeneous_nr, 0, 0.5), 3, 0.4, "proportional")
    assert classify(walk, cutoff=10**5).recurrence_class == "null_recurrent"

    with pytest.raises(PreconditionException):
        classify(walk, cutoff=5)


def test_stationary_distribution(homogeneous_pr: HalfLineWalk):
    """
    Tests stationary_distribution
    """

    pi = stationary_distribution(homogeneous_pr, 60)
    assert pi[0] == pytest.approx(2 / 7)
    assert pi[1] == pytest.approx(2 / 7 / 0.7)
    assert pi.total() == pytest.approx(1.0, abs=1e-12)

    # example_c has C_R = 5
    report = classify(make_family("example_c"), cutoff=10**4)
    assert report.cr.value == pytest.approx(5.0, rel=1e-6)
    assert stationary_distribution(
        make_family("example_c"), 10, report=report
    )[0] == pytest.approx(1 / 6, rel=1e-6)

    with pytest.raises(PreconditionException):
        stationary_distribution(make_family("example_a"), 10, cutoff=10**4)


def test_stationary_is_invariant(homogeneous_pr: HalfLineWalk):
    """
    Tests that the stationary vector is fixed by the transition matrix
    away from the truncation boundary
    """

    N = 40
    pi = stationary_distribution(homogeneous_pr, N).values
    chain = truncate(homogeneous_pr, N)
    moved = chain.matrix @ pi
    assert np.allclose(moved[: N - 1], pi[: N - 1], atol=1e-14)


def test_signed_eigenvector(homogeneous_pr: HalfLineWalk):
    """
    Tests signed_eigenvector
    """

    N = 30
    vector = signed_eigenvector(homogeneous_pr, N)
    assert vector[0] == 1.0
    assert np.all(vector[1::2] < 0)
    moved = truncate(homogeneous_pr, N).matrix @ vector
    assert np.allclose(moved[: N - 1], -vector[: N - 1])

    with pytest.raises(PreconditionException):
        signed_eigenvector(add_self_loop(homogeneous_pr, 0, 0.5), N)


def test_truncate(example_a_one_loop: HalfLineWalk):
    """
    Tests truncate and the Jacobi matrix
    """

    chain = truncate(example_a_one_loop, 12)
    assert chain.N == 12
    assert np.allclose(chain.matrix.sum(axis=0), 1.0)
    assert chain.is_tridiagonal
    assert chain.loop_set == (0,)
    # the last site sends its forward mass back
    assert chain.matrix[11, 12] == pytest.approx(1.0)

    jacobi = jacobi_matrix(example_a_one_loop, 12)
    p, q, r = example_a_one_loop.coefficients(12)
    assert np.allclose(jacobi.diagonal, r[:13])
    assert np.allclose(jacobi.off_diagonal[:11], np.sqrt(p[:11] * q[1:12]))
    dense = jacobi.to_dense()
    assert np.array_equal(dense, dense.T)

    with pytest.raises(PreconditionException):
        truncate(example_a_one_loop, 1)


def test_stochastic_matrix(example_a_one_loop: HalfLineWalk):
    """
    Tests stochastic_matrix
    """

    matrix = stochastic_matrix(example_a_one_loop, 12)
    p, q, r = example_a_one_loop.coefficients(12)
    assert matrix.shape == (13, 13)
    assert np.allclose(np.diag(matrix), r[:13])
    assert np.allclose(np.diag(matrix, k=-1), p[:12])
    assert np.allclose(np.diag(matrix, k=1), q[1:13])
    # only the last column leaks mass past the window
    sums = matrix.sum(axis=0)
    assert np.allclose(sums[:12], 1.0)
    assert sums[12] == pytest.approx(1.0 - p[12])
    # truncation differs from it in the last column alone
    difference = truncate(example_a_one_loop, 12).matrix - matrix
    assert np.allclose(difference[:, :12], 0.0)
    assert difference[11, 12] == pytest.approx(p[12])


def test_conjugation_residual(homogeneous_pr: HalfLineWalk):
    """
    Tests that J is D^(-1/2) M D^(1/2) and not the reverse
    """

    for walk in (homogeneous_pr, make_family("example_a"), make_family("example_c")):
        assert conjugation_residual(walk, 40, "inverse_left") < 1e-12
        assert conjugation_residual(walk, 40, "inverse_right") > 1e-6

    with pytest.raises(ParameterException):
        conjugation_residual(homogeneous_pr, 40, "sideways")


def test_log_products():
    """
    Tests log_products against direct products
    """

    walk = make_family("example_b")
    logs = log_products(walk, 8)
    p, q, _ = walk.coefficients(8)
    assert np.exp(logs["ct"][5]) == pytest.approx(np.prod(q[1:6] / p[1:6]))
    assert np.exp(logs["cr"][5]) == pytest.approx(np.prod(p[:5]) / np.prod(q[1:6]))
    assert logs["ct"][0] == 0.0


def test_terminal_norm_series(example_a_one_loop: HalfLineWalk):
    """
    Tests terminal_norm_series
    """

    series, log_terms = terminal_norm_series(example_a_one_loop, 0, cutoff=10**4)
    assert series.status == "stabilized"
    # boundary term R_0 (p_0 + r_0) / r_0 = 2
    assert np.exp(log_terms[0]) == pytest.approx(2.0)

    recurrent = add_self_loop(make_family("example_b"), 0, 0.5)
    assert terminal_norm_series(recurrent, 0, cutoff=10**5)[0].status == "diverged"

    with pytest.raises(PreconditionException):
        terminal_norm_series(make_family("example_a"), 0)
