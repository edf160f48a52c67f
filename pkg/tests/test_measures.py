"""
Tests for QWalkLab.measures
"""

import numpy as np
import pytest

from qwalklab.arcs import build_arc_space, build_operators
from qwalklab.exceptions import ParameterException, PreconditionException
from qwalklab.measures import (
    InitialState,
    MixedInitialState,
    arc_mixture_state,
    arc_state,
    avoid_localization_state,
    cesaro_rate,
    corollary2_measure,
    corollary2_table,
    corollary3_measure,
    corollary3_table,
    custom_state,
    direct_limit_measure,
    direct_limit_measures,
    doubled_lower_bound,
    eta_norm_terminal,
    h_s_projection_measure,
    homogeneous_closed_form,
    homogeneous_closed_form_table,
    incidence_state,
    lower_bound_general,
    lower_bound_table,
    orthogonalize_against_mass_points,
    richardson_gap,
    spectral_limit_measure,
    supp_h_s,
)
from qwalklab.spectral import (
    build_spectral_data,
    eigensolve,
    lift_mass_points,
    signed_reflected_basis,
    walk_mass_points,
)
from qwalklab.tables import MeasureTable
from qwalklab.walks import (
    HalfLineWalk,
    add_self_loop,
    classify,
    make_family,
    stationary_distribution,
    truncate,
)


def test_initial_states(homogeneous_pr: HalfLineWalk):
    """
    Tests the initial state builders
    """

    ops = build_operators(truncate(homogeneous_pr, 6))
    basis = ops.basis

    state = custom_state(basis, 2, {"L": 1.0, "R": 1j})
    assert np.linalg.norm(state.vector) == pytest.approx(1.0)
    assert state.coefficients[1][1] == pytest.approx(1j / np.sqrt(2))
    with pytest.raises(ParameterException):
        custom_state(basis, 2, {"L": 0.0})

    single = arc_state(basis, 3, "L")
    assert single.vector[basis.index_of(3, "L")] == 1.0
    assert np.count_nonzero(single.vector) == 1

    incidence = incidence_state(ops, 3)
    assert np.allclose(incidence.vector, ops.incidence[:, 3].toarray().ravel())
    assert np.linalg.norm(incidence.vector) == pytest.approx(1.0)

    assert arc_mixture_state(basis, 0).vector[basis.index_of(0, "R")] == 1.0
    mixture = arc_mixture_state(basis, 2)
    assert isinstance(mixture, MixedInitialState)
    assert [weight for weight, _ in mixture.components] == [0.5, 0.5]
    assert mixture.anchor == 2

    avoiding = avoid_localization_state(ops, 3)
    assert abs(np.vdot(incidence.vector, avoiding.vector)) < 1e-12
    assert np.linalg.norm(avoiding.vector) == pytest.approx(1.0)


def test_orthogonalize_against_mass_points(homogeneous_pr: HalfLineWalk):
    """
    Tests orthogonalize_against_mass_points
    """

    data = build_spectral_data(
        truncate(homogeneous_pr, 10), homogeneous_pr, mass_point_values=(1.0, -1.0)
    )
    lifts = data.mass_point_lifts()
    assert len(lifts) == 2

    state = orthogonalize_against_mass_points(arc_state(data.ops.basis, 0, "R"), lifts)
    assert state.kind == "hs_projected"
    assert np.linalg.norm(state.vector) == pytest.approx(1.0)
    for lifted in lifts:
        assert abs(np.vdot(lifted.normalized, state.vector)) < 1e-10

    inside = InitialState(
        anchor=0, coefficients=(), vector=lifts[0].normalized, kind="custom"
    )
    with pytest.raises(PreconditionException):
        orthogonalize_against_mass_points(inside, lifts)


def test_spectral_limit_measure(homogeneous_pr: HalfLineWalk):
    """
    Tests the spectral measure is a distribution split into its parts
    """

    data = build_spectral_data(truncate(homogeneous_pr, 20), homogeneous_pr)
    result = spectral_limit_measure(data, arc_state(data.ops.basis, 0, "R"))
    assert result.table.total() == pytest.approx(1.0, abs=1e-9)
    assert result.method == "spectral(N=20)"
    assert np.allclose(
        result.hr_part.values + result.hs_part.values + result.interference.values,
        result.table.values,
    )
    # a path has no complement part
    assert np.abs(result.hs_part.values).max() < 1e-12


def test_direct_matches_spectral(example_a_one_loop: HalfLineWalk):
    """
    Tests direct Cesaro averages approach the spectral measure
    """

    data = build_spectral_data(truncate(example_a_one_loop, 8), example_a_one_loop)
    psi0 = custom_state(data.ops.basis, 0, {"O": -1.0, "R": 1.0})
    spectral = spectral_limit_measure(data, psi0)

    direct = direct_limit_measures(data.ops, psi0, [500, 4000])
    assert sorted(direct) == [500, 4000]
    assert direct[4000].table.sup_distance(spectral.table) < 2e-2
    assert direct[4000].diagnostics["max_norm_drift"] < 1e-10

    rates = cesaro_rate(data.ops, psi0, spectral, [500, 4000])
    assert rates[4000] == pytest.approx(direct[4000].table.sup_distance(spectral.table))

    single = direct_limit_measure(data.ops, psi0, 500)
    assert np.allclose(single.table.values, direct[500].table.values)
    with pytest.raises(ParameterException):
        direct_limit_measure(data.ops, psi0, 500, burn_in=10)


def test_mixture_measures_average(homogeneous_pr: HalfLineWalk):
    """
    Tests mixtures average the measures of their components
    """

    ops = build_operators(truncate(homogeneous_pr, 10))
    mixture = arc_mixture_state(ops.basis, 3)
    mixed = direct_limit_measure(ops, mixture, 200).table.values
    parts = [
        direct_limit_measure(ops, component, 200).table.values
        for _, component in mixture.components
    ]
    assert np.allclose(mixed, 0.5 * parts[0] + 0.5 * parts[1])


def test_homogeneous_closed_form():
    """
    Tests homogeneous_closed_form
    """

    p, q = 0.3, 0.7
    pi0 = (1 - p / q) / 2
    pi1 = (1 - p / q) / (2 * q)
    assert pi0 == pytest.approx(2 / 7)

    origin = homogeneous_closed_form(p, q, 0, 0)
    assert origin.value == pytest.approx(8 / 49)
    assert origin.trapped_mass == pytest.approx(4 / 7)
    assert homogeneous_closed_form(p, q, 1, 0).value == pytest.approx(2 * pi0 * pi1)
    assert homogeneous_closed_form(p, q, 0, 1).value == pytest.approx(pi1 * pi0)

    table = homogeneous_closed_form_table(p, q, 0, 30)
    assert len(table) == 31
    assert table.total() == pytest.approx(4 / 7, rel=1e-9)

    with pytest.raises(PreconditionException):
        homogeneous_closed_form(0.5, 0.5, 0, 0)


def test_lower_bound(homogeneous_pr: HalfLineWalk, example_a_one_loop: HalfLineWalk):
    """
    Tests lower_bound_table, lower_bound_general and doubled_lower_bound
    """

    ops = build_operators(truncate(homogeneous_pr, 30))
    pi = stationary_distribution(homogeneous_pr, 30)
    psi0 = incidence_state(ops, 2)

    table, doubled = lower_bound_table(ops, psi0, 2, pi)
    assert doubled
    assert table[5] == pytest.approx(2 * pi[5] * pi[2])
    assert np.allclose(doubled_lower_bound(ops, psi0, 2, pi).values, table.values)

    general = lower_bound_general(ops, psi0, 5, 2, pi)
    assert general.value == pytest.approx(table[5])
    assert general.includes_stationary and general.doubled

    single = lower_bound_general(ops, psi0, 5, 2, pi, doubled=False)
    assert single.value == pytest.approx(pi[5] * pi[2])

    hs_only, doubled = lower_bound_table(ops, psi0, 2, None)
    assert not doubled
    assert hs_only.total() == 0.0

    looped = build_operators(truncate(example_a_one_loop, 10))
    with pytest.raises(PreconditionException):
        doubled_lower_bound(looped, arc_state(looped.basis, 0, "R"), 0, pi)


def test_supp_h_s(
    homogeneous_nr: HalfLineWalk,
    homogeneous_nr_two_loops: HalfLineWalk,
    example_a_one_loop: HalfLineWalk,
):
    """
    Tests supp_h_s for every recurrence class and loop count
    """

    assert supp_h_s(homogeneous_nr).empty

    transient = supp_h_s(
        example_a_one_loop, recurrence=classify(example_a_one_loop, cutoff=10**5)
    )
    assert (transient.start, transient.stop) == (0, None)
    assert 10**6 in transient

    one_loop = add_self_loop(homogeneous_nr, 0, 0.5)
    assert supp_h_s(one_loop, recurrence=classify(one_loop, cutoff=10**5)).empty

    two_loops = supp_h_s(
        homogeneous_nr_two_loops,
        recurrence=classify(homogeneous_nr_two_loops, cutoff=10**5),
    )
    assert (two_loops.start, two_loops.stop) == (0, 3)
    assert list(two_loops.mask(5)) == [True, True, True, True, False, False]

    transient_two = add_self_loop(example_a_one_loop, 3, 0.4, "proportional")
    report = classify(transient_two, cutoff=10**5)
    unbounded = supp_h_s(transient_two, recurrence=report)
    assert (unbounded.start, unbounded.stop) == (0, None)

    lazy = supp_h_s(make_family("homogeneous", (0.2, 0.5, 0.3)))
    assert (lazy.start, lazy.stop) == (0, None)


def test_corollary2_table(
    example_a_one_loop: HalfLineWalk, homogeneous_nr: HalfLineWalk
):
    """
    Tests the localized measure of a transient walk with a loop at 0
    """

    N = 30
    basis = build_arc_space(truncate(example_a_one_loop, N))
    psi0 = custom_state(basis, 0, {"O": -1.0, "R": 1.0})
    report = classify(example_a_one_loop, cutoff=10**4)

    result = corollary2_table(
        example_a_one_loop, psi0, N, basis=basis, report=report, cutoff=10**4
    )
    assert result.series_value == pytest.approx(1.5, rel=1e-6)
    assert result.pi_prime[0] == pytest.approx(0.4, rel=1e-6)
    assert result.overlap_sq == pytest.approx(0.4, rel=1e-6)
    assert result.table[0] == pytest.approx(0.16, rel=1e-6)
    # the last site has no |N;R> arc on the truncation
    direction_sq = np.linalg.norm(result.direction) ** 2
    assert result.pi_prime.total() - result.pi_prime[N] <= direction_sq + 1e-12
    assert direction_sq <= result.pi_prime.total() + 1e-12

    assert corollary2_measure(
        example_a_one_loop, psi0, 0, N, basis=basis, report=report, cutoff=10**4
    ) == pytest.approx(result.table[0])

    recurrent = add_self_loop(homogeneous_nr, 0, 0.5)
    with pytest.raises(PreconditionException):
        corollary2_table(
            recurrent,
            psi0,
            N,
            basis=basis,
            report=classify(recurrent, cutoff=10**4),
        )
    with pytest.raises(PreconditionException):
        corollary2_table(
            add_self_loop(example_a_one_loop, 3, 0.4), psi0, N, basis=basis
        )


def test_corollary2_matches_direct_average(example_a_one_loop: HalfLineWalk):
    """
    Tests the localized measure against the Cesaro average while the
    wave has not returned from the truncation boundary
    """

    N = T = 1000
    chain = truncate(example_a_one_loop, N)
    ops = build_operators(chain)
    values = [point.value for point in walk_mass_points(example_a_one_loop, (200, 400))]
    psi0 = orthogonalize_against_mass_points(
        custom_state(ops.basis, 0, {"O": -1.0, "R": 1.0}),
        lift_mass_points(eigensolve(chain.jacobi()), ops, values),
    )

    direct = direct_limit_measures(ops, psi0, [T])[T].table
    formula = corollary2_table(example_a_one_loop, psi0, N, basis=ops.basis).table
    # the part not yet localized spreads over the light cone
    assert direct.sup_distance(formula) < 5e-3
    assert direct[0] == pytest.approx(formula[0], abs=5e-3)
    assert formula[0] > 0.1


def test_corollary3_table(homogeneous_nr_two_loops: HalfLineWalk):
    """
    Tests the localized measure of a recurrent walk with loops at 0 and 3
    """

    N = 12
    walk = homogeneous_nr_two_loops
    basis = build_arc_space(truncate(walk, N))
    psi0 = custom_state(basis, 0, {"O": -1.0, "R": 1.0})
    report = classify(walk, cutoff=10**5)

    result = corollary3_table(walk, psi0, N, basis=basis, report=report)
    assert result.series_value == pytest.approx(2.875)
    assert np.allclose(result.pi_prime.values[:4] * 3.875, [1.0, 1.0, 1.0, 0.875])
    assert result.pi_prime.total() == pytest.approx(1.0)
    assert result.table[0] == pytest.approx((1 / 3.875) ** 2)
    assert np.all(result.table.values[4:] == 0.0)

    assert corollary3_measure(walk, psi0, 1, N, basis=basis, report=report) == (
        pytest.approx(result.table[1])
    )

    with pytest.raises(PreconditionException):
        corollary3_table(walk, psi0, 3, report=report)
    with pytest.raises(PreconditionException):
        corollary3_table(add_self_loop(walk, 5, 0.2), psi0, N, report=report)


def test_eta_norm_terminal(
    example_a_one_loop: HalfLineWalk, homogeneous_nr: HalfLineWalk
):
    """
    Tests the terminal norm partial sums and their rewrite through R_l
    """

    transient = eta_norm_terminal(example_a_one_loop, 0, cutoff=2000)
    assert transient.square_summable
    assert transient.identity_residual < 1e-10
    assert transient.partial_sums[0] == pytest.approx(2.0)

    truncated = eta_norm_terminal(example_a_one_loop, 0, N=200)
    assert len(truncated.partial_sums) <= 201

    one_loop = add_self_loop(homogeneous_nr, 0, 0.5)
    recurrent = eta_norm_terminal(one_loop, 0, cutoff=10**4)
    assert not recurrent.square_summable
    assert recurrent.identity_residual < 1e-10
    assert np.allclose(recurrent.identity_lhs[:5], [2.0, 4.0, 6.0, 8.0, 10.0])


def test_h_s_projection_measure(homogeneous_nr_two_loops: HalfLineWalk):
    """
    Tests the projection onto signed reflected vectors against the
    complement part of the spectral measure
    """

    N = 12
    walk = homogeneous_nr_two_loops
    data = build_spectral_data(truncate(walk, N), walk)
    reflected = signed_reflected_basis(
        walk, None, N, basis=data.ops.basis, include_terminal=True, cutoff=10**4
    )

    eta = InitialState(
        anchor=0, coefficients=(), vector=reflected.normalized[0], kind="custom"
    )
    projected = h_s_projection_measure(reflected, eta)
    assert projected.total() == pytest.approx(1.0)
    assert np.all(projected.values[4:] < 1e-20)

    psi0 = custom_state(data.ops.basis, 0, {"O": -1.0, "R": 1.0})
    spectral = spectral_limit_measure(data, psi0)
    assert np.allclose(
        h_s_projection_measure(reflected, psi0).values,
        spectral.hs_part.values,
        atol=1e-10,
    )

    other = build_arc_space(truncate(walk, N + 1))
    with pytest.raises(PreconditionException):
        h_s_projection_measure(reflected, arc_state(other, 0, "R"))


def test_richardson_gap():
    """
    Tests richardson_gap over the common vertices
    """

    gap = richardson_gap(
        MeasureTable(values=[0.5, 0.3, 0.2], provenance="spectral(N=2)"),
        MeasureTable(values=[0.4, 0.3, 0.2, 0.1], provenance="spectral(N=4)"),
    )
    assert list(gap["vertex"]) == [0, 1, 2]
    assert np.allclose(gap["gap"], [-0.1, 0.0, 0.0])
