"""
QWalkLab: verify - the acceptance suite covering operator algebra,
spectral structure, recurrence and every localization result.
"""

import logging
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import parsl
from cloudpathlib import AnyPath
from parsl.app.app import python_app

from qwalklab.arcs import (
    apply_coin,
    apply_shift,
    apply_U,
    build_operators,
    dense_evolution_matrix,
)
from qwalklab.exceptions import QWalkLabException
from qwalklab.experiment import (
    build_walk,
    run_scenario,
)
from qwalklab.measures import (
    arc_state,
    corollary2_table,
    corollary3_table,
    custom_state,
    direct_limit_measures,
    eta_norm_terminal,
    h_s_projection_measure,
    homogeneous_closed_form_table,
    lower_bound_table,
    orthogonalize_against_mass_points,
)
from qwalklab.presets import config, defaults
from qwalklab.sources import from_preset
from qwalklab.spectral import (
    eigensolve,
    expected_h_s_dimensions,
    h_s_brute_force,
    lift,
    lift_mass_points,
    signed_reflected_basis,
    walk_mass_points,
)
from qwalklab.tables import CheckRecord, VerificationReport
from qwalklab.utils import _load_parsl, _output_root, _write_csv
from qwalklab.walks import (
    TruncatedChain,
    add_self_loop,
    classify,
    conjugation_residual,
    make_family,
    stationary_distribution,
    truncate,
)

logger = logging.getLogger(__name__)

# seed for every randomly generated chain
SEED = 20231105

# base walks of the bundled scenarios
BASE_SCENARIOS: Tuple[str, ...] = (
    "homogeneous_pr",
    "homogeneous_nr",
    "homogeneous_tr",
    "example_a",
    "example_b",
    "example_c",
)


def random_chain(
    rng: np.random.Generator,
    size: int,
    loop_probability: float = 0.3,
    edge_probability: float = 0.2,
) -> TruncatedChain:
    """
    Random connected column-stochastic chain with symmetric support.

    A path through all vertices keeps the graph connected, extra edges
    and loops are drawn independently.

    Args:
        rng: np.random.Generator:
            Seeded generator.
        size: int:
            Number of vertices, at least 2.
        loop_probability: float:  (Default value = 0.3)
            Chance of a self loop at each vertex.
        edge_probability: float:  (Default value = 0.2)
            Chance of each additional edge.

    Returns:
        TruncatedChain
    """

    adjacency = np.zeros((size, size), dtype=bool)
    index = np.arange(size - 1)
    adjacency[index, index + 1] = True
    adjacency |= np.triu(rng.random((size, size)) < edge_probability, k=1)
    adjacency |= adjacency.T
    adjacency[np.diag_indices(size)] = rng.random(size) < loop_probability

    weights = np.where(adjacency, rng.random((size, size)) + 0.1, 0.0)
    return TruncatedChain(
        matrix=weights / weights.sum(axis=0, keepdims=True),
        boundary_rule="random",
        label=f"random({size})",
    )


# truncation size of the localization checks
LOCALIZATION_SIZE = 4000

# each acceptance check returns (expected, observed, tolerance, passed, detail)
AcceptanceOutcome = Tuple[str, float, float, bool, str]


def _operator_algebra() -> AcceptanceOutcome:
    rng = np.random.default_rng(SEED)
    worst: Dict[str, float] = {}

    def record(name: str, difference: np.ndarray) -> None:
        worst[name] = max(worst.get(name, 0.0), float(np.abs(difference).max()))

    for size in rng.integers(3, 51, size=10):
        chain = random_chain(rng, int(size))
        ops = build_operators(chain)
        identity = np.eye(ops.basis.arc_count, dtype=complex)
        evolution = apply_U(ops, identity)
        shift = ops.basis.shift

        # the shift must be an exact involution of arc indices
        record("shift", shift[shift] - np.arange(len(shift)))
        shifted_twice = apply_shift(ops.basis, apply_shift(ops.basis, identity))
        record("shift", shifted_twice - identity)
        record("coin", apply_coin(ops, apply_coin(ops, identity)) - identity)
        record("unitary", evolution.conj().T @ evolution - identity)
        record("szegedy", apply_U(ops, evolution) - ops.apply_W(identity))
        record(
            "discriminant",
            (ops.incidence.T @ ops.swapped).toarray() - chain.discriminant(),
        )
        record("local_rule", dense_evolution_matrix(ops.basis, chain) - evolution)

    observed = max(worst.values())
    return (
        "S^2 = I exactly and C^2 = I, U*U = I, U^2 = W, A^T B = J",
        observed,
        1e-12,
        observed <= 1e-12,
        " ".join(f"{name}={value:.2e}" for name, value in worst.items()),
    )


def _dimension_counts() -> AcceptanceOutcome:
    rng = np.random.default_rng(SEED + 1)
    mismatches = 0
    chains = [random_chain(rng, int(size)) for size in rng.integers(3, 31, size=20)]
    paths = [truncate(make_family("homogeneous", (0.3, 0.7)), N) for N in (2, 5, 12)]

    for position, chain in enumerate(chains + paths):
        ops = build_operators(chain)
        expected = expected_h_s_dimensions(ops.basis, eigensolve(chain.discriminant()))
        found = h_s_brute_force(ops).dimensions
        # paths carry no H^(S) at all
        if position >= len(chains) and expected != {1: 0, -1: 0}:
            mismatches += 1
        mismatches += int(found != expected)

    return (
        "brute force dimensions equal the multiplicity formula and 0/0 on paths",
        float(mismatches),
        0.0,
        mismatches == 0,
        f"chains={len(chains)} paths={len(paths)}",
    )


def _eigenvector_lift() -> AcceptanceOutcome:
    worst_residual, worst_norm = 0.0, 0.0
    for name in config:
        chain = truncate(build_walk(from_preset(name)), 200)
        ops = build_operators(chain)
        pairs = eigensolve(chain.jacobi())
        for vector in lift(pairs, ops):
            at_edge = abs(abs(vector.lam) - 1) <= pairs.window
            expected = 1.0 if at_edge else 2 * (1 - vector.lam**2)
            worst_residual = max(worst_residual, vector.residual)
            worst_norm = max(worst_norm, abs(vector.norm_sq - expected))

    observed = max(worst_residual, worst_norm)
    return (
        "lift residual and norm deviation below 1e-9 at N=200",
        observed,
        1e-9,
        observed <= 1e-9,
        f"residual={worst_residual:.2e} norm={worst_norm:.2e}",
    )


def _signed_reflected() -> AcceptanceOutcome:
    eigen_error, overlap, identity = 0.0, 0.0, 0.0
    for name in BASE_SCENARIOS:
        walk = build_walk(from_preset(f"{name}_two_loops"))
        ops = build_operators(truncate(walk, 200))
        vectors = signed_reflected_basis(
            walk, (0, 3), 200, basis=ops.basis, include_terminal=False
        ).matrix()
        eigen_error = max(
            eigen_error, float(np.abs(ops.apply_U(vectors) + vectors).max())
        )
        overlap = max(
            overlap,
            float(np.abs(ops.incidence.T @ vectors).max()),
            float(np.abs(ops.swapped.T @ vectors).max()),
        )
        identity = max(identity, eta_norm_terminal(walk, 3, N=200).identity_residual)

    passed = eigen_error <= 1e-9 and overlap <= 1e-10 and identity <= 1e-10
    return (
        "U eta = -eta within 1e-9 and overlaps and norm identity within 1e-10",
        max(eigen_error, overlap, identity),
        1e-9,
        passed,
        f"eigen={eigen_error:.2e} overlap={overlap:.2e} identity={identity:.2e}",
    )


def _recurrence_taxonomy() -> AcceptanceOutcome:
    expected = {
        ("example_a", ()): "transient",
        ("example_b", ()): "null_recurrent",
        ("example_c", ()): "positive_recurrent",
        ("homogeneous", (0.3, 0.7)): "positive_recurrent",
        ("homogeneous", (0.5, 0.5)): "null_recurrent",
        ("homogeneous", (0.7, 0.3)): "transient",
    }
    wrong, declared = [], []
    for (family, params), label in expected.items():
        report = classify(make_family(family, params))
        if report.recurrence_class != label:
            wrong.append(f"{family}{params}={report.recurrence_class}")
        if not report.verified:
            declared.append(family)

    return (
        "examples a b c and homogeneous walks classify as expected",
        float(len(wrong)),
        0.0,
        not wrong,
        " ".join(wrong)
        or f"declared fallback used for: {' '.join(declared) or 'none'}",
    )


def _closed_form() -> AcceptanceOutcome:
    walk = make_family("homogeneous", (0.3, 0.7))
    N, T = 300, 10**4
    ops = build_operators(truncate(walk, N))
    psi0 = arc_state(ops.basis, 0, "R")
    direct = direct_limit_measures(ops, psi0, [T])[T].table

    gap = direct.sup_distance(homogeneous_closed_form_table(0.3, 0.7, 0, N), upto=20)
    bound, _ = lower_bound_table(ops, psi0, 0, stationary_distribution(walk, N))
    excess = float(np.max(bound.values - direct.values))
    return (
        "direct matches 2 pi(0) pi(i) within 1e-2 and dominates the doubled bound",
        gap,
        1e-2,
        gap <= 1e-2 and excess <= 5e-3,
        f"bound_excess={excess:.2e}",
    )


def _localized_setup(walk, N: int, sizes: Tuple[int, int] = (200, 400)):
    """
    Arc operators of the truncation at N and the state
    (-|0;O> + |0;R>)/sqrt(2) made orthogonal to the mass point lifts.

    Only eigenpairs at mass points are lifted, the walks here carry none
    or few, so N may reach the thousands.
    """

    values = [point.value for point in walk_mass_points(walk, sizes)]
    chain = truncate(walk, N)
    ops = build_operators(chain)
    lifts = lift_mass_points(eigensolve(chain.jacobi()), ops, values) if values else []
    psi0 = orthogonalize_against_mass_points(
        custom_state(ops.basis, 0, {"O": -1.0, "R": 1.0}), lifts
    )
    return ops, psi0


def _h_s_mass(walk, ops, psi0) -> np.ndarray:
    reflected = signed_reflected_basis(walk, None, ops.chain.N, basis=ops.basis)
    return h_s_projection_measure(reflected, psi0).values


def _localization_dichotomy() -> AcceptanceOutcome:
    # continuous spectrum mass left on each site falls off like 1/N
    N, T = LOCALIZATION_SIZE, 10**4
    base = make_family("homogeneous", (0.5, 0.5))

    one_loop = add_self_loop(base, 0, 0.5, "right")
    ops, psi0 = _localized_setup(one_loop, N)
    hs_one = float(_h_s_mass(one_loop, ops, psi0).max())
    direct_one = float(direct_limit_measures(ops, psi0, [T])[T].table.values.max())

    two_loops = add_self_loop(one_loop, 3, 0.4, "proportional")
    ops, psi0 = _localized_setup(two_loops, N)
    direct = direct_limit_measures(ops, psi0, [T])[T].table
    formula = corollary3_table(two_loops, psi0, N, basis=ops.basis).table
    gap = direct.sup_distance(formula, upto=3)
    hs_outside = float(_h_s_mass(two_loops, ops, psi0)[4:].max())
    direct_outside = float(direct.values[4:].max())
    # mass left to the continuous part spreads below the two-method tolerance
    spread = defaults["CONFIG_CHECK_TOLERANCES"]["two_method"]

    passed = (
        hs_one <= 1e-9
        and direct_one <= spread
        and gap <= 2e-3
        and hs_outside <= 1e-9
        and direct_outside <= spread
    )
    return (
        "no H^(S) mass with one loop and the localized formula with two",
        gap,
        2e-3,
        passed,
        f"N={N} T={T} hs_one={hs_one:.2e} direct_one={direct_one:.2e} "
        f"hs_outside={hs_outside:.2e} direct_outside={direct_outside:.2e}",
    )


def _corollary2() -> AcceptanceOutcome:
    # the one-loop truncation holds no H^(S) vector, the localized mass only
    # shows while the wave has not come back from the boundary, so T <= N
    N = T = LOCALIZATION_SIZE
    walk = add_self_loop(make_family("example_a"), 0, 0.5, "right")
    ops, psi0 = _localized_setup(walk, N)
    direct = direct_limit_measures(ops, psi0, [T])[T].table
    formula = corollary2_table(walk, psi0, N, basis=ops.basis).table
    gap = direct.sup_distance(formula)

    smallest = float(_h_s_mass(walk, ops, psi0)[:21].min())
    return (
        "direct matches the localized formula and H^(S) mass reaches site 20",
        gap,
        2e-3,
        gap <= 2e-3 and smallest > 0,
        f"N={N} T={T} smallest_hs_mass={smallest:.2e}",
    )


def _support_table() -> AcceptanceOutcome:
    transient = eta_norm_terminal(
        add_self_loop(make_family("example_a"), 0, 0.5, "right"), 0
    )
    recurrent = eta_norm_terminal(
        add_self_loop(make_family("example_b"), 0, 0.5, "right"), 0
    )
    passed = (
        transient.series.status == "stabilized"
        and recurrent.series.status == "diverged"
    )
    return (
        "terminal norm stabilizes for example_a and diverges for example_b",
        float(not passed),
        0.0,
        passed,
        f"example_a={transient.series.status}:{transient.partial_sums[-1]:.6g} "
        f"example_b={recurrent.series.status}:{recurrent.partial_sums[-1]:.6g} "
        f"ratio={recurrent.series.ratio_estimate:.4f}",
    )


def _conjugation_order() -> AcceptanceOutcome:
    left, right = 0.0, 0.0
    for name in BASE_SCENARIOS:
        walk = build_walk(from_preset(name))
        left = max(left, conjugation_residual(walk, 50, "inverse_left"))
        right = max(right, conjugation_residual(walk, 50, "inverse_right"))
    return (
        "J = D^(-1/2) M D^(1/2) and the reversed order differs",
        left,
        1e-12,
        left <= 1e-12 and right > 1e-6,
        f"inverse_right={right:.2e}",
    )


def _determinism() -> AcceptanceOutcome:
    scenario = from_preset("homogeneous_pr")
    contents = []
    # files are read back right away since QWALKLAB_OUTPUT_ROOT may send
    # both runs to the same directory
    for _ in range(2):
        with tempfile.TemporaryDirectory() as root:
            files = run_scenario(scenario, root).files
            contents.append(
                {AnyPath(path).name: AnyPath(path).read_bytes() for path in files}
            )

    first, second = contents
    differing = sorted(
        name for name in set(first) | set(second) if first.get(name) != second.get(name)
    )
    return (
        "two runs write byte-identical files",
        float(len(differing)),
        0.0,
        not differing,
        " ".join(differing) or f"{len(first)} files identical",
    )


@dataclass(frozen=True)
class AcceptanceCheck:
    name: str
    module: str
    description: str
    function: Callable[[], AcceptanceOutcome]


ACCEPTANCE_CHECKS: Tuple[AcceptanceCheck, ...] = (
    AcceptanceCheck(
        "operator_algebra",
        "arc-space",
        "S, C, U and W identities on random chains",
        _operator_algebra,
    ),
    AcceptanceCheck(
        "dimension_counts",
        "spectral",
        "H^(S) dimensions on random chains and paths",
        _dimension_counts,
    ),
    AcceptanceCheck(
        "eigenvector_lift",
        "spectral",
        "lifted eigenvectors of every bundled walk",
        _eigenvector_lift,
    ),
    AcceptanceCheck(
        "signed_reflected",
        "spectral",
        "signed reflected vectors for loops at 0 and 3",
        _signed_reflected,
    ),
    AcceptanceCheck(
        "recurrence_taxonomy",
        "rw-model",
        "recurrence classes of the bundled walks",
        _recurrence_taxonomy,
    ),
    AcceptanceCheck(
        "conjugation_order",
        "rw-model",
        "Jacobi matrix as conjugated transition matrix",
        _conjugation_order,
    ),
    AcceptanceCheck(
        "closed_form",
        "measures",
        "homogeneous closed form and doubled bound",
        _closed_form,
    ),
    AcceptanceCheck(
        "localization_dichotomy",
        "measures",
        "one loop versus two loops on a null recurrent walk",
        _localization_dichotomy,
    ),
    AcceptanceCheck(
        "corollary2",
        "measures",
        "transient walk with a loop at 0",
        _corollary2,
    ),
    AcceptanceCheck(
        "support_table",
        "measures",
        "terminal vector norms for transient and recurrent walks",
        _support_table,
    ),
    AcceptanceCheck(
        "determinism",
        "scenario-cli",
        "byte-identical repeated runs",
        _determinism,
    ),
)


def list_checks(module: Optional[str] = None) -> Tuple[AcceptanceCheck, ...]:
    """
    Acceptance checks, restricted to one module when given.
    """

    return tuple(
        check
        for check in ACCEPTANCE_CHECKS
        if module is None or check.module == module
    )


def run_acceptance_check(check: AcceptanceCheck) -> CheckRecord:
    """
    Run one acceptance check, turning errors into failed records.
    """

    started = time.perf_counter()
    try:
        expected, observed, tolerance, passed, detail = check.function()
    except QWalkLabException as exc:
        expected, observed, tolerance = check.description, float("nan"), 0.0
        passed, detail = False, str(exc)
    runtime = time.perf_counter() - started
    logger.info(
        "Acceptance check %s %s in %.2fs",
        check.name,
        "passed" if passed else "failed",
        runtime,
    )

    return CheckRecord(
        name=check.name,
        module=check.module,
        expected=expected,
        observed=float(observed),
        tolerance=float(tolerance),
        passed=bool(passed),
        detail=detail,
        runtime=runtime,
    )


@python_app
def _acceptance_app(check: AcceptanceCheck) -> CheckRecord:
    """
    Run one acceptance check as a Parsl app.

    Args:
        check: AcceptanceCheck:
            Check to run.

    Returns:
        CheckRecord
    """

    from qwalklab.verify import run_acceptance_check

    return run_acceptance_check(check)


def verify_all(
    module: Optional[str] = None,
    output_root: Optional[Union[str, AnyPath]] = None,
    parsl_config: Optional[parsl.Config] = None,
) -> VerificationReport:
    """
    Run the acceptance suite and write ``verify/report.csv``.

    Args:
        module: Optional[str]:  (Default value = None)
            Restrict to the checks of one module.
        output_root: Optional[Union[str, AnyPath]]:  (Default value = None)
            Root for the report, QWALKLAB_OUTPUT_ROOT wins when set.
        parsl_config: Optional[parsl.Config]:  (Default value = None)
            Optional Parsl configuration to run the checks with.

    Returns:
        VerificationReport:
            One record per check in suite order; failures are records,
            never exceptions.
    """

    _load_parsl(parsl_config)

    # submit every check before collecting any result
    futures = [_acceptance_app(check) for check in list_checks(module)]
    report = VerificationReport(records=tuple(future.result() for future in futures))

    _write_csv(report.to_arrow(), _output_root(output_root) / "verify" / "report.csv")
    if not report.passed:
        logger.warning("Acceptance checks failed: %s", ", ".join(report.failures))
    return report
