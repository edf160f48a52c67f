"""
QWalkLab: experiment - running declarative scenarios end to end.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import parsl
import pyarrow as pa
from cloudpathlib import AnyPath
from parsl.app.app import join_app, python_app

from qwalklab.arcs import WalkOperators
from qwalklab.exceptions import PreconditionException, QWalkLabException
from qwalklab.measures import (
    AnyInitialState,
    LimitMeasureResult,
    arc_mixture_state,
    arc_state,
    avoid_localization_state,
    corollary2_table,
    corollary3_table,
    custom_state,
    direct_limit_measures,
    eta_norm_terminal,
    h_s_projection_measure,
    homogeneous_closed_form_table,
    incidence_state,
    lower_bound_table,
    orthogonalize_against_mass_points,
    richardson_gap,
    spectral_limit_measure,
    supp_h_s,
)
from qwalklab.sources import ScenarioConfig, load_scenario, validate
from qwalklab.spectral import (
    MassPoint,
    SpectralData,
    build_spectral_data,
    expected_h_s_dimensions,
    h_s_brute_force,
    signed_reflected_basis,
    spectral_summary,
    walk_mass_points,
)
from qwalklab.tables import CheckRecord, MeasureTable, VerificationReport
from qwalklab.utils import (
    _join_measure_columns,
    _load_parsl,
    _output_root,
    _write_csv,
)
from qwalklab.walks import (
    HalfLineWalk,
    RecurrenceReport,
    add_self_loop,
    classify,
    make_family,
    stationary_distribution,
    truncate,
)

logger = logging.getLogger(__name__)

ScenarioSource = Union[str, AnyPath, ScenarioConfig]

# stages in execution order, ``run`` performs all of them
STAGES: Tuple[str, ...] = ("classify", "spectrum", "measure", "sweep", "check")
RUN_STAGES: Tuple[str, ...] = ("classify", "spectrum", "measure", "check")

# library module each scenario check exercises
CHECK_MODULES: Dict[str, str] = {
    "classification": "rw-model",
    "lift_residual": "spectral",
    "signed_reflected": "spectral",
    "dimension_counts": "spectral",
    "mass_points": "spectral",
    "closed_form": "measures",
    "lower_bound": "measures",
    "two_method": "measures",
    "corollary2": "measures",
    "corollary3": "measures",
    "no_localization": "measures",
    "support": "measures",
    "eta_norm": "measures",
}

# vertices compared by the closed form check
CLOSED_FORM_VERTICES = 21
# sites which must carry mass when the predicted support is unbounded
SUPPORT_SAMPLE_SITES = 21


def build_walk(scenario: ScenarioConfig) -> HalfLineWalk:
    """
    Base family of the scenario with its loops added in order.
    """

    walk = make_family(scenario.walk_family, scenario.walk_params)
    for loop in scenario.loops:
        walk = add_self_loop(walk, loop.site, loop.mass, loop.take_from)
    return walk


def _series_options(scenario: ScenarioConfig) -> Dict[str, float]:
    return {
        "stabilize_tol": scenario.option("stabilize_tol"),
        "diverge_threshold": scenario.option("diverge_threshold"),
        "ratio_margin": scenario.option("ratio_margin"),
    }


def build_initial_state(
    scenario: ScenarioConfig, ops: WalkOperators, data: SpectralData
) -> AnyInitialState:
    """
    Initial state of the scenario on the arc space of ``ops``.

    Args:
        scenario: ScenarioConfig:
            Scenario holding the initial state spec.
        ops: WalkOperators:
            Operators of the truncation.
        data: SpectralData:
            Spectral data of the same truncation, for mass point projection.

    Returns:
        AnyInitialState
    """

    spec = scenario.initial_state
    coefficients = dict(spec.coefficients)

    if spec.kind == "incidence":
        return incidence_state(ops, spec.vertex)
    if spec.kind == "arc":
        return arc_state(ops.basis, spec.vertex, spec.direction)
    if spec.kind == "custom":
        return custom_state(ops.basis, spec.vertex, coefficients)
    if spec.kind == "hs_projected":
        return orthogonalize_against_mass_points(
            custom_state(ops.basis, spec.vertex, coefficients), data.mass_point_lifts()
        )
    if spec.kind == "arc_mixture":
        return arc_mixture_state(ops.basis, spec.vertex)
    if spec.kind == "avoid_localization":
        return avoid_localization_state(ops, spec.vertex, coefficients or None)

    raise PreconditionException(f"Unknown initial state kind {spec.kind!r}")


@dataclass(eq=False)
class TruncationResult:
    """
    Everything computed on one truncation size.
    """

    N: int
    data: SpectralData
    psi0: AnyInitialState
    spectral: Optional[LimitMeasureResult] = None
    direct: Dict[int, LimitMeasureResult] = field(default_factory=dict)
    stationary: Optional[MeasureTable] = None
    lower_bound: Optional[MeasureTable] = None
    closed_form: Optional[MeasureTable] = None

    @property
    def ops(self) -> WalkOperators:
        return self.data.ops


@dataclass(eq=False)
class ScenarioContext:
    """
    Walk, classification and per-truncation results of one scenario.
    """

    scenario: ScenarioConfig
    walk: HalfLineWalk
    report: RecurrenceReport
    mass_points: List[MassPoint] = field(default_factory=list)
    truncations: Dict[int, TruncationResult] = field(default_factory=dict)

    @property
    def largest(self) -> TruncationResult:
        return self.truncations[max(self.truncations)]

    @property
    def smallest(self) -> TruncationResult:
        return self.truncations[min(self.truncations)]


@dataclass(frozen=True)
class ScenarioResult:
    """
    Outcome of one scenario run: report, output location and files written.
    """

    name: str
    output_path: str
    report: VerificationReport
    files: Tuple[str, ...]

    @property
    def passed(self) -> bool:
        return self.report.passed


def _closed_form(
    context: ScenarioContext, N: int, psi0: AnyInitialState, data: SpectralData
) -> Optional[MeasureTable]:
    """
    Exact measure when the scenario matches a known formula: a loop-free
    homogeneous walk started from |0;R> or an arc mixture, a single loop at 0
    of a transient walk, or loops at 0 and n of a recurrent walk.
    """

    scenario, walk, report = context.scenario, context.walk, context.report
    state = scenario.initial_state
    loops = walk.loop_sites

    try:
        if scenario.walk_family == "homogeneous" and not walk.has_loops:
            if state.kind == "arc_mixture" or (
                state.kind == "arc" and state.vertex == 0 and state.direction == "R"
            ):
                p, q = scenario.walk_params[:2]
                return homogeneous_closed_form_table(p, q, state.vertex, N)
        elif walk.loop_tail is None and loops == (0,) and not report.is_recurrent:
            return corollary2_table(
                walk,
                psi0,
                N,
                basis=data.ops.basis,
                report=report,
                cutoff=int(scenario.option("cutoff")),
                **_series_options(scenario),
            ).table
        elif (
            walk.loop_tail is None
            and len(loops) == 2
            and loops[0] == 0
            and report.is_recurrent
        ):
            return corollary3_table(
                walk, psi0, N, basis=data.ops.basis, report=report
            ).table
    except PreconditionException as exc:
        logger.info("No closed form for %s at N=%d: %s", scenario.name, N, exc)
    return None


def prepare_context(
    scenario: ScenarioConfig, stages: Sequence[str] = RUN_STAGES
) -> ScenarioContext:
    """
    Classify the walk and, unless only classification was asked for,
    decompose every truncation and compute the requested measures.

    Args:
        scenario: ScenarioConfig:
            Validated scenario.
        stages: Sequence[str]:  (Default value = RUN_STAGES)
            Subset of STAGES.

    Returns:
        ScenarioContext
    """

    walk = build_walk(scenario)
    report = classify(
        walk, cutoff=int(scenario.option("cutoff")), **_series_options(scenario)
    )
    context = ScenarioContext(scenario=scenario, walk=walk, report=report)
    if set(stages) <= {"classify"}:
        return context

    sizes = scenario.truncation
    if len(sizes) < 2:
        sizes = (max(2, sizes[0] // 2), sizes[0])
    context.mass_points = walk_mass_points(
        walk,
        sizes,
        tail_fraction=scenario.option("tail_fraction"),
        tail_tol=scenario.option("tail_tol"),
        stability_tol=scenario.option("stability_tol"),
    )
    mass_values = [point.value for point in context.mass_points]
    needs_measures = bool({"measure", "sweep", "check"} & set(stages))

    for N in scenario.truncation:
        data = build_spectral_data(
            truncate(walk, N), walk, mass_point_values=mass_values
        )
        psi0 = build_initial_state(scenario, data.ops, data)
        result = TruncationResult(N=N, data=data, psi0=psi0)

        if needs_measures:
            result.spectral = spectral_limit_measure(
                data, psi0, window=scenario.option("cluster_window")
            )
            result.direct = direct_limit_measures(data.ops, psi0, scenario.horizon)
            logger.info(
                "Scenario %s reached T=%d at N=%d",
                scenario.name,
                scenario.largest_horizon,
                N,
            )
            if report.recurrence_class == "positive_recurrent":
                result.stationary = stationary_distribution(walk, N, report=report)
                result.lower_bound, _ = lower_bound_table(
                    data.ops,
                    psi0,
                    scenario.initial_state.vertex,
                    result.stationary,
                    hs_part=result.spectral.hs_part,
                )
            result.closed_form = _closed_form(context, N, psi0, data)

        context.truncations[N] = result

    return context


def _empty_column() -> pa.Table:
    return pa.Table.from_pydict(
        {
            "vertex": pa.array([], type=pa.int64()),
            "value": pa.array([], type=pa.float64()),
        }
    )


def _column(table: Optional[MeasureTable]) -> pa.Table:
    return _empty_column() if table is None else table.to_arrow()


def measures_table(result: TruncationResult, T: int) -> pa.Table:
    """
    Per-vertex measure columns of one truncation, ordered by vertex.
    """

    spectral = result.spectral
    return _join_measure_columns(
        result.N + 1,
        {
            "direct_value": _column(
                result.direct[T].table if T in result.direct else None
            ),
            "spectral_value": _column(None if spectral is None else spectral.table),
            "hr_part": _column(None if spectral is None else spectral.hr_part),
            "hs_part": _column(None if spectral is None else spectral.hs_part),
            "lower_bound": _column(result.lower_bound),
            "closed_form": _column(result.closed_form),
        },
    )


def classification_table(context: ScenarioContext) -> pa.Table:
    report = context.report
    return pa.Table.from_pydict(
        {
            "walk": [context.walk.name],
            "recurrence_class": [report.recurrence_class],
            "verified": [report.verified],
            "consistent_with_declared": [report.consistent_with_declared],
            "ct_status": [report.ct.status],
            "ct_value": pa.array([report.ct.value], type=pa.float64()),
            "ct_ratio": pa.array([report.ct.ratio_estimate], type=pa.float64()),
            "cr_status": [report.cr.status],
            "cr_value": pa.array([report.cr.value], type=pa.float64()),
            "cr_ratio": pa.array([report.cr.ratio_estimate], type=pa.float64()),
        }
    )


def convergence_table(context: ScenarioContext) -> pa.Table:
    """
    One row per (N, T): sup-norm gap between direct and spectral measures.
    """

    rows = [
        (N, T, result.direct[T].table.sup_distance(result.spectral.table))
        for N, result in sorted(context.truncations.items())
        for T in sorted(result.direct)
    ]
    return pa.Table.from_pydict(
        {
            "N": pa.array([row[0] for row in rows], type=pa.int64()),
            "T": pa.array([row[1] for row in rows], type=pa.int64()),
            "sup_gap": pa.array([row[2] for row in rows], type=pa.float64()),
        }
    )


def richardson_table(context: ScenarioContext) -> Optional[pa.Table]:
    """
    Spectral values at the two largest truncations and their gap.
    """

    sizes = sorted(context.truncations)
    if len(sizes) < 2:
        return None
    gap = richardson_gap(
        context.truncations[sizes[-2]].spectral.table,
        context.truncations[sizes[-1]].spectral.table,
    )
    return pa.Table.from_pydict(
        {
            "vertex": pa.array(gap["vertex"], type=pa.int64()),
            "value_n": pa.array(gap["value_n"], type=pa.float64()),
            "value_2n": pa.array(gap["value_2n"], type=pa.float64()),
            "gap": pa.array(gap["gap"], type=pa.float64()),
        }
    )


def _reflected_hs(context: ScenarioContext, result: TruncationResult) -> MeasureTable:
    """
    H^(S) part from the signed reflected vectors, the terminal one
    included when it is square-summable.
    """

    walk = context.walk
    if not walk.loop_sites or walk.loop_tail is not None:
        return MeasureTable(
            values=np.zeros(result.N + 1), provenance="signed_reflected_projection"
        )
    reflected = signed_reflected_basis(
        walk,
        None,
        result.N,
        basis=result.ops.basis,
        include_terminal=True,
        cutoff=int(context.scenario.option("cutoff")),
        **_series_options(context.scenario),
    )
    return h_s_projection_measure(reflected, result.psi0)


# each check returns (expected, observed, passed, detail)
CheckOutcome = Tuple[str, float, bool, str]


def _check_classification(context: ScenarioContext, tol: float) -> CheckOutcome:
    declared = context.scenario.declared_class
    report = context.report
    matches = declared is None or report.recurrence_class == declared
    observed = 0.0 if matches and report.verified else 1.0
    return (
        declared or "verified classification",
        observed,
        observed <= tol,
        f"found {report.recurrence_class} verified={report.verified}",
    )


def _expected_norm_sq(lam: float, window: float) -> float:
    return 1.0 if abs(abs(lam) - 1) <= window else 2 * (1 - lam**2)


def _check_lift_residual(context: ScenarioContext, tol: float) -> CheckOutcome:
    data = context.largest.data
    window = data.pairs.window
    residual = max((vector.residual for vector in data.lifts), default=0.0)
    norm_error = max(
        (
            abs(vector.norm_sq - _expected_norm_sq(vector.lam, window))
            for vector in data.lifts
        ),
        default=0.0,
    )
    return (
        "||Uq - e^(i theta) q|| and ||q||^2 deviation below tolerance",
        max(residual, norm_error),
        max(residual, norm_error) <= tol,
        f"residual={residual:.3e} norm_error={norm_error:.3e} "
        f"lifts={len(data.lifts)}",
    )


def _check_signed_reflected(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    ops = result.ops
    reflected = signed_reflected_basis(
        context.walk, None, result.N, basis=ops.basis, include_terminal=False
    )
    vectors = reflected.matrix()
    if vectors.shape[1] == 0:
        return ("at least two loops", float("inf"), False, "no vectors between loops")

    eigen_error = float(np.abs(ops.apply_U(vectors) + vectors).max())
    overlap = float(
        max(
            np.abs(ops.incidence.T @ vectors).max(),
            np.abs(ops.swapped.T @ vectors).max(),
        )
    )
    return (
        "U eta = -eta and eta orthogonal to every a_j and b_j",
        max(eigen_error, overlap),
        max(eigen_error, overlap) <= tol,
        f"eigen_error={eigen_error:.3e} overlap={overlap:.3e} "
        f"vectors={vectors.shape[1]}",
    )


def _check_dimension_counts(context: ScenarioContext, tol: float) -> CheckOutcome:
    data = context.smallest.data
    expected = expected_h_s_dimensions(data.ops.basis, data.pairs)
    brute = h_s_brute_force(data.ops).dimensions
    analytic = {1: data.hs_plus.shape[1], -1: data.hs_minus.shape[1]}
    observed = float(
        sum(
            abs(brute[sign] - expected[sign]) + abs(analytic[sign] - expected[sign])
            for sign in (1, -1)
        )
    )
    return (
        f"dim +1 part {expected[1]} and dim -1 part {expected[-1]}",
        observed,
        observed <= tol,
        f"brute_force={brute[1]}/{brute[-1]} "
        f"{data.hs_source}={analytic[1]}/{analytic[-1]}",
    )


def _check_mass_points(context: ScenarioContext, tol: float) -> CheckOutcome:
    values = np.array([point.value for point in context.mass_points])
    distance = float(np.abs(values - 1).min()) if values.size else float("inf")
    detail = "accepted " + " ".join(f"{value:.12g}" for value in values)
    if context.report.recurrence_class == "positive_recurrent":
        return ("mass point at 1", distance, distance <= tol, detail)
    return ("no mass point at 1", distance, distance > tol, detail)


def _direct(result: TruncationResult, scenario: ScenarioConfig) -> MeasureTable:
    return result.direct[scenario.largest_horizon].table


def _check_closed_form(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    if result.closed_form is None:
        return (
            "closed form available",
            float("inf"),
            False,
            "scenario matches no closed form",
        )
    gap = _direct(result, context.scenario).sup_distance(
        result.closed_form, upto=CLOSED_FORM_VERTICES - 1
    )
    return (
        f"direct matches {result.closed_form.provenance} "
        f"on 0..{CLOSED_FORM_VERTICES - 1}",
        gap,
        gap <= tol,
        f"N={result.N} T={context.scenario.largest_horizon}",
    )


def _check_lower_bound(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    if result.lower_bound is None:
        return (
            "stationary distribution",
            float("inf"),
            False,
            "walk is not positive recurrent",
        )
    direct = _direct(result, context.scenario)
    excess = float(np.max(result.lower_bound.values - direct.values))
    return (
        "direct measure dominates the lower bound",
        excess,
        excess <= tol,
        f"doubled={not result.ops.chain.loop_set}",
    )


def _check_two_method(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    gaps = {
        T: table.table.sup_distance(result.spectral.table)
        for T, table in sorted(result.direct.items())
    }
    gap = gaps[context.scenario.largest_horizon]
    return (
        "direct and spectral measures agree",
        gap,
        gap <= tol,
        " ".join(f"T={T}:{value:.3e}" for T, value in gaps.items()),
    )


def _check_corollary(context: ScenarioContext, tol: float, name: str) -> CheckOutcome:
    result = context.largest
    if result.closed_form is None or name not in result.closed_form.provenance:
        return (
            f"{name} applies",
            float("inf"),
            False,
            "scenario does not satisfy its conditions",
        )
    direct = _direct(result, context.scenario)
    if name == "corollary2":
        gap = direct.sup_distance(result.closed_form)
        return (
            "direct matches the localized measure",
            gap,
            gap <= tol,
            f"N={result.N}",
        )

    last = max(context.walk.loop_sites)
    gap = direct.sup_distance(result.closed_form, upto=last)
    spectral_outside = float(
        np.abs(result.spectral.hs_part.values[last + 1 :]).max(initial=0.0)
    )
    direct_outside = float(direct.values[last + 1 :].max(initial=0.0))
    outside_ok = (
        spectral_outside <= context.scenario.tolerance("no_localization")
        and direct_outside <= context.scenario.tolerance("two_method")
    )
    return (
        f"direct matches the localized measure on 0..{last} and both vanish beyond",
        gap,
        gap <= tol and outside_ok,
        f"spectral_outside={spectral_outside:.3e} direct_outside={direct_outside:.3e}",
    )


def _check_no_localization(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    hs_max = max(
        float(np.abs(result.spectral.hs_part.values).max()),
        float(np.abs(_reflected_hs(context, result).values).max()),
    )
    direct_max = float(_direct(result, context.scenario).values.max())
    return (
        "H^(S) part vanishes and the direct measure spreads out",
        hs_max,
        hs_max <= tol and direct_max <= context.scenario.tolerance("two_method"),
        f"direct_sup={direct_max:.3e}",
    )


def _check_support(context: ScenarioContext, tol: float) -> CheckOutcome:
    result = context.largest
    predicted = supp_h_s(context.walk, recurrence=context.report)
    hs_values = _reflected_hs(context, result).values
    outside = float(np.abs(hs_values[~predicted.mask(result.N)]).max(initial=0.0))
    passed = outside <= tol

    detail = f"predicted [{predicted.start}, {predicted.stop}]"
    single_loop = len(context.walk.loop_sites) == 1
    if predicted.stop is None and not predicted.empty and single_loop:
        sampled = hs_values[predicted.start : min(SUPPORT_SAMPLE_SITES, result.N)]
        passed = passed and bool((sampled > tol).all())
        detail += f" smallest_inside={sampled.min():.3e}"
    return ("H^(S) part supported on the predicted set", outside, passed, detail)


def _check_eta_norm(context: ScenarioContext, tol: float) -> CheckOutcome:
    walk = context.walk
    last = max(walk.loop_sites)
    report = eta_norm_terminal(
        walk,
        last,
        cutoff=int(context.scenario.option("cutoff")),
        **_series_options(context.scenario),
    )
    expected_summable = context.report.recurrence_class == "transient"
    return (
        "norm identity holds and square-summable iff transient",
        report.identity_residual,
        report.identity_residual <= tol and report.square_summable == expected_summable,
        f"series={report.series.status} partial_sum={report.partial_sums[-1]:.6g}",
    )


CHECKS: Dict[str, Callable[[ScenarioContext, float], CheckOutcome]] = {
    "classification": _check_classification,
    "lift_residual": _check_lift_residual,
    "signed_reflected": _check_signed_reflected,
    "dimension_counts": _check_dimension_counts,
    "mass_points": _check_mass_points,
    "closed_form": _check_closed_form,
    "lower_bound": _check_lower_bound,
    "two_method": _check_two_method,
    "corollary2": lambda context, tol: _check_corollary(context, tol, "corollary2"),
    "corollary3": lambda context, tol: _check_corollary(context, tol, "corollary3"),
    "no_localization": _check_no_localization,
    "support": _check_support,
    "eta_norm": _check_eta_norm,
}


def run_check(context: ScenarioContext, name: str) -> CheckRecord:
    """
    Run one named check, turning library errors into failed records.
    """

    tolerance = context.scenario.tolerance(name)
    started = time.perf_counter()
    try:
        expected, observed, passed, detail = CHECKS[name](context, tolerance)
    except QWalkLabException as exc:
        expected, observed, passed = "check completes", float("nan"), False
        detail = str(exc)
    runtime = time.perf_counter() - started

    logger.info(
        "Check %s of %s %s in %.2fs",
        name,
        context.scenario.name,
        "passed" if passed else "failed",
        runtime,
    )
    return CheckRecord(
        name=name,
        module=CHECK_MODULES[name],
        expected=expected,
        observed=float(observed),
        tolerance=float(tolerance),
        passed=bool(passed),
        detail=detail,
        runtime=runtime,
    )


def run_scenario(
    scenario: ScenarioConfig,
    output_root: Optional[Union[str, AnyPath]] = None,
    stages: Sequence[str] = RUN_STAGES,
) -> ScenarioResult:
    """
    Run the requested stages of one scenario and write their artifacts.

    Args:
        scenario: ScenarioConfig:
            Validated scenario.
        output_root: Optional[Union[str, AnyPath]]:  (Default value = None)
            Root under which the scenario's output directory is created.
        stages: Sequence[str]:  (Default value = RUN_STAGES)
            Subset of STAGES.

    Returns:
        ScenarioResult
    """

    unknown = set(stages) - set(STAGES)
    if unknown:
        raise PreconditionException(f"Unknown stages {sorted(unknown)}")

    destination = _output_root(output_root) / scenario.output.directory
    context = prepare_context(scenario, stages)
    files = [
        _write_csv(classification_table(context), destination / "classification.csv")
    ]

    for N, result in sorted(context.truncations.items()):
        if "spectrum" in stages and scenario.output.spectrum:
            files.append(
                _write_csv(
                    spectral_summary(result.data), destination / f"spectrum_N{N}.csv"
                )
            )
        if "measure" in stages or "check" in stages:
            files.append(
                _write_csv(
                    measures_table(result, scenario.largest_horizon),
                    destination / f"measures_N{N}.csv",
                )
            )

    if "sweep" in stages:
        files.append(_write_csv(convergence_table(context), destination / "sweep.csv"))
    if ("measure" in stages or "check" in stages) and scenario.output.convergence:
        files.append(
            _write_csv(convergence_table(context), destination / "convergence.csv")
        )
        richardson = richardson_table(context)
        if richardson is not None:
            files.append(_write_csv(richardson, destination / "richardson.csv"))

    report = VerificationReport(records=())
    if "check" in stages:
        report = VerificationReport(
            records=tuple(run_check(context, name) for name in scenario.checks)
        )
        files.append(_write_csv(report.to_arrow(), destination / "report.csv"))
        if not report.passed:
            logger.warning(
                "Scenario %s failed checks: %s",
                scenario.name,
                ", ".join(report.failures),
            )

    return ScenarioResult(
        name=scenario.name,
        output_path=str(destination),
        report=report,
        files=tuple(str(path) for path in files),
    )


@python_app
def _run_scenario_app(
    scenario: ScenarioConfig,
    output_root: Optional[str],
    stages: Tuple[str, ...],
) -> ScenarioResult:
    """
    Run one scenario as a Parsl app.

    Args:
        scenario: ScenarioConfig:
            Validated scenario.
        output_root: Optional[str]:
            Root for the scenario's output directory.
        stages: Tuple[str, ...]:
            Stages to run.

    Returns:
        ScenarioResult
    """

    from qwalklab.experiment import run_scenario

    return run_scenario(scenario, output_root, stages)


@python_app
def _return_future(input: List[ScenarioResult]) -> List[ScenarioResult]:
    """
    Wrap already computed results as a future for a join_app.
    """

    return input


@join_app
def _run_batch(
    scenarios: Tuple[ScenarioConfig, ...],
    output_root: Optional[str],
    stages: Tuple[str, ...],
):
    """
    Run scenarios in parallel, each owning its output directory.

    Returns:
        List[ScenarioResult]:
            Results in the order of ``scenarios``.
    """

    from qwalklab.experiment import _return_future, _run_scenario_app

    # submit every scenario before waiting on any of them
    futures = [
        _run_scenario_app(scenario, output_root, stages) for scenario in scenarios
    ]
    return _return_future([future.result() for future in futures])


def run(
    config: Union[ScenarioSource, Sequence[ScenarioSource]],
    output_root: Optional[Union[str, AnyPath]] = None,
    parsl_config: Optional[parsl.Config] = None,
    stages: Sequence[str] = RUN_STAGES,
) -> int:
    """
    Run one or more scenarios and return the process exit status.

    Args:
        config: Union[str, AnyPath, ScenarioConfig, Sequence[...]]:
            Scenario file path(s) or parsed scenario(s).
        output_root: Optional[Union[str, AnyPath]]:  (Default value = None)
            Root for output directories, QWALKLAB_OUTPUT_ROOT wins when set.
        parsl_config: Optional[parsl.Config]:  (Default value = None)
            Optional Parsl configuration to use for running scenarios.
        stages: Sequence[str]:  (Default value = RUN_STAGES)
            Stages to run for every scenario.

    Returns:
        int:
            0 when every check passed, 1 otherwise.

    Example:

        .. code-block:: python

            from qwalklab.experiment import run

            # run a bundled scenario file with all checks
            run("scenarios/homogeneous_pr.ini", output_root="results")
    """

    configs = (
        list(config)
        if isinstance(config, (list, tuple))
        else [config]
    )
    scenarios = tuple(
        item if isinstance(item, ScenarioConfig) else load_scenario(item)
        for item in configs
    )

    _load_parsl(parsl_config)

    results = _run_batch(
        scenarios,
        None if output_root is None else str(output_root),
        tuple(stages),
    ).result()

    failed = [result.name for result in results if not result.passed]
    for result in results:
        logger.info("Scenario %s written to %s", result.name, result.output_path)
    if failed:
        logger.warning("Scenarios with failing checks: %s", ", ".join(failed))
        return 1
    return 0


def with_overrides(scenario: ScenarioConfig, **changes) -> ScenarioConfig:
    """
    Copy of a scenario with fields replaced, revalidated.
    """

    updated = replace(scenario, **changes)
    validate(updated)
    return updated
