"""
Time-averaged limit measures: spectral and direct computation, lower
bounds, closed forms and the localization formulas for walks with one
or two self loops.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from qwalklab.arcs import (
    ArcBasis,
    StateVector,
    WalkOperators,
    _arc_mass_to_vertices,
    build_arc_space,
    cesaro_averages,
    incidence_vector,
)
from qwalklab.exceptions import (
    ClassificationException,
    ParameterException,
    PreconditionException,
)
from qwalklab.presets import defaults
from qwalklab.spectral import LiftedEigenvector, SignedReflectedBasis, SpectralData
from qwalklab.tables import MeasureTable
from qwalklab.walks import (
    HalfLineWalk,
    RecurrenceReport,
    SeriesDiagnostics,
    _evaluate_series,
    classify,
    log_products,
    terminal_norm_series,
    truncate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InitialState:
    """
    Unit initial state anchored at one vertex.

    Attributes:
        anchor: int:
            Vertex whose incoming arcs carry the coefficients.
        coefficients: Tuple[Tuple[str, complex], ...]:
            (arc label, amplitude) pairs the state was prepared from.
        vector: StateVector:
            Amplitudes on the full arc basis.
        kind: str:
            How the state was prepared.
    """

    anchor: int
    coefficients: Tuple[Tuple[str, complex], ...]
    vector: StateVector
    kind: str


@dataclass(frozen=True, eq=False)
class MixedInitialState:
    """
    Probabilistic mixture of pure initial states.
    """

    components: Tuple[Tuple[float, InitialState], ...]
    kind: str = "mixture"

    @property
    def anchor(self) -> int:
        return self.components[0][1].anchor


AnyInitialState = Union[InitialState, MixedInitialState]


def _pure_components(state: AnyInitialState) -> Tuple[Tuple[float, StateVector], ...]:
    if isinstance(state, MixedInitialState):
        return tuple((weight, pure.vector) for weight, pure in state.components)
    return ((1.0, state.vector),)


def _labels_at(basis: ArcBasis, vertex: int) -> Tuple[str, ...]:
    arcs = basis.arcs_at(vertex)
    return tuple(basis.labels[k] for k in arcs)


def custom_state(
    basis: ArcBasis, vertex: int, coefficients: Mapping[str, complex]
) -> InitialState:
    """
    Normalized state sum_d alpha_d |vertex;d> from per-label coefficients.
    """

    vector = np.zeros(basis.arc_count, dtype=complex)
    for label, value in coefficients.items():
        vector[basis.index_of(vertex, label)] = complex(value)

    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ParameterException(f"Initial state at vertex {vertex} has zero norm")
    vector /= norm

    return InitialState(
        anchor=vertex,
        coefficients=tuple(
            (label, complex(vector[basis.index_of(vertex, label)]))
            for label in coefficients
        ),
        vector=vector,
        kind="custom",
    )


def arc_state(basis: ArcBasis, vertex: int, direction: str) -> InitialState:
    """
    Single arc state |vertex;direction>.
    """

    return InitialState(
        anchor=vertex,
        coefficients=((direction, 1.0 + 0j),),
        vector=basis.basis_vector(vertex, direction),
        kind="arc",
    )


def incidence_state(ops: WalkOperators, vertex: int) -> InitialState:
    """
    Incidence vector a_vertex as an initial state.
    """

    vector = incidence_vector(ops.basis, ops.chain, vertex)
    arcs = ops.basis.arcs_at(vertex)
    return InitialState(
        anchor=vertex,
        coefficients=tuple(
            (ops.basis.labels[k], complex(vector[k])) for k in arcs
        ),
        vector=vector,
        kind="incidence",
    )


def arc_mixture_state(basis: ArcBasis, vertex: int) -> AnyInitialState:
    """
    |vertex;R> and |vertex;L> with probability 1/2 each, |0;R> at vertex 0.
    """

    if vertex == 0:
        return arc_state(basis, 0, "R")
    return MixedInitialState(
        components=(
            (0.5, arc_state(basis, vertex, "R")),
            (0.5, arc_state(basis, vertex, "L")),
        )
    )


def avoid_localization_state(
    ops: WalkOperators,
    vertex: int,
    coefficients: Optional[Mapping[str, complex]] = None,
) -> InitialState:
    """
    State at ``vertex`` orthogonal to (sqrt(q), sqrt(r), sqrt(p)), so the
    stationary lower bound vanishes.

    Args:
        ops: WalkOperators:
            Operators of the truncation.
        vertex: int:
            Anchor vertex.
        coefficients: Optional[Mapping[str, complex]]:  (Default value = None)
            Starting coefficients, the first arc at the vertex with a
            nonzero remainder is used when None.

    Returns:
        InitialState
    """

    labels = _labels_at(ops.basis, vertex)
    incidence = incidence_vector(ops.basis, ops.chain, vertex)
    candidates = (
        [{label: 1.0} for label in labels] if coefficients is None else [coefficients]
    )
    for candidate in candidates:
        start = custom_state(ops.basis, vertex, candidate)
        vector = start.vector - np.vdot(incidence, start.vector) * incidence
        if np.linalg.norm(vector) >= 1e-12:
            break
    else:
        raise PreconditionException(
            f"No state at vertex {vertex} is orthogonal to its incidence vector"
        )
    return custom_state(
        ops.basis,
        vertex,
        {label: vector[ops.basis.index_of(vertex, label)] for label in labels},
    )


def orthogonalize_against_mass_points(
    state: InitialState, lifts: Sequence[LiftedEigenvector], tol: float = 1e-10
) -> InitialState:
    """
    Remove the components along mass point lifts by Gram-Schmidt and
    renormalize.
    """

    vector = np.array(state.vector, dtype=complex)
    if lifts:
        columns = np.column_stack([lifted.normalized for lifted in lifts])
        # two passes keep the residual overlap at rounding level
        for _ in range(2):
            for k in range(columns.shape[1]):
                vector -= np.vdot(columns[:, k], vector) * columns[:, k]

    norm = np.linalg.norm(vector)
    if norm < 1e-12:
        raise PreconditionException(
            "Initial state lies in the span of mass point lifts"
        )
    vector /= norm

    if lifts and np.abs(columns.conj().T @ vector).max() > tol:
        raise PreconditionException("Could not orthogonalize against mass point lifts")

    return InitialState(
        anchor=state.anchor,
        coefficients=state.coefficients,
        vector=vector,
        kind="hs_projected",
    )


@dataclass(frozen=True, eq=False)
class LimitMeasureResult:
    """
    Time-averaged limit measure with the method that produced it.

    Attributes:
        table: MeasureTable:
            Per-vertex values.
        method: str:
            ``direct_cesaro(T=..,N=..)``, ``spectral(N=..)`` or ``closed_form(..)``.
        hr_part: Optional[MeasureTable]:
            Contribution of eigenvectors lifted from the walk.
        hs_part: Optional[MeasureTable]:
            Contribution of the complement of span{a_u, b_u}.
        interference: Optional[MeasureTable]:
            Remainder from eigenspaces shared by both parts.
    """

    table: MeasureTable
    method: str
    hr_part: Optional[MeasureTable] = None
    hs_part: Optional[MeasureTable] = None
    interference: Optional[MeasureTable] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)


def _cluster_phases(phases: np.ndarray, window: float) -> Tuple[np.ndarray, int]:
    """
    Cluster ids for eigenphases on the circle plus the number of
    neighbouring clusters closer than 10 windows.
    """

    angles = np.angle(phases)
    angles[angles < -math.pi + window] += 2 * math.pi
    order = np.argsort(angles, kind="stable")
    gaps = np.diff(angles[order])
    breaks = gaps > window
    ids = np.empty(len(angles), dtype=int)
    ids[order] = np.concatenate(([0], np.cumsum(breaks)))
    near = int(np.count_nonzero(breaks & (gaps < 10 * window)))
    return ids, near


def _projected_arc_mass(
    vectors: np.ndarray, ids: np.ndarray, psi: StateVector
) -> np.ndarray:
    """
    sum over clusters of |Pi_cluster psi|^2 per arc.
    """

    if vectors.shape[1] == 0:
        return np.zeros(vectors.shape[0])

    counts = np.bincount(ids)
    single = counts[ids] == 1
    overlaps = vectors[:, single].conj().T @ psi
    arc_mass = (np.abs(vectors[:, single]) ** 2) @ (np.abs(overlaps) ** 2)

    for cluster in np.flatnonzero(counts > 1):
        members = vectors[:, ids == cluster]
        left, singular, _ = linalg.svd(members, full_matrices=False)
        basis = left[:, singular > 0.5]
        arc_mass = arc_mass + np.abs(basis @ (basis.conj().T @ psi)) ** 2

    return arc_mass


def spectral_limit_measure(
    decomp: SpectralData, psi0: AnyInitialState, window: Optional[float] = None
) -> LimitMeasureResult:
    """
    Time-averaged limit measure from eigenspace projectors of U.

    Args:
        decomp: SpectralData:
            Spectral data of the truncation psi0 lives on.
        psi0: AnyInitialState:
            Pure or mixed initial state.
        window: Optional[float]:  (Default value = None)
            Eigenphase clustering window.

    Returns:
        LimitMeasureResult:
            Total plus the split into lifted part, complement part and
            their interference.
    """

    window = defaults["CONFIG_CLUSTER_WINDOW"] if window is None else window
    vectors, phases, from_complement = decomp.eigenbasis()
    ids, near = _cluster_phases(phases, window)
    if near:
        logger.warning(
            "%d eigenphase clusters of %s lie within 10x the window %.1e",
            near,
            decomp.chain.label,
            window,
        )

    basis = decomp.ops.basis
    parts = {"total": 0.0, "hr": 0.0, "hs": 0.0}
    for weight, vector in _pure_components(psi0):
        parts["total"] = parts["total"] + weight * _projected_arc_mass(
            vectors, ids, vector
        )
        parts["hr"] = parts["hr"] + weight * _projected_arc_mass(
            vectors[:, ~from_complement], ids[~from_complement], vector
        )
        parts["hs"] = parts["hs"] + weight * _projected_arc_mass(
            vectors[:, from_complement], ids[from_complement], vector
        )

    method = f"spectral(N={decomp.chain.N})"
    tables = {
        name: MeasureTable(
            values=_arc_mass_to_vertices(
                basis, np.broadcast_to(arc_mass, (basis.arc_count,))
            ),
            provenance=f"{method}:{name}",
        )
        for name, arc_mass in parts.items()
    }
    interference = MeasureTable(
        values=tables["total"].values - tables["hr"].values - tables["hs"].values,
        provenance=f"{method}:interference",
    )

    return LimitMeasureResult(
        table=MeasureTable(
            values=tables["total"].values,
            provenance=method,
            diagnostics={"near_clusters": near},
        ),
        method=method,
        hr_part=tables["hr"],
        hs_part=tables["hs"],
        interference=interference,
        diagnostics={"near_clusters": near, "hs_source": decomp.hs_source},
    )


def direct_limit_measures(
    ops: WalkOperators, psi0: AnyInitialState, horizons: Iterable[int]
) -> Dict[int, LimitMeasureResult]:
    """
    Cesaro averages for several horizons, mixtures averaged by weight.
    """

    horizons = sorted(set(int(horizon) for horizon in horizons))
    totals: Dict[int, np.ndarray] = {T: 0.0 for T in horizons}
    drift = 0.0
    for weight, vector in _pure_components(psi0):
        for T, table in cesaro_averages(ops, vector, horizons).items():
            totals[T] = totals[T] + weight * table.values
            drift = max(drift, table.diagnostics["max_norm_drift"])

    results = {}
    for T in horizons:
        method = f"direct_cesaro(T={T},N={ops.chain.N})"
        results[T] = LimitMeasureResult(
            table=MeasureTable(
                values=totals[T],
                provenance=method,
                diagnostics={"max_norm_drift": drift},
            ),
            method=method,
            diagnostics={"max_norm_drift": drift},
        )
    return results


def direct_limit_measure(
    ops: WalkOperators, psi0: AnyInitialState, T: int, burn_in: None = None
) -> LimitMeasureResult:
    """
    Cesaro average over t = 0..T-1 by direct evolution.
    """

    if burn_in is not None:
        raise ParameterException("Burn-in is not supported, averages start at t=0")
    return direct_limit_measures(ops, psi0, [T])[T]


def cesaro_rate(
    ops: WalkOperators,
    psi0: AnyInitialState,
    spectral: LimitMeasureResult,
    horizons: Sequence[int],
) -> Dict[int, float]:
    """
    Sup-norm gap between direct averages and the spectral measure per horizon.
    """

    direct = direct_limit_measures(ops, psi0, horizons)
    return {
        T: result.table.sup_distance(spectral.table) for T, result in direct.items()
    }


def richardson_gap(
    table_n: MeasureTable, table_2n: MeasureTable
) -> Dict[str, np.ndarray]:
    """
    Values at N and 2N on their common vertices and the gap between them.
    """

    size = min(len(table_n), len(table_2n))
    return {
        "vertex": np.arange(size),
        "value_n": table_n.values[:size],
        "value_2n": table_2n.values[:size],
        "gap": table_2n.values[:size] - table_n.values[:size],
    }


@dataclass(frozen=True)
class BoundResult:
    """
    Lower bound value and which terms it includes.
    """

    value: float
    includes_stationary: bool
    doubled: bool


def lower_bound_table(
    ops: WalkOperators,
    psi0: AnyInitialState,
    v: int,
    pi: Optional[MeasureTable],
    hs_part: Optional[MeasureTable] = None,
    doubled: Optional[bool] = None,
) -> Tuple[MeasureTable, bool]:
    """
    |<a_v, psi0>|^2 pi(u) pi(v) + sum over arcs at u of |<delta, Pi_S psi0>|^2
    for every vertex u. The stationary term is doubled for loop-free chains.

    Returns:
        Tuple[MeasureTable, bool]:
            Bound per vertex and whether it was doubled.
    """

    size = ops.basis.vertex_count
    hs_values = np.zeros(size) if hs_part is None else hs_part.values[:size]
    doubled = not ops.chain.loop_set if doubled is None else doubled

    if pi is None:
        logger.warning(
            "Stationary distribution unavailable, bound keeps only H^(S) term"
        )
        return MeasureTable(values=hs_values, provenance="lower_bound(hs_only)"), False

    incidence = incidence_vector(ops.basis, ops.chain, v)
    overlap = sum(
        weight * abs(np.vdot(incidence, vector)) ** 2
        for weight, vector in _pure_components(psi0)
    )
    factor = 2.0 if doubled else 1.0
    stationary = factor * overlap * pi.values[:size] * pi.values[v]
    return (
        MeasureTable(values=stationary + hs_values, provenance="lower_bound"),
        doubled,
    )


def lower_bound_general(
    ops: WalkOperators,
    psi0: AnyInitialState,
    u: int,
    v: int,
    pi: Optional[MeasureTable],
    hs_part: Optional[MeasureTable] = None,
    doubled: Optional[bool] = None,
) -> BoundResult:
    """
    Lower bound on the limit measure at u for a state launched at v.

    Args:
        ops: WalkOperators:
            Operators of the truncation.
        psi0: AnyInitialState:
            Initial state.
        u: int:
            Vertex where the measure is bounded.
        v: int:
            Vertex whose incidence vector enters the bound.
        pi: Optional[MeasureTable]:
            Stationary distribution, None when the walk has none.
        hs_part: Optional[MeasureTable]:  (Default value = None)
            Per-vertex mass of the projection onto H^(S).
        doubled: Optional[bool]:  (Default value = None)
            Double the stationary term, automatic for loop-free chains.

    Returns:
        BoundResult
    """

    table, was_doubled = lower_bound_table(ops, psi0, v, pi, hs_part, doubled)
    return BoundResult(
        value=table[u], includes_stationary=pi is not None, doubled=was_doubled
    )


def doubled_lower_bound(
    ops: WalkOperators, psi0: AnyInitialState, v: int, pi: MeasureTable
) -> MeasureTable:
    """
    2 |<a_v, psi0>|^2 pi(u) pi(v) for loop-free positive recurrent walks.
    """

    if ops.chain.loop_set:
        raise PreconditionException("The doubled bound needs a loop-free walk")
    return lower_bound_table(ops, psi0, v, pi, doubled=True)[0]


@dataclass(frozen=True)
class ClosedFormValue:
    value: float
    trapped_mass: float


def homogeneous_closed_form(p: float, q: float, i: int, j: int) -> ClosedFormValue:
    """
    Exact limit measure at i for the homogeneous loop-free walk with q > p
    launched from the mixture at j.

    pi(0) = (1 - p/q)/2, pi(k) = (1 - p/q)/(2q) (p/q)^(k-1) and the measure
    is {2 delta_0(j) + (1 - delta_0(j))} pi(j) pi(i).
    """

    if p >= q:
        raise PreconditionException(f"Closed form needs p < q, got p={p!r}, q={q!r}")

    def pi(k: int) -> float:
        if k == 0:
            return (1 - p / q) / 2
        return (1 - p / q) / (2 * q) * (p / q) ** (k - 1)

    trapped = (2.0 if j == 0 else 1.0) * pi(j)
    return ClosedFormValue(value=trapped * pi(i), trapped_mass=trapped)


def homogeneous_closed_form_table(p: float, q: float, j: int, N: int) -> MeasureTable:
    return MeasureTable(
        values=[homogeneous_closed_form(p, q, i, j).value for i in range(N + 1)],
        provenance="closed_form(homogeneous)",
    )


@dataclass(frozen=True)
class SupportSet:
    """
    Interval {start <= j <= stop} of vertices, stop None for unbounded
    and start None for the empty set.
    """

    start: Optional[int]
    stop: Optional[int]

    @property
    def empty(self) -> bool:
        return self.start is None

    def __contains__(self, vertex: int) -> bool:
        if self.start is None:
            return False
        return vertex >= self.start and (self.stop is None or vertex <= self.stop)

    def mask(self, N: int) -> np.ndarray:
        return np.array([vertex in self for vertex in range(N + 1)])


def supp_h_s(
    walk: HalfLineWalk,
    loop_set: Optional[Sequence[int]] = None,
    recurrence: Optional[RecurrenceReport] = None,
) -> SupportSet:
    """
    Support of H^(S) on the half line from the loop set and recurrence class.
    """

    loops = sorted(walk.loop_sites if loop_set is None else set(loop_set))
    if walk.loop_tail is not None:
        return SupportSet(start=min(loops + [walk.loop_tail]), stop=None)
    if not loops:
        return SupportSet(start=None, stop=None)

    recurrence = classify(walk) if recurrence is None else recurrence
    if recurrence.recurrence_class not in (
        "transient",
        "null_recurrent",
        "positive_recurrent",
    ):
        raise ClassificationException(
            f"Unresolved recurrence class {recurrence.recurrence_class!r}"
        )

    if not recurrence.is_recurrent:
        return SupportSet(start=loops[0], stop=None)
    if len(loops) == 1:
        return SupportSet(start=None, stop=None)
    return SupportSet(start=loops[0], stop=loops[-1])


@dataclass(frozen=True, eq=False)
class CorollaryMeasure:
    """
    Localized measure |sum_j <a_perp_j, psi0>|^2 pi'(i) over 0..N.
    """

    table: MeasureTable
    pi_prime: MeasureTable
    overlap_sq: float
    series_value: float
    direction: StateVector


def _perp_direction(
    basis: ArcBasis, pi_prime: np.ndarray, amplitudes: Dict[int, Dict[str, float]]
) -> StateVector:
    """
    sum_j (-1)^j sqrt(pi'(j)) (unit direction at j) on the available arcs.
    """

    vector = np.zeros(basis.arc_count, dtype=complex)
    for site, local in amplitudes.items():
        norm = math.sqrt(sum(value**2 for value in local.values()))
        sign = -1.0 if site % 2 else 1.0
        for label, value in local.items():
            try:
                index = basis.index_of(site, label)
            except ParameterException:
                continue
            vector[index] = sign * math.sqrt(pi_prime[site]) * value / norm
    return vector


def _overlap_sq(direction: StateVector, psi0: AnyInitialState) -> float:
    return float(
        sum(
            weight * abs(np.vdot(direction, vector)) ** 2
            for weight, vector in _pure_components(psi0)
        )
    )


def _check_state_basis(basis: ArcBasis, psi0: AnyInitialState) -> None:
    for _, vector in _pure_components(psi0):
        if len(vector) != basis.arc_count:
            raise PreconditionException("Initial state lives on a different arc space")


def corollary2_table(
    walk: HalfLineWalk,
    psi0: AnyInitialState,
    N: int,
    basis: Optional[ArcBasis] = None,
    report: Optional[RecurrenceReport] = None,
    **series_options,
) -> CorollaryMeasure:
    """
    Localized measure of a transient walk whose only loop sits at 0.

    C_R' = sum_{j>=1} r_0 q_1..q_{j-1} / p_1..p_j,
    pi'(0) = 1/(1 + C_R'), pi'(j) = r_0 q_1..q_{j-1} / p_1..p_j / (1 + C_R').

    Args:
        walk: HalfLineWalk:
            Transient walk with loop set {0}.
        psi0: AnyInitialState:
            Initial state on the truncation at N.
        N: int:
            Truncation size of the arc space.
        basis: Optional[ArcBasis]:  (Default value = None)
            Arc layout psi0 uses, built when omitted.
        report: Optional[RecurrenceReport]:  (Default value = None)
            Classification, computed when omitted.

    Returns:
        CorollaryMeasure
    """

    if walk.loop_tail is not None or walk.loop_sites != (0,):
        raise PreconditionException("This formula needs the loop set to be exactly {0}")
    report = classify(walk) if report is None else report
    if report.recurrence_class != "transient":
        raise PreconditionException(
            f"{walk.name} is {report.recurrence_class}, not transient"
        )

    basis = build_arc_space(truncate(walk, N)) if basis is None else basis
    _check_state_basis(basis, psi0)

    cutoff = series_options.pop("cutoff", None) or defaults["CONFIG_CUTOFF"]
    p, q, r = walk.coefficients(max(N, cutoff))
    log_r = log_products(walk, max(N, cutoff))["ct"]
    sites = np.arange(1, cutoff + 1)
    log_terms = math.log(r[0]) + log_r[sites - 1] - np.log(p[sites])
    series = _evaluate_series(log_terms, **series_options)
    if series.status != "stabilized":
        raise ClassificationException(
            f"C_R' of {walk.name} does not stabilize although the walk is transient"
        )

    pi_prime = np.concatenate(([1.0], np.exp(log_terms[:N]))) / (1.0 + series.value)
    amplitudes = {0: {"O": -math.sqrt(p[0]), "R": math.sqrt(r[0])}}
    for site in range(1, N + 1):
        amplitudes[site] = {"L": -math.sqrt(p[site]), "R": math.sqrt(q[site])}
    direction = _perp_direction(basis, pi_prime, amplitudes)
    overlap = _overlap_sq(direction, psi0)

    return CorollaryMeasure(
        table=MeasureTable(
            values=overlap * pi_prime, provenance="closed_form(corollary2)"
        ),
        pi_prime=MeasureTable(values=pi_prime, provenance="closed_form(pi_prime)"),
        overlap_sq=overlap,
        series_value=series.value,
        direction=direction,
    )


def corollary2_measure(
    walk: HalfLineWalk, psi0: AnyInitialState, i: int, N: int, **options
) -> float:
    return corollary2_table(walk, psi0, N, **options).table[i]


def corollary3_table(
    walk: HalfLineWalk,
    psi0: AnyInitialState,
    N: int,
    basis: Optional[ArcBasis] = None,
    report: Optional[RecurrenceReport] = None,
) -> CorollaryMeasure:
    """
    Localized measure of a recurrent walk with loops exactly at 0 and n.

    pi'(0) is proportional to 1, pi'(j) to r_0 q_1..q_{j-1} / p_1..p_j for
    0 < j < n and pi'(n) to r_0 q_1..q_{n-1} (1 - p_n) / (p_1..p_{n-1} r_n);
    the measure vanishes beyond n.
    """

    loops = walk.loop_sites
    if walk.loop_tail is not None or len(loops) != 2 or loops[0] != 0:
        raise PreconditionException("This formula needs loops exactly at 0 and n > 0")
    n = loops[1]
    if N < n + 1:
        raise PreconditionException(f"Truncation N={N} must reach the loop at {n}")
    report = classify(walk) if report is None else report
    if not report.is_recurrent:
        raise PreconditionException(f"{walk.name} is transient, not recurrent")

    basis = build_arc_space(truncate(walk, N)) if basis is None else basis
    _check_state_basis(basis, psi0)

    p, q, r = walk.coefficients(N)
    log_r = log_products(walk, n)["ct"]
    weights = np.zeros(N + 1)
    weights[0] = 1.0
    for site in range(1, n):
        weights[site] = r[0] * math.exp(log_r[site - 1]) / p[site]
    weights[n] = r[0] * math.exp(log_r[n - 1]) * (1 - p[n]) / r[n]
    series_value = float(weights[1:].sum())
    pi_prime = weights / (1.0 + series_value)

    amplitudes = {0: {"O": -math.sqrt(p[0]), "R": math.sqrt(r[0])}}
    for site in range(1, n):
        amplitudes[site] = {"L": -math.sqrt(p[site]), "R": math.sqrt(q[site])}
    amplitudes[n] = {"L": -math.sqrt(p[n]), "O": math.sqrt(p[n] * q[n] / r[n])}
    direction = _perp_direction(basis, pi_prime, amplitudes)
    overlap = _overlap_sq(direction, psi0)

    return CorollaryMeasure(
        table=MeasureTable(
            values=overlap * pi_prime, provenance="closed_form(corollary3)"
        ),
        pi_prime=MeasureTable(values=pi_prime, provenance="closed_form(pi_prime)"),
        overlap_sq=overlap,
        series_value=series_value,
        direction=direction,
    )


def corollary3_measure(
    walk: HalfLineWalk, psi0: AnyInitialState, i: int, N: int, **options
) -> float:
    return corollary3_table(walk, psi0, N, **options).table[i]


@dataclass(frozen=True, eq=False)
class EtaNormReport:
    """
    Partial sums of the squared norm of the terminal signed reflected
    vector and the term-wise identity behind them.

    Attributes:
        series: SeriesDiagnostics:
            Verdict on the norm series.
        partial_sums: np.ndarray:
            Boundary mass plus sum_{l=j_n+1}^{L} Q_l^2 for increasing L.
        identity_lhs: np.ndarray:
            sum_{l=j_n+1}^{L} Q_l^2 with Q_l^2 = R_l / q_l.
        identity_rhs: np.ndarray:
            2 sum_{l=j_n+1}^{L} R_l + R_{j_n} - R_L.
        identity_residual: float:
            Largest relative difference between both sides.
    """

    series: SeriesDiagnostics
    partial_sums: np.ndarray
    identity_lhs: np.ndarray
    identity_rhs: np.ndarray
    identity_residual: float

    @property
    def square_summable(self) -> bool:
        return self.series.converged


def eta_norm_terminal(
    walk: HalfLineWalk,
    j_n: int,
    N: Optional[int] = None,
    cutoff: Optional[int] = None,
    **series_options,
) -> EtaNormReport:
    """
    Squared norm of the terminal signed reflected vector as partial sums,
    checked against its rewrite through R_l = q_1..q_l / p_1..p_l.

    Args:
        walk: HalfLineWalk:
            Walk whose rightmost loop sits at j_n.
        j_n: int:
            Rightmost loop.
        N: Optional[int]:  (Default value = None)
            Last site of the partial sums, cutoff = N - j_n when given.
        cutoff: Optional[int]:  (Default value = None)
            Number of sites past j_n.

    Returns:
        EtaNormReport
    """

    if N is not None:
        cutoff = N - j_n
    series, log_terms = terminal_norm_series(walk, j_n, cutoff=cutoff, **series_options)

    # both sides relative to R_{j_n}, cut where the partial sums stop
    count = len(series.partial_sums) - 1
    log_r = log_products(walk, j_n + count)["ct"]
    ratios = np.exp(log_r[j_n + 1 : j_n + count + 1] - log_r[j_n])
    lhs = np.cumsum(np.exp(log_terms[1 : count + 1] - log_r[j_n]))
    rhs = 2 * np.cumsum(ratios) + 1.0 - ratios
    residual = float(np.max(np.abs(lhs - rhs) / np.abs(lhs))) if count else 0.0

    scale = math.exp(log_r[j_n])
    return EtaNormReport(
        series=series,
        partial_sums=series.partial_sums,
        identity_lhs=lhs * scale,
        identity_rhs=rhs * scale,
        identity_residual=residual,
    )


def localization_state(
    data: SpectralData, base: InitialState
) -> InitialState:
    """
    Base state made orthogonal to every mass point lift of the truncation.
    """

    return orthogonalize_against_mass_points(base, data.mass_point_lifts())


def h_s_projection_measure(
    reflected: SignedReflectedBasis, psi0: AnyInitialState
) -> MeasureTable:
    """
    sum over arcs at u of |<delta, Pi_S psi0>|^2 with Pi_S the projector onto
    the span of the signed reflected vectors (terminal vector included when
    square-summable).
    """

    _check_state_basis(reflected.basis, psi0)
    columns = reflected.matrix(include_terminal=True)
    arc_mass = np.zeros(reflected.basis.arc_count)
    if columns.shape[1]:
        span = linalg.orth(columns)
        for weight, vector in _pure_components(psi0):
            arc_mass += weight * np.abs(span @ (span.conj().T @ vector)) ** 2

    return MeasureTable(
        values=_arc_mass_to_vertices(reflected.basis, arc_mass),
        provenance="signed_reflected_projection",
    )
