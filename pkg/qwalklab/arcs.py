"""
Arc space of the symmetric oriented graph, the flip-flop shift, the coin
reflection and direct time evolution with position measurement.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import sparse

from qwalklab.exceptions import ParameterException
from qwalklab.presets import defaults
from qwalklab.tables import MeasureTable
from qwalklab.walks import TruncatedChain

logger = logging.getLogger(__name__)

# complex amplitude per arc index, laid out in ArcBasis order
StateVector = np.ndarray

_DIRECTIONS = {-1: "L", 0: "O", 1: "R"}


@dataclass(frozen=True, eq=False)
class ArcBasis:
    """
    Ordered arcs of the graph, each stored as (position u, neighbor v).

    The arc (u, v) is the basis vector delta_{(v,u)}: it points into u
    and carries the amplitude of having arrived at u from v. On the half
    line v = u - 1, u, u + 1 read as |u;L>, |u;O>, |u;R>. Arcs are
    ordered by ascending u, then ascending v.
    """

    positions: np.ndarray
    neighbors: np.ndarray
    shift: np.ndarray
    vertex_count: int

    def __post_init__(self):
        for name in ("positions", "neighbors", "shift"):
            getattr(self, name).setflags(write=False)

    @property
    def arc_count(self) -> int:
        return len(self.positions)

    @property
    def loop_count(self) -> int:
        return int(np.count_nonzero(self.positions == self.neighbors))

    @property
    def edge_count(self) -> int:
        # every non-loop edge shows up as two arcs
        return (self.arc_count - self.loop_count) // 2 + self.loop_count

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(
            _DIRECTIONS.get(int(v - u), f"->{v}")
            for u, v in zip(self.positions, self.neighbors)
        )

    @property
    def arcs(self) -> Tuple[Tuple[int, str], ...]:
        """
        (position, label) for every arc in canonical order.
        """

        return tuple(zip((int(u) for u in self.positions), self.labels))

    @functools.cached_property
    def index(self) -> Dict[Tuple[int, int], int]:
        return {
            (int(u), int(v)): k
            for k, (u, v) in enumerate(zip(self.positions, self.neighbors))
        }

    def index_of(self, position: int, direction: str) -> int:
        """
        Index of the half-line arc |position;direction>.
        """

        offsets = {label: offset for offset, label in _DIRECTIONS.items()}
        if direction not in offsets:
            raise ParameterException(f"Unknown arc direction {direction!r}")
        key = (position, position + offsets[direction])
        try:
            return self.index[key]
        except KeyError as exc:
            raise ParameterException(
                f"Arc |{position};{direction}> is not part of this arc space"
            ) from exc

    def arcs_at(self, position: int) -> np.ndarray:
        """
        Indices of every arc whose head is ``position``.
        """

        return np.flatnonzero(self.positions == position)

    def basis_vector(self, position: int, direction: str) -> StateVector:
        vector = np.zeros(self.arc_count, dtype=complex)
        vector[self.index_of(position, direction)] = 1.0
        return vector


@dataclass(frozen=True, eq=False)
class WalkOperators:
    """
    Matrix-free realization of S, C = 2 AA^T - I and U = SC.

    Attributes:
        basis: ArcBasis:
            Arc layout the operators act on.
        incidence: sparse.csr_matrix:
            A, one column a_u per vertex.
        swapped: sparse.csr_matrix:
            B = S A, one column b_u per vertex.
        chain: TruncatedChain:
            Chain the operators were built from.
    """

    basis: ArcBasis
    incidence: sparse.csr_matrix
    swapped: sparse.csr_matrix
    chain: TruncatedChain

    def apply_shift(self, psi: StateVector) -> StateVector:
        return apply_shift(self.basis, psi)

    def apply_coin(self, psi: StateVector) -> StateVector:
        return apply_coin(self, psi)

    def apply_U(self, psi: StateVector) -> StateVector:
        return apply_U(self, psi)

    def ref_A(self, psi: StateVector) -> StateVector:
        return apply_coin(self, psi)

    def ref_B(self, psi: StateVector) -> StateVector:
        return 2 * (self.swapped @ (self.swapped.T @ psi)) - psi

    def apply_W(self, psi: StateVector) -> StateVector:
        """
        Szegedy step W = ref_B ref_A, equal to U^2.
        """

        return self.ref_B(self.ref_A(psi))


def build_arc_space(chain: TruncatedChain) -> ArcBasis:
    """
    Enumerate the arcs of the chain's graph in canonical order.

    Args:
        chain: TruncatedChain:
            Chain whose support defines the graph.

    Returns:
        ArcBasis:
            Arc layout with the shift permutation precomputed.
    """

    # nonzero entries of M^T in row-major order: ascending u, then v
    positions, neighbors = np.nonzero(chain.matrix.T > 0)
    lookup = {
        (int(u), int(v)): k for k, (u, v) in enumerate(zip(positions, neighbors))
    }
    shift = np.array(
        [lookup[(int(v), int(u))] for u, v in zip(positions, neighbors)], dtype=int
    )

    basis = ArcBasis(
        positions=positions.astype(int),
        neighbors=neighbors.astype(int),
        shift=shift,
        vertex_count=chain.size,
    )
    logger.info(
        "Built arc space for %s with %d arcs on %d vertices",
        chain.label,
        basis.arc_count,
        basis.vertex_count,
    )
    return basis


def build_operators(
    chain: TruncatedChain, basis: Optional[ArcBasis] = None
) -> WalkOperators:
    """
    Build the incidence matrices A and B = S A for a chain.
    """

    basis = build_arc_space(chain) if basis is None else basis
    # a_u has amplitude sqrt(p_{v,u}) on the arc (u, v)
    weights = np.sqrt(chain.matrix[basis.neighbors, basis.positions])
    shape = (basis.arc_count, basis.vertex_count)
    rows = np.arange(basis.arc_count)

    incidence = sparse.csr_matrix((weights, (rows, basis.positions)), shape=shape)
    swapped = sparse.csr_matrix(
        (weights[basis.shift], (rows, basis.neighbors)), shape=shape
    )
    return WalkOperators(
        basis=basis, incidence=incidence, swapped=swapped, chain=chain
    )


def incidence_vector(basis: ArcBasis, chain: TruncatedChain, u: int) -> StateVector:
    """
    a_u = sqrt(q_u)|u;L> + sqrt(r_u)|u;O> + sqrt(p_u)|u;R> on the half line,
    sum_v sqrt(p_{v,u}) delta_{(v,u)} in general.
    """

    if not 0 <= u < basis.vertex_count:
        raise ParameterException(f"Vertex {u} outside 0..{basis.vertex_count - 1}")

    vector = np.zeros(basis.arc_count, dtype=complex)
    arcs = basis.arcs_at(u)
    vector[arcs] = np.sqrt(chain.matrix[basis.neighbors[arcs], u])
    return vector


def apply_shift(basis: ArcBasis, psi: StateVector) -> StateVector:
    """
    Flip-flop shift: the amplitude on (u, v) moves to (v, u).
    Works column-wise on 2-D inputs.
    """

    return psi[basis.shift]


def apply_coin(ops: WalkOperators, psi: StateVector) -> StateVector:
    """
    Coin reflection 2 A (A^T psi) - psi.
    """

    return 2 * (ops.incidence @ (ops.incidence.T @ psi)) - psi


def apply_U(ops: WalkOperators, psi: StateVector) -> StateVector:
    """
    One step U = S C.
    """

    return apply_shift(ops.basis, apply_coin(ops, psi))


def position_distribution(basis: ArcBasis, psi: StateVector) -> MeasureTable:
    """
    P(u) = sum over arcs with head u of |amplitude|^2.
    """

    return MeasureTable(
        values=_arc_mass_to_vertices(basis, np.abs(psi) ** 2),
        provenance="position_distribution",
    )


def _arc_mass_to_vertices(basis: ArcBasis, arc_mass: np.ndarray) -> np.ndarray:
    return np.bincount(
        basis.positions, weights=arc_mass, minlength=basis.vertex_count
    )


def cesaro_averages(
    ops: WalkOperators,
    psi0: StateVector,
    horizons: Iterable[int],
    drift_tol: Optional[float] = None,
) -> Dict[int, MeasureTable]:
    """
    Cesaro averages (1/T) sum_{t<T} P(X_t = .) for several T from one
    evolution. The state is never renormalized, norm drift is tracked.

    Args:
        ops: WalkOperators:
            Operators of the truncated walk.
        psi0: StateVector:
            Initial state, unit norm.
        horizons: Iterable[int]:
            Horizons T >= 1.
        drift_tol: Optional[float]:  (Default value = None)
            Drift beyond which a warning is logged.

    Returns:
        Dict[int, MeasureTable]:
            One table per horizon.
    """

    drift_tol = defaults["CONFIG_DRIFT_TOL"] if drift_tol is None else drift_tol
    horizons = sorted(set(int(horizon) for horizon in horizons))
    if not horizons or horizons[0] < 1:
        raise ParameterException("Horizons must be positive integers")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-12:
        raise ParameterException("Initial state must have unit norm")

    basis = ops.basis
    psi = np.asarray(psi0, dtype=complex)
    accumulated = np.zeros(basis.arc_count)
    max_drift = 0.0
    results: Dict[int, MeasureTable] = {}

    for step in range(1, horizons[-1] + 1):
        arc_mass = np.abs(psi) ** 2
        accumulated += arc_mass
        max_drift = max(max_drift, abs(arc_mass.sum() - 1.0))

        if step in horizons:
            results[step] = MeasureTable(
                values=_arc_mass_to_vertices(basis, accumulated / step),
                provenance=f"direct_cesaro(T={step},N={basis.vertex_count - 1})",
                diagnostics={"max_norm_drift": max_drift},
            )
        psi = apply_U(ops, psi)

    if max_drift > drift_tol:
        logger.warning(
            "Norm drift %.3e exceeded tolerance %.1e during evolution of %s",
            max_drift,
            drift_tol,
            ops.chain.label,
        )

    return results


def evolve_and_average(
    ops: WalkOperators, basis: ArcBasis, psi0: StateVector, T: int
) -> MeasureTable:
    """
    (1/T) sum_{t=0}^{T-1} P(X_t = .) by repeated application of U.
    """

    if basis is not ops.basis:
        raise ParameterException("Arc basis does not match the operators")
    return cesaro_averages(ops, psi0, [T])[T]


def dense_evolution_matrix(basis: ArcBasis, chain: TruncatedChain) -> np.ndarray:
    """
    U assembled entry by entry from the local rule
    <(v,u)| U |(u,w)> = 2 sqrt(p_{v,u} p_{w,u}) - delta_{v,w}.
    """

    index = basis.index
    matrix = np.zeros((basis.arc_count, basis.arc_count))
    for (u, v), _ in index.items():
        target = index[(v, u)]
        for w in basis.neighbors[basis.arcs_at(u)]:
            source = index[(u, int(w))]
            matrix[target, source] = 2 * np.sqrt(
                chain.matrix[v, u] * chain.matrix[w, u]
            ) - (1.0 if w == v else 0.0)
    return matrix


def shift_eigenspace_dimensions(basis: ArcBasis) -> Dict[int, int]:
    """
    Multiplicities of the eigenvalues +1 and -1 of S.
    """

    return {
        1: basis.edge_count,
        -1: basis.edge_count - basis.loop_count,
    }
