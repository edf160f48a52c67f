"""
Spectral structure of the walk: Jacobi eigenpairs, their lifts to
eigenvectors of U, the signed reflected vectors spanning the
complement and mass point detection across truncations.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pyarrow as pa
from scipy import linalg

from qwalklab.arcs import (
    ArcBasis,
    StateVector,
    WalkOperators,
    apply_U,
    build_arc_space,
    build_operators,
)
from qwalklab.exceptions import (
    NumericalLiftException,
    PreconditionException,
    SpectralException,
)
from qwalklab.presets import defaults
from qwalklab.walks import (
    HalfLineWalk,
    JacobiMatrix,
    SeriesDiagnostics,
    TruncatedChain,
    classify,
    log_products,
    terminal_norm_series,
    truncate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JacobiEigenpairs:
    """
    Ascending eigenvalues with orthonormal, sign-fixed eigenvectors
    (columns) and the multiplicities of +1 and -1.
    """

    values: np.ndarray
    vectors: np.ndarray
    m_plus: int
    m_minus: int
    window: float

    @property
    def size(self) -> int:
        return len(self.values)

    def multiplicity(self, sign: int) -> int:
        return self.m_plus if sign > 0 else self.m_minus


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """
    Flip columns so their first component above 1e-12 in size is positive.
    """

    if vectors.size == 0:
        return vectors
    first = np.argmax(np.abs(vectors) > 1e-12, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigensolve(
    J: Union[JacobiMatrix, np.ndarray], tol: Optional[float] = None
) -> JacobiEigenpairs:
    """
    Full spectral decomposition of a Jacobi (or general discriminant) matrix.

    Args:
        J: Union[JacobiMatrix, np.ndarray]:
            Symmetric tridiagonal matrix by diagonals, or a dense symmetric matrix.
        tol: Optional[float]:  (Default value = None)
            Window for counting eigenvalues at +-1 and for the range check.

    Returns:
        JacobiEigenpairs
    """

    tol = defaults["CONFIG_CLUSTER_WINDOW"] if tol is None else tol

    if isinstance(J, JacobiMatrix):
        if J.size == 1:
            values, vectors = np.array(J.diagonal, dtype=float), np.ones((1, 1))
        else:
            values, vectors = linalg.eigh_tridiagonal(J.diagonal, J.off_diagonal)
    else:
        values, vectors = linalg.eigh(np.asarray(J, dtype=float))

    if np.abs(values).max() > 1 + tol:
        raise SpectralException(
            f"Eigenvalue {values[np.argmax(np.abs(values))]!r} outside [-1, 1], "
            "the matrix does not come from a stochastic walk"
        )

    logger.info("Solved Jacobi matrix of size %d", len(values))
    return JacobiEigenpairs(
        values=values,
        vectors=_fix_signs(vectors),
        m_plus=int(np.count_nonzero(np.abs(values - 1) <= tol)),
        m_minus=int(np.count_nonzero(np.abs(values + 1) <= tol)),
        window=tol,
    )


@dataclass(frozen=True, eq=False)
class LiftedEigenvector:
    """
    Eigenvector q(lambda) of U built from a Jacobi eigenvector.

    For |lambda| < 1 the branches are q_+- = (I - e^{+-i theta} S) A p,
    with eigenvalue e^{+-i theta}; at lambda = +-1 the single vector A p
    has eigenvalue +-1.
    """

    lam: float
    branch: str
    theta: float
    vector: StateVector
    residual: float

    @property
    def phase(self) -> complex:
        sign = 1 if self.branch == "+" else -1
        return complex(np.exp(sign * 1j * self.theta))

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.vector, self.vector).real)

    @property
    def normalized(self) -> StateVector:
        return self.vector / math.sqrt(self.norm_sq)


def lift(
    pairs: JacobiEigenpairs,
    ops: WalkOperators,
    max_residual: Optional[float] = None,
) -> List[LiftedEigenvector]:
    """
    Lift every Jacobi eigenvector to eigenvectors of U.

    Args:
        pairs: JacobiEigenpairs:
            Eigenpairs of the same truncation the operators come from.
        ops: WalkOperators:
            Operators providing A, B and U.
        max_residual: Optional[float]:  (Default value = None)
            Largest accepted ||U q - e^{i theta} q||_inf.

    Returns:
        List[LiftedEigenvector]:
            Ordered by ascending lambda, + branch before - branch.
    """

    max_residual = (
        defaults["CONFIG_LIFT_RESIDUAL"] if max_residual is None else max_residual
    )
    if pairs.vectors.shape[0] != ops.basis.vertex_count:
        raise PreconditionException(
            "Eigenpairs and operators come from different truncations"
        )

    forward = ops.incidence @ pairs.vectors
    swapped = ops.swapped @ pairs.vectors

    columns, lams, branches, thetas = [], [], [], []
    for k, lam in enumerate(pairs.values):
        if abs(abs(lam) - 1) <= pairs.window:
            columns.append(forward[:, k].astype(complex))
            lams.append(lam)
            branches.append("+")
            thetas.append(0.0 if lam > 0 else math.pi)
            continue

        theta = math.acos(min(1.0, max(-1.0, lam)))
        for branch, sign in (("+", 1), ("-", -1)):
            columns.append(forward[:, k] - np.exp(sign * 1j * theta) * swapped[:, k])
            lams.append(lam)
            branches.append(branch)
            thetas.append(theta)

    if not columns:
        return []

    vectors = np.column_stack(columns)
    signs = np.where(np.array(branches) == "+", 1, -1)
    phases = np.exp(1j * np.asarray(thetas) * signs)
    residuals = np.abs(apply_U(ops, vectors) - vectors * phases).max(axis=0)

    worst = int(np.argmax(residuals))
    if residuals[worst] > max_residual:
        raise NumericalLiftException(
            f"Lift of lambda={lams[worst]!r} ({branches[worst]} branch) has residual "
            f"{residuals[worst]:.3e} above {max_residual:.1e}"
        )

    return [
        LiftedEigenvector(
            lam=float(lam),
            branch=branch,
            theta=float(theta),
            vector=vectors[:, k],
            residual=float(residuals[k]),
        )
        for k, (lam, branch, theta) in enumerate(zip(lams, branches, thetas))
    ]


def lift_mass_points(
    pairs: JacobiEigenpairs,
    ops: WalkOperators,
    mass_point_values: Sequence[float],
) -> List[LiftedEigenvector]:
    """
    Lift only the eigenpairs sitting at mass points, for truncations too
    large to lift the whole spectrum.
    """

    keep = np.array(
        [
            any(
                abs(lam - value) < defaults["CONFIG_STABILITY_TOL"]
                for value in mass_point_values
            )
            for lam in pairs.values
        ],
        dtype=bool,
    )
    return lift(
        replace(pairs, values=pairs.values[keep], vectors=pairs.vectors[:, keep]), ops
    )


@dataclass(frozen=True, eq=False)
class TerminalVector:
    """
    Signed reflected vector starting at the last loop, cut off at the
    truncation boundary.
    """

    start: int
    normalized: StateVector
    truncated_norm_sq: float
    series: SeriesDiagnostics
    square_summable: bool


@dataclass(frozen=True, eq=False)
class SignedReflectedBasis:
    """
    Signed reflected vectors eta_k between consecutive loops, all with
    U-eigenvalue -1.

    Attributes:
        vectors: Tuple[StateVector, ...]:
            Unnormalized vectors with amplitude (-1)^l sqrt(R_l) on |l;R>.
        normalized: Tuple[StateVector, ...]:
            Unit-norm copies.
        segments: Tuple[Tuple[int, int], ...]:
            (j_k, j_{k+1}) support range of each vector.
        terminal: Optional[TerminalVector]:
            Vector starting at the last loop, when requested.
    """

    vectors: Tuple[StateVector, ...]
    normalized: Tuple[StateVector, ...]
    segments: Tuple[Tuple[int, int], ...]
    basis: ArcBasis
    terminal: Optional[TerminalVector] = None
    eigenvalue: int = -1

    def matrix(self, include_terminal: bool = False) -> np.ndarray:
        """
        Normalized vectors as columns, the terminal vector appended only
        when requested and square-summable.
        """

        columns = list(self.normalized)
        terminal = self.terminal
        if include_terminal and terminal is not None and terminal.square_summable:
            columns.append(terminal.normalized)
        if not columns:
            return np.zeros((self.basis.arc_count, 0), dtype=complex)
        return np.column_stack(columns)


def _segment_vector(
    basis: ArcBasis,
    p: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    log_r: np.ndarray,
    start: int,
    stop: Optional[int],
    N: int,
) -> np.ndarray:
    """
    Log-scaled amplitudes of the signed reflected vector from loop
    ``start`` to loop ``stop`` (to the boundary N when stop is None),
    relative to |start;R>.
    """

    def alpha(site: int) -> float:
        sign = -1.0 if (site - start) % 2 else 1.0
        return sign * math.exp(0.5 * (log_r[site] - log_r[start]))

    vector = np.zeros(basis.arc_count, dtype=complex)
    vector[basis.index_of(start, "O")] = -math.sqrt(p[start] / r[start])
    vector[basis.index_of(start, "R")] = 1.0

    last = (N if stop is None else stop) - 1
    for site in range(start + 1, last + 1):
        vector[basis.index_of(site, "L")] = alpha(site - 1)
        vector[basis.index_of(site, "R")] = alpha(site)

    end = N if stop is None else stop
    vector[basis.index_of(end, "L")] = alpha(end - 1)
    if stop is not None:
        vector[basis.index_of(stop, "O")] = -math.sqrt(q[stop] / r[stop]) * alpha(
            stop - 1
        )
    return vector


def signed_reflected_basis(
    walk: HalfLineWalk,
    loop_set: Optional[Sequence[int]],
    N: int,
    basis: Optional[ArcBasis] = None,
    include_terminal: bool = True,
    **series_options,
) -> SignedReflectedBasis:
    """
    Build the signed reflected vectors of a half-line walk on the
    truncation at N.

    Args:
        walk: HalfLineWalk:
            Walk carrying the loops.
        loop_set: Optional[Sequence[int]]:
            Loop sites to use, the walk's own loops when None.
        N: int:
            Truncation size, at least the last loop + 2.
        basis: Optional[ArcBasis]:  (Default value = None)
            Arc layout of the truncation, built when omitted.
        include_terminal: bool:  (Default value = True)
            Also build the vector starting at the last loop.

    Returns:
        SignedReflectedBasis
    """

    loops = sorted(walk.loop_sites if loop_set is None else set(loop_set))
    if not loops:
        raise PreconditionException("Signed reflected vectors need at least one loop")
    if loops[-1] > N - 2:
        raise PreconditionException(
            f"Truncation N={N} must exceed the last loop {loops[-1]} by at least 2"
        )

    p, q, r = walk.coefficients(N)
    missing = [site for site in loops if r[site] <= 0]
    if missing:
        raise PreconditionException(f"Sites {missing} carry no loop in {walk.name}")

    basis = build_arc_space(truncate(walk, N)) if basis is None else basis
    log_r = log_products(walk, N)["ct"]

    relative, scaled, segments = [], [], []
    for start, stop in zip(loops[:-1], loops[1:]):
        vector = _segment_vector(basis, p, q, r, log_r, start, stop, N)
        sign = -1.0 if start % 2 else 1.0
        with np.errstate(over="ignore"):
            scaled.append(vector * sign * math.exp(0.5 * log_r[start]))
        relative.append(vector / np.linalg.norm(vector))
        segments.append((start, stop))

    terminal = None
    wants_terminal = include_terminal and walk.loop_tail is None
    if wants_terminal and loops[-1] == max(walk.loop_sites):
        vector = _segment_vector(basis, p, q, r, log_r, loops[-1], None, N)
        series, _ = terminal_norm_series(walk, loops[-1], **series_options)
        if series.status == "unresolved":
            square_summable = classify(walk).recurrence_class == "transient"
        else:
            square_summable = series.status == "stabilized"
        if not square_summable:
            logger.warning(
                "Terminal signed reflected vector of %s from site %d is not "
                "square-summable",
                walk.name,
                loops[-1],
            )
        norm = np.linalg.norm(vector)
        terminal = TerminalVector(
            start=loops[-1],
            normalized=vector / norm,
            truncated_norm_sq=float(norm**2 * math.exp(log_r[loops[-1]])),
            series=series,
            square_summable=square_summable,
        )

    return SignedReflectedBasis(
        vectors=tuple(scaled),
        normalized=tuple(relative),
        segments=tuple(segments),
        basis=basis,
        terminal=terminal,
    )


@dataclass(frozen=True, eq=False)
class HSBasis:
    """
    Orthonormal bases of the complement of span{a_u, b_u}, split by
    U-eigenvalue.
    """

    complement: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def dimensions(self) -> dict:
        return {1: self.plus.shape[1], -1: self.minus.shape[1]}


def _invariant_part(vectors: np.ndarray, cutoff: float = 0.5) -> np.ndarray:
    if vectors.shape[1] == 0:
        return vectors
    left, singular, _ = linalg.svd(vectors, full_matrices=False)
    return left[:, singular > cutoff]


def h_s_brute_force(ops: WalkOperators) -> HSBasis:
    """
    Dense orthogonal complement of span{a_u, b_u}, split with (I -+ S)/2.

    On the complement C = -I, so U = -S there: the +1 part is the
    S-antisymmetric part and the -1 part the S-symmetric part.
    """

    stacked = np.hstack([ops.incidence.toarray(), ops.swapped.toarray()])
    complement = linalg.null_space(stacked.T)
    shifted = complement[ops.basis.shift]

    return HSBasis(
        complement=complement,
        plus=_invariant_part((complement - shifted) / 2),
        minus=_invariant_part((complement + shifted) / 2),
    )


def expected_h_s_dimensions(basis: ArcBasis, pairs: JacobiEigenpairs) -> dict:
    """
    |E| - |S| - |V| + m(1) for the +1 part and |E| - |V| + m(-1)
    for the -1 part.
    """

    return {
        1: basis.edge_count - basis.loop_count - basis.vertex_count + pairs.m_plus,
        -1: basis.edge_count - basis.vertex_count + pairs.m_minus,
    }


@dataclass(frozen=True, eq=False)
class MassPoint:
    """
    Eigenvalue whose eigenvector stays localized across truncations.
    """

    value: float
    vector: np.ndarray
    tail_masses: Tuple[float, ...]


def _tail_masses(pairs: JacobiEigenpairs, tail_fraction: float) -> np.ndarray:
    count = max(1, math.ceil(tail_fraction * pairs.size))
    return (pairs.vectors[-count:] ** 2).sum(axis=0)


def mass_points(
    pairs_by_size: Sequence[JacobiEigenpairs],
    tail_fraction: Optional[float] = None,
    tail_tol: Optional[float] = None,
    stability_tol: Optional[float] = None,
) -> List[MassPoint]:
    """
    Approximate the mass point set from eigenpairs of several truncations.

    An eigenvalue is accepted when its eigenvector keeps less than tail_tol
    of its mass on the top tail_fraction of sites for every truncation and
    the eigenvalue itself moves less than stability_tol between truncations.

    Args:
        pairs_by_size: Sequence[JacobiEigenpairs]:
            Eigenpairs of at least two truncation sizes.

    Returns:
        List[MassPoint]:
            Accepted eigenvalues with eigenvectors from the largest truncation.
    """

    tail_fraction = (
        defaults["CONFIG_TAIL_FRACTION"] if tail_fraction is None else tail_fraction
    )
    tail_tol = defaults["CONFIG_TAIL_TOL"] if tail_tol is None else tail_tol
    stability_tol = (
        defaults["CONFIG_STABILITY_TOL"] if stability_tol is None else stability_tol
    )
    if len(pairs_by_size) < 2:
        raise PreconditionException("Mass points need at least two truncation sizes")

    ordered = sorted(pairs_by_size, key=lambda pairs: pairs.size)
    localized = []
    for pairs in ordered:
        tails = _tail_masses(pairs, tail_fraction)
        keep = tails < tail_tol
        localized.append((pairs.values[keep], tails[keep], pairs.vectors[:, keep]))

    accepted = []
    reference_values, reference_tails, reference_vectors = localized[-1]
    for k, value in enumerate(reference_values):
        tails = []
        for values, other_tails, _ in localized[:-1]:
            close = np.flatnonzero(np.abs(values - value) < stability_tol)
            if close.size == 0:
                break
            tails.append(float(other_tails[close[0]]))
        else:
            accepted.append(
                MassPoint(
                    value=float(value),
                    vector=reference_vectors[:, k],
                    tail_masses=tuple(tails) + (float(reference_tails[k]),),
                )
            )

    logger.info("Accepted %d mass points", len(accepted))
    return accepted


@dataclass(frozen=True, eq=False)
class SpectralData:
    """
    Complete eigendecomposition of U on one truncation: lifts spanning
    the part generated by the walk plus the complement split by sign.
    """

    chain: TruncatedChain
    ops: WalkOperators
    pairs: JacobiEigenpairs
    lifts: Tuple[LiftedEigenvector, ...]
    hs_plus: np.ndarray
    hs_minus: np.ndarray
    hs_source: str
    mass_point_values: Tuple[float, ...] = field(default_factory=tuple)

    def is_mass_point(self, lam: float) -> bool:
        return any(
            abs(lam - value) < defaults["CONFIG_STABILITY_TOL"]
            for value in self.mass_point_values
        )

    def mass_point_lifts(self) -> List[LiftedEigenvector]:
        return [vector for vector in self.lifts if self.is_mass_point(vector.lam)]

    def eigenbasis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Unit eigenvectors of U as columns, their eigenvalues and a flag
        marking columns from the complement of span{a_u, b_u}.
        """

        columns = [vector.normalized for vector in self.lifts]
        phases = [vector.phase for vector in self.lifts]
        columns += list(self.hs_plus.T) + list(self.hs_minus.T)
        phases += [1.0] * self.hs_plus.shape[1] + [-1.0] * self.hs_minus.shape[1]
        from_complement = np.zeros(len(phases), dtype=bool)
        from_complement[len(self.lifts) :] = True
        return (
            np.column_stack(columns).astype(complex),
            np.asarray(phases, dtype=complex),
            from_complement,
        )


def build_spectral_data(
    chain: TruncatedChain,
    walk: Optional[HalfLineWalk] = None,
    mass_point_values: Sequence[float] = (),
    hs_method: str = "auto",
) -> SpectralData:
    """
    Eigensolve, lift and complete the spectrum of U on one truncation.

    Args:
        chain: TruncatedChain:
            Truncated chain to decompose.
        walk: Optional[HalfLineWalk]:  (Default value = None)
            Infinite walk behind the chain, enables the signed reflected basis.
        mass_point_values: Sequence[float]:  (Default value = ())
            Eigenvalues accepted as mass points, for tagging lifts.
        hs_method: str:  (Default value = "auto")
            ``signed_reflected``, ``brute_force`` or ``auto`` (signed
            reflected vectors whenever every loop sits at least two sites
            below the boundary).

    Returns:
        SpectralData
    """

    ops = build_operators(chain)
    jacobi = chain.jacobi() if chain.is_tridiagonal else chain.discriminant()
    pairs = eigensolve(jacobi)
    lifts = lift(pairs, ops)

    loops = chain.loop_set
    analytic = walk is not None and chain.is_tridiagonal and (
        not loops or loops[-1] <= chain.N - 2
    )
    if hs_method == "signed_reflected" and not analytic:
        raise PreconditionException(
            "Signed reflected basis needs a half-line walk with loops below N-1"
        )
    if hs_method == "brute_force" or not analytic:
        hs = h_s_brute_force(ops)
        hs_plus, hs_minus, source = hs.plus, hs.minus, "brute_force"
    else:
        empty = np.zeros((ops.basis.arc_count, 0))
        hs_plus, hs_minus = empty, empty
        if len(loops) >= 2:
            reflected = signed_reflected_basis(
                walk, loops, chain.N, basis=ops.basis, include_terminal=False
            )
            hs_minus = linalg.orth(reflected.matrix())
        source = "signed_reflected"

    return SpectralData(
        chain=chain,
        ops=ops,
        pairs=pairs,
        lifts=tuple(lifts),
        hs_plus=hs_plus,
        hs_minus=hs_minus,
        hs_source=source,
        mass_point_values=tuple(float(value) for value in mass_point_values),
    )


def spectral_summary(data: SpectralData) -> pa.Table:
    """
    One row per lifted eigenvector: lambda, branch, norm_sq,
    is_mass_point and residual.
    """

    return pa.Table.from_pydict(
        {
            "lambda": [vector.lam for vector in data.lifts],
            "branch": [vector.branch for vector in data.lifts],
            "norm_sq": [vector.norm_sq for vector in data.lifts],
            "is_mass_point": [data.is_mass_point(vector.lam) for vector in data.lifts],
            "residual": [vector.residual for vector in data.lifts],
        }
    )


def walk_mass_points(
    walk: HalfLineWalk, sizes: Sequence[int], **options
) -> List[MassPoint]:
    """
    Mass points of a half-line walk from its truncations at ``sizes``.
    """

    return mass_points(
        [eigensolve(truncate(walk, size).jacobi()) for size in sizes], **options
    )
