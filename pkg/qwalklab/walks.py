"""
Half-line random walks with self loops: parameter families, recurrence
classification, stationary-type vectors and Jacobi matrices.
"""

import dataclasses
import functools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Literal, Optional, Sequence, Tuple

import numpy as np

from qwalklab.exceptions import (
    ClassificationException,
    ParameterException,
    PreconditionException,
)
from qwalklab.presets import defaults
from qwalklab.tables import MeasureTable

logger = logging.getLogger(__name__)

RecurrenceClass = Literal["transient", "null_recurrent", "positive_recurrent"]
RECURRENCE_CLASSES: Tuple[str, ...] = (
    "transient",
    "null_recurrent",
    "positive_recurrent",
)

# vectorized coefficient rule: site indices -> (p, q, r)
CoefficientRule = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]

_PROBABILITY_TOL = 1e-12


def _homogeneous_rule(
    sites: np.ndarray, p: float, q: float, r: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    p_j = p, q_j = q, r_j = r for j >= 1 with the boundary site
    sending all non-loop mass to the right.
    """

    at_origin = sites == 0
    return (
        np.where(at_origin, 1.0 - r, p),
        np.where(at_origin, 0.0, q),
        np.full(sites.shape, r, dtype=float),
    )


def _example_a_rule(sites: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sites = sites.astype(float)
    return (
        (sites + 2) / (2 * sites + 2),
        sites / (2 * sites + 2),
        np.zeros(sites.shape),
    )


def _example_b_rule(sites: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sites = sites.astype(float)
    return (
        (sites + 1) / (2 * sites + 1),
        sites / (2 * sites + 1),
        np.zeros(sites.shape),
    )


def _example_c_rule(sites: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # max() keeps the unused branches of np.where finite at sites 0 and 1
    safe = np.maximum(sites.astype(float), 2.0)
    p = np.where(sites == 0, 1.0, np.where(sites == 1, 0.5, (safe - 1) / (2 * safe)))
    q = np.where(sites == 0, 0.0, np.where(sites == 1, 0.5, (safe + 1) / (2 * safe)))
    return p, q, np.zeros(sites.shape)


def _table_rule(
    sites: np.ndarray, rows: Tuple[Tuple[float, float, float], ...]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Rows give (p, q, r) for sites 0..len(rows)-1, afterwards the last row
    repeats (or the symmetric step when only the boundary row is given).
    """

    table = np.asarray(rows, dtype=float)
    continuation = table[-1] if len(table) >= 2 else np.array([0.5, 0.5, 0.0])
    picked = np.where(
        (sites < len(table))[:, None],
        table[np.minimum(sites, len(table) - 1)],
        continuation[None, :],
    )
    return picked[:, 0], picked[:, 1], picked[:, 2]


@dataclass(frozen=True)
class HalfLineWalk:
    """
    Random walk on {0, 1, 2, ...} moving right with p_j, left with q_j
    and staying with r_j.

    Coefficients are produced by a vectorized rule, then site overrides
    (self loops added afterwards) are applied. Evaluated coefficients are
    memoized up to the largest requested site.

    Attributes:
        name: str:
            Family name used in provenance strings.
        rule: CoefficientRule:
            Vectorized function from site indices to (p, q, r).
        overrides: Tuple[Tuple[int, float, float, float], ...]:
            (site, p, q, r) replacements, later entries win.
        explicit_span: int:
            Sites below this index are given explicitly by the rule,
            beyond it the rule is eventually loop free unless loop_tail is set.
        loop_tail: Optional[int]:
            When set, every site at or beyond this index carries a loop.
        declared_class: Optional[str]:
            Recurrence class known in advance, used as classification fallback.
    """

    name: str
    rule: CoefficientRule
    overrides: Tuple[Tuple[int, float, float, float], ...] = ()
    explicit_span: int = 1
    loop_tail: Optional[int] = None
    declared_class: Optional[str] = None
    _cache: Dict[str, np.ndarray] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False, compare=False
    )

    def coefficients(self, upto: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Read-only arrays p, q, r for sites 0..upto.

        Args:
            upto: int:
                Largest site index to evaluate.

        Returns:
            Tuple[np.ndarray, np.ndarray, np.ndarray]:
                Arrays of length upto + 1.
        """

        with self._lock:
            cached = self._cache.get("p")
            if cached is None or len(cached) <= upto:
                # grow geometrically so repeated small extensions stay cheap
                size = max(upto + 1, 2 * (0 if cached is None else len(cached)))
                p, q, r = self._evaluate(size)
                for key, values in zip("pqr", (p, q, r)):
                    values.setflags(write=False)
                    self._cache[key] = values

            return (
                self._cache["p"][: upto + 1],
                self._cache["q"][: upto + 1],
                self._cache["r"][: upto + 1],
            )

    def _evaluate(self, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        sites = np.arange(size)
        p, q, r = (np.array(values, dtype=float) for values in self.rule(sites))
        for site, p_site, q_site, r_site in self.overrides:
            if site < size:
                p[site], q[site], r[site] = p_site, q_site, r_site

        _validate_triples(p, q, r, name=self.name)
        return p, q, r

    def p(self, site: int) -> float:
        return float(self.coefficients(site)[0][site])

    def q(self, site: int) -> float:
        return float(self.coefficients(site)[1][site])

    def r(self, site: int) -> float:
        return float(self.coefficients(site)[2][site])

    @property
    def loop_sites(self) -> Tuple[int, ...]:
        """
        Sorted loop sites below loop_tail (all of them when loop_tail is None).
        """

        span = max([self.explicit_span] + [site + 1 for site, *_ in self.overrides])
        _, _, r = self.coefficients(span)
        sites = np.flatnonzero(r > 0)
        if self.loop_tail is not None:
            sites = sites[sites < self.loop_tail]
        return tuple(int(site) for site in sites)

    def loop_set(self, upto: int) -> Tuple[int, ...]:
        """
        Loop sites within {0..upto}, including an infinite loop tail.
        """

        _, _, r = self.coefficients(upto)
        return tuple(int(site) for site in np.flatnonzero(r > 0))

    @property
    def has_loops(self) -> bool:
        return bool(self.loop_sites) or self.loop_tail is not None


def _validate_triples(
    p: np.ndarray, q: np.ndarray, r: np.ndarray, name: str = "walk"
) -> None:
    """
    Raise ParameterException for any invalid probability triple.
    """

    sums = p + q + r
    problems = (
        (p < 0)
        | (q < 0)
        | (r < 0)
        | (np.abs(sums - 1.0) > _PROBABILITY_TOL)
        | (p <= 0)
    )
    problems[1:] |= q[1:] <= 0
    problems[0] |= q[0] != 0

    if problems.any():
        site = int(np.flatnonzero(problems)[0])
        raise ParameterException(
            f"Invalid probabilities for {name} at site {site}: "
            f"p={p[site]!r}, q={q[site]!r}, r={r[site]!r}"
        )


def make_family(name: str, params: Sequence[float] = ()) -> HalfLineWalk:
    """
    Build one of the named walk families.

    Args:
        name: str:
            One of ``homogeneous``, ``example_a``, ``example_b``,
            ``example_c`` or ``custom``.
        params: Sequence[float]:  (Default value = ())
            ``homogeneous``: (p, q) or (p, q, r).
            ``custom``: flattened (p, q, r) rows starting at site 0.
            Other families take no parameters.

    Returns:
        HalfLineWalk:
            The walk with its coefficient rule attached.

    Example:

        .. code-block:: python

            from qwalklab.walks import make_family

            walk = make_family("homogeneous", (0.3, 0.7))
            walk.p(0), walk.q(3)
    """

    params = tuple(float(value) for value in params)

    if name == "homogeneous":
        if len(params) not in (2, 3):
            raise ParameterException(
                "homogeneous family takes (p, q) or (p, q, r) parameters"
            )
        p, q = params[:2]
        r = params[2] if len(params) == 3 else 1.0 - p - q
        # rounding residue of 1 - p - q is not a loop
        if abs(r) <= _PROBABILITY_TOL:
            r = 0.0
        total_error = abs(p + q + r - 1)
        if min(p, q, r) < 0 or p <= 0 or q <= 0 or total_error > _PROBABILITY_TOL:
            raise ParameterException(
                f"Invalid homogeneous probabilities p={p!r}, q={q!r}, r={r!r}"
            )
        walk = HalfLineWalk(
            name=f"homogeneous(p={p!r},q={q!r},r={r!r})",
            rule=functools.partial(_homogeneous_rule, p=p, q=q, r=r),
            loop_tail=0 if r > 0 else None,
        )

    elif name in ("example_a", "example_b", "example_c"):
        if params:
            raise ParameterException(f"{name} takes no parameters")
        rules = {
            "example_a": (_example_a_rule, "transient"),
            "example_b": (_example_b_rule, "null_recurrent"),
            "example_c": (_example_c_rule, "positive_recurrent"),
        }
        rule, declared = rules[name]
        walk = HalfLineWalk(
            name=name, rule=rule, explicit_span=2, declared_class=declared
        )

    elif name == "custom":
        if not params or len(params) % 3 != 0:
            raise ParameterException(
                "custom family takes flattened (p, q, r) rows, one per site"
            )
        rows = tuple(
            (params[index], params[index + 1], params[index + 2])
            for index in range(0, len(params), 3)
        )
        continuation_loops = len(rows) >= 2 and rows[-1][2] > 0
        walk = HalfLineWalk(
            name=f"custom({len(rows)} rows)",
            rule=functools.partial(_table_rule, rows=rows),
            explicit_span=len(rows),
            loop_tail=len(rows) if continuation_loops else None,
        )

    else:
        raise ParameterException(f"Unknown walk family {name!r}")

    # evaluate the explicit part once to surface parameter errors early
    walk.coefficients(walk.explicit_span + 1)
    return walk


def add_self_loop(
    walk: HalfLineWalk,
    site: int,
    loop_mass: float,
    take_from: Literal["right", "left", "proportional"] = "right",
) -> HalfLineWalk:
    """
    Return a walk identical to ``walk`` except r_site = loop_mass.

    The mass needed to reach loop_mass is removed from p_site (right),
    q_site (left) or from both in proportion to their sizes.

    Args:
        walk: HalfLineWalk:
            Walk to perturb.
        site: int:
            Site receiving the loop.
        loop_mass: float:
            New loop probability, strictly between 0 and 1.
        take_from: Literal["right", "left", "proportional"]:
            Which transition gives up mass.

    Returns:
        HalfLineWalk:
            Perturbed walk, the declared class is kept since finitely
            many loops do not change recurrence.
    """

    if not 0 < loop_mass < 1:
        raise ParameterException(f"Loop mass must lie in (0, 1), got {loop_mass!r}")
    if site < 0:
        raise ParameterException(f"Loop site must be nonnegative, got {site!r}")
    if take_from == "left" and site == 0:
        raise ParameterException("Site 0 has no left transition to take mass from")

    p, q, r = (float(values[site]) for values in walk.coefficients(site))
    delta = loop_mass - r

    if take_from == "right":
        p_new, q_new = p - delta, q
    elif take_from == "left":
        p_new, q_new = p, q - delta
    elif take_from == "proportional":
        p_new, q_new = p - delta * p / (p + q), q - delta * q / (p + q)
    else:
        raise ParameterException(f"Unknown take_from value {take_from!r}")

    if p_new <= 0 or (site >= 1 and q_new <= 0):
        raise ParameterException(
            f"Loop mass {loop_mass!r} at site {site} exhausts the "
            f"{take_from} transition (p={p_new!r}, q={q_new!r})"
        )

    return dataclasses.replace(
        walk,
        name=f"{walk.name}+loop({site},{loop_mass!r})",
        overrides=walk.overrides + ((site, p_new, q_new, loop_mass),),
        explicit_span=max(walk.explicit_span, site + 1),
    )


@dataclass(frozen=True, eq=False)
class SeriesDiagnostics:
    """
    Numerical verdict on one positive series.

    Attributes:
        status: str:
            ``stabilized``, ``diverged`` or ``unresolved``.
        partial_sums: np.ndarray:
            Running sums, cut after the divergence threshold is crossed.
        value: float:
            Last partial sum plus the tail estimate, inf when diverged.
        ratio_estimate: float:
            Gauss ratio estimate n (t_n / t_{n+1} - 1) at the last term.
    """

    status: str
    partial_sums: np.ndarray
    value: float
    ratio_estimate: float

    @property
    def converged(self) -> bool:
        return self.status == "stabilized"


def _raabe(log_terms: np.ndarray, count: int) -> float:
    """
    Gauss ratio estimate n (t_{n-1} / t_n - 1) at the n-th of count terms.
    """

    if count < 2:
        return float("nan")
    return float((count - 1) * np.expm1(log_terms[count - 2] - log_terms[count - 1]))


def _bertrand_diverges(log_terms: np.ndarray, ratio_estimate: float) -> bool:
    """
    Refine a ratio estimate just above 1: when it tends to 1 like 1/n
    (halving n doubles its excess) and ln(n) (h - 1) stays below 1, the
    series diverges by Bertrand's test.
    """

    count = len(log_terms)
    if count < 8 or not ratio_estimate > 1:
        return False
    earlier = _raabe(log_terms, count // 2)
    shrinking = ratio_estimate - 1 <= 0.75 * (earlier - 1)
    return bool(shrinking and math.log(count) * (ratio_estimate - 1) < 1)


def _evaluate_series(
    log_terms: np.ndarray,
    stabilize_tol: Optional[float] = None,
    diverge_threshold: Optional[float] = None,
    ratio_margin: Optional[float] = None,
) -> SeriesDiagnostics:
    """
    Classify a positive series from the logarithms of its terms.

    Args:
        log_terms: np.ndarray:
            log t_1, ..., log t_n.
        stabilize_tol: Optional[float]:
            Relative size of the last term below which the sum is settled.
        diverge_threshold: Optional[float]:
            Partial sum beyond which the series diverges.
        ratio_margin: Optional[float]:
            Convergence needs a ratio estimate above 1 + ratio_margin.

    Returns:
        SeriesDiagnostics
    """

    stabilize_tol = (
        defaults["CONFIG_STABILIZE_TOL"] if stabilize_tol is None else stabilize_tol
    )
    diverge_threshold = (
        defaults["CONFIG_DIVERGE_THRESHOLD"]
        if diverge_threshold is None
        else diverge_threshold
    )
    ratio_margin = (
        defaults["CONFIG_RATIO_MARGIN"] if ratio_margin is None else ratio_margin
    )

    with np.errstate(over="ignore"):
        terms = np.exp(log_terms)
        partial_sums = np.cumsum(terms)

    crossed = np.flatnonzero(~(partial_sums <= diverge_threshold))
    if crossed.size:
        return SeriesDiagnostics(
            status="diverged",
            partial_sums=partial_sums[: crossed[0] + 1],
            value=float("inf"),
            ratio_estimate=float("nan"),
        )

    count = len(log_terms)
    ratio_estimate = _raabe(log_terms, count)

    # Gauss tail estimate sum_{k>n} t_k ~ t_n n / (h - 1)
    tail = (
        terms[-1] * (count - 1) / (ratio_estimate - 1)
        if ratio_estimate > 1 + ratio_margin
        else 0.0
    )

    if terms[-1] <= stabilize_tol * partial_sums[-1] or tail > 0:
        status = "stabilized"
    elif ratio_estimate <= 1 or _bertrand_diverges(log_terms, ratio_estimate):
        return SeriesDiagnostics(
            status="diverged",
            partial_sums=partial_sums,
            value=float("inf"),
            ratio_estimate=ratio_estimate,
        )
    else:
        status, tail = "unresolved", float("nan")

    return SeriesDiagnostics(
        status=status,
        partial_sums=partial_sums,
        value=float(partial_sums[-1] + tail),
        ratio_estimate=ratio_estimate,
    )


def log_products(walk: HalfLineWalk, cutoff: int) -> Dict[str, np.ndarray]:
    """
    log of q_1..q_j / p_1..p_j (index j) and of p_0..p_{j-1} / q_1..q_j
    for j = 0..cutoff.
    """

    p, q, _ = walk.coefficients(cutoff)
    log_transient = np.concatenate(([0.0], np.cumsum(np.log(q[1:]) - np.log(p[1:]))))
    log_reversible = np.concatenate(
        ([0.0], np.cumsum(np.log(p[:-1]) - np.log(q[1:])))
    )
    return {"ct": log_transient, "cr": log_reversible}


@dataclass(frozen=True, eq=False)
class RecurrenceReport:
    """
    Classification of a walk from its C_T and C_R series.
    """

    recurrence_class: str
    ct: SeriesDiagnostics
    cr: SeriesDiagnostics
    verified: bool
    consistent_with_declared: bool

    @property
    def ct_partial(self) -> np.ndarray:
        return self.ct.partial_sums

    @property
    def cr_partial(self) -> np.ndarray:
        return self.cr.partial_sums

    @property
    def converged(self) -> Dict[str, bool]:
        return {"ct": self.ct.converged, "cr": self.cr.converged}

    @property
    def is_recurrent(self) -> bool:
        return self.recurrence_class != "transient"


def classify(
    walk: HalfLineWalk,
    cutoff: Optional[int] = None,
    stabilize_tol: Optional[float] = None,
    diverge_threshold: Optional[float] = None,
    ratio_margin: Optional[float] = None,
) -> RecurrenceReport:
    """
    Classify recurrence from C_T = sum q_1..q_j / p_1..p_j and
    C_R = sum p_0..p_{j-1} / q_1..q_j evaluated to cutoff.

    Args:
        walk: HalfLineWalk:
            Walk to classify.
        cutoff: Optional[int]:  (Default value = None)
            Number of series terms, at least 10.
        stabilize_tol: Optional[float]:  (Default value = None)
            Relative tail increment counting as stabilized.
        diverge_threshold: Optional[float]:  (Default value = None)
            Partial sum counting as divergent.
        ratio_margin: Optional[float]:  (Default value = None)
            Margin for the ratio estimate used when neither criterion triggers.

    Returns:
        RecurrenceReport:
            Class, series diagnostics and whether the class was verified
            numerically or taken from the declared class.
    """

    cutoff = defaults["CONFIG_CUTOFF"] if cutoff is None else int(cutoff)
    if cutoff < 10:
        raise PreconditionException(f"cutoff must be at least 10, got {cutoff}")

    logs = log_products(walk, cutoff)
    options = dict(
        stabilize_tol=stabilize_tol,
        diverge_threshold=diverge_threshold,
        ratio_margin=ratio_margin,
    )
    ct = _evaluate_series(logs["ct"][1:], **options)
    cr = _evaluate_series(logs["cr"][1:], **options)

    if ct.status == "stabilized":
        found: Optional[str] = "transient"
    elif ct.status == "diverged" and cr.status == "stabilized":
        found = "positive_recurrent"
    elif ct.status == "diverged" and cr.status == "diverged":
        found = "null_recurrent"
    else:
        found = None

    if found is None:
        if walk.declared_class is None:
            raise ClassificationException(
                f"Could not classify {walk.name}: C_T {ct.status}, C_R {cr.status} "
                f"at cutoff {cutoff} and no declared class"
            )
        logger.warning(
            "Classification of %s unresolved at cutoff %d, using declared class %s",
            walk.name,
            cutoff,
            walk.declared_class,
        )
        return RecurrenceReport(
            recurrence_class=walk.declared_class,
            ct=ct,
            cr=cr,
            verified=False,
            consistent_with_declared=True,
        )

    consistent = walk.declared_class is None or walk.declared_class == found
    if not consistent:
        logger.warning(
            "Walk %s classified as %s but declared %s",
            walk.name,
            found,
            walk.declared_class,
        )
    logger.info("Walk %s classified as %s", walk.name, found)

    return RecurrenceReport(
        recurrence_class=found,
        ct=ct,
        cr=cr,
        verified=True,
        consistent_with_declared=consistent,
    )


def stationary_distribution(
    walk: HalfLineWalk,
    N: int,
    report: Optional[RecurrenceReport] = None,
    **classify_options,
) -> MeasureTable:
    """
    Stationary distribution pi(j) = t_j / (1 + C_R) for j = 0..N where
    t_0 = 1 and t_j = p_0..p_{j-1} / q_1..q_j.

    Args:
        walk: HalfLineWalk:
            A positive recurrent walk.
        N: int:
            Largest site.
        report: Optional[RecurrenceReport]:  (Default value = None)
            Existing classification, computed when omitted.

    Returns:
        MeasureTable:
            pi restricted to {0..N}.
    """

    report = classify(walk, **classify_options) if report is None else report
    if report.recurrence_class != "positive_recurrent":
        raise PreconditionException(
            f"Stationary distribution requires a positive recurrent walk, "
            f"{walk.name} is {report.recurrence_class}"
        )

    log_terms = log_products(walk, N)["cr"]
    values = np.exp(log_terms) / (1.0 + report.cr.value)

    return MeasureTable(
        values=values,
        provenance="closed_form(stationary)",
        diagnostics={"c_r": report.cr.value, "verified": report.verified},
    )


def signed_eigenvector(walk: HalfLineWalk, N: int) -> np.ndarray:
    """
    pi'(j) = (-1)^j p_0..p_{j-1} / q_1..q_j, the eigenvector of M
    for eigenvalue -1 of a loop-free walk.
    """

    if walk.has_loops:
        raise PreconditionException(
            f"Signed eigenvector requires a loop-free walk, {walk.name} has loops"
        )

    signs = np.where(np.arange(N + 1) % 2 == 0, 1.0, -1.0)
    return signs * np.exp(log_products(walk, N)["cr"])


@dataclass(frozen=True, eq=False)
class JacobiMatrix:
    """
    Symmetric tridiagonal matrix stored by its diagonals.
    """

    diagonal: np.ndarray
    off_diagonal: np.ndarray

    @property
    def size(self) -> int:
        return len(self.diagonal)

    def to_dense(self) -> np.ndarray:
        """
        Dense symmetric matrix, upper and lower off-diagonals bitwise equal.
        """

        matrix = np.diag(self.diagonal)
        if self.size > 1:
            index = np.arange(self.size - 1)
            matrix[index, index + 1] = self.off_diagonal
            matrix[index + 1, index] = self.off_diagonal
        return matrix


@dataclass(frozen=True, eq=False)
class TruncatedChain:
    """
    Column-stochastic chain on finitely many states.

    (matrix)[u, v] is the probability of jumping from v to u. Half-line
    truncations keep the walk's coefficients except at the last site,
    whose forward mass is sent backward.

    Attributes:
        matrix: np.ndarray:
            Column-stochastic matrix with symmetric support.
        boundary_rule: str:
            Record of how the chain was closed.
        label: str:
            Name of the walk or graph the chain comes from.
    """

    matrix: np.ndarray
    boundary_rule: str = "none"
    label: str = "chain"

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ParameterException("Chain matrix must be square")
        if (matrix < 0).any():
            raise ParameterException("Chain matrix has negative entries")
        if np.abs(matrix.sum(axis=0) - 1.0).max() > _PROBABILITY_TOL:
            raise ParameterException("Chain matrix columns must sum to 1")
        if not np.array_equal(matrix > 0, (matrix > 0).T):
            raise ParameterException("Chain matrix must have symmetric support")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def N(self) -> int:
        return self.size - 1

    @property
    def p(self) -> np.ndarray:
        return np.append(np.diagonal(self.matrix, offset=-1), 0.0)

    @property
    def q(self) -> np.ndarray:
        return np.insert(np.diagonal(self.matrix, offset=1), 0, 0.0)

    @property
    def r(self) -> np.ndarray:
        return np.diagonal(self.matrix).copy()

    @property
    def loop_set(self) -> Tuple[int, ...]:
        return tuple(int(site) for site in np.flatnonzero(np.diagonal(self.matrix) > 0))

    @property
    def is_tridiagonal(self) -> bool:
        offsets = np.subtract.outer(np.arange(self.size), np.arange(self.size))
        return not (self.matrix[np.abs(offsets) > 1] > 0).any()

    def discriminant(self) -> np.ndarray:
        """
        Dense symmetric matrix sqrt(p_{u,v} p_{v,u}).
        """

        return np.sqrt(self.matrix * self.matrix.T)

    def jacobi(self) -> JacobiMatrix:
        """
        Jacobi matrix of a half-line chain: r_j on the diagonal and
        sqrt(p_j q_{j+1}) off the diagonal.
        """

        if not self.is_tridiagonal:
            raise PreconditionException(
                f"Chain {self.label} is not a half-line chain, use discriminant()"
            )
        off = np.sqrt(
            np.diagonal(self.matrix, offset=-1) * np.diagonal(self.matrix, offset=1)
        )
        return JacobiMatrix(diagonal=self.r, off_diagonal=off)


def stochastic_matrix(walk: HalfLineWalk, N: int) -> np.ndarray:
    """
    The walk's transition matrix restricted to {0..N}, without any
    boundary closure (the last column loses p_N).
    """

    p, q, r = walk.coefficients(N)
    matrix = np.diag(r)
    index = np.arange(N)
    matrix[index + 1, index] = p[:-1]
    matrix[index, index + 1] = q[1:]
    return matrix


def truncate(walk: HalfLineWalk, N: int) -> TruncatedChain:
    """
    Restrict the walk to {0..N} with q_N <- q_N + p_N and p_N <- 0.
    """

    if N < 2:
        raise PreconditionException(f"Truncation size must be at least 2, got {N}")

    matrix = stochastic_matrix(walk, N)
    p, q, _ = walk.coefficients(N)
    matrix[N - 1, N] = q[N] + p[N]

    return TruncatedChain(
        matrix=matrix,
        boundary_rule=f"reflect_right_mass_at_{N}",
        label=walk.name,
    )


def jacobi_matrix(walk: HalfLineWalk, N: int) -> JacobiMatrix:
    """
    Jacobi matrix of the walk truncated at N.
    """

    return truncate(walk, N).jacobi()


def conjugation_residual(
    walk: HalfLineWalk,
    N: int,
    order: Literal["inverse_left", "inverse_right"] = "inverse_left",
) -> float:
    """
    Sup-norm distance between the Jacobi matrix and the conjugated
    stochastic matrix on the interior block {0..N-1}.

    ``inverse_left`` compares against D^{-1/2} M D^{1/2} and
    ``inverse_right`` against D^{1/2} M D^{-1/2}, with D the diagonal of
    any reversible measure (normalization cancels).
    """

    log_measure = log_products(walk, N)["cr"]
    matrix = stochastic_matrix(walk, N)[:N, :N]
    log_ratio = log_measure[None, :N] - log_measure[:N, None]
    if order == "inverse_right":
        log_ratio = -log_ratio
    elif order != "inverse_left":
        raise ParameterException(f"Unknown conjugation order {order!r}")

    with np.errstate(over="ignore", invalid="ignore"):
        conjugated = np.where(matrix > 0, matrix * np.exp(0.5 * log_ratio), 0.0)

    jacobi = truncate(walk, N).jacobi().to_dense()[:N, :N]
    return float(np.max(np.abs(jacobi - conjugated)))


def terminal_norm_series(
    walk: HalfLineWalk,
    last_loop: int,
    cutoff: Optional[int] = None,
    stabilize_tol: Optional[float] = None,
    diverge_threshold: Optional[float] = None,
    ratio_margin: Optional[float] = None,
) -> Tuple[SeriesDiagnostics, np.ndarray]:
    """
    Squared norm of the signed reflected vector starting at the last loop,
    as a series of per-site masses.

    The first term is the mass at the loop site, R_j (p_j + r_j) / r_j,
    then Q_l^2 = R_l / q_l for l > last_loop, where
    R_l = q_1..q_l / p_1..p_l.

    Returns:
        Tuple[SeriesDiagnostics, np.ndarray]:
            Series verdict and the log terms it was evaluated from.
    """

    if walk.loop_tail is not None:
        raise PreconditionException(
            f"Walk {walk.name} has infinitely many loops, no last loop exists"
        )
    if walk.r(last_loop) <= 0 or any(site > last_loop for site in walk.loop_sites):
        raise PreconditionException(f"Site {last_loop} is not the rightmost loop")

    cutoff = defaults["CONFIG_CUTOFF"] if cutoff is None else int(cutoff)
    p, q, r = walk.coefficients(last_loop + cutoff)
    log_r = log_products(walk, last_loop + cutoff)["ct"]

    boundary = log_r[last_loop] + np.log(p[last_loop] + r[last_loop]) - np.log(
        r[last_loop]
    )
    sites = np.arange(last_loop + 1, last_loop + cutoff + 1)
    log_terms = np.concatenate(([boundary], log_r[sites] - np.log(q[sites])))

    return (
        _evaluate_series(
            log_terms,
            stabilize_tol=stabilize_tol,
            diverge_threshold=diverge_threshold,
            ratio_margin=ratio_margin,
        ),
        log_terms,
    )
