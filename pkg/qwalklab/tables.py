"""
Tabular results: per-vertex measure tables shared by the walk, arc and
measure modules, and the check records scenario runs report.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pyarrow as pa


@dataclass(frozen=True, eq=False)
class MeasureTable:
    """
    Nonnegative values indexed by vertex together with where they came from.

    Attributes:
        values: np.ndarray:
            One value per vertex, index equals vertex number.
        provenance: str:
            Method tag such as ``direct_cesaro(T=10000,N=300)``,
            ``spectral(N=300)`` or ``closed_form(stationary)``.
        diagnostics: Dict[str, Any]:
            Free-form numerical diagnostics gathered while computing
            the values (norm drift, tail estimates, warnings).
    """

    values: np.ndarray
    provenance: str
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, vertex: int) -> float:
        return float(self.values[vertex])

    def total(self) -> float:
        """
        Total mass of the table.
        """

        return float(self.values.sum())

    def sup_distance(self, other: "MeasureTable", upto: Optional[int] = None) -> float:
        """
        Sup-norm distance to another table over their common vertices.

        Args:
            other: MeasureTable:
                Table to compare against.
            upto: Optional[int]:  (Default value = None)
                Last vertex (inclusive) to compare, all common vertices when None.

        Returns:
            float:
                max |self(u) - other(u)|.
        """

        size = min(len(self), len(other))
        if upto is not None:
            size = min(size, upto + 1)
        return float(np.max(np.abs(self.values[:size] - other.values[:size])))

    def to_arrow(self, column: str = "value") -> pa.Table:
        """
        Represent the table as an Arrow table with vertex and value columns.
        """

        return pa.Table.from_pydict(
            {
                "vertex": pa.array(np.arange(len(self.values)), type=pa.int64()),
                column: pa.array(self.values, type=pa.float64()),
            }
        )


@dataclass(frozen=True)
class CheckRecord:
    """
    Outcome of one named check.

    Attributes:
        name: str:
            Check name, unique within a report.
        module: str:
            Library module the check exercises.
        expected: str:
            Human readable expectation.
        observed: float:
            Measured deviation or value compared against the tolerance.
        tolerance: float:
            Threshold used for the verdict.
        passed: bool:
            Verdict.
        detail: str:
            Extra context, the error message when the check raised.
        runtime: float:
            Seconds spent, logged but never written to report files.
    """

    name: str
    module: str
    expected: str
    observed: float
    tolerance: float
    passed: bool
    detail: str = ""
    runtime: float = 0.0


@dataclass(frozen=True)
class VerificationReport:
    """
    Ordered check records and the overall verdict.
    """

    records: Tuple[CheckRecord, ...]

    @property
    def passed(self) -> bool:
        return all(record.passed for record in self.records)

    @property
    def failures(self) -> Tuple[str, ...]:
        return tuple(record.name for record in self.records if not record.passed)

    def to_arrow(self) -> pa.Table:
        return pa.Table.from_pydict(
            {
                "name": pa.array(
                    [record.name for record in self.records], type=pa.string()
                ),
                "module": pa.array(
                    [record.module for record in self.records], type=pa.string()
                ),
                "expected": pa.array(
                    [record.expected for record in self.records], type=pa.string()
                ),
                "observed": pa.array(
                    [record.observed for record in self.records], type=pa.float64()
                ),
                "tolerance": pa.array(
                    [record.tolerance for record in self.records], type=pa.float64()
                ),
                "passed": pa.array(
                    [record.passed for record in self.records], type=pa.bool_()
                ),
                "detail": pa.array(
                    [record.detail for record in self.records], type=pa.string()
                ),
            }
        )
