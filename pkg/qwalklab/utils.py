"""
Utility functions for QWalkLab
"""

import logging
import multiprocessing
import os
from typing import Dict, Optional, Union, cast

import duckdb
import parsl
import pyarrow as pa
import pyarrow.compute as pc
from cloudpathlib import AnyPath
from parsl.app.app import AppBase
from parsl.config import Config
from parsl.executors.threads import ThreadPoolExecutor
from pyarrow import csv

logger = logging.getLogger(__name__)

# read max threads from environment if necessary
# max threads will be used with default Parsl config and Duckdb
MAX_THREADS = (
    multiprocessing.cpu_count()
    if "QWALKLAB_MAX_THREADS" not in os.environ
    else int(cast(int, os.environ.get("QWALKLAB_MAX_THREADS")))
)

# output root used when neither the caller nor the environment sets one
DEFAULT_OUTPUT_ROOT = "results"

# significant digits for every float written to CSV
CSV_SIGNIFICANT_DIGITS = 15

_app_base_init = AppBase.__init__


def _app_init_keeping_doc(self, func, *args, **kwargs):
    """
    AppBase.__init__ that hands the wrapped function's docstring to the
    app, so autodoc renders QWalkLab's python_app and join_app functions.
    """
    _app_base_init(self, func, *args, **kwargs)
    self.__doc__ = func.__doc__


AppBase.__init__ = _app_init_keeping_doc


def _default_parsl_config():
    """
    Return a default Parsl configuration for use with QWalkLab.
    """
    return Config(
        executors=[ThreadPoolExecutor(max_threads=MAX_THREADS, label="local_threads")]
    )


def _load_parsl(parsl_config: Optional[parsl.Config] = None) -> None:
    """
    Load the given Parsl configuration, or the default one.

    An already loaded configuration is kept with a warning unless a new
    configuration was supplied, in which case it replaces the old one.
    """

    try:
        parsl.load(_default_parsl_config() if parsl_config is None else parsl_config)
    except RuntimeError as runtime_exc:
        if str(runtime_exc) == "Config has already been loaded":
            logger.warning(str(runtime_exc))

            if parsl_config is not None:
                parsl.clear()
                parsl.load(parsl_config)

        else:
            raise


def _output_root(output_root: Optional[Union[str, AnyPath]] = None) -> AnyPath:
    """
    Resolve the output root: QWALKLAB_OUTPUT_ROOT wins over the given
    root, which wins over ``results``.
    """

    if "QWALKLAB_OUTPUT_ROOT" in os.environ:
        return AnyPath(os.environ["QWALKLAB_OUTPUT_ROOT"])
    return AnyPath(DEFAULT_OUTPUT_ROOT if output_root is None else output_root)


def _format_for_csv(table: pa.Table) -> pa.Table:
    """
    Render float columns with a fixed number of significant digits and
    strip structural characters from string columns, so files can be
    written unquoted and compared byte by byte.
    """

    columns = []
    for column in table.columns:
        if pa.types.is_floating(column.type):
            column = pa.array(
                [
                    None
                    if value is None
                    else format(value, f".{CSV_SIGNIFICANT_DIGITS}g")
                    for value in column.to_pylist()
                ],
                type=pa.string(),
            )
        elif pa.types.is_string(column.type):
            column = pc.replace_substring_regex(
                column, pattern="[,\"\r\n]", replacement=";"
            )
        columns.append(column)

    return pa.Table.from_arrays(columns, names=table.column_names)


def _write_csv(table: pa.Table, path: Union[str, AnyPath]) -> AnyPath:
    """
    Write an Arrow table as CSV to a local or cloud path.

    Args:
        table: pa.Table:
            Table to write, rows already in their final order.
        path: Union[str, AnyPath]:
            Destination file.

    Returns:
        AnyPath:
            The destination path.
    """

    buffer = pa.BufferOutputStream()
    csv.write_csv(
        _format_for_csv(table),
        buffer,
        write_options=csv.WriteOptions(quoting_style="none"),
    )

    destination = AnyPath(path)
    destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_bytes(buffer.getvalue().to_pybytes())
    logger.info("Wrote %d rows to %s", table.num_rows, destination)
    return destination


def _duckdb_connection() -> duckdb.DuckDBPyConnection:
    """
    Creates a DuckDB connection sized to MAX_THREADS.

    Returns:
        duckdb.DuckDBPyConnection
    """

    return duckdb.connect().execute(
        f"""
        /*
        Set threads available to duckdb
        See the following for more information:
        https://duckdb.org/docs/sql/pragmas#memory_limit-threads
        */
        PRAGMA threads={MAX_THREADS};
        """
    )


def _join_measure_columns(vertex_count: int, columns: Dict[str, pa.Table]) -> pa.Table:
    """
    Join per-vertex Arrow tables (columns ``vertex`` and ``value``) into one
    table ordered by vertex. Missing tables or vertices become nulls.

    Args:
        vertex_count: int:
            Vertices 0..vertex_count-1 form the row set.
        columns: Dict[str, pa.Table]:
            Output column name to the table supplying it, in output order.

    Returns:
        pa.Table:
            ``vertex`` followed by one float64 column per entry.
    """

    connection = _duckdb_connection()
    connection.register(
        "vertices",
        pa.Table.from_pydict(
            {"vertex": pa.array(range(vertex_count), type=pa.int64())}
        ),
    )

    selects, joins = ["vertices.vertex AS vertex"], []
    for position, (name, table) in enumerate(columns.items()):
        alias = f"source_{position}"
        connection.register(alias, table)
        selects.append(f"CAST({alias}.value AS DOUBLE) AS {name}")
        joins.append(f"LEFT JOIN {alias} ON {alias}.vertex = vertices.vertex")

    result = connection.execute(
        f"""
        SELECT {", ".join(selects)}
        FROM vertices
        {" ".join(joins)}
        ORDER BY vertices.vertex
        """
    ).arrow()
    connection.close()
    return result
