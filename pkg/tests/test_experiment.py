"""
Tests for QWalkLab.experiment
"""

import pathlib

import pytest
from pyarrow import csv

from qwalklab.exceptions import ConfigException, PreconditionException
from qwalklab.experiment import (
    _return_future,
    _run_batch,
    _run_scenario_app,
    build_walk,
    prepare_context,
    run,
    run_scenario,
    with_overrides,
)
from qwalklab.sources import OutputSpec, from_preset, serialize_scenario


@pytest.fixture(name="small_pr")
def fixture_small_pr():
    """
    Positive recurrent scenario shrunk to small truncations and horizons
    """

    return with_overrides(
        from_preset("homogeneous_pr"), truncation=(20, 40), horizon=(50, 100)
    )


@pytest.fixture(name="no_output_root_env", autouse=True)
def fixture_no_output_root_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """
    Keep QWALKLAB_OUTPUT_ROOT from redirecting test output
    """

    monkeypatch.delenv("QWALKLAB_OUTPUT_ROOT", raising=False)


def test_build_walk():
    """
    Tests build_walk adds loops in order
    """

    walk = build_walk(from_preset("example_b_two_loops"))
    assert walk.loop_sites == (0, 3)
    assert walk.r(0) == pytest.approx(0.5)
    assert walk.r(3) == pytest.approx(0.4)

    with pytest.raises(ConfigException):
        with_overrides(from_preset("example_b_two_loops"), truncation=(4,))


def test_prepare_context(small_pr):
    """
    Tests prepare_context
    """

    classified = prepare_context(small_pr, ("classify",))
    assert classified.report.recurrence_class == "positive_recurrent"
    assert classified.truncations == {}

    context = prepare_context(small_pr)
    assert sorted(context.truncations) == [20, 40]
    largest = context.largest
    assert largest.N == 40
    assert sorted(largest.direct) == [50, 100]
    assert largest.spectral.table.total() == pytest.approx(1.0, abs=1e-8)
    assert largest.closed_form.provenance == "closed_form(homogeneous)"
    assert largest.lower_bound is not None
    assert any(abs(point.value - 1) < 1e-6 for point in context.mass_points)


def test_run_scenario(small_pr, get_tempdir: str):
    """
    Tests run_scenario writes the expected files
    """

    root = pathlib.Path(get_tempdir) / "run_scenario"
    result = run_scenario(small_pr, root)
    destination = root / "homogeneous_pr"
    assert result.output_path == str(destination)
    assert sorted(pathlib.Path(path).name for path in result.files) == [
        "classification.csv",
        "convergence.csv",
        "measures_N20.csv",
        "measures_N40.csv",
        "report.csv",
        "richardson.csv",
        "spectrum_N20.csv",
        "spectrum_N40.csv",
    ]
    assert [record.name for record in result.report.records] == list(
        small_pr.checks
    )

    measures = csv.read_csv(destination / "measures_N40.csv")
    assert measures.column_names == [
        "vertex",
        "direct_value",
        "spectral_value",
        "hr_part",
        "hs_part",
        "lower_bound",
        "closed_form",
    ]
    assert measures.num_rows == 41
    assert sum(measures.column("direct_value").to_pylist()) == pytest.approx(
        1.0, abs=1e-9
    )

    classification = csv.read_csv(destination / "classification.csv")
    assert classification.column("recurrence_class").to_pylist() == [
        "positive_recurrent"
    ]

    only_classify = run_scenario(
        small_pr, pathlib.Path(get_tempdir) / "classify_only", stages=("classify",)
    )
    assert [pathlib.Path(path).name for path in only_classify.files] == [
        "classification.csv"
    ]
    assert only_classify.report.records == ()

    with pytest.raises(PreconditionException):
        run_scenario(small_pr, root, stages=("plot",))


def test_run_scenario_deterministic(small_pr, get_tempdir: str):
    """
    Tests repeated runs write byte-identical files
    """

    contents = []
    for attempt in ("first", "second"):
        result = run_scenario(small_pr, pathlib.Path(get_tempdir) / attempt)
        contents.append(
            {
                pathlib.Path(path).name: pathlib.Path(path).read_bytes()
                for path in result.files
            }
        )
    assert contents[0] == contents[1]


def test_run(get_tempdir: str):
    """
    Tests run returns the exit status of its scenarios
    """

    passing = with_overrides(
        from_preset("homogeneous_tr"),
        truncation=(10, 20),
        horizon=(20, 40),
        checks=("classification",),
    )
    failing = with_overrides(
        passing,
        name="failing",
        checks=("lower_bound",),
        output=OutputSpec(directory="failing"),
    )
    root = pathlib.Path(get_tempdir) / "run"

    assert run(passing, output_root=root) == 0
    assert run([passing, failing], output_root=root) == 1

    # scenario files are accepted as well
    path = root / "passing.ini"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_scenario(passing))
    assert run(str(path), output_root=root) == 0


def test_app_docstrings():
    """
    Tests Parsl apps keep the docstrings of the functions they wrap
    """

    for app in (_run_scenario_app, _return_future, _run_batch):
        assert app.__doc__ is not None
        assert app.__doc__ == app.func.__doc__
    assert "join_app" in _return_future.__doc__
