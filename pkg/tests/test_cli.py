"""
Tests for QWalkLab.cli
"""

import pathlib

import pytest

from qwalklab.cli import EXIT_CONFIG_ERROR, EXIT_OK, main, resolve_scenario
from qwalklab.exceptions import ConfigException


@pytest.fixture(name="no_output_root_env", autouse=True)
def fixture_no_output_root_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """
    Keep QWALKLAB_OUTPUT_ROOT from redirecting test output
    """

    monkeypatch.delenv("QWALKLAB_OUTPUT_ROOT", raising=False)


def test_resolve_scenario(get_tempdir: str):
    """
    Tests resolve_scenario prefers files over bundled names
    """

    assert resolve_scenario("example_a").walk_family == "example_a"

    with pytest.raises(ConfigException):
        resolve_scenario(str(pathlib.Path(get_tempdir) / "absent.ini"))


def test_verify_list(capsys: pytest.CaptureFixture):
    """
    Tests verify --list prints checks without running them
    """

    assert main(["verify", "--list"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 11
    assert lines[0].split("\t")[:2] == ["operator_algebra", "arc-space"]

    assert main(["verify", "--list", "--filter", "rw-model"]) == EXIT_OK
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["recurrence_taxonomy", "conjugation_order"]


def test_classify_command(get_tempdir: str, capsys: pytest.CaptureFixture):
    """
    Tests the classify subcommand writes classification.csv
    """

    root = pathlib.Path(get_tempdir) / "cli"
    assert main(["--output-root", str(root), "classify", "example_c"]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert printed == [str(root / "example_c" / "classification.csv")]
    assert "positive_recurrent" in (
        root / "example_c" / "classification.csv"
    ).read_text()


def test_config_errors(get_tempdir: str, capsys: pytest.CaptureFixture):
    """
    Tests configuration errors map to exit status 2
    """

    missing = str(pathlib.Path(get_tempdir) / "missing.ini")
    assert main(["classify", missing]) == EXIT_CONFIG_ERROR
    assert "config error" in capsys.readouterr().err

    broken = pathlib.Path(get_tempdir) / "broken.ini"
    broken.write_text(
        "[scenario]\npreset = example_a\n[loop.1]\nsite = 0\nmass = 1.5\n"
    )
    assert main(["run", str(broken)]) == EXIT_CONFIG_ERROR
    error = capsys.readouterr().err
    assert "[loop.1] mass" in error
    assert "(line 5)" in error

    with pytest.raises(SystemExit):
        main(["verify", "--filter", "plotting"])
