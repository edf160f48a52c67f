"""
Scenario configuration: INI files and bundled presets parsed into
ScenarioConfig objects and serialized back.
"""

import configparser
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from cloudpathlib import AnyPath

from qwalklab.exceptions import ConfigException, ParameterException
from qwalklab.presets import CHECK_NAMES, config, defaults

logger = logging.getLogger(__name__)

INITIAL_STATE_KINDS: Tuple[str, ...] = (
    "incidence",
    "arc",
    "custom",
    "hs_projected",
    "arc_mixture",
    "avoid_localization",
)
TAKE_FROM: Tuple[str, ...] = ("right", "left", "proportional")
DIRECTIONS: Tuple[str, ...] = ("L", "O", "R")


@dataclass(frozen=True)
class LoopSpec:
    """
    One self loop added to the base walk.
    """

    site: int
    mass: float
    take_from: str = "right"


@dataclass(frozen=True)
class InitialStateSpec:
    """
    Declarative initial state.

    Attributes:
        kind: str:
            One of INITIAL_STATE_KINDS.
        vertex: int:
            Anchor vertex.
        direction: Optional[str]:
            Arc label for ``arc`` states.
        coefficients: Tuple[Tuple[str, complex], ...]:
            (label, amplitude) pairs for ``custom``, ``hs_projected`` and
            ``avoid_localization`` states.
    """

    kind: str
    vertex: int = 0
    direction: Optional[str] = None
    coefficients: Tuple[Tuple[str, complex], ...] = ()


@dataclass(frozen=True)
class OutputSpec:
    directory: str
    spectrum: bool = True
    convergence: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Everything one scenario run needs.

    Attributes:
        name: str:
            Scenario name, also the default output directory.
        walk_family: str:
            Family passed to make_family.
        walk_params: Tuple[float, ...]:
            Family parameters.
        declared_class: Optional[str]:
            Expected recurrence class, the classification check compares to it.
        loops: Tuple[LoopSpec, ...]:
            Self loops added in order.
        truncation: Tuple[int, ...]:
            Ascending truncation sizes, the largest drives reported measures.
        horizon: Tuple[int, ...]:
            Ascending Cesaro horizons, the largest drives reported measures.
        initial_state: InitialStateSpec:
            Initial state.
        checks: Tuple[str, ...]:
            Named checks to run, in report order.
        output: OutputSpec:
            Output directory relative to the output root plus file flags.
        tolerances: Tuple[Tuple[str, float], ...]:
            Sorted overrides of check tolerances and numerical defaults.
    """

    name: str
    walk_family: str
    walk_params: Tuple[float, ...]
    declared_class: Optional[str]
    loops: Tuple[LoopSpec, ...]
    truncation: Tuple[int, ...]
    horizon: Tuple[int, ...]
    initial_state: InitialStateSpec
    checks: Tuple[str, ...]
    output: OutputSpec
    tolerances: Tuple[Tuple[str, float], ...] = field(default_factory=tuple)

    def tolerance(self, check: str) -> float:
        """
        Tolerance for a named check, overrides first.
        """

        fallback = defaults["CONFIG_CHECK_TOLERANCES"][check]
        return dict(self.tolerances).get(check, fallback)

    def option(self, key: str) -> Any:
        """
        Numerical default such as ``cutoff`` or ``cluster_window``, overrides first.
        """

        return dict(self.tolerances).get(key, defaults[f"CONFIG_{key.upper()}"])

    @property
    def largest_truncation(self) -> int:
        return self.truncation[-1]

    @property
    def largest_horizon(self) -> int:
        return self.horizon[-1]


def _state_from_preset(values: Dict[str, Any]) -> InitialStateSpec:
    return InitialStateSpec(
        kind=values["kind"],
        vertex=int(values.get("vertex", 0)),
        direction=values.get("direction"),
        coefficients=tuple(
            (label, complex(value)) for label, value in values.get("coefficients", ())
        ),
    )


def from_preset(name: str) -> ScenarioConfig:
    """
    Build the ScenarioConfig of a bundled scenario.

    Args:
        name: str:
            Key of presets.config.

    Returns:
        ScenarioConfig
    """

    if name not in config:
        raise ConfigException(f"[scenario] preset: unknown scenario {name!r}")

    preset = config[name]
    scenario = ScenarioConfig(
        name=name,
        walk_family=preset["CONFIG_WALK_FAMILY"],
        walk_params=tuple(float(value) for value in preset["CONFIG_WALK_PARAMS"]),
        declared_class=preset["CONFIG_DECLARED_CLASS"],
        loops=tuple(LoopSpec(*loop) for loop in preset["CONFIG_LOOPS"]),
        truncation=tuple(preset["CONFIG_TRUNCATION"]),
        horizon=tuple(preset["CONFIG_HORIZON"]),
        initial_state=_state_from_preset(preset["CONFIG_INITIAL_STATE"]),
        checks=tuple(preset["CONFIG_CHECKS"]),
        output=OutputSpec(directory=name),
    )
    validate(scenario)
    return scenario


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    """
    1-based line number of a section header or of a key inside it.
    """

    in_section = False
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[(.+)\]$", stripped)
        if header:
            in_section = header.group(1).strip() == section
            if in_section and key is None:
                return number
            continue
        if in_section and key is not None and re.match(
            rf"^{re.escape(key)}\s*[=:]", stripped, flags=re.IGNORECASE
        ):
            return number
    return None


class _Reader:
    """
    Typed access to a parsed INI document with errors naming
    ``[section] field`` and the line.
    """

    def __init__(self, parser: configparser.ConfigParser, text: str):
        self.parser = parser
        self.text = text

    def error(self, section: str, key: Optional[str], message: str) -> ConfigException:
        line = _line_of(self.text, section, key)
        where = f"[{section}]" + ("" if key is None else f" {key}")
        suffix = "" if line is None else f" (line {line})"
        return ConfigException(f"{where}: {message}{suffix}")

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section: str, key: str, default: Any = None) -> Optional[str]:
        if not self.parser.has_option(section, key):
            return default
        return self.parser.get(section, key).strip()

    def require(self, section: str, key: str) -> str:
        value = self.get(section, key)
        if value is None or value == "":
            raise self.error(section, None, f"missing required field {key!r}")
        return value

    def convert(self, section: str, key: str, value: str, kind: type) -> Any:
        try:
            if kind is bool:
                return self.parser.BOOLEAN_STATES[value.lower()]
            return kind(value)
        except (KeyError, ValueError) as exc:
            raise self.error(
                section, key, f"cannot read {value!r} as {kind.__name__}"
            ) from exc

    def items(self, section: str, key: str, kind: type) -> Tuple[Any, ...]:
        value = self.get(section, key, "")
        return tuple(
            self.convert(section, key, item.strip(), kind)
            for item in value.split(",")
            if item.strip()
        )


def _parse_coefficients(reader: _Reader, value: str) -> Tuple[Tuple[str, complex], ...]:
    pairs = []
    for item in value.split(","):
        if not item.strip():
            continue
        label, sep, amplitude = item.partition(":")
        if not sep:
            raise reader.error(
                "initial_state",
                "coefficients",
                f"expected label:amplitude, got {item.strip()!r}",
            )
        pairs.append(
            (
                label.strip(),
                reader.convert(
                    "initial_state",
                    "coefficients",
                    amplitude.strip().replace(" ", ""),
                    complex,
                ),
            )
        )
    return tuple(pairs)


def _section_overrides(
    reader: _Reader, base: Optional[ScenarioConfig]
) -> ScenarioConfig:
    """
    Read every section, falling back to ``base`` for sections the file
    leaves out.
    """

    parser = reader.parser
    name = reader.get("scenario", "name") or (None if base is None else base.name)
    if name is None:
        raise reader.error("scenario", None, "missing required field 'name'")

    if parser.has_section("walk"):
        family = reader.require("walk", "family")
        params = reader.items("walk", "params", float)
        declared = reader.get("walk", "declared_class") or None
    elif base is not None:
        family, params = base.walk_family, base.walk_params
        declared = base.declared_class
    else:
        raise reader.error("walk", None, "section is required")

    loop_sections = sorted(
        (section for section in parser.sections() if section.startswith("loop.")),
        key=lambda section: (len(section), section),
    )
    if loop_sections or base is None:
        loops = tuple(
            LoopSpec(
                site=reader.convert(
                    section, "site", reader.require(section, "site"), int
                ),
                mass=reader.convert(
                    section, "mass", reader.require(section, "mass"), float
                ),
                take_from=reader.get(section, "take_from", "right"),
            )
            for section in loop_sections
        )
    else:
        loops = base.loops

    truncation = (
        reader.items("truncation", "sizes", int)
        if parser.has_section("truncation")
        else (None if base is None else base.truncation)
    )
    horizon = (
        reader.items("horizon", "steps", int)
        if parser.has_section("horizon")
        else (None if base is None else base.horizon)
    )
    if truncation is None:
        raise reader.error("truncation", None, "section is required")
    if horizon is None:
        raise reader.error("horizon", None, "section is required")

    if parser.has_section("initial_state"):
        initial_state = InitialStateSpec(
            kind=reader.require("initial_state", "kind"),
            vertex=reader.convert(
                "initial_state",
                "vertex",
                reader.get("initial_state", "vertex", "0"),
                int,
            ),
            direction=reader.get("initial_state", "direction") or None,
            coefficients=_parse_coefficients(
                reader, reader.get("initial_state", "coefficients", "")
            ),
        )
    elif base is not None:
        initial_state = base.initial_state
    else:
        raise reader.error("initial_state", None, "section is required")

    checks = (
        reader.items("checks", "names", str)
        if parser.has_section("checks")
        else (() if base is None else base.checks)
    )

    # a renamed preset writes to its own directory unless [output] says otherwise
    base_output = (
        OutputSpec(directory=name)
        if base is None
        else replace(base.output, directory=name)
    )
    output = OutputSpec(
        directory=reader.get("output", "directory", base_output.directory),
        spectrum=reader.convert(
            "output",
            "spectrum",
            reader.get("output", "spectrum", str(base_output.spectrum)),
            bool,
        ),
        convergence=reader.convert(
            "output",
            "convergence",
            reader.get("output", "convergence", str(base_output.convergence)),
            bool,
        ),
    )

    tolerances = dict(() if base is None else base.tolerances)
    if parser.has_section("tolerances"):
        for key in parser.options("tolerances"):
            if key not in CHECK_NAMES and f"CONFIG_{key.upper()}" not in defaults:
                raise reader.error("tolerances", key, "unknown check or setting")
            tolerances[key] = reader.convert(
                "tolerances", key, reader.get("tolerances", key), float
            )

    return ScenarioConfig(
        name=name,
        walk_family=family,
        walk_params=tuple(params),
        declared_class=declared,
        loops=loops,
        truncation=tuple(truncation),
        horizon=tuple(horizon),
        initial_state=initial_state,
        checks=tuple(checks),
        output=output,
        tolerances=tuple(sorted(tolerances.items())),
    )


def parse_scenario(text: str) -> ScenarioConfig:
    """
    Parse the INI text of a scenario.

    A ``[scenario] preset`` entry starts from a bundled scenario and every
    section present in the text replaces the preset's value.

    Args:
        text: str:
            INI document with inline ``;`` or ``#`` comments.

    Returns:
        ScenarioConfig:
            Validated configuration.

    Raises:
        ConfigException:
            On syntax or schema errors, naming the field and line.
    """

    parser = configparser.ConfigParser(
        inline_comment_prefixes=(";", "#"), interpolation=None
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        suffix = "" if line is None else f" (line {line})"
        raise ConfigException(
            f"malformed scenario file: {exc.message}{suffix}"
        ) from exc

    reader = _Reader(parser, text)
    known = {
        "scenario",
        "walk",
        "truncation",
        "horizon",
        "initial_state",
        "checks",
        "output",
        "tolerances",
    }
    for section in parser.sections():
        if section not in known and not section.startswith("loop."):
            raise reader.error(section, None, "unknown section")

    preset = reader.get("scenario", "preset")
    base = None if preset is None else from_preset(preset)
    scenario = _section_overrides(reader, base)
    validate(scenario, reader)
    return scenario


def load_scenario(path: Union[str, AnyPath]) -> ScenarioConfig:
    """
    Read and parse a scenario file from a local or cloud path.
    """

    path = AnyPath(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigException(f"cannot read scenario file {path}: {exc}") from exc
    logger.info("Loaded scenario file %s", path)
    return parse_scenario(text)


def _raise(reader: Optional[_Reader], section: str, key: Optional[str], message: str):
    if reader is not None:
        raise reader.error(section, key, message)
    where = f"[{section}]" + ("" if key is None else f" {key}")
    raise ConfigException(f"{where}: {message}")


def validate(scenario: ScenarioConfig, reader: Optional[_Reader] = None) -> None:
    """
    Enforce the scenario schema: known family, valid loops, truncations at
    least two sites beyond every loop, positive horizons, a normalizable
    initial state and known checks.
    """

    from qwalklab.experiment import build_walk

    try:
        build_walk(replace(scenario, loops=()))
    except ParameterException as exc:
        _raise(reader, "walk", None, str(exc))

    for position, loop in enumerate(scenario.loops, start=1):
        section = f"loop.{position}"
        if not 0 < loop.mass < 1:
            _raise(
                reader,
                section,
                "mass",
                f"loop mass must lie in (0, 1), got {loop.mass!r}",
            )
        if loop.site < 0:
            _raise(
                reader,
                section,
                "site",
                f"loop site must be nonnegative, got {loop.site!r}",
            )
        if loop.take_from not in TAKE_FROM:
            _raise(
                reader,
                section,
                "take_from",
                f"expected one of {', '.join(TAKE_FROM)}",
            )
    try:
        build_walk(scenario)
    except ParameterException as exc:
        _raise(reader, "loop.1" if scenario.loops else "walk", None, str(exc))

    sizes = list(scenario.truncation)
    if not sizes or sizes != sorted(set(sizes)):
        _raise(reader, "truncation", "sizes", "expected strictly ascending sizes")
    highest_loop = max([loop.site for loop in scenario.loops] + [-2])
    if scenario.truncation[0] < max(2, highest_loop + 2):
        _raise(
            reader,
            "truncation",
            "sizes",
            "every size must be at least max(2, last loop + 2) = "
            f"{max(2, highest_loop + 2)}",
        )
    if not scenario.horizon or min(scenario.horizon) < 1:
        _raise(reader, "horizon", "steps", "expected positive horizons")
    if list(scenario.horizon) != sorted(set(scenario.horizon)):
        _raise(reader, "horizon", "steps", "expected strictly ascending horizons")

    state = scenario.initial_state
    if state.kind not in INITIAL_STATE_KINDS:
        _raise(
            reader,
            "initial_state",
            "kind",
            f"expected one of {', '.join(INITIAL_STATE_KINDS)}",
        )
    if not 0 <= state.vertex <= scenario.truncation[0]:
        _raise(
            reader, "initial_state", "vertex", "vertex outside the smallest truncation"
        )
    if state.kind == "arc" and state.direction not in DIRECTIONS:
        _raise(
            reader,
            "initial_state",
            "direction",
            f"expected one of {', '.join(DIRECTIONS)}",
        )
    if state.kind in ("custom", "hs_projected"):
        weight = sum(abs(value) ** 2 for _, value in state.coefficients)
        if not state.coefficients or weight == 0:
            _raise(
                reader,
                "initial_state",
                "coefficients",
                "initial state does not normalize",
            )
    for label, _ in state.coefficients:
        if label not in DIRECTIONS:
            _raise(
                reader,
                "initial_state",
                "coefficients",
                f"unknown arc label {label!r}",
            )

    unknown = [check for check in scenario.checks if check not in CHECK_NAMES]
    if unknown:
        _raise(reader, "checks", "names", f"unknown checks {', '.join(unknown)}")
    if len(set(scenario.checks)) != len(scenario.checks):
        _raise(reader, "checks", "names", "checks must be unique")


def _format_complex(value: complex) -> str:
    return repr(complex(value)).replace(" ", "")


def serialize_scenario(scenario: ScenarioConfig) -> str:
    """
    Write a ScenarioConfig as INI text which parses back to an equal object.
    """

    lines: List[str] = ["[scenario]", f"name = {scenario.name}", ""]

    lines += ["[walk]", f"family = {scenario.walk_family}"]
    lines.append("params = " + ", ".join(repr(value) for value in scenario.walk_params))
    if scenario.declared_class is not None:
        lines.append(f"declared_class = {scenario.declared_class}")
    lines.append("")

    for position, loop in enumerate(scenario.loops, start=1):
        lines += [
            f"[loop.{position}]",
            f"site = {loop.site}",
            f"mass = {loop.mass!r}",
            f"take_from = {loop.take_from}",
            "",
        ]

    lines += ["[truncation]", "sizes = " + ", ".join(map(str, scenario.truncation)), ""]
    lines += ["[horizon]", "steps = " + ", ".join(map(str, scenario.horizon)), ""]

    state = scenario.initial_state
    lines += ["[initial_state]", f"kind = {state.kind}", f"vertex = {state.vertex}"]
    if state.direction is not None:
        lines.append(f"direction = {state.direction}")
    if state.coefficients:
        lines.append(
            "coefficients = "
            + ", ".join(
                f"{label}:{_format_complex(value)}"
                for label, value in state.coefficients
            )
        )
    lines.append("")

    lines += ["[checks]", "names = " + ", ".join(scenario.checks), ""]
    lines += [
        "[output]",
        f"directory = {scenario.output.directory}",
        f"spectrum = {str(scenario.output.spectrum).lower()}",
        f"convergence = {str(scenario.output.convergence).lower()}",
        "",
    ]

    if scenario.tolerances:
        lines.append("[tolerances]")
        lines += [f"{key} = {value!r}" for key, value in scenario.tolerances]
        lines.append("")

    return "\n".join(lines)


def bundled_scenarios(
    names: Optional[Iterable[str]] = None,
) -> Tuple[ScenarioConfig, ...]:
    """
    ScenarioConfigs for the given bundled names, all of them when None.
    """

    return tuple(from_preset(name) for name in (config if names is None else names))
