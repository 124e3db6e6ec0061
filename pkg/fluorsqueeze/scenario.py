"""YAML scenario files.

A scenario carries a full parameter set plus optional trajectory and optimisation
sections::

    meta:    {label: fig1-line1, figure: 1, line: 1}
    params:  {omega_rabi: 0.2976, theta1: -pi/2, ...}
    sme:     {dt: 1.0e-3, t_final: 200, n_traj: 2000, seed: 7}
    control: {channel: 1, free: [omega_rabi], bounds: {omega_rabi: [0, 1]}}
"""

from __future__ import annotations

import dataclasses
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core_types import BlochVector, ScenarioError
from .dynamics import ANGLE_FIELDS, ModelParams, require_valid
from .optimize import ControlSpec, OptimizeOptions
from .trajectories import SmeConfig

logger = logging.getLogger(__name__)

PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ModelParams))
SME_KEYS = tuple(f.name for f in dataclasses.fields(SmeConfig))
CONTROL_KEYS = ("channel", "free", "bounds", "objective", "mu0", "mu_half_width", "mu_points", "options")
OPTION_KEYS = ("starts", "seed", "xatol", "fatol", "maxiter", "initial_points")
SECTIONS = ("meta", "params", "sme", "control")
REQUIRED_PARAMS = tuple(k for k in PARAM_KEYS if k != "gamma")

_ANGLE = re.compile(r"^\s*([+-]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


def parse_angle(value, path: str) -> float:
    """Number, or a multiple of pi such as ``-pi/2`` or ``3*pi/4``."""
    if isinstance(value, bool):
        raise ScenarioError(f"{path}: expected an angle, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _ANGLE.match(value)
        if m:
            coeff = m.group(1)
            if coeff in ("", "+"):
                factor = 1.0
            elif coeff == "-":
                factor = -1.0
            else:
                factor = float(coeff)
            denom = float(m.group(2)) if m.group(2) else 1.0
            if denom == 0:
                raise ScenarioError(f"{path}: division by zero in {value!r}")
            return factor * math.pi / denom
        try:
            return float(value)
        except ValueError:
            pass
    raise ScenarioError(f"{path}: cannot read angle {value!r}")


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{path}: expected an integer, got {value!r}")
    return value


def _mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed, path: str):
    unknown = sorted(str(k) for k in section if k not in allowed)
    if unknown:
        raise ScenarioError("unknown key " + ", ".join(f"{path}.{k}" if path else k for k in unknown))


@dataclass(frozen=True)
class ScenarioFile:
    params: ModelParams
    sme: SmeConfig | None = None
    control: ControlSpec | None = None
    options: OptimizeOptions = field(default_factory=OptimizeOptions)
    meta: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def label(self) -> str:
        if "label" in self.meta:
            return str(self.meta["label"])
        return self.path.stem if self.path else "scenario"


def _parse_params(raw: dict) -> ModelParams:
    section = _mapping(raw, "params")
    _reject_unknown(section, PARAM_KEYS, "params")
    missing = [k for k in REQUIRED_PARAMS if k not in section]
    if missing:
        raise ScenarioError("missing key " + ", ".join(f"params.{k}" for k in missing))
    values = {}
    for key, value in section.items():
        path = f"params.{key}"
        values[key] = parse_angle(value, path) if key in ANGLE_FIELDS else _number(value, path)
    return ModelParams(**values)


def _parse_sme(raw: dict) -> SmeConfig:
    section = _mapping(raw, "sme")
    _reject_unknown(section, SME_KEYS, "sme")
    values = {}
    for key, value in section.items():
        path = f"sme.{key}"
        if key in ("seed", "n_traj", "record_stride"):
            values[key] = _integer(value, path)
        elif key == "initial":
            if value == "equilibrium":
                values[key] = value
            elif isinstance(value, list) and len(value) == 3:
                values[key] = BlochVector(*(_number(v, f"{path}[{i}]") for i, v in enumerate(value)))
            else:
                raise ScenarioError(f"{path}: expected 'equilibrium' or [x, y, z], got {value!r}")
        else:
            values[key] = _number(value, path)
    try:
        return SmeConfig(**values).validate()
    except ValueError as exc:
        raise ScenarioError(f"sme: {exc}") from exc


def _parse_control(raw: dict) -> tuple[ControlSpec, OptimizeOptions]:
    section = _mapping(raw, "control")
    _reject_unknown(section, CONTROL_KEYS, "control")
    free = section.get("free", [])
    if not isinstance(free, list):
        raise ScenarioError(f"control.free: expected a list, got {free!r}")
    bounds = {}
    for name, pair in _mapping(section.get("bounds", {}), "control.bounds").items():
        path = f"control.bounds.{name}"
        if not isinstance(pair, list) or len(pair) != 2:
            raise ScenarioError(f"{path}: expected [low, high], got {pair!r}")
        read = parse_angle if name in ANGLE_FIELDS else _number
        bounds[name] = (read(pair[0], f"{path}[0]"), read(pair[1], f"{path}[1]"))

    kwargs = {"free": tuple(free), "bounds": bounds}
    if "channel" in section:
        kwargs["channel"] = _integer(section["channel"], "control.channel")
    if "objective" in section:
        kwargs["objective"] = str(section["objective"])
    if "mu0" in section:
        kwargs["mu0"] = _number(section["mu0"], "control.mu0")
    if "mu_half_width" in section:
        kwargs["mu_half_width"] = _number(section["mu_half_width"], "control.mu_half_width")
    if "mu_points" in section:
        kwargs["mu_points"] = _integer(section["mu_points"], "control.mu_points")
    try:
        spec = ControlSpec(**kwargs).validate()
    except ValueError as exc:
        raise ScenarioError(f"control: {exc}") from exc

    raw_opts = _mapping(section.get("options", {}), "control.options")
    _reject_unknown(raw_opts, OPTION_KEYS, "control.options")
    opts = {}
    for key, value in raw_opts.items():
        path = f"control.options.{key}"
        if key in ("starts", "seed", "maxiter"):
            opts[key] = _integer(value, path)
        elif key == "initial_points":
            points = []
            for i, point in enumerate(value or []):
                if isinstance(point, dict):
                    point = [point.get(n) for n in spec.free]
                if not isinstance(point, list) or len(point) != len(spec.free):
                    raise ScenarioError(f"{path}[{i}]: expected {len(spec.free)} values")
                points.append(
                    tuple(
                        parse_angle(v, f"{path}[{i}]") if n in ANGLE_FIELDS else _number(v, f"{path}[{i}]")
                        for n, v in zip(spec.free, point)
                    )
                )
            opts[key] = tuple(points)
        else:
            opts[key] = _number(value, path)
    return spec, OptimizeOptions(**opts)


def parse_scenario(document, path: Path | None = None, strict: bool = False) -> ScenarioFile:
    """Validate a loaded YAML document; raises ScenarioError or ParameterError."""
    if document is None:
        raise ScenarioError("empty scenario")
    raw = _mapping(document, "<root>")
    _reject_unknown(raw, SECTIONS, "")
    if "params" not in raw:
        raise ScenarioError("missing key params")
    params = require_valid(_parse_params(raw["params"]), strict)
    sme = _parse_sme(raw["sme"]) if "sme" in raw else None
    control, options = _parse_control(raw["control"]) if "control" in raw else (None, OptimizeOptions())
    meta = dict(_mapping(raw.get("meta") or {}, "meta"))
    return ScenarioFile(params=params, sme=sme, control=control, options=options, meta=meta, path=path)


def _read_document(path: Path):
    try:
        with open(path, encoding="utf-8") as f_in:
            document = yaml.safe_load(f_in)
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path.name}: not valid YAML ({exc})") from exc
    return document


def load_scenario(path, strict: bool = False) -> ScenarioFile:
    path = Path(path)
    scenario = parse_scenario(_read_document(path), path, strict)
    logger.debug("Loaded scenario %s from %s", scenario.label, path)
    return scenario


def load_unvalidated_params(path) -> ModelParams:
    """Parameters of a scenario without enforcing their constraints (for reporting)."""
    raw = _mapping(_read_document(Path(path)), "<root>")
    _reject_unknown(raw, SECTIONS, "")
    if "params" not in raw:
        raise ScenarioError("missing key params")
    return _parse_params(raw["params"])
