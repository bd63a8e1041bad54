"""Sectioned key-value run configuration.

Example::

    [optics]
    a_m = 20e-6
    d_m = 100e-6
    lambda_m = 810e-9
    f0_m = 0.5

    [detector]
    kind = pmt
    pmt_gain = 3
    pmt_stages = 5

    [collapse]
    threshold_nc = 100

    [run]
    n_events = 100000
    seed = 1

Defaults: ``screen.x_max_m = 3 lambda f0 / a``, ``screen.n_bins = 100``,
``timing.p_d1_first = 0.5``, ``timing.intensity_weighted = true``,
``collapse.softness = 0``, ``branches = (0, 1, 0)``, ``run.n_workers = 1``,
``run.event_cap = 10000000``.  Everything else is required where it is
used; unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

from .collapse import BranchState, CollapseModel, DetectorKind, DetectorSpec
from .errors import InvalidConfig, ParseError, ValidationError
from .optics import OpticalConfig, ScreenConfig
from .simulator import DEFAULT_EVENT_CAP, Experiment, TimingModel

__all__ = ["RunSettings", "RunConfig", "parse_config", "parse_config_text"]

_SCHEMA = {
    "optics": {"a_m": float, "d_m": float, "lambda_m": float, "f0_m": float},
    "screen": {"x_max_m": float, "n_bins": int},
    "timing": {"p_d1_first": float, "intensity_weighted": bool},
    "detector": {"kind": str, "atom_count": int, "grain_env_count": int, "pmt_gain": float, "pmt_stages": int},
    "collapse": {"threshold_nc": float, "softness": float},
    "branches": {"p_miss": float, "p_detect": float, "p_fail": float},
    "run": {"n_events": int, "seed": int, "n_workers": int, "event_cap": int},
}


@dataclass(frozen=True)
class RunSettings:
    n_events: int | None = None
    seed: int | None = None
    n_workers: int = 1
    event_cap: int = DEFAULT_EVENT_CAP

    def __post_init__(self):
        for name, lo in (("n_events", 1), ("seed", 0), ("n_workers", 1), ("event_cap", 0)):
            value = getattr(self, name)
            if value is not None and value < lo:
                raise ValidationError(f"run.{name} must be ≥ {lo}, got {value}")

    def require(self) -> "RunSettings":
        missing = [k for k in ("n_events", "seed") if getattr(self, k) is None]
        if missing:
            raise ValidationError(f"[run] section must set {', '.join('run.' + m for m in missing)}")
        return self


@dataclass(frozen=True)
class RunConfig:
    optics: OpticalConfig
    screen: ScreenConfig
    timing: TimingModel
    detector: DetectorSpec
    collapse: CollapseModel
    run: RunSettings

    @property
    def branches(self) -> BranchState:
        return self.detector.branches

    def experiment(self) -> Experiment:
        return Experiment(self.optics, self.screen, self.detector, self.collapse, self.timing)


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip().lower()
        elif section and stripped and stripped[0] not in "#;":
            key = re.split(r"[=:]", stripped, maxsplit=1)[0].strip().lower()
            where[(section, key)] = lineno
    return where


def _convert(raw: str, kind, ctx: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ParseError(f"{ctx}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>", *, allow_missing_stages: bool = False) -> RunConfig:
    """Parse and validate config text; see the module docstring for the format."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ParseError(f"{source}: {exc}") from None
    lines = _key_lines(text)

    values: dict[str, dict] = {}
    for section in parser.sections():
        name = section.strip().lower()
        if name not in _SCHEMA:
            raise ParseError(f"{source}: unknown section [{section}]; expected one of {sorted(_SCHEMA)}")
        for key, raw in parser.items(section):
            ctx = f"{source}, line {lines.get((name, key), '?')}, key {name}.{key}"
            if key not in _SCHEMA[name]:
                raise ParseError(f"{ctx}: unknown key")
            values.setdefault(name, {})[key] = _convert(raw, _SCHEMA[name][key], ctx)

    try:
        return _build(values, allow_missing_stages)
    except ValidationError:
        raise
    except InvalidConfig as exc:
        raise ValidationError(str(exc)) from None


def _build(values: dict, allow_missing_stages: bool) -> RunConfig:
    def get(section, key, default=None, required=False):
        sec = values.get(section, {})
        if key in sec:
            return sec[key]
        if required:
            raise ValidationError(f"missing required key {section}.{key}")
        return default

    optics = OpticalConfig(
        slit_width_a=get("optics", "a_m", required=True),
        slit_separation_d=get("optics", "d_m", required=True),
        wavelength=get("optics", "lambda_m", required=True),
        focal_length_f0=get("optics", "f0_m", required=True),
    )
    n_bins = get("screen", "n_bins", 100)
    x_max = get("screen", "x_max_m")
    screen = ScreenConfig.default_for(optics, n_bins) if x_max is None else ScreenConfig(x_max, n_bins)
    timing = TimingModel(get("timing", "p_d1_first", 0.5), get("timing", "intensity_weighted", True))

    if "branches" in values:
        branches = BranchState(
            p_miss=get("branches", "p_miss", required=True),
            p_detect=get("branches", "p_detect", required=True),
            p_fail=get("branches", "p_fail", required=True),
        )
    else:
        branches = BranchState()

    kind_text = get("detector", "kind", required=True).lower()
    try:
        kind = DetectorKind(kind_text)
    except ValueError:
        raise ValidationError(
            f"detector.kind must be one of {[k.value for k in DetectorKind]}, got {kind_text!r}"
        ) from None
    stages = get("detector", "pmt_stages")
    if kind is DetectorKind.PMT and stages is None and allow_missing_stages:
        stages = 0
    if kind is DetectorKind.COLD_ATOM and get("detector", "atom_count") is None:
        raise ValidationError("detector.atom_count is required when detector.kind = cold_atom")
    if kind is DetectorKind.PLATE and get("detector", "grain_env_count") is None:
        raise ValidationError("detector.grain_env_count is required when detector.kind = plate (no default)")
    detector = DetectorSpec(
        kind,
        branches,
        atom_count=get("detector", "atom_count"),
        grain_env_count=get("detector", "grain_env_count"),
        gain_g=get("detector", "pmt_gain"),
        stages=stages,
    )
    collapse = CollapseModel(get("collapse", "threshold_nc", required=True), get("collapse", "softness", 0.0))
    run = RunSettings(
        n_events=get("run", "n_events"),
        seed=get("run", "seed"),
        n_workers=get("run", "n_workers", 1),
        event_cap=get("run", "event_cap", DEFAULT_EVENT_CAP),
    )
    return RunConfig(optics, screen, timing, detector, collapse, run)


def parse_config(path, *, allow_missing_stages: bool = False) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path), allow_missing_stages=allow_missing_stages)
