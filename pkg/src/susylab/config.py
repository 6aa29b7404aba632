"""Sectioned experiment configuration (INI syntax) with schema validation."""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError

REQUIRED = object()


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _box(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(";"):
        vals = _floats(part)
        if len(vals) != 2 or not vals[1] > vals[0]:
            raise ValueError(f"bad interval {part.strip()!r}")
        out.append((vals[0], vals[1]))
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "model": {
        "family": (_str, REQUIRED),
        "potential": (_str, None),
        "v1": (_str, "paper_sec6_V1"),
        "v2": (_str, "paper_sec6_V2"),
        "vc": (_str, "paper_sec6_Vc"),
        "gamma": (float, 1.0),
        "temperatures": (_floats, None),
    },
    "grid": {
        "box": (_box, REQUIRED),
        "n": (_ints, None),
        "points_per_h": (float, 5.0),
        "stabilization": (float, 0.5),
        "seeds_per_axis": (int, 21),
    },
    "sweep": {"h": (_floats, REQUIRED)},
    "solver": {
        "k": (int, 6),
        "tol": (float, 1e-12),
        "max_iter": (int, 1000),
        "seed": (int, 42),
        "epsilon0": (float, 0.05),
    },
    "evolution": {
        "t_end": (float, 60.0),
        "dt": (float, 0.05),
        "seed": (int, 1),
    },
    "sde": {
        "n_traj": (int, REQUIRED),
        "dt": (float, REQUIRED),
        "t_end": (float, REQUIRED),
        "seed": (int, 42),
        "burn_in": (float, 0.5),
        "stride": (int, 1),
        "bins": (int, 50),
        "axes": (_ints, [0]),
        "radius": (float, None),
        "min_transitions": (int, 30),
    },
    "dyncheck": {
        "box": (_box, REQUIRED),
        "t0": (float, 1.0),
        "radii": (_floats, [1e-1, 1e-2, 1e-3]),
        "c": (float, 50.0),
        "directions": (int, 32),
        "far_samples": (int, 200),
        "far_exclusion": (float, 0.5),
        "far_floor": (float, 1e-3),
        "measure_samples": (int, 100),
        "measure_threshold": (float, 1e-3),
        "measure_floor": (float, 1e-3),
        "measure_exclusion": (float, 0.5),
        "seeds_per_axis": (int, 7),
        "seed": (int, 42),
    },
    "output": {"dir": (_str, "out")},
}

COMMAND_SECTIONS = {
    "analyze-potential": ("model", "grid"),
    "spectrum": ("model", "grid", "sweep", "solver"),
    "splitting": ("model", "grid", "sweep", "solver"),
    "evolve": ("model", "grid", "sweep", "solver", "evolution"),
    "sde": ("model", "grid", "sweep", "sde"),
    "check-hypotheses": ("model", "dyncheck"),
}

FAMILIES = ("witten", "kfp", "chain")


@dataclass
class ExperimentConfig:
    sections: dict[str, dict[str, Any]]
    raw: dict[str, dict[str, str]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def has(self, section: str) -> bool:
        return section in self.sections

    def canonical_text(self) -> str:
        lines = []
        for sec in sorted(self.raw):
            lines.append(f"[{sec}]")
            for key in sorted(self.raw[sec]):
                lines.append(f"{key} = {' '.join(self.raw[sec][key].split())}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def override_seed(self, seed: int) -> None:
        for sec in ("solver", "sde", "dyncheck", "evolution"):
            if sec in self.sections:
                self.sections[sec]["seed"] = int(seed)
                self.raw[sec]["seed"] = str(int(seed))


def parse_config(text: str, command: str | None = None) -> ExperimentConfig:
    """Parse and validate config text.

    Raises:
        ConfigError: syntax errors, unknown sections or keys, missing required
            sections or keys, or unparsable values; every problem is listed.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}", [str(exc)]) from exc
    problems: list[str] = []
    raw: dict[str, dict[str, str]] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            problems.append(f"unknown section [{sec}]")
            continue
        raw[sec] = dict(cp[sec])
        for key in raw[sec]:
            if key not in SCHEMA[sec]:
                problems.append(f"unknown key {key!r} in [{sec}]")
    needed = COMMAND_SECTIONS.get(command, ("model",)) if command else ("model",)
    for sec in needed:
        if sec not in raw:
            problems.append(f"missing section [{sec}]")
    sections: dict[str, dict[str, Any]] = {}
    for sec, values in raw.items():
        parsed = {}
        for key, (conv, default) in SCHEMA[sec].items():
            if key in values:
                try:
                    parsed[key] = conv(values[key])
                except (ValueError, TypeError) as exc:
                    problems.append(f"[{sec}] {key}: {exc}")
            elif default is REQUIRED:
                problems.append(f"missing key {key!r} in [{sec}]")
            else:
                parsed[key] = default
        sections[sec] = parsed
    model = sections.get("model", {})
    fam = model.get("family")
    if fam is not None and fam not in FAMILIES:
        problems.append(f"[model] family must be one of {FAMILIES}, got {fam!r}")
    if fam in ("witten", "kfp") and not model.get("potential"):
        problems.append("[model] potential is required for witten and kfp")
    if "output" not in sections:
        sections["output"] = {"dir": SCHEMA["output"]["dir"][1]}
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems), problems)
    return ExperimentConfig(sections, raw)


def load_config(path, command: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", [str(exc)]) from exc
    return parse_config(text, command)


def bundled_config_path(name: str) -> Path:
    return Path(__file__).parent / "configs" / name
