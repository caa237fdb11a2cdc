"""Run configuration: a strict, line-numbered INI reader.

The on-disk format is INI-style UTF-8: ``[section]`` headers, ``key =
value`` pairs, blank lines, and full-line ``#`` comments. Parsing is
deliberately strict -- unknown sections or keys, duplicate definitions,
type violations, and dangling references to missing files are all
rejected with the config path and line number -- because these files
double as the audit trail for reproducing figure data.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .analysis import BudgetTable, DEFAULT_KAPPA_MEV
from .montecarlo import (
    EmitterModel,
    InstrumentChain,
    MZIConfig,
    PulseTrain,
    multi_photon_probability,
)

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """A configuration file violates the schema.

    The message carries ``path:line`` when the offence maps to a line.
    """

    def __init__(self, message: str, path: str | os.PathLike | None = None,
                 line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        if self.path is not None and line is not None:
            message = f"{self.path}:{line}: {message}"
        elif self.path is not None:
            message = f"{self.path}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class _Key:
    """One legal key: a converter plus an optional range check."""

    convert: Callable[[str], Any]
    default: Any = None
    required: bool = False
    check: Callable[[Any], bool] | None = None
    describe: str = ""


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    return int(s, 10)


def _str(s: str) -> str:
    return s


def _floats(s: str) -> tuple[float, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _choice(*allowed: str) -> Callable[[str], str]:
    def conv(s: str) -> str:
        if s not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return s

    return conv


_POS = (lambda v: v > 0, "must be positive")
_NONNEG = (lambda v: v >= 0, "must be >= 0")
_UNIT = (lambda v: 0.0 <= v <= 1.0, "must be in [0, 1]")


def _key(convert, default=None, required=False, bounds=None) -> _Key:
    check, describe = bounds if bounds else (None, "")
    return _Key(convert, default, required, check, describe)


_SCHEMA: dict[str, dict[str, _Key]] = {
    "emitter": {
        "t1_ns": _key(_float, required=True, bounds=_POS),
        "t2_ps": _key(_float, bounds=_POS),
        "p_exc": _key(_float, default=1.0, bounds=_UNIT),
        "g2_target": _key(_float, default=0.0,
                          bounds=(lambda v: 0.0 <= v < 1.0, "must be in [0, 1)")),
        "energy_ev": _key(_float, default=1.5707, bounds=_POS),
        "dop": _key(_float, default=1.0, bounds=_UNIT),
        "pol_angle_deg": _key(_float, default=0.0),
    },
    "chain": {
        "eta_first_lens": _key(_float, default=1.0, bounds=_UNIT),
        "eta_setup": _key(_float, default=1.0, bounds=_UNIT),
        "jitter_fwhm_ps": _key(_float, default=0.0, bounds=_NONNEG),
        "dead_time_ns": _key(_float, default=0.0, bounds=_NONNEG),
        "dark_rate_hz": _key(_float, default=0.0, bounds=_NONNEG),
    },
    "train": {
        "rep_rate_khz": _key(_float, required=True, bounds=_POS),
        "n_pulses": _key(_int, required=True, bounds=_POS),
        "seed": _key(_int, default=0, bounds=_NONNEG),
    },
    "mzi": {
        "arm_delay_ns": _key(_float, required=True, bounds=_NONNEG),
        "polarization": _key(_choice("HH", "HV", "both"), default="both"),
        "first_bs_ratio": _key(_float, default=0.5, bounds=_UNIT),
        "second_bs_ratio": _key(_float, default=0.5, bounds=_UNIT),
        "residual_offset_ps": _key(_float, default=0.0),
    },
    "cavity": {
        "length_um": _key(_float, default=5.5, bounds=_POS),
        "lens_diameter_um": _key(_float, default=5.0, bounds=_POS),
        "lens_depth_nm": _key(_float, default=300.0, bounds=_POS),
        "quality_factor": _key(_float, default=600.0, bounds=_POS),
        "emitter_energy_ev": _key(_float, default=1.5707, bounds=_POS),
        "gamma_free_per_ns": _key(_float, default=1.0 / 2.3, bounds=_POS),
        "f_resonant": _key(_float, default=1.333, bounds=_POS),
        "f_inhibited": _key(_float, default=0.492, bounds=_POS),
        "n_transverse": _key(_int, default=3, bounds=_POS),
        "dbr_pairs": _key(_int, default=10, bounds=_POS),
        "dbr_n_high": _key(_float, default=2.28, bounds=_POS),
        "dbr_d_high_nm": _key(_float, default=85.0, bounds=_POS),
        "dbr_n_low": _key(_float, default=1.45, bounds=_POS),
        "dbr_d_low_nm": _key(_float, default=131.0, bounds=_POS),
        "dbr_substrate_index": _key(_float, default=1.5, bounds=_POS),
        "scan_min_nm": _key(_float, default=600.0, bounds=_POS),
        "scan_max_nm": _key(_float, default=950.0, bounds=_POS),
        "scan_points": _key(_int, default=701,
                            bounds=(lambda v: v >= 2, "must be >= 2")),
        "detuning_span_mev": _key(_float, default=8.0, bounds=_POS),
        "detuning_points": _key(_int, default=81,
                                bounds=(lambda v: v >= 2, "must be >= 2")),
    },
    "analysis": {
        "bin_width_ps": _key(_int, bounds=_POS),
        "n_side_peaks": _key(_int, default=6,
                             bounds=(lambda v: v >= 4, "must be >= 4")),
        "detector_jitter_fwhm_ps": _key(_float, default=0.0, bounds=_NONNEG),
        "windows_ns": _key(_floats, default=(3.0, 2.0, 1.1)),
        "irf_file": _key(_str),
        "n_angles": _key(_int, default=19,
                         bounds=(lambda v: v >= 4, "must be >= 4")),
        "mean_peak_counts": _key(_float, default=100000.0, bounds=_POS),
    },
}

#: keys whose value names a file that must exist when the config is read
_FILE_KEYS = {("analysis", "irf_file")}

_BUDGET_ENTRY_RE = re.compile(r"^entry\.(\d+)\.(label|value_pct|error_pct)$")
_BUDGET_RATE_KEYS = {
    "measured_rate_khz",
    "measured_rate_error_khz",
    "rep_rate_khz",
    "rep_rate_error_khz",
}


def _check_budget_key(key: str) -> bool:
    return key in _BUDGET_RATE_KEYS or _BUDGET_ENTRY_RE.match(key) is not None


# ---------------------------------------------------------------------------
# parsing


def _parse_lines(path: Path) -> dict[str, dict[str, tuple[str, int]]]:
    """Raw parse: {section: {key: (value, line_no)}} with strict errors."""
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"not valid UTF-8: {exc}", path) from None
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA and name != "budget":
                known = ", ".join(sorted([*_SCHEMA, "budget"]))
                raise ConfigError(
                    f"unknown section [{name}] (known: {known})", path, lineno
                )
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", path, lineno)
            sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(
                f"expected 'key = value' or '[section]', got {line!r}", path, lineno
            )
        if current is None:
            raise ConfigError("key outside of any [section]", path, lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", path, lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", path, lineno)
        sections[current][key] = (value, lineno)
    return sections


def _resolve_section(
    path: Path, name: str, raw: dict[str, tuple[str, int]]
) -> dict[str, Any]:
    if name == "budget":
        out: dict[str, Any] = {}
        for key, (value, lineno) in raw.items():
            if not _check_budget_key(key):
                raise ConfigError(
                    f"unknown key {key!r} in [budget] "
                    "(expected entry.N.label/value_pct/error_pct or rate keys)",
                    path,
                    lineno,
                )
            if key.endswith(".label"):
                out[key] = value
            else:
                try:
                    out[key] = float(value)
                except ValueError:
                    raise ConfigError(
                        f"{key}: expected a number, got {value!r}", path, lineno
                    ) from None
        return out

    schema = _SCHEMA[name]
    out = {}
    for key, (value, lineno) in raw.items():
        spec = schema.get(key)
        if spec is None:
            known = ", ".join(sorted(schema))
            raise ConfigError(
                f"unknown key {key!r} in [{name}] (known: {known})", path, lineno
            )
        try:
            typed = spec.convert(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc} (got {value!r})", path, lineno) from None
        if spec.check is not None and not spec.check(typed):
            raise ConfigError(f"{key} {spec.describe}, got {value}", path, lineno)
        if (name, key) in _FILE_KEYS:
            target = (path.parent / typed).resolve()
            if not target.is_file():
                raise ConfigError(
                    f"{key} refers to {typed!r} which does not exist", path, lineno
                )
            typed = str(target)
        out[key] = typed
    for key, spec in schema.items():
        if key in out:
            continue
        if spec.required:
            raise ConfigError(f"[{name}] is missing required key {key!r}", path)
        if spec.default is not None:
            out[key] = spec.default
    return out


# ---------------------------------------------------------------------------
# resolved configuration


@dataclass(frozen=True)
class RunConfig:
    """A parsed configuration: typed sections with defaults applied.

    Only sections present in the file appear in ``sections``; commands
    call :meth:`require` to get one or fail with an error naming it.
    """

    path: str
    sections: dict[str, dict[str, Any]]

    def has(self, name: str) -> bool:
        return name in self.sections

    def require(self, name: str, why: str = "") -> dict[str, Any]:
        if name not in self.sections:
            reason = f" ({why})" if why else ""
            raise ConfigError(f"missing [{name}] section{reason}", self.path)
        return self.sections[name]

    # -- constructors for the simulation objects --------------------------

    def emitter(self) -> EmitterModel:
        s = self.require("emitter")
        g2 = s.get("g2_target", 0.0)
        p_exc = s.get("p_exc", 1.0)
        p_multi = multi_photon_probability(g2, p_exc) if g2 > 0 else 0.0
        return EmitterModel(
            t1_ns=s["t1_ns"],
            t2_ps=s.get("t2_ps"),
            p_exc=p_exc,
            p_multi=p_multi,
            energy_ev=s.get("energy_ev", 1.5707),
            dop=s.get("dop", 1.0),
            pol_angle_deg=s.get("pol_angle_deg", 0.0),
        )

    def chain(self) -> InstrumentChain:
        s = self.sections.get("chain", {})
        return InstrumentChain(
            eta_first_lens=s.get("eta_first_lens", 1.0),
            eta_setup=s.get("eta_setup", 1.0),
            jitter_fwhm_ps=s.get("jitter_fwhm_ps", 0.0),
            dead_time_ns=s.get("dead_time_ns", 0.0),
            dark_rate_hz=s.get("dark_rate_hz", 0.0),
        )

    def train(self, seed: int | None = None) -> PulseTrain:
        s = self.require("train")
        return PulseTrain(
            rep_rate_khz=s["rep_rate_khz"],
            n_pulses=s["n_pulses"],
            seed=s["seed"] if seed is None else seed,
        )

    def mzi(self, polarization_mode: str) -> MZIConfig:
        s = self.require("mzi", "required for interference runs")
        return MZIConfig(
            arm_delay_ns=s["arm_delay_ns"],
            polarization_mode=polarization_mode,
            first_bs_ratio=s.get("first_bs_ratio", 0.5),
            second_bs_ratio=s.get("second_bs_ratio", 0.5),
            residual_offset_ps=s.get("residual_offset_ps", 0.0),
        )

    def budget(self) -> BudgetTable:
        s = self.require("budget")
        try:
            return BudgetTable.from_mapping(s)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc), self.path) from None

    def period_ps(self) -> float:
        return 1e9 / self.require("train")["rep_rate_khz"]

    def detuned_decay_kappa_mev(self) -> float:
        s = self.sections.get("cavity", {})
        energy = s.get("emitter_energy_ev", 1.5707)
        quality = s.get("quality_factor", 600.0)
        return energy * 1000.0 / quality if s else DEFAULT_KAPPA_MEV


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse and validate ``path``; raise :class:`ConfigError` on any issue."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("no such file", p)
    raw = _parse_lines(p)
    sections = {name: _resolve_section(p, name, body) for name, body in raw.items()}
    return RunConfig(path=str(p), sections=sections)
