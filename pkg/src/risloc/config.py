"""Sectioned key/value experiment files.

Example::

    [scenario]
    rho = 2.0
    speed = 1.0
    tx_power_dbm = 20

    [experiment]
    sweep_values = 1, 2, 4
    trials = 100

Keys given in dB, dBm, GHz or MHz are converted to SI units and linear
ratios here and nowhere else. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

from .channel import db_to_linear, dbm_to_watt
from .errors import ParseError, ValidationError
from .estimator import ConvergenceConfig, GridSpec
from .harness import ExperimentConfig, ScenarioParams


def _float(text):
    return float(text)


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


def _int(text):
    return int(text.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def _vec3(text):
    v = _floats(text)
    if len(v) != 3:
        raise ValueError(f"expected 3 comma-separated numbers, got {len(v)}")
    return v


def _opt_vec3(text):
    return None if text.strip().lower() in ("", "none") else _vec3(text)


def _words(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class Key:
    convert: Callable
    doc: str


SCHEMA: Dict[str, Dict[str, Key]] = {
    "scenario": {
        "rho": Key(_float, "UE distance from the RIS (m), >= 1"),
        "speed": Key(_float, "UE speed (m/s)"),
        "num_pilots": Key(_int, "pilot transmissions L, >= 3"),
        "rows": Key(_int, "RIS rows"),
        "cols": Key(_int, "RIS columns"),
        "spacing_m": Key(_opt_float, "element spacing (m); empty for half a wavelength"),
        "bs_position": Key(_vec3, "BS position x, y, z (m)"),
        "ue_direction": Key(_vec3, "UE direction from the RIS (normalized)"),
        "velocity_direction": Key(_opt_vec3, "velocity direction; empty to follow the UE direction"),
        "rician_k": Key(_opt_float, "Rician factor of the RIS-UE link; empty for none"),
        "gain_offset_db": Key(_float, "extra gain applied to the UE path (dB)"),
        "carrier_freq_ghz": Key(_float, "carrier frequency (GHz)"),
        "bandwidth_mhz": Key(_float, "bandwidth (MHz)"),
        "symbol_period_s": Key(_opt_float, "pilot spacing (s); empty for 1 / bandwidth"),
        "tx_power_dbm": Key(_float, "transmit power (dBm)"),
        "noise_psd_dbm_hz": Key(_float, "noise spectral density (dBm/Hz)"),
        "noise_figure_db": Key(_float, "receiver noise figure (dB)"),
        "tx_gain_db": Key(_float, "transmit antenna gain (dB)"),
        "rx_gain_db": Key(_float, "receive antenna gain (dB)"),
        "global_phase_rad": Key(_float, "common phase of the channel gain (rad)"),
    },
    "experiment": {
        "sweep_values": Key(_floats, "comma-separated values along the sweep axis"),
        "trials": Key(_int, "noise realizations per sweep point"),
        "seed": Key(_int, "master seed (unsigned 64-bit)"),
        "stages": Key(_words, "estimator stages: grid, ref_pos, ref_vel, full"),
        "noise": Key(_bool, "add receiver noise"),
        "per_trial_profiles": Key(_bool, "draw a new RIS profile for every trial"),
    },
    "grid": {
        "n_theta": Key(_int, "azimuth grid points"),
        "n_phi": Key(_int, "elevation grid points"),
        "n_rho": Key(_int, "range grid points"),
        "rho_max": Key(_float, "largest searched range (m)"),
    },
    "convergence": {
        "objective_tolerance": Key(_float, "stop when the objective changes by at most this"),
        "max_grid_iterations": Key(_int, "cap on grid-search iterations"),
        "max_refine_iterations": Key(_int, "cap on closed-form refinement iterations"),
        "max_outer_iterations": Key(_int, "cap on outer refinement iterations"),
        "max_descent_iterations": Key(_int, "cap on quasi-Newton iterations"),
        "gradient_tolerance": Key(_float, "descent gradient-norm stop"),
        "relinearize": Key(_bool, "rebuild linear models every refinement iteration"),
    },
}

ALIASES = {"L": "num_pilots", "v": "speed", "K": "rician_k"}


def _canonical(key: str) -> str:
    return ALIASES.get(key, ALIASES.get(key.strip(), key.strip().lower()))


def locate(section: Optional[str], key: str) -> Tuple[str, str]:
    """Resolve ``key`` (optionally ``section.key``) to its schema entry."""
    if section is None and "." in key:
        section, key = key.split(".", 1)
    name = _canonical(key)
    if section is not None:
        sec = section.strip().lower()
        if sec not in SCHEMA:
            raise ValidationError(f"unknown section [{section}]")
        if name not in SCHEMA[sec]:
            raise ValidationError(f"unknown key {key!r} in section [{sec}]")
        return sec, name
    hits = [s for s, keys in SCHEMA.items() if name in keys]
    if not hits:
        raise ValidationError(f"unknown key {key!r}")
    if len(hits) > 1:
        raise ValidationError(f"key {key!r} is ambiguous; prefix it with a section")
    return hits[0], name


@dataclass(frozen=True)
class RawEntry:
    text: str
    lineno: Optional[int]
    origin: str


def _key_lines(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """Line numbers of keys, and of section headers under key ``None``."""
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
            lines.setdefault((section, None), n)
            continue
        for sep in ("=", ":"):
            if sep in s:
                lines[(section, s.split(sep, 1)[0].strip())] = n
                break
    return lines


def read_entries(text: str, origin="<config>") -> Dict[Tuple[str, str], RawEntry]:
    """Parse config text into raw ``(section, key) -> RawEntry`` items.

    Raises:
        ParseError: malformed syntax, unknown sections or unknown keys.
    """
    cp = configparser.ConfigParser(
        interpolation=None, delimiters=("=", ":"), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=origin)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key/value line before any [section] header", exc.lineno) from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(exc.message.split(": ", 1)[-1] if hasattr(exc, "message") else str(exc), exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        detail = exc.errors[0][1].strip() if exc.errors else ""
        raise ParseError(f"cannot parse {detail}".strip(), lineno) from exc
    lines = _key_lines(text)
    for section in cp.sections():
        if section.strip().lower() not in SCHEMA:
            raise ParseError(f"unknown section [{section}]", lines.get((section.strip().lower(), None)))
    out: Dict[Tuple[str, str], RawEntry] = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            lineno = lines.get((section.strip().lower(), key))
            try:
                sec, name = locate(section, key)
            except ValidationError as exc:
                raise ParseError(str(exc), lineno) from exc
            if (sec, name) in out:
                raise ParseError(f"{name} given twice (alias and full name)", lineno)
            out[(sec, name)] = RawEntry(value, lineno, origin)
    return out


def parse_overrides(pairs: Iterable[str]) -> Dict[Tuple[str, str], RawEntry]:
    """Turn ``key=value`` strings (``--set``) into raw entries."""
    out: Dict[Tuple[str, str], RawEntry] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        sec, name = locate(None, key.strip())
        out[(sec, name)] = RawEntry(value.strip(), None, "--set")
    return out


def _convert(entries: Mapping[Tuple[str, str], RawEntry]) -> Dict[Tuple[str, str], object]:
    values = {}
    for (sec, name), entry in entries.items():
        try:
            values[(sec, name)] = SCHEMA[sec][name].convert(entry.text)
        except ValueError as exc:
            msg = f"bad value for {sec}.{name}: {entry.text!r} ({exc})"
            if entry.lineno is not None:
                raise ParseError(msg, entry.lineno) from exc
            raise ValidationError(msg) from exc
    return values


def build_config(entries: Mapping[Tuple[str, str], RawEntry], base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    """Apply converted entries on top of ``base``.

    Raises:
        ParseError: a value does not parse as its type.
        ValidationError: the resulting configuration violates an invariant.
    """
    vals = _convert(entries)

    def get(sec, name, default):
        return vals.get((sec, name), default)

    sp = base.scenario
    units = {
        "carrier_freq_ghz": ("carrier_freq", lambda x: x * 1e9),
        "bandwidth_mhz": ("bandwidth", lambda x: x * 1e6),
        "tx_power_dbm": ("tx_power", dbm_to_watt),
        "noise_psd_dbm_hz": ("noise_psd", dbm_to_watt),
        "noise_figure_db": ("noise_figure", db_to_linear),
        "tx_gain_db": ("tx_gain", db_to_linear),
        "rx_gain_db": ("rx_gain", db_to_linear),
        "global_phase_rad": ("global_phase", float),
        "symbol_period_s": ("symbol_period", lambda x: x),
    }
    rf_changes = {field: conv(vals[("scenario", key)]) for key, (field, conv) in units.items() if ("scenario", key) in vals}
    rf = replace(sp.rf, **rf_changes)
    scenario = ScenarioParams(
        rho=get("scenario", "rho", sp.rho),
        speed=get("scenario", "speed", sp.speed),
        num_pilots=get("scenario", "num_pilots", sp.num_pilots),
        rows=get("scenario", "rows", sp.rows),
        cols=get("scenario", "cols", sp.cols),
        spacing=get("scenario", "spacing_m", sp.spacing),
        bs_position=get("scenario", "bs_position", sp.bs_position),
        ue_direction=get("scenario", "ue_direction", sp.ue_direction),
        velocity_direction=get("scenario", "velocity_direction", sp.velocity_direction),
        rician_k=get("scenario", "rician_k", sp.rician_k),
        gain_offset_db=get("scenario", "gain_offset_db", sp.gain_offset_db),
        rf=rf,
    )
    grid = replace(base.grid, **{name: v for (sec, name), v in vals.items() if sec == "grid"})
    conv = replace(base.convergence, **{name: v for (sec, name), v in vals.items() if sec == "convergence"})
    return replace(
        base,
        scenario=scenario,
        sweep_values=get("experiment", "sweep_values", base.sweep_values),
        trials=get("experiment", "trials", base.trials),
        seed=get("experiment", "seed", base.seed),
        stages=get("experiment", "stages", base.stages),
        noise=get("experiment", "noise", base.noise),
        per_trial_profiles=get("experiment", "per_trial_profiles", base.per_trial_profiles),
        grid=grid,
        convergence=conv,
    )


def parse_config(path=None, overrides: Iterable[str] = (), base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    """Read an experiment file (``None`` for all defaults) plus overrides.

    Raises:
        ParseError: malformed file, with the offending line number.
        ValidationError: unknown keys in overrides or invalid values.
    """
    entries: Dict[Tuple[str, str], RawEntry] = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        entries.update(read_entries(text, str(path)))
    entries.update(parse_overrides(overrides))
    return build_config(entries, base)


def explicit_keys(path=None, overrides: Iterable[str] = ()) -> set:
    """Names (``section.key``) set by a file or overrides."""
    keys = set()
    if path is not None:
        with open(path) as fh:
            keys.update(f"{s}.{k}" for s, k in read_entries(fh.read(), str(path)))
    keys.update(f"{s}.{k}" for s, k in parse_overrides(overrides))
    return keys


def schema_text() -> str:
    """Human-readable list of every accepted key."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for name, key in keys.items():
            lines.append(f"  {name:<24} {key.doc}")
    lines.append("aliases: " + ", ".join(f"{a} -> {b}" for a, b in ALIASES.items()))
    return "\n".join(lines)
