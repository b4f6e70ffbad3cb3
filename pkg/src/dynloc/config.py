"""Run configuration: bracketed sections of ``key = value`` lines with ``#`` comments.

Every key has a typed default.  Unknown sections or keys are rejected with
the line on which they appear.
"""
from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(x) for x in text.split(",")) if text else ()


def _windows(text: str):
    text = text.strip()
    if text == "auto":
        return "auto"
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _names(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _formats(text: str) -> tuple:
    fmts = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [f for f in fmts if f not in ("csv", "json", "png")]
    if bad:
        raise ValueError(f"unknown output formats {bad}")
    return fmts


def _fmt_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{_fmt_value(a)}:{_fmt_value(b)}" for a, b in v)
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any


SCHEMA: dict[str, dict[str, Key]] = {
    "lattice": {"dim": Key(int, 1), "extent": Key(int, 121)},
    "disorder": {
        "kind": Key(str, "iid-uniform"),
        "half_width": Key(float, 4.0),
        "window": Key(int, 0),
        "samples": Key(int, 2000),
        "density_grid": Key(_floats, ()),
        "density_values": Key(_floats, ()),
    },
    "operator": {
        "matrix_cap": Key(int, 4096),
        "initial_state": Key(str, "filtered"),
        "filter_a": Key(float, 3.0),
        "filter_b": Key(float, 6.5),
        "filter_delta": Key(float, 0.5),
    },
    "dynamics": {
        "realizations": Key(int, 200),
        "t_max": Key(float, 1000.0),
        "dt": Key(float, 0.05),
        "t_min": Key(float, 1.0),
        "per_decade": Key(int, 32),
        "leak_margin": Key(int, 5),
        "leak_threshold": Key(float, 1e-8),
        "m_stride": Key(int, 20),
    },
    "green": {
        "energy": Key(float, 0.3),
        "eps": Key(float, 0.1),
        "instances": Key(int, 20),
        "box_center": Key(int, -15),
        "box_radius": Key(float, 8.0),
        "source": Key(int, 10),
        "residuum_eps": Key(_floats, (1.0, 0.1, 0.01)),
        "residuum_instances": Key(int, 10),
        "eps_min": Key(float, 1e-6),
        "abel_eps": Key(_floats, (0.2, 0.1, 0.05)),
        "abel_realizations": Key(int, 20),
    },
    "msa": {
        "variant": Key(str, "M2"),
        "rho": Key(str, "algebraic"),
        "alpha": Key(float, 1.5),
        "p": Key(float, 2.0),
        "m": Key(float, 6.0),
        "nu": Key(float, 1.0),
        "beta": Key(float, 0.0),
        "n": Key(float, 0.0),
        "c_n": Key(float, 1.0),
        "energy": Key(float, 4.5),
        "scales": Key(_floats, (8.0, 16.0, 32.0)),
        "realizations": Key(int, 500),
        "eps_min": Key(float, 1e-6),
        "window": Key(_floats, ()),
        "window_eps_min": Key(float, 1e-3),
        "cert_alpha": Key(float, 1.5),
        "cert_m": Key(float, 33.0),
        "cert_w": Key(float, 8.0),
        "cert_S": Key(int, 4),
        "cert_N": Key(int, 14),
        "cert_d": Key(int, 1),
        "cert_K0": Key(int, 10),
        "cert_theta": Key(float, 3.0),
        "cert_p": Key(float, 5.5),
        "cert_C_W": Key(float, 1.0),
        "cert_interval": Key(float, 1.0),
        "cert_c_NSd": Key(float, 1.0),
        "cert_c_dN": Key(float, 1.0),
        "cert_c_check": Key(float, 1.0),
        "cert_ell": Key(float, 1e4),
        "cert_L0": Key(float, 10.0),
        "remark_alpha": Key(float, 1.5),
        "remark_d": Key(int, 1),
        "remark_n": Key(float, 9.0),
    },
    "estimators": {
        "windows": Key(_windows, "auto"),
        "stability_threshold": Key(float, 1.05),
        "slope_tolerance": Key(float, 0.05),
        "bootstrap": Key(int, 200),
        "bootstrap_seed": Key(int, 24301),
        "wegner_energy": Key(float, 2.0),
        "wegner_etas": Key(_floats, (0.1, 0.03, 0.01, 0.003)),
        "wegner_block": Key(int, 32),
        "wegner_gap": Key(int, 64),
        "wegner_realizations": Key(int, 2000),
        "wegner_min_separation": Key(int, 1),
    },
    "execution": {"workers": Key(int, 1), "seed": Key(int, 12345), "informational": Key(_names, ())},
    "output": {"directory": Key(str, "out"), "formats": Key(_formats, ("csv", "json"))},
}

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#\s][^=:]*?)\s*[=:]")


def _line_map(text: str) -> dict[tuple[str, Optional[str]], int]:
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith("#") or not line.strip():
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        k = _KEY.match(line)
        if k and section is not None:
            lines.setdefault((section, k.group(1).strip().lower()), no)
    return lines


class RunConfig(dict):
    """``{section: {key: value}}`` with all defaults materialized."""

    def echo(self) -> str:
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {_fmt_value(self[section][key])}")
            out.append("")
        return "\n".join(out)

    @property
    def seed(self) -> int:
        return self["execution"]["seed"]


def defaults() -> RunConfig:
    return RunConfig({s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(
        strict=True, comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None,
        default_section="__no_defaults__",
    )
    parser.optionxform = str
    try:
        parser.read_file(io.StringIO(text), source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_map(text)
    cfg = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = lines.get((section, key.lower()), "?")
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}:{line}: unknown key {key!r} in [{section}]")
            try:
                cfg[section][key] = SCHEMA[section][key].parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}:{line}: bad value for {section}.{key}: {exc}") from None
    return cfg


def load_config(path: Optional[Path]) -> RunConfig:
    if path is None:
        return defaults()
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
