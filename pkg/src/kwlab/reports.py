"""Artifact emission: delimited output, JSON reports, run manifests.

JSON reports are byte-stable for a fixed seed and thread count: keys are
sorted, floats use the shortest round-trip representation, and nothing
time- or host-dependent enters them.  The run manifest is the one file
that records wall time and library versions, and is therefore excluded
from the replay guarantee.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PAPER_CONSTANTS = {
    "s2": 25.0 / 168.0,
    "b2": 79.0 / 168.0,
    "b1": 19.0 / 42.0,
    "s_min": -38.0 / 21.0,
}


def constants_block() -> dict:
    return dict(PAPER_CONSTANTS)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (str, bool)) or obj is None:
        return obj
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"cannot serialise {type(obj)!r}")


def dump_json(path, obj) -> None:
    text = json.dumps(_jsonify(obj), sort_keys=True, indent=2)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# Flat key=value configuration files


def parse_config_text(text: str) -> dict:
    """One key=value pair per line; '#' starts a comment; keys unique."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_fraction(text: str) -> float:
    """Floats given either directly or as integer fractions like -38/21."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_list(text: str, elem=parse_fraction) -> list:
    return [elem(part) for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# Run directories


@dataclass
class RunWriter:
    """Namespaced output directory for one experiment run."""

    out_root: str
    command: str
    config_text: str
    seed: int
    threads: int

    def __post_init__(self):
        digest = hashlib.sha256(
            (self.command + "\n" + self.config_text + f"\nseed={self.seed}").encode()
        ).hexdigest()[:12]
        self.run_id = digest
        self.run_dir = os.path.join(self.out_root, f"{self.command}-{digest}")
        self._t0 = time.time()
        os.makedirs(self.run_dir, exist_ok=True)
        echo_lines = [
            line for line in self.config_text.splitlines() if line.strip() and not line.strip().startswith("#")
        ]
        echo = "\n".join(sorted(echo_lines))
        with open(self.path("config_echo.txt"), "w") as fh:
            fh.write(echo + ("\n" if echo else ""))

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def json(self, name: str, payload: dict) -> str:
        payload = dict(payload)
        payload.setdefault("constants", constants_block())
        payload.setdefault("seed", self.seed)
        payload.setdefault("command", self.command)
        p = self.path(name)
        dump_json(p, payload)
        return p

    def csv(self, name: str, header, rows) -> str:
        p = self.path(name)
        write_csv(p, header, rows)
        return p

    def manifest(self) -> str:
        p = self.path("manifest.json")
        payload = {
            "command": self.command,
            "run_id": self.run_id,
            "seed": self.seed,
            "threads": self.threads,
            "wall_time_s": time.time() - self._t0,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.system(),
        }
        dump_json(p, payload)
        return p
