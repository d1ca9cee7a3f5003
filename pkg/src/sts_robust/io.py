"""Artifact serialization: fixed-column CSV, JSON and run manifests.

Floats are written with 17 significant digits so every value round-trips
bitwise, and nothing time-dependent enters an artifact, so identical runs
produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

FLOAT_FORMAT = "{:.17g}"


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FORMAT.format(x)


def write_csv(path, columns: list[str], rows) -> Path:
    """Rows of numbers; ints stay ints, everything else goes through
    :func:`format_float`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        row = list(row)
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) and not isinstance(v, bool)
                              else format_float(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    return columns, data.reshape(len(lines) - 1, len(columns))


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; those are written as null
        return FLOAT_FORMAT.format(x) if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) or v is None for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """Deterministic JSON with 17-digit floats and insertion-ordered keys."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(dumps_json(config_dict).encode()).hexdigest()


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out_dir, command: str, config_dict: dict, seed: int, outputs: list[Path],
                   extra: dict | None = None) -> Path:
    """``manifest.json`` listing the config, its hash, the seed, library
    versions and a checksum of every artifact written by the command."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(config_dict),
        "config": config_dict,
        "versions": versions(),
        "platform": sys.platform,
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)
