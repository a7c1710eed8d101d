"""Artifact writers: stable JSON, RFC-4180 CSV, gnuplot-style ``.dat`` and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SIG_DIGITS = 12


def _round(x: float) -> float | str | None:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.{SIG_DIGITS}g}")


def canonical(obj: Any) -> Any:
    """Plain JSON types with floats rounded to a fixed number of significant digits."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if isinstance(obj, complex):
        return {"re": _round(obj.real), "im": _round(obj.imag)}
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj: Any) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, obj: Any) -> Path:
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{SIG_DIGITS}g}"
    return "" if v is None else str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_dat(path: Path, header: Sequence[str], columns: Sequence[Sequence[float]]) -> Path:
    """Whitespace-separated columns with a ``#`` header line, readable by gnuplot."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    with path.open("w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in zip(*cols):
            fh.write(" ".join(f"{v:.{SIG_DIGITS}e}" for v in row) + "\n")
    return path


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(canonical(config), sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    import importlib.metadata as md

    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "sympy", "matplotlib", "pydantic", "PyYAML"):
        try:
            out[pkg] = md.version(pkg)
        except md.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out_dir: Path, command: str, config: dict, wall_time: float,
                   artifacts: Sequence[Path], status: str = "ok") -> Path:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "versions": versions(),
        "wall_time_s": wall_time,
        "argv": sys.argv,
        "status": status,
        "artifacts": sorted(p.name for p in artifacts),
    }
    return write_json(out_dir / "manifest.json", manifest)
