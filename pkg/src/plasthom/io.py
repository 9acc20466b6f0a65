"""Configuration loading and result persistence.

Configs are JSON, tables are CSV, nodal fields are flat little-endian
float64 files (row-major) next to a JSON header.  Every command writes one
``manifest.json`` describing the invocation.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

MANIFEST = "manifest.json"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def config_hash(cfg) -> str:
    """SHA-256 of the canonical JSON form; insensitive to key order."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_config(path) -> dict:
    """Parse a JSON config; syntax errors are reported as ``path:line:col``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return cfg


def model_section(cfg: dict) -> dict:
    """The material model: either the ``model`` entry or the whole config."""
    if "model" in cfg:
        return cfg["model"]
    if "W" in cfg:
        return cfg
    raise InputError("config has neither a 'model' section nor material fields")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _clean(v):
    # JSON has no inf/nan; keep them readable as strings
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = json.loads(json.dumps(obj, default=_jsonable))
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: list[dict], columns: list | None = None) -> Path:
    """Deterministic CSV: fixed column order, shortest round-trip float repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def save_field(path, values, **meta) -> tuple[Path, Path]:
    """Write ``values`` to ``path.bin`` plus ``path.json`` (dtype, shape, order, meta)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f8")
    binp = path.with_suffix(".bin")
    arr.tofile(binp)
    header = {"dtype": "<f8", "shape": list(arr.shape), "order": "C", "file": binp.name,
              "meta": meta}
    return binp, write_json(path.with_suffix(".json"), header)


def load_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("dtype") != "<f8" or header.get("order") != "C":
        raise InputError(f"{path}: unsupported field layout")
    arr = np.fromfile(path.parent / header["file"], dtype="<f8")
    shape = tuple(header["shape"])
    if arr.size != int(np.prod(shape)):
        raise InputError(f"{path}: binary size does not match header shape {shape}")
    return arr.reshape(shape), header.get("meta", {})


def _version() -> str:
    from . import __version__
    return __version__


@dataclass
class RunManifest:
    command: str
    config_hash: str
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    arguments: dict = field(default_factory=dict)
    status: str = "ok"
    exit_code: int = 0
    version: str = field(default_factory=_version)
    timestamp: str = field(
        default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    environment: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__,
        "scipy": __import__("scipy").__version__})

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        self.outputs = sorted({str(Path(p).relative_to(out_dir)) if Path(p).is_relative_to(out_dir)
                               else str(p) for p in self.outputs})
        return write_json(out_dir / MANIFEST, asdict(self))

    @classmethod
    def read(cls, out_dir) -> "RunManifest":
        return cls(**json.loads((Path(out_dir) / MANIFEST).read_text()))
