"""Artifact emission: CSV tables, two-column plot files, report and manifest.

CSV and ``.dat`` bodies depend only on the computed numbers, so identical
configs give identical files.  Wall-clock data goes into the manifest only.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
import platform
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, _backend
from .config import RunConfig


def fmt(v) -> str:
    """17 significant digits for reals, plain integers, strings as given."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def jsonable(obj: Any) -> Any:
    """Plain JSON data; NaN becomes null and infinities the strings "inf"/"-inf"."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    out = {
        "leakymap": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "backend": _backend.backend_name(),
    }
    try:
        import mpmath

        out["mpmath"] = mpmath.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


class Emitter:
    """Writes the files of one subcommand run into ``out_dir``."""

    def __init__(self, out_dir: str | Path, cfg: RunConfig, command: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = command
        self.digest = cfg.digest()
        self.files: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc)

    def _header(self, title: str, units: str) -> list[str]:
        return [
            f"# leakymap {self.command}: {title}",
            f"# config_sha256: {self.digest}",
            f"# units: {units}",
        ]

    def csv(self, name: str, title: str, columns: Sequence[tuple[str, str]], rows: Sequence[Sequence]) -> Path:
        """``columns`` is a list of (name, unit); ``rows`` an iterable of tuples."""
        units = "; ".join(f"{c} [{u}]" for c, u in columns)
        lines = self._header(title, units)
        lines.append(",".join(c for c, _ in columns))
        for row in rows:
            lines.append(",".join(fmt(v) for v in row))
        return self._write(name, "\n".join(lines) + "\n")

    def dat(self, name: str, title: str, x, y, x_unit: str, y_unit: str) -> Path:
        """Two whitespace-separated columns for any plotting tool."""
        lines = [f"# {l[2:]}" for l in self._header(title, f"x [{x_unit}]; y [{y_unit}]")]
        lines += [f"{fmt(a)} {fmt(b)}" for a, b in zip(x, y)]
        return self._write(name, "\n".join(lines) + "\n")

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        if name not in self.files:
            self.files.append(name)
        return path

    def report(self, data: dict) -> Path:
        body = json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n"
        return self._write("report.json", body)

    def manifest(self, *, constants: dict, defects: dict, exit_code: int, status: str) -> Path:
        finished = _dt.datetime.now(_dt.timezone.utc)
        doc = {
            "command": self.command,
            "argv": sys.argv,
            "config": self.cfg.to_dict(),
            "config_sha256": self.digest,
            "versions": _versions(),
            "constants": constants,
            "defects": defects,
            "timing": {
                "started": self.started.isoformat(),
                "finished": finished.isoformat(),
                "wall_seconds": (finished - self.started).total_seconds(),
            },
            "exit_code": exit_code,
            "status": status,
            "files": {n: sha256_file(self.dir / n) for n in sorted(self.files)},
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
