"""Check reports and deterministic serialisation helpers."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "tolist"):
        return _clean(value.tolist())
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    return str(value)


@dataclass
class CheckReport:
    """Outcome of one numerical check.

    ``lhs`` and ``rhs`` are the two sides of the verified statement
    ``lhs <= rhs`` and ``margin = rhs - lhs``. ``anchor`` is a stable label
    naming the property being verified.
    """

    check: str
    anchor: str
    inputs: dict
    lhs: float
    rhs: float
    passed: bool
    details: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return float(self.rhs - self.lhs)

    def to_dict(self) -> dict:
        return _clean({
            "check": self.check,
            "anchor": self.anchor,
            "inputs": self.inputs,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "margin": self.margin,
            "pass": bool(self.passed),
            "details": self.details,
        })

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.check:<28} lhs={self.lhs:.6g} rhs={self.rhs:.6g} margin={self.margin:.3g}"


def dumps(doc: Any) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def format_float(x: float) -> str:
    """Shortest round-trip decimal (at most 17 significant digits)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_atomic(path: str | os.PathLike, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
