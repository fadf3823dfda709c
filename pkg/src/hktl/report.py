"""Residual reports and their bit-stable serialization."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

FLOAT_FORMAT = "%.12e"


@dataclass
class CheckResult:
    """One named check over a point sample.

    ``criterion`` is "max<=tol" (the residual must stay at or below the
    tolerance everywhere) or "min>tol" (the value must stay strictly above
    the threshold everywhere).
    """

    name: str
    anchor: str
    tolerance: float
    values: np.ndarray
    points: np.ndarray = None
    criterion: str = "max<=tol"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.criterion not in ("max<=tol", "min>tol"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    @property
    def count(self):
        return int(self.values.size)

    @property
    def max(self):
        return float(np.max(self.values))

    @property
    def min(self):
        return float(np.min(self.values))

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def argmin(self):
        return int(np.argmin(self.values))

    @property
    def argmax(self):
        return int(np.argmax(self.values))

    @property
    def passed(self):
        if self.criterion == "max<=tol":
            return bool(self.max <= self.tolerance)
        return bool(self.min > self.tolerance)

    def summary(self):
        out = {
            "name": self.name,
            "anchor": self.anchor,
            "criterion": self.criterion,
            "tolerance": float(self.tolerance),
            "max": self.max,
            "mean": self.mean,
            "min": self.min,
            "count": self.count,
            "pass": self.passed,
        }
        if self.points is not None:
            out["argmax_point"] = [float(v) for v in self.points[self.argmax]]
            out["argmin_point"] = [float(v) for v in self.points[self.argmin]]
        out.update(self.extras)
        return out


@dataclass
class ResidualReport:
    checks: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def add(self, check):
        self.checks.append(check)
        return check

    def extend(self, other):
        self.checks.extend(other.checks)
        return self

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.checks]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "checks": [c.summary() for c in self.checks],
            "environment": self.environment,
            "pass": self.passed,
        }

    def __str__(self):
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(
                f"{flag} {c.name}: max={c.max:.3e} mean={c.mean:.3e} min={c.min:.3e} "
                f"n={c.count} ({c.criterion}, tol={c.tolerance:.1e})"
            )
        return "\n".join(lines)


def _format_float(x):
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return FLOAT_FORMAT % x


def dumps(obj, indent=2, _level=0):
    """JSON with sorted keys and every float written as %.12e."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}"
            for k in sorted(obj, key=str)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    return json.dumps(str(obj))


def report_json(report):
    return dumps(report.to_dict()) + "\n"


def report_csv(report):
    """Rows of (point coordinates, check name, residual), one per sample per check."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    dim = 0
    for c in report.checks:
        if c.points is not None:
            dim = max(dim, c.points.shape[1])
    writer.writerow([f"x{i}" for i in range(dim)] + ["check", "residual"])
    for c in report.checks:
        for k, value in enumerate(c.values):
            if c.points is not None:
                coords = [FLOAT_FORMAT % v for v in c.points[k]]
            else:
                coords = []
            coords += [""] * (dim - len(coords))
            writer.writerow(coords + [c.name, FLOAT_FORMAT % value])
    return buf.getvalue()


def emit_report(report, json_path=None, csv_path=None):
    """Write the JSON and/or CSV renderings; returns the written paths."""
    written = []
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(report_json(report))
        written.append(json_path)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report_csv(report))
        written.append(csv_path)
    return written
