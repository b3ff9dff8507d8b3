"""Probe reports: constants, slacks, and violation lists with JSON export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any


def _jsonable(obj: Any) -> Any:
    # numpy scalars/arrays to plain python, recursively
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and obj != obj:  # NaN
        return None
    return obj


def dump_json(obj: Any, path: str) -> None:
    """Deterministic JSON: sorted keys, stable float repr, trailing newline."""
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass
class ProbeReport:
    """Outcome of a sampling probe.

    constants holds named empirical constants (scalars or small tables),
    worst_slack is the minimal margin over all checks (>= 0 means every
    sampled inequality held), violations lists one dict per failed sample.
    """

    name: str
    samples: int = 0
    constants: dict[str, Any] = field(default_factory=dict)
    worst_slack: float = float("inf")
    violations: list[dict[str, Any]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def record_slack(self, slack: float, tol: float = 0.0, **context: Any) -> None:
        """Fold one margin into the report; negative beyond tol is a violation."""
        slack = float(slack)
        if slack < self.worst_slack:
            self.worst_slack = slack
        if slack < -tol:
            self.violations.append({"slack": slack, **_jsonable(context)})

    def as_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "samples": self.samples,
            "constants": _jsonable(self.constants),
            "worst_slack": self.worst_slack,
            "violations": _jsonable(self.violations),
            "notes": list(self.notes),
            "passed": self.passed,
        }

    def to_json(self, path: str) -> None:
        dump_json(self.as_dict(), path)
