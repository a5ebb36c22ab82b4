"""Iteration traces of gateway-visible signals (z, v) and their file format.

One row per ADMM iteration. The file format is line-delimited text with a
header carrying the device count and budget, and round-trips bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

PHASE_NORMAL = "normal"
PHASE_ANOMALOUS = "anomalous"


class TraceFormatError(ValueError):
    """Raised on malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    z: tuple[float, ...]
    v: tuple[float, ...]
    label: int = 0
    phase: str = PHASE_NORMAL


@dataclass
class IterationTrace:
    """Time-ordered labeled (z, v) records plus the budget they were produced under."""

    n_devices: int
    c: float
    d: float
    a: tuple[float, ...]
    gamma: tuple[float, ...]
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if len(row.z) != self.n_devices or len(row.v) != self.n_devices:
            raise ValueError("row width does not match device count")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def z_matrix(self) -> list[tuple[float, ...]]:
        return [r.z for r in self.rows]

    def labels(self) -> list[int]:
        return [r.label for r in self.rows]


def _fmt(x: float) -> str:
    return repr(float(x))


def export_trace(trace: IterationTrace, path: str) -> None:
    """Write ``trace`` to ``path``; on failure no partial file is left behind."""
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(
                "# devices={} c={} d={} a={} gamma={}\n".format(
                    trace.n_devices,
                    _fmt(trace.c),
                    _fmt(trace.d),
                    ",".join(_fmt(x) for x in trace.a),
                    ",".join(_fmt(x) for x in trace.gamma),
                )
            )
            n = trace.n_devices
            fh.write(
                "# columns: iteration "
                + " ".join(f"z{i+1}" for i in range(n))
                + " "
                + " ".join(f"v{i+1}" for i in range(n))
                + " label phase\n"
            )
            for row in trace.rows:
                fields = [str(row.iteration)]
                fields += [_fmt(x) for x in row.z]
                fields += [_fmt(x) for x in row.v]
                fields.append(str(row.label))
                fields.append(row.phase)
                fh.write(" ".join(fields) + "\n")
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def import_trace(path: str) -> IterationTrace:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# devices="):
        raise TraceFormatError("missing header", 1)
    header: dict[str, str] = {}
    for token in lines[0][2:].split():
        key, _, val = token.partition("=")
        header[key] = val
    try:
        n = int(header["devices"])
        trace = IterationTrace(
            n_devices=n,
            c=float(header["c"]),
            d=float(header["d"]),
            a=tuple(float(x) for x in header["a"].split(",")),
            gamma=tuple(float(x) for x in header["gamma"].split(",")),
        )
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from exc
    for lineno, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 1 + 2 * n + 2:
            raise TraceFormatError(
                f"expected {1 + 2 * n + 2} fields, got {len(parts)}", lineno
            )
        try:
            row = TraceRow(
                iteration=int(parts[0]),
                z=tuple(float(x) for x in parts[1 : 1 + n]),
                v=tuple(float(x) for x in parts[1 + n : 1 + 2 * n]),
                label=int(parts[1 + 2 * n]),
                phase=parts[2 + 2 * n],
            )
        except ValueError as exc:
            raise TraceFormatError(str(exc), lineno) from exc
        if row.phase not in (PHASE_NORMAL, PHASE_ANOMALOUS):
            raise TraceFormatError(f"unknown phase {row.phase!r}", lineno)
        trace.rows.append(row)
    return trace
