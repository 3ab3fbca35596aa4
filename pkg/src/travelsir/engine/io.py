"""Trajectory CSV, run summary JSON and the binary event-log stream."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..fileio import atomic_write_bytes, csv_text, write_json
from .core import CENSUS_COLUMNS, TRAJECTORY_COLUMNS, RunResult

EVENT_MAGIC = b"TSEV"
EVENT_VERSION = 1
_EVENT_HEADER = struct.Struct("<4sIQ")


def trajectory_csv(run: RunResult) -> str:
    rows = run.trajectory.rows[:, : len(TRAJECTORY_COLUMNS)]
    return csv_text(TRAJECTORY_COLUMNS, rows)


def census_csv(run: RunResult) -> str:
    rows = np.column_stack([run.trajectory.t, run.trajectory.census])
    return csv_text(("t",) + CENSUS_COLUMNS, rows)


def write_run(run: RunResult, outdir: str | Path) -> list[Path]:
    """Trajectory, census and summary files for one run (plus the event log in audit mode)."""
    outdir = Path(outdir)
    written = [
        atomic_write_bytes(outdir / "trajectory.csv", trajectory_csv(run).encode()),
        atomic_write_bytes(outdir / "census.csv", census_csv(run).encode()),
        write_json(outdir / "run.json", run.summary()),
    ]
    if run.event_log is not None:
        written.append(atomic_write_bytes(outdir / "events.bin", encode_events(run.event_log)))
    return written


def encode_events(log: np.ndarray) -> bytes:
    """Versioned stream: header then float64 rows (t, kind, node, other, edge_class, rate)."""
    log = np.ascontiguousarray(log, dtype="<f8")
    return _EVENT_HEADER.pack(EVENT_MAGIC, EVENT_VERSION, len(log)) + log.tobytes()


def decode_events(data: bytes) -> np.ndarray:
    magic, version, count = _EVENT_HEADER.unpack_from(data)
    if magic != EVENT_MAGIC or version != EVENT_VERSION:
        raise ValueError("not an event log stream")
    return np.frombuffer(data, dtype="<f8", offset=_EVENT_HEADER.size, count=6 * count).reshape(count, 6)
