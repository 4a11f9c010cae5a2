"""On-disk formats: binary checkpoints, run manifests, diagnostics CSV, config files.

Checkpoint layout (little-endian)::

    b"T2F1"  uint32 version  uint32 N  float64 tau  uint8 kappa
    then V, Q, rho, l, pi_V, pi_Q as N float64 values each
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .fields import FIELD_NAMES, FieldState, UsageError

MAGIC = b"T2F1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIdB")
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """A checkpoint file is truncated, corrupt or of an unknown version."""


def checkpoint_bytes(state: FieldState) -> bytes:
    n = state.grid.n_points
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, n, float(state.tau), int(state.twist))]
    for name in FIELD_NAMES:
        parts.append(np.ascontiguousarray(getattr(state, name), dtype=_F64).tobytes())
    return b"".join(parts)


def state_from_bytes(data: bytes) -> FieldState:
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint shorter than its header")
    magic, version, n, tau, kappa = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if kappa not in (0, 1):
        raise CheckpointError(f"twist flag must be 0 or 1, got {kappa}")
    expected = _HEADER.size + 6 * 8 * n
    if len(data) != expected:
        raise CheckpointError(f"checkpoint has {len(data)} bytes, expected {expected} for N={n}")
    arrays = np.frombuffer(data, dtype=_F64, count=6 * n, offset=_HEADER.size).reshape(6, n)
    return FieldState.from_stacked(tau, arrays.astype(np.float64), kappa)


def write_checkpoint(path, state: FieldState) -> str:
    """Write ``state`` to ``path``; returns the sha256 hex digest of the file."""
    data = checkpoint_bytes(state)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> FieldState:
    return state_from_bytes(Path(path).read_bytes())


def checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Everything needed to regenerate a run: sampler echo, grid, evolution config, build."""

    spec: dict
    grid_n: int
    code_version: str
    seed: int
    initial_checksum: str
    evolution: dict = field(default_factory=dict)
    tau_start: float | None = None
    tau_end: float | None = None
    tau_finished: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"manifest {path} is not valid JSON: {exc}") from exc
        try:
            return cls(**raw)
        except TypeError as exc:
            raise UsageError(f"manifest {path} has unexpected fields: {exc}") from exc


def format_value(x: float) -> str:
    """17 significant digits, enough to round-trip any binary64."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


class DiagnosticsWriter:
    """Stream DiagnosticsRecords to CSV with the frozen column order."""

    def __init__(self, stream: IO[str]):
        self._stream = stream
        stream.write(",".join(h for h, _ in CSV_COLUMNS) + "\n")

    def write(self, record: DiagnosticsRecord) -> None:
        row = ",".join(format_value(float(getattr(record, attr))) for _, attr in CSV_COLUMNS)
        self._stream.write(row + "\n")

    def abort(self, tau: float) -> None:
        self._stream.write(f"# aborted at tau={format_value(tau)}\n")
        self._stream.flush()


def write_csv(path, records: Iterable[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = DiagnosticsWriter(fh)
        for rec in records:
            writer.write(rec)


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns of a diagnostics CSV keyed by header; comment lines are skipped."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise UsageError(f"{path} holds no header")
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise UsageError(f"{path}: row {k + 1} has {len(row)} fields, header has {len(header)}")
    data = np.array([[float(x) for x in row] for row in rows], dtype=np.float64).reshape(len(rows), len(header))
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def read_config(path, section: str = "t2flow") -> dict[str, str]:
    """Key-value pairs from an INI-style file.

    Keys may be written with dashes or underscores; they are returned
    with underscores. Pairs outside any section are accepted too.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text if text.lstrip().startswith("[") else f"[{section}]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc
    if not parser.has_section(section):
        raise UsageError(f"config {path} has no [{section}] section")
    return {k.replace("-", "_"): v for k, v in parser.items(section)}
