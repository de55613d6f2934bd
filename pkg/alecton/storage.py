"""Text file formats: ground truth, triplet input and CSV reports."""

from __future__ import annotations

import csv
import logging
import os
import tempfile
from typing import Any, Iterable, Sequence

import numpy as np

from alecton.linalg import LinalgError
from alecton.models import ConvergenceTrace
from alecton.truth import SpectralTruth, TripletTruth

LOGGER = logging.getLogger(__name__)


class StorageError(ValueError):
    pass


def format_float(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _atomic_write(path: str, write) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            write(handle)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    LOGGER.info("Wrote %s", path)


def _flatten(meta: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    items: list[tuple[str, Any]] = []
    for key in sorted(meta):
        value = meta[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            items.extend(_flatten(value, f"{name}."))
        else:
            items.append((name, value))
    return items


def write_truth(path: str, truth: SpectralTruth) -> None:
    """Header `n rank`, one eigenvalue line, then n rows of eigenvector entries."""
    n, rank = truth.eigenvectors.shape

    def write(handle) -> None:
        handle.write(f"{n} {rank}\n")
        handle.write(" ".join(format_float(value) for value in truth.eigenvalues) + "\n")
        for row in truth.eigenvectors:
            handle.write(" ".join(format_float(value) for value in row) + "\n")

    _atomic_write(path, write)


def read_truth(path: str) -> SpectralTruth:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.split() for line in handle if line.strip()]
    if not lines or len(lines[0]) != 2:
        raise StorageError(f"{path}: first line must be `n rank`")
    try:
        n, rank = int(lines[0][0]), int(lines[0][1])
    except ValueError as exc:
        raise StorageError(f"{path}: first line must be `n rank`") from exc
    if n < 1 or rank < 1 or rank > n:
        raise StorageError(f"{path}: need 1 <= rank <= n, got n={n} rank={rank}")
    if len(lines) != n + 2:
        raise StorageError(f"{path}: expected {n + 2} lines, found {len(lines)}")
    try:
        values = np.array([float(part) for part in lines[1]])
        vectors = np.array([[float(part) for part in line] for line in lines[2:]])
    except ValueError as exc:
        raise StorageError(f"{path}: {exc}") from exc
    if values.shape != (rank,) or vectors.shape != (n, rank):
        raise StorageError(f"{path}: expected {rank} eigenvalues and {n} rows of {rank} entries")
    try:
        return SpectralTruth(values, vectors)
    except (LinalgError, ValueError) as exc:
        raise StorageError(f"{path}: {exc}") from exc


def read_triplets(path: str, rows: int, cols: int) -> TripletTruth:
    """Parse `row,col,value` lines (0-based indices, `#` comments); the last duplicate wins."""
    entries: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [part.strip() for part in line.split(",")]
            if len(parts) != 3:
                raise StorageError(f"{path}:{line_no}: expected `row,col,value`, got {line!r}")
            try:
                i, j, value = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise StorageError(f"{path}:{line_no}: {exc}") from exc
            if not (0 <= i < rows and 0 <= j < cols):
                raise StorageError(f"{path}:{line_no}: entry ({i}, {j}) outside {rows}x{cols}")
            entries.append((i, j, value))
    if not entries:
        raise StorageError(f"{path}: no entries")
    try:
        return TripletTruth.from_entries(rows, cols, entries)
    except LinalgError as exc:
        raise StorageError(f"{path}: {exc}") from exc


def write_csv(
    path: str,
    fields: Sequence[str],
    rows: Iterable[Sequence[Any]],
    meta: dict[str, Any] | None = None,
) -> None:
    """CSV with the resolved configuration as leading `#key=value` lines."""
    materialized = [list(row) for row in rows]

    def write(handle) -> None:
        for key, value in _flatten(meta or {}):
            handle.write(f"#{key}={value}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for row in materialized:
            writer.writerow([format_float(v) if isinstance(v, float) else ("" if v is None else v) for v in row])

    _atomic_write(path, write)


def read_csv(path: str) -> tuple[dict[str, str], list[dict[str, str]]]:
    meta: dict[str, str] = {}
    body: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for line in handle:
            if line.startswith("#"):
                key, _, value = line[1:].rstrip("\n").partition("=")
                meta[key] = value
            else:
                body.append(line)
    return meta, list(csv.DictReader(body))


def write_trace(path: str, trace: ConvergenceTrace, meta: dict[str, Any] | None = None) -> None:
    rows = [
        (point.step, float(point.rho), None if point.tau is None else float(point.tau), round(point.wall_ms, 3))
        for point in trace.points
    ]
    write_csv(path, ("step", "rho", "tau", "wall_ms"), rows, meta)
