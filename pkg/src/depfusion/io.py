"""Text formats for responses, partitions, graphs and fitted parameters.

Responses: CSV, one row per item, one column per learner, 0 = missing.
Partition: one positive segment length per line.
Graph: ``n n' [delta]`` per line with 1-based node ids.
Blank lines and lines starting with ``#`` are ignored by every parser.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import DataGraph, FusionError, ResponseMatrix, SequencePartition, ValidationError

FORMAT_VERSION = 1


class ParseError(FusionError, ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


def _content_lines(path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _parse_int(token: str, path, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(path, lineno, f"{what} must be an integer, got {token!r}") from None


def read_responses(path, k_classes: Optional[int] = None) -> ResponseMatrix:
    rows: list[list[int]] = []
    width = None
    for lineno, line in _content_lines(path):
        cells = next(csv.reader([line]))
        row = [_parse_int(c.strip(), path, lineno, "response") for c in cells]
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(path, lineno, f"expected {width} learner columns, got {len(row)}")
        for c in row:
            if c < 0 or (k_classes is not None and c > k_classes):
                hi = k_classes if k_classes is not None else "K"
                raise ParseError(path, lineno, f"response {c} outside 0..{hi}")
        rows.append(row)
    if not rows:
        raise ParseError(path, 0, "no response rows")
    entries = np.array(rows, dtype=np.int64).T
    k = k_classes if k_classes is not None else max(2, int(entries.max()))
    try:
        return ResponseMatrix(entries, k)
    except ValidationError as exc:
        raise ParseError(path, 0, str(exc)) from None


def write_responses(path, responses: ResponseMatrix) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(responses.entries.T.tolist())


def read_partition(path) -> SequencePartition:
    lengths = []
    for lineno, line in _content_lines(path):
        n = _parse_int(line, path, lineno, "segment length")
        if n < 1:
            raise ParseError(path, lineno, f"segment length must be >= 1, got {n}")
        lengths.append(n)
    if not lengths:
        raise ParseError(path, 0, "no segments")
    return SequencePartition(np.array(lengths))


def write_partition(path, partition: SequencePartition) -> None:
    Path(path).write_text("".join(f"{int(n)}\n" for n in partition.lengths), encoding="utf-8")


def read_graph(path, n_nodes: int, default_delta: float = 1.0) -> DataGraph:
    edges, deltas, seen = [], [], {}
    for lineno, line in _content_lines(path):
        parts = line.replace(",", " ").split()
        if len(parts) not in (2, 3):
            raise ParseError(path, lineno, f"expected 'n n' [delta]', got {line!r}")
        u = _parse_int(parts[0], path, lineno, "node id")
        v = _parse_int(parts[1], path, lineno, "node id")
        for node in (u, v):
            if not 1 <= node <= n_nodes:
                raise ParseError(path, lineno, f"node id {node} outside 1..{n_nodes}")
        if u == v:
            raise ParseError(path, lineno, f"self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise ParseError(path, lineno, f"duplicate edge {u} {v} (first on line {seen[key]})")
        seen[key] = lineno
        if len(parts) == 3:
            try:
                d = float(parts[2])
            except ValueError:
                raise ParseError(path, lineno, f"delta must be a number, got {parts[2]!r}") from None
            if not d > 0 or not np.isfinite(d):
                raise ParseError(path, lineno, f"delta must be positive and finite, got {parts[2]}")
        else:
            d = default_delta
        edges.append((u - 1, v - 1))
        deltas.append(d)
    return DataGraph(n_nodes, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(deltas))


def write_graph(path, graph: DataGraph, with_delta: bool = True) -> None:
    lines = []
    for (u, v), d in zip(graph.edges.tolist(), graph.delta.tolist()):
        lines.append(f"{u + 1} {v + 1} {d!r}\n" if with_delta else f"{u + 1} {v + 1}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_labels(path) -> np.ndarray:
    out = [_parse_int(line, path, lineno, "label") for lineno, line in _content_lines(path)]
    return np.array(out, dtype=np.int64)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(y)}\n" for y in labels), encoding="utf-8")


def write_matrix_csv(path, matrix, fmt: str = "%.17g") -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=fmt)


def matrix_to_json(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def matrix_from_json(obj) -> np.ndarray:
    return np.array(obj, dtype=float)


def dump_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
