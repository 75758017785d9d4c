"""CSV response matrices, versioned JSON reports and atomic file output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .core import ResponseMatrix, SampleSet, ValidationError, make_model_ids

SCHEMA_ID = "disco-report/v1"


class ParseError(ValidationError):
    """Malformed response CSV; the message names the offending row and column."""


@dataclass(frozen=True)
class AuditRunConfig:
    input_path: str
    target_id: str
    output_path: str
    peer_ids: Optional[tuple[str, ...]] = None
    fit_fraction: float = 0.5
    alpha: float = 0.10
    n_boot: int = 1000
    lambda0: float = 1e-3
    lambda_exponent: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not self.input_path or not self.output_path:
            raise ValidationError("input and output paths must be non-empty")
        if not 0 < self.fit_fraction < 1:
            raise ValidationError("fit_fraction must lie in (0, 1)")
        if self.peer_ids is not None:
            object.__setattr__(self, "peer_ids", tuple(self.peer_ids))

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["peer_ids"] = None if self.peer_ids is None else list(self.peer_ids)
        return d


# -- atomic output ------------------------------------------------------------

def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# -- CSV ----------------------------------------------------------------------

def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: non-numeric cell {cell!r}") from None
    if not math.isfinite(x):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return x


def ingest_responses(path) -> ResponseMatrix:
    """Read ``input_id,dose,<model>...`` rows into a :class:`ResponseMatrix`.

    Rows are numbered as in the file (header is row 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_responses(fh.read())


def parse_responses(text: str) -> ResponseMatrix:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("row 1: empty file, expected header 'input_id,dose,<model>,...'") from None
    if len(header) < 2 or header[0] != "input_id" or header[1] != "dose":
        raise ParseError(f"row 1: header must start with 'input_id,dose', got {header[:2]}")
    models = header[2:]
    if not models:
        raise ParseError("row 1: header names no model columns")
    if any(not m for m in models):
        raise ParseError("row 1: empty model name in header")
    if len(set(models)) != len(models):
        raise ParseError("row 1: duplicate model names in header")
    points, rows, seen = [], [], {}
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(f"row {lineno}: expected {len(header)} columns, found {len(rec)}")
        iid = rec[0].strip()
        if not iid:
            raise ParseError(f"row {lineno}, column 'input_id': empty identifier")
        dose = _parse_float(rec[1].strip(), lineno, "dose")
        key = (iid, dose)
        if key in seen:
            raise ParseError(f"row {lineno}: duplicate (input_id, dose) = {key}, first seen on row {seen[key]}")
        seen[key] = lineno
        rows.append([_parse_float(c.strip(), lineno, m) for c, m in zip(rec[2:], models)])
        points.append(key)
    if not rows:
        raise ParseError("no data rows")
    return ResponseMatrix(make_model_ids(models), SampleSet(tuple(points)), np.array(rows, dtype=float))


def format_responses(matrix: ResponseMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["input_id", "dose"] + matrix.labels)
    for (iid, dose), row in zip(matrix.sample.points, matrix.values):
        w.writerow([iid, repr(float(dose))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def emit_responses(matrix: ResponseMatrix, path) -> Path:
    """Write the matrix as CSV with shortest round-trip float formatting."""
    return atomic_write(path, format_responses(matrix))


def align_labels(matrix: ResponseMatrix, labels: ResponseMatrix) -> np.ndarray:
    """Labels for ``matrix`` rows, matched on (input_id, dose).

    A labels file with one value column gives a vector; otherwise its columns
    must name the models and an n x N matrix in model order is returned.
    """
    pos = {p: i for i, p in enumerate(labels.sample.points)}
    try:
        idx = [pos[p] for p in matrix.sample.points]
    except KeyError as e:
        raise ValidationError(f"no label for point {e.args[0]}") from None
    vals = labels.values[idx]
    if vals.shape[1] == 1:
        return vals[:, 0]
    return np.column_stack([vals[:, labels.model(m).index] for m in matrix.labels])


def write_rows(path, header: Sequence[str], rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return atomic_write(path, buf.getvalue())


# -- JSON reports -------------------------------------------------------------

def to_jsonable(obj):
    """Plain-JSON view: numpy scalars and arrays unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("isqed").joinpath("schemas/disco-report-v1.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(doc: dict) -> None:
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"report fails {SCHEMA_ID} at {loc}: {e.message}") from None


def versions() -> dict:
    return {"package": __version__, "numpy": np.__version__}


def make_report(kind: str, result: dict, config: dict, seed: int) -> dict:
    doc = {
        "schema": SCHEMA_ID,
        "kind": kind,
        "provenance": {"seed": int(seed), "config": to_jsonable(config), "versions": versions()},
        "result": to_jsonable(result),
    }
    validate_report(doc)
    return doc


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(path, kind: str, result: dict, config: dict, seed: int) -> Path:
    """Validate and atomically write a report; identical inputs give identical bytes."""
    return atomic_write(path, dumps_report(make_report(kind, result, config, seed)))


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_report(doc)
    return doc
