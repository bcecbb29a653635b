"""Deterministic CSV and JSON writers.

CSV floats are written with 17 significant digits; JSON floats use the
shortest repr that round-trips exactly. Non-finite values are written as the
strings "inf", "-inf" and "nan" in JSON and as the same words in CSV.
"""
import csv
import json
import logging
import math
import pathlib
from typing import Any, Iterable, Sequence, Union

import attr
import numpy as np

from pinchflow.exceptions import ConfigurationError
from pinchflow.singularity_rescaler import BlowupRecord
from pinchflow.types import FlowTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, pathlib.Path]

TRACE_COLUMNS = (
    "t",
    "node",
    "sigma",
    "a",
    "b",
    "z",
    "state",
    "kappa",
    "lam_a",
    "lam_b",
    "H",
    "A_norm_sq",
    "grad_A_sq",
    "hess_A_sq",
    "grad_H_sq",
    "regrid_count",
    "probe",
)
RESCALED_COLUMNS = ("t", "T_minus_t", "scale", "k_best", "distance")


def format_float(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


def jsonable(value: Any) -> Any:
    if attr.has(type(value)):
        return jsonable(attr.asdict(value, recurse=False))
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [jsonable(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return format_float(value)
    return value


def _open(path: PathLike):
    path = pathlib.Path(path)
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigurationError(f"Cannot write {path}: {exc}") from None


def write_json(data: Any, path: PathLike) -> None:
    with _open(path) as json_file:
        json.dump(jsonable(data), json_file, indent=2, sort_keys=True, allow_nan=False)
        json_file.write("\n")
    logger.debug("Wrote %s", path)


def write_text(text: str, path: PathLike) -> None:
    with _open(path) as text_file:
        text_file.write(text)


def write_rows(header: Sequence[str], rows: Iterable[Sequence[Any]], path: PathLike) -> None:
    with _open(path) as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(value) for value in row])
    logger.debug("Wrote %s", path)


def trace_rows(trace: FlowTrace) -> Iterable[list[Any]]:
    for snap in trace.snapshots:
        geometry = snap.geometry
        H, A_sq = geometry.H, geometry.A_norm_sq
        for node in range(len(geometry)):
            point = (None, None, None) if snap.points is None else snap.points[node]
            yield [
                snap.t,
                node,
                None if snap.sigma is None else snap.sigma[node],
                *point,
                snap.scalar_state,
                geometry.kappa[node],
                geometry.lam_a[node],
                geometry.lam_b[node],
                H[node],
                A_sq[node],
                None if geometry.grad_A_sq is None else geometry.grad_A_sq[node],
                None if geometry.hess_A_sq is None else geometry.hess_A_sq[node],
                None if geometry.grad_H_sq is None else geometry.grad_H_sq[node],
                snap.regrid_count,
                snap.probe,
            ]


def write_trace_csv(trace: FlowTrace, path: PathLike) -> None:
    write_rows(TRACE_COLUMNS, trace_rows(trace), path)


def write_rescaled_csv(record: BlowupRecord, path: PathLike) -> None:
    rows = record.csv_rows()
    width = max((len(row) for row in rows), default=len(RESCALED_COLUMNS))
    header = list(RESCALED_COLUMNS) + [
        f"lam_{index}" for index in range(1, width - len(RESCALED_COLUMNS) + 1)
    ]
    write_rows(header, rows, path)
