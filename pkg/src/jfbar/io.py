"""CSV and JSON readers and writers.

Long format, one row per event::

    subject_id,event_time,event_type,<covariates...>

``event_type`` is ``recurrent``, ``terminal`` or ``censor``; each subject
has its recurrent rows plus exactly one ``terminal`` or ``censor`` row whose
time is the follow-up time. Covariates repeat on every row of a subject.

Wide format, one row per subject::

    subject_id,followup,terminal,recurrent_times,<covariates...>

with ``recurrent_times`` a ``;``-separated list (possibly empty).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .likelihood import Dataset, SubjectRecord

LONG_REQUIRED = ("subject_id", "event_time", "event_type")
WIDE_REQUIRED = ("subject_id", "followup", "terminal", "recurrent_times")
EVENT_TYPES = ("recurrent", "terminal", "censor")


def fmt(x) -> str:
    """Shortest round-trip representation; identical across runs."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


@dataclass
class Table:
    """Covariate matrix with column names and per-subject outcomes."""

    subject_ids: list
    followup: np.ndarray
    terminal: np.ndarray
    recurrent: list
    covariates: np.ndarray
    names: list


def _float(value: str, where: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: {value!r} is not a number") from None
    if not math.isfinite(v):
        raise ValidationError(f"{where}: value must be finite")
    return v


def _read_rows(path) -> tuple[list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    return header, rows


def read_table(path, fmt_hint: Optional[str] = None) -> Table:
    header, rows = _read_rows(path)
    kind = fmt_hint or ("long" if "event_type" in header else "wide" if "recurrent_times" in header else None)
    if kind == "long":
        return _read_long(header, rows, path)
    if kind == "wide":
        return _read_wide(header, rows, path)
    missing = [c for c in LONG_REQUIRED if c not in header]
    raise ValidationError(f"{path}: unrecognised layout; missing columns {missing}")


def _check_header(header, required, path):
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing required columns {missing}")
    dup = sorted({h for h in header if header.count(h) > 1})
    if dup:
        raise ValidationError(f"{path}: duplicated columns {dup}")


def _read_long(header, rows, path) -> Table:
    _check_header(header, LONG_REQUIRED, path)
    names = [h for h in header if h not in LONG_REQUIRED]
    col = {h: k for k, h in enumerate(header)}
    subjects: dict = {}
    order = []
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        sid = row[col["subject_id"]].strip()
        etype = row[col["event_type"]].strip()
        if etype not in EVENT_TYPES:
            raise ValidationError(f"{path}:{line}: event_type must be one of {EVENT_TYPES}, got {etype!r}")
        t = _float(row[col["event_time"]], f"{path}:{line} event_time")
        z = [_float(row[col[n]], f"{path}:{line} column {n!r}") for n in names]
        if sid not in subjects:
            subjects[sid] = {"rec": [], "end": None, "z": z}
            order.append(sid)
        entry = subjects[sid]
        if entry["z"] != z:
            raise ValidationError(f"{path}:{line}: covariates change within subject {sid!r}")
        if etype == "recurrent":
            entry["rec"].append(t)
        elif entry["end"] is not None:
            raise ValidationError(f"{path}:{line}: subject {sid!r} has more than one terminal/censor row")
        else:
            entry["end"] = (t, int(etype == "terminal"))
    for sid in order:
        if subjects[sid]["end"] is None:
            raise ValidationError(f"{path}: subject {sid!r} has no terminal or censor row")
    return Table(
        subject_ids=order,
        followup=np.array([subjects[s]["end"][0] for s in order]),
        terminal=np.array([subjects[s]["end"][1] for s in order]),
        recurrent=[np.sort(np.array(subjects[s]["rec"], dtype=float)) for s in order],
        covariates=np.array([subjects[s]["z"] for s in order], dtype=float).reshape(len(order), len(names)),
        names=names,
    )


def _read_wide(header, rows, path) -> Table:
    _check_header(header, WIDE_REQUIRED, path)
    names = [h for h in header if h not in WIDE_REQUIRED]
    col = {h: k for k, h in enumerate(header)}
    ids, Y, D, rec, Z = [], [], [], [], []
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[col["subject_id"]].strip())
        Y.append(_float(row[col["followup"]], f"{path}:{line} followup"))
        d = row[col["terminal"]].strip()
        if d not in ("0", "1"):
            raise ValidationError(f"{path}:{line}: terminal must be 0 or 1, got {d!r}")
        D.append(int(d))
        times = [s for s in row[col["recurrent_times"]].split(";") if s.strip()]
        rec.append(np.sort(np.array([_float(s, f"{path}:{line} recurrent_times") for s in times], dtype=float)))
        Z.append([_float(row[col[n]], f"{path}:{line} column {n!r}") for n in names])
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicated subject_id values")
    return Table(ids, np.array(Y), np.array(D), rec, np.array(Z, dtype=float).reshape(len(ids), len(names)), names)


def table_to_dataset(table: Table, recurrent_covariates: Optional[Sequence[str]] = None,
                     terminal_covariates: Optional[Sequence[str]] = None, Q: int = 5,
                     covariates: Optional[np.ndarray] = None) -> Dataset:
    """Subjects from a table; both sub-models use every covariate unless told otherwise."""
    Z = table.covariates if covariates is None else covariates
    idx = {n: k for k, n in enumerate(table.names)}
    sel = []
    for which, names in (("recurrent", recurrent_covariates), ("terminal", terminal_covariates)):
        names = list(table.names) if names is None else list(names)
        unknown = [n for n in names if n not in idx]
        if unknown:
            raise ValidationError(f"unknown {which} covariates {unknown}")
        sel.append([idx[n] for n in names])
    subjects = []
    for i in range(len(table.subject_ids)):
        try:
            subjects.append(SubjectRecord(table.recurrent[i], table.followup[i], int(table.terminal[i]), Z[i, sel[0]], Z[i, sel[1]]))
        except ValueError as exc:
            raise ValidationError(f"subject {table.subject_ids[i]!r}: {exc}") from None
    if not subjects:
        raise ValidationError("dataset has no subjects")
    return Dataset.from_subjects(subjects, Q)


def read_dataset(path, Q: int = 5, **kwargs) -> Dataset:
    return table_to_dataset(read_table(path), Q=Q, **kwargs)


def _covariate_names(data: Dataset, names=None) -> tuple[list, bool]:
    pk = data.packed
    shared = pk.Z1.shape == pk.Z2.shape and np.array_equal(pk.Z1, pk.Z2)
    if names is not None:
        return list(names), shared
    if shared:
        return [f"z{j + 1}" for j in range(data.d1)], True
    return [f"rec_z{j + 1}" for j in range(data.d1)] + [f"term_z{j + 1}" for j in range(data.d2)], False


def write_long_csv(data: Dataset, path, names=None) -> list:
    """Write ``data`` in long format; returns the covariate column names.

    When both sub-models share their covariates they are written once.
    """
    names, shared = _covariate_names(data, names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(LONG_REQUIRED) + names)
        for i, s in enumerate(data.subjects):
            z = list(s.z1) if shared else list(s.z1) + list(s.z2)
            zs = [fmt(v) for v in z]
            for t in s.recurrent_times:
                w.writerow([i + 1, fmt(t), "recurrent"] + zs)
            w.writerow([i + 1, fmt(s.followup), "terminal" if s.terminal else "censor"] + zs)
    return names


def write_wide_csv(data: Dataset, path, names=None) -> list:
    names, shared = _covariate_names(data, names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(WIDE_REQUIRED) + names)
        for i, s in enumerate(data.subjects):
            z = list(s.z1) if shared else list(s.z1) + list(s.z2)
            w.writerow([i + 1, fmt(s.followup), s.terminal, ";".join(fmt(t) for t in s.recurrent_times)] + [fmt(v) for v in z])
    return names


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path) -> tuple[list, list]:
    return _read_rows(path)


def standardize(Z: np.ndarray, names: Sequence[str]):
    """Centre and scale columns with more than two distinct values.

    Two-valued columns are treated as binary and left alone. Constant
    columns cannot be standardised and raise :class:`ValidationError`.
    Returns ``(Z_std, means, sds)`` with ``mean = 0``, ``sd = 1`` for the
    untouched columns.
    """
    Z = np.asarray(Z, dtype=float)
    means = np.zeros(Z.shape[1])
    sds = np.ones(Z.shape[1])
    constant = []
    for j in range(Z.shape[1]):
        levels = np.unique(Z[:, j])
        if levels.size < 2:
            constant.append(names[j])
        elif levels.size > 2:
            means[j] = Z[:, j].mean()
            sds[j] = Z[:, j].std(ddof=1)
    if constant:
        raise ValidationError(f"constant covariate columns cannot be used: {constant}")
    return (Z - means) / sds, means, sds
