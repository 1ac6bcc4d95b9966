"""Reading and writing datasets (long CSV) and fitted models (JSON).

Dataset files have a header row and one row per (series, time step)::

    series_id,t,channel_1,...,channel_dy[,label]

``t`` runs from 1 to T without gaps inside every series. Series keep the
order in which their ids first appear.

Model files are JSON. Python's ``json`` writes floats with ``repr``, which
is the shortest string that parses back to the same double, so a save/load
round trip is exact.
"""

import csv
import json
import math
import re

import numpy as np

from .data import TimeSeriesDataset
from .exceptions import RaggedSeries, SchemaError, VersionMismatch
from .mixture_em import MixtureParams

MODEL_FORMAT = "mlgssm-model"
MODEL_VERSION = 1

_CHANNEL = re.compile(r"^channel_(\d+)$")


def _parse_label(values):
    try:
        return np.array([int(v) for v in values])
    except ValueError:
        return np.array(values, dtype=object)


def _read_header(header):
    if header is None:
        raise SchemaError("file is empty; a header row is required", row=1)
    header = [h.strip() for h in header]
    if header[:2] != ["series_id", "t"]:
        raise SchemaError("header must start with series_id,t", row=1)
    rest = header[2:]
    has_label = bool(rest) and rest[-1] == "label"
    channels = rest[:-1] if has_label else rest
    if not channels:
        raise SchemaError("at least one channel_<k> column is required", row=1)
    for k, name in enumerate(channels, start=1):
        m = _CHANNEL.match(name)
        if not m or int(m.group(1)) != k:
            raise SchemaError(f"expected column channel_{k}, found {name!r}", row=1)
    return len(channels), has_label


def load_dataset(path):
    """Read a long-format CSV into a :class:`TimeSeriesDataset`.

    Raises
    ------
    SchemaError
        On a malformed header, a bad cell, a duplicate or missing time
        step, or inconsistent labels; the message carries the file row.
    RaggedSeries
        If the series do not all have the same length.
    """
    series = {}
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        dy, has_label = _read_header(next(reader, None))
        width = 2 + dy + has_label
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise SchemaError(f"expected {width} fields, found {len(row)}", row=row_no)
            sid = row[0].strip()
            if not sid:
                raise SchemaError("empty series_id", row=row_no)
            try:
                t = int(row[1])
            except ValueError:
                raise SchemaError(f"t must be an integer, found {row[1]!r}", row=row_no) from None
            try:
                vals = [float(c) for c in row[2:2 + dy]]
            except ValueError:
                raise SchemaError("channel values must be numbers", row=row_no) from None
            if not all(math.isfinite(v) for v in vals):
                raise SchemaError("channel values must be finite", row=row_no)
            steps = series.setdefault(sid, {})
            if t in steps:
                raise SchemaError(f"duplicate t={t} for series {sid!r}", row=row_no)
            steps[t] = (vals, row_no)
            if has_label:
                lab = row[-1].strip()
                if labels.setdefault(sid, lab) != lab:
                    raise SchemaError(f"series {sid!r} has more than one label", row=row_no)
    if not series:
        raise SchemaError("no data rows", row=2)
    values = []
    for sid, steps in series.items():
        T = len(steps)
        for t in range(1, T + 1):
            if t not in steps:
                last_row = max(r for _, r in steps.values())
                raise SchemaError(f"series {sid!r} is missing t={t} (t must run 1..T)",
                                  row=last_row)
        values.append([steps[t][0] for t in range(1, T + 1)])
    lengths = {len(v) for v in values}
    if len(lengths) != 1:
        raise RaggedSeries(f"series lengths differ: {sorted(lengths)}")
    ids = list(series)
    lab = _parse_label([labels[s] for s in ids]) if has_label else None
    return TimeSeriesDataset(np.asarray(values, dtype=float), ids=ids, labels=lab)


def save_dataset(path, dataset, labels=None):
    """Write ``dataset`` (or a raw ``(N, T, d_y)`` array) as long CSV."""
    if not isinstance(dataset, TimeSeriesDataset):
        dataset = TimeSeriesDataset(dataset, labels=labels)
    labels = dataset.labels if labels is None else np.asarray(labels)
    N, T, dy = dataset.values.shape
    header = ["series_id", "t"] + [f"channel_{k}" for k in range(1, dy + 1)]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, sid in enumerate(dataset.ids):
            for t in range(T):
                row = [sid, t + 1] + [repr(float(v)) for v in dataset.values[i, t]]
                if labels is not None:
                    row.append(labels[i])
                w.writerow(row)


def save_model(path, params, metadata=None):
    """Write mixture parameters and fit metadata as JSON."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_components": params.n_components,
        "dx": params.dx,
        "dy": params.dy,
        "params": params.to_dict(),
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_model(path):
    """Read a model file; returns ``(MixtureParams, metadata)``.

    Raises
    ------
    VersionMismatch
        If the file was written by an unknown format version.
    SchemaError
        If the file is not a well-formed model document.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"not a JSON model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise SchemaError("missing or wrong 'format' field")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model format version {doc.get('version')!r} is not supported "
                              f"(expected {MODEL_VERSION})")
    try:
        params = MixtureParams.from_dict(doc["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid model parameters: {exc}") from None
    if (params.n_components, params.dx, params.dy) != (doc.get("n_components"), doc.get("dx"),
                                                       doc.get("dy")):
        raise SchemaError("declared sizes do not match the stored parameters")
    return params, doc.get("metadata", {})
