"""CSV, JSON, snapshot and manifest writers.

CSV files are UTF-8 with a header row and ``\\n`` line ends; floats are
written with ``repr`` so that :func:`read_csv` recovers them bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import numpy as np

from .errors import IoError


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_csv(path, fields, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for r in rows:
                w.writerow([_cell(r[k]) for k in fields])
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err
    return path


def read_csv(path):
    """Return ``(fields, rows)`` with numeric cells converted back to numbers."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rd = csv.reader(fh)
            fields = next(rd)
            rows = [{k: _parse(v) for k, v in zip(fields, line)} for line in rd]
    except (OSError, StopIteration) as err:
        raise IoError(f"cannot read {path}: {err}") from err
    return tuple(fields), rows


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return o


def write_json(path, obj):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_clean(json.loads(json.dumps(obj, default=_jsonable))), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err
    return path


def plot_script(path, csv_name, x, ys, logscale=True, title=""):
    """Gnuplot script plotting columns ``ys`` against ``x`` from ``csv_name``."""
    fields, _ = read_csv(os.path.join(os.path.dirname(path), csv_name))
    col = {name: i + 1 for i, name in enumerate(fields)}
    lines = ["set datafile separator ','", "set key autotitle columnhead", f"set title '{title}'",
             f"set xlabel '{x}'"]
    if logscale:
        lines.append("set logscale xy")
    plots = [f"'{csv_name}' using {col[x]}:{col[y]} with linespoints title '{y}'" for y in ys if y in col]
    lines.append("plot " + ", \\\n     ".join(plots))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(directory, names):
    entries = {n: sha256_file(os.path.join(directory, n)) for n in sorted(names)}
    write_json(os.path.join(directory, "manifest.json"), {"files": entries})
    return entries


def _ensure_dir(directory):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as err:
        raise IoError(f"cannot create {directory}: {err}") from err


def write_outputs(report, directory, plot=None):
    """Write a study report: CSV (if it has rows), JSON summary, plot script and manifest.

    ``plot`` is ``(x, [y, ...])``; by default the first field against the
    others. Returns the manifest mapping file names to sha256 digests.
    """
    _ensure_dir(directory)
    names = []
    if report.rows:
        fields, rows = report.table()
        csv_name = f"{report.study}.csv"
        write_csv(os.path.join(directory, csv_name), fields, rows)
        names.append(csv_name)
        x, ys = plot if plot is not None else (fields[0], list(report.fields[1:]))
        gp = f"{report.study}.gp"
        plot_script(os.path.join(directory, gp), csv_name, x, ys, title=report.study)
        names.append(gp)
    write_json(os.path.join(directory, "summary.json"), report.summary())
    names.append("summary.json")
    return write_manifest(directory, names)


def write_snapshot(directory, name, array, meta=None):
    """Raw little-endian float64 array plus a JSON sidecar with shape and metadata."""
    _ensure_dir(directory)
    arr = np.ascontiguousarray(array, dtype="<f8")
    path = os.path.join(directory, name + ".bin")
    try:
        arr.tofile(path)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err
    write_json(os.path.join(directory, name + ".json"),
               {"shape": list(arr.shape), "dtype": "float64", "byteorder": "little",
                "min": float(arr.min()) if arr.size else 0.0, "max": float(arr.max()) if arr.size else 0.0,
                **(meta or {})})
    return [name + ".bin", name + ".json"]


def read_snapshot(directory, name):
    try:
        with open(os.path.join(directory, name + ".json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        arr = np.fromfile(os.path.join(directory, name + ".bin"), dtype="<f8").reshape(meta["shape"])
    except (OSError, ValueError, KeyError) as err:
        raise IoError(f"cannot read snapshot {name}: {err}") from err
    return arr, meta
