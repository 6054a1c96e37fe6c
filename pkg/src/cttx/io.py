"""Serialization of paths and estimates (JSON and CSV), with metadata headers."""

import csv
import hashlib
import io
import json
import math

import numpy as np

from .exceptions import ContractError
from .paths import ProcessPair, SamplePath


def fmt(value):
    """17 significant digits, so values round-trip exactly."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_safe(obj):
    # JSON has no inf/nan; encode them as strings.
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return fmt(obj)
    return obj


def dumps(obj):
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(canon.encode()).hexdigest()


def csv_text(columns, rows, metadata=None):
    """CSV with optional ``# key: value`` header lines."""
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_csv(text):
    """``(columns, rows, metadata)`` from :func:`csv_text` output."""
    meta = {}
    lines = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        elif line:
            lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return columns, [row for row in reader], meta


# -- paths -------------------------------------------------------------------

def path_to_json(path):
    return dumps(path.to_dict())


def path_from_json(text):
    return SamplePath.from_dict(json.loads(text))


def paths_to_csv(paths, metadata=None):
    """Event-list CSV: one row for the initial state plus one per jump.

    A single path uses ``time,state``; several paths add a leading ``path``
    column.
    """
    if isinstance(paths, SamplePath):
        paths = [paths]
    paths = list(paths)
    many = len(paths) > 1
    rows = []
    for j, p in enumerate(paths):
        events = [(p.t_start, int(p.states[0]))]
        events += [(float(t), int(s)) for t, s in zip(p.jump_times, p.states[1:])]
        for t, s in events:
            rows.append((j, t, s) if many else (t, s))
    meta = dict(metadata or {})
    meta.setdefault("windows", ";".join(f"{fmt(p.t_start)},{fmt(p.t_end)}" for p in paths))
    return csv_text(["path", "time", "state"] if many else ["time", "state"], rows, meta)


def paths_from_csv(text):
    columns, rows, meta = read_csv(text)
    windows = [tuple(float(v) for v in w.split(",")) for w in meta["windows"].split(";")]
    many = columns[0] == "path"
    grouped = [[] for _ in windows]
    for row in rows:
        j = int(row[0]) if many else 0
        t, s = float(row[-2]), int(row[-1])
        grouped[j].append((t, s))
    out = []
    for (t_start, t_end), events in zip(windows, grouped):
        if not events:
            raise ContractError("path without an initial-state row")
        out.append(SamplePath(t_start, t_end, [t for t, _ in events[1:]],
                              [s for _, s in events]))
    return out


def pairs_to_json(pairs, metadata=None):
    body = {"pairs": [p.to_dict() for p in pairs]}
    if metadata:
        body["metadata"] = metadata
    return dumps(body)


def pairs_from_json(text):
    return [ProcessPair.from_dict(d) for d in json.loads(text)["pairs"]]


# -- estimates ---------------------------------------------------------------

def per_step_csv(estimate, metadata=None):
    rows = [(i, t, v) for (i, v), t in zip(estimate.per_step, estimate.node_times)]
    return csv_text(["i", "node_time", "te_nats"], rows, metadata)


def estimate_json(estimate, metadata=None):
    body = estimate.to_dict()
    if metadata:
        body["metadata"] = {**body.get("metadata", {}), **metadata}
    return dumps(body)
