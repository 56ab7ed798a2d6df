"""CSV tables and JSON checkpoints."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..policy import Normalizer, PolicyNet, ValueNet
from .metrics import EpisodeLog

CSV_SCHEMA = 1
CHECKPOINT_FORMAT = "vislide-checkpoint"
CHECKPOINT_VERSION = 1


class CorruptCheckpoint(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class CsvSchemaError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, str):
        if any(c in x for c in ',"\n'):
            raise ValueError(f"CSV field {x!r} needs quoting")
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.10g" % float(x)


def write_csv(path, columns, rows):
    """Comma-separated table; a ``schema_version`` column leads every row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["schema_version", *columns]
    lines = [",".join(header)]
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} fields, header {len(columns)}")
        lines.append(",".join([str(CSV_SCHEMA), *(_fmt(v) for v in r)]))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def read_csv(path):
    """Return (columns, rows as lists of str), checking the schema version."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise CsvSchemaError(f"{path}: empty file")
    header = text[0].split(",")
    if header[0] != "schema_version":
        raise CsvSchemaError(f"{path}: missing schema_version column")
    rows = []
    for ln in text[1:]:
        if not ln:
            continue
        f = ln.split(",")
        if int(f[0]) != CSV_SCHEMA:
            raise CsvSchemaError(f"{path}: schema {f[0]} != {CSV_SCHEMA}")
        rows.append(f[1:])
    return header[1:], rows


def read_numeric_csv(path):
    cols, rows = read_csv(path)
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(cols))
    return cols, data


def write_episode_log(path, log: EpisodeLog):
    return write_csv(path, log.columns, log.data)


def read_episode_log(path) -> EpisodeLog:
    cols, data = read_numeric_csv(path)
    fault = int(data[:, cols.index("fault")].max()) if len(data) else 0
    return EpisodeLog(cols, data, fault)


# -- checkpoints -------------------------------------------------------------------


def _net_doc(net):
    if net is None:
        return None
    return {"dims": list(net.dims), "leaky_slope": net.leaky_slope, "params": net.params.tolist()}


def save_checkpoint(path, actor: PolicyNet, critic: ValueNet | None = None, normalizer: Normalizer | None = None,
                    meta: dict | None = None):
    """One JSON document: format, version, dims, row-major parameters, normalizer stats.

    Parameters are flat vectors holding each layer's weight matrix (out x in,
    row-major) followed by its bias; the actor's log std closes its vector.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "actor": _net_doc(actor),
        "log_std": actor.log_std.tolist(),
        "critic": _net_doc(critic),
        "normalizer": None if normalizer is None else normalizer.to_dict(),
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Return (actor, critic or None, normalizer or None, meta)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path}: not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    try:
        a = doc["actor"]
        actor = PolicyNet(a["dims"], a["leaky_slope"], params=np.asarray(a["params"], float))
        if not np.array_equal(actor.log_std, np.asarray(doc["log_std"], float)):
            raise CorruptCheckpoint(f"{path}: log_std disagrees with the actor parameters")
        critic = None
        if doc.get("critic"):
            c = doc["critic"]
            critic = ValueNet(c["dims"], c["leaky_slope"], params=np.asarray(c["params"], float))
        norm = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptCheckpoint):
            raise
        raise CorruptCheckpoint(f"{path}: malformed checkpoint ({exc})") from exc
    return actor, critic, norm, doc.get("meta", {})
