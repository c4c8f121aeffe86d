"""Run directories and versioned CSV files."""
from __future__ import annotations

import csv
import io
import math
import time
from pathlib import Path

CSV_VERSION = 1
ABSENT = "NA"


def make_run_dir(root, verb, config_hash, clock=time.localtime):
    """Fresh ``root/<verb>-<timestamp>-<hash8>`` directory; never reuses an existing one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S", clock())
    base = f"{verb}-{stamp}-{config_hash[:8]}"
    path = root / base
    suffix = 1
    while path.exists():
        path = root / f"{base}-{suffix}"
        suffix += 1
    path.mkdir()
    return path


def _fmt(v):
    if v is None:
        return ABSENT
    if isinstance(v, float):
        if math.isnan(v):
            return ABSENT
        return repr(round(v, 10))
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return str(v)


def write_csv(path, kind, rows, columns=None):
    """Write dict rows under a ``# fedgl-<kind> v<N>`` header comment."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    buf.write(f"# fedgl-{kind} v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """(kind, version, rows as dicts of strings)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# fedgl-"):
        raise ValueError(f"{path}: missing fedgl CSV header comment")
    tag = lines[0][len("# fedgl-"):].rsplit(" v", 1)
    kind, version = tag[0], int(tag[1])
    reader = csv.DictReader(lines[1:])
    return kind, version, list(reader)


def parse_value(text):
    if text == ABSENT or text == "":
        return None
    try:
        return float(text)
    except ValueError:
        return text
