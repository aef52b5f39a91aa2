from __future__ import annotations

import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from errors import UsageError

# ===============================
# Safe conversion utilities
# ===============================


def safe_str(value: Any, default: str = "") -> str:
    if value is None:
        return default
    return str(value)


def format_float(value: Any, digits: int = 8) -> str:
    """Deterministic short text for metrics files; ints stay ints"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return f"{float(value):.{digits}g}"


# ===============================
# Report and export utilities
# ===============================


def create_csv_content(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Create CSV content (UTF-8) from headers and rows.

    Floats are written with format_float; commas inside values are quoted.
    """

    def csv_escape(value: Any) -> str:
        s = format_float(value) if isinstance(value, (float, np.floating)) else safe_str(value)
        if any(ch in s for ch in [",", "\n", '"']):
            return '"' + s.replace('"', '""') + '"'
        return s

    lines = []
    lines.append(",".join(csv_escape(h) for h in headers))
    for row in rows:
        lines.append(",".join(csv_escape(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv_rows(path: str) -> List[Dict[str, str]]:
    """Parse a CSV written by create_csv_content (no quoting needed for numeric files)"""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        return []
    headers = lines[0].split(",")
    return [dict(zip(headers, line.split(","))) for line in lines[1:]]


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Aligned plain-text table"""
    cells = [[safe_str(h) for h in headers]] + [
        [format_float(v, 6) if isinstance(v, (float, np.floating)) else safe_str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    rendered = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    rendered.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(rendered)


def write_text_atomic(path: str, content: str) -> None:
    write_bytes_atomic(path, content.encode("utf-8"))


def write_bytes_atomic(path: str, payload: bytes) -> None:
    """Write via a temp file in the same directory and rename over the target"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def create_progress_bar(current: int, total: int, width: int = 10) -> str:
    """Text bar for success counts, e.g. [███░░] 60.0%"""
    fraction = min(max(current, 0) / total, 1.0) if total > 0 else 0.0
    filled = int(round(width * fraction))
    return f"[{'█' * filled}{'░' * (width - filled)}] {fraction * 100:.1f}%"


def require_file(path: Optional[str], what: str) -> str:
    """Return path if it exists, else raise a usage error naming what is missing"""
    if not path or not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path
