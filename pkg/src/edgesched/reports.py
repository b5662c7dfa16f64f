"""CSV writers for run traces and experiment summaries.

Floats are written with repr (shortest round-trip form) so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import os

SAC_COLUMNS = (
    "episode", "mean_reward", "total_time", "total_energy",
    "image_download_time", "on_time_ratio", "beta", "buffer_size",
)

BC_COLUMNS = ("epoch", "train_loss", "train_agreement", "holdout_agreement")

SIM_COLUMNS = (
    "episode", "mean_reward", "total_time", "total_energy",
    "image_download_time", "on_time_ratio",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, columns: tuple[str, ...], rows: list) -> None:
    """Write dataclass-like rows (attribute per column) to a CSV file."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        if isinstance(row, dict):
            lines.append(",".join(_fmt(row[c]) for c in columns))
        else:
            lines.append(",".join(_fmt(getattr(row, c)) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        out.append(dict(zip(header, line.split(","))))
    return out
