"""Line-oriented report records and figures written next to them."""
from __future__ import annotations

import json
import math
import platform
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402


def provenance(seed: int, config_digest: str = "") -> str:
    return (f"labelprior {__version__}; python {platform.python_version()}; "
            f"numpy {np.__version__}; seed {seed}; config {config_digest or '-'}")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_cell(x) for x in v)
    return str(v)


def write_tsv(rows: Sequence[Mapping], path, columns: Optional[List[str]] = None) -> None:
    """Tab-separated table with a header; an empty ``rows`` writes the header only."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join(_cell(r.get(c, "")) for c in columns) + "\n")


def read_tsv(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        return [dict(zip(header, line.rstrip("\n").split("\t"))) for line in fh]


def write_jsonl(records: Iterable[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def format_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Fixed-width text table for the terminal."""
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else _cell(v)
    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the output byte-stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_objectives(curves: Mapping[str, Sequence[float]], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ys in curves.items():
        ax.plot(np.arange(1, len(ys) + 1), ys, marker="o", ms=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training objective")
    if curves:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_per_label(errors: Sequence[float], names: Sequence[str], path,
                   title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.3 * len(errors) + 2), 4))
    ax.bar(np.arange(len(errors)), errors)
    ax.set_xticks(np.arange(len(errors)))
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_ylabel("error rate")
    ax.set_title(title)
    return _save(fig, path)


def plot_bench(rows: Sequence[Mapping], path) -> Path:
    """Per-decoder distribution of the rounded / exact objective ratio."""
    fig, ax = plt.subplots(figsize=(6, 4))
    decoders = sorted({r["decoder"] for r in rows})
    data = [[r["rounded_ratio"] for r in rows if r["decoder"] == dname
             and r["rounded_ratio"] is not None and math.isfinite(r["rounded_ratio"])]
            for dname in decoders]
    if decoders and any(data):
        ax.boxplot([d or [np.nan] for d in data])
        ax.set_xticks(np.arange(1, len(decoders) + 1))
        ax.set_xticklabels(decoders)
    ax.set_ylabel("rounded / exact objective")
    return _save(fig, path)
