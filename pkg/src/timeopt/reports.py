"""Delimited output and figure rendering for the CLI.

Every file starts with comment lines carrying the config hash and tool
version so results stay attributable; CSV bodies are written with repr floats
for bit-stable diffs. Figures are rendered headlessly next to the CSVs.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def meta_lines(config_sha: str, version: str, command: str, seed: int) -> list[str]:
    return [
        f"config_sha256={config_sha}",
        f"tool_version={version}",
        f"command={command}",
        f"seed={seed}",
    ]


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_json(path, payload: Mapping, meta: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body["_meta"] = list(meta)
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if hasattr(obj, "item"):  # numpy scalars
        return _jsonable(obj.item())
    return obj


def _save(fig, path, meta: Sequence[str] | None) -> Path:
    # PNG text chunks carry the same provenance the CSV comment headers do
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Description": "; ".join(meta)} if meta else None
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=metadata)
    plt.close(fig)
    return path


def render_curves(path, x, series: Sequence[tuple[str, Sequence[float]]],
                  xlabel: str, ylabel: str, title: str,
                  hline: float | None = None, meta: Sequence[str] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for label, y in series:
        ax.plot(x, y, label=label, linewidth=1.4)
    if hline is not None:
        ax.axhline(hline, color="0.4", linestyle="--", linewidth=0.9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False, fontsize=9)
    return _save(fig, path, meta)


def render_candidate_times(path, labels: Sequence[str], times: Sequence[float],
                           horizon: float, title: str,
                           meta: Sequence[str] | None = None) -> Path:
    """Hit time per candidate; censored candidates are drawn at the horizon."""
    xs = range(len(labels))
    shown = [t if math.isfinite(t) else horizon for t in times]
    hit = [math.isfinite(t) for t in times]
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    ax.bar(xs, shown, color=["#2d7dd2" if h else "#c44536" for h in hit])
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("hit time (censored drawn at horizon)")
    ax.set_title(title)
    return _save(fig, path, meta)


def render_scatter(path, x, y, xlabel: str, ylabel: str, title: str,
                   hline: float | None = None, meta: Sequence[str] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.scatter(x, y, s=14, color="#2d7dd2")
    if hline is not None:
        ax.axhline(hline, color="0.4", linestyle="--", linewidth=0.9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _save(fig, path, meta)
