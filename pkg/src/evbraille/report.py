"""Text tables, JSON reports and SVG figures for character and word evaluations.

Every writer is deterministic: JSON keys are sorted, floats keep their repr,
and SVGs are rendered without timestamps and with a fixed id salt, so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SVG_SALT = "evbraille"


def _plain(obj):
    """numpy scalars and arrays to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def format_table(headers: Sequence[str], rows: Sequence[Sequence], title: str | None = None) -> str:
    """Aligned plain-text table; the first column is left-aligned, the rest right-aligned."""
    cells = [[str(h) for h in headers]] + [[_cell(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]

    def line(r):
        parts = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    out = ([title] if title else []) + [line(cells[0]), rule] + [line(r) for r in cells[1:]]
    return "\n".join(out) + "\n"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4f}"
    return str(v)


def char_table(rows: Sequence[Mapping]) -> str:
    """Configuration / accuracy (%) / macro-F1 / loss, one row per trained configuration."""
    body = [(r["config"], f"{100 * r['accuracy']:.2f}", r["macro_f1"], r["loss"]) for r in rows]
    return format_table(["Configuration", "Accuracy (%)", "F1-score", "Loss"], body)


def word_table(rows: Sequence[tuple[str, object]]) -> str:
    """Speed label / words per line / letters per word / correct words / correct letters."""
    body = [
        (label, f"{m.words_per_line:.3f}", f"{m.letters_per_word:.3f}", f"{m.correct_words:.3f}", f"{m.correct_letters:.3f}")
        for label, m in rows
    ]
    return format_table(["Speed", "Words/line", "Letters/word", "Correct words", "Correct letters"], body)


def depth_table(depths: Sequence[float], series: Mapping[str, Sequence[float]]) -> str:
    names = list(series)
    body = [[f"{d:g}"] + [f"{100 * series[n][i]:.2f}" for n in names] for i, d in enumerate(depths)]
    return format_table(["Depth (mm)"] + [f"{n} (%)" for n in names], body)


def write_confusion_csv(conf: np.ndarray, labels: Sequence[str], path: str | Path) -> None:
    """Rows are true labels, columns predictions."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(labels))
        for lab, row in zip(labels, np.asarray(conf)):
            w.writerow([lab] + [int(v) for v in row])


def _save_svg(fig, path) -> None:
    import matplotlib

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def confusion_svg(conf: np.ndarray, labels: Sequence[str], path: str | Path, title: str = "") -> None:
    """Row-normalised confusion heatmap with counts annotated where non-zero."""
    from matplotlib.figure import Figure

    conf = np.asarray(conf, dtype=np.float64)
    rows = conf.sum(axis=1, keepdims=True)
    frac = np.divide(conf, rows, out=np.zeros_like(conf), where=rows > 0)
    n = len(labels)
    fig = Figure(figsize=(0.28 * n + 2.0, 0.28 * n + 1.6))
    ax = fig.add_subplot()
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), labels, fontsize=7)
    ax.set_yticks(range(n), labels, fontsize=7)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    if title:
        ax.set_title(title)
    for i in range(n):
        for j in range(n):
            if conf[i, j]:
                ax.text(j, i, int(conf[i, j]), ha="center", va="center", fontsize=5,
                        color="white" if frac[i, j] > 0.5 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="Row fraction")
    fig.tight_layout()
    _save_svg(fig, path)


def depth_plot_svg(depths: Sequence[float], series: Mapping[str, Sequence[float]], path: str | Path, title: str = "") -> None:
    """Accuracy (%) against indentation depth, one line per configuration."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(4.5, 3.2))
    ax = fig.add_subplot()
    for name, acc in series.items():
        ax.plot(list(depths), [100 * a for a in acc], marker="o", label=name)
    ax.set_xlabel("Indentation depth (mm)")
    ax.set_ylabel("Accuracy (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save_svg(fig, path)
