"""CSV tables behind error-distribution plots."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

CATEGORIES = ("A", "B", "C", "D")


def quartile_categories(errors: np.ndarray) -> np.ndarray:
    """Category index 0..3 by rank, so each holds a quarter of the samples (±1)."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise DataError("no errors to categorize")
    ranks = np.empty(len(errors), dtype=np.int64)
    ranks[np.argsort(errors, kind="stable")] = np.arange(len(errors))
    return (4 * ranks) // len(errors)


def histogram(values: np.ndarray, bins: int = 20):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("no values to histogram")
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


def representatives(errors: np.ndarray, cats: np.ndarray) -> dict[int, int]:
    """Per category, the sample whose error is nearest the category mean."""
    out = {}
    for c in range(4):
        idx = np.flatnonzero(cats == c)
        if len(idx):
            mean = errors[idx].mean()
            out[c] = int(idx[np.argmin(np.abs(errors[idx] - mean))])
    return out


def _write(path: Path, header: str, rows, fmt) -> None:
    lines = [header] + [",".join(f % v for f, v in zip(fmt, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def emit_plot_data(out_dir, errors, ids=None, pred_curves=None, truth_curves=None, bins: int = 20,
                   prefix: str = "error") -> dict:
    """Write histogram, per-sample category and representative curve pairs.

    ``pred_curves``/``truth_curves`` are destandardized (n, 3, N) arrays; when
    given, one ``<prefix>_example_<cat>.csv`` per category holds predicted
    and true q, v, ic side by side.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise DataError("no residuals to summarize")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = np.asarray(ids) if ids is not None else np.array([str(i) for i in range(len(errors))])
    counts, edges = histogram(errors, bins)
    _write(out / f"{prefix}_histogram.csv", "bin_lo,bin_hi,count",
           zip(edges[:-1], edges[1:], counts), ("%.10g", "%.10g", "%d"))
    cats = quartile_categories(errors)
    _write(out / f"{prefix}_categories.csv", "id,error,category",
           zip(ids, errors, [CATEGORIES[c] for c in cats]), ("%s", "%.10g", "%s"))
    reps = representatives(errors, cats)
    summary = {"bins": int(bins), "categories": {}}
    for c, i in reps.items():
        members = errors[cats == c]
        summary["categories"][CATEGORIES[c]] = {
            "n": int(len(members)), "lo": float(members.min()), "hi": float(members.max()),
            "mean": float(members.mean()), "example": str(ids[i]), "example_error": float(errors[i])}
        if pred_curves is not None and truth_curves is not None:
            p, t = pred_curves[i], truth_curves[i]
            _write(out / f"{prefix}_example_{CATEGORIES[c]}.csv",
                   "q_pred,v_pred,ic_pred,q_true,v_true,ic_true",
                   zip(p[0], p[1], p[2], t[0], t[1], t[2]), ("%.10g",) * 6)
    return summary
