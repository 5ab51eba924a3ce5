"""Classification metrics, confidence separation, and the run report file set."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import UsageError

N_HIST_BINS = 20
REPORT_FILES = ("metrics.json", "confusion.csv", "similarity.csv", "importance.csv",
                "clusters.csv", "reduction.svg", "confidence_hist.svg")


class EmptyClassWarning(UserWarning):
    """A class had no true samples and was left out of balanced accuracy."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true class

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 0.0)

    @property
    def empty_classes(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(np.asarray(self.counts).sum(axis=1) == 0)]


def confusion(preds, labels, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape:
        raise UsageError(f"preds and labels differ in length: {preds.shape} vs {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise UsageError("labels out of range")
    if preds.size and (preds.min() < 0 or preds.max() >= n_classes):
        raise UsageError("predictions out of range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def balanced_accuracy(cm) -> float:
    """Mean per-class recall over classes that have samples.

    Accepts a ``ConfusionMatrix`` or a raw (possibly already row-normalized) matrix.
    Classes with no true samples are skipped with an ``EmptyClassWarning``.
    """
    m = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm, dtype=float)
    m = np.asarray(m, dtype=float)
    totals = m.sum(axis=1)
    present = totals > 0
    if not present.all():
        warnings.warn(f"classes {np.flatnonzero(~present).tolist()} have no samples",
                      EmptyClassWarning, stacklevel=2)
    if not present.any():
        return float("nan")
    recalls = np.diag(m)[present] / totals[present]
    return float(recalls.mean())


def balanced_accuracy_score(preds, labels, n_classes: int) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyClassWarning)
        return balanced_accuracy(confusion(preds, labels, n_classes))


@dataclass
class ConfidenceRecords:
    """Columnar per-sample outcomes: prediction, max-softmax confidence, correctness, cluster."""

    predicted: np.ndarray
    confidence: np.ndarray
    correct: np.ndarray
    labels: np.ndarray
    cluster: np.ndarray
    n_classes: int

    @classmethod
    def from_probs(cls, probs, labels, cluster=None) -> "ConfidenceRecords":
        probs = np.asarray(probs, dtype=float)
        labels = np.asarray(labels, dtype=int)
        pred = probs.argmax(axis=1)
        cl = np.zeros(len(labels), dtype=int) if cluster is None else np.asarray(cluster, dtype=int)
        return cls(pred, probs.max(axis=1), pred == labels, labels, cl, probs.shape[1])

    def __len__(self):
        return len(self.labels)


def auroc(scores_pos, scores_neg) -> float:
    """Probability a positive outscores a negative, ties counted half (Mann-Whitney)."""
    pos = np.asarray(scores_pos, dtype=float)
    neg = np.asarray(scores_neg, dtype=float)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def confidence_separation(records: ConfidenceRecords) -> dict:
    lo = 1.0 / records.n_classes
    edges = np.linspace(lo, 1.0, N_HIST_BINS + 1)
    conf = np.clip(records.confidence, lo, 1.0)
    hist_c, _ = np.histogram(conf[records.correct], bins=edges)
    hist_i, _ = np.histogram(conf[~records.correct], bins=edges)
    out = {"bin_edges": edges, "hist_correct": hist_c, "hist_incorrect": hist_i,
           "n_correct": int(records.correct.sum()), "n_incorrect": int((~records.correct).sum())}
    if out["n_correct"] and out["n_incorrect"]:
        out["auroc"] = auroc(records.confidence[records.correct],
                             records.confidence[~records.correct])
        out["auroc_defined"] = True
    else:
        out["auroc"] = None
        out["auroc_defined"] = False
    return out


def filtered_accuracy(records: ConfidenceRecords) -> dict:
    """Balanced accuracy over all records and over those with a cluster assignment."""
    K = records.n_classes
    ba_all = balanced_accuracy_score(records.predicted, records.labels, K)
    assigned = records.cluster != -1
    out = {"balanced_accuracy_all": ba_all,
           "unassigned_fraction": float(1.0 - assigned.mean()) if len(records) else float("nan"),
           "n_assigned": int(assigned.sum())}
    if assigned.any():
        out["balanced_accuracy_assigned"] = balanced_accuracy_score(
            records.predicted[assigned], records.labels[assigned], K)
        out["assigned_defined"] = True
    else:
        out["balanced_accuracy_assigned"] = None
        out["assigned_defined"] = False
    return out


# ---------------------------------------------------------------- report emission

def _clean(v):
    """JSON-ready copy with floats at 12 significant digits and NaN as null."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if not math.isfinite(f):
            return None
        return float(f"{f:.12g}")
    return v


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(float(x)) else f"{float(x):.10g}"
    return str(x)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")
_NOISE = "#c8c8c8"


def scatter_svg(points, labels, title: str = "", size: int = 480) -> str:
    pts = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pad = 30
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{title}</text>']
    if len(pts):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        xy = pad + (pts - lo) / span * (size - 2 * pad)
        for (x, y), lab in zip(xy, labels):
            color = _NOISE if lab < 0 else _PALETTE[lab % len(_PALETTE)]
            lines.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="2.5" fill="{color}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def histogram_svg(edges, hist_correct, hist_incorrect, title: str = "", width: int = 520,
                  height: int = 320) -> str:
    pad = 40
    n = len(hist_correct)
    top = max(1, int(max(np.max(hist_correct, initial=0), np.max(hist_incorrect, initial=0))))
    bw = (width - 2 * pad) / n
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{title}</text>']
    for i in range(n):
        for j, (h, color) in enumerate(((hist_correct[i], _PALETTE[0]),
                                        (hist_incorrect[i], _PALETTE[1]))):
            bar = (height - 2 * pad) * h / top
            x = pad + i * bw + j * bw / 2
            lines.append(f'<rect x="{x:.2f}" y="{height - pad - bar:.2f}" width="{bw / 2:.2f}" '
                         f'height="{bar:.2f}" fill="{color}" fill-opacity="0.8"/>')
    lines.append(f'<text x="{pad}" y="{height - 10}" font-family="sans-serif" font-size="11">'
                 f'{edges[0]:.3f}</text>')
    lines.append(f'<text x="{width - pad - 30}" y="{height - 10}" font-family="sans-serif" '
                 f'font-size="11">{edges[-1]:.3f}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_report(run_dir, metadata: dict | None = None, metrics: dict | None = None,
                confusion_matrix: ConfusionMatrix | None = None,
                similarity: dict | None = None, importance: dict | None = None,
                clusters: list | None = None, reduction: tuple | None = None,
                confidence: dict | None = None) -> list[Path]:
    """Write the report file set; only ``metrics.json`` is unconditional.

    ``importance`` maps target name -> {attribute: importance}. ``clusters`` is a list
    of (event_id, station_id, split, label) rows. ``reduction`` is (points (n, 2), labels).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    written = []
    payload = {"run": dict(metadata or {}), "metrics": dict(metrics or {})}
    if confusion_matrix is not None:
        payload["metrics"]["balanced_accuracy"] = balanced_accuracy(confusion_matrix)
    if confidence is not None:
        payload["metrics"]["confidence_auroc"] = confidence.get("auroc")
        payload["metrics"]["confidence_auroc_note"] = (
            "AUROC of max-softmax confidence as a predictor of correctness")
    if similarity is not None:
        payload["metrics"]["similarity"] = {
            k: similarity[k] for k in ("in_event_median", "non_event_median", "gap",
                                       "n_zero_norm_excluded")}
    p = run_dir / "metrics.json"
    write_json(p, payload)
    written.append(p)

    if confusion_matrix is not None:
        K = confusion_matrix.n_classes
        norm = confusion_matrix.normalized
        rows = [[k] + list(confusion_matrix.counts[k]) + list(norm[k]) for k in range(K)]
        header = (["true_class"] + [f"count_pred_{j}" for j in range(K)]
                  + [f"rate_pred_{j}" for j in range(K)])
        p = run_dir / "confusion.csv"
        write_csv(p, header, rows)
        written.append(p)
    if similarity is not None:
        rows = [["in_event", i, v] for i, v in enumerate(similarity["in_event"])]
        rows += [["non_event", i, v] for i, v in enumerate(similarity["non_event"])]
        p = run_dir / "similarity.csv"
        write_csv(p, ["population", "index", "cosine"], rows)
        written.append(p)
    if importance is not None:
        rows = [[target, attr, val] for target, imp in importance.items()
                for attr, val in imp.items()]
        p = run_dir / "importance.csv"
        write_csv(p, ["target", "attribute", "importance"], rows)
        written.append(p)
    if clusters is not None:
        p = run_dir / "clusters.csv"
        write_csv(p, ["event_id", "station_id", "split", "cluster"], clusters)
        written.append(p)
    if reduction is not None:
        pts, labs = reduction
        p = run_dir / "reduction.svg"
        p.write_text(scatter_svg(pts, labs, "2-D PCA of embeddings, colored by cluster"))
        written.append(p)
    if confidence is not None:
        p = run_dir / "confidence_hist.svg"
        p.write_text(histogram_svg(confidence["bin_edges"], confidence["hist_correct"],
                                   confidence["hist_incorrect"],
                                   "confidence: blue = correct, orange = incorrect"))
        written.append(p)
    return written
