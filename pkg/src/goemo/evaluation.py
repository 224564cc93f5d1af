"""Multi-label metrics, thresholding and classification reports.

All metric functions take N x K binary matrices (predictions first, gold
second). Precision, recall and F1 are 0 whenever their denominator is 0.
F1 is computed from counts as 2TP / (2TP + FP + FN), which equals the
harmonic mean of precision and recall and avoids compounding rounding.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError, ShapeError

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
AGGREGATE_KEYS = ("subset_accuracy", "micro_f1", "macro_f1", "hamming_loss")


def _pair(pred, gold):
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ShapeError(f"prediction shape {pred.shape} != gold shape {gold.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"expected N x K matrices, got shape {pred.shape}")
    return pred.astype(bool), gold.astype(bool)


def binarize(probs, thresholds=0.5):
    """1 where prob >= threshold of its label. No minimum-one-label forcing."""
    probs = np.asarray(probs, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (probs.shape[1],))
    return (probs >= tau[None, :]).astype(np.int8)


def subset_accuracy(pred, gold):
    pred, gold = _pair(pred, gold)
    n = pred.shape[0]
    if n == 0:
        raise InputError("no examples")
    return int(np.all(pred == gold, axis=1).sum()) / n


def hamming_loss(pred, gold):
    pred, gold = _pair(pred, gold)
    if pred.size == 0:
        raise InputError("no cells")
    return int((pred != gold).sum()) / pred.size


def confusion_counts(pred, gold):
    """Per-label (tp, fp, fn) integer arrays."""
    pred, gold = _pair(pred, gold)
    tp = (pred & gold).sum(axis=0).astype(np.int64)
    fp = (pred & ~gold).sum(axis=0).astype(np.int64)
    fn = (~pred & gold).sum(axis=0).astype(np.int64)
    return tp, fp, fn


def _ratio(num, den):
    return num / den if den else 0.0


def f1_from_counts(tp, fp, fn):
    return _ratio(2 * tp, 2 * tp + fp + fn)


def f1_from_pr(precision, recall):
    """Harmonic mean of precision and recall (0 if both are 0)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class LabelScores:
    precision: float
    recall: float
    f1: float
    support: int


def per_label_prf(pred, gold):
    tp, fp, fn = confusion_counts(pred, gold)
    out = []
    for t, p, n in zip(tp.tolist(), fp.tolist(), fn.tolist()):
        out.append(LabelScores(_ratio(t, t + p), _ratio(t, t + n), f1_from_counts(t, p, n), t + n))
    return out


def micro_macro(pred, gold, exclude=()):
    """(micro F1, macro F1). ``exclude`` drops label indices from both."""
    tp, fp, fn = confusion_counts(pred, gold)
    keep = [k for k in range(len(tp)) if k not in set(exclude)]
    if not keep:
        raise InputError("every label excluded")
    tp, fp, fn = tp[keep], fp[keep], fn[keep]
    micro = f1_from_counts(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    # exact rational mean, so the result is the correctly rounded macro-F1
    total = sum(
        (Fraction(2 * t, 2 * t + p + n) if 2 * t + p + n else Fraction(0))
        for t, p, n in zip(tp.tolist(), fp.tolist(), fn.tolist())
    )
    macro = float(total / len(keep))
    return micro, macro


def _best_threshold(probs, gold, grid):
    best_f1, best_tau = -1.0, grid[0]
    for tau in grid:
        p = probs >= tau
        tp = int((p & gold).sum())
        f1 = f1_from_counts(tp, int(p.sum()) - tp, int(gold.sum()) - tp)
        if f1 > best_f1:
            best_f1, best_tau = f1, tau
    return best_tau


def tune_thresholds(probs_val, gold_val, grid=DEFAULT_GRID, workers=1):
    """Per-label threshold maximising validation F1; ties go to the smallest value.

    Labels are searched independently, so ``workers > 1`` spreads them
    over a thread pool without changing the result.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise InputError("threshold grid is empty")
    if any(not 0.0 < g < 1.0 for g in grid):
        raise InputError("thresholds must lie strictly between 0 and 1")
    probs = np.asarray(probs_val, dtype=np.float64)
    gold = np.asarray(gold_val).astype(bool)
    if probs.shape != gold.shape:
        raise ShapeError(f"probability shape {probs.shape} != gold shape {gold.shape}")

    def search(k):
        return _best_threshold(probs[:, k], gold[:, k], grid)

    labels = range(probs.shape[1])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(search, labels)), dtype=np.float64)
    return np.array([search(k) for k in labels], dtype=np.float64)


def save_thresholds(path, thresholds, names):
    with open(path, "w", encoding="utf-8") as fh:
        for name, tau in zip(names, thresholds):
            fh.write(f"{name}\t{float(tau)!r}\n")


def load_thresholds(path, names):
    path = Path(path)
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ParseError("expected label<TAB>threshold", line=lineno, path=path)
            if len(values) >= len(names) or parts[0] != names[len(values)]:
                raise ParseError(f"unexpected label {parts[0]!r}", line=lineno, path=path)
            tau = float(parts[1])
            if not 0.0 < tau < 1.0:
                raise ParseError(f"threshold {tau} outside (0, 1)", line=lineno, path=path)
            values.append(tau)
    if len(values) != len(names):
        raise ShapeError(f"{path}: {len(values)} thresholds for {len(names)} labels")
    return np.array(values)


# ---------------------------------------------------------------------------
# prediction files: id<TAB>p_1,...,p_K


def save_predictions(path, ids, probs):
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, row in zip(ids, np.asarray(probs)):
            fh.write(ex_id + "\t" + ",".join(repr(float(p)) for p in row) + "\n")


def load_predictions(path, num_labels=None):
    path = Path(path)
    ids, rows = [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open predictions {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected id<TAB>probabilities", line=lineno, path=path)
            try:
                row = [float(p) for p in parts[1].split(",")]
            except ValueError:
                raise ParseError("non-numeric probability", line=lineno, path=path) from None
            if num_labels is not None and len(row) != num_labels:
                raise ShapeError(f"{path}:{lineno}: {len(row)} probabilities, expected {num_labels}")
            if any(not 0.0 <= p <= 1.0 for p in row):
                raise ParseError("probability outside [0, 1]", line=lineno, path=path)
            ids.append(parts[0])
            rows.append(row)
    if rows and len({len(r) for r in rows}) != 1:
        raise ShapeError(f"{path}: rows have differing numbers of probabilities")
    return ids, np.array(rows)


def align_predictions(ids, probs, corpus_ids):
    """Reorder prediction rows into ``corpus_ids`` order."""
    pos = {i: r for r, i in enumerate(ids)}
    missing = [i for i in corpus_ids if i not in pos]
    if missing:
        raise InputError(f"no prediction for {len(missing)} ids, e.g. {missing[:5]}")
    return probs[[pos[i] for i in corpus_ids]]


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    label_names: tuple
    per_label: list
    subset_accuracy: float
    micro_f1: float
    macro_f1: float
    hamming_loss: float
    extra: dict = field(default_factory=dict)

    @property
    def aggregates(self):
        return {key: getattr(self, key) for key in AGGREGATE_KEYS}

    def plot_points(self):
        """(label, precision, recall, f1) rows for per-label bar/scatter plots."""
        return [(n, s.precision, s.recall, s.f1) for n, s in zip(self.label_names, self.per_label)]


def build_report(pred, gold, names, exclude_from_macro=()):
    if np.asarray(pred).shape[1] != len(names):
        raise ShapeError(f"{np.asarray(pred).shape[1]} label columns for {len(names)} label names")
    micro, macro = micro_macro(pred, gold, exclude_from_macro)
    return MetricsReport(
        label_names=tuple(names),
        per_label=per_label_prf(pred, gold),
        subset_accuracy=subset_accuracy(pred, gold),
        micro_f1=micro,
        macro_f1=macro,
        hamming_loss=hamming_loss(pred, gold),
    )


def _render_text(report):
    width = max(12, max(len(n) for n in report.label_names))
    lines = [f"{'label':<{width}}  {'prec.':>6} {'rec.':>6} {'f1':>6} {'sup.':>6}"]
    for name, s in zip(report.label_names, report.per_label):
        lines.append(f"{name:<{width}}  {s.precision:6.3f} {s.recall:6.3f} {s.f1:6.3f} {s.support:6d}")
    lines.append("")
    lines.append("  ".join(f"{k}={getattr(report, k):.4f}" for k in AGGREGATE_KEYS))
    return "\n".join(lines) + "\n"


def _render_tsv(report):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["label", "precision", "recall", "f1", "support"])
    for name, s in zip(report.label_names, report.per_label):
        w.writerow([name, repr(float(s.precision)), repr(float(s.recall)), repr(float(s.f1)), s.support])
    for key in AGGREGATE_KEYS:
        w.writerow(["#" + key, repr(float(getattr(report, key)))])
    return buf.getvalue()


def _render_json(report):
    doc = {
        "labels": [
            {"label": n, "precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
            for n, s in zip(report.label_names, report.per_label)
        ],
        "aggregates": report.aggregates,
    }
    return json.dumps(doc, indent=2) + "\n"


def render_report(report, fmt="text"):
    renderers = {"text": _render_text, "tsv": _render_tsv, "json": _render_json}
    if fmt not in renderers:
        raise InputError(f"unknown report format {fmt!r}; choose from {sorted(renderers)}")
    return renderers[fmt](report)


def parse_report_tsv(text):
    names, per_label, agg = [], [], {}
    rows = list(csv.reader(io.StringIO(text), delimiter="\t"))
    if not rows or rows[0] != ["label", "precision", "recall", "f1", "support"]:
        raise ParseError("missing TSV report header", line=1)
    for lineno, row in enumerate(rows[1:], 2):
        if row[0].startswith("#"):
            agg[row[0][1:]] = float(row[1])
        else:
            if len(row) != 5:
                raise ParseError("expected 5 columns", line=lineno)
            names.append(row[0])
            per_label.append(LabelScores(float(row[1]), float(row[2]), float(row[3]), int(row[4])))
    missing = set(AGGREGATE_KEYS) - agg.keys()
    if missing:
        raise ParseError(f"missing aggregates {sorted(missing)}")
    return MetricsReport(tuple(names), per_label, **{k: agg[k] for k in AGGREGATE_KEYS})


def aggregates_line(report):
    """Table-style aggregate summary: header line plus values line."""
    header = "\t".join(AGGREGATE_KEYS)
    values = "\t".join(f"{getattr(report, k):.4f}" for k in AGGREGATE_KEYS)
    return f"{header}\n{values}\n"
