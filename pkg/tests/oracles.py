"""Brute-force reference metrics in exact rational arithmetic."""

from fractions import Fraction


def _f1(tp, fp, fn):
    den = 2 * tp + fp + fn
    return Fraction(2 * tp, den) if den else Fraction(0)


def reference_metrics(pred, gold):
    """(subset accuracy, micro F1, macro F1, hamming loss) from nested loops."""
    n, k = len(pred), len(pred[0])
    exact = sum(all(pred[i][j] == gold[i][j] for j in range(k)) for i in range(n))
    wrong = sum(pred[i][j] != gold[i][j] for i in range(n) for j in range(k))
    counts = []
    for j in range(k):
        tp = sum(1 for i in range(n) if pred[i][j] and gold[i][j])
        fp = sum(1 for i in range(n) if pred[i][j] and not gold[i][j])
        fn = sum(1 for i in range(n) if not pred[i][j] and gold[i][j])
        counts.append((tp, fp, fn))
    micro = _f1(*(sum(c[m] for c in counts) for m in range(3)))
    macro = sum(_f1(*c) for c in counts) / k
    return Fraction(exact, n), micro, macro, Fraction(wrong, n * k)


def random_instances(rng, count, max_n=20, max_k=6):
    for _ in range(count):
        n = int(rng.integers(1, max_n + 1))
        k = int(rng.integers(1, max_k + 1))
        density = rng.uniform(0.05, 0.7)
        gold = (rng.random((n, k)) < density).astype(int)
        pred = (rng.random((n, k)) < density).astype(int)
        yield pred, gold


def reference_per_label(pred, gold):
    """Per-label (precision, recall, F1) as Fractions; 0 when a denominator is 0."""
    out = []
    for j in range(len(pred[0])):
        tp = sum(1 for p, g in zip(pred, gold) if p[j] and g[j])
        n_pred = sum(1 for p in pred if p[j])
        n_gold = sum(1 for g in gold if g[j])
        prec = Fraction(tp, n_pred) if n_pred else Fraction(0)
        rec = Fraction(tp, n_gold) if n_gold else Fraction(0)
        out.append((prec, rec, _f1(tp, n_pred - tp, n_gold - tp)))
    return out


def matches_exactly(pred, gold, aggregates, per_label):
    """True when every float equals the correctly rounded rational reference."""
    ref = reference_metrics(pred, gold)
    if any(a != float(r) for a, r in zip(aggregates, ref)):
        return False
    for scores, (p, r, f) in zip(per_label, reference_per_label(pred, gold)):
        if (scores.precision, scores.recall, scores.f1) != (float(p), float(r), float(f)):
            return False
    return True
