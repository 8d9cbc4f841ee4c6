"""Brute-force reference implementations used by the test suites.

Written independently of the library: direct definitions, no shared helpers.
"""

from fractions import Fraction

import numpy as np


def auc_pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = Fraction(0)
    for p in pos:
        for n in neg:
            total += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(total / (len(pos) * len(neg)))


def _sweep(scores, labels):
    """(precision, recall) at every distinct threshold, score >= t called positive."""
    n_pos = sum(labels)
    out = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        out.append((Fraction(tp, tp + fp), Fraction(tp, n_pos)))
    return out


def au_pr_sweep(scores, labels):
    area, prev_r = Fraction(0), Fraction(0)
    for p, r in _sweep(scores, labels):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def rp_sweep(scores, labels, min_precision=Fraction(4, 5)):
    best = Fraction(0)
    for p, r in _sweep(scores, labels):
        if p >= min_precision:
            best = max(best, r)
    return float(best)


def recall_at_k_sort(scores, labels, k):
    vals = []
    for s, y in zip(scores, labels):
        truth = {j for j, v in enumerate(y) if v}
        if not truth:
            continue
        ranked = sorted(range(len(s)), key=lambda j: (-s[j], j))[:k]
        vals.append(Fraction(len(truth & set(ranked)), len(truth)))
    return float(sum(vals) / len(vals))


def confusion_prf(scores, labels, t=0.5):
    tp = fp = fn = 0
    for s, y in zip(scores, labels):
        if s >= t and y:
            tp += 1
        elif s >= t:
            fp += 1
        elif y:
            fn += 1
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def chunk_fusion(probs, c=2.0):
    """Direct per-class evaluation of the max/mean blend."""
    probs = [list(map(float, row)) for row in np.atleast_2d(probs)]
    k = len(probs)
    out = []
    for j in range(len(probs[0])):
        col = [row[j] for row in probs]
        lam = k / c
        out.append((max(col) + (sum(col) / k) * lam) / (1 + lam))
    return np.array(out)


def icd9_parent(code, kind):
    """Parent category straight from the textual rules."""
    code = code.replace(".", "").upper()
    if kind == "proc":
        return "P_" + code[:2]
    if code.startswith("E"):
        return "D_" + code[:4]
    if code.startswith("V"):
        return "D_" + code[:3]
    return "D_" + code[:3]


def windows_brute(admissions, k):
    """Every (window, label) pair by direct enumeration."""
    out = []
    for t in range(1, len(admissions)):
        window = []
        for j in range(t - k, t):
            window.append(admissions[j] if j >= 0 else None)
        out.append((tuple(window), admissions[t]))
    return out
