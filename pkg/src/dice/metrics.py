"""Evaluation metrics.

All metrics are implemented directly (rank statistics, step integration,
threshold scans, run-based labeling) rather than through a metrics library;
the test suite checks each one against an independent brute-force oracle.
Score sets above one million entries switch to a 1001-point quantile
threshold grid, a documented approximation for dense pixel scans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXACT_SCAN_LIMIT = 1_000_000
QUANTILE_POINTS = 1001


@dataclass(frozen=True)
class ScoredSet:
    """Parallel scores and binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel().astype(np.int64)
        if s.shape != y.shape:
            raise ValueError("scores and labels must align")
        if s.size < 2:
            raise ValueError("need at least two samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite scores")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)


@dataclass(frozen=True)
class RegionLabeling:
    """Integer region labels (0 = background) and the region count."""

    labels: np.ndarray
    region_count: int


def auroc(scored: ScoredSet) -> float:
    """Rank-based AUROC; ties count one half.

    Equals the probability that a random positive outscores a random
    negative, computed from average ranks (Mann-Whitney form).
    """
    s, y = scored.scores, scored.labels
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUROC")

    order = np.argsort(s, kind="mergesort")
    sorted_scores = s[order]
    # average 1-based rank of each tie group, vectorized via self-search
    lo = np.searchsorted(sorted_scores, sorted_scores, side="left")
    hi = np.searchsorted(sorted_scores, sorted_scores, side="right")
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = 0.5 * (lo + 1 + hi)
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _counts_at_thresholds(scored: ScoredSet, thresholds: np.ndarray):
    """(predicted positive, true positive) counts for score >= threshold."""
    s, y = scored.scores, scored.labels
    all_sorted = np.sort(s)
    pos_sorted = np.sort(s[y == 1])
    pp = s.size - np.searchsorted(all_sorted, thresholds, side="left")
    tp = pos_sorted.size - np.searchsorted(pos_sorted, thresholds, side="left")
    return pp, tp


def average_precision(scored: ScoredSet) -> float:
    """Step-wise area under the precision-recall curve.

    Tied scores enter as one group, so precision is evaluated only at
    attainable operating points.
    """
    n_pos = int(scored.labels.sum())
    if n_pos == 0:
        raise ValueError("undefined AP")
    thresholds = np.unique(scored.scores)[::-1]
    pp, tp = _counts_at_thresholds(scored, thresholds)
    precision = tp / pp
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def f1_max(scored: ScoredSet) -> float:
    """Best F1 over thresholds.

    Scans every distinct score exactly up to EXACT_SCAN_LIMIT entries, then
    falls back to the quantile grid.
    """
    n_pos = int(scored.labels.sum())
    if n_pos == 0:
        raise ValueError("undefined F1")
    thresholds = candidate_thresholds(scored.scores)
    pp, tp = _counts_at_thresholds(scored, thresholds)
    f1 = 2.0 * tp / (pp + n_pos)
    return float(f1.max())


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Distinct scores, or a 1001-point quantile grid for very large sets."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size > EXACT_SCAN_LIMIT:
        return np.unique(np.quantile(s, np.linspace(0.0, 1.0, QUANTILE_POINTS)))
    return np.unique(s)


def connected_components(mask: np.ndarray) -> RegionLabeling:
    """8-connected regions via run-based two-pass labeling.

    Region ids start at 1 and follow first-encounter order in a row-major
    scan, so labelings are deterministic.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2-d")
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)

    parent: list[int] = []

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    run_rows: list[tuple[int, int, int, int]] = []  # (row, start, end, run id)
    prev: list[tuple[int, int, int]] = []  # (start, end, run id) of previous row
    for y in range(h):
        row = m[y]
        if not row.any():
            prev = []
            continue
        edges = np.flatnonzero(np.diff(np.concatenate(([False], row, [False])).astype(np.int8)))
        cur = []
        for s, e in zip(edges[::2], edges[1::2]):
            rid = len(parent)
            parent.append(rid)
            run_rows.append((y, int(s), int(e), rid))
            # 8-connectivity: runs touch if their column spans meet or abut
            for ps, pe, pid in prev:
                if ps <= e and s <= pe:
                    union(rid, pid)
            cur.append((int(s), int(e), rid))
        prev = cur

    # order regions by the first run (raster order) of each root
    first_run: dict[int, int] = {}
    for idx, (_, _, _, rid) in enumerate(run_rows):
        root = find(rid)
        first_run.setdefault(root, idx)
    ordered = sorted(first_run, key=first_run.__getitem__)
    region_of = {root: i + 1 for i, root in enumerate(ordered)}
    for y, s, e, rid in run_rows:
        labels[y, s:e] = region_of[find(rid)]
    return RegionLabeling(labels, len(ordered))


def pro_curve(
    maps: list[np.ndarray], masks: list[np.ndarray], thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-region overlap curve.

    For each threshold (descending) returns the false positive rate over all
    negative pixels and the mean per-region recall over all ground-truth
    regions; prediction is score >= threshold.
    """
    if len(maps) != len(masks) or not maps:
        raise ValueError("maps and masks must align")
    region_scores: list[np.ndarray] = []
    neg_scores: list[np.ndarray] = []
    for values, gt in zip(maps, masks):
        v = np.asarray(values, dtype=np.float64)
        g = np.asarray(gt).astype(bool)
        if v.shape != g.shape:
            raise ValueError("map/mask shape mismatch")
        labeling = connected_components(g)
        for r in range(1, labeling.region_count + 1):
            region_scores.append(np.sort(v[labeling.labels == r]))
        neg_scores.append(v[~g])
    if not region_scores:
        raise ValueError("undefined PRO")
    neg = np.sort(np.concatenate(neg_scores))
    if neg.size == 0:
        raise ValueError("undefined PRO: no negative pixels")

    t = np.asarray(thresholds, dtype=np.float64)
    fpr = (neg.size - np.searchsorted(neg, t, side="left")) / neg.size
    recalls = np.zeros((len(region_scores), t.size))
    for i, r in enumerate(region_scores):
        recalls[i] = (r.size - np.searchsorted(r, t, side="left")) / r.size
    return fpr, recalls.mean(axis=0)


def aupro(maps: list[np.ndarray], masks: list[np.ndarray], fpr_limit: float = 0.3) -> float:
    """Area under the PRO curve up to fpr_limit, normalized by fpr_limit.

    The curve is anchored at (0, 0), evaluated at descending candidate
    thresholds, clipped at the limit by linear interpolation, and integrated
    with the trapezoid rule.
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError("fpr_limit must lie in (0, 1]")
    all_scores = np.concatenate([np.asarray(v, dtype=np.float64).ravel() for v in maps])
    thresholds = candidate_thresholds(all_scores)[::-1]
    fpr, pro = pro_curve(maps, masks, thresholds)
    fpr = np.concatenate(([0.0], fpr))
    pro = np.concatenate(([0.0], pro))

    if fpr[-1] > fpr_limit:
        idx = int(np.searchsorted(fpr, fpr_limit, side="right")) - 1
        if fpr[idx] < fpr_limit:
            span = fpr[idx + 1] - fpr[idx]
            frac = (fpr_limit - fpr[idx]) / span
            cross = pro[idx] + frac * (pro[idx + 1] - pro[idx])
            fpr = np.concatenate((fpr[: idx + 1], [fpr_limit]))
            pro = np.concatenate((pro[: idx + 1], [cross]))
        else:
            fpr = fpr[: idx + 1]
            pro = pro[: idx + 1]
    area = float(np.trapezoid(pro, fpr))
    return area / fpr_limit
