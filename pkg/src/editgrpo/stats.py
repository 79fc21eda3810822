"""Paired Wilcoxon signed-rank test and multi-seed run aggregation."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 20


@dataclass(frozen=True)
class WilcoxonResult:
    W: float  # sum of ranks of positive differences
    p_two_sided: float
    n_effective: int


def _exact_upper_tail(doubled_ranks: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W+ <= w) and P(W+ >= w) under the null, over all 2^n sign assignments.

    Ranks are doubled so average ranks of ties stay integral.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    n_assign = 2 ** len(doubled_ranks)
    lower = sum(counts[: w2 + 1])
    upper = sum(counts[w2:])
    return lower / n_assign, upper / n_assign


def wilcoxon_signed_rank(a, b, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Two-sided paired test on a - b.

    Zero differences are dropped and tied magnitudes share average ranks.  The
    p-value is exact up to ``exact_max_n`` nonzero pairs, otherwise a normal
    approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError("need two equal-length, non-empty 1-d samples")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_max_n:
        lower, upper = _exact_upper_tail(np.rint(2 * ranks).astype(int), int(round(2 * w_plus)))
        p = min(1.0, 2 * min(lower, upper))
    else:
        mean = n * (n + 1) / 4
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts**3 - tie_counts)) / 48
        if var <= 0:
            return WilcoxonResult(w_plus, 1.0, n)
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
        p = min(1.0, 2 * norm.sf(z))
    return WilcoxonResult(w_plus, float(p), n)


def read_metrics_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _quantiles(values: np.ndarray) -> tuple[float, float]:
    q1, q3 = np.percentile(values, [25, 75])
    return float(np.median(values)), float(q3 - q1)


def summarize_runs(logs, metrics=("mean_reward", "no_finding_frac")) -> dict:
    """Median and IQR per (variant, step, metric) across seed logs, plus final-step comparisons.

    Returns ``{"rows": [...], "final": [...]}``. Final-step rows pair variants
    by log position within each variant (the seed order) and attach a Wilcoxon p.
    """
    header = None
    by_variant: dict[str, list[list[dict]]] = defaultdict(list)
    for path in logs:
        h, rows = read_metrics_csv(path)
        if header is None:
            header = h
        elif h != header:
            raise ValueError(f"header mismatch in {Path(path).name}")
        if rows:
            by_variant[rows[0]["variant"]].append(rows)

    out_rows = []
    for variant, runs in sorted(by_variant.items()):
        n_steps = min(len(r) for r in runs)
        for s in range(n_steps):
            row = {"variant": variant, "step": int(runs[0][s]["step"]), "n_runs": len(runs)}
            for m in metrics:
                med, iqr = _quantiles(np.array([float(r[s][m]) for r in runs]))
                row[f"{m}_median"] = med
                row[f"{m}_iqr"] = iqr
            out_rows.append(row)

    final = []
    names = sorted(by_variant)
    for i, va in enumerate(names):
        for vb in names[i + 1 :]:
            for m in metrics:
                xa = [float(r[-1][m]) for r in by_variant[va]]
                xb = [float(r[-1][m]) for r in by_variant[vb]]
                k = min(len(xa), len(xb))
                res = wilcoxon_signed_rank(xa[:k], xb[:k])
                final.append(
                    {
                        "a": va,
                        "b": vb,
                        "metric": m,
                        "median_a": float(np.median(xa)),
                        "median_b": float(np.median(xb)),
                        "W": res.W,
                        "p": res.p_two_sided,
                        "n": res.n_effective,
                    }
                )
    return {"rows": out_rows, "final": final}
