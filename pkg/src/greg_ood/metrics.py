"""Detection metrics over score populations.

Convention everywhere: lower score means in-distribution, and a sample is
accepted as ID exactly when its score is <= the threshold. The positive class
for AUROC is OOD, so perfect separation (every ID score strictly below every
OOD score) gives AUROC 1.0.
"""

import math
from dataclasses import dataclass

import numpy as np


def _scores(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("need at least one score")
    if not np.isfinite(a).all():
        raise ValueError("scores must be finite")
    return a


def threshold_at_tpr(id_scores, tpr: float = 0.95) -> float:
    """Smallest threshold gamma accepting at least `tpr` of the ID scores.

    With n scores sorted ascending, gamma is the ceil(tpr * n)-th order
    statistic: the tightest cut such that (count of id <= gamma) / n >= tpr.
    """
    s = np.sort(_scores(id_scores))
    if not 0.0 < tpr <= 1.0:
        raise ValueError(f"tpr must be in (0, 1], got {tpr}")
    k = math.ceil(tpr * s.size)
    return float(s[k - 1])


def fpr_at_threshold(ood_scores, gamma: float) -> float:
    """Fraction of OOD scores accepted as ID (score <= gamma)."""
    s = _scores(ood_scores)
    return float(np.count_nonzero(s <= gamma)) / s.size


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95):
    """(gamma, fpr): threshold from the ID side, false-positive rate on OOD."""
    gamma = threshold_at_tpr(id_scores, tpr)
    return gamma, fpr_at_threshold(ood_scores, gamma)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank of their block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(id_scores, ood_scores) -> float:
    """Probability a random OOD score exceeds a random ID score, ties half.

    Computed by the rank-sum identity, which equals the pairwise mean of
    [id < ood] + 0.5 [id == ood] exactly (same float sums, no approximation).
    """
    s_id = _scores(id_scores)
    s_ood = _scores(ood_scores)
    ranks = _midranks(np.concatenate([s_id, s_ood]))
    m = s_ood.size
    u = float(ranks[s_id.size :].sum()) - 0.5 * m * (m + 1)
    return u / (s_id.size * m)


def histogram(scores, n_bins: int, lo: float, hi: float):
    """Fixed-range histogram with right-inclusive bins.

    Bin b covers (edge[b], edge[b+1]] except bin 0, which also includes its
    left edge; values outside [lo, hi] clamp into the end bins. This keeps a
    score sitting exactly on an interior edge in the bin to its left.
    """
    s = _scores(scores)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.searchsorted(edges, s, side="left") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return edges, counts


def overlap_coefficient(id_scores, ood_scores, n_bins: int = 64, lo=None, hi=None) -> float:
    """Shared mass of the two empirical distributions on a common grid:
    sum over bins of min(p_id, p_ood). 0 means disjoint, 1 means identical."""
    s_id = _scores(id_scores)
    s_ood = _scores(ood_scores)
    both = np.concatenate([s_id, s_ood])
    lo = float(both.min()) if lo is None else float(lo)
    hi = float(both.max()) if hi is None else float(hi)
    if lo == hi:  # all scores identical: full overlap by definition
        return 1.0
    _, c_id = histogram(s_id, n_bins, lo, hi)
    _, c_ood = histogram(s_ood, n_bins, lo, hi)
    return float(np.minimum(c_id / s_id.size, c_ood / s_ood.size).sum())


@dataclass
class EvalReport:
    kind: str  # score kind the report was computed from
    tpr: float
    gamma: float
    fpr: float
    auroc: float
    overlap: float
    id_scores: np.ndarray
    ood_scores: np.ndarray
    hist_edges: np.ndarray
    hist_id: np.ndarray
    hist_ood: np.ndarray

    def write(self, out_dir) -> list[str]:
        """Write eval.csv, scores_id.csv, scores_ood.csv, hist.csv into
        out_dir; returns the file names written."""
        import os

        names = []

        def emit(name, text):
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                fh.write(text)
            names.append(name)

        emit(
            "eval.csv",
            "kind,tpr,gamma,fpr95,auroc,overlap\n"
            + ",".join(
                [self.kind, repr(float(self.tpr)), repr(float(self.gamma)),
                 repr(float(self.fpr)), repr(float(self.auroc)), repr(float(self.overlap))]
            )
            + "\n",
        )
        emit("scores_id.csv", "score\n" + "".join(repr(float(v)) + "\n" for v in self.id_scores))
        emit("scores_ood.csv", "score\n" + "".join(repr(float(v)) + "\n" for v in self.ood_scores))
        rows = [
            ",".join(
                [repr(float(self.hist_edges[b])), repr(float(self.hist_edges[b + 1])),
                 str(int(self.hist_id[b])), str(int(self.hist_ood[b]))]
            )
            for b in range(self.hist_id.size)
        ]
        emit("hist.csv", "bin_lo,bin_hi,id_count,ood_count\n" + "".join(r + "\n" for r in rows))
        return names


def evaluate_scores(id_scores, ood_scores, kind: str = "energy", tpr: float = 0.95,
                    n_bins: int = 64) -> EvalReport:
    """Full detection report: threshold, FPR at the TPR target, AUROC,
    shared histograms over the pooled score range, and overlap mass."""
    s_id = _scores(id_scores)
    s_ood = _scores(ood_scores)
    gamma, fpr = fpr_at_tpr(s_id, s_ood, tpr)
    area = auroc(s_id, s_ood)
    both = np.concatenate([s_id, s_ood])
    lo, hi = float(both.min()), float(both.max())
    if lo == hi:
        hi = lo + 1.0
    edges, c_id = histogram(s_id, n_bins, lo, hi)
    _, c_ood = histogram(s_ood, n_bins, lo, hi)
    ovl = float(np.minimum(c_id / s_id.size, c_ood / s_ood.size).sum())
    return EvalReport(kind, tpr, gamma, fpr, area, ovl, s_id, s_ood, edges, c_id, c_ood)
