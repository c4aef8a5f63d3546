"""Similarity ranking, temporal anomaly scoring and temporal segmentation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .graph import DynamicGraph, SnapshotGraph
from .temporal import SegmentCost, labels_from_segments, segmentation_objective, walk_confidences, unit_rows


# ---------------------------------------------------------------------------
# task 1: similarity ranking


def mcs_similarity(a: SnapshotGraph, b: SnapshotGraph) -> int:
    """Size of the maximum common edge subgraph under the identity alignment."""
    if a.num_nodes != b.num_nodes:
        raise ValueError("snapshots do not share a vocabulary")
    ea, eb = a.edges(), b.edges()
    if ea.size == 0 or eb.size == 0:
        return 0
    n = a.num_nodes
    return int(np.intersect1d(ea[:, 0] * n + ea[:, 1], eb[:, 0] * n + eb[:, 1], assume_unique=True).size)


def mcs_matrix(g: DynamicGraph) -> np.ndarray:
    T = g.T
    S = np.zeros((T, T), dtype=np.int64)
    for i in range(T):
        for j in range(i, T):
            S[i, j] = S[j, i] = mcs_similarity(g[i], g[j])
    return S


def cosine_matrix(emb: np.ndarray) -> np.ndarray:
    U = unit_rows(emb)
    return np.clip(U @ U.T, -1.0, 1.0)


def embedding_heatmap(emb: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of graph embeddings (zero rows give 0)."""
    C = cosine_matrix(emb)
    C = (C + C.T) / 2
    nz = np.linalg.norm(emb, axis=1) > 0
    C[np.diag_indices_from(C)] = np.where(nz, 1.0, 0.0)
    return C


def _ranked(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    # descending score, ties to the lower index
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


@dataclass
class RankingReport:
    precision: dict[int, float]
    mrr: float
    map_at: dict[int, float]
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        ks = sorted(self.precision)
        lines = ["metric,value"]
        lines += [f"P@{k},{self.precision[k]:.6f}" for k in ks]
        lines.append(f"MRR,{self.mrr:.6f}")
        lines += [f"MAP@{k},{self.map_at[k]:.6f}" for k in ks]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        ks = sorted(self.precision)
        head = "".join(f"{'P@' + str(k):>9}" for k in ks) + f"{'MRR':>9}" + "".join(f"{'MAP@' + str(k):>9}" for k in ks)
        vals = "".join(f"{self.precision[k]:>9.3f}" for k in ks) + f"{self.mrr:>9.3f}" + "".join(
            f"{self.map_at[k]:>9.3f}" for k in ks)
        return head + "\n" + vals + "\n"


def rank_metrics(emb: np.ndarray, truth: np.ndarray, K_list=(5, 10)) -> RankingReport:
    """Per-query ranking of the other snapshots by embedding cosine, scored against truth.

    Relevant items are the top-K candidates by ground truth; MRR uses the
    predicted rank of the single best candidate by truth; MAP@K divides by
    min(K, |relevant|).
    """
    emb = np.asarray(emb, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    K_list = sorted(set(K_list))
    T = emb.shape[0]
    if truth.shape != (T, T):
        raise ValueError("truth must be T x T")
    if max(K_list) > T - 1:
        raise ValueError(f"K={max(K_list)} exceeds the {T - 1} candidates per query")
    sim = cosine_matrix(emb)
    prec = {k: 0.0 for k in K_list}
    aps = {k: 0.0 for k in K_list}
    rr_total = 0.0
    rows = []
    for q in range(T):
        cand = np.delete(np.arange(T), q)
        pred = _ranked(sim[q], cand)
        ideal = _ranked(truth[q], cand)
        rr = 1.0 / (int(np.flatnonzero(pred == ideal[0])[0]) + 1)
        rr_total += rr
        row = {"query": q + 1, "rr": rr}
        for k in K_list:
            rel = set(ideal[:k].tolist())
            hits = [int(x) in rel for x in pred[:k]]
            p_k = sum(hits) / k
            ap, found = 0.0, 0
            for i, h in enumerate(hits, start=1):
                if h:
                    found += 1
                    ap += found / i
            ap /= min(k, len(rel))
            prec[k] += p_k
            aps[k] += ap
            row[f"P@{k}"] = p_k
            row[f"AP@{k}"] = ap
        rows.append(row)
    return RankingReport({k: v / T for k, v in prec.items()}, rr_total / T, {k: v / T for k, v in aps.items()}, rows)


# ---------------------------------------------------------------------------
# task 2: anomaly detection


def anomaly_scores(model, corpus, graph: DynamicGraph, rpms, direction: str = "high",
                   mask_rate: float | None = 0.15, seed: int = 0) -> np.ndarray:
    """Mean confidence the timestamp head puts on the true snapshot, per snapshot.

    With ``direction="low"`` the score is negated so that low confidence ranks first.
    Snapshots without walks score 0 (or -0).
    """
    if direction not in ("high", "low"):
        raise ValueError("direction must be 'high' or 'low'")
    conf, _ = walk_confidences(model, corpus, rpms, mask_rate, seed)
    T = graph.T
    sums = np.bincount(corpus.t - 1, weights=conf, minlength=T)
    counts = np.bincount(corpus.t - 1, minlength=T)
    scores = np.divide(sums, counts, out=np.zeros(T), where=counts > 0)
    return scores if direction == "high" else -scores


def rank_desc(scores) -> np.ndarray:
    """1-based rank of every entry, descending, ties to the earlier index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


def anomaly_mrr(scores, anomalies) -> float:
    """Mean reciprocal rank of the annotated anomalous timesteps (1-based)."""
    anomalies = list(anomalies)
    if not anomalies:
        raise ValueError("empty anomaly set")
    ranks = rank_desc(scores)
    for t in anomalies:
        if not 1 <= t <= len(ranks):
            raise ValueError(f"anomaly timestep {t} outside 1..{len(ranks)}")
    return float(np.mean([1.0 / ranks[t - 1] for t in anomalies]))


def spearman(scores, reference) -> float:
    """Rank correlation with average ranks for ties (nan if either side is constant)."""
    a = np.asarray(scores, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("reference series length differs from the score series")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    return float(ra @ rb) / denom if denom > 0 else float("nan")


@dataclass
class AnomalyReport:
    scores: np.ndarray
    mrr: float | None = None
    spearman: float | None = None

    def to_csv(self) -> str:
        lines = ["t,score,rank"]
        ranks = rank_desc(self.scores)
        lines += [f"{t},{s:.10g},{r}" for t, (s, r) in enumerate(zip(self.scores, ranks), start=1)]
        if self.mrr is not None:
            lines.append(f"# MRR,{self.mrr:.6f}")
        if self.spearman is not None:
            lines.append(f"# Spearman,{self.spearman:.6f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# task 3: segmentation


def dp_segmentation(emb: np.ndarray, p: int) -> np.ndarray:
    """Globally optimal contiguous p-segmentation under the cosine coherence objective."""
    emb = np.asarray(emb, dtype=np.float64)
    T = emb.shape[0]
    if not 1 <= p <= T:
        raise ValueError(f"need 1 <= p <= T, got p={p}, T={T}")
    cost = SegmentCost(emb)
    C = np.full((T, T), -np.inf)
    for s in range(T):
        for e in range(s, T):
            C[s, e] = cost(s, e)
    # F[j, e]: best value covering 0..e with j+1 segments; back[j, e]: start of last segment
    F = np.full((p, T), -np.inf)
    back = np.zeros((p, T), dtype=np.int64)
    F[0] = C[0]
    for j in range(1, p):
        for e in range(j, T):
            best, arg = -np.inf, -1
            for s in range(j, e + 1):
                val = F[j - 1, s - 1] + C[s, e]
                if val > best:
                    best, arg = val, s
            F[j, e], back[j, e] = best, arg
    segs = []
    e = T - 1
    for j in range(p - 1, 0, -1):
        s = int(back[j, e])
        segs.append((s, e))
        e = s - 1
    segs.append((0, e))
    return labels_from_segments(segs, T)


def contingency(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pl, pi = np.unique(np.asarray(pred), return_inverse=True)
    tl, ti = np.unique(np.asarray(truth), return_inverse=True)
    C = np.zeros((pl.size, tl.size), dtype=np.int64)
    np.add.at(C, (pi, ti), 1)
    return C, pl, tl


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Normalised mutual information, arithmetic-mean normalisation."""
    C, _, _ = contingency(pred, truth)
    n = C.sum()
    hp, ht = _entropy(C.sum(1)), _entropy(C.sum(0))
    if hp == 0.0 and ht == 0.0:
        return 1.0
    nz = C > 0
    pij = C[nz] / n
    outer = np.outer(C.sum(1), C.sum(0))[nz] / n**2
    mi = float((pij * np.log(pij / outer)).sum())
    denom = (hp + ht) / 2
    return min(1.0, max(0.0, mi / denom)) if denom > 0 else 0.0


def aligned_labels(pred, truth) -> np.ndarray:
    """Map predicted labels onto truth labels by maximum-agreement assignment.

    Predicted labels left unmatched map to a value absent from truth.
    """
    C, pl, tl = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-C)
    mapping = {pl[r]: tl[c] for r, c in zip(rows, cols)}
    missing = min(tl.min(), 0) - 1
    return np.array([mapping.get(x, missing) for x in np.asarray(pred)])


def f1_macro(pred_aligned, truth) -> float:
    truth = np.asarray(truth)
    scores = []
    for c in np.unique(truth):
        tp = np.sum((pred_aligned == c) & (truth == c))
        fp = np.sum((pred_aligned == c) & (truth != c))
        fn = np.sum((pred_aligned != c) & (truth == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


@dataclass
class SegmentationReport:
    pred: np.ndarray
    acc: float
    nmi: float
    f1: float

    def to_csv(self) -> str:
        return f"metric,value\nACC,{self.acc:.6f}\nNMI,{self.nmi:.6f}\nF1_macro,{self.f1:.6f}\n"

    def to_text(self) -> str:
        return (f"segmentation: {' '.join(map(str, self.pred.tolist()))}\n"
                f"{'ACC':>8}{'NMI':>8}{'F1':>8}\n{self.acc:>8.3f}{self.nmi:>8.3f}{self.f1:>8.3f}\n")


def segmentation_metrics(pred, truth) -> SegmentationReport:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    aligned = aligned_labels(pred, truth)
    acc = float(np.mean(aligned == truth))
    return SegmentationReport(pred, acc, nmi(pred, truth), f1_macro(aligned, truth))


__all__ = [
    "AnomalyReport", "RankingReport", "SegmentationReport", "anomaly_mrr", "anomaly_scores",
    "dp_segmentation", "embedding_heatmap", "mcs_matrix", "mcs_similarity", "nmi", "rank_metrics",
    "segmentation_metrics", "segmentation_objective", "spearman",
]
