"""End-to-end orchestration shared by the CLI, the scripts and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .evaluation import (
    SegmentationReport,
    anomaly_mrr,
    anomaly_scores,
    dp_segmentation,
    embedding_heatmap,
    segmentation_metrics,
)
from .graph import DynamicGraph, SyntheticLabels, generate_synthetic, three_regime_spec
from .rwpe import all_return_probabilities
from .temporal import EvoFormer, TrainResult, timestamp_accuracy, top_down_segmentation, train
from .walks import WalkCorpus, generate_corpus


def segment(emb: np.ndarray, p: int, method: str = "dp", strict: bool = False, select: str = "longest") -> np.ndarray:
    if method == "dp":
        return dp_segmentation(emb, p)
    if method == "topdown":
        return top_down_segmentation(emb, p, strict, select)
    raise ValueError(f"unknown segmentation method {method!r}")


def block_gap(H: np.ndarray, regimes) -> tuple[float, float]:
    """Mean off-diagonal similarity within regimes and mean similarity across regimes."""
    r = np.asarray(regimes)
    same = r[:, None] == r[None, :]
    off = ~np.eye(r.size, dtype=bool)
    return float(H[same & off].mean()), float(H[~same].mean())


def fit(graph: DynamicGraph, corpus: WalkCorpus, rc: RunConfig, on_epoch=None) -> tuple[TrainResult, list]:
    rc.validate()
    rpms = all_return_probabilities(graph, rc["model.k"])
    model = EvoFormer(rc.model_config(graph.vocab_size, graph.T), rc.seed)
    return train(graph, corpus, model, rc.train_config(), rpms, on_epoch=on_epoch), rpms


@dataclass
class SyntheticRun:
    graph: DynamicGraph
    labels: SyntheticLabels
    corpus: WalkCorpus
    result: TrainResult
    rpms: list
    accuracy: float
    dp: np.ndarray
    segmentation: SegmentationReport
    scores: np.ndarray
    mrr: float
    heatmap: np.ndarray
    within: float
    cross: float

    @property
    def gap(self) -> float:
        return self.within - self.cross


def synthetic_config(seed: int = 0) -> RunConfig:
    rc = RunConfig.default(desk=True)
    rc.set("run.seed", seed)
    return rc


def synthetic_experiment(rc: RunConfig | None = None, workers: int = 1) -> SyntheticRun:
    rc = rc or synthetic_config()
    graph, labels = generate_synthetic(three_regime_spec(seed=rc.seed))
    corpus = generate_corpus(graph, rc.walk_config(), workers)
    res, rpms = fit(graph, corpus, rc)
    mask_rate = rc["eval.score_mask_rate"]
    acc = timestamp_accuracy(res.model, corpus, rpms, mask_rate, rc.seed)
    p = int(labels.regime.max())
    dp = dp_segmentation(res.embeddings, p)
    scores = anomaly_scores(res.model, corpus, graph, rpms, rc["eval.anomaly_direction"], mask_rate, rc.seed)
    H = embedding_heatmap(res.embeddings)
    within, cross = block_gap(H, labels.regime)
    return SyntheticRun(graph, labels, corpus, res, rpms, acc, dp, segmentation_metrics(dp, labels.regime),
                        scores, anomaly_mrr(scores, labels.anomalies), H, within, cross)
