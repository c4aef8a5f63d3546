"""Evolution-sensitive temporal module and the joint training loop.

Graph embeddings are the rows of the timestamp head ``W_TM``.  Once per epoch
they are cut into ``p`` contiguous segments by greedy top-down splitting; the
segments define a causal, within-segment attention mask for a single-head
self-attention over time, whose output feeds an edge-growth classifier.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import (
    Batch,
    ModelConfig,
    StructuralEncoder,
    assert_finite_gradients,
    collate,
    loss_mlm,
    loss_timestamp,
    make_batch,
)
from .graph import DynamicGraph
from .walks import WalkCorpus

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# segmentation


def unit_rows(emb: np.ndarray) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    out = np.zeros_like(emb)
    np.divide(emb, norms, out=out, where=norms > 0)
    return out


class SegmentCost:
    """Sum over t in [s, e] of cos(w_t, mean(w_s..w_e)), in O(d) per query.

    The sum equals (sum of unit rows) . (unit mean); a zero row or a zero mean
    contributes cosine 0.
    """

    def __init__(self, emb: np.ndarray):
        emb = np.asarray(emb, dtype=np.float64)
        T, d = emb.shape
        self.T = T
        self._raw = np.zeros((T + 1, d))
        self._unit = np.zeros((T + 1, d))
        np.cumsum(emb, axis=0, out=self._raw[1:])
        np.cumsum(unit_rows(emb), axis=0, out=self._unit[1:])

    def __call__(self, s: int, e: int) -> float:
        """0-based inclusive bounds."""
        total = self._raw[e + 1] - self._raw[s]
        norm = np.linalg.norm(total)
        if norm == 0.0:
            return 0.0
        return float((self._unit[e + 1] - self._unit[s]) @ total / norm)


def segments_of(v: np.ndarray) -> list[tuple[int, int]]:
    """0-based inclusive (start, end) of each segment of a label vector."""
    v = np.asarray(v)
    cuts = np.flatnonzero(np.diff(v)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts - 1, [v.size - 1]])
    return list(zip(starts.tolist(), ends.tolist()))


def labels_from_segments(segs: list[tuple[int, int]], T: int) -> np.ndarray:
    v = np.zeros(T, dtype=np.int64)
    for i, (s, e) in enumerate(sorted(segs), start=1):
        v[s:e + 1] = i
    return v


def segmentation_objective(emb: np.ndarray, v: np.ndarray, cost: SegmentCost | None = None) -> float:
    cost = cost or SegmentCost(emb)
    total = 0.0
    for s, e in segments_of(v):
        total = total + cost(s, e)
    return total


def is_valid_segmentation(v, p: int | None = None) -> bool:
    v = np.asarray(v)
    if v.size == 0 or v[0] != 1:
        return False
    steps = np.diff(v)
    if not np.all((steps == 0) | (steps == 1)):
        return False
    return p is None or int(v[-1]) == p


TIE_TOL = 1e-12


def top_down_segmentation(emb: np.ndarray, p: int, strict: bool = False, select: str = "longest") -> np.ndarray:
    """Greedy recursive splitting into ``p`` contiguous segments.

    Each round splits one segment at the index maximising the summed cosine
    coherence of its two halves (smallest index on ties).  ``select="longest"``
    splits the longest segment (earliest on ties); ``select="gain"`` splits
    whichever segment gains the most coherence.  The default split range lets
    either half be a singleton; ``strict=True`` keeps the narrower range that
    forbids a leading singleton, which can stall.
    """
    if select not in ("longest", "gain"):
        raise ValueError(f"unknown split selection {select!r}")
    emb = np.asarray(emb, dtype=np.float64)
    T = emb.shape[0]
    if not 1 <= p <= T:
        raise ValueError(f"need 1 <= p <= T, got p={p}, T={T}")
    cost = SegmentCost(emb)

    def beats(a, b):
        # scores equal up to rounding count as ties, so the earlier candidate stays
        return b == -math.inf or a > b + TIE_TOL * max(1.0, abs(b))

    def best_split(s, e):
        first = s + 1 if strict else s
        best, best_j = -math.inf, -1
        for j in range(first, e):
            score = cost(s, j) + cost(j + 1, e)
            if beats(score, best):
                best, best_j = score, j
        return best, best_j

    segs = [(0, T - 1)]
    while len(segs) < p:
        if select == "longest":
            pick = max(range(len(segs)), key=lambda i: (segs[i][1] - segs[i][0], -segs[i][0]))
            _, j = best_split(*segs[pick])
        else:
            pick, j, top = -1, -1, -math.inf
            for i, (s, e) in enumerate(segs):
                score, jj = best_split(s, e)
                if jj >= 0 and beats(score - cost(s, e), top):
                    pick, j, top = i, jj, score - cost(s, e)
        if j < 0:
            raise RuntimeError(f"segmentation stalled with {len(segs)} of {p} segments")
        s, e = segs[pick]
        segs[pick:pick + 1] = [(s, j), (j + 1, e)]
    return labels_from_segments(segs, T)


def segment_causal_mask(v) -> np.ndarray:
    """Additive mask: 0 where j <= i and v[i] == v[j], -inf elsewhere."""
    v = np.asarray(v)
    T = v.size
    allowed = (np.arange(T)[None, :] <= np.arange(T)[:, None]) & (v[:, None] == v[None, :])
    return np.where(allowed, 0.0, -np.inf)


# ---------------------------------------------------------------------------
# temporal attention and edge evolution


class TemporalModule(nn.Module):
    def __init__(self, d: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed + 7919)
        s = 1.0 / math.sqrt(d)

        def u(*shape):
            return nn.Parameter((torch.rand(shape, generator=gen) * 2 - 1) * s)

        self.d = d
        self.W_Q = u(d, d)
        self.W_K = u(d, d)
        self.W_V = u(d, d)
        self.f_w = nn.Parameter((torch.rand(2 * d, generator=gen) * 2 - 1) / math.sqrt(2 * d))
        self.f_b = nn.Parameter(torch.zeros(()))

    def attend(self, emb: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return segment_attention(emb, self, mask)


def segment_attention(emb: torch.Tensor, params: TemporalModule, mask) -> tuple[torch.Tensor, torch.Tensor]:
    """Z_g = softmax(Q K^T / sqrt(d) + M) (emb W_V); returns (Z_g, beta_g)."""
    mask = torch.as_tensor(mask, dtype=emb.dtype)
    d = emb.shape[1]
    scores = (emb @ params.W_Q) @ (emb @ params.W_K).T / math.sqrt(d) + mask
    beta = torch.softmax(scores, dim=-1)
    return beta @ (emb @ params.W_V), beta


def edge_labels(g: DynamicGraph) -> np.ndarray:
    """y^t = 1 iff |E_t| > |E_{t-1}|, for t = 2..T."""
    if g.T < 2:
        raise ValueError("edge labels need at least two snapshots")
    c = g.edge_counts()
    return (c[1:] > c[:-1]).astype(np.int64)


def edge_logits(rows: torch.Tensor, params: TemporalModule) -> torch.Tensor:
    z = torch.cat([rows[:-1], rows[1:]], dim=1)
    return z @ params.f_w + params.f_b


def edge_evolution_loss(rows: torch.Tensor, y, params: TemporalModule) -> tuple[torch.Tensor, torch.Tensor]:
    """Summed binary cross-entropy over t = 2..T and the predicted probabilities."""
    y = torch.as_tensor(y, dtype=rows.dtype)
    logits = edge_logits(rows, params)
    loss = F.binary_cross_entropy_with_logits(logits, y, reduction="sum")
    return loss, torch.sigmoid(logits)


# ---------------------------------------------------------------------------
# joint model


class EvoFormer(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = StructuralEncoder(cfg, seed)
        self.temporal = TemporalModule(cfg.d, seed)

    @property
    def graph_embeddings(self) -> torch.Tensor:
        return self.encoder.W_TM

    def temporal_output(self, v) -> tuple[torch.Tensor, torch.Tensor]:
        mask = segment_causal_mask(v)
        return segment_attention(self.encoder.W_TM, self.temporal, mask)

    def export_embeddings(self, source: str = "wtm", v=None) -> np.ndarray:
        with torch.no_grad():
            if source == "wtm":
                return self.encoder.W_TM.detach().double().numpy().copy()
            if source == "zg":
                if v is None:
                    raise ValueError("Z_g export needs a segmentation vector")
                return self.temporal_output(v)[0].double().numpy().copy()
        raise ValueError(f"unknown embedding source {source!r}")


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-4
    lambda1: float = 5.0
    lambda2: float = 10.0
    lambda3: float = 5.0
    segments: int = 8
    mask_rate: float = 0.15
    mlm_norm: str = "sequence"
    edge_input: str = "zg"
    strict_alg1: bool = False
    split_select: str = "longest"
    seed: int = 0

    def validate(self, T: int | None = None) -> None:
        bad = []
        if self.epochs < 0:
            bad.append("epochs")
        if self.batch_size < 1:
            bad.append("batch_size")
        if not self.learning_rate > 0:
            bad.append("learning_rate")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                bad.append(name)
        if self.segments < 1 or (T is not None and self.segments > T):
            bad.append("segments")
        if not 0 < self.mask_rate < 1:
            bad.append("mask_rate")
        if self.mlm_norm not in ("sequence", "position"):
            bad.append("mlm_norm")
        if self.edge_input not in ("zg", "wtm"):
            bad.append("edge_input")
        if self.split_select not in ("longest", "gain"):
            bad.append("split_select")
        if bad:
            raise ValueError("invalid training config: " + ", ".join(bad))


@dataclass
class EpochLog:
    epoch: int
    L1: float
    L2: float
    L3: float
    total: float
    mlm_per_position: float = float("nan")


@dataclass
class TrainResult:
    model: EvoFormer
    embeddings: np.ndarray
    segmentation: np.ndarray
    history: list[EpochLog] = field(default_factory=list)
    optimizer: torch.optim.Optimizer | None = None

    def log_csv(self, header: str | None = None) -> str:
        lines = [header] if header else []
        lines.append("epoch,L1,L2,L3,total")
        lines += [f"{h.epoch},{h.L1:.10g},{h.L2:.10g},{h.L3:.10g},{h.total:.10g}" for h in self.history]
        return "\n".join(lines) + "\n"


class TrainingDiverged(FloatingPointError):
    pass


def joint_losses(model: EvoFormer, batch: Batch, v, y, cfg: TrainConfig) -> dict[str, torch.Tensor]:
    """All three objectives and their weighted total for one batch."""
    mlm, ts = model.encoder(batch)
    L1 = loss_mlm(mlm, batch, cfg.mlm_norm)
    L2 = loss_timestamp(ts, batch)
    if y is not None and len(y) > 0:
        Z, _ = model.temporal_output(v)
        rows = Z if cfg.edge_input == "zg" else model.encoder.W_TM
        L3, _ = edge_evolution_loss(rows, y, model.temporal)
    else:
        L3 = torch.zeros((), dtype=L1.dtype)
    total = cfg.lambda1 * L1 + cfg.lambda2 * L2 + cfg.lambda3 * L3
    n_masked = batch.mlm_mask.sum().clamp(min=1)
    per_pos = -(torch.log_softmax(mlm, -1).gather(-1, batch.mlm_targets.unsqueeze(-1)).squeeze(-1)
                * batch.mlm_mask).sum() / n_masked
    return {"L1": L1, "L2": L2, "L3": L3, "total": total, "mlm_per_position": per_pos.detach()}


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x7368, epoch]).permutation(n)


def train(graph: DynamicGraph, corpus: WalkCorpus, model: EvoFormer, cfg: TrainConfig,
          rpms: list[np.ndarray], evaluate_initial: bool = True,
          optimizer: torch.optim.Optimizer | None = None, start_epoch: int = 1,
          on_epoch=None) -> TrainResult:
    """Adam on lambda1*L1 + lambda2*L2 + lambda3*L3.

    The segmentation is recomputed from the current ``W_TM`` at the start of
    every epoch and held fixed (a constant mask) until the next refresh.
    """
    cfg.validate(graph.T)
    if len(corpus) == 0:
        raise ValueError("empty walk corpus")
    y = edge_labels(graph) if graph.T >= 2 else None
    dtype = next(model.parameters()).dtype
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    history: list[EpochLog] = []
    n = len(corpus)

    def segmentation():
        return top_down_segmentation(model.encoder.W_TM.detach().double().numpy(), cfg.segments,
                                     cfg.strict_alg1, cfg.split_select)

    def run_epoch(epoch: int, update: bool) -> EpochLog:
        v = segmentation()
        order = epoch_order(n, cfg.seed, epoch)
        sums = dict(L1=0.0, L2=0.0, L3=0.0, total=0.0, mlm_per_position=0.0)
        nb = 0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = make_batch(corpus, order[lo:lo + cfg.batch_size], rpms, cfg.mask_rate,
                               cfg.seed, epoch, dtype)
            with torch.set_grad_enabled(update):
                losses = joint_losses(model, batch, v, y, cfg)
            if not torch.isfinite(losses["total"]):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi + 1}")
            if update:
                opt.zero_grad(set_to_none=False)
                losses["total"].backward()
                assert_finite_gradients(model)
                opt.step()
            for key in sums:
                sums[key] += losses[key].item()
            nb += 1
        row = EpochLog(epoch, sums["L1"] / nb, sums["L2"] / nb, sums["L3"] / nb, sums["total"] / nb,
                       sums["mlm_per_position"] / nb)
        log.info("epoch %d  L1=%.4f  L2=%.4f  L3=%.4f  total=%.4f", epoch, row.L1, row.L2, row.L3, row.total)
        return row

    if evaluate_initial and start_epoch == 1:
        history.append(run_epoch(0, update=False))
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        history.append(run_epoch(epoch, update=True))
        if on_epoch is not None:
            on_epoch(epoch, model, opt)
    v = segmentation()
    return TrainResult(model, model.export_embeddings("wtm"), v, history, opt)


# ---------------------------------------------------------------------------
# scoring with a trained model


EVAL_EPOCH = -1  # mask stream reserved for scoring


def walk_confidences(model: EvoFormer, corpus: WalkCorpus, rpms: list[np.ndarray],
                     mask_rate: float | None = 0.15, seed: int = 0,
                     batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Per-walk softmax probability of the true snapshot and the argmax prediction (0-based).

    Walks are masked at ``mask_rate`` from a fixed scoring stream so that the
    inputs look like training inputs; ``mask_rate=None`` scores raw walks.
    """
    dtype = next(model.parameters()).dtype
    probs, preds = [], []
    with torch.no_grad():
        for lo in range(0, len(corpus), batch_size):
            idx = range(lo, min(lo + batch_size, len(corpus)))
            batch = make_batch(corpus, idx, rpms, mask_rate, seed, EVAL_EPOCH, dtype)
            _, ts = model.encoder(batch)
            sm = torch.softmax(ts.double(), dim=-1)
            probs.append(sm.gather(1, batch.t.unsqueeze(1)).squeeze(1).numpy())
            preds.append(sm.argmax(1).numpy())
    return np.concatenate(probs), np.concatenate(preds)


def timestamp_accuracy(model: EvoFormer, corpus: WalkCorpus, rpms: list[np.ndarray],
                       mask_rate: float | None = 0.15, seed: int = 0) -> float:
    _, pred = walk_confidences(model, corpus, rpms, mask_rate, seed)
    return float(np.mean(pred == corpus.t - 1))


# ---------------------------------------------------------------------------
# full-model gradient check


def check_gradients(d: int = 8, layers: int = 1, heads: int = 2, num_nodes: int = 15, T: int = 4,
                    L: int = 6, k: int = 4, segments: int = 2, batch: int = 3, seed: int = 0,
                    lambdas=(5.0, 10.0, 5.0), step: float = 1e-4, with_norms: bool = False):
    """Compare autograd against central differences on a tiny double-precision model.

    Covers every parameter tensor of the encoder, timestamp head and temporal
    module under lambda1*L1 + lambda2*L2 + lambda3*L3.  Returns the per-tensor
    relative errors, plus the autograd gradient norms when ``with_norms``.
    """
    from .encoder import TokenSequence, choose_mask, finite_difference_check
    from .vocab import CLS, MASK, NUM_SPECIAL, SEP

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(num_nodes=num_nodes, T=T, d=d, layers=layers, heads=heads, k=k, head_init_scale=1.0)
    model = EvoFormer(cfg, seed).double()
    # move off the zero-bias ReLU kinks to a generic point
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.split(".")[-1].startswith("b"):
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) - 0.5)
    seqs = []
    for i in range(batch):
        nodes = rng.integers(0, num_nodes, size=L)
        tokens = np.concatenate([[CLS], nodes + NUM_SPECIAL, [SEP]])
        pos = choose_mask(L, 0.3, rng)
        targets = tokens[pos].copy()
        tokens[pos] = MASK
        rows = np.zeros((L + 2, k))
        rows[1:-1] = rng.random((L, k))
        rows[pos] = 0.0
        seqs.append(TokenSequence(tokens, pos, targets, int(rng.integers(1, T + 1)), rows))
    b = collate(seqs, torch.float64)
    y = rng.integers(0, 2, size=T - 1)
    v = top_down_segmentation(model.encoder.W_TM.detach().numpy(), segments)
    tc = TrainConfig(lambda1=lambdas[0], lambda2=lambdas[1], lambda3=lambdas[2], segments=segments)
    params = dict(model.named_parameters())
    errors = finite_difference_check(params, lambda: joint_losses(model, b, v, y, tc)["total"], step)
    if not with_norms:
        return errors
    norms = {n: (p.grad.norm().item() if p.grad is not None else 0.0) for n, p in params.items()}
    return errors, norms


def config_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    return {"model": model_cfg.to_dict(), "train": asdict(train_cfg)}
