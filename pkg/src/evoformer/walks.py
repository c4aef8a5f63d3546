"""Second-order (node2vec-style) random-walk corpus over every snapshot.

Each walk draws from its own RNG stream keyed by ``(seed, t, start, m)``, so the
corpus is identical whatever the number of worker processes.
"""
from __future__ import annotations

import gzip
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .graph import DynamicGraph, SnapshotGraph


class DeadEndError(RuntimeError):
    """Raised when a transition is requested from a node with no neighbours."""


@dataclass(frozen=True)
class WalkConfig:
    W: int = 5
    L: int = 32
    p: float = 1.0
    q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.W < 1 or self.L < 2:
            raise ValueError("WalkConfig needs W >= 1 and L >= 2")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("node2vec parameters p and q must be positive")


@dataclass(frozen=True)
class WalkRecord:
    t: int  # 1-based snapshot index
    m: int  # 1-based walk index
    nodes: np.ndarray


class WalkCorpus:
    """Walks stored column-wise: ``t`` and ``m`` vectors plus an (N, L) node matrix."""

    def __init__(self, t: np.ndarray, m: np.ndarray, nodes: np.ndarray, cfg: WalkConfig | None = None):
        self.t = np.asarray(t, dtype=np.int64)
        self.m = np.asarray(m, dtype=np.int64)
        nodes = np.asarray(nodes, dtype=np.int64)
        self.nodes = nodes if nodes.ndim == 2 else nodes.reshape(len(self.t), -1)
        self.cfg = cfg

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def L(self) -> int:
        return int(self.nodes.shape[1])

    def __getitem__(self, i: int) -> WalkRecord:
        return WalkRecord(int(self.t[i]), int(self.m[i]), self.nodes[i])

    def __iter__(self) -> Iterator[WalkRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WalkCorpus):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.nodes, other.nodes)
        )

    def dumps(self) -> str:
        lines = []
        for t, m, row in zip(self.t, self.m, self.nodes):
            lines.append(f"{t} {m} " + " ".join(map(str, row.tolist())))
        return "\n".join(lines) + ("\n" if lines else "")


def next_node_distribution(g: SnapshotGraph, prev: int | None, cur: int, p: float = 1.0,
                           q: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Neighbours of ``cur`` and their transition probabilities.

    First step (``prev is None``) is uniform.  Otherwise the unnormalised weight
    is 1/p for a step back to ``prev``, 1 for a neighbour of ``prev`` and 1/q
    for anything further away.
    """
    nbrs = g.neighbors(cur)
    if nbrs.size == 0:
        raise DeadEndError(f"node {cur} has no neighbours")
    if prev is None or (p == 1.0 and q == 1.0):
        return nbrs, np.full(nbrs.size, 1.0 / nbrs.size)
    near = np.isin(nbrs, g.neighbors(prev), assume_unique=True)
    w = np.where(nbrs == prev, 1.0 / p, np.where(near, 1.0, 1.0 / q))
    return nbrs, w / w.sum()


def _pick(nbrs: np.ndarray, probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return int(nbrs[min(i, nbrs.size - 1)])


def walk_from(g: SnapshotGraph, start: int, L: int, p: float, q: float, rng: np.random.Generator) -> np.ndarray:
    """One fixed-length walk; after a dead end the current node is repeated."""
    out = np.empty(L, dtype=np.int64)
    out[0] = start
    draws = rng.random(L - 1)
    unbiased = p == 1.0 and q == 1.0
    indptr, indices = g.indptr, g.indices
    prev = None
    cur = start
    for step in range(1, L):
        lo, hi = indptr[cur], indptr[cur + 1]
        if hi == lo:
            out[step:] = cur
            break
        if unbiased or prev is None:
            nxt = int(indices[lo + min(int(draws[step - 1] * (hi - lo)), hi - lo - 1)])
        else:
            nbrs, probs = next_node_distribution(g, prev, cur, p, q)
            nxt = _pick(nbrs, probs, draws[step - 1])
        out[step] = nxt
        prev, cur = cur, nxt
    return out


def walk_rng(seed: int, t: int, start: int, m: int) -> np.random.Generator:
    return np.random.default_rng([seed, t, start, m])


def _snapshot_walks(args) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g, t, cfg = args
    starts = g.nodes
    rows = np.empty((starts.size * cfg.W, cfg.L), dtype=np.int64)
    ms = np.tile(np.arange(1, cfg.W + 1, dtype=np.int64), starts.size)
    i = 0
    for v in starts:
        for m in range(1, cfg.W + 1):
            rows[i] = walk_from(g, int(v), cfg.L, cfg.p, cfg.q, walk_rng(cfg.seed, t, int(v), m))
            i += 1
    return np.full(rows.shape[0], t, dtype=np.int64), ms, rows


def generate_corpus(g: DynamicGraph, cfg: WalkConfig, workers: int = 1) -> WalkCorpus:
    """W walks of length L from every positive-degree node of every snapshot.

    Records are ordered by (t, start node, m).
    """
    jobs = [(snap, t, cfg) for t, snap in enumerate(g.snapshots, start=1)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_snapshot_walks, jobs))
    else:
        parts = [_snapshot_walks(j) for j in jobs]
    ts = np.concatenate([p[0] for p in parts])
    ms = np.concatenate([p[1] for p in parts])
    nodes = np.concatenate([p[2] for p in parts]) if parts else np.zeros((0, cfg.L), np.int64)
    return WalkCorpus(ts, ms, nodes.reshape(-1, cfg.L), cfg)


def expected_corpus_size(g: DynamicGraph, W: int) -> int:
    return W * sum(int((snap.degrees > 0).sum()) for snap in g.snapshots)


# ---------------------------------------------------------------------------
# structural visit bias


@dataclass(frozen=True)
class ExposureReport:
    node_share: float
    visit_share: float
    hei: float
    num_high: int
    threshold: int


def exposure_index(node_share: float, visit_share: float) -> float:
    if node_share <= 0:
        raise ValueError("node share must be positive")
    return visit_share / node_share


def high_degree_exposure_index(corpus: WalkCorpus, g: DynamicGraph, degree_quantile: float = 0.1) -> ExposureReport:
    """Visit share of the top ``degree_quantile`` nodes divided by their node share.

    Nodes are ranked by their maximum degree over time; the cut keeps the
    ``ceil(q * |V|)`` highest and every node tied with the last of them.
    """
    if not 0.0 < degree_quantile < 1.0:
        raise ValueError("degree_quantile must lie in (0, 1)")
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    maxdeg = g.max_degrees()
    k = math.ceil(degree_quantile * g.vocab_size)
    threshold = int(np.sort(maxdeg)[::-1][k - 1])
    high = maxdeg >= threshold
    if threshold <= 0:
        high &= maxdeg > 0
    if not high.any():
        raise ValueError("degree quantile selects no nodes")
    node_share = float(high.sum()) / g.vocab_size
    visits = np.bincount(corpus.nodes.ravel(), minlength=g.vocab_size)
    visit_share = float(visits[high].sum()) / float(visits.sum())
    return ExposureReport(node_share, visit_share, exposure_index(node_share, visit_share),
                          int(high.sum()), threshold)


# ---------------------------------------------------------------------------
# persistence


def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        raw = open(path, mode.replace("t", "") + "b")
        gz_mode = "wb" if "w" in mode else "rb"
        gz = gzip.GzipFile(filename="", fileobj=raw, mode=gz_mode, mtime=0)
        return io.TextIOWrapper(gz, encoding="utf-8", newline="\n"), raw
    fh = open(path, mode, encoding="utf-8")
    return fh, None


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def save_corpus(corpus: WalkCorpus, path, meta: dict | None = None) -> None:
    path = Path(path)
    fh, raw = _open_text(path, "wt")
    try:
        if meta and "config_hash" in meta:
            fh.write(f"# evoformer corpus v1 config={meta['config_hash']} seed={meta.get('seed', '')}\n")
        fh.write(corpus.dumps())
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    header = {"format": "evoformer-corpus", "version": 1, "num_walks": len(corpus), "L": corpus.L}
    if corpus.cfg is not None:
        header["walk_config"] = asdict(corpus.cfg)
    if meta:
        header.update(meta)
    sidecar_path(path).write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")


def load_corpus(path) -> WalkCorpus:
    path = Path(path)
    fh, raw = _open_text(path, "rt")
    ts, ms, rows = [], [], []
    try:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 4:
                raise ValueError(f"{path}: line {lineno}: walk record too short")
            ts.append(int(parts[0]))
            ms.append(int(parts[1]))
            rows.append([int(x) for x in parts[2:]])
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: walks of unequal length")
    cfg = None
    side = sidecar_path(path)
    if side.exists():
        header = json.loads(side.read_text())
        if header.get("format") != "evoformer-corpus" or header.get("version") != 1:
            raise ValueError(f"{side}: unsupported corpus header")
        if "walk_config" in header:
            cfg = WalkConfig(**header["walk_config"])
    L = len(rows[0]) if rows else (cfg.L if cfg else 0)
    return WalkCorpus(np.asarray(ts), np.asarray(ms), np.asarray(rows, dtype=np.int64).reshape(-1, L), cfg)
