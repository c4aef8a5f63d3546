"""Temporal graph data model, edge-list ingestion and synthetic regime graphs.

Snapshots are undirected, unweighted and loop-free, stored as CSR arrays over a
single global node vocabulary.  A node that has no edge at time ``t`` is simply
a degree-0 row of that snapshot.
"""
from __future__ import annotations

import datetime as _dt
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

GRAPH_MAGIC = b"EVOGRAPH"
GRAPH_VERSION = 1

NAMED_RESOLUTIONS = ("day", "week", "month", "year")


class GraphFormatError(ValueError):
    """Malformed edge-list line or corrupt graph container."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class EmptyGraphError(ValueError):
    pass


class SnapshotGraph:
    """One undirected snapshot in CSR form.

    ``indptr``/``indices`` follow the scipy CSR convention; each neighbour list
    is sorted, deduplicated and never contains the row itself.
    """

    __slots__ = ("num_nodes", "indptr", "indices", "_degrees")

    def __init__(self, num_nodes: int, indptr: np.ndarray, indices: np.ndarray):
        self.num_nodes = int(num_nodes)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        degrees = np.diff(self.indptr)
        degrees.setflags(write=False)
        self._degrees = degrees

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> "SnapshotGraph":
        """Build a snapshot from (u, v) pairs; symmetrizes, drops loops and duplicates."""
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
            raise ValueError("edge endpoint outside vocabulary")
        arr = arr[arr[:, 0] != arr[:, 1]]
        both = np.concatenate([arr, arr[:, ::-1]], axis=0)
        if both.size:
            both = np.unique(both, axis=0)
        counts = np.bincount(both[:, 0], minlength=num_nodes) if both.size else np.zeros(num_nodes, np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = both[:, 1] if both.size else np.zeros(0, np.int64)
        return cls(num_nodes, indptr, indices)

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def nodes(self) -> np.ndarray:
        """Node ids present at this time step (degree >= 1)."""
        return np.flatnonzero(self._degrees > 0)

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors(u)
        i = np.searchsorted(nbrs, v)
        return bool(i < nbrs.size and nbrs[i] == v)

    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with u < v, lexicographically sorted."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self._degrees)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges()}

    def to_scipy(self):
        import scipy.sparse as sp

        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SnapshotGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.indptr.tobytes(), self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"SnapshotGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass(frozen=True, eq=False)
class DynamicGraph:
    snapshots: tuple[SnapshotGraph, ...]
    vocab_size: int
    resolution: str = "1"
    node_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.snapshots) < 1:
            raise ValueError("a dynamic graph needs at least one snapshot")
        for g in self.snapshots:
            if g.num_nodes != self.vocab_size:
                raise ValueError("snapshot vocabulary does not match the graph")

    @property
    def T(self) -> int:
        return len(self.snapshots)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, i: int) -> SnapshotGraph:
        return self.snapshots[i]

    def __iter__(self):
        return iter(self.snapshots)

    def edge_counts(self) -> np.ndarray:
        return np.array([g.num_edges for g in self.snapshots], dtype=np.int64)

    def max_degrees(self) -> np.ndarray:
        return np.max(np.stack([g.degrees for g in self.snapshots]), axis=0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.resolution == other.resolution
            and self.node_labels == other.node_labels
            and self.snapshots == other.snapshots
        )

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(dumps_graph(self)).hexdigest()


# ---------------------------------------------------------------------------
# ingestion


def _parse_timestamp(token: str, lineno: int) -> int | _dt.date:
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return _dt.date.fromisoformat(token)
    except ValueError:
        raise GraphFormatError(f"bad timestamp {token!r}", lineno) from None


def _epoch_seconds(ts: int | _dt.date) -> int:
    if isinstance(ts, int):
        return ts
    return int(_dt.datetime(ts.year, ts.month, ts.day, tzinfo=_dt.timezone.utc).timestamp())


def _as_date(ts: int | _dt.date) -> _dt.date:
    if isinstance(ts, _dt.date):
        return ts
    return _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc).date()


def _bucket_keys(stamps: Sequence[int | _dt.date], resolution: str | int) -> np.ndarray:
    res = str(resolution)
    if res in NAMED_RESOLUTIONS:
        dates = [_as_date(s) for s in stamps]
        if res == "year":
            keys = [d.year for d in dates]
        elif res == "month":
            keys = [d.year * 12 + d.month - 1 for d in dates]
        else:
            keys = [d.toordinal() for d in dates]
        keys = np.asarray(keys, dtype=np.int64)
        keys -= keys.min()
        if res == "week":
            keys //= 7
        return keys
    try:
        width = int(res)
    except ValueError:
        raise ValueError(f"unknown resolution {resolution!r}") from None
    if width <= 0:
        raise ValueError("resolution must be positive")
    secs = np.asarray([_epoch_seconds(s) for s in stamps], dtype=np.int64)
    return (secs - secs.min()) // width


def ingest_edge_list(stream: io.TextIOBase | Iterable[str], resolution: str | int = 1) -> DynamicGraph:
    """Read ``src<TAB>dst<TAB>timestamp`` lines into a dynamic graph.

    Integer resolutions are bucket widths in raw timestamp units (ISO dates are
    converted to epoch seconds).  Named resolutions (day, week, month, year)
    read integers as UTC epoch seconds.  Node labels get dense ids in order of
    first appearance; self-loops are dropped before any id is assigned.
    """
    label_ids: dict[str, int] = {}
    src: list[int] = []
    dst: list[int] = []
    stamps: list[int | _dt.date] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        a, b, ts = (p.strip() for p in parts)
        if not a or not b:
            raise GraphFormatError("empty node label", lineno)
        stamp = _parse_timestamp(ts, lineno)
        if a == b:
            continue
        for lab in (a, b):
            if lab not in label_ids:
                label_ids[lab] = len(label_ids)
        src.append(label_ids[a])
        dst.append(label_ids[b])
        stamps.append(stamp)
    if not src:
        raise EmptyGraphError("edge list contains no valid edges")

    buckets = _bucket_keys(stamps, resolution)
    T = int(buckets.max()) + 1
    n = len(label_ids)
    pairs = np.stack([np.asarray(src), np.asarray(dst)], axis=1)
    order = np.argsort(buckets, kind="stable")
    bounds = np.searchsorted(buckets[order], np.arange(T + 1))
    snaps = tuple(
        SnapshotGraph.from_edges(n, pairs[order[bounds[t]:bounds[t + 1]]]) for t in range(T)
    )
    labels = tuple(label_ids)  # dict preserves insertion order == id order
    return DynamicGraph(snaps, n, str(resolution), labels)


def write_edge_list(g: DynamicGraph, fh) -> None:
    """Write ``src<TAB>dst<TAB>t`` lines (t is the 1-based snapshot index)."""
    names = g.node_labels
    for t, snap in enumerate(g.snapshots, start=1):
        for u, v in snap.edges():
            a = names[u] if names else str(u)
            b = names[v] if names else str(v)
            fh.write(f"{a}\t{b}\t{t}\n")


# ---------------------------------------------------------------------------
# statistics


@dataclass
class SnapshotStats:
    rows: list[tuple[int, int, int]]
    nodes_union: int
    nodes_sum: int
    edges_sum: int
    edges_union: int

    @property
    def T(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        out = ["t,nodes,edges"]
        out += [f"{t},{n},{m}" for t, n, m in self.rows]
        out.append(f"total_union,{self.nodes_union},{self.edges_union}")
        out.append(f"total_sum,{self.nodes_sum},{self.edges_sum}")
        return "\n".join(out) + "\n"

    def to_text(self) -> str:
        lines = [f"{'t':>6} {'|V_t|':>10} {'|E_t|':>10}"]
        lines += [f"{t:>6} {n:>10} {m:>10}" for t, n, m in self.rows]
        lines.append(f"Nodes |V| (union) = {self.nodes_union}; sum_t |V_t| = {self.nodes_sum}")
        lines.append(f"Edges sum_t |E_t| = {self.edges_sum}; |union E_t| = {self.edges_union}")
        lines.append(f"Timestamps = {self.T}")
        return "\n".join(lines) + "\n"


def snapshot_stats(g: DynamicGraph) -> SnapshotStats:
    rows = []
    present = np.zeros(g.vocab_size, dtype=bool)
    union_edges: set[tuple[int, int]] = set()
    for t, snap in enumerate(g.snapshots, start=1):
        nodes = snap.nodes
        present[nodes] = True
        rows.append((t, int(nodes.size), snap.num_edges))
        union_edges |= snap.edge_set()
    return SnapshotStats(
        rows=rows,
        nodes_union=int(present.sum()),
        nodes_sum=sum(r[1] for r in rows),
        edges_sum=sum(r[2] for r in rows),
        edges_union=len(union_edges),
    )


# ---------------------------------------------------------------------------
# binary container


def dumps_graph(g: DynamicGraph, meta: dict | None = None) -> bytes:
    info = {"resolution": g.resolution, "node_labels": list(g.node_labels) if g.node_labels else None}
    if meta:
        info["meta"] = meta
    blob = json.dumps(info, sort_keys=True, separators=(",", ":")).encode()
    parts = [GRAPH_MAGIC, struct.pack("<IIQI", GRAPH_VERSION, g.T, g.vocab_size, len(blob)), blob]
    for snap in g.snapshots:
        e = snap.edges().astype("<i8")
        parts.append(struct.pack("<Q", e.shape[0]))
        parts.append(e.tobytes())
    return b"".join(parts)


def loads_graph(data: bytes) -> tuple[DynamicGraph, dict]:
    if data[:8] != GRAPH_MAGIC:
        raise GraphFormatError("not a graph container (bad magic)")
    off = 8
    try:
        version, T, vocab, blen = struct.unpack_from("<IIQI", data, off)
    except struct.error:
        raise GraphFormatError("truncated graph header") from None
    if version != GRAPH_VERSION:
        raise GraphFormatError(f"unsupported graph container version {version}")
    off += struct.calcsize("<IIQI")
    info = json.loads(data[off:off + blen])
    off += blen
    snaps = []
    for _ in range(T):
        if off + 8 > len(data):
            raise GraphFormatError("truncated snapshot table")
        (m,) = struct.unpack_from("<Q", data, off)
        off += 8
        nbytes = 16 * m
        if off + nbytes > len(data):
            raise GraphFormatError("truncated edge array")
        e = np.frombuffer(data, dtype="<i8", count=2 * m, offset=off).reshape(m, 2)
        off += nbytes
        snaps.append(SnapshotGraph.from_edges(vocab, e.astype(np.int64)))
    if off != len(data):
        raise GraphFormatError("trailing bytes after last snapshot")
    labels = info.get("node_labels")
    g = DynamicGraph(tuple(snaps), int(vocab), info["resolution"], tuple(labels) if labels else None)
    return g, info.get("meta") or {}


def save_graph(g: DynamicGraph, path, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_graph(g, meta))


def load_graph(path) -> tuple[DynamicGraph, dict]:
    with open(path, "rb") as fh:
        return loads_graph(fh.read())


# ---------------------------------------------------------------------------
# synthetic regime graphs

GENERATOR_KINDS = ("blocks", "community", "hub")


@dataclass
class Regime:
    start: int
    end: int
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class RegimeSpec:
    """Piecewise-stationary snapshot generator.

    ``regimes`` holds (start_t, end_t, kind, params) with 1-based inclusive
    bounds.  The first snapshot of every regime is a fresh draw.  Inside a
    regime each edge of the previous snapshot survives with probability
    ``keep`` and a fresh draw thinned to ``refill`` is added on top;
    ``refill=None`` means ``1 - keep`` (stationary density), smaller values
    make a regime start dense and then relax.  ``shock`` adds transient
    uniform random edges (per-pair probability) to the first snapshot of each
    regime after the first; they are not carried into the next snapshot.
    """

    T: int
    num_nodes: int
    regimes: list[Regime]
    seed: int = 0
    keep: float = 0.0
    refill: float | None = None
    shock: float = 0.0

    def __post_init__(self):
        self.regimes = [r if isinstance(r, Regime) else Regime(*r) for r in self.regimes]
        if self.T < 1 or self.num_nodes < 2:
            raise ValueError("RegimeSpec needs T >= 1 and at least two nodes")
        expect = 1
        for r in self.regimes:
            if r.start != expect or r.end < r.start:
                raise ValueError("regimes must partition [1, T] contiguously")
            if r.kind not in GENERATOR_KINDS:
                raise ValueError(f"unknown generator kind {r.kind!r}")
            expect = r.end + 1
        if expect != self.T + 1:
            raise ValueError("regimes must partition [1, T] contiguously")
        if not 0.0 <= self.keep < 1.0:
            raise ValueError("keep must lie in [0, 1)")
        if self.refill is not None and not 0.0 <= self.refill <= 1.0:
            raise ValueError("refill must lie in [0, 1]")
        if not 0.0 <= self.shock <= 1.0:
            raise ValueError("shock must lie in [0, 1]")


@dataclass
class SyntheticLabels:
    regime: np.ndarray  # (T,) 1-based regime index
    anomalies: list[int]  # 1-based timesteps
    edge_counts: list[int]  # generator bookkeeping
    edge_growth: np.ndarray  # (T-1,) y^t for t = 2..T

    def to_json(self) -> str:
        return json.dumps(
            {
                "regime": self.regime.tolist(),
                "anomalies": self.anomalies,
                "edge_counts": self.edge_counts,
                "edge_growth": self.edge_growth.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticLabels":
        d = json.loads(text)
        return cls(np.asarray(d["regime"]), list(d["anomalies"]), list(d["edge_counts"]),
                   np.asarray(d["edge_growth"], dtype=np.int64))


def _upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def _draw(kind: str, params: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    iu, ju = _upper_pairs(n)
    if kind == "blocks":
        p_in = params.get("p_in", 0.2)
        p_out = params.get("p_out", 0.01)
        split = params.get("split", n // 2)
        same = (iu < split) == (ju < split)
        prob = np.where(same, p_in, p_out)
    elif kind == "community":
        prob = np.full(iu.shape, params.get("p", 0.1))
    elif kind == "hub":
        prob = np.full(iu.shape, params.get("p", 0.1))
    else:
        raise ValueError(f"unknown generator kind {kind!r}")
    mask = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[mask], ju[mask]], axis=1)
    if kind == "hub":
        hub = int(params.get("hub", 0))
        frac = float(params.get("fraction", 0.5))
        others = np.delete(np.arange(n), hub)
        k = int(round(frac * others.size))
        chosen = rng.choice(others, size=k, replace=False)
        spokes = np.stack([np.minimum(chosen, hub), np.maximum(chosen, hub)], axis=1)
        edges = np.unique(np.concatenate([edges, spokes]), axis=0)
    return edges.astype(np.int64)


def generate_synthetic(spec: RegimeSpec) -> tuple[DynamicGraph, SyntheticLabels]:
    n = spec.num_nodes
    snaps: list[SnapshotGraph] = []
    regime_of = np.zeros(spec.T, dtype=np.int64)
    counts: list[int] = []
    prev = None
    for ri, reg in enumerate(spec.regimes, start=1):
        for t in range(reg.start, reg.end + 1):
            rng = np.random.default_rng([spec.seed, t])
            fresh = _draw(reg.kind, reg.params, n, rng)
            if t > reg.start and spec.keep > 0:
                survive = prev[rng.random(prev.shape[0]) < spec.keep]
                refill = 1.0 - spec.keep if spec.refill is None else spec.refill
                thin = fresh[rng.random(fresh.shape[0]) < refill]
                edges = np.unique(np.concatenate([survive, thin]), axis=0)
            else:
                edges = fresh
            prev = np.unique(edges, axis=0) if edges.size else edges.reshape(0, 2)
            if t == reg.start and ri > 1 and spec.shock > 0:
                iu, ju = _upper_pairs(n)
                hit = rng.random(iu.shape[0]) < spec.shock
                edges = np.concatenate([edges, np.stack([iu[hit], ju[hit]], axis=1)])
            snap = SnapshotGraph.from_edges(n, edges)
            snaps.append(snap)
            counts.append(snap.num_edges)
            regime_of[t - 1] = ri
    anomalies = [r.start for r in spec.regimes[1:]]
    c = np.asarray(counts)
    growth = (c[1:] > c[:-1]).astype(np.int64)
    g = DynamicGraph(tuple(snaps), n, "1", None)
    return g, SyntheticLabels(regime_of, anomalies, counts, growth)


def three_regime_spec(seed: int = 0, num_nodes: int = 60, T: int = 12, keep: float = 0.8,
                      refill: float | None = None, shock: float = 0.05) -> RegimeSpec:
    """Two blocks, then one merged community from t=5, then a hub from t=9."""
    a, b = T // 3, 2 * T // 3
    return RegimeSpec(
        T=T,
        num_nodes=num_nodes,
        seed=seed,
        keep=keep,
        refill=refill,
        shock=shock,
        regimes=[
            Regime(1, a, "blocks", {"p_in": 0.2, "p_out": 0.005}),
            Regime(a + 1, b, "community", {"p": 0.1}),
            Regime(b + 1, T, "hub", {"p": 0.1, "fraction": 0.6, "hub": 0}),
        ],
    )
