"""k-step self-return probabilities of the simple random walk on a snapshot.

Row ``i`` of the result holds ``[(T)_ii, (T^2)_ii, ..., (T^k)_ii]``.  The
diagonal of ``A D^-1`` powers equals that of ``D^-1 A`` powers (the two are
similar matrices), so the row-stochastic operator is propagated from unit
vectors and the i-th component read off after every step.  Degree-0 nodes have
an all-zero transition row and therefore an all-zero encoding.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import DynamicGraph, SnapshotGraph

STRATEGIES = ("blocked", "frontier", "dense")


def transition_operator(g: SnapshotGraph) -> sp.csr_matrix:
    """Row-stochastic ``D^-1 A`` in CSR form; degree-0 rows are empty."""
    deg = g.degrees.astype(np.float64)
    inv = np.zeros_like(deg)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    data = np.repeat(inv, g.degrees)
    return sp.csr_matrix((data, g.indices, g.indptr), shape=(g.num_nodes, g.num_nodes))


def _blocked(P: sp.csr_matrix, nodes: np.ndarray, k: int, block: int) -> np.ndarray:
    n = P.shape[0]
    out = np.zeros((nodes.size, k))
    for lo in range(0, nodes.size, block):
        idx = nodes[lo:lo + block]
        cols = np.arange(idx.size)
        X = np.zeros((n, idx.size))
        X[idx, cols] = 1.0
        for s in range(k):
            X = P @ X
            out[lo:lo + idx.size, s] = X[idx, cols]
    return out


def _frontier(P: sp.csr_matrix, nodes: np.ndarray, k: int) -> np.ndarray:
    # row-vector mass propagation; only the reachable ball is ever stored
    out = np.zeros((nodes.size, k))
    n = P.shape[0]
    for r, i in enumerate(nodes):
        x = sp.csr_matrix(([1.0], ([0], [i])), shape=(1, n))
        for s in range(k):
            x = x @ P
            out[r, s] = x[0, i]
    return out


def return_probabilities(g: SnapshotGraph, k: int, strategy: str = "blocked",
                         block: int = 256) -> np.ndarray:
    """(n, k) float64 matrix of self-return probabilities after 1..k steps."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    n = g.num_nodes
    R = np.zeros((n, k))
    nodes = g.nodes
    if nodes.size == 0:
        return R
    P = transition_operator(g)
    if strategy == "dense":
        Pd = P.toarray()
        M = np.eye(n)
        for s in range(k):
            M = M @ Pd
            R[:, s] = np.diag(M)
        R[g.degrees == 0] = 0.0
        return R
    if strategy == "frontier":
        R[nodes] = _frontier(P, nodes, k)
    else:
        R[nodes] = _blocked(P, nodes, k, block)
    return R


def closed_form_two_step(g: SnapshotGraph) -> np.ndarray:
    """(T^2)_ii = sum over neighbours j of 1 / (deg(i) deg(j))."""
    deg = g.degrees.astype(np.float64)
    out = np.zeros(g.num_nodes)
    for i in g.nodes:
        nb = g.neighbors(i)
        out[i] = np.sum(1.0 / (deg[i] * deg[nb]))
    return out


def all_return_probabilities(g: DynamicGraph, k: int, **kw) -> list[np.ndarray]:
    return [return_probabilities(s, k, **kw) for s in g.snapshots]


# ---------------------------------------------------------------------------
# cache files: header (n, k) then row-major little-endian doubles


def cache_key(g: SnapshotGraph, k: int) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<QQ", g.num_nodes, k))
    h.update(g.indptr.astype("<i8").tobytes())
    h.update(g.indices.astype("<i8").tobytes())
    return h.hexdigest()[:32]


def save_rpm(R: np.ndarray, path) -> None:
    n, k = R.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", n, k))
        fh.write(np.ascontiguousarray(R, dtype="<f8").tobytes())


def load_rpm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    n, k = struct.unpack_from("<QQ", data, 0)
    if len(data) != 16 + 8 * n * k:
        raise ValueError(f"{path}: cache size does not match its header")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(n, k).astype(np.float64)


def cached_return_probabilities(g: SnapshotGraph, k: int, cache_dir) -> np.ndarray:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"rwpe-{cache_key(g, k)}.bin"
    if path.exists():
        return load_rpm(path)
    R = return_probabilities(g, k)
    save_rpm(R, path)
    return R
