"""Checkpoints and small text artifacts (embeddings, segmentations, label files).

Checkpoint layout: ``EVOCKPT\\0``, u32 version, u32 header length, a canonical
JSON header (config, RNG state, epoch, tensor manifest), then the raw
little-endian tensor bytes in manifest order.  Identical contents always give
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .encoder import ModelConfig
from .temporal import EvoFormer, TrainConfig

CKPT_MAGIC = b"EVOCKPT\0"
CKPT_VERSION = 1
ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    """Missing, corrupt or incompatible artifact file."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def artifact_header(kind: str, cfg_hash: str, seed: int) -> str:
    return f"# evoformer {kind} v{ARTIFACT_VERSION} config={cfg_hash} seed={seed}"


def check_header(line: str, kind: str, path) -> dict:
    parts = line.split()
    if len(parts) < 4 or parts[:2] != ["#", "evoformer"] or parts[2] != kind:
        raise ArtifactError(f"{path}: not an evoformer {kind} file")
    if parts[3] != f"v{ARTIFACT_VERSION}":
        raise ArtifactError(f"{path}: {kind} format {parts[3]} is not v{ARTIFACT_VERSION}")
    return dict(p.split("=", 1) for p in parts[4:] if "=" in p)


def _data_lines(path, kind: str) -> tuple[dict, list[str]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    lines = path.read_text().splitlines()
    if not lines:
        raise ArtifactError(f"{path}: empty file")
    meta = check_header(lines[0], kind, path)
    return meta, [ln for ln in lines[1:] if ln.strip() and not ln.startswith("#")]


# ---------------------------------------------------------------------------
# checkpoints


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    arr = t.detach().cpu().contiguous().numpy()
    dt = arr.dtype.newbyteorder("<")
    return arr.astype(dt, copy=False).tobytes(), dt.str


def save_checkpoint(path, model: EvoFormer, train_cfg: TrainConfig, epoch: int,
                    optimizer: torch.optim.Optimizer | None = None, extra: dict | None = None) -> bytes:
    from dataclasses import asdict

    tensors: list[tuple[str, torch.Tensor]] = list(model.state_dict().items())
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                for key in sorted(st):
                    tensors.append((f"optim/{names[id(p)]}/{key}", torch.as_tensor(st[key])))
    manifest, blobs, offset = [], [], 0
    for name, t in tensors:
        data, dt = _tensor_bytes(t)
        manifest.append({"name": name, "shape": list(t.shape), "dtype": dt, "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    config = {"model": model.cfg.to_dict(), "train": asdict(train_cfg)}
    header = {
        "config": config,
        "config_hash": config_hash(config),
        "epoch": epoch,
        "rng": {"seed": train_cfg.seed, "next_epoch": epoch + 1},
        "tensors": manifest,
        "extra": extra or {},
    }
    hb = canonical_json(header).encode()
    payload = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb + b"".join(blobs)
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    data = path.read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ArtifactError(f"{path}: not a checkpoint")
    try:
        version, hlen = struct.unpack_from("<II", data, 8)
    except struct.error:
        raise ArtifactError(f"{path}: truncated checkpoint") from None
    if version != CKPT_VERSION:
        raise ArtifactError(f"{path}: checkpoint version {version} is not {CKPT_VERSION}")
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError:
        raise ArtifactError(f"{path}: corrupt checkpoint header") from None
    base = 16 + hlen
    tensors = {}
    for ent in header["tensors"]:
        lo = base + ent["offset"]
        if lo + ent["nbytes"] > len(data):
            raise ArtifactError(f"{path}: truncated tensor {ent['name']}")
        arr = np.frombuffer(data, dtype=np.dtype(ent["dtype"]), count=int(np.prod(ent["shape"], dtype=np.int64)),
                            offset=lo).reshape(ent["shape"])
        tensors[ent["name"]] = torch.from_numpy(arr.copy())
    if base + sum(e["nbytes"] for e in header["tensors"]) != len(data):
        raise ArtifactError(f"{path}: checkpoint size does not match its manifest")
    return header, tensors


def load_checkpoint(path) -> tuple[EvoFormer, TrainConfig, torch.optim.Optimizer, dict]:
    header, tensors = read_checkpoint(path)
    mcfg = ModelConfig(**header["config"]["model"])
    tcfg = TrainConfig(**header["config"]["train"])
    model = EvoFormer(mcfg, tcfg.seed)
    state = {k: v for k, v in tensors.items() if not k.startswith("optim/")}
    dtype = next(iter(state.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(state)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    params = dict(model.named_parameters())
    for key, t in tensors.items():
        if not key.startswith("optim/"):
            continue
        _, pname, field = key.split("/", 2)
        opt.state[params[pname]][field] = t
    return model, tcfg, opt, header


# ---------------------------------------------------------------------------
# text artifacts


def write_embeddings(path, emb: np.ndarray, cfg_hash: str, seed: int, source: str = "wtm") -> None:
    T, d = emb.shape
    lines = [artifact_header("embeddings", cfg_hash, seed) + f" source={source}", f"{T} {d}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in emb]
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path) -> np.ndarray:
    _, rows = _data_lines(path, "embeddings")
    try:
        T, d = (int(x) for x in rows[0].split())
        emb = np.array([[float(x) for x in r.split()] for r in rows[1:]], dtype=np.float64)
    except (ValueError, IndexError):
        raise ArtifactError(f"{path}: malformed embedding matrix") from None
    if emb.shape != (T, d):
        raise ArtifactError(f"{path}: header says {T}x{d}, found {emb.shape}")
    return emb


def write_segmentation(path, v: np.ndarray, cfg_hash: str, seed: int) -> None:
    Path(path).write_text(artifact_header("segmentation", cfg_hash, seed) + "\n"
                          + " ".join(str(int(x)) for x in v) + "\n")


def read_segmentation(path) -> np.ndarray:
    _, rows = _data_lines(path, "segmentation")
    if len(rows) != 1:
        raise ArtifactError(f"{path}: expected one line of segment ids")
    return np.array([int(x) for x in rows[0].split()], dtype=np.int64)


def write_matrix_csv(path, M: np.ndarray, cfg_hash: str, seed: int, kind: str = "heatmap") -> None:
    lines = [artifact_header(kind, cfg_hash, seed)]
    lines += [",".join(f"{x:.10g}" for x in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def read_int_lines(path) -> list[int]:
    """Anomaly ground truth: one 1-based timestep per line, '#' comments allowed."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    out = []
    for ln in path.read_text().splitlines():
        ln = ln.strip()
        if ln and not ln.startswith("#"):
            try:
                out.append(int(ln))
            except ValueError:
                raise ArtifactError(f"{path}: not an integer: {ln!r}") from None
    return out


def read_float_lines(path) -> list[float]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    out = []
    for ln in path.read_text().splitlines():
        ln = ln.strip()
        if ln and not ln.startswith("#"):
            try:
                out.append(float(ln))
            except ValueError:
                raise ArtifactError(f"{path}: not a number: {ln!r}") from None
    return out
