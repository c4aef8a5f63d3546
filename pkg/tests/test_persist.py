import struct

import numpy as np
import pytest
import torch

from evoformer.encoder import ModelConfig
from evoformer.graph import generate_synthetic, three_regime_spec
from evoformer.persist import (
    ArtifactError,
    CKPT_MAGIC,
    artifact_header,
    check_header,
    config_hash,
    load_checkpoint,
    read_checkpoint,
    read_embeddings,
    read_float_lines,
    read_int_lines,
    read_segmentation,
    save_checkpoint,
    write_embeddings,
    write_segmentation,
)
from evoformer.rwpe import all_return_probabilities
from evoformer.temporal import EvoFormer, TrainConfig, train
from evoformer.walks import WalkConfig, generate_corpus


@pytest.fixture(scope="module")
def small():
    g, _ = generate_synthetic(three_regime_spec(seed=0, num_nodes=20, T=5))
    corpus = generate_corpus(g, WalkConfig(W=1, L=6))
    rpms = all_return_probabilities(g, 3)
    mcfg = ModelConfig(num_nodes=g.vocab_size, T=g.T, d=8, layers=1, heads=2, k=3)
    tcfg = TrainConfig(epochs=1, batch_size=16, learning_rate=1e-3, segments=2)
    return g, corpus, rpms, mcfg, tcfg


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": {"c": 2, "d": 3}}) == config_hash({"b": {"d": 3, "c": 2}, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_header_roundtrip_and_mismatch():
    line = artifact_header("embeddings", "abc123", 7)
    assert check_header(line, "embeddings", "x") == {"config": "abc123", "seed": "7"}
    with pytest.raises(ArtifactError, match="not an evoformer segmentation"):
        check_header(line, "segmentation", "x")
    with pytest.raises(ArtifactError, match="v2"):
        check_header(line.replace(" v1 ", " v2 "), "embeddings", "x")


def test_embeddings_roundtrip(tmp_path):
    emb = np.random.default_rng(0).normal(size=(4, 3))
    path = tmp_path / "emb.txt"
    write_embeddings(path, emb, "h", 1)
    assert np.array_equal(read_embeddings(path), emb)  # repr keeps every bit
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ArtifactError, match="4x3"):
        read_embeddings(path)
    with pytest.raises(ArtifactError, match="no such file"):
        read_embeddings(tmp_path / "missing.txt")


def test_segmentation_roundtrip(tmp_path):
    path = tmp_path / "seg.txt"
    write_segmentation(path, np.array([1, 1, 2, 3]), "h", 0)
    assert read_segmentation(path).tolist() == [1, 1, 2, 3]
    path.write_text("1 1 2\n")
    with pytest.raises(ArtifactError):
        read_segmentation(path)


def test_line_files(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("# anomalies\n5\n\n9\n")
    assert read_int_lines(p) == [5, 9]
    p.write_text("1.5\n-2\n")
    assert read_float_lines(p) == [1.5, -2.0]
    p.write_text("x\n")
    with pytest.raises(ArtifactError):
        read_int_lines(p)
    with pytest.raises(ArtifactError):
        read_float_lines(p)


def test_checkpoint_load_save_bit_identical(tmp_path, small):
    g, corpus, rpms, mcfg, tcfg = small
    res = train(g, corpus, EvoFormer(mcfg, 0), tcfg, rpms)
    a = tmp_path / "a.ckpt"
    blob = save_checkpoint(a, res.model, tcfg, 1, res.optimizer, {"note": "x"})
    model, tc2, opt, header = load_checkpoint(a)
    assert tc2 == tcfg and header["extra"] == {"note": "x"} and header["epoch"] == 1
    assert header["rng"] == {"seed": 0, "next_epoch": 2}
    assert save_checkpoint(None, model, tc2, 1, opt, {"note": "x"}) == blob
    for k, v in res.model.state_dict().items():
        assert torch.equal(model.state_dict()[k], v)


def test_checkpoint_resume_matches_uninterrupted(tmp_path, small):
    g, corpus, rpms, mcfg, tcfg = small
    two = TrainConfig(**{**tcfg.__dict__, "epochs": 2})
    full = train(g, corpus, EvoFormer(mcfg, 0), two, rpms)

    half = train(g, corpus, EvoFormer(mcfg, 0), tcfg, rpms)
    path = tmp_path / "half.ckpt"
    save_checkpoint(path, half.model, tcfg, 1, half.optimizer)
    model, tc, opt, header = load_checkpoint(path)
    resumed = train(g, corpus, model, tc, rpms, optimizer=opt, start_epoch=header["rng"]["next_epoch"])
    assert np.array_equal(resumed.embeddings, full.embeddings)
    assert resumed.history[-1].L1 == full.history[-1].L1


def test_checkpoint_corruption(tmp_path, small):
    _, _, _, mcfg, tcfg = small
    path = tmp_path / "c.ckpt"
    blob = save_checkpoint(path, EvoFormer(mcfg), tcfg, 0)
    cases = {
        "not a checkpoint": b"NOTACKPT" + blob[8:],
        "version 9": CKPT_MAGIC + struct.pack("<I", 9) + blob[12:],
        "truncated": blob[:-5],
        "does not match": blob + b"\0",
    }
    for msg, data in cases.items():
        path.write_bytes(data)
        with pytest.raises(ArtifactError, match=msg):
            read_checkpoint(path)
