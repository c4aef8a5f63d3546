import numpy as np
import pytest

from evoformer import cli
from evoformer.config import DEFAULTS, ConfigError, RunConfig
from evoformer.graph import generate_synthetic, three_regime_spec
from evoformer.persist import read_embeddings

SMALL = ["--seed", "3", "--set", "walk.W=1", "--set", "walk.L=6", "--set", "model.d=8",
         "--set", "model.layers=1", "--set", "model.heads=2", "--set", "model.k=3",
         "--set", "train.segments=2", "--set", "train.epochs=1"]


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# config


def test_defaults_mirror_reported_settings():
    rc = RunConfig.default()
    assert (rc["train.epochs"], rc["train.learning_rate"], rc["train.batch_size"]) == (15, 1e-4, 32)
    assert (rc["walk.W"], rc["walk.L"], rc["model.k"], rc["model.layers"], rc["model.d"]) == (5, 32, 16, 8, 256)
    assert (rc["model.heads"], rc["train.segments"]) == (8, 8)
    assert (rc["train.lambda1"], rc["train.lambda2"], rc["train.lambda3"]) == (5.0, 10.0, 5.0)


def test_desk_preset():
    rc = RunConfig.default(desk=True)
    assert (rc["model.d"], rc["model.layers"], rc["model.heads"], rc["model.k"], rc["train.epochs"]) == (32, 2, 4, 8, 20)


def test_file_parsing_and_hash_invariance(tmp_path):
    a = tmp_path / "a.ini"
    a.write_text("[walk]\nW = 3\nL=10\n[train]\nstrict_alg1 = yes\n")
    b = tmp_path / "b.ini"
    b.write_text("# same values, other order\n[train]\nstrict_alg1=true\n\n[walk]\nL = 10\nW=3\n")
    ra, rb = RunConfig.from_file(a), RunConfig.from_file(b)
    assert ra["walk.W"] == 3 and ra["train.strict_alg1"] is True
    assert ra.hash == rb.hash
    assert ra.hash != RunConfig.default().hash


def test_dumps_reparses_to_same_hash(tmp_path):
    rc = RunConfig.default(desk=True)
    rc.set("walk.q", "2.5")
    path = tmp_path / "c.ini"
    path.write_text(rc.dumps())
    assert RunConfig.from_file(path).hash == rc.hash


def test_unknown_keys_all_reported(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[walk]\nW = 2\nwalks = 3\n[nope]\nx = 1\n[train]\nlamda1 = 2\n")
    with pytest.raises(ConfigError) as e:
        RunConfig.from_file(path)
    assert set(e.value.keys) == {"walk.walks", "[nope]", "train.lamda1"}


def test_type_errors():
    rc = RunConfig()
    with pytest.raises(ConfigError, match="walk.W"):
        rc.set("walk.W", "many")
    with pytest.raises(ConfigError, match="train.strict_alg1"):
        rc.set("train.strict_alg1", "maybe")


def test_validate_collects_keys():
    rc = RunConfig()
    rc.update({"walk": {"L": 1}, "train": {"mask_rate": 1.5, "batch_size": 0},
               "eval": {"anomaly_direction": "up", "k_list": "0"}})
    with pytest.raises(ConfigError) as e:
        rc.validate()
    assert {"walk.L", "train.mask_rate", "train.batch_size", "eval.anomaly_direction",
            "eval.k_list"} <= set(e.value.keys)


def test_derived_configs():
    rc = RunConfig.default()
    rc.set("run.seed", 9)
    assert rc.walk_config().seed == 9 and rc.train_config().seed == 9
    assert rc.model_config(10, 4).mlp_hidden is None
    assert rc.k_list == (5, 10)
    assert set(rc.to_dict()) == set(DEFAULTS)


# ---------------------------------------------------------------------------
# cli


def test_banner_shows_default_hyperparameters():
    g, _ = generate_synthetic(three_regime_spec())
    text = cli.banner(RunConfig.default(), g, 1234)
    for piece in ("batch size=32", "epochs=15", "lr=0.0001", "lambda=(5, 10, 5)", "d=256", "layers(Z)=8",
                  "heads=8", "k=16", "segments(p)=8", "W=5", "L=32"):
        assert piece in text, piece


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        run("--version")
    assert e.value.code == 0
    assert "numpy" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert run("walk", tmp_path / "missing.bin", "-o", tmp_path / "w.txt") == 3
    assert "missing.bin" in capsys.readouterr().err
    assert run("synth", "-o", tmp_path / "g.bin", "--set", "walk.W=0", "--set", "bogus.key=1") == 2
    err = capsys.readouterr().err
    assert "walk.W" in err and "[bogus]" in err
    assert run("synth", "-o", tmp_path / "g.bin", "--set", "noequals") == 2
    edges = tmp_path / "e.tsv"
    edges.write_text("a\tb\t1\nbroken line\n")
    assert run("ingest", edges, "-o", tmp_path / "g.bin") == 3
    assert "line 2" in capsys.readouterr().err
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"junk")
    assert run("embed", bad, "-o", tmp_path / "e.txt") == 3
    assert run("eval-seg", "--truth", edges) == 2


def test_ingest_writes_stats(tmp_path, capsys):
    edges = tmp_path / "e.tsv"
    edges.write_text("a\tb\t1\nb\tc\t1\na\tc\t3\n")
    assert run("ingest", edges, "-o", tmp_path / "g.bin", "--stats", tmp_path / "s.csv") == 0
    assert "sum_t |E_t| = 3" in capsys.readouterr().out
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("# evoformer stats v1 config=")
    assert lines[1:5] == ["t,nodes,edges", "1,3,2", "2,0,0", "3,2,1"]
    assert lines[5:] == ["total_union,3,3", "total_sum,5,3"]


def test_pipeline_roundtrip_and_reproducibility(tmp_path, capsys):
    outs = []
    for run_id in ("a", "b"):
        d = tmp_path / run_id
        d.mkdir()
        assert run("synth", "-o", d / "g.bin", "--labels", d / "labels.json", "--anomalies", d / "anom.txt",
                   "--nodes", 20, "--T", 6, *SMALL) == 0
        assert run("walk", d / "g.bin", "-o", d / "walks.txt", "--workers", 2 if run_id == "b" else 1, *SMALL) == 0
        assert run("train", d / "g.bin", d / "walks.txt", "-o", d / "m.ckpt", "--log", d / "log.csv", *SMALL) == 0
        assert "batch size=32" in capsys.readouterr().out
        assert run("embed", d / "m.ckpt", "-o", d / "emb.txt") == 0
        assert run("embed", d / "m.ckpt", "-o", d / "zg.txt", "--embed-source", "zg") == 0
        assert run("segment", d / "emb.txt", "-o", d / "seg.txt", "-p", 3, "--method", "topdown", *SMALL) == 0
        assert run("eval-seg", "--segmentation", d / "seg.txt", "--truth", d / "labels.json",
                   "-o", d / "segeval.csv", *SMALL) == 0
        assert run("eval-seg", "--embeddings", d / "emb.txt", "--truth", d / "labels.json",
                   "--heatmap", d / "heat.csv", "-o", d / "segeval_dp.csv", *SMALL) == 0
        assert run("eval-rank", d / "emb.txt", d / "g.bin", "--k-list", "1,3", "-o", d / "rank.csv", *SMALL) == 0
        (d / "ref.txt").write_text("".join(f"{x}\n" for x in range(6)))
        assert run("eval-anomaly", d / "m.ckpt", d / "g.bin", d / "walks.txt", "--truth", d / "anom.txt",
                   "--reference", d / "ref.txt", "-o", d / "anom.csv") == 0
        assert "MRR" in capsys.readouterr().out
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0].keys() == outs[1].keys()
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], name

    d = tmp_path / "a"
    assert read_embeddings(d / "emb.txt").shape == (6, 8)
    heat = np.loadtxt(d / "heat.csv", delimiter=",", comments="#")
    assert heat.shape == (6, 6) and np.allclose(np.diag(heat), 1.0)
    for name in ("emb.txt", "seg.txt", "segeval.csv", "rank.csv", "anom.csv", "log.csv", "heat.csv"):
        first = (d / name).read_text().splitlines()[0]
        assert first.startswith("# evoformer ") and "config=" in first and "seed=" in first, name


def test_reference_length_mismatch(tmp_path):
    assert run("synth", "-o", tmp_path / "g.bin", "--nodes", 20, "--T", 4, *SMALL) == 0
    assert run("walk", tmp_path / "g.bin", "-o", tmp_path / "w.txt", *SMALL) == 0
    assert run("train", tmp_path / "g.bin", tmp_path / "w.txt", "-o", tmp_path / "m.ckpt", *SMALL) == 0
    (tmp_path / "ref.txt").write_text("1\n2\n")
    assert run("eval-anomaly", tmp_path / "m.ckpt", tmp_path / "g.bin", tmp_path / "w.txt",
               "--reference", tmp_path / "ref.txt") == 3
