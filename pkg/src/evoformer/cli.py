"""``evoformer`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage or config error, 3 missing/corrupt data,
4 numeric divergence.  Every artifact written carries the config hash and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .encoder import NonFiniteGradient
from .evaluation import (
    AnomalyReport,
    anomaly_mrr,
    anomaly_scores,
    embedding_heatmap,
    mcs_matrix,
    rank_metrics,
    segmentation_metrics,
    spearman,
)
from .graph import (
    EmptyGraphError,
    GraphFormatError,
    SyntheticLabels,
    generate_synthetic,
    ingest_edge_list,
    load_graph,
    save_graph,
    snapshot_stats,
    three_regime_spec,
)
from .persist import (
    ArtifactError,
    artifact_header,
    load_checkpoint,
    read_embeddings,
    read_float_lines,
    read_int_lines,
    read_segmentation,
    save_checkpoint,
    write_embeddings,
    write_matrix_csv,
    write_segmentation,
)
from .pipeline import segment
from .rwpe import all_return_probabilities
from .temporal import EvoFormer, TrainingDiverged, top_down_segmentation, train
from .walks import generate_corpus, load_corpus, save_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("evoformer")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def build_config(args) -> RunConfig:
    """Defaults, then --desk, then the config file, then --set, then dedicated flags.

    Every offending key is collected before reporting.
    """
    rc = RunConfig.from_file(_need(args.config), args.desk) if args.config else RunConfig.default(args.desk)
    overrides = []
    if args.seed is not None:
        overrides.append(("run.seed", args.seed))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError([item], "expected section.key=value")
        overrides.append((key.strip(), value.strip()))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    bad = []
    for key, value in overrides:
        try:
            rc.set(key, value)
        except ConfigError as e:
            bad += e.keys
    try:
        rc.validate()
    except ConfigError as e:
        bad += [k for k in e.keys if k not in bad]
    if bad:
        raise ConfigError(bad)
    return rc


# command-line flags that shadow config keys
FLAG_KEYS = {
    "resolution": "run.resolution",
    "mlm_norm": "train.mlm_norm",
    "edge_input": "train.edge_input",
    "strict_alg1": "train.strict_alg1",
    "split_select": "train.split_select",
    "embed_source": "eval.embed_source",
    "anomaly_direction": "eval.anomaly_direction",
    "method": "eval.segment_method",
    "k_list": "eval.k_list",
    "epochs": "train.epochs",
    "lr": "train.learning_rate",
}


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    return path


def _load_graph(path):
    return load_graph(_need(path))[0]


def _load_model(path):
    model, _, _, header = load_checkpoint(_need(path))
    rc = RunConfig()
    stored = header.get("extra", {}).get("run_config")
    if stored:
        rc.update(stored)
    return model, rc, header


def _emit(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _truth_labels(path) -> np.ndarray:
    path = _need(path)
    text = path.read_text()
    if path.suffix == ".json":
        try:
            return np.asarray(SyntheticLabels.from_json(text).regime)
        except (KeyError, ValueError):
            raise ArtifactError(f"{path}: not a synthetic labels file") from None
    vals = [int(x) for ln in text.splitlines() if not ln.startswith("#") for x in ln.split()]
    if not vals:
        raise ArtifactError(f"{path}: no labels")
    return np.asarray(vals)


def _anomaly_truth(path) -> list[int]:
    path = _need(path)
    if path.suffix == ".json":
        return list(SyntheticLabels.from_json(path.read_text()).anomalies)
    return read_int_lines(path)


def banner(rc: RunConfig, graph, n_walks: int) -> str:
    m, t, w = rc.values["model"], rc.values["train"], rc.values["walk"]
    lines = [
        f"evoformer {__version__}  config={rc.hash}  seed={rc.seed}",
        f"data:   T={graph.T} nodes={graph.vocab_size} walks={n_walks} (W={w['W']}, L={w['L']}, p={w['p']}, q={w['q']})",
        f"model:  d={m['d']} layers(Z)={m['layers']} heads={m['heads']} k={m['k']}",
        f"train:  epochs={t['epochs']} batch size={t['batch_size']} lr={t['learning_rate']:g} "
        f"segments(p)={t['segments']} mask={t['mask_rate']}",
        f"loss:   lambda=({t['lambda1']:g}, {t['lambda2']:g}, {t['lambda3']:g}) mlm_norm={t['mlm_norm']} "
        f"edge_input={t['edge_input']}",
        "optim:  Adam(0.9, 0.999, 1e-8), fixed learning rate",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, rc: RunConfig) -> None:
    src = _need(args.input)
    with open(src, encoding="utf-8") as fh:
        g = ingest_edge_list(fh, rc.resolution)
    save_graph(g, args.output, {"config_hash": rc.hash, "seed": rc.seed})
    stats = snapshot_stats(g)
    if args.stats:
        _emit(args.stats, artifact_header("stats", rc.hash, rc.seed) + "\n" + stats.to_csv())
    print(stats.to_text(), end="")


def cmd_synth(args, rc: RunConfig) -> None:
    spec = three_regime_spec(seed=rc.seed, num_nodes=args.nodes, T=args.T)
    g, labels = generate_synthetic(spec)
    save_graph(g, args.output, {"config_hash": rc.hash, "seed": rc.seed, "generator": "three-regime"})
    if args.labels:
        Path(args.labels).write_text(labels.to_json() + "\n")
    if args.anomalies:
        _emit(args.anomalies, artifact_header("anomalies", rc.hash, rc.seed) + "\n"
              + "".join(f"{t}\n" for t in labels.anomalies))
    print(snapshot_stats(g).to_text(), end="")


def cmd_walk(args, rc: RunConfig) -> None:
    g = _load_graph(args.graph)
    corpus = generate_corpus(g, rc.walk_config(), workers=args.workers)
    save_corpus(corpus, args.output, {"config_hash": rc.hash, "seed": rc.seed, "graph": g.digest()})
    print(f"{len(corpus)} walks of length {corpus.L} -> {args.output}")


def cmd_train(args, rc: RunConfig) -> None:
    g = _load_graph(args.graph)
    corpus = load_corpus(_need(args.corpus))
    if len(corpus) == 0:
        raise ArtifactError(f"{args.corpus}: empty corpus")
    if corpus.t.max() > g.T or corpus.nodes.max() >= g.vocab_size:
        raise ArtifactError(f"{args.corpus}: corpus does not match graph {args.graph}")
    print(banner(rc, g, len(corpus)), end="", flush=True)
    rpms = all_return_probabilities(g, rc["model.k"])
    model = EvoFormer(rc.model_config(g.vocab_size, g.T), rc.seed)
    tcfg = rc.train_config()
    res = train(g, corpus, model, tcfg, rpms)
    for h in res.history:
        print(f"epoch {h.epoch:>3}  L1={h.L1:.4f}  L2={h.L2:.4f}  L3={h.L3:.4f}  total={h.total:.4f}")
    extra = {"run_config": rc.to_dict(), "run_hash": rc.hash, "graph": g.digest()}
    save_checkpoint(args.output, res.model, tcfg, tcfg.epochs, res.optimizer, extra)
    if args.log:
        _emit(args.log, res.log_csv(artifact_header("trainlog", rc.hash, rc.seed)))
    print(f"checkpoint -> {args.output}")


def cmd_embed(args, rc: RunConfig) -> None:
    model, stored, header = _load_model(args.checkpoint)
    source = args.embed_source or stored["eval.embed_source"]
    v = None
    if source == "zg":
        W = model.export_embeddings("wtm")
        v = top_down_segmentation(W, stored["train.segments"], stored["train.strict_alg1"],
                                  stored["train.split_select"])
    emb = model.export_embeddings(source, v)
    write_embeddings(args.output, emb, stored.hash, stored.seed, source)
    print(f"{emb.shape[0]} x {emb.shape[1]} {source} embeddings -> {args.output}")


def cmd_segment(args, rc: RunConfig) -> None:
    emb = read_embeddings(_need(args.embeddings))
    p = args.p or rc["train.segments"]
    if not 1 <= p <= emb.shape[0]:
        raise UsageError(f"-p must lie in 1..{emb.shape[0]}")
    v = segment(emb, p, rc["eval.segment_method"], rc["train.strict_alg1"], rc["train.split_select"])
    write_segmentation(args.output, v, rc.hash, rc.seed)
    print(" ".join(map(str, v.tolist())))


def cmd_eval_rank(args, rc: RunConfig) -> None:
    emb = read_embeddings(_need(args.embeddings))
    g = _load_graph(args.graph)
    if emb.shape[0] != g.T:
        raise ArtifactError(f"{args.embeddings}: {emb.shape[0]} rows but graph has T={g.T}")
    rep = rank_metrics(emb, mcs_matrix(g), rc.k_list)
    _emit(args.output, artifact_header("rank", rc.hash, rc.seed) + "\n" + rep.to_csv())
    print(rep.to_text(), end="")


def cmd_eval_anomaly(args, rc: RunConfig) -> None:
    model, stored, _ = _load_model(args.checkpoint)
    g = _load_graph(args.graph)
    corpus = load_corpus(_need(args.corpus))
    direction = args.anomaly_direction or stored["eval.anomaly_direction"]
    rpms = all_return_probabilities(g, model.cfg.k)
    scores = anomaly_scores(model, corpus, g, rpms, direction, stored["eval.score_mask_rate"], stored.seed)
    rep = AnomalyReport(scores)
    if args.truth:
        rep.mrr = anomaly_mrr(scores, _anomaly_truth(args.truth))
    if args.reference:
        ref = read_float_lines(_need(args.reference))
        if len(ref) != g.T:
            raise ArtifactError(f"{args.reference}: {len(ref)} values but T={g.T}")
        rep.spearman = spearman(scores, ref)
    _emit(args.output, artifact_header("anomaly", stored.hash, stored.seed) + "\n" + rep.to_csv())
    if rep.mrr is not None:
        print(f"MRR {rep.mrr:.4f}")
    if rep.spearman is not None:
        print(f"Spearman {rep.spearman:.4f}")


def cmd_eval_seg(args, rc: RunConfig) -> None:
    if not (args.segmentation or args.embeddings):
        raise UsageError("need --segmentation or --embeddings")
    truth = _truth_labels(args.truth)
    emb = read_embeddings(_need(args.embeddings)) if args.embeddings else None
    if args.segmentation:
        pred = read_segmentation(_need(args.segmentation))
    else:
        p = args.p or int(len(np.unique(truth)))
        pred = segment(emb, p, rc["eval.segment_method"], rc["train.strict_alg1"], rc["train.split_select"])
    if pred.size != truth.size:
        raise ArtifactError(f"segmentation has {pred.size} entries, truth has {truth.size}")
    rep = segmentation_metrics(pred, truth)
    _emit(args.output, artifact_header("segeval", rc.hash, rc.seed) + "\n" + rep.to_csv())
    if args.heatmap:
        if emb is None:
            raise UsageError("--heatmap needs --embeddings")
        write_matrix_csv(args.heatmap, embedding_heatmap(emb), rc.hash, rc.seed)
    print(rep.to_text(), end="")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    build = f"evoformer {__version__} (python {platform.python_version()}, numpy {np.__version__})"
    ap = argparse.ArgumentParser(prog="evoformer", description="Dynamic graph embeddings with evolution-aware transformers.")
    ap.add_argument("--version", action="version", version=build)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (INI sections)")
    common.add_argument("--desk", action="store_true", help="laptop-scale preset (d=32, Z=2, heads 4, k=8, 20 epochs)")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="edge list -> graph container")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--resolution")
    p.add_argument("--stats", help="write per-snapshot stats CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="three-regime synthetic graph")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--labels", help="ground-truth labels JSON")
    p.add_argument("--anomalies", help="anomaly timesteps, one per line")
    p.add_argument("--nodes", type=int, default=60)
    p.add_argument("--T", type=int, default=12)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("walk", parents=[common], help="graph -> walk corpus")
    p.add_argument("graph")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("train", parents=[common], help="joint training -> checkpoint")
    p.add_argument("graph")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mlm-norm", choices=("sequence", "position"))
    p.add_argument("--edge-input", choices=("zg", "wtm"))
    p.add_argument("--strict-alg1", action="store_const", const=True)
    p.add_argument("--split-select", choices=("longest", "gain"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=[common], help="checkpoint -> graph embeddings")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--embed-source", choices=("wtm", "zg"))
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("segment", parents=[common], help="embeddings -> segmentation vector")
    p.add_argument("embeddings")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-p", type=int)
    p.add_argument("--method", choices=("topdown", "dp"))
    p.add_argument("--strict-alg1", action="store_const", const=True)
    p.add_argument("--split-select", choices=("longest", "gain"))
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval-rank", parents=[common], help="similarity ranking against MCS")
    p.add_argument("embeddings")
    p.add_argument("graph")
    p.add_argument("-o", "--output")
    p.add_argument("--k-list")
    p.set_defaults(func=cmd_eval_rank)

    p = sub.add_parser("eval-anomaly", parents=[common], help="anomaly scores, MRR and Spearman")
    p.add_argument("checkpoint")
    p.add_argument("graph")
    p.add_argument("corpus")
    p.add_argument("-o", "--output")
    p.add_argument("--truth", help="anomalous timesteps (one per line) or labels JSON")
    p.add_argument("--reference", help="reference series, T floats one per line")
    p.add_argument("--anomaly-direction", choices=("high", "low"))
    p.set_defaults(func=cmd_eval_anomaly)

    p = sub.add_parser("eval-seg", parents=[common], help="segmentation ACC / NMI / F1")
    p.add_argument("--segmentation")
    p.add_argument("--embeddings")
    p.add_argument("--truth", required=True, help="labels JSON or whitespace-separated labels")
    p.add_argument("-p", type=int)
    p.add_argument("--method", choices=("topdown", "dp"))
    p.add_argument("--strict-alg1", action="store_const", const=True)
    p.add_argument("--split-select", choices=("longest", "gain"))
    p.add_argument("--heatmap", help="write the T x T cosine heatmap CSV")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval_seg)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        rc = build_config(args)
        args.func(args, rc)
    except (ConfigError, UsageError) as e:
        print(f"evoformer: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ArtifactError, GraphFormatError, EmptyGraphError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"evoformer: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteGradient) as e:
        print(f"evoformer: numeric divergence: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"evoformer: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
