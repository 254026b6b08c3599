"""Command-line surface.

Subcommands: train, eval, classify, search, walk, embed-graph, analyze.
Options may come from flags or a flat "key = value" config file; explicit
flags win.  Every run writes a resolved-config snapshot so it can be
replayed exactly (``--config <out>/resolved.cfg``).  Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, automl, evaluate, scoring, skipgram, trainer
from .data import KnowledgeGraph, load_dataset, relation_stats, write_dictionaries
from .sampler import EEHyperParams, make_sampler
from .trainer import TrainConfig

DATA_ENV = "KGECACHE_DATA"


class UsageError(ValueError):
    pass


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


COMMON_DEFAULTS = {
    "data": None, "train_file": None, "valid_file": None, "test_file": None,
    "column_order": "hrt", "model": "transe", "loss": "margin", "margin": 1.0,
    "l2": 0.0, "dim": 50, "batch_size": 1024, "lr": 1e-3, "seed": 0,
    "simple_average": False, "normalize_entities": False,
    "sampler": "bernoulli", "alpha1": 0.0, "alpha2": 0.0, "alpha3": 1.0,
    "n1": 50, "n2": 50, "lazy_n": 0, "variance_nu": 0.0,
}

COMMAND_DEFAULTS: dict[str, dict] = {
    "train": {**COMMON_DEFAULTS, "epochs": 100, "out": "runs/train",
              "pretrain_epochs": 0, "eval_every": 20, "negatives": 1,
              "workers": 1, "snapshot_epochs": "", "save_epochs": "",
              "track_split": "", "track_ids": ""},
    "eval": {**COMMON_DEFAULTS, "checkpoint": None, "split": "test", "out": "",
             "ranks_tsv": False},
    "classify": {**COMMON_DEFAULTS, "checkpoint": None, "out": ""},
    "search": {**COMMON_DEFAULTS, "out": "runs/search", "budget": 20,
               "algo": "smbo", "fidelity_epochs": 200, "init_design": 8,
               "workers": 1, "epochs": 200},
    "walk": {"edges": None, "out": "runs/walk", "walks_per_node": 10,
             "walk_length": 40, "p": 0.25, "q": 0.25, "seed": 0},
    "embed-graph": {"edges": None, "labels": "", "out": "runs/embed",
                    "walks_per_node": 10, "walk_length": 40, "window": 10,
                    "p": 0.25, "q": 0.25, "negatives": 5, "dim": 100,
                    "epochs": 5, "lr": 1e-3, "mode": "cache", "alpha2": 0.0,
                    "alpha3": 1.0, "n1": 50, "n2": 50, "lazy_n": 0, "seed": 0},
    "analyze": {**COMMON_DEFAULTS, "run_dir": None, "epochs": "", "triplet_ids": "0",
                "side": "tail", "out": ""},
}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge per-command defaults < config file < explicit flags."""
    defaults = COMMAND_DEFAULTS[args.command]
    merged = dict(defaults)
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            key = key.replace("-", "_")
            if key not in merged:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            merged[key] = _coerce(raw, merged[key])
    for key, value in vars(args).items():
        if key in ("func", "config", "command") or value is None:
            continue
        merged[key] = value
    merged["margin_set"] = vars(args).get("margin") is not None
    return merged


def _coerce(raw: str, default):
    if isinstance(default, bool) or raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if raw == "":
        return None
    return raw


def _snapshot(resolved: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k.replace('_', '-')} = {'' if v is None else v}"
             for k, v in sorted(resolved.items())]
    _atomic_write_text(os.path.join(out_dir, "resolved.cfg"), "\n".join(lines) + "\n")


def _load_kg(resolved: dict) -> KnowledgeGraph:
    data = resolved.get("data") or os.environ.get(DATA_ENV)
    if data:
        return load_dataset(os.path.join(data, "train.txt"),
                            os.path.join(data, "valid.txt"),
                            os.path.join(data, "test.txt"),
                            column_order=resolved.get("column_order", "hrt"))
    if resolved.get("train_file"):
        return load_dataset(resolved["train_file"], resolved["valid_file"],
                            resolved["test_file"],
                            column_order=resolved.get("column_order", "hrt"))
    raise UsageError("no dataset: pass --data DIR (train/valid/test.txt) "
                     f"or --train-file/... (or set ${DATA_ENV})")


def _ee_from(resolved: dict) -> EEHyperParams:
    return EEHyperParams(
        alpha1=resolved["alpha1"], alpha2=resolved["alpha2"],
        alpha3=resolved["alpha3"], n1=resolved["n1"], n2=resolved["n2"],
        lazy_n=resolved["lazy_n"], variance_nu=resolved["variance_nu"])


def _train_config(resolved: dict) -> TrainConfig:
    if resolved["loss"] == "logistic" and resolved.get("margin_set"):
        raise UsageError("--margin conflicts with --loss logistic")
    return TrainConfig(
        model=resolved["model"], loss=resolved["loss"], margin=resolved["margin"],
        l2=resolved["l2"], dim=resolved["dim"], batch_size=resolved["batch_size"],
        lr=resolved["lr"], epochs=resolved["epochs"], seed=resolved["seed"],
        sampler=resolved["sampler"], ee=_ee_from(resolved),
        pretrain_epochs=resolved["pretrain_epochs"],
        eval_every=resolved["eval_every"], negatives=resolved["negatives"],
        simple_average=resolved["simple_average"],
        normalize_entities=resolved["normalize_entities"],
        workers=resolved["workers"])


def _int_list(text: str | None) -> tuple[int, ...]:
    if not text:
        return ()
    return tuple(int(x) for x in str(text).split(",") if x != "")


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help=f"dataset dir with train/valid/test.txt (or ${DATA_ENV})")
    p.add_argument("--train-file")
    p.add_argument("--valid-file")
    p.add_argument("--test-file")
    p.add_argument("--column-order", choices=["hrt", "htr", "rht"])


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=list(scoring.MODEL_KINDS))
    p.add_argument("--loss", choices=["margin", "logistic"])
    p.add_argument("--margin", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--simple-average", action="store_true", default=None)
    p.add_argument("--normalize-entities", action="store_true", default=None)


def _add_ee_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sampler",
                   choices=["uniform", "bernoulli", "selfadv", "nscaching"])
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--alpha3", type=float)
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--lazy-n", type=int)
    p.add_argument("--variance-nu", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgecache",
        description="Knowledge-graph embedding with cache-based negative sampling. "
                    "Result files are TSV or JSON-lines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train embeddings on a KG")
    _add_dataset_flags(p)
    _add_model_flags(p)
    _add_ee_flags(p)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=False)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--snapshot-epochs",
                   help="comma-separated epochs at which to dump cache contents")
    p.add_argument("--save-epochs",
                   help="comma-separated epochs at which to save checkpoints")
    p.add_argument("--track-split", choices=["", "train", "valid", "test"])
    p.add_argument("--track-ids", help="triplet ids inside --track-split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered link-prediction metrics of a checkpoint")
    _add_dataset_flags(p)
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"])
    p.add_argument("--out")
    p.add_argument("--ranks-tsv", action="store_true", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="triplet classification accuracy")
    _add_dataset_flags(p)
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("search", help="hyper-parameter search over the E&E space")
    _add_dataset_flags(p)
    _add_model_flags(p)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--budget", type=int)
    p.add_argument("--algo", choices=["smbo", "random"])
    p.add_argument("--fidelity-epochs", type=int)
    p.add_argument("--init-design", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("walk", help="generate biased random walks")
    p.add_argument("--config")
    p.add_argument("--edges", required=True)
    p.add_argument("--out")
    p.add_argument("--walks-per-node", type=int)
    p.add_argument("--walk-length", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("embed-graph", help="skip-gram node embeddings from walks")
    p.add_argument("--config")
    p.add_argument("--edges", required=True)
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--walks-per-node", type=int)
    p.add_argument("--walk-length", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--negatives", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=["cache", "uniform"])
    p.add_argument("--alpha2", type=float)
    p.add_argument("--alpha3", type=float)
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--lazy-n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--classify-fractions",
                   help="e.g. 0.3,0.5,0.7 to run node classification")
    p.set_defaults(func=cmd_embed_graph)

    p = sub.add_parser("analyze", help="gradient-norm CCDF over corruptions")
    _add_dataset_flags(p)
    p.add_argument("--config")
    p.add_argument("--run-dir", required=True,
                   help="train output dir holding checkpoint_epochN.bin files")
    p.add_argument("--epochs", required=True, help="comma-separated epochs")
    p.add_argument("--triplet-ids", help="train-split triplet ids")
    p.add_argument("--side", choices=["head", "tail"])
    p.add_argument("--loss", choices=["margin", "logistic"])
    p.add_argument("--margin", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def cmd_train(resolved: dict) -> int:
    kg = _load_kg(resolved)
    config = _train_config(resolved)
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    write_dictionaries(kg, out)

    track = None
    if resolved["track_split"]:
        ids = np.array(_int_list(resolved["track_ids"]), dtype=np.int64)
        track = kg.split(resolved["track_split"])[ids]

    run = trainer.pretrain_then_switch if config.pretrain_epochs > 0 else trainer.train
    result = run(kg, config, out_dir=out,
                 log_path=os.path.join(out, "train_log.jsonl"),
                 snapshot_epochs=_int_list(resolved["snapshot_epochs"]),
                 save_epochs=_int_list(resolved["save_epochs"]),
                 track_triplets=track)
    meta = {"seed": config.seed, "epochs": config.epochs,
            "config_snapshot": "resolved.cfg", "data": resolved.get("data") or ""}
    scoring.save_checkpoint(result.store, os.path.join(out, "checkpoint.bin"), meta)
    if result.best_store is not None:
        scoring.save_checkpoint(result.best_store, os.path.join(out, "best_checkpoint.bin"),
                                {**meta, "epoch": result.best_epoch,
                                 "mrr_valid": result.best_mrr})
    if result.tracker is not None:
        lines = ["id\tmean\tvariance"]
        var = result.tracker.variance()
        for i, (mu, vr) in enumerate(zip(result.tracker.mean, var)):
            lines.append(f"{i}\t{mu:.8g}\t{vr:.8g}")
        _atomic_write_text(os.path.join(out, "variance.tsv"), "\n".join(lines) + "\n")
    print(f"trained {config.epochs} epochs; final loss "
          f"{result.log[-1]['loss']:.6g}; outputs in {out}")
    return 0


def cmd_eval(resolved: dict) -> int:
    kg = _load_kg(resolved)
    store, _ = scoring.load_checkpoint(resolved["checkpoint"])
    ranks = evaluate.filtered_ranks(kg, store, resolved["split"])
    summary = evaluate.summarize(ranks)
    payload = summary.to_dict()
    payload["split"] = resolved["split"]
    out = resolved["out"]
    if out:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "metrics.json"), payload)
        if resolved["ranks_tsv"]:
            lines = ["id\thead_rank\ttail_rank"]
            for i, (hr_, tr_) in enumerate(zip(ranks.head_ranks, ranks.tail_ranks)):
                lines.append(f"{i}\t{hr_:g}\t{tr_:g}")
            _atomic_write_text(os.path.join(out, "ranks.tsv"), "\n".join(lines) + "\n")
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_classify(resolved: dict) -> int:
    kg = _load_kg(resolved)
    store, _ = scoring.load_checkpoint(resolved["checkpoint"])
    stats = relation_stats(kg)
    sampler = make_sampler("bernoulli", kg, stats, EEHyperParams())
    valid_t, valid_l = evaluate.make_classification_set(kg, sampler, "valid",
                                                        resolved["seed"])
    test_t, test_l = evaluate.make_classification_set(kg, sampler, "test",
                                                      resolved["seed"] + 1)
    clf = evaluate.fit_thresholds(store, valid_t, valid_l)
    payload = {
        "valid_accuracy": evaluate.classify(clf, store, valid_t, valid_l),
        "test_accuracy": evaluate.classify(clf, store, test_t, test_l),
        "n_valid": int(len(valid_l)), "n_test": int(len(test_l)),
    }
    if resolved["out"]:
        os.makedirs(resolved["out"], exist_ok=True)
        _write_json(os.path.join(resolved["out"], "classification.json"), payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_search(resolved: dict) -> int:
    kg = _load_kg(resolved)
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    space = automl.SearchSpace()
    base = dict(resolved)
    base["sampler"] = "nscaching"
    base["epochs"] = resolved["fidelity_epochs"]

    def objective(params: dict) -> float:
        cfg_vals = dict(base)
        cfg_vals.update({k: params[k] for k in ("alpha1", "alpha2", "alpha3")})
        cfg_vals["n1"], cfg_vals["n2"] = params["n1"], params["n2"]
        cfg_vals.setdefault("lazy_n", 0)
        cfg_vals.setdefault("variance_nu", 0.0)
        cfg_vals.setdefault("pretrain_epochs", 0)
        cfg_vals.setdefault("eval_every", max(1, resolved["fidelity_epochs"] // 4))
        cfg_vals.setdefault("negatives", 1)
        config = _train_config(cfg_vals)
        result = trainer.train(kg, config)
        return result.best_mrr if np.isfinite(result.best_mrr) else 0.0

    search_fn = automl.smbo_search if resolved["algo"] == "smbo" else automl.random_search
    kwargs = {"history_path": os.path.join(out, "history.jsonl")}
    if resolved["algo"] == "smbo":
        kwargs["init_design"] = resolved["init_design"]
    result = search_fn(space, resolved["budget"], objective, resolved["seed"], **kwargs)
    payload = {"best_params": result.best.params, "best_objective": result.best.objective,
               "trials": len(result.history)}
    _write_json(os.path.join(out, "best.json"), payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_walk(resolved: dict) -> int:
    graph = skipgram.load_edge_list(resolved["edges"])
    cfg = skipgram.WalkConfig(walks_per_node=resolved["walks_per_node"],
                              walk_length=resolved["walk_length"],
                              p=resolved["p"], q=resolved["q"])
    walks, lengths = skipgram.generate_walks(graph, cfg, resolved["seed"])
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    names = graph.node_names or [str(i) for i in range(graph.n_nodes)]
    lines = [" ".join(names[n] for n in walk[:size])
             for walk, size in zip(walks, lengths)]
    _atomic_write_text(os.path.join(out, "walks.txt"), "\n".join(lines) + "\n")
    print(f"wrote {len(lines)} walks to {out}/walks.txt")
    return 0


def cmd_embed_graph(resolved: dict) -> int:
    graph = skipgram.load_edge_list(resolved["edges"], resolved["labels"] or None)
    ee = EEHyperParams(alpha2=resolved["alpha2"], alpha3=resolved["alpha3"],
                       n1=resolved["n1"], n2=resolved["n2"], lazy_n=resolved["lazy_n"])
    cfg = skipgram.WalkConfig(
        walks_per_node=resolved["walks_per_node"], walk_length=resolved["walk_length"],
        window=resolved["window"], p=resolved["p"], q=resolved["q"],
        negatives=resolved["negatives"], dim=resolved["dim"],
        epochs=resolved["epochs"], lr=resolved["lr"], ee=ee)
    walks, lengths = skipgram.generate_walks(graph, cfg, resolved["seed"])
    result = skipgram.train_skipgram(walks, lengths, graph.n_nodes, cfg,
                                     resolved["seed"], mode=resolved["mode"])
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    names = graph.node_names or [str(i) for i in range(graph.n_nodes)]
    lines = [f"{names[i]} " + " ".join(f"{x:.6g}" for x in row)
             for i, row in enumerate(result.embeddings)]
    _atomic_write_text(os.path.join(out, "embeddings.txt"), "\n".join(lines) + "\n")
    payload = {"epoch_losses": result.epoch_losses, "mode": resolved["mode"]}
    if resolved["classify_fractions"] and graph.labels is not None:
        fractions = [float(x) for x in resolved["classify_fractions"].split(",")]
        payload["classification"] = {
            str(f): skipgram.classify_nodes(result.embeddings, graph.labels, f,
                                            resolved["seed"])
            for f in fractions}
    _write_json(os.path.join(out, "embed_report.json"), payload)
    print(json.dumps({"out": out, "epochs": resolved["epochs"],
                      "final_loss": result.epoch_losses[-1]}, sort_keys=True))
    return 0


def cmd_analyze(resolved: dict) -> int:
    kg = _load_kg(resolved)
    loss = scoring.LossSpec(kind=resolved["loss"], margin=resolved["margin"],
                            l2=resolved["l2"])
    out = resolved["out"] or resolved["run_dir"]
    os.makedirs(out, exist_ok=True)
    for epoch in _int_list(resolved["epochs"]):
        ckpt = os.path.join(resolved["run_dir"], f"checkpoint_epoch{epoch}.bin")
        if not os.path.exists(ckpt):
            raise UsageError(f"missing checkpoint {ckpt}; train with --save-epochs")
        store, _ = scoring.load_checkpoint(ckpt)
        for tid in _int_list(resolved["triplet_ids"]):
            triplet = kg.train[tid]
            x, ccdf = analysis.grad_norm_ccdf(store, loss, kg, triplet,
                                              side=resolved["side"])
            analysis.write_ccdf_tsv(
                os.path.join(out, f"ccdf_epoch{epoch}_triplet{tid}.tsv"), x, ccdf)
    print(f"ccdf files written to {out}")
    return 0


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        resolved = _resolve(args)
        out = resolved.get("out")
        if out:
            _snapshot({k: v for k, v in resolved.items()
                       if k not in ("margin_set", "func")}, out)
        return args.func(resolved)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
