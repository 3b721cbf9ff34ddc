"""Command line interface.

Subcommands: prepare, inspect, train, eval, ablate. Options resolve as
built-in defaults, overridden by a ``--config`` key=value file, overridden
by explicit flags; every run writes the resolved configuration next to
its outputs so it can be replayed with ``--config``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .autodiff import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, GraphQAError, NumericsError
from .graph import GraphOptions, build_reasoning_graph, graph_to_dot, \
    graph_to_json, add_reverse_edges, compute_hop_distances, \
    entity_only_graph, levi_transform, prune_inside_edges
from .kb import (KnowledgeBase, QADataset, Vocabulary, extract_subgraph,
                 load_kb, load_qa, save_kb, save_qa, vocab_from_kb)
from .model import ModelConfig
from .synthetic import generate_synthetic, parse_spec_file
from .training import (TrainConfig, evaluate, run_ablations, save_history,
                       split_dev, train)

# key -> (type, default); types: str, int, float, bool, optint
_SCHEMA: dict[str, tuple[str, object]] = {
    "kb": ("str", None),
    "qa": ("str", None),
    "dev_qa": ("str", None),
    "synthetic": ("str", None),
    "checkpoint": ("str", None),
    "embeddings": ("str", None),
    "out": ("str", None),
    "seed": ("int", 0),
    "hops": ("int", 1),
    "node_budget": ("int", 500),
    "epochs": ("int", 30),
    "batch_size": ("int", 8),
    "patience": ("optint", None),
    "word_dim": ("int", 100),
    "question_dim": ("int", 100),
    "layers": ("int", 2),
    "max_distance_token": ("int", 8),
    "index": ("int", 0),
    "learning_rate": ("float", 1e-3),
    "dropout": ("float", 0.1),
    "dev_fraction": ("float", 0.1),
    "phi": ("str", "tanh"),
    "relation_node_mode": ("str", "instance"),
    "no_rn": ("bool", False),
    "no_direction": ("bool", False),
    "no_de": ("bool", False),
    "dot": ("bool", False),
}


def _parse_value(key: str, raw: str):
    kind = _SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "optint":
            return None if raw.lower() in ("none", "") else int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r} "
                          f"as {kind}")


def load_config_file(path: str | Path) -> dict:
    values = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key "
                                  f"{key!r}")
            values[key] = _parse_value(key, raw)
    return values


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    cfg = {key: default for key, (_, default) in _SCHEMA.items()}
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for key in _SCHEMA:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def write_resolved(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if value is None or key in ("out", "index", "dot"):
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    (out_dir / "resolved.cfg").write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(word_dim=cfg["word_dim"],
                       question_dim=cfg["question_dim"],
                       layers=cfg["layers"], dropout=cfg["dropout"],
                       max_distance_token=cfg["max_distance_token"],
                       phi=cfg["phi"],
                       use_distance_embedding=not cfg["no_de"])


def _graph_options(cfg: dict) -> GraphOptions:
    if cfg["no_rn"] and cfg["relation_node_mode"] == "type":
        print("warning: no_rn removes relation nodes, so "
              "relation_node_mode=type has no effect", file=sys.stderr)
    return GraphOptions(relation_node_mode=cfg["relation_node_mode"],
                        use_relation_nodes=not cfg["no_rn"],
                        use_direction=not cfg["no_direction"])


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"],
                       learning_rate=cfg["learning_rate"],
                       batch_size=cfg["batch_size"], seed=cfg["seed"],
                       patience=cfg["patience"],
                       dev_fraction=cfg["dev_fraction"],
                       node_budget=cfg["node_budget"])


def _load_dataset(cfg: dict) -> tuple[KnowledgeBase, QADataset, Vocabulary]:
    """Load kb+qa files or generate a synthetic task."""
    if cfg["synthetic"]:
        if cfg["kb"] or cfg["qa"]:
            raise ConfigError("give either --synthetic or --kb/--qa, "
                              "not both")
        task = generate_synthetic(parse_spec_file(cfg["synthetic"]),
                                  cfg["seed"])
        return task.kb, task.dataset, task.vocab
    if not cfg["kb"] or not cfg["qa"]:
        raise ConfigError("need --kb and --qa (or --synthetic)")
    kb = load_kb(cfg["kb"])
    vocab = vocab_from_kb(kb)
    dataset = load_qa(cfg["qa"], kb, vocab, cfg["hops"])
    return kb, dataset, vocab


def _require_out(cfg: dict) -> Path:
    if not cfg["out"]:
        raise ConfigError("this command needs --out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _require_out(cfg)
    kb, dataset, vocab = _load_dataset(cfg)
    if cfg["synthetic"]:
        save_kb(kb, out / "kb.txt")
        save_qa(dataset, kb, out / "qa.txt")
    (out / "vocab.txt").write_text(
        "\n".join(vocab.tokens) + "\n", encoding="utf-8")
    sizes = [len(ex.answers) for ex in dataset.examples]
    manifest = {
        "n_entities": kb.n_entities,
        "n_relations": kb.n_relations,
        "n_triples": len(kb.triples),
        "n_questions": len(dataset.examples) + len(dataset.unlinkable),
        "n_linked": len(dataset.examples),
        "n_unlinkable": len(dataset.unlinkable),
        "unlinkable": [{"line": ln, "question": q}
                       for ln, q in dataset.unlinkable],
        "hops": dataset.hops,
        "answers_per_question": {
            "min": min(sizes) if sizes else 0,
            "max": max(sizes) if sizes else 0,
            "mean": sum(sizes) / len(sizes) if sizes else 0.0,
        },
        "vocab_size": len(vocab),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                       encoding="utf-8")
    write_resolved(cfg, out)
    print(f"prepared {manifest['n_linked']} questions "
          f"({manifest['n_unlinkable']} unlinkable) over "
          f"{kb.n_entities} entities, {len(kb.triples)} triples")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    kb, dataset, _ = _load_dataset(cfg)
    idx = cfg["index"]
    if not 0 <= idx < len(dataset.examples):
        raise DataError(f"question index {idx} out of range "
                        f"(0..{len(dataset.examples) - 1})")
    ex = dataset.examples[idx]
    options = _graph_options(cfg)
    sub = extract_subgraph(kb, ex.seeds, ex.hops, cfg["node_budget"])
    if options.use_relation_nodes:
        base = levi_transform(sub, options.relation_node_mode)
    else:
        base = entity_only_graph(sub)
    before = compute_hop_distances(add_reverse_edges(base))
    after = prune_inside_edges(before) if options.use_direction else before
    doc = {
        "question": ex.question,
        "seeds": sorted(kb.entities[s] for s in ex.seeds),
        "answers": sorted(kb.entities[a] for a in ex.answers),
        "truncated": sub.truncated,
        "dropped_unreachable": before.dropped_unreachable,
        "before_pruning": graph_to_json(before),
        "after_pruning": graph_to_json(after),
    }
    print(json.dumps(doc, indent=2))
    if cfg["out"]:
        out = _require_out(cfg)
        (out / f"question{idx}.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        if cfg["dot"]:
            (out / f"question{idx}_before.dot").write_text(
                graph_to_dot(before, "before_pruning"), encoding="utf-8")
            (out / f"question{idx}_after.dot").write_text(
                graph_to_dot(after, "after_pruning"), encoding="utf-8")
        write_resolved(cfg, out)
    return 0


def _checkpoint_extra(cfg: dict, kb: KnowledgeBase, vocab: Vocabulary,
                      result) -> dict:
    return {
        "vocab": vocab.tokens,
        "kb_digest": kb.digest(),
        "model_config": asdict(_model_config(cfg)),
        "graph_options": asdict(_graph_options(cfg)),
        "hops": cfg["hops"],
        "node_budget": cfg["node_budget"],
        "best_epoch": result.best_epoch,
        "best_dev_hits_at_1": result.best_report.hits_at_1,
        "best_dev_full": result.best_report.full,
    }


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _require_out(cfg)
    kb, dataset, vocab = _load_dataset(cfg)
    if cfg["synthetic"]:
        cfg["hops"] = dataset.hops
        save_kb(kb, out / "kb.txt")
    dev_data = None
    if cfg["dev_qa"]:
        vocab.freeze()
        dev_data = load_qa(cfg["dev_qa"], kb, vocab, cfg["hops"])
        train_data = dataset
    else:
        train_data, dev_data = split_dev(dataset, cfg["dev_fraction"],
                                         cfg["seed"])
    vocab.freeze()
    save_qa(train_data, kb, out / "qa.train.txt")
    save_qa(dev_data, kb, out / "qa.dev.txt")
    result = train(kb, train_data, dev_data, vocab, _model_config(cfg),
                   _train_config(cfg), _graph_options(cfg),
                   word_vectors=cfg["embeddings"])
    save_checkpoint(out / "checkpoint.json", result.store, result.optimizer,
                    extra=_checkpoint_extra(cfg, kb, vocab, result))
    save_history(result.history, out / "history.jsonl")
    result.best_report.save(out / "metrics.json")
    write_resolved(cfg, out)
    print(f"best epoch {result.best_epoch}: "
          f"dev hits@1 {result.best_report.hits_at_1:.3f}, "
          f"dev full {result.best_report.full:.3f} "
          f"({'stopped early' if result.stopped_early else 'ran to end'})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg["checkpoint"]:
        raise ConfigError("eval needs --checkpoint")
    if not cfg["kb"] or not cfg["qa"]:
        raise ConfigError("eval needs --kb and --qa")
    store, _, extra = load_checkpoint(cfg["checkpoint"])
    kb = load_kb(cfg["kb"])
    if extra.get("kb_digest") and kb.digest() != extra["kb_digest"]:
        raise DataError("KB does not match the one this checkpoint was "
                        "trained on")
    vocab = Vocabulary(extra["vocab"][1:]).freeze()
    model_config = ModelConfig(**extra["model_config"])
    options = GraphOptions(**extra["graph_options"])
    hops = cfg["hops"] if getattr(args, "hops", None) is not None \
        else extra.get("hops", cfg["hops"])
    dataset = load_qa(cfg["qa"], kb, vocab, hops)
    report = evaluate(store, dataset, kb, vocab, model_config, options,
                      node_budget=extra.get("node_budget",
                                            cfg["node_budget"]))
    print(json.dumps(report.to_json_dict(), indent=2))
    if cfg["out"]:
        out = _require_out(cfg)
        report.save(out / "metrics.json")
        write_resolved(cfg, out)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _require_out(cfg)
    kb, dataset, vocab = _load_dataset(cfg)
    dev_data = None
    if cfg["dev_qa"]:
        vocab.freeze()
        dev_data = load_qa(cfg["dev_qa"], kb, vocab, cfg["hops"])
    vocab.freeze()
    report = run_ablations(kb, dataset, dev_data, vocab, _model_config(cfg),
                           _train_config(cfg), _graph_options(cfg))
    print(report.format_table())
    report.save(out / "ablation_report.json")
    write_resolved(cfg, out)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):     # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help="output directory")


def _add_data(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--kb", help="pipe-separated triple file")
    sub.add_argument("--qa", help="tab-separated question file")
    sub.add_argument("--synthetic", help="synthetic task spec file")
    sub.add_argument("--hops", type=int)
    sub.add_argument("--node-budget", type=int, dest="node_budget")


def _add_graph(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--no-rn", action="store_true", default=None,
                     dest="no_rn", help="ablation: drop relation nodes")
    sub.add_argument("--no-direction", action="store_true", default=None,
                     dest="no_direction",
                     help="ablation: keep the graph bidirectional")
    sub.add_argument("--no-de", action="store_true", default=None,
                     dest="no_de",
                     help="ablation: zero the distance embeddings")
    sub.add_argument("--relation-node-mode", choices=("instance", "type"),
                     dest="relation_node_mode")


def _add_model(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--word-dim", type=int, dest="word_dim")
    sub.add_argument("--question-dim", type=int, dest="question_dim")
    sub.add_argument("--layers", type=int)
    sub.add_argument("--dropout", type=float)
    sub.add_argument("--max-distance-token", type=int,
                     dest="max_distance_token")
    sub.add_argument("--phi", choices=("tanh", "sigmoid"))
    sub.add_argument("--embeddings", help="pretrained word vector file")


def _add_train(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--dev-qa", dest="dev_qa",
                     help="explicit dev question file")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--learning-rate", type=float, dest="learning_rate")
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--patience", type=int)
    sub.add_argument("--dev-fraction", type=float, dest="dev_fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphqa",
                     description="multi-hop QA over knowledge bases")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("prepare",
                            help="load or generate a dataset and write a "
                                 "manifest")
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_prepare)

    p = commands.add_parser("inspect",
                            help="dump one question's reasoning graph "
                                 "before and after pruning")
    _add_common(p)
    _add_data(p)
    _add_graph(p)
    p.add_argument("--index", type=int, help="question index")
    p.add_argument("--dot", action="store_true", default=None,
                   help="also write graphviz files (needs --out)")
    p.set_defaults(func=cmd_inspect)

    p = commands.add_parser("train", help="train a model")
    _add_common(p)
    _add_data(p)
    _add_graph(p)
    _add_model(p)
    _add_train(p)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval",
                            help="evaluate a checkpoint on a question file")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", help="checkpoint.json from train")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("ablate",
                            help="train the full model and its ablations")
    _add_common(p)
    _add_data(p)
    _add_graph(p)
    _add_model(p)
    _add_train(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except GraphQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
