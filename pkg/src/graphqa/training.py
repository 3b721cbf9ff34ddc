"""Training and evaluation harness.

Questions are independent graphs, so a "batch" accumulates gradients over
several question graphs and applies one Adam step on their mean. The
loop keeps the parameters that scored the best dev Hits@1 and can stop
early when dev performance stalls.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamStore
from .errors import ConfigError, DataError, NumericsError
from .graph import GraphOptions, ReasoningGraph, build_reasoning_graph
from .kb import KnowledgeBase, QADataset, QAExample, Vocabulary, \
    extract_subgraph
from .metrics import MetricsReport, QuestionRecord, full_metric, hits_at_1, \
    summarize
from .model import EncodedGraph, ModelConfig, answer_labels, build_params, \
    encode_graph, forward, load_word_vectors, loss_from_probs, \
    read_prediction

ABLATION_VARIANTS = ("full", "no_relation_nodes", "no_direction",
                     "no_distance_embedding")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    patience: int | None = None     # epochs without dev improvement
    dev_fraction: float = 0.1       # used when no dev set is supplied
    node_budget: int = 500

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ConfigError("dev fraction must be in (0, 1)")
        if self.node_budget < 1:
            raise ConfigError("node budget must be >= 1")


@dataclass
class PreparedExample:
    example: QAExample
    graph: ReasoningGraph
    encoded: EncodedGraph
    labels: np.ndarray


def prepare_examples(kb: KnowledgeBase, examples: Sequence[QAExample],
                     vocab: Vocabulary, model_config: ModelConfig,
                     options: GraphOptions,
                     node_budget: int) -> list[PreparedExample]:
    """Build each question's reasoning graph once, up front."""
    prepared = []
    for ex in examples:
        sub = extract_subgraph(kb, ex.seeds, ex.hops, node_budget)
        graph, adj = build_reasoning_graph(sub, options)
        encoded = encode_graph(graph, adj, vocab, model_config)
        prepared.append(PreparedExample(
            example=ex, graph=graph, encoded=encoded,
            labels=answer_labels(encoded, ex.answers)))
    return prepared


def config_digest(model_config: ModelConfig, train_config: TrainConfig,
                  options: GraphOptions, vocab: Vocabulary) -> str:
    blob = json.dumps({
        "model": asdict(model_config),
        "train": asdict(train_config),
        "graph": asdict(options),
        "vocab": vocab.digest(),
    }, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _evaluate_prepared(store: ParamStore, prepared: Sequence[PreparedExample],
                       n_unlinkable: int, model_config: ModelConfig,
                       variant: str = "full",
                       digest: str = "") -> MetricsReport:
    records = []
    for prep in prepared:
        probs = forward(prep.encoded, prep.example.tokens, store,
                        model_config, training=False)
        pred = read_prediction(probs.values, prep.encoded)
        gold = set(prep.example.answers)
        scores = [(int(eid), float(p)) for eid, p in
                  zip(prep.encoded.entity_ids,
                      probs.values[prep.encoded.entity_rows, 1])]
        records.append(QuestionRecord(
            question=prep.example.question,
            predicted=tuple(sorted(pred.answers)),
            gold=tuple(sorted(gold)),
            top1=pred.top1,
            hit=hits_at_1(scores, gold),
            full=full_metric(pred.answers, gold),
            relation_argmax=pred.relation_argmax))
    return summarize(records, n_unlinkable, variant, digest)


def evaluate(store: ParamStore, dataset: QADataset, kb: KnowledgeBase,
             vocab: Vocabulary, model_config: ModelConfig,
             options: GraphOptions = GraphOptions(),
             node_budget: int = 500, variant: str = "full",
             digest: str = "") -> MetricsReport:
    """Metrics over a dataset; dropout is off and results are deterministic."""
    prepared = prepare_examples(kb, dataset.examples, vocab, model_config,
                                options, node_budget)
    return _evaluate_prepared(store, prepared, len(dataset.unlinkable),
                              model_config, variant, digest)


def split_dev(dataset: QADataset, fraction: float,
              seed: int) -> tuple[QADataset, QADataset]:
    """Seeded holdout split; unlinkable lines stay with the training side."""
    n = len(dataset.examples)
    n_dev = max(1, int(round(n * fraction)))
    if n_dev >= n:
        raise DataError(f"cannot hold out {n_dev} of {n} questions")
    order = np.random.default_rng([seed, 17]).permutation(n)
    dev_idx = set(int(i) for i in order[:n_dev])
    train_ex = [ex for i, ex in enumerate(dataset.examples)
                if i not in dev_idx]
    dev_ex = [ex for i, ex in enumerate(dataset.examples) if i in dev_idx]
    return (QADataset(train_ex, list(dataset.unlinkable), dataset.hops),
            QADataset(dev_ex, [], dataset.hops))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_hits_at_1: float
    dev_full: float

    def to_json_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "dev_hits_at_1": self.dev_hits_at_1,
                "dev_full": self.dev_full}


@dataclass
class TrainResult:
    store: ParamStore               # holds the best-dev parameters
    optimizer: Adam
    history: list[EpochRecord]
    best_epoch: int
    best_report: MetricsReport
    digest: str
    stopped_early: bool = False


def save_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record.to_json_dict()) + "\n")


def train(kb: KnowledgeBase, train_data: QADataset,
          dev_data: QADataset | None, vocab: Vocabulary,
          model_config: ModelConfig, train_config: TrainConfig,
          options: GraphOptions = GraphOptions(),
          word_vectors: str | Path | None = None) -> TrainResult:
    """Run the full training loop.

    All randomness (init, shuffling, dropout) comes from generators seeded
    off ``train_config.seed``, so identical inputs give bit-identical loss
    histories. A non-finite loss aborts with a NumericsError.
    """
    if not train_data.examples:
        raise DataError("training set is empty")
    if dev_data is None:
        train_data, dev_data = split_dev(train_data,
                                         train_config.dev_fraction,
                                         train_config.seed)
    digest = config_digest(model_config, train_config, options, vocab)
    store = build_params(len(vocab), model_config,
                         seed=train_config.seed)
    if word_vectors is not None:
        load_word_vectors(word_vectors, vocab, store)
    optimizer = Adam(store, lr=train_config.learning_rate)
    shuffle_rng = np.random.default_rng([train_config.seed, 1])
    dropout_rng = np.random.default_rng([train_config.seed, 2])

    train_prep = prepare_examples(kb, train_data.examples, vocab,
                                  model_config, options,
                                  train_config.node_budget)
    dev_prep = prepare_examples(kb, dev_data.examples, vocab, model_config,
                                options, train_config.node_budget)

    history: list[EpochRecord] = []
    best_values: dict[str, np.ndarray] | None = None
    best_report: MetricsReport | None = None
    best_epoch = -1
    stale = 0
    stopped_early = False

    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(train_prep))
        losses: list[float] = []
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            store.zero_grads()
            for idx in batch:
                prep = train_prep[int(idx)]
                probs = forward(prep.encoded, prep.example.tokens, store,
                                model_config, training=True,
                                rng=dropout_rng)
                loss = loss_from_probs(probs, prep.labels)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericsError(
                        f"non-finite loss at epoch {epoch}; try a lower "
                        f"learning rate than {train_config.learning_rate}")
                ad.backward(loss)
                losses.append(value)
            for _, p in store.trainable():
                p.grad /= len(batch)
            optimizer.step()
        dev_report = _evaluate_prepared(store, dev_prep,
                                        len(dev_data.unlinkable),
                                        model_config, digest=digest)
        history.append(EpochRecord(
            epoch=epoch, train_loss=float(np.mean(losses)),
            dev_hits_at_1=dev_report.hits_at_1, dev_full=dev_report.full))
        if best_report is None or dev_report.hits_at_1 > \
                best_report.hits_at_1:
            best_report = dev_report
            best_values = store.copy_values()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if train_config.patience is not None \
                    and stale >= train_config.patience:
                stopped_early = True
                break

    assert best_values is not None and best_report is not None
    store.load_values(best_values)
    store.clear_grads()
    return TrainResult(store=store, optimizer=optimizer, history=history,
                       best_epoch=best_epoch, best_report=best_report,
                       digest=digest, stopped_early=stopped_early)


def ablation_settings(model_config: ModelConfig, options: GraphOptions
                      ) -> list[tuple[str, ModelConfig, GraphOptions]]:
    return [
        ("full", model_config, options),
        ("no_relation_nodes", model_config,
         replace(options, use_relation_nodes=False)),
        ("no_direction", model_config, replace(options, use_direction=False)),
        ("no_distance_embedding",
         replace(model_config, use_distance_embedding=False), options),
    ]


@dataclass
class AblationReport:
    rows: list[tuple[str, MetricsReport]] = field(default_factory=list)

    def format_table(self) -> str:
        width = max(len(name) for name, _ in self.rows)
        lines = [f"{'variant'.ljust(width)}  hits@1   full"]
        for name, report in self.rows:
            lines.append(f"{name.ljust(width)}  {report.hits_at_1:6.3f}  "
                         f"{report.full:5.3f}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {"rows": [{"variant": name, **report.to_json_dict()}
                         for name, report in self.rows]}

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def run_ablations(kb: KnowledgeBase, train_data: QADataset,
                  dev_data: QADataset | None, vocab: Vocabulary,
                  model_config: ModelConfig, train_config: TrainConfig,
                  options: GraphOptions = GraphOptions()) -> AblationReport:
    """Train and evaluate the full model and the three ablations under one
    seed and shared budgets."""
    report = AblationReport()
    for name, mconf, gopts in ablation_settings(model_config, options):
        result = train(kb, train_data, dev_data, vocab, mconf, train_config,
                       gopts)
        best = replace(result.best_report, variant=name)
        report.rows.append((name, best))
    return report
