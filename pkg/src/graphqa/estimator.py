"""Scikit-learn style wrapper around the training harness.

``AnswerSelector`` treats questions as X and answer-surface sets as y, so
it plugs into the usual fit / predict / score workflow:

    model = AnswerSelector(hops=1, epochs=20, seed=7)
    model.fit(questions, answer_sets, kb=kb)
    model.predict(["who directed [Top Gun]"])
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DataError, LinkError
from .graph import GraphOptions
from .kb import KnowledgeBase, QADataset, QAExample, Vocabulary, \
    link_entities, strip_brackets, tokenize, vocab_from_kb
from .model import ModelConfig, forward, read_prediction
from .training import TrainConfig, evaluate, prepare_examples, train


def _check_questions(X) -> list[str]:
    questions = list(X)
    if not questions:
        raise DataError("need at least one question")
    for q in questions:
        if not isinstance(q, str) or not q.strip():
            raise DataError(f"questions must be nonempty strings, got {q!r}")
    return questions


def _check_answers(y, n: int) -> list[list[str]]:
    answers = [list(a) for a in y]
    if len(answers) != n:
        raise DataError(f"got {n} questions but {len(answers)} answer sets")
    for i, ans in enumerate(answers):
        if not ans:
            raise DataError(f"answer set {i} is empty")
        for a in ans:
            if not isinstance(a, str):
                raise DataError(f"answers must be strings, got {a!r}")
    return answers


class AnswerSelector(BaseEstimator):
    """Multi-hop KB question answering as an estimator.

    Parameters mirror the model and training configuration; ``fit`` takes
    question strings and per-question collections of answer entity
    surfaces, plus the knowledge base as a required fit argument.
    """

    def __init__(self, hops: int = 1, word_dim: int = 100,
                 question_dim: int = 100, layers: int = 2,
                 dropout: float = 0.1, max_distance_token: int = 8,
                 phi: str = "tanh", relation_node_mode: str = "instance",
                 use_relation_nodes: bool = True, use_direction: bool = True,
                 use_distance_embedding: bool = True, node_budget: int = 500,
                 epochs: int = 30, learning_rate: float = 1e-3,
                 batch_size: int = 8, patience: int | None = None,
                 dev_fraction: float = 0.1, seed: int = 0):
        self.hops = hops
        self.word_dim = word_dim
        self.question_dim = question_dim
        self.layers = layers
        self.dropout = dropout
        self.max_distance_token = max_distance_token
        self.phi = phi
        self.relation_node_mode = relation_node_mode
        self.use_relation_nodes = use_relation_nodes
        self.use_direction = use_direction
        self.use_distance_embedding = use_distance_embedding
        self.node_budget = node_budget
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patience = patience
        self.dev_fraction = dev_fraction
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            word_dim=self.word_dim, question_dim=self.question_dim,
            layers=self.layers, dropout=self.dropout,
            max_distance_token=self.max_distance_token, phi=self.phi,
            use_distance_embedding=self.use_distance_embedding)

    def _graph_options(self) -> GraphOptions:
        return GraphOptions(relation_node_mode=self.relation_node_mode,
                            use_relation_nodes=self.use_relation_nodes,
                            use_direction=self.use_direction)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs,
                           learning_rate=self.learning_rate,
                           batch_size=self.batch_size, seed=self.seed,
                           patience=self.patience,
                           dev_fraction=self.dev_fraction,
                           node_budget=self.node_budget)

    def _build_examples(self, questions: Sequence[str],
                        answers: Sequence[Sequence[str]] | None,
                        kb: KnowledgeBase, vocab: Vocabulary
                        ) -> tuple[list[QAExample], list[tuple[int, str]]]:
        examples = []
        unlinkable = []
        for i, question in enumerate(questions):
            try:
                seeds = link_entities(question, kb)
            except LinkError:
                unlinkable.append((i, question))
                continue
            gold: frozenset[int] = frozenset()
            if answers is not None:
                resolved = set()
                for surf in answers[i]:
                    eid = kb.entity_id(surf)
                    if eid is None:
                        raise DataError(f"answer entity {surf!r} not in KB")
                    resolved.add(eid)
                gold = frozenset(resolved)
            tokens = tuple(vocab.intern(t)
                           for t in tokenize(strip_brackets(question)))
            if not tokens:
                raise DataError(f"question {question!r} has no tokens")
            examples.append(QAExample(question=question, tokens=tokens,
                                      seeds=frozenset(seeds), answers=gold,
                                      hops=self.hops))
        return examples, unlinkable

    def fit(self, X, y, *, kb: KnowledgeBase,
            dev: tuple[Iterable[str], Iterable] | None = None
            ) -> "AnswerSelector":
        """Train on question strings X and answer-surface collections y."""
        if not isinstance(kb, KnowledgeBase):
            raise DataError("fit requires kb=<KnowledgeBase>")
        questions = _check_questions(X)
        answers = _check_answers(y, len(questions))
        vocab = vocab_from_kb(kb)
        examples, unlinkable = self._build_examples(questions, answers, kb,
                                                    vocab)
        if not examples:
            raise DataError("no question could be linked to the KB")
        train_data = QADataset(examples, unlinkable, self.hops)
        dev_data = None
        if dev is not None:
            dev_q = _check_questions(dev[0])
            dev_a = _check_answers(dev[1], len(dev_q))
            dev_ex, dev_unlink = self._build_examples(dev_q, dev_a, kb, vocab)
            dev_data = QADataset(dev_ex, dev_unlink, self.hops)
        vocab.freeze()
        result = train(kb, train_data, dev_data, vocab, self._model_config(),
                       self._train_config(), self._graph_options())
        self.kb_ = kb
        self.vocab_ = vocab
        self.store_ = result.store
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.dev_report_ = result.best_report
        self.n_unlinkable_ = len(unlinkable)
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "store_"):
            raise NotFittedError(
                "this AnswerSelector is not fitted yet; call fit first")

    def _predictions(self, X):
        self._require_fitted()
        questions = _check_questions(X)
        examples, unlinkable = self._build_examples(questions, None,
                                                    self.kb_, self.vocab_)
        prepared = prepare_examples(self.kb_, examples, self.vocab_,
                                    self._model_config(),
                                    self._graph_options(), self.node_budget)
        unlinked = {i for i, _ in unlinkable}
        results: list = []
        prep_iter = iter(prepared)
        for i in range(len(questions)):
            if i in unlinked:
                results.append(None)
            else:
                prep = next(prep_iter)
                probs = forward(prep.encoded, prep.example.tokens,
                                self.store_, self._model_config(),
                                training=False)
                results.append(read_prediction(probs.values, prep.encoded))
        return results

    def predict(self, X) -> list[set[str]]:
        """Predicted answer-surface set per question; unlinkable questions
        get an empty set."""
        out = []
        for pred in self._predictions(X):
            if pred is None:
                out.append(set())
            else:
                out.append({self.kb_.entities[eid] for eid in pred.answers})
        return out

    def predict_top1(self, X) -> list[str | None]:
        """Single best answer surface per question (None if unlinkable)."""
        return [None if pred is None else self.kb_.entities[pred.top1]
                for pred in self._predictions(X)]

    def score(self, X, y) -> float:
        """Mean Hits@1; unlinkable questions count as misses."""
        questions = _check_questions(X)
        answers = _check_answers(y, len(questions))
        hits = 0
        for pred, ans in zip(self._predictions(questions), answers):
            if pred is None:
                continue
            gold = set()
            for surf in ans:
                eid = self.kb_.entity_id(surf)
                if eid is None:
                    raise DataError(f"answer entity {surf!r} not in KB")
                gold.add(eid)
            hits += int(pred.top1 in gold)
        return hits / len(questions)
