"""Answer-set metrics and evaluation reports.

Full is exact set match: 1 iff the predicted answer set equals the gold
set. Hits@1 is 1 iff the single highest-scoring entity is a gold answer;
score ties are broken toward the lowest node index, i.e. the first entry
in the score sequence.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Sequence


def full_metric(predicted: AbstractSet[int], gold: AbstractSet[int]) -> int:
    if not gold:
        raise ValueError("full metric needs a nonempty gold set")
    return int(set(predicted) == set(gold))


def hits_at_1(scores: Sequence[tuple[int, float]],
              gold: AbstractSet[int]) -> int:
    """``scores`` pairs (entity id, answer probability) in node-index order."""
    if not scores:
        raise ValueError("hits@1 needs at least one scored entity")
    if not gold:
        raise ValueError("hits@1 needs a nonempty gold set")
    best_id, best_score = scores[0]
    for eid, score in scores[1:]:
        if score > best_score:
            best_id, best_score = eid, score
    return int(best_id in gold)


@dataclass(frozen=True)
class QuestionRecord:
    question: str
    predicted: tuple[int, ...]
    gold: tuple[int, ...]
    top1: int
    hit: int
    full: int
    relation_argmax: bool = False


@dataclass
class MetricsReport:
    hits_at_1: float
    full: float
    n_questions: int
    n_unlinkable: int
    variant: str = "full"
    config_digest: str = ""
    records: list[QuestionRecord] = field(default_factory=list)
    relation_argmax_count: int = 0

    def to_json_dict(self) -> dict:
        return {"hits_at_1": self.hits_at_1, "full": self.full,
                "n_questions": self.n_questions,
                "n_unlinkable": self.n_unlinkable,
                "variant": self.variant,
                "config_digest": self.config_digest}

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def summarize(records: Sequence[QuestionRecord], n_unlinkable: int,
              variant: str = "full", config_digest: str = "") -> MetricsReport:
    """Aggregate per-question flags; unlinkable questions score 0 on both
    metrics but stay in the denominator."""
    total = len(records) + n_unlinkable
    hits = sum(r.hit for r in records)
    fulls = sum(r.full for r in records)
    return MetricsReport(
        hits_at_1=hits / total if total else 0.0,
        full=fulls / total if total else 0.0,
        n_questions=total,
        n_unlinkable=n_unlinkable,
        variant=variant,
        config_digest=config_digest,
        records=list(records),
        relation_argmax_count=sum(1 for r in records if r.relation_argmax),
    )
