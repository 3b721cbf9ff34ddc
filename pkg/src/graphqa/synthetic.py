"""Synthetic multi-hop QA task generation.

Tasks are built over a random KB. Each question designates a seed entity
and a relation sequence of length ``hops``; the gold answers are exactly
the entities reached by following that sequence subject-to-object from the
seed. Question text spells the sequence innermost-first, e.g. for the
sequence (r1, r2): ``what is the r2 of the r1 of [seed]``.

Sampled questions are rejected unless the directed gold set coincides with
the set of entities recoverable from the seed-rooted graph the reasoner
actually sees (paths whose hop distance strictly increases, matched by
relation word regardless of triple orientation), so every emitted question
is answerable from graph structure alone. Each question also keeps at
least ``distractors`` same-length paths with a different relation
sequence, so reading relation words is required.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .kb import (KnowledgeBase, QADataset, QAExample, Triple, Vocabulary,
                 link_entities, strip_brackets, tokenize, vocab_from_kb)

SPEC_KEYS = ("entities", "relations", "triples", "hops", "questions",
             "distractors")


@dataclass(frozen=True)
class SyntheticSpec:
    entities: int
    relations: int
    triples: int
    hops: int
    questions: int
    distractors: int = 1

    def __post_init__(self):
        if self.entities < 2:
            raise DataError("synthetic spec needs at least 2 entities")
        if self.relations < 2:
            raise DataError("synthetic spec needs at least 2 relations")
        if self.triples < self.hops:
            raise DataError("synthetic spec needs at least `hops` triples")
        if not 1 <= self.hops <= 8:
            raise DataError(f"hops must be in 1..8, got {self.hops}")
        if self.questions < 1:
            raise DataError("synthetic spec needs at least 1 question")
        if self.distractors < 1:
            raise DataError("distractors must be >= 1")


def parse_spec_file(path: str | Path) -> SyntheticSpec:
    """Read a key=value task spec file."""
    values: dict[str, int] = {}
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in SPEC_KEYS:
                raise DataError(f"{path}:{lineno}: unknown spec key {key!r}")
            try:
                values[key] = int(raw.strip())
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: value for {key!r} must be an integer")
    missing = [k for k in SPEC_KEYS if k not in values and k != "distractors"]
    if missing:
        raise DataError(f"{path}: missing spec keys {missing}")
    return SyntheticSpec(**values)


def _follow(out_edges: list[list[tuple[int, int]]], seed: int,
            rels: tuple[int, ...]) -> frozenset[int]:
    """Directed composition: entities reached by the exact relation sequence."""
    frontier = {seed}
    for rel in rels:
        nxt: set[int] = set()
        for e in frontier:
            for r, o in out_edges[e]:
                if r == rel:
                    nxt.add(o)
        frontier = nxt
        if not frontier:
            break
    return frozenset(frontier)


def _hop_distances(touch: list[list[tuple[int, int]]], seed: int,
                   n: int) -> list[int]:
    dist = [-1] * n
    dist[seed] = 0
    queue = deque([seed])
    while queue:
        e = queue.popleft()
        for _, other in touch[e]:
            if dist[other] < 0:
                dist[other] = dist[e] + 1
                queue.append(other)
    return dist


def _recoverable(touch: list[list[tuple[int, int]]], dist: list[int],
                 seed: int, rels: tuple[int, ...]) -> frozenset[int]:
    """Entities a direction-blind, distance-aware reasoner would mark.

    Walks orientation-free edges whose relation word matches the sequence
    while the hop distance increases by one each step, which is exactly the
    structure preserved after reverse-edge insertion and inside-edge pruning.
    """
    frontier = {seed}
    for depth, rel in enumerate(rels, start=1):
        nxt: set[int] = set()
        for e in frontier:
            for r, other in touch[e]:
                if r == rel and dist[other] == depth:
                    nxt.add(other)
        frontier = nxt
        if not frontier:
            break
    return frozenset(frontier)


def _count_paths(out_edges: list[list[tuple[int, int]]], seed: int,
                 length: int, exclude: tuple[int, ...]) -> int:
    """Number of directed length-``length`` paths whose relation sequence
    differs from ``exclude``."""
    total = 0
    stack: list[tuple[int, tuple[int, ...]]] = [(seed, ())]
    while stack:
        e, rels = stack.pop()
        if len(rels) == length:
            if rels != exclude:
                total += 1
            continue
        for r, o in out_edges[e]:
            stack.append((o, rels + (r,)))
    return total


def _candidate_sequences(out_edges: list[list[tuple[int, int]]], seed: int,
                         hops: int) -> list[tuple[int, ...]]:
    """Distinct relation sequences realized by directed paths from seed."""
    seqs: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    stack: list[tuple[int, tuple[int, ...]]] = [(seed, ())]
    while stack:
        e, rels = stack.pop()
        if len(rels) == hops:
            if rels not in seen:
                seen.add(rels)
                seqs.append(rels)
            continue
        for r, o in out_edges[e]:
            stack.append((o, rels + (r,)))
    return seqs


@dataclass
class SyntheticTask:
    kb: KnowledgeBase
    dataset: QADataset
    vocab: Vocabulary
    spec: SyntheticSpec
    seed: int


def generate_synthetic(spec: SyntheticSpec, rng_seed: int) -> SyntheticTask:
    """Deterministically generate a KB and question set from a spec.

    Raises DataError when the spec is infeasible (the KB cannot support
    enough valid questions of the requested hop length).
    """
    rng = np.random.default_rng(rng_seed)
    n_ent, n_rel = spec.entities, spec.relations
    capacity = n_ent * (n_ent - 1) * n_rel
    if spec.triples > capacity:
        raise DataError(
            f"spec requests {spec.triples} distinct triples but only "
            f"{capacity} are possible")

    entities = [f"ent_{i}" for i in range(n_ent)]
    relations = [f"rel_{i}" for i in range(n_rel)]
    seen: set[tuple[int, int, int]] = set()
    triples: list[Triple] = []
    guard = 0
    while len(triples) < spec.triples:
        guard += 1
        if guard > 200 * spec.triples + 1000:
            raise DataError("could not sample the requested triple count")
        s = int(rng.integers(n_ent))
        o = int(rng.integers(n_ent))
        if s == o:
            continue
        r = int(rng.integers(n_rel))
        key = (s, r, o)
        if key in seen:
            continue
        seen.add(key)
        triples.append(Triple(s, r, o))
    kb = KnowledgeBase(entities, relations, triples)

    out_edges: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
    touch: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
    for t in triples:
        out_edges[t.subject].append((t.relation, t.obj))
        touch[t.subject].append((t.relation, t.obj))
        touch[t.obj].append((t.relation, t.subject))

    # Enumerate every structurally sound question up front, then sample.
    candidates: list[tuple[int, tuple[int, ...], frozenset[int]]] = []
    for seed_ent in range(n_ent):
        seqs = _candidate_sequences(out_edges, seed_ent, spec.hops)
        if not seqs:
            continue
        dist = _hop_distances(touch, seed_ent, n_ent)
        for rels in seqs:
            gold = _follow(out_edges, seed_ent, rels)
            if _recoverable(touch, dist, seed_ent, rels) != gold:
                continue
            if _count_paths(out_edges, seed_ent, spec.hops, rels) \
                    < spec.distractors:
                continue
            candidates.append((seed_ent, rels, gold))
    if not candidates:
        raise DataError(
            f"spec infeasible: the sampled KB supports no valid "
            f"{spec.hops}-hop question with {spec.distractors} distractor "
            f"path(s)")
    order = rng.permutation(len(candidates))
    chosen = [candidates[int(i)] for i in order[:spec.questions]]
    while len(chosen) < spec.questions:
        chosen.append(candidates[int(rng.integers(len(candidates)))])

    vocab = vocab_from_kb(kb)
    examples: list[QAExample] = []
    for seed_ent, rels, gold in chosen:
        chain = " of the ".join(relations[r] for r in reversed(rels))
        question = f"what is the {chain} of [{entities[seed_ent]}]"
        linked = link_entities(question, kb)
        tokens = tuple(vocab.intern(t)
                       for t in tokenize(strip_brackets(question)))
        examples.append(QAExample(question=question, tokens=tokens,
                                  seeds=frozenset(linked),
                                  answers=gold, hops=spec.hops))
    dataset = QADataset(examples=examples, unlinkable=[], hops=spec.hops)
    return SyntheticTask(kb=kb, dataset=dataset, vocab=vocab, spec=spec,
                         seed=rng_seed)
