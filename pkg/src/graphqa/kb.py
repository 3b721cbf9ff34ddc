"""Knowledge-base storage, entity linking, subgraph extraction, and QA file loading.

File formats:
  KB file  -- one triple per line, ``subject|relation|object``.
  QA file  -- one question per line, ``question text<TAB>answer1|answer2``.
              The seed entity may be marked with square brackets in the
              question text (``who directed [Top Gun]``).
"""
from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Iterable, Sequence

from .errors import DataError, LinkError

_EDGE_PUNCT = string.punctuation
_BRACKET_RE = re.compile(r"\[([^\[\]]+)\]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges.

    Tokens that are pure punctuation are dropped.
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            out.append(tok)
    return out


def normalize_surface(surface: str) -> str:
    """Canonical token form of an entity or relation name."""
    return " ".join(tokenize(surface))


def strip_brackets(text: str) -> str:
    """Remove seed markers, keeping the marked words in place."""
    return _BRACKET_RE.sub(r"\1", text)


@dataclass(frozen=True)
class Triple:
    subject: int
    relation: int
    obj: int


class KnowledgeBase:
    """Entities, relations, and triples with id-based indexing.

    Entity and relation vocabularies are kept in first-appearance order so
    that loading is deterministic.
    """

    def __init__(self, entities: Sequence[str], relations: Sequence[str],
                 triples: Sequence[Triple]):
        self.entities = list(entities)
        self.relations = list(relations)
        self.triples = list(triples)
        self._entity_ids = {s: i for i, s in enumerate(self.entities)}
        if len(self._entity_ids) != len(self.entities):
            raise DataError("duplicate entity surface in KB")
        # adjacency[e] lists indices of triples that touch entity e
        self.adjacency: list[list[int]] = [[] for _ in self.entities]
        for t_idx, t in enumerate(self.triples):
            self.adjacency[t.subject].append(t_idx)
            if t.obj != t.subject:
                self.adjacency[t.obj].append(t_idx)
        # token index used by the surface linker: normalized surface -> first id
        self._token_index: dict[str, int] = {}
        self._max_entity_tokens = 0
        for i, s in enumerate(self.entities):
            key = normalize_surface(s)
            if not key:
                continue
            self._token_index.setdefault(key, i)
            self._max_entity_tokens = max(self._max_entity_tokens,
                                          len(key.split()))

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, surface: str) -> int | None:
        """Exact surface lookup, falling back to normalized-token lookup."""
        eid = self._entity_ids.get(surface)
        if eid is not None:
            return eid
        return self._token_index.get(normalize_surface(surface))

    def digest(self) -> str:
        """Stable fingerprint of the KB contents.

        Hashes the sorted surface-form triples, so it is invariant to
        line order and to how ids were interned; a saved and reloaded
        KB keeps its digest.
        """
        h = hashlib.sha256()
        lines = sorted(f"{self.entities[t.subject]}|"
                       f"{self.relations[t.relation]}|"
                       f"{self.entities[t.obj]}" for t in self.triples)
        for line in lines:
            h.update(line.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        save_kb(self, path)


def load_kb(path: str | Path) -> KnowledgeBase:
    """Parse a pipe-separated triple file.

    Exact duplicate triples are dropped. Raises DataError with the offending
    line number on malformed lines and on empty files.
    """
    path = Path(path)
    entities: list[str] = []
    relations: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triples: list[Triple] = []
    seen: set[tuple[int, int, int]] = set()

    def intern(table: list[str], ids: dict[str, int], surface: str) -> int:
        if surface not in ids:
            ids[surface] = len(table)
            table.append(surface)
        return ids[surface]

    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("|")
            if len(parts) != 3 or any(not p.strip() for p in parts):
                raise DataError(
                    f"{path}:{lineno}: expected 'subject|relation|object', "
                    f"got {line!r}")
            s, r, o = (p.strip() for p in parts)
            sid = intern(entities, entity_ids, s)
            rid = intern(relations, relation_ids, r)
            oid = intern(entities, entity_ids, o)
            key = (sid, rid, oid)
            if key in seen:
                continue
            seen.add(key)
            triples.append(Triple(sid, rid, oid))
    if not triples:
        raise DataError(f"{path}: KB file contains no triples")
    return KnowledgeBase(entities, relations, triples)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in kb.triples:
            fh.write(f"{kb.entities[t.subject]}|{kb.relations[t.relation]}|"
                     f"{kb.entities[t.obj]}\n")


def link_entities(question: str, kb: KnowledgeBase) -> set[int]:
    """Find the seed entities mentioned in a question.

    Bracketed spans take precedence and are matched as whole surfaces.
    Otherwise surfaces are matched against the tokenized question,
    longest match first; shorter matches overlapping an accepted longer
    match are discarded. Raises LinkError when nothing matches.
    """
    spans = _BRACKET_RE.findall(question)
    if spans:
        seeds = set()
        for span in spans:
            eid = kb.entity_id(span.strip())
            if eid is not None:
                seeds.add(eid)
        if not seeds:
            raise LinkError(
                f"no KB entity matches bracketed span(s) {spans!r}")
        return seeds

    tokens = tokenize(question)
    matches: list[tuple[int, int, int]] = []  # (start, end, entity id)
    limit = kb._max_entity_tokens
    for i in range(len(tokens)):
        for j in range(i + 1, min(i + limit, len(tokens)) + 1):
            eid = kb._token_index.get(" ".join(tokens[i:j]))
            if eid is not None:
                matches.append((i, j, eid))
    # longest first; ties broken by earlier start, then lower entity id
    matches.sort(key=lambda m: (-(m[1] - m[0]), m[0], m[2]))
    taken = [False] * len(tokens)
    seeds = set()
    for i, j, eid in matches:
        if any(taken[i:j]):
            continue
        for k in range(i, j):
            taken[k] = True
        seeds.add(eid)
    if not seeds:
        raise LinkError(f"no KB entity found in question {question!r}")
    return seeds


@dataclass(frozen=True)
class Subgraph:
    """A KB restriction around a set of seed entities."""
    kb: KnowledgeBase
    entity_nodes: frozenset[int]
    triples: tuple[Triple, ...]
    seeds: frozenset[int]
    truncated: bool = False


def extract_subgraph(kb: KnowledgeBase, seeds: AbstractSet[int], hops: int,
                     node_budget: int = 500) -> Subgraph:
    """Collect all entities within ``hops`` undirected steps of the seeds.

    Expansion is ring by ring; if adding the next ring would exceed the
    node budget, expansion stops at the last complete ring and the
    ``truncated`` flag is set. Included triples are those with both
    endpoints inside the collected entity set, in KB order.
    """
    if hops < 1:
        raise DataError(f"hops must be >= 1, got {hops}")
    if not seeds:
        raise DataError("subgraph extraction requires at least one seed")
    for s in seeds:
        if not 0 <= s < kb.n_entities:
            raise DataError(f"seed entity id {s} not in KB")
    if node_budget < len(seeds):
        raise DataError(
            f"node budget {node_budget} smaller than seed count {len(seeds)}")

    collected = set(seeds)
    frontier = set(seeds)
    truncated = False
    for _ in range(hops):
        ring: set[int] = set()
        for e in frontier:
            for t_idx in kb.adjacency[e]:
                t = kb.triples[t_idx]
                for other in (t.subject, t.obj):
                    if other not in collected:
                        ring.add(other)
        if not ring:
            break
        if len(collected) + len(ring) > node_budget:
            truncated = True
            break
        collected |= ring
        frontier = ring
    triples = tuple(t for t in kb.triples
                    if t.subject in collected and t.obj in collected)
    return Subgraph(kb=kb, entity_nodes=frozenset(collected), triples=triples,
                    seeds=frozenset(seeds), truncated=truncated)


class Vocabulary:
    """Word-id table shared by question tokens and node surfaces.

    Index 0 is the unknown-word token. ``intern`` adds new tokens until the
    vocabulary is frozen; afterwards unseen tokens map to the unknown id.
    """

    UNK = "<unk>"

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = [self.UNK]
        self._ids: dict[str, int] = {self.UNK: 0}
        self._frozen = False
        for tok in tokens:
            self.intern(tok)

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Vocabulary":
        self._frozen = True
        return self

    def intern(self, token: str) -> int:
        tid = self._ids.get(token)
        if tid is not None:
            return tid
        if self._frozen:
            return 0
        self._ids[token] = len(self._tokens)
        self._tokens.append(token)
        return self._ids[token]

    def id_of(self, token: str) -> int:
        return self._ids.get(token, 0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in self._tokens:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def vocab_from_kb(kb: KnowledgeBase) -> Vocabulary:
    """Vocabulary seeded with every entity and relation surface."""
    vocab = Vocabulary()
    for s in kb.entities:
        vocab.intern(normalize_surface(s))
    for s in kb.relations:
        vocab.intern(normalize_surface(s))
    return vocab


@dataclass(frozen=True)
class QAExample:
    question: str
    tokens: tuple[int, ...]
    seeds: frozenset[int]
    answers: frozenset[int]
    hops: int


@dataclass
class QADataset:
    """Linked QA examples plus the questions that could not be linked."""
    examples: list[QAExample]
    unlinkable: list[tuple[int, str]] = field(default_factory=list)
    hops: int = 1

    def __len__(self) -> int:
        return len(self.examples)


def load_qa(path: str | Path, kb: KnowledgeBase, vocab: Vocabulary,
            hops: int) -> QADataset:
    """Parse a tab-separated QA file against a KB.

    Answers must name KB entities exactly (whole-surface match); an unknown
    answer string is an error naming the string and line. Questions whose
    seed cannot be linked are skipped and recorded in ``unlinkable``.
    """
    path = Path(path)
    examples: list[QAExample] = []
    unlinkable: list[tuple[int, str]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(
                    f"{path}:{lineno}: expected 'question<TAB>answers', "
                    f"found {len(parts) - 1} tab(s)")
            question, answer_field = parts
            answer_surfaces = [a for a in answer_field.split("|") if a.strip()]
            if not answer_surfaces:
                raise DataError(f"{path}:{lineno}: empty answer list")
            answers = set()
            for surf in answer_surfaces:
                eid = kb.entity_id(surf.strip())
                if eid is None:
                    raise DataError(
                        f"{path}:{lineno}: answer entity {surf.strip()!r} "
                        f"not in KB")
                answers.add(eid)
            try:
                seeds = link_entities(question, kb)
            except LinkError:
                unlinkable.append((lineno, question))
                continue
            tokens = tuple(vocab.intern(t)
                           for t in tokenize(strip_brackets(question)))
            if not tokens:
                raise DataError(f"{path}:{lineno}: question has no tokens")
            examples.append(QAExample(question=question, tokens=tokens,
                                      seeds=frozenset(seeds),
                                      answers=frozenset(answers), hops=hops))
    return QADataset(examples=examples, unlinkable=unlinkable, hops=hops)


def save_qa(dataset: QADataset, kb: KnowledgeBase, path: str | Path) -> None:
    """Write examples back to the tab-separated QA format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            answers = "|".join(kb.entities[a] for a in sorted(ex.answers))
            fh.write(f"{ex.question}\t{answers}\n")
