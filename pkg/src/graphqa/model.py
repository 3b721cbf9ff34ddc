"""The graph reasoner: node features, question encoder, gated updates.

Every node starts from its surface word embedding concatenated with an
embedding of its hop distance, projected to the word width. The question
is encoded by a single-layer LSTM whose final hidden state is appended to
every node state, so layer updates can condition on the question. Each
layer computes a normalized neighbor aggregate and blends it with the
previous state through a learned gate. A two-way softmax head scores every
node as answer / non-answer.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, DataError
from .graph import ENTITY, AdjacencyView, ReasoningGraph
from .kb import Vocabulary, normalize_surface

PHI_FUNCS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid}
LSTM_GATES = ("input", "forget", "cell", "output")


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 100            # n: word and distance embedding width
    question_dim: int = 100        # m: LSTM hidden width
    layers: int = 2
    dropout: float = 0.1
    max_distance_token: int = 8    # hops are clamped to this token
    phi: str = "tanh"              # candidate-state nonlinearity
    use_distance_embedding: bool = True

    def __post_init__(self):
        if self.word_dim < 1 or self.question_dim < 1:
            raise ConfigError("embedding widths must be positive")
        if self.layers < 1:
            raise ConfigError(f"need at least one layer, got {self.layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_distance_token < 1:
            raise ConfigError("max distance token must be >= 1")
        if self.phi not in PHI_FUNCS:
            raise ConfigError(f"unknown phi {self.phi!r}; "
                              f"choose from {sorted(PHI_FUNCS)}")

    @property
    def node_dim(self) -> int:
        """Node state width: word part plus question part, all layers."""
        return self.word_dim + self.question_dim


def build_params(vocab_size: int, config: ModelConfig,
                 seed: int = 0) -> ParamStore:
    """Create all model parameters in a fixed, seeded order."""
    if vocab_size < 1:
        raise ConfigError("vocabulary must not be empty")
    n, m, d = config.word_dim, config.question_dim, config.node_dim
    store = ParamStore(seed=seed)
    store.add_uniform("word_emb", (vocab_size, n))
    store.add_uniform("dist_emb", (config.max_distance_token + 1, n))
    store.add_xavier("node_proj", (2 * n, n))
    for gate in LSTM_GATES:
        store.add_xavier(f"lstm_wx_{gate}", (n, m))
        store.add_xavier(f"lstm_wh_{gate}", (m, m))
        store.add_zeros(f"lstm_b_{gate}", (m,))
    for layer in range(config.layers):
        store.add_xavier(f"layer{layer}_w_self", (d, d))
        store.add_xavier(f"layer{layer}_w_neigh", (d, d))
        store.add_xavier(f"layer{layer}_gate_w", (2 * d, d))
        store.add_zeros(f"layer{layer}_gate_b", (d,))
    store.add_xavier("predict_w", (d + m, 2))
    return store


@dataclass
class EncodedGraph:
    """Per-graph arrays the forward pass consumes."""
    adj: AdjacencyView
    word_ids: np.ndarray       # (N,) vocab id of each node surface
    dist_ids: np.ndarray       # (N,) clamped hop distance token
    entity_rows: np.ndarray    # node indices holding entities
    entity_ids: np.ndarray     # entity ids aligned with entity_rows
    n_nodes: int


def encode_graph(graph: ReasoningGraph, adj: AdjacencyView,
                 vocab: Vocabulary, config: ModelConfig) -> EncodedGraph:
    if graph.hops is None:
        raise DataError("graph must be layered before encoding")
    word_ids = np.array(
        [vocab.id_of(normalize_surface(node.surface))
         for node in graph.nodes], dtype=np.intp)
    dist_ids = np.minimum(np.array(graph.hops, dtype=np.intp),
                          config.max_distance_token)
    entity_rows = np.array([i for i, node in enumerate(graph.nodes)
                            if node.kind == ENTITY], dtype=np.intp)
    entity_ids = np.array([graph.nodes[i].ref for i in entity_rows],
                          dtype=np.intp)
    return EncodedGraph(adj=adj, word_ids=word_ids, dist_ids=dist_ids,
                        entity_rows=entity_rows, entity_ids=entity_ids,
                        n_nodes=len(graph.nodes))


def init_nodes(encoded: EncodedGraph, store: ParamStore,
               config: ModelConfig) -> Tensor:
    """Project [word embedding; distance embedding] to the word width."""
    w = ad.embedding_lookup(store["word_emb"], encoded.word_ids)
    if config.use_distance_embedding:
        d = ad.embedding_lookup(store["dist_emb"], encoded.dist_ids)
    else:
        d = ad.constant(np.zeros((encoded.n_nodes, config.word_dim)))
    return ad.matmul(ad.concat(w, d, axis=1), store["node_proj"])


def encode_question(tokens, store: ParamStore, config: ModelConfig) -> Tensor:
    """Run the LSTM over the question; the final hidden state is the
    question vector (shape (1, m))."""
    tokens = list(tokens)
    if not tokens:
        raise DataError("cannot encode an empty question")
    m = config.question_dim
    h = ad.constant(np.zeros((1, m)))
    c = ad.constant(np.zeros((1, m)))
    for tok in tokens:
        x = ad.embedding_lookup(store["word_emb"], [tok])
        gates = {}
        for gate in LSTM_GATES:
            pre = ad.add(
                ad.add(ad.matmul(x, store[f"lstm_wx_{gate}"]),
                       ad.matmul(h, store[f"lstm_wh_{gate}"])),
                store[f"lstm_b_{gate}"])
            gates[gate] = ad.tanh(pre) if gate == "cell" else ad.sigmoid(pre)
        c = ad.add(ad.mul(gates["forget"], c),
                   ad.mul(gates["input"], gates["cell"]))
        h = ad.mul(gates["output"], ad.tanh(c))
    return h


def attach_question(node_states: Tensor, question: Tensor) -> Tensor:
    """Append the question vector to every node state."""
    return ad.concat(node_states,
                     ad.repeat_rows(question, node_states.shape[0]), axis=1)


def gcn_update(h: Tensor, adj: AdjacencyView, w_self: Tensor,
               w_neigh: Tensor) -> Tensor:
    """Candidate state: normalized neighbor sum plus self transform."""
    neigh = ad.aggregate_neighbors(ad.matmul(h, w_neigh), adj)
    return ad.sigmoid(ad.add(neigh, ad.matmul(h, w_self)))


def gate_combine(u: Tensor, h: Tensor, gate_w: Tensor, gate_b: Tensor,
                 config: ModelConfig, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Blend candidate and previous state through a learned gate."""
    a = ad.sigmoid(ad.add(ad.matmul(ad.concat(u, h, axis=1), gate_w), gate_b))
    keep = ad.sub(ad.constant(np.ones_like(a.values)), a)
    phi = PHI_FUNCS[config.phi]
    out = ad.add(ad.mul(phi(u), a), ad.mul(h, keep))
    if training and config.dropout > 0.0:
        out = ad.dropout(out, config.dropout, training, rng)
    return out


def forward(encoded: EncodedGraph, tokens, store: ParamStore,
            config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Per-node [non-answer, answer] probabilities, shape (N, 2)."""
    question = encode_question(tokens, store, config)
    h = attach_question(init_nodes(encoded, store, config), question)
    for layer in range(config.layers):
        u = gcn_update(h, encoded.adj, store[f"layer{layer}_w_self"],
                       store[f"layer{layer}_w_neigh"])
        h = gate_combine(u, h, store[f"layer{layer}_gate_w"],
                         store[f"layer{layer}_gate_b"], config,
                         training=training, rng=rng)
    logits = ad.matmul(
        ad.concat(h, ad.repeat_rows(question, encoded.n_nodes), axis=1),
        store["predict_w"])
    return ad.softmax(logits, axis=1)


def answer_labels(encoded: EncodedGraph, answers) -> np.ndarray:
    """Per-node class labels: 1 for answer entity nodes, else 0."""
    labels = np.zeros(encoded.n_nodes, dtype=np.intp)
    answer_set = set(answers)
    for row, eid in zip(encoded.entity_rows, encoded.entity_ids):
        if int(eid) in answer_set:
            labels[row] = 1
    return labels


def loss_from_probs(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over every node, relations included."""
    if labels.shape[0] != probs.shape[0]:
        raise DataError(f"labels cover {labels.shape[0]} nodes but the "
                        f"graph has {probs.shape[0]}")
    return ad.mean(ad.neg_log_pick(probs, labels))


@dataclass(frozen=True)
class Prediction:
    """Numpy-side summary of one forward pass."""
    answers: frozenset[int]        # entity ids with p(answer) > p(non-answer)
    top1: int                      # entity id with the highest answer prob
    relation_argmax: bool          # a relation node outscored every entity


def read_prediction(probs_values: np.ndarray,
                    encoded: EncodedGraph) -> Prediction:
    """Interpret forward output. Only entity nodes can be answers; ties on
    the top-1 pick go to the lowest node index."""
    if encoded.entity_rows.size == 0:
        raise DataError("graph has no entity nodes to predict from")
    p_answer = probs_values[:, 1]
    ent_answer = p_answer[encoded.entity_rows]
    ent_non = probs_values[encoded.entity_rows, 0]
    predicted = frozenset(int(eid) for eid, pa, pn in
                          zip(encoded.entity_ids, ent_answer, ent_non)
                          if pa > pn)
    top1 = int(encoded.entity_ids[int(np.argmax(ent_answer))])
    best_entity = float(ent_answer.max())
    relation_mask = np.ones(encoded.n_nodes, dtype=bool)
    relation_mask[encoded.entity_rows] = False
    relation_argmax = bool(relation_mask.any()
                           and p_answer[relation_mask].max() > best_entity)
    return Prediction(answers=predicted, top1=top1,
                      relation_argmax=relation_argmax)


def load_word_vectors(path: str | Path, vocab: Vocabulary,
                      store: ParamStore) -> int:
    """Overwrite word embedding rows from a text file of
    ``word v1 v2 ... vn`` lines. Words missing from the file keep their
    random initialization. Returns the number of rows replaced."""
    path = Path(path)
    table = store["word_emb"]
    dim = table.values.shape[1]
    replaced = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, vector = parts[0], parts[1:]
            if len(vector) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, "
                                f"got {len(vector)}")
            tid = vocab.id_of(word)
            if tid == 0 and word != Vocabulary.UNK:
                continue
            table.values[tid] = np.array([float(v) for v in vector])
            replaced += 1
    return replaced
