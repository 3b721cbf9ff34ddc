"""Node init, question LSTM, gated layers, prediction head."""
import numpy as np
import pytest

import graphqa.autodiff as ad
from graphqa.autodiff import ParamStore, Tensor, grad_check
from graphqa.errors import ConfigError, DataError
from graphqa.graph import GraphOptions, build_reasoning_graph
from graphqa.kb import (KnowledgeBase, Triple, Vocabulary, extract_subgraph,
                        vocab_from_kb)
from graphqa.model import (EncodedGraph, ModelConfig, answer_labels,
                           attach_question, build_params, encode_graph,
                           encode_question, forward, gate_combine,
                           gcn_update, init_nodes, load_word_vectors,
                           loss_from_probs, read_prediction)


# ---------------------------------------------------------------- oracles

def reference_lstm(tokens, emb, wx, wh, b, m):
    """Hand-unrolled LSTM forward in plain numpy.

    wx/wh/b are dicts keyed input/forget/cell/output; returns the final
    hidden state, shape (1, m).
    """
    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))

    h = np.zeros((1, m))
    c = np.zeros((1, m))
    for tok in tokens:
        x = emb[tok][None, :]
        i = sig(x @ wx["input"] + h @ wh["input"] + b["input"])
        f = sig(x @ wx["forget"] + h @ wh["forget"] + b["forget"])
        g = np.tanh(x @ wx["cell"] + h @ wh["cell"] + b["cell"])
        o = sig(x @ wx["output"] + h @ wh["output"] + b["output"])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def chain_setup(n_words=12, word_dim=5, question_dim=4, layers=2):
    """A three-node graph (entity -> relation -> entity) plus params."""
    kb = KnowledgeBase(["alpha", "beta"], ["linked"], [Triple(0, 0, 1)])
    vocab = vocab_from_kb(kb)
    for i in range(n_words - len(vocab)):
        vocab.intern(f"w{i}")
    config = ModelConfig(word_dim=word_dim, question_dim=question_dim,
                         layers=layers, dropout=0.0)
    store = build_params(len(vocab), config, seed=7)
    sub = extract_subgraph(kb, {0}, hops=1)
    graph, adj = build_reasoning_graph(sub, GraphOptions())
    encoded = encode_graph(graph, adj, vocab, config)
    return kb, vocab, config, store, graph, encoded


# ----------------------------------------------------------------- configs

def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(word_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(layers=0)
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        ModelConfig(phi="relu")
    with pytest.raises(ConfigError):
        ModelConfig(max_distance_token=0)
    assert ModelConfig(word_dim=3, question_dim=5).node_dim == 8


def test_build_params_layout():
    config = ModelConfig(word_dim=5, question_dim=4, layers=3)
    store = build_params(vocab_size=11, config=config, seed=0)
    d = config.node_dim
    assert store["word_emb"].shape == (11, 5)
    assert store["dist_emb"].shape == (9, 5)       # tokens 0..8
    assert store["node_proj"].shape == (10, 5)
    for gate in ("input", "forget", "cell", "output"):
        assert store[f"lstm_wx_{gate}"].shape == (5, 4)
        assert store[f"lstm_wh_{gate}"].shape == (4, 4)
        assert store[f"lstm_b_{gate}"].shape == (4,)
    for layer in range(3):
        assert store[f"layer{layer}_w_self"].shape == (d, d)
        assert store[f"layer{layer}_w_neigh"].shape == (d, d)
        assert store[f"layer{layer}_gate_w"].shape == (2 * d, d)
        assert store[f"layer{layer}_gate_b"].shape == (d,)
    assert store["predict_w"].shape == (d + 4, 2)
    # same seed, same values
    again = build_params(vocab_size=11, config=config, seed=0)
    for name, p in store.items():
        assert np.array_equal(p.values, again[name].values)


def test_build_params_rejects_empty_vocab():
    with pytest.raises(ConfigError):
        build_params(0, ModelConfig())


# ------------------------------------------------------------ encode_graph

def test_encode_graph_word_ids_and_entities():
    kb, vocab, config, store, graph, encoded = chain_setup()
    surfaces = [n.surface for n in graph.nodes]
    assert surfaces == ["alpha", "beta", "linked"]
    assert encoded.word_ids.tolist() == [vocab.id_of("alpha"),
                                         vocab.id_of("beta"),
                                         vocab.id_of("linked")]
    assert encoded.dist_ids.tolist() == [0, 2, 1]
    assert encoded.entity_rows.tolist() == [0, 1]
    assert encoded.entity_ids.tolist() == [0, 1]


def test_encode_graph_clamps_distance_tokens():
    # a 7-entity directed chain: levi depth reaches 12 > 8
    n = 7
    kb = KnowledgeBase([f"e{i}" for i in range(n)], ["r"],
                       [Triple(i, 0, i + 1) for i in range(n - 1)])
    vocab = vocab_from_kb(kb)
    config = ModelConfig(word_dim=4, question_dim=4)
    sub = extract_subgraph(kb, {0}, hops=n)
    graph, adj = build_reasoning_graph(sub, GraphOptions())
    encoded = encode_graph(graph, adj, vocab, config)
    assert max(graph.hops) == 2 * (n - 1)
    assert encoded.dist_ids.max() == config.max_distance_token
    assert encoded.dist_ids.min() == 0


def test_encode_graph_requires_layering():
    kb, vocab, config, store, graph, encoded = chain_setup()
    from graphqa.graph import levi_transform
    sub = extract_subgraph(kb, {0}, hops=1)
    unlayered = levi_transform(sub)
    with pytest.raises(DataError):
        encode_graph(unlayered, encoded.adj, vocab, config)


# -------------------------------------------------------------- init_nodes

def test_init_nodes_projects_concat():
    kb, vocab, config, store, graph, encoded = chain_setup()
    out = init_nodes(encoded, store, config)
    w = store["word_emb"].values[encoded.word_ids]
    d = store["dist_emb"].values[encoded.dist_ids]
    want = np.concatenate([w, d], axis=1) @ store["node_proj"].values
    assert np.allclose(out.values, want, atol=1e-12)


def test_init_nodes_distance_ablation_ignores_hops():
    kb, vocab, config, store, graph, encoded = chain_setup()
    no_de = ModelConfig(word_dim=config.word_dim,
                        question_dim=config.question_dim,
                        layers=config.layers, dropout=0.0,
                        use_distance_embedding=False)
    base = init_nodes(encoded, store, no_de).values
    shifted = EncodedGraph(adj=encoded.adj, word_ids=encoded.word_ids,
                           dist_ids=(encoded.dist_ids + 3) % 8,
                           entity_rows=encoded.entity_rows,
                           entity_ids=encoded.entity_ids,
                           n_nodes=encoded.n_nodes)
    assert np.array_equal(init_nodes(shifted, store, no_de).values, base)
    # with distance embeddings on, the same shift changes the output
    with_de = init_nodes(shifted, store, config).values
    assert not np.allclose(init_nodes(encoded, store, config).values,
                           with_de)


# ---------------------------------------------------------------- LSTM

def test_encode_question_matches_reference_lstm():
    kb, vocab, config, store, graph, encoded = chain_setup(
        word_dim=6, question_dim=5)
    emb = store["word_emb"].values
    wx = {g: store[f"lstm_wx_{g}"].values for g in
          ("input", "forget", "cell", "output")}
    wh = {g: store[f"lstm_wh_{g}"].values for g in
          ("input", "forget", "cell", "output")}
    b = {g: store[f"lstm_b_{g}"].values for g in
         ("input", "forget", "cell", "output")}
    rng = np.random.default_rng(2)
    for _ in range(10):
        tokens = [int(t) for t in
                  rng.integers(0, len(vocab), size=int(rng.integers(1, 7)))]
        got = encode_question(tokens, store, config).values
        want = reference_lstm(tokens, emb, wx, wh, b, config.question_dim)
        assert got.shape == (1, config.question_dim)
        assert np.allclose(got, want, atol=1e-12)


def test_encode_question_rejects_empty():
    kb, vocab, config, store, graph, encoded = chain_setup()
    with pytest.raises(DataError):
        encode_question([], store, config)


def test_encode_question_grad_check():
    kb, vocab, config, store, graph, encoded = chain_setup(
        word_dim=4, question_dim=3)

    def loss():
        q = encode_question([1, 3, 2], store, config)
        return ad.mean(ad.mul(q, q))

    assert grad_check(loss, store, samples_per_param=20) < 1e-4


# ----------------------------------------------------------- gcn and gating

def test_gcn_update_scalar_chain():
    # chain graph a -> r -> b with unit weights, h = [1, 2, 3]^T:
    # aggregates are [0, h_r, h_a] = [0, 3, 1] wait: preds(b) = {r}
    kb, vocab, config, store, graph, encoded = chain_setup()
    h = ad.constant(np.array([[1.0], [2.0], [3.0]]))
    w = ad.constant(np.array([[1.0]]))
    # node order: alpha(0), beta(1), linked(2); edges (0,2), (2,1)
    # preds: alpha none, beta {linked}, linked {alpha}
    out = gcn_update(h, encoded.adj, w, w).values
    want = [[1 / (1 + np.exp(-1.0))],       # sigma(0*1 + 1)
            [1 / (1 + np.exp(-5.0))],       # sigma(3 + 2)
            [1 / (1 + np.exp(-4.0))]]       # sigma(1 + 3)
    assert np.allclose(out, want, atol=1e-12)
    assert out[0][0] == pytest.approx(0.7310585786300049, abs=1e-12)
    assert out[1][0] == pytest.approx(0.9933071490757153, abs=1e-12)
    assert out[2][0] == pytest.approx(0.9820137900379085, abs=1e-12)


def test_gate_combine_scalar_frozen():
    config = ModelConfig(word_dim=1, question_dim=1, dropout=0.0)
    u = ad.constant(np.array([[0.5]]))
    h = ad.constant(np.array([[0.25]]))
    gate_w = ad.constant(np.array([[1.0], [1.0]]))
    gate_b = ad.constant(np.array([0.0]))
    out = gate_combine(u, h, gate_w, gate_b, config)
    # a = sigma(0.75); out = tanh(0.5) * a + 0.25 * (1 - a)
    assert out.values[0, 0] == pytest.approx(0.39406545494063566, abs=1e-12)


def test_gate_combine_sigmoid_phi():
    config = ModelConfig(word_dim=1, question_dim=1, dropout=0.0,
                         phi="sigmoid")
    u = ad.constant(np.array([[0.5]]))
    h = ad.constant(np.array([[0.25]]))
    gate_w = ad.constant(np.array([[1.0], [1.0]]))
    gate_b = ad.constant(np.array([0.0]))
    out = gate_combine(u, h, gate_w, gate_b, config)
    a = 1 / (1 + np.exp(-0.75))
    s = 1 / (1 + np.exp(-0.5))
    assert out.values[0, 0] == pytest.approx(s * a + 0.25 * (1 - a),
                                             abs=1e-12)


def test_gate_is_convex_blend():
    # gate output lies between phi(u) and h elementwise
    rng = np.random.default_rng(4)
    config = ModelConfig(word_dim=2, question_dim=2, dropout=0.0)
    for _ in range(20):
        u = ad.constant(rng.normal(size=(3, 4)))
        h = ad.constant(rng.normal(size=(3, 4)))
        gw = ad.constant(rng.normal(size=(8, 4)))
        gb = ad.constant(rng.normal(size=(4,)))
        out = gate_combine(u, h, gw, gb, config).values
        lo = np.minimum(np.tanh(u.values), h.values)
        hi = np.maximum(np.tanh(u.values), h.values)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


# ----------------------------------------------------------------- forward

def test_forward_shapes_and_row_sums():
    kb, vocab, config, store, graph, encoded = chain_setup()
    probs = forward(encoded, [1, 2], store, config)
    assert probs.shape == (encoded.n_nodes, 2)
    assert np.allclose(probs.values.sum(axis=1), 1.0)
    assert (probs.values > 0).all()


def test_forward_deterministic_without_dropout():
    kb, vocab, config, store, graph, encoded = chain_setup()
    p1 = forward(encoded, [1, 2], store, config).values
    p2 = forward(encoded, [1, 2], store, config).values
    assert np.array_equal(p1, p2)


def test_forward_training_needs_rng_when_dropout_on():
    kb, vocab, config, store, graph, encoded = chain_setup()
    droppy = ModelConfig(word_dim=config.word_dim,
                         question_dim=config.question_dim,
                         layers=config.layers, dropout=0.5)
    with pytest.raises(ConfigError):
        forward(encoded, [1], store, droppy, training=True, rng=None)
    out = forward(encoded, [1], store, droppy, training=True,
                  rng=np.random.default_rng(0))
    assert out.shape == (encoded.n_nodes, 2)


def test_attach_question_widths():
    q = ad.constant(np.ones((1, 3)))
    nodes = ad.constant(np.zeros((4, 2)))
    h = attach_question(nodes, q)
    assert h.shape == (4, 5)
    assert np.allclose(h.values[:, 2:], 1.0)


def test_full_model_grad_check_small():
    kb, vocab, config, store, graph, encoded = chain_setup(
        word_dim=3, question_dim=3)
    labels = np.array([0, 1, 0])

    def loss():
        probs = forward(encoded, [1, 4, 2], store, config)
        return loss_from_probs(probs, labels)

    assert grad_check(loss, store, samples_per_param=6) < 1e-3


# -------------------------------------------------------- labels and loss

def test_answer_labels_mark_entities_only():
    kb, vocab, config, store, graph, encoded = chain_setup()
    labels = answer_labels(encoded, {1})
    assert labels.tolist() == [0, 1, 0]
    assert answer_labels(encoded, set()).tolist() == [0, 0, 0]


def test_loss_from_probs_frozen_value():
    probs = ad.constant(np.array([[0.5, 0.5], [0.9, 0.1]]))
    loss = loss_from_probs(probs, np.array([0, 0]))
    assert loss.item() == pytest.approx(0.3992538481088858, abs=1e-12)
    with pytest.raises(DataError):
        loss_from_probs(probs, np.array([0, 0, 0]))


# -------------------------------------------------------------- predictions

def encoded_stub(entity_rows, entity_ids, n_nodes):
    return EncodedGraph(adj=None, word_ids=None, dist_ids=None,
                        entity_rows=np.array(entity_rows, dtype=np.intp),
                        entity_ids=np.array(entity_ids, dtype=np.intp),
                        n_nodes=n_nodes)


def test_read_prediction_strict_majority_set():
    enc = encoded_stub([0, 1, 2], [10, 11, 12], 3)
    probs = np.array([[0.4, 0.6], [0.5, 0.5], [0.7, 0.3]])
    pred = read_prediction(probs, enc)
    assert pred.answers == frozenset({10})     # ties are not predictions
    assert pred.top1 == 10
    assert not pred.relation_argmax


def test_read_prediction_tie_goes_to_lowest_node_index():
    enc = encoded_stub([0, 1, 2], [30, 20, 10], 3)
    probs = np.array([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
    assert read_prediction(probs, enc).top1 == 30


def test_read_prediction_relation_argmax_flag():
    # node 1 is a relation node that outscores every entity
    enc = encoded_stub([0, 2], [10, 12], 3)
    probs = np.array([[0.4, 0.6], [0.1, 0.9], [0.8, 0.2]])
    pred = read_prediction(probs, enc)
    assert pred.relation_argmax
    assert pred.top1 == 10                     # entities only
    enc_all = encoded_stub([0, 1, 2], [10, 11, 12], 3)
    assert not read_prediction(probs, enc_all).relation_argmax


def test_read_prediction_requires_entities():
    enc = encoded_stub([], [], 2)
    with pytest.raises(DataError):
        read_prediction(np.array([[0.5, 0.5], [0.5, 0.5]]), enc)


# ------------------------------------------------------------- word vectors

def test_load_word_vectors(tmp_path):
    kb, vocab, config, store, graph, encoded = chain_setup(word_dim=3)
    before = store["word_emb"].values.copy()
    vec = tmp_path / "vectors.txt"
    vec.write_text("alpha 1.0 2.0 3.0\nnot-in-vocab 9 9 9\n",
                   encoding="utf-8")
    replaced = load_word_vectors(vec, vocab, store)
    assert replaced == 1
    aid = vocab.id_of("alpha")
    assert store["word_emb"].values[aid].tolist() == [1.0, 2.0, 3.0]
    untouched = [i for i in range(len(vocab)) if i != aid]
    assert np.array_equal(store["word_emb"].values[untouched],
                          before[untouched])


def test_load_word_vectors_dim_mismatch(tmp_path):
    kb, vocab, config, store, graph, encoded = chain_setup(word_dim=3)
    vec = tmp_path / "vectors.txt"
    vec.write_text("alpha 1.0 2.0\n", encoding="utf-8")
    with pytest.raises(DataError, match="expected 3"):
        load_word_vectors(vec, vocab, store)
