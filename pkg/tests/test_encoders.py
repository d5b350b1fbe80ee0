import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltl import encoders as enc
from ltl import gradcore as gc


def table(dim=4, seed=0):
    vocab = enc.build_vocab([["a", "b", "c"], ["c", "d"]])
    return enc.random_embeddings(vocab, dim, np.random.default_rng(seed))


def zero_all(store):
    for p in store.params.values():
        p.data[...] = 0.0


def test_build_vocab():
    vocab = enc.build_vocab([["b", "a"], ["a"]])
    assert vocab[0] == enc.UNK and sorted(vocab[1:]) == ["a", "b"]


def test_load_embeddings(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1 2 3 4\nb 0 0 0 1\nc 1 1 1 1\n")
    t = enc.load_embeddings(path, [enc.UNK, "a", "b", "c", "zzz"])
    assert t.dim == 4 and len(t) == 5
    np.testing.assert_array_equal(t.matrix[t.index["a"]], [1, 2, 3, 4])
    np.testing.assert_array_equal(t.matrix[t.index["zzz"]], 0.0)
    np.testing.assert_array_equal(t.matrix[0], 0.0)
    assert t.ids(["a", "never-seen"]) == [1, 0]


def test_load_embeddings_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("a 1 2 3 4\nb 1 2 3\n")
    with pytest.raises(enc.DimDrift) as err:
        enc.load_embeddings(bad, [enc.UNK, "a", "b"])
    assert "2" in str(err.value)
    dup = tmp_path / "dup.txt"
    dup.write_text("a 1 2\na 3 4\n")
    with pytest.raises(enc.DuplicateToken):
        enc.load_embeddings(dup, [enc.UNK, "a"])


def test_table_is_read_only():
    t = table()
    with pytest.raises(ValueError):
        t.matrix[1, 0] = 5.0


def test_linear_identity_reproduces_embeddings():
    t = table(4)
    store = gc.ParameterStore(np.float64)
    enc.attach_embeddings(store, t)
    enc.LeafEncoder(store, enc.LeafEncoderConfig("linear", 4), 4)
    store["leaf.w"].data[...] = np.eye(4)
    out = enc.encode_leaves(["a", "b", "d"], t, enc.LeafEncoderConfig("linear", 4), store)
    np.testing.assert_allclose(np.vstack([o.data for o in out]), t.matrix[t.ids(["a", "b", "d"])])


def test_bigru_zero_weights_give_zero():
    t = table(4)
    cfg = enc.LeafEncoderConfig("bigru", 6, "linear")
    store = gc.ParameterStore(np.float64)
    enc.attach_embeddings(store, t)
    enc.LeafEncoder(store, cfg, 4)
    zero_all(store)
    out = enc.encode_leaves(["a", "b", "c"], t, cfg, store)
    assert all(np.all(o.data == 0.0) for o in out)


def test_bigru_single_token():
    t = table(4)
    out = enc.encode_leaves(["a"], t, enc.LeafEncoderConfig("bigru", 4))
    assert len(out) == 1 and out[0].shape == (1, 4) and np.all(np.isfinite(out[0].data))


def test_odd_dim():
    with pytest.raises(enc.OddDim):
        enc.LeafEncoderConfig("bigru", 5)


def test_lstm_zero_weights_and_order():
    t = table(4)
    store = gc.ParameterStore(np.float64)
    enc.lstm_encode(["a"], t, store, dim=3)
    zero_all(store)
    assert np.all(enc.lstm_encode(["a", "b", "c"], t, store).data == 0.0)
    fresh = gc.ParameterStore(np.float64, gc.RngStream(1))
    u = enc.lstm_encode(["a", "b", "c"], t, fresh, dim=3).data
    v = enc.lstm_encode(["c", "b", "a"], t, fresh).data
    assert not np.allclose(u, v)


@pytest.mark.parametrize("variant,proj", [("linear", "none"), ("bigru", "none"), ("bigru", "linear")])
def test_leaf_encoder_grad_check(variant, proj):
    t = table(4, seed=2)
    store = gc.ParameterStore(np.float64, gc.RngStream(5))
    enc.attach_embeddings(store, t)
    leaf = enc.LeafEncoder(store, enc.LeafEncoderConfig(variant, 4, proj), 4)
    ids = np.array([t.ids(["a", "b", "c"]), t.ids(["d", "c", "a"])])
    w = np.random.default_rng(0).standard_normal((6, 4))
    assert gc.grad_check(lambda: gc.sum_(gc.tanh(gc.mul(leaf(ids), gc.constant(w)))), store) < 1e-4


def test_lstm_grad_check():
    t = table(4, seed=3)
    store = gc.ParameterStore(np.float64, gc.RngStream(6))
    enc.attach_embeddings(store, t)
    lstm = enc.LSTMEncoder(store, 4, 3)
    ids = np.array([t.ids(["a", "b", "c", "d"])])
    assert gc.grad_check(lambda: gc.sum_(gc.mul(lstm(ids), gc.constant([[1.0, -2.0, 0.5]]))), store) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from(["linear", "bigru"]), st.integers(0, 1000))
def test_width_and_forward_prefix_independence(n, cut, variant, seed):
    t = table(4)
    rng = np.random.default_rng(seed)
    toks = [str(x) for x in rng.choice(["a", "b", "c", "d"], size=n)]
    cfg = enc.LeafEncoderConfig(variant, 6)
    store = gc.ParameterStore(np.float64, gc.RngStream(seed))
    full = enc.encode_leaves(toks, t, cfg, store)
    assert all(o.shape == (1, 6) for o in full)
    if variant == "bigru":
        k = min(cut, n)
        prefix = enc.encode_leaves(toks[:k], t, cfg, store)
        for a, b in zip(full[:k], prefix):
            np.testing.assert_array_equal(a.data[:, :3], b.data[:, :3])
