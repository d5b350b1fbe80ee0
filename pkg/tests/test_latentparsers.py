import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltl import gradcore as gc
from ltl import latentparsers as lp
from ltl import treekit as tk


def store64(seed=0):
    return gc.ParameterStore(np.float64, gc.RngStream(seed))


def leaves_for(store, n, batch, dim, seed=0):
    return store.const(np.random.default_rng(seed).standard_normal((n * batch, dim)))


def rows(leaves, n, batch, b):
    return [leaves[i * batch + b : i * batch + b + 1] for i in range(n)]


def test_treelstm_zero_weights():
    s = store64()
    cell = lp.TreeLSTM(s, 3)
    s["compose.w"].data[...] = 0.0
    s["compose.b"].data[...] = 0.0
    cl = np.array([[0.5, -1.0, 2.0]])
    cr = np.array([[1.0, 0.25, -0.5]])
    out = cell(lp.Phrase(s.const(np.ones((1, 3))), s.const(cl)), lp.Phrase(s.const(np.ones((1, 3))), s.const(cr)))
    np.testing.assert_allclose(out.h.data, 0.5 * np.tanh(0.5 * (cl + cr)))
    z = lp.Phrase(s.const(np.zeros((1, 3))), s.const(np.zeros((1, 3))))
    assert np.all(cell(z, z).h.data == 0.0) and np.all(cell(z, z).c.data == 0.0)


def test_treelstm_grad_check():
    s = store64(1)
    cell = lp.TreeLSTM(s, 3, tracker_dim=2)
    rng = np.random.default_rng(0)
    a, b, t = (s.const(rng.standard_normal(shape)) for shape in [(2, 3), (2, 3), (2, 2)])
    f = lambda: gc.sum_(gc.mul(cell(lp.Phrase(a, b), lp.Phrase(b, a), t).h, 1.7))
    assert gc.grad_check(f, s) < 1e-4


def test_transition_mask():
    m = lp.transition_mask(np.array([1, 2, 3]), np.array([2, 0, 1]), np.float64)
    assert m[0, tk.REDUCE] == -np.inf and m[0, tk.SHIFT] == 0
    assert m[1, tk.SHIFT] == -np.inf and m[1, tk.REDUCE] == 0
    assert np.all(m[2] == 0)


def test_spinn_single_token():
    s = store64()
    sp = lp.Spinn(s, 4, 3)
    leaves = leaves_for(s, 1, 2, 4)
    res = sp(leaves, 2, lp.PREDICT)
    assert res.trees == [0, 0] and res.ops == [[tk.SHIFT], [tk.SHIFT]]
    np.testing.assert_array_equal(res.vectors.data, leaves.data)
    np.testing.assert_allclose(res.logp.data, 0.0)


def test_spinn_forced_shift_probability():
    s = store64()
    sp = lp.Spinn(s, 4, 3)
    res = sp(leaves_for(s, 5, 3, 4), 3, lp.PREDICT)
    # the first two steps see a stack of size < 2
    for step in (0, 1):
        np.testing.assert_array_equal(res.distributions[step][:, tk.SHIFT], 1.0)


def test_spinn_given_mode():
    s = store64()
    sp = lp.Spinn(s, 4, 3)
    res = sp(leaves_for(s, 3, 1, 4), 1, lp.GIVEN, [tk.parse_ops("S S R S R")])
    assert res.trees == [((0, 1), 2)]
    with pytest.raises(tk.InvalidSequence):
        sp(leaves_for(s, 3, 1, 4), 1, lp.GIVEN, [tk.parse_ops("S R S S R")])
    with pytest.raises(lp.TransitionsRequired):
        sp(leaves_for(s, 3, 1, 4), 1, lp.GIVEN)
    with pytest.raises(lp.TransitionsRequired):
        lp.Spinn(store64(), 4, 0)(leaves_for(s, 3, 1, 4), 1, lp.PREDICT)


def test_reduce_bias_gives_left_branching():
    s = store64(3)
    sp = lp.Spinn(s, 4, 3)
    s["spinn.transition.b"].data[0] = [0.0, 10.0]
    for n in range(1, 13):
        res = sp(leaves_for(s, n, 2, 4, seed=n), 2, lp.PREDICT)
        assert res.trees == [tk.gen_left(n)] * 2


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(0, 10_000))
def test_spinn_nc_matches_recursive_treelstm(n, seed):
    s = store64(seed)
    sp = lp.Spinn(s, 4, 3, connect=False)
    rng = np.random.default_rng(seed)
    batch = 3
    leaves = leaves_for(s, n, batch, 4, seed)
    ts = [tk.gen_random_merge(n, rng) for _ in range(batch)]
    res = sp(leaves, batch, lp.GIVEN, [tk.tree_to_transitions(t) for t in ts])
    assert res.trees == ts
    for b, t in enumerate(ts):
        ref = lp.recursive_encode(sp.cell, t, rows(leaves, n, batch, b), s)
        np.testing.assert_allclose(res.vectors.data[b], ref.h.data[0], rtol=0, atol=1e-12)


def test_spinn_sample_mode_yields_valid_trees():
    s = store64()
    sp = lp.Spinn(s, 4, 3)
    res = sp(leaves_for(s, 6, 4, 4), 4, lp.SAMPLE, rng=np.random.default_rng(0))
    for ops, t in zip(res.ops, res.trees):
        assert tk.is_valid_sequence(ops, 6) and tk.transitions_to_tree(ops) == t


def test_spinn_given_grad_check():
    s = store64(4)
    sp = lp.Spinn(s, 4, 3)
    leaves = leaves_for(s, 4, 2, 4)
    trans = [tk.tree_to_transitions(((0, 1), (2, 3))), tk.tree_to_transitions(tk.gen_right(4))]

    def f():
        res = sp(leaves, 2, lp.GIVEN, trans)
        return gc.add(gc.sum_(gc.tanh(res.vectors)), gc.sum_(res.logp))

    assert gc.grad_check(f, s) < 1e-4


def test_gumbel_layers():
    s = store64()
    g = lp.STGumbel(s, 4)
    res = g(leaves_for(s, 4, 2, 4), 2)
    assert [d.shape[1] for d in res.distributions] == [3, 2, 1]
    assert len(res.ops) == 3


def test_gumbel_eval_is_hard_composition():
    s = store64(2)
    g = lp.STGumbel(s, 4)
    n, batch = 6, 3
    leaves = leaves_for(s, n, batch, 4, 1)
    res = g(leaves, batch, train=False)
    for b, t in enumerate(res.trees):
        ref = lp.recursive_encode(g.cell, t, rows(leaves, n, batch, b), s)
        np.testing.assert_allclose(res.vectors.data[b], ref.h.data[0], atol=1e-12)


def test_gumbel_soft_weights():
    s = store64()
    g = lp.STGumbel(s, 4)
    s["gumbel.query"].data[...] = 0.0
    noise = [np.array([[2.0, 1.0, 0.0]]), np.zeros((1, 2))]
    res = g(leaves_for(s, 4, 1, 4), 1, train=True, noise=noise)
    np.testing.assert_allclose(res.distributions[0][0], [0.6652, 0.2447, 0.0900], atol=5e-5)
    assert res.ops[0][0] == 0
    s["gumbel.temperature"].data[...] = np.log(np.expm1(1e-4))
    res = g(leaves_for(s, 4, 1, 4), 1, train=True, noise=noise)
    assert res.distributions[0].max() > 0.999


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_gumbel_valid_trees(n, seed):
    s = store64(seed)
    g = lp.STGumbel(s, 4)
    res = g(leaves_for(s, n, 2, 4, seed), 2, train=True, rng=np.random.default_rng(seed))
    assert len(res.ops) == n - 1
    for t in res.trees:
        assert tk.leaves(t) == list(range(n))


def test_gumbel_frozen_selection_grad_check():
    s = store64(5)
    g = lp.STGumbel(s, 4)
    leaves = leaves_for(s, 4, 2, 4)
    sel = [np.array([2, 0]), np.array([0, 1]), np.array([0, 0])]
    f = lambda: gc.sum_(gc.tanh(g(leaves, 2, selections=sel).vectors))
    assert gc.grad_check(f, s) < 1e-4


def test_spinn_given_trees_exhaustive():
    s = store64(8)
    sp = lp.Spinn(s, 4, 3)
    for n in range(1, 9):
        seqs = list(tk.enumerate_sequences(n))
        res = sp(leaves_for(s, n, len(seqs), 4, n), len(seqs), lp.GIVEN, seqs)
        assert res.trees == [tk.transitions_to_tree(q) for q in seqs]


def test_masking_law_and_valid_samples():
    s = store64(9)
    sp = lp.Spinn(s, 4, 3)
    s["spinn.transition.b"].data[0] = [3.0, -3.0]  # lean on SHIFT so the mask matters late
    rng = np.random.default_rng(0)
    total = 0
    for n in range(1, 21):
        batch = 500
        res = sp(leaves_for(s, n, batch, 4, n), batch, lp.SAMPLE, rng=rng)
        stack = np.zeros(batch, dtype=int)
        buffer = np.full(batch, n)
        for step, dist in enumerate(res.distributions):
            assert np.all(dist[buffer == 0, tk.SHIFT] == 0.0)
            assert np.all(dist[stack < 2, tk.REDUCE] == 0.0)
            ops = np.array([o[step] for o in res.ops])
            stack += np.where(ops == tk.SHIFT, 1, -1)
            buffer -= ops == tk.SHIFT
        assert all(tk.is_valid_sequence(o, n) for o in res.ops)
        total += batch
    assert total == 10_000


def test_gumbel_fixed_rng_is_repeatable():
    s = store64(10)
    g = lp.STGumbel(s, 4)
    leaves = leaves_for(s, 7, 5, 4)
    a = g(leaves, 5, train=True, rng=np.random.default_rng(3))
    b = g(leaves, 5, train=True, rng=np.random.default_rng(3))
    assert a.trees == b.trees
    np.testing.assert_array_equal(a.vectors.data, b.vectors.data)
