"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to watch the lines as
they happen; the terminal summary repeats them in criterion order.
"""

import time

import numpy as np
import pytest

from ltl import gradcore as gc
from ltl import latentparsers as lp
from ltl import parsemetrics as pm
from ltl import treekit as tk
from ltl.encoders import LeafEncoder, LeafEncoderConfig, LSTMEncoder, random_embeddings
from ltl.trainer import data as D
from ltl.trainer.gradcheck import check_variant
from ltl.trainer.loop import ExperimentConfig, embedding_table, evaluate, hyper_search, new_model, train
from ltl.trainer.model import VARIANTS, EMABaseline, PairClassifier, pair_features, reinforce_loss


def parse_set(lengths, make, rng=None):
    return pm.ParseSet.from_pairs((f"s{i}", make(n, rng)) for i, n in enumerate(lengths))


@pytest.fixture(scope="module")
def synthetic():
    return D.gen_synthetic(50_000, (4, 12), 0, "train"), D.gen_synthetic(5_000, (4, 12), 1, "dev")


def test_1_transition_algebra(acceptance):
    t0 = time.perf_counter()
    counts = [len(tk.enumerate_trees(n)) for n in range(1, 9)]
    ok = counts == [1, 1, 2, 5, 14, 42, 132, 429] == [tk.catalan(n - 1) for n in range(1, 9)]
    for n in range(1, 9):
        for t in tk.enumerate_trees(n):
            seq = tk.tree_to_transitions(t)
            ok &= tk.is_valid_sequence(seq, n) and tk.transitions_to_tree(seq) == t
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        n = int(rng.integers(9, 64))
        t = tk.gen_random_merge(n, rng) if rng.random() < 0.5 else tk.gen_random_transitions(n, rng)
        ok &= tk.transitions_to_tree(tk.tree_to_transitions(t)) == t
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    acceptance("1 transition algebra", ok, f"counts {counts}, round trips exhaustive n<=8 + 10k fuzzed, {elapsed:.1f}s")
    assert ok


def test_2_metric_oracles(acceptance):
    rng = np.random.default_rng(2)
    self_scores = [pm.unlabeled_f1(t, t) for t in (tk.gen_random_merge(int(rng.integers(2, 40)), rng) for _ in range(1000))]
    lr = pm.unlabeled_f1(tk.gen_left(3), tk.gen_right(3))
    lengths = rng.integers(1, 40, size=2000)
    runs = [parse_set(lengths, lambda n, r: tk.gen_balanced(n)) for _ in range(5)]
    self_f1 = pm.self_f1(runs)
    last_two = pm.edge_stats(runs[0]).extra["last_two_rate"]
    ok = min(self_scores) == 100.0 and lr == 50.0 and self_f1 == 100.0 and last_two == 100.0
    acceptance("2 metric oracles", ok, f"F1(t,t) min {min(self_scores)}, left3 vs right3 {lr}, balanced self F1 {self_f1}, last-two {last_two}%")
    assert ok


def test_3_random_baseline_statistics(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in range(2, 7):
        exact = sum(p for t, p in tk.random_merge_distribution(n).items() if (0, 2) in tk.spans(t))
        hits = sum((0, 2) in tk.spans(tk.gen_random_merge(n, rng)) for _ in range(100_000))
        worst = max(worst, abs(hits / 100_000 - exact))
    lengths = rng.integers(4, 40, size=20_000)
    rate = pm.edge_stats(parse_set(lengths, tk.gen_random_merge, rng)).extra["first_two_rate"]
    elapsed = time.perf_counter() - t0
    ok = worst < 0.01 and abs(rate - 50.0) <= 3.0 and elapsed < 60
    acceptance("3 random baselines", ok, f"max |empirical - exact| {worst:.4f} (n<=6, 100k each), corpus first-two rate {rate:.1f}%, {elapsed:.1f}s")
    assert ok


def _component_grad_checks() -> dict:
    out = {}
    vocab = ["<unk>", "a", "b", "c", "d"]
    table = random_embeddings(vocab, 4, np.random.default_rng(0))
    ids = np.array([[1, 2, 3], [4, 3, 1]])
    w = gc.constant(np.random.default_rng(1).standard_normal((6, 4)))
    for variant, proj in (("linear", "none"), ("bigru", "none"), ("bigru", "linear")):
        s = gc.ParameterStore(np.float64, gc.RngStream(1))
        s.freeze("embeddings", table.matrix)
        leaf = LeafEncoder(s, LeafEncoderConfig(variant, 4, proj), 4)
        out[f"leaf-{variant}-{proj}"] = gc.grad_check(lambda: gc.sum_(gc.tanh(gc.mul(leaf(ids), w))), s)
    s = gc.ParameterStore(np.float64, gc.RngStream(2))
    s.freeze("embeddings", table.matrix)
    lstm = LSTMEncoder(s, 4, 4)
    out["lstm"] = gc.grad_check(lambda: gc.sum_(gc.tanh(lstm(ids))), s)
    s = gc.ParameterStore(np.float64, gc.RngStream(3))
    cell = lp.TreeLSTM(s, 4, 3)
    x = [s.const(np.random.default_rng(4).standard_normal((2, k))) for k in (4, 4, 4, 4, 3)]
    out["treelstm"] = gc.grad_check(lambda: gc.sum_(gc.tanh(cell(lp.Phrase(x[0], x[1]), lp.Phrase(x[2], x[3]), x[4]).h)), s)
    s = gc.ParameterStore(np.float64, gc.RngStream(4))
    clf = PairClassifier(s, 16, 5)
    u, v = s.param("u", (3, 4)), s.param("v", (3, 4))
    out["pair-classifier"] = gc.grad_check(lambda: gc.mean(gc.cross_entropy(clf(pair_features(u, v)), [0, 1, 2])), s)
    return out


def test_4_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    errors = _component_grad_checks()
    # every model path end to end: SPINN family in GIVEN mode (RL-SPINN replays
    # its sampled transitions), ST-Gumbel with frozen selections
    for v in VARIANTS:
        errors[f"model-{v}"] = check_variant(v, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 300
    acceptance("4 gradient correctness", ok, f"{len(errors)} paths, max rel error {errors[worst]:.2e} ({worst}), {elapsed:.0f}s")
    assert ok


def test_5_spinn_nc_equals_treelstm(acceptance):
    rng = np.random.default_rng(5)
    store = gc.ParameterStore(np.float64, gc.RngStream(5))
    spinn = lp.Spinn(store, 8, 6, connect=False)
    worst = 0.0
    total = 0
    for n in range(1, 21):
        batch = 50
        leaves = store.const(rng.standard_normal((n * batch, 8)))
        trees = [tk.gen_random_merge(n, rng) if b % 2 else tk.gen_random_transitions(n, rng) for b in range(batch)]
        res = spinn(leaves, batch, lp.GIVEN, [tk.tree_to_transitions(t) for t in trees])
        for b, t in enumerate(trees):
            rows = [leaves[i * batch + b : i * batch + b + 1] for i in range(n)]
            ref = lp.recursive_encode(spinn.cell, t, rows, store)
            worst = max(worst, float(np.max(np.abs(res.vectors.data[b] - ref.h.data[0]))))
            total += 1
    ok = worst <= 1e-12 and total >= 1000
    acceptance("5 SPINN-NC equivalence", ok, f"{total} fuzzed pairs, max abs diff {worst:.1e}")
    assert ok


def test_6_estimator_mechanics(acceptance):
    s = gc.ParameterStore(np.float64)
    z = s.param("z", (1, 3), value=[[2.0, 1.0, 0.0]])
    soft = gc.softmax(z)
    hard = np.eye(3)[[0]]
    coef = np.array([[0.5, -1.5, 2.0]])
    gc.backward(gc.sum_(gc.mul(gc.straight_through(hard, soft), gc.constant(coef))))
    p = soft.data[0]
    st_err = float(np.max(np.abs(z.grad[0] - (np.diag(p) - np.outer(p, p)) @ coef[0])))

    store = gc.ParameterStore(np.float64, gc.RngStream(6))
    g = lp.STGumbel(store, 8)
    store["gumbel.temperature"].data[...] = np.log(np.expm1(1e-4))
    rng = np.random.default_rng(6)
    res = g(store.const(rng.standard_normal((5 * 4, 8))), 4, train=True, rng=rng)
    sharp = min(float(d.max(axis=1).min()) for d in res.distributions)

    store = gc.ParameterStore(np.float64, gc.RngStream(7))
    g = lp.STGumbel(store, 8)
    valid = 0
    layers_ok = True
    for n in range(1, 21):
        batch = 500
        res = g(store.const(rng.standard_normal((n * batch, 8))), batch, train=True, rng=rng)
        layers_ok &= len(res.ops) == n - 1 and len(res.distributions) == n - 1
        valid += sum(tk.leaves(t) == list(range(n)) and tk.num_leaves(t) == n for t in res.trees)
    ok = st_err <= 1e-12 and sharp > 0.999 and valid == 10_000 and layers_ok
    acceptance("6 estimator mechanics", ok, f"ST jacobian err {st_err:.1e}, min max-weight at tau=1e-4 {sharp:.6f}, valid trees {valid}/10000 with N-1 layers")
    assert ok


def bandit_run(seed: int, batch: int = 16, lr: float = 0.01, max_updates: int = 2000):
    """Reward 1 iff the sampled 4-token tree is left-branching; policy loss only."""
    store = gc.ParameterStore(np.float64, gc.RngStream(seed))
    spinn = lp.Spinn(store, 4, 4)
    leaves = store.rng["data"].standard_normal((4, 4))
    left = tk.tree_to_transitions(tk.gen_left(4))
    opt = gc.Adam(lr)
    baseline = EMABaseline(0.9)
    policy = store.rng["policy"]

    def p_left():
        return float(np.exp(spinn(store.const(leaves), 1, lp.GIVEN, [left]).logp.data[0, 0]))

    for update in range(1, max_updates + 1):
        res = spinn(store.const(np.repeat(leaves, batch, axis=0)), batch, lp.SAMPLE, rng=policy)
        rewards = np.array([float(tuple(ops) == left) for ops in res.ops])
        store.zero_grad()
        gc.backward(reinforce_loss(res.logp, rewards, baseline))
        opt.step(store)
        if update % 10 == 0 and p_left() > 0.9:
            return update, p_left()
    return None, p_left()


def test_7_reinforce_bandit(acceptance):
    t0 = time.perf_counter()
    runs = [bandit_run(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    converged = sum(u is not None for u, _ in runs)
    ok = converged >= 4 and elapsed < 120
    detail = ", ".join(f"seed {i}: {'P=%.3f at %d' % (p, u) if u else 'P=%.3f (no)' % p}" for i, (u, p) in enumerate(runs))
    acceptance("7 REINFORCE bandit", ok, f"{converged}/5 seeds reach P>0.9 ({detail}), {elapsed:.1f}s")
    assert ok


def test_8_degenerate_grammar_collapse(acceptance):
    t0 = time.perf_counter()
    corpus = D.gen_synthetic(1000, (2, 16), 8, "col")
    corpus += [D.Example(f"one{i}", ["7"], ["~", "3"], "neutral") for i in range(3)]
    cfg = ExperimentConfig(variant="rl-spinn")
    table = embedding_table(cfg, corpus)
    model, store = new_model(cfg, table)
    store["spinn.transition.b"].data[0] = [0.0, 10.0]
    _, parses, _ = evaluate(model, table, corpus, cfg.seed)
    left = pm.ParseSet.from_pairs((sid, tk.gen_left(tk.num_leaves(t))) for sid, t in parses.trees.items())
    f1 = pm.corpus_f1(parses, left).mean
    elapsed = time.perf_counter() - t0
    ok = f1 == 100.0 and elapsed < 30
    acceptance("8 degenerate collapse", ok, f"F1 vs left-branching {f1} over {len(parses)} sentences, {elapsed:.1f}s")
    assert ok


E2E = dict(dim=32, emb_dim=32, max_steps=600, eval_interval=200, patience=2)


def test_9_end_to_end_training(acceptance, synthetic, tmp_path):
    t0 = time.perf_counter()
    train_set, dev_set = synthetic
    counts = np.bincount([ex.label_index for ex in train_set], minlength=3) / len(train_set)
    lines = []
    ok = bool(np.all(np.abs(counts - 1 / 3) < 0.02))
    majority = 100.0 * D.majority_rate(dev_set)
    for v in ("lstm", "spinn-pi-nt", "spinn", "spinn-nc", "rl-spinn", "st-gumbel", "random-trees", "balanced-trees"):
        r = train(ExperimentConfig(variant=v, **E2E), train_set, dev_set)
        margin = r.best_dev_accuracy - majority
        finite = all(np.isfinite(acc) for _, acc in r.history)
        ok &= finite and margin >= 20.0
        lines.append(f"{v} {r.best_dev_accuracy:.1f}")
    base = ExperimentConfig(variant="st-gumbel", **E2E)
    results, summary = hyper_search(base, k=5, train_set=train_set, dev_set=dev_set, out_dir=tmp_path / "search")
    shaped = {"accuracy_mean", "accuracy_std", "accuracy_max", "self_f1"} <= set(summary) and summary["self_f1"] is not None
    ok &= shaped and len(results) == 5 and (tmp_path / "search" / "summary.csv").exists()
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1800
    acceptance(
        "9 end-to-end training",
        ok,
        f"majority {majority:.1f}; {', '.join(lines)}; search k=5 st-gumbel mean {summary['accuracy_mean']:.1f} "
        f"sd {summary['accuracy_std']:.1f} max {summary['accuracy_max']:.1f} self F1 {summary['self_f1']:.1f}; {elapsed:.0f}s",
    )
    assert ok


def test_10_reproducibility(acceptance, synthetic, tmp_path):
    train_set, dev_set = synthetic
    train_set, dev_set = train_set[:5000], dev_set[:1000]
    same = []
    for v in ("rl-spinn", "st-gumbel", "random-trees", "spinn"):
        cfg = ExperimentConfig(variant=v, dim=16, emb_dim=16, tracker_dim=8, max_steps=60, eval_interval=30, patience=1, seed=11)
        runs = [train(cfg, train_set, dev_set, tmp_path / f"{v}-{i}") for i in range(2)]
        a, b = (tmp_path / f"{v}-{i}" for i in range(2))
        same.append(
            (a / "model.ckpt.json").read_bytes() == (b / "model.ckpt.json").read_bytes()
            and (a / "dev_parses.txt").read_bytes() == (b / "dev_parses.txt").read_bytes()
            and runs[0].best_dev_accuracy == runs[1].best_dev_accuracy
        )
    ok = all(same)
    acceptance("10 reproducibility", ok, f"checkpoint bytes, dev accuracy, and parse files identical for {sum(same)}/4 variants")
    assert ok
