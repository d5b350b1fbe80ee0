"""Finite-difference checks of every differentiable model path on tiny inputs."""

from __future__ import annotations

import numpy as np

from .. import gradcore as gc
from ..encoders import random_embeddings
from ..gradcore import ParameterStore, RngStream
from ..latentparsers import SAMPLE
from .data import gen_synthetic
from .model import SUPERVISED_PARSERS, EMABaseline, NLIModel, pair_features, reinforce_loss

EMB, DIM, TRACKER, PAIR = 4, 4, 3, 5


def _toy(seed: int, n_pairs: int = 3):
    # one batch of equal-length pairs so it runs as a single batch
    examples = [ex for ex in gen_synthetic(60, (4, 5), seed, "gc")]
    key = (len(examples[0].sentence1), len(examples[0].sentence2))
    batch = [ex for ex in examples if (len(ex.sentence1), len(ex.sentence2)) == key][:n_pairs]
    vocab = ["<unk>", "~"] + [str(d) for d in range(10)]
    table = random_embeddings(vocab, EMB, np.random.default_rng(seed))
    return batch, table


def variant_loss(model: NLIModel, batch, table, seed: int, selections=None):
    """A deterministic scalar loss through the variant's differentiable path.

    ST-Gumbel runs with frozen selections; RL-SPINN replays sampled
    transitions from a fresh stream and uses fixed rewards, so each call
    sees the same discrete structure.
    """
    rngs = RngStream(seed)
    v = model.variant
    sides = []
    logps = []
    for side in (1, 2):
        toks = [ex.sentence1 if side == 1 else ex.sentence2 for ex in batch]
        parses = [ex.parse1 if side == 1 else ex.parse2 for ex in batch]
        ids = np.array([table.ids(t) for t in toks])
        if v == "st-gumbel":
            leaves = model.leaf(ids)
            res = model.encoder(leaves, len(batch), selections=selections[side - 1])
        elif v == "rl-spinn":
            leaves = model.leaf(ids)
            res = model.encoder(leaves, len(batch), SAMPLE, rng=rngs["policy"])
            logps.append(res.logp)
        else:
            res = model.encode(ids, toks, parses, v in SUPERVISED_PARSERS, rngs, tree_rng=np.random.default_rng(seed))
            if v in SUPERVISED_PARSERS:
                logps.append(res.logp)
        sides.append(res.vectors)
    logits = model.classifier(pair_features(*sides))
    loss = gc.mean(gc.cross_entropy(logits, np.array([ex.label_index for ex in batch])))
    if v in SUPERVISED_PARSERS:
        loss = gc.sub(loss, gc.mean(gc.add(*logps)))
    if v == "rl-spinn":
        rewards = np.linspace(-1.0, 1.0, len(batch))
        loss = gc.add(loss, reinforce_loss(gc.add(*logps), rewards, EMABaseline(0.9, 0.25)))
    return loss


def gumbel_selections(model: NLIModel, batch, table, seed: int) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for side in (1, 2):
        toks = [ex.sentence1 if side == 1 else ex.sentence2 for ex in batch]
        n = len(toks[0])
        out.append([rng.integers(0, n - 1 - layer, size=len(batch)) for layer in range(n - 1)])
    return out


def check_variant(variant: str, seed: int = 0, leaf: str = "bigru", leaf_proj: str = "linear", eps: float = 1e-5) -> float:
    """Max relative error of backprop against central differences (float64)."""
    batch, table = _toy(seed)
    store = ParameterStore(np.float64, RngStream(seed))
    store.freeze("embeddings", table.matrix)
    model = NLIModel(variant, store, EMB, DIM, TRACKER, PAIR, leaf, leaf_proj)
    sel = gumbel_selections(model, batch, table, seed) if variant == "st-gumbel" else None
    return gc.grad_check(lambda: variant_loss(model, batch, table, seed, sel), store, eps=eps, rng=np.random.default_rng(seed))
