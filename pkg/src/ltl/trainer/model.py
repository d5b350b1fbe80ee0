"""Sentence-pair classifier over any of the sentence encoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import gradcore as gc
from .. import treekit
from ..encoders import EmbeddingTable, LeafEncoder, LeafEncoderConfig, LSTMEncoder, attach_embeddings
from ..gradcore import ParameterStore, RngStream, Tensor
from ..latentparsers import GIVEN, PREDICT, SAMPLE, EncodeResult, Spinn, STGumbel
from .data import Example

VARIANTS = (
    "lstm",
    "spinn",
    "spinn-nc",
    "spinn-pi-nt",
    "rl-spinn",
    "st-gumbel",
    "random-trees",
    "balanced-trees",
)
TREE_VARIANTS = tuple(v for v in VARIANTS if v != "lstm")
SUPERVISED_PARSERS = ("spinn", "spinn-nc")


class VariantMismatch(ValueError):
    pass


def pair_features(u: Tensor, v: Tensor) -> Tensor:
    """``[u; v; u - v; u * v]``."""
    if u.shape != v.shape:
        raise gc.ShapeMismatch("pair_features", u.shape, v.shape)
    return gc.concat([u, v, gc.sub(u, v), gc.mul(u, v)], axis=1)


class PairClassifier:
    def __init__(self, store: ParameterStore, in_dim: int, hidden: int, n_classes: int = 3):
        self.w1 = store.ensure("mlp.w1", (in_dim, hidden))
        self.b1 = store.ensure("mlp.b1", (1, hidden), init="zeros")
        self.w2 = store.ensure("mlp.w2", (hidden, n_classes))
        self.b2 = store.ensure("mlp.b2", (1, n_classes), init="zeros")

    def __call__(self, features: Tensor, dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
        x = gc.dropout(features, dropout, rng, train)
        hidden = gc.relu(gc.add(gc.matmul(x, self.w1), self.b1))
        return gc.add(gc.matmul(hidden, self.w2), self.b2)


def classify_pair(clf: PairClassifier, features: Tensor, dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
    return clf(features, dropout, rng, train)


class EMABaseline:
    """Exponential moving average of batch-mean reward."""

    def __init__(self, decay: float = 0.9, value: float = 0.0):
        self.decay = decay
        self.value = value

    def update(self, mean_reward: float) -> float:
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward
        return self.value


def reinforce_loss(logp: Tensor, rewards: np.ndarray, baseline: EMABaseline, weight: float = 1.0) -> Tensor:
    """``-weight * mean_b (R_b - baseline) * log pi_b``; updates the baseline after use."""
    rewards = np.asarray(rewards, dtype=logp.data.dtype).reshape(-1, 1)
    advantage = rewards - baseline.value
    loss = gc.mul(gc.mean(gc.mul(logp, advantage)), -float(weight))
    baseline.update(float(rewards.mean()))
    return loss


@dataclass
class BatchOutput:
    logits: Tensor
    loss: Tensor
    ce: np.ndarray
    trees1: list
    trees2: list
    extras: dict


class NLIModel:
    def __init__(self, variant: str, store: ParameterStore, emb_dim: int, dim: int = 32, tracker_dim: int = 16, pair_dim: int = 64, leaf: str = "linear", leaf_proj: str = "none"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.store = store
        self.dim = dim
        if variant == "lstm":
            self.leaf = None
            self.encoder = LSTMEncoder(store, emb_dim, dim)
        else:
            self.leaf = LeafEncoder(store, LeafEncoderConfig(leaf, dim, leaf_proj), emb_dim)
            if variant == "st-gumbel":
                self.encoder = STGumbel(store, dim)
            elif variant in ("spinn-pi-nt", "random-trees", "balanced-trees"):
                self.encoder = Spinn(store, dim, 0)
            else:
                self.encoder = Spinn(store, dim, tracker_dim, connect=(variant != "spinn-nc"))
        self.classifier = PairClassifier(store, 4 * dim, pair_dim)

    @property
    def produces_parses(self) -> bool:
        return self.variant != "lstm"

    def fixed_transitions(self, tokens_list, parses, rng: np.random.Generator | None):
        v = self.variant
        n = len(tokens_list[0])
        if v == "balanced-trees":
            return [treekit.tree_to_transitions(treekit.gen_balanced(n))] * len(tokens_list)
        if v == "random-trees":
            return [treekit.tree_to_transitions(treekit.gen_random_transitions(n, rng)) for _ in tokens_list]
        if any(p is None for p in parses):
            raise VariantMismatch(f"variant {v!r} needs binary parses in the corpus")
        return [treekit.tree_to_transitions(p) for p in parses]

    def encode(self, ids: np.ndarray, tokens_list, parses, train: bool, rngs: RngStream, tree_rng=None):
        """Encode one side of a batch; the LSTM reports ``None`` trees."""
        ids = np.asarray(ids)
        batch = ids.shape[0]
        v = self.variant
        if v == "lstm":
            return EncodeResult(self.encoder(ids), [None] * batch)
        leaves = self.leaf(ids)
        if v == "st-gumbel":
            return self.encoder(leaves, batch, train=train, rng=rngs["gumbel"])
        if v in ("spinn-pi-nt", "random-trees", "balanced-trees"):
            trans = self.fixed_transitions(tokens_list, parses, tree_rng if tree_rng is not None else rngs["data"])
            return self.encoder(leaves, batch, GIVEN, trans)
        if train and v in SUPERVISED_PARSERS:
            if any(p is None for p in parses):
                raise VariantMismatch(f"variant {v!r} trains on binary parses; corpus has none")
            return self.encoder(leaves, batch, GIVEN, [treekit.tree_to_transitions(p) for p in parses])
        if train and v == "rl-spinn":
            return self.encoder(leaves, batch, SAMPLE, rng=rngs["policy"])
        return self.encoder(leaves, batch, PREDICT)

    def forward(self, batch: list[Example], table: EmbeddingTable, train: bool, rngs: RngStream, dropout: float = 0.0, transition_weight: float = 1.0, rl_weight: float = 1.0, baseline: EMABaseline | None = None, tree_rng=None) -> BatchOutput:
        toks1 = [ex.sentence1 for ex in batch]
        toks2 = [ex.sentence2 for ex in batch]
        ids1 = np.array([table.ids(t) for t in toks1])
        ids2 = np.array([table.ids(t) for t in toks2])
        r1 = self.encode(ids1, toks1, [ex.parse1 for ex in batch], train, rngs, tree_rng)
        r2 = self.encode(ids2, toks2, [ex.parse2 for ex in batch], train, rngs, tree_rng)
        logits = self.classifier(pair_features(r1.vectors, r2.vectors), dropout, rngs["dropout"], train)
        extras: dict = {"dist1": r1.distributions, "dist2": r2.distributions}
        if batch[0].label is None:
            return BatchOutput(logits, None, None, r1.trees, r2.trees, extras)
        labels = np.array([ex.label_index for ex in batch])
        ce = gc.cross_entropy(logits, labels)
        loss = gc.mean(ce)
        if train and self.variant in SUPERVISED_PARSERS and transition_weight:
            # summed log-likelihood of the gold transitions, averaged over sentences
            nll = gc.mul(gc.mean(gc.add(r1.logp, r2.logp)), -float(transition_weight))
            loss = gc.add(loss, nll)
            extras["transition_nll"] = float(nll.data)
        if train and self.variant == "rl-spinn":
            rewards = -ce.data[:, 0]
            extras["baseline"] = baseline.value
            pg = reinforce_loss(gc.add(r1.logp, r2.logp), rewards, baseline, rl_weight)
            loss = gc.add(loss, pg)
        return BatchOutput(logits, loss, ce.data[:, 0], r1.trees, r2.trees, extras)


def build_model(cfg, store: ParameterStore, table: EmbeddingTable) -> NLIModel:
    if "embeddings" not in store:
        attach_embeddings(store, table)
    return NLIModel(cfg.variant, store, table.dim, cfg.dim, cfg.tracker_dim, cfg.pair_dim, cfg.leaf, cfg.leaf_proj)
