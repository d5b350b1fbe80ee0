"""Frozen word embeddings, leaf context encoders, and the LSTM baseline.

Batched encoders take an ``(B, N)`` array of token ids for ``B`` sentences
of equal length ``N`` and return rows in position-major order: row
``i * B + b`` holds token ``i`` of sentence ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import gradcore as gc
from .gradcore import ParameterStore, Tensor

UNK = "<unk>"


class DimDrift(ValueError):
    pass


class DuplicateToken(ValueError):
    pass


class OddDim(ValueError):
    pass


class EmbeddingTable:
    """Token -> row map over a frozen matrix. Row 0 is the all-zero OOV row."""

    def __init__(self, vocab: Sequence[str], matrix: np.ndarray):
        self.tokens = list(vocab)
        if self.tokens[:1] != [UNK]:
            raise ValueError("row 0 must be the OOV token")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.matrix = np.array(matrix)
        self.matrix.setflags(write=False)
        self.frozen = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok, row in zip(self.tokens[1:], self.matrix[1:]):
                f.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


def build_vocab(sentences: Iterable[Sequence[str]], min_count: int = 1) -> list[str]:
    counts: dict[str, int] = {}
    for sent in sentences:
        for tok in sent:
            counts[tok] = counts.get(tok, 0) + 1
    return [UNK] + sorted(t for t, c in counts.items() if c >= min_count and t != UNK)


def load_embeddings(path, vocab: Sequence[str]) -> EmbeddingTable:
    """Read ``token v1 ... vD`` lines; vocab tokens missing from the file get zeros."""
    vocab = list(vocab)
    if not vocab or vocab[0] != UNK:
        vocab = [UNK] + [t for t in vocab if t != UNK]
    wanted = set(vocab)
    found: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                continue
            tok, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise DimDrift(f"line {lineno}: {len(vals)} values, expected {dim}")
            if tok in seen:
                raise DuplicateToken(f"line {lineno}: {tok!r} already defined")
            seen.add(tok)
            if tok in wanted:
                found[tok] = np.array([float(v) for v in vals])
    if dim is None:
        raise DimDrift("embedding file is empty")
    matrix = np.zeros((len(vocab), dim))
    for i, tok in enumerate(vocab):
        if tok in found:
            matrix[i] = found[tok]
    return EmbeddingTable(vocab, matrix)


def random_embeddings(vocab: Sequence[str], dim: int, rng: np.random.Generator) -> EmbeddingTable:
    vocab = list(vocab)
    matrix = rng.standard_normal((len(vocab), dim)) / np.sqrt(dim)
    matrix[0] = 0.0
    return EmbeddingTable(vocab, matrix)


def embed(store: ParameterStore, ids: np.ndarray) -> Tensor:
    """Position-major embedding rows for an ``(B, N)`` id array."""
    return gc.take_rows(store["embeddings"], np.asarray(ids).T.reshape(-1))


def attach_embeddings(store: ParameterStore, table: EmbeddingTable) -> Tensor:
    return store.freeze("embeddings", table.matrix)


# ---------------------------------------------------------------------------
# leaf encoders


@dataclass(frozen=True)
class LeafEncoderConfig:
    variant: str = "linear"  # "bigru" or "linear"
    dim: int = 32
    leaf_proj: str = "none"  # bigru only: "linear" projects embeddings to dim first

    def __post_init__(self):
        if self.variant not in ("bigru", "linear"):
            raise ValueError(f"unknown leaf encoder {self.variant!r}")
        if self.leaf_proj not in ("none", "linear"):
            raise ValueError(f"unknown leaf_proj {self.leaf_proj!r}")
        if self.variant == "bigru" and self.dim % 2:
            raise OddDim(f"BIGRU needs an even model dim, got {self.dim}")


class GRU:
    """Single-direction GRU; candidate uses ``r * (U_n h)``."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, hidden: int):
        self.hidden = hidden
        self.wx = store.ensure(f"{name}.wx", (in_dim, 3 * hidden))
        self.wh = store.ensure(f"{name}.wh", (hidden, 3 * hidden))
        self.b = store.ensure(f"{name}.b", (1, 3 * hidden), init="zeros")
        self.store = store

    def run(self, x: Tensor, n: int, batch: int, reverse: bool = False) -> list[Tensor]:
        """Hidden state per position (in sentence order) for position-major ``x``."""
        H = self.hidden
        xp = gc.add(gc.matmul(x, self.wx), self.b)
        h = self.store.const(np.zeros((batch, H)))
        out: list[Tensor | None] = [None] * n
        order = range(n - 1, -1, -1) if reverse else range(n)
        for i in order:
            xi = xp[i * batch : (i + 1) * batch]
            hu = gc.matmul(h, self.wh)
            z = gc.sigmoid(gc.add(xi[:, :H], hu[:, :H]))
            r = gc.sigmoid(gc.add(xi[:, H : 2 * H], hu[:, H : 2 * H]))
            cand = gc.tanh(gc.add(xi[:, 2 * H :], gc.mul(r, hu[:, 2 * H :])))
            h = gc.add(cand, gc.mul(z, gc.sub(h, cand)))  # (1-z)*cand + z*h
            out[i] = h
        return out


class LeafEncoder:
    def __init__(self, store: ParameterStore, cfg: LeafEncoderConfig, emb_dim: int, name: str = "leaf"):
        self.cfg = cfg
        self.store = store
        D = cfg.dim
        if cfg.variant == "linear":
            self.w = store.ensure(f"{name}.w", (emb_dim, D))
            self.b = store.ensure(f"{name}.b", (1, D), init="zeros")
        else:
            in_dim = emb_dim
            self.proj = None
            if cfg.leaf_proj == "linear":
                self.proj = store.ensure(f"{name}.proj", (emb_dim, D))
                in_dim = D
            self.fwd = GRU(store, f"{name}.fwd", in_dim, D // 2)
            self.bwd = GRU(store, f"{name}.bwd", in_dim, D // 2)

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        batch, n = ids.shape
        x = embed(self.store, ids)
        if self.cfg.variant == "linear":
            return gc.add(gc.matmul(x, self.w), self.b)
        if self.proj is not None:
            x = gc.matmul(x, self.proj)
        f = self.fwd.run(x, n, batch)
        b = self.bwd.run(x, n, batch, reverse=True)
        return gc.concat([gc.concat([f[i], b[i]], axis=1) for i in range(n)], axis=0)


def encode_leaves(tokens: Sequence[str], table: EmbeddingTable, cfg: LeafEncoderConfig, store: ParameterStore | None = None) -> list[Tensor]:
    """Per-token D-vectors for one sentence (a fresh store is built if none is given)."""
    if not tokens:
        raise ValueError("empty sentence")
    store = store if store is not None else ParameterStore()
    if "embeddings" not in store:
        attach_embeddings(store, table)
    rows = LeafEncoder(store, cfg, table.dim)(np.array([table.ids(tokens)]))
    return [rows[i : i + 1] for i in range(len(tokens))]


# ---------------------------------------------------------------------------
# sequential baseline


class LSTMEncoder:
    """Unidirectional LSTM over embeddings; the sentence vector is the last hidden state."""

    def __init__(self, store: ParameterStore, emb_dim: int, dim: int, name: str = "lstm"):
        self.store = store
        self.dim = dim
        self.wx = store.ensure(f"{name}.wx", (emb_dim, 4 * dim))
        self.wh = store.ensure(f"{name}.wh", (dim, 4 * dim))
        bias = np.zeros((1, 4 * dim))
        bias[0, dim : 2 * dim] = 1.0  # forget gate
        self.b = store.ensure(f"{name}.b", (1, 4 * dim), value=bias)

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        batch, n = ids.shape
        D = self.dim
        xp = gc.add(gc.matmul(embed(self.store, ids), self.wx), self.b)
        h = self.store.const(np.zeros((batch, D)))
        c = self.store.const(np.zeros((batch, D)))
        for i in range(n):
            gates = gc.add(xp[i * batch : (i + 1) * batch], gc.matmul(h, self.wh))
            ig = gc.sigmoid(gates[:, :D])
            fg = gc.sigmoid(gates[:, D : 2 * D])
            og = gc.sigmoid(gates[:, 2 * D : 3 * D])
            g = gc.tanh(gates[:, 3 * D :])
            c = gc.add(gc.mul(fg, c), gc.mul(ig, g))
            h = gc.mul(og, gc.tanh(c))
        return h


def lstm_encode(tokens: Sequence[str], table: EmbeddingTable, store: ParameterStore, dim: int | None = None) -> Tensor:
    if "embeddings" not in store:
        attach_embeddings(store, table)
    if dim is None:
        dim = store["lstm.wh"].shape[0] if "lstm.wh" in store else table.dim
    return LSTMEncoder(store, table.dim, dim)(np.array([table.ids(tokens)]))
