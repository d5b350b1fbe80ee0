"""Tree-structured sentence encoders that also report the tree they used.

All encoders run a batch of equal-length sentences at once. Leaf rows come
in position-major order (see :mod:`ltl.encoders`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gradcore as gc
from . import treekit
from .gradcore import ParameterStore, Tensor
from .treekit import REDUCE, SHIFT

GIVEN, PREDICT, SAMPLE = "given", "predict", "sample"


class TransitionsRequired(ValueError):
    pass


@dataclass
class Phrase:
    h: Tensor
    c: Tensor


@dataclass
class EncodeResult:
    vectors: Tensor  # (B, D)
    trees: list
    logp: Tensor | None = None  # (B, 1) summed log-prob of chosen ops
    ops: list = field(default_factory=list)
    distributions: list = field(default_factory=list)


class TreeLSTM:
    """Binary TreeLSTM cell with separate left/right forget gates."""

    def __init__(self, store: ParameterStore, dim: int, tracker_dim: int = 0, name: str = "compose"):
        self.dim = dim
        self.tracker_dim = tracker_dim
        in_dim = 2 * dim + tracker_dim
        self.w = store.ensure(f"{name}.w", (in_dim, 5 * dim))
        bias = np.zeros((1, 5 * dim))
        bias[0, dim : 3 * dim] = 1.0  # both forget gates
        self.b = store.ensure(f"{name}.b", (1, 5 * dim), value=bias)

    def __call__(self, left: Phrase, right: Phrase, tracker: Tensor | None = None) -> Phrase:
        D = self.dim
        if left.h.shape != right.h.shape or left.c.shape != left.h.shape:
            raise gc.ShapeMismatch("compose", left.h.shape, right.h.shape)
        parts = [left.h, right.h]
        if self.tracker_dim:
            if tracker is None:
                raise ValueError("this composition function needs a tracker input")
            parts.append(tracker)
        gates = gc.add(gc.matmul(gc.concat(parts, axis=1), self.w), self.b)
        i = gc.sigmoid(gates[:, :D])
        fl = gc.sigmoid(gates[:, D : 2 * D])
        fr = gc.sigmoid(gates[:, 2 * D : 3 * D])
        o = gc.sigmoid(gates[:, 3 * D : 4 * D])
        g = gc.tanh(gates[:, 4 * D :])
        c = gc.add(gc.add(gc.mul(fl, left.c), gc.mul(fr, right.c)), gc.mul(i, g))
        return Phrase(gc.mul(o, gc.tanh(c)), c)


def treelstm_compose(cell: TreeLSTM, left: Phrase, right: Phrase, tracker_input: Tensor | None = None) -> Phrase:
    return cell(left, right, tracker_input)


def recursive_encode(cell: TreeLSTM, tree, leaf_h: Sequence[Tensor], store: ParameterStore) -> Phrase:
    """Plain recursive TreeLSTM over one tree; ``leaf_h`` holds ``(1, D)`` rows."""
    zero = store.const(np.zeros((1, cell.dim)))

    def walk(node):
        if treekit.is_leaf(node):
            return Phrase(leaf_h[node], zero)
        return cell(walk(node[0]), walk(node[1]))

    return walk(tree)


def transition_mask(stack_sizes: np.ndarray, buffer_sizes: np.ndarray, dtype) -> np.ndarray:
    """Additive mask: 0 for legal ops, -inf for illegal ones."""
    mask = np.zeros((len(stack_sizes), 2), dtype=dtype)
    mask[buffer_sizes == 0, SHIFT] = -np.inf
    mask[stack_sizes < 2, REDUCE] = -np.inf
    return mask


class Spinn:
    """Shift-reduce TreeLSTM encoder with an optional tracking LSTM.

    ``tracker_dim=0`` gives SPINN-PI-NT (no tracker, no classifier, given
    transitions only). ``connect=False`` severs tracker -> composition
    (SPINN-NC).
    """

    def __init__(self, store: ParameterStore, dim: int, tracker_dim: int = 0, connect: bool = True, name: str = "spinn"):
        self.store = store
        self.dim = dim
        self.tracker_dim = tracker_dim
        self.connect = bool(connect and tracker_dim)
        self.cell = TreeLSTM(store, dim, tracker_dim if self.connect else 0, name=f"{name}.compose")
        if tracker_dim:
            T = tracker_dim
            self.track_wx = store.ensure(f"{name}.tracker.wx", (3 * dim, 4 * T))
            self.track_wh = store.ensure(f"{name}.tracker.wh", (T, 4 * T))
            bias = np.zeros((1, 4 * T))
            bias[0, T : 2 * T] = 1.0
            self.track_b = store.ensure(f"{name}.tracker.b", (1, 4 * T), value=bias)
            self.cls_w = store.ensure(f"{name}.transition.w", (T, 2))
            self.cls_b = store.ensure(f"{name}.transition.b", (1, 2), init="zeros")
            # learned stand-ins for a missing stack item or an empty buffer
            self.empty_stack = store.ensure(f"{name}.empty_stack", (1, dim), init="normal")
            self.empty_buffer = store.ensure(f"{name}.empty_buffer", (1, dim), init="normal")

    @property
    def has_tracker(self) -> bool:
        return self.tracker_dim > 0

    def _tracker_step(self, x: Tensor, h: Tensor, c: Tensor):
        T = self.tracker_dim
        gates = gc.add(gc.add(gc.matmul(x, self.track_wx), gc.matmul(h, self.track_wh)), self.track_b)
        i = gc.sigmoid(gates[:, :T])
        f = gc.sigmoid(gates[:, T : 2 * T])
        o = gc.sigmoid(gates[:, 2 * T : 3 * T])
        g = gc.tanh(gates[:, 3 * T :])
        c = gc.add(gc.mul(f, c), gc.mul(i, g))
        return gc.mul(o, gc.tanh(c)), c

    def __call__(self, leaves: Tensor, batch: int, mode: str = PREDICT, transitions=None, rng: np.random.Generator | None = None) -> EncodeResult:
        """Run 2N-1 transitions over position-major ``leaves`` of shape ``(N*B, D)``.

        ``transitions`` (GIVEN mode) is one op sequence per sentence.
        """
        store, D, B = self.store, self.dim, batch
        n = leaves.shape[0] // B
        if mode not in (GIVEN, PREDICT, SAMPLE):
            raise ValueError(f"unknown mode {mode!r}")
        if not self.has_tracker and mode != GIVEN:
            raise TransitionsRequired("an encoder without a tracker only runs on given transitions")
        if mode == GIVEN:
            if transitions is None:
                raise TransitionsRequired("GIVEN mode needs transitions")
            transitions = [tuple(t) for t in transitions]
            for t in transitions:
                if not treekit.is_valid_sequence(t, n):
                    raise treekit.InvalidSequence(f"illegal transition sequence for {n} tokens: {treekit.render_ops(t)}")
        if mode == SAMPLE and rng is None:
            raise ValueError("SAMPLE mode needs an rng")

        # Row pool: leaves, then (tracker runs) the two stand-in rows, then
        # one block per composition step. Stacks hold row indices.
        pool_h = [leaves]
        pool_c = [store.const(np.zeros((n * B, D)))]
        size = n * B
        EMPTY_S = EMPTY_B = -1
        if self.has_tracker:
            pool_h.append(gc.concat([self.empty_stack, self.empty_buffer], axis=0))
            pool_c.append(store.const(np.zeros((2, D))))
            EMPTY_S, EMPTY_B = size, size + 1
            size += 2
        cat_h = cat_c = None

        def pooled():
            nonlocal cat_h, cat_c
            if cat_h is None:
                cat_h, cat_c = gc.concat(pool_h, 0), gc.concat(pool_c, 0)
            return cat_h, cat_c

        stacks: list[list[int]] = [[] for _ in range(B)]
        buf = np.zeros(B, dtype=np.int64)
        ops_taken: list[list[int]] = [[] for _ in range(B)]
        logp = None
        dists = []
        th = tc = None
        if self.has_tracker:
            th = store.const(np.zeros((B, self.tracker_dim)))
            tc = store.const(np.zeros((B, self.tracker_dim)))
        brange = np.arange(B)

        for step in range(2 * n - 1):
            stack_sizes = np.array([len(s) for s in stacks])
            buffer_sizes = n - buf
            if self.has_tracker:
                top1 = np.array([s[-1] if len(s) >= 1 else EMPTY_S for s in stacks])
                top2 = np.array([s[-2] if len(s) >= 2 else EMPTY_S for s in stacks])
                head = np.where(buffer_sizes > 0, buf * B + brange, EMPTY_B)
                H, _ = pooled()
                x = gc.take_rows(H, np.concatenate([top2, top1, head]))
                x = gc.concat([x[:B], x[B : 2 * B], x[2 * B :]], axis=1)
                th, tc = self._tracker_step(x, th, tc)
                logits = gc.add(gc.add(gc.matmul(th, self.cls_w), self.cls_b), transition_mask(stack_sizes, buffer_sizes, store.dtype))
                lp = gc.log_softmax(logits)
                dists.append(np.exp(lp.data))
                if mode == GIVEN:
                    ops = np.array([t[step] for t in transitions])
                elif mode == PREDICT:
                    ops = np.argmax(lp.data, axis=1)
                else:
                    u = rng.random(B)
                    ops = (u >= np.exp(lp.data[:, SHIFT])).astype(np.int64)
                    # numerical guard: never sample an illegal op
                    ops[buffer_sizes == 0] = REDUCE
                    ops[stack_sizes < 2] = SHIFT
                chosen = gc.pick(lp, ops)
                logp = chosen if logp is None else gc.add(logp, chosen)
            else:
                ops = np.array([t[step] for t in transitions])

            reducers = np.flatnonzero(ops == REDUCE)
            if len(reducers):
                H, C = pooled()
                li = np.array([stacks[b][-2] for b in reducers])
                ri = np.array([stacks[b][-1] for b in reducers])
                left = Phrase(gc.take_rows(H, li), gc.take_rows(C, li))
                right = Phrase(gc.take_rows(H, ri), gc.take_rows(C, ri))
                tin = gc.take_rows(th, reducers) if self.connect else None
                new = self.cell(left, right, tin)
                pool_h.append(new.h)
                pool_c.append(new.c)
                cat_h = cat_c = None
                for k, b in enumerate(reducers):
                    del stacks[b][-2:]
                    stacks[b].append(size + k)
                size += len(reducers)
            for b in np.flatnonzero(ops == SHIFT):
                stacks[b].append(int(buf[b]) * B + b)
                buf[b] += 1
            for b in range(B):
                ops_taken[b].append(int(ops[b]))

        H, _ = pooled()
        final = np.array([s[-1] for s in stacks])
        vectors = gc.take_rows(H, final)
        trees = [treekit.transitions_to_tree(o) for o in ops_taken]
        return EncodeResult(vectors, trees, logp, ops_taken, dists)


def spinn_encode(model: Spinn, leaves: Tensor, batch: int, mode: str = PREDICT, transitions=None, rng=None) -> EncodeResult:
    return model(leaves, batch, mode, transitions, rng)


def gumbel_noise(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    u = rng.random(shape)
    return (-np.log(-np.log(u + 1e-20) + 1e-20)).astype(dtype)


def _columns_to_rows(t: Tensor) -> Tensor:
    """``(B, K)`` -> position-major ``(K*B, 1)`` column."""
    return gc.reshape(gc.transpose(t), (-1, 1))


class STGumbel:
    """Easy-first TreeLSTM parser trained with straight-through Gumbel-softmax."""

    def __init__(self, store: ParameterStore, dim: int, name: str = "gumbel"):
        self.store = store
        self.dim = dim
        self.cell = TreeLSTM(store, dim, 0, name=f"{name}.compose")
        self.query = store.ensure(f"{name}.query", (dim, 1))
        # softplus(log(e - 1)) == 1
        self.temp_raw = store.ensure(f"{name}.temperature", (1, 1), value=[[np.log(np.e - 1.0)]])

    def temperature(self) -> Tensor:
        return gc.softplus(self.temp_raw)

    def __call__(self, leaves: Tensor, batch: int, train: bool = False, rng: np.random.Generator | None = None, selections=None, noise=None) -> EncodeResult:
        """Merge one adjacent pair per layer until a single node remains.

        ``selections`` fixes the chosen candidate per layer (one ``(B,)``
        array per layer) and cuts the gradient path through the scores.
        ``noise`` overrides sampled Gumbel noise, one ``(B, m-1)`` array per
        layer.
        """
        store, D, B = self.store, self.dim, batch
        n = leaves.shape[0] // B
        H = leaves
        C = store.const(np.zeros((n * B, D)))
        nodes: list[list] = [list(range(n)) for _ in range(B)]
        dists = []
        chosen = []
        tau = self.temperature()
        for layer in range(n - 1):
            m = n - layer
            k = m - 1
            left = Phrase(H[: k * B], C[: k * B])
            right = Phrase(H[B:], C[B:])
            cand = self.cell(left, right)
            if k == 1:
                H, C = cand.h, cand.c
                idx = np.zeros(B, dtype=np.int64)
                dists.append(np.ones((B, 1)))
            else:
                scores = gc.transpose(gc.reshape(gc.matmul(cand.h, self.query), (k, B)))
                if selections is not None:
                    idx = np.asarray(selections[layer], dtype=np.int64)
                    dists.append(gc._softmax(scores.data / tau.data))
                    y = store.const(np.eye(k)[idx])
                elif train:
                    g = noise[layer] if noise is not None else gumbel_noise(rng, (B, k), store.dtype)
                    soft = gc.softmax(gc.div(gc.add(scores, store.const(g)), tau))
                    idx = np.argmax(soft.data, axis=1)
                    dists.append(soft.data)
                    y = gc.straight_through(np.eye(k)[idx], soft)
                else:
                    idx = np.argmax(scores.data, axis=1)
                    dists.append(gc._softmax(scores.data / tau.data))
                    y = store.const(np.eye(k)[idx])
                cum = gc.matmul(y, store.const(np.triu(np.ones((k, k)))))
                keep_left = _columns_to_rows(gc.sub(1.0, cum))
                take_right = _columns_to_rows(gc.sub(cum, y))
                sel = _columns_to_rows(y)
                H = gc.add(gc.add(gc.mul(keep_left, left.h), gc.mul(sel, cand.h)), gc.mul(take_right, right.h))
                C = gc.add(gc.add(gc.mul(keep_left, left.c), gc.mul(sel, cand.c)), gc.mul(take_right, right.c))
            chosen.append(idx)
            for b in range(B):
                i = int(idx[b])
                nodes[b][i : i + 2] = [(nodes[b][i], nodes[b][i + 1])]
        trees = [ns[0] for ns in nodes]
        res = EncodeResult(H, trees, None, chosen, dists)
        return res


def gumbel_encode(model: STGumbel, leaves: Tensor, batch: int, train: bool = False, rng=None) -> EncodeResult:
    return model(leaves, batch, train, rng)
