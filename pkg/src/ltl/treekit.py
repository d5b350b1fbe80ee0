"""Binary trees, shift/reduce transition sequences, and treebank conversion.

A binary tree is stored as nested tuples: a leaf is its 0-based token
position (an ``int``) and an internal node is a ``(left, right)`` pair.
Tuples are immutable and hashable, which makes trees cheap to enumerate,
compare, and use as dictionary keys.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence, Union

import numpy as np

SHIFT = 0
REDUCE = 1
OP_NAMES = {SHIFT: "S", REDUCE: "R"}

MAX_ENUMERATE = 10

BinaryTree = Union[int, tuple]
Span = tuple  # (start, end), end exclusive


class InvalidSequence(ValueError):
    pass


class InvalidTree(ValueError):
    pass


class SizeLimit(ValueError):
    pass


class EmptyTree(ValueError):
    pass


class BracketSyntaxError(ValueError):
    """Malformed bracketed text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# basic tree queries


def is_leaf(t: BinaryTree) -> bool:
    return isinstance(t, (int, np.integer))


def num_leaves(t: BinaryTree) -> int:
    if is_leaf(t):
        return 1
    return num_leaves(t[0]) + num_leaves(t[1])


def leaves(t: BinaryTree) -> list[int]:
    out: list[int] = []
    stack = [t]
    while stack:
        node = stack.pop()
        if is_leaf(node):
            out.append(int(node))
        else:
            stack.append(node[1])
            stack.append(node[0])
    return out


def validate_tree(t: BinaryTree) -> int:
    """Check the leaf-order invariant and return the leaf count."""
    pos = leaves_checked(t)
    if pos != list(range(len(pos))):
        raise InvalidTree(f"leaves out of order: {pos}")
    return len(pos)


def leaves_checked(t) -> list[int]:
    if is_leaf(t):
        return [int(t)]
    if not isinstance(t, tuple) or len(t) != 2:
        raise InvalidTree(f"internal node must have exactly two children: {t!r}")
    return leaves_checked(t[0]) + leaves_checked(t[1])


def spans(t: BinaryTree) -> set[Span]:
    """Spans of all internal nodes, root included."""
    out: set[Span] = set()

    def walk(node, start):
        if is_leaf(node):
            return start + 1
        mid = walk(node[0], start)
        end = walk(node[1], mid)
        out.add((start, end))
        return end

    walk(t, 0)
    return out


def leaf_depths(t: BinaryTree) -> list[int]:
    out: list[int] = []

    def walk(node, d):
        if is_leaf(node):
            out.append(d)
        else:
            walk(node[0], d + 1)
            walk(node[1], d + 1)

    walk(t, 0)
    return out


def relabel(t: BinaryTree, start: int = 0) -> BinaryTree:
    """Renumber leaves left to right starting at ``start``."""
    counter = iter(range(start, start + 10**9))

    def walk(node):
        if is_leaf(node):
            return next(counter)
        return (walk(node[0]), walk(node[1]))

    return walk(t)


# ---------------------------------------------------------------------------
# transitions


def tree_to_transitions(t: BinaryTree) -> tuple[int, ...]:
    ops: list[int] = []

    def walk(node):
        if is_leaf(node):
            ops.append(SHIFT)
        else:
            walk(node[0])
            walk(node[1])
            ops.append(REDUCE)

    walk(t)
    return tuple(ops)


def transitions_to_tree(seq: Sequence[int]) -> BinaryTree:
    stack: list = []
    pos = 0
    for k, op in enumerate(seq):
        if op == SHIFT:
            stack.append(pos)
            pos += 1
        elif op == REDUCE:
            if len(stack) < 2:
                raise InvalidSequence(f"REDUCE at step {k} with stack size {len(stack)}")
            right = stack.pop()
            left = stack.pop()
            stack.append((left, right))
        else:
            raise InvalidSequence(f"unknown op {op!r} at step {k}")
    if len(stack) != 1:
        raise InvalidSequence(f"final stack size {len(stack)}, expected 1")
    return stack[0]


def is_valid_sequence(seq: Sequence[int], n: int) -> bool:
    if n < 1 or len(seq) != 2 * n - 1:
        return False
    depth = 0
    shifts = 0
    for op in seq:
        if op == SHIFT:
            depth += 1
            shifts += 1
            if shifts > n:
                return False
        elif op == REDUCE:
            if depth < 2:
                return False
            depth -= 1
        else:
            return False
    return depth == 1 and shifts == n


def parse_ops(text: str) -> tuple[int, ...]:
    """``"S S R"`` -> ``(0, 0, 1)``."""
    table = {"S": SHIFT, "R": REDUCE, "SHIFT": SHIFT, "REDUCE": REDUCE}
    try:
        return tuple(table[tok.upper()] for tok in text.split())
    except KeyError as exc:
        raise InvalidSequence(f"unknown op {exc.args[0]!r}") from None


def render_ops(seq: Sequence[int]) -> str:
    return " ".join(OP_NAMES[op] for op in seq)


def legal_ops(stack_size: int, buffer_size: int) -> tuple[bool, bool]:
    """(shift legal, reduce legal) for a stack machine state."""
    return buffer_size > 0, stack_size >= 2


# ---------------------------------------------------------------------------
# enumeration


def catalan(k: int) -> int:
    return math.comb(2 * k, k) // (k + 1)


@lru_cache(maxsize=None)
def _shapes(n: int) -> tuple:
    # unlabeled shapes with placeholder leaves; relabelled on output
    if n == 1:
        return (0,)
    out = []
    for k in range(1, n):
        for left in _shapes(k):
            for right in _shapes(n - k):
                out.append((left, right))
    return tuple(out)


def enumerate_trees(n: int) -> list[BinaryTree]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_ENUMERATE:
        raise SizeLimit(f"enumerate_trees is capped at n={MAX_ENUMERATE}, got {n}")
    return [relabel(s) for s in _shapes(n)]


def enumerate_sequences(n: int) -> Iterator[tuple[int, ...]]:
    """Every valid transition sequence for n tokens, by brute-force search."""

    def extend(prefix, depth, shifted):
        if len(prefix) == 2 * n - 1:
            yield tuple(prefix)
            return
        if shifted < n:
            prefix.append(SHIFT)
            yield from extend(prefix, depth + 1, shifted + 1)
            prefix.pop()
        if depth >= 2:
            prefix.append(REDUCE)
            yield from extend(prefix, depth - 1, shifted)
            prefix.pop()

    yield from extend([], 0, 0)


# ---------------------------------------------------------------------------
# degenerate and random generators


def gen_left(n: int) -> BinaryTree:
    t: BinaryTree = 0
    for k in range(1, n):
        t = (t, k)
    return t


def gen_right(n: int) -> BinaryTree:
    t: BinaryTree = n - 1
    for k in range(n - 2, -1, -1):
        t = (k, t)
    return t


def gen_balanced(n: int) -> BinaryTree:
    """Maximally shallow tree, paired from the right.

    Each level merges adjacent nodes scanning right to left; an odd node out
    is the leftmost one and is carried up unchanged.
    """
    level: list = list(range(n))
    while len(level) > 1:
        nxt = []
        i = len(level)
        while i >= 2:
            nxt.append((level[i - 2], level[i - 1]))
            i -= 2
        if i == 1:
            nxt.append(level[0])
        nxt.reverse()
        level = nxt
    return level[0]


def gen_random_transitions(n: int, rng: np.random.Generator) -> BinaryTree:
    """Sample a tree by picking uniformly among legal ops at every step."""
    seq = []
    depth = 0
    buffer = n
    while buffer or depth > 1:
        can_shift, can_reduce = legal_ops(depth, buffer)
        if can_shift and can_reduce:
            op = SHIFT if rng.random() < 0.5 else REDUCE
        else:
            op = SHIFT if can_shift else REDUCE
        seq.append(op)
        if op == SHIFT:
            depth += 1
            buffer -= 1
        else:
            depth -= 1
    return transitions_to_tree(seq)


def gen_random_merge(n: int, rng: np.random.Generator) -> BinaryTree:
    """Repeatedly merge one uniformly chosen adjacent pair."""
    nodes: list = list(range(n))
    while len(nodes) > 1:
        i = int(rng.integers(len(nodes) - 1))
        nodes[i : i + 2] = [(nodes[i], nodes[i + 1])]
    return nodes[0]


def random_transitions_distribution(n: int) -> dict:
    """Exact tree probabilities of :func:`gen_random_transitions`."""
    out: dict = {}

    def expand(seq, depth, buffer, p):
        if not buffer and depth == 1:
            t = transitions_to_tree(seq)
            out[t] = out.get(t, 0.0) + p
            return
        can_shift, can_reduce = legal_ops(depth, buffer)
        branches = []
        if can_shift:
            branches.append((SHIFT, depth + 1, buffer - 1))
        if can_reduce:
            branches.append((REDUCE, depth - 1, buffer))
        for op, d, b in branches:
            expand(seq + [op], d, b, p / len(branches))

    expand([], 0, n, 1.0)
    return out


def random_merge_distribution(n: int) -> dict:
    """Exact tree probabilities of :func:`gen_random_merge`."""
    out: dict = {}

    def expand(nodes, p):
        if len(nodes) == 1:
            out[nodes[0]] = out.get(nodes[0], 0.0) + p
            return
        k = len(nodes) - 1
        for i in range(k):
            expand(nodes[:i] + [(nodes[i], nodes[i + 1])] + nodes[i + 2 :], p / k)

    expand(list(range(n)), 1.0)
    return out


def generate(strategy: str, n: int, rng: np.random.Generator | None = None) -> BinaryTree:
    if strategy == "left":
        return gen_left(n)
    if strategy == "right":
        return gen_right(n)
    if strategy == "balanced":
        return gen_balanced(n)
    if rng is None:
        raise ValueError(f"strategy {strategy!r} needs an rng")
    if strategy == "random-transitions":
        return gen_random_transitions(n, rng)
    if strategy == "random-merge":
        return gen_random_merge(n, rng)
    raise ValueError(f"unknown strategy {strategy!r}")


STRATEGIES = ("left", "right", "balanced", "random-transitions", "random-merge")


# ---------------------------------------------------------------------------
# labeled trees


@dataclass(frozen=True)
class LabeledTree:
    """n-ary labeled tree; a node with ``children == ()`` is a token leaf."""

    label: str
    children: tuple = field(default=())

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def tokens(self) -> list[str]:
        if self.is_leaf:
            return [self.label]
        out: list[str] = []
        for c in self.children:
            out.extend(c.tokens())
        return out

    def __str__(self) -> str:
        return render_labeled(self)


def leaf(token: str) -> LabeledTree:
    return LabeledTree(token, ())


def strip_preterminals(t: LabeledTree) -> LabeledTree:
    """Replace POS-tag nodes such as ``(NN dogs)`` with their token."""
    if t.is_leaf:
        return t
    if len(t.children) == 1 and t.children[0].is_leaf:
        # keep a root preterminal so the result still has a label
        return t
    kids = []
    for c in t.children:
        if not c.is_leaf and len(c.children) == 1 and c.children[0].is_leaf:
            kids.append(c.children[0])
        else:
            kids.append(strip_preterminals(c))
    return LabeledTree(t.label, tuple(kids))


def collapse_unary(t: LabeledTree) -> LabeledTree:
    """Collapse every unary chain to its lowest non-leaf node and label."""
    if t.is_leaf:
        return t
    while len(t.children) == 1 and not t.children[0].is_leaf:
        t = t.children[0]
    return LabeledTree(t.label, tuple(collapse_unary(c) for c in t.children))


def binarize(t: LabeledTree) -> tuple[BinaryTree, set]:
    """Right-binarize a unary-collapsed tree.

    Returns the unlabeled binary tree and the set of ``(span, label)`` pairs
    of the original labeled nodes.
    """
    if not t.tokens():
        raise EmptyTree("tree has no leaves")
    labels: set = set()
    counter = [0]

    def walk(node: LabeledTree):
        if node.is_leaf:
            pos = counter[0]
            counter[0] += 1
            return pos
        start = counter[0]
        kids = [walk(c) for c in node.children]
        labels.add(((start, counter[0]), node.label))
        sub = kids[-1]
        for k in reversed(kids[:-1]):
            sub = (k, sub)
        return sub

    return walk(t), labels


# ---------------------------------------------------------------------------
# bracketed text

_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def _lex(text: str):
    return [(m.group(), m.start()) for m in _TOKEN_RE.finditer(text)]


def normalize(text: str) -> str:
    return " ".join(tok for tok, _ in _lex(text))


def parse_binary(text: str) -> tuple[BinaryTree, list[str]]:
    """Parse ``"( ( the cat ) ( sat down ) )"`` into a tree and its tokens."""
    toks = _lex(text)
    if not toks:
        raise BracketSyntaxError("empty input", 0)
    words: list[str] = []
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(toks):
            raise BracketSyntaxError("unexpected end of input", len(text.encode()))
        tok, off = toks[pos]
        if tok == ")":
            raise BracketSyntaxError("unexpected ')'", _byte(text, off))
        pos += 1
        if tok != "(":
            words.append(tok)
            return len(words) - 1
        kids = []
        while True:
            if pos >= len(toks):
                raise BracketSyntaxError("unclosed '('", _byte(text, off))
            if toks[pos][0] == ")":
                pos += 1
                break
            kids.append(node())
        if len(kids) != 2:
            raise BracketSyntaxError(
                f"binary group must have 2 children, found {len(kids)}", _byte(text, off)
            )
        return (kids[0], kids[1])

    tree = node()
    if pos != len(toks):
        raise BracketSyntaxError("trailing input", _byte(text, toks[pos][1]))
    return tree, words


def render_binary(t: BinaryTree, tokens: Sequence[str] | None = None) -> str:
    def walk(node):
        if is_leaf(node):
            return str(tokens[node]) if tokens is not None else str(node)
        return f"( {walk(node[0])} {walk(node[1])} )"

    return walk(t)


def parse_labeled(text: str) -> LabeledTree:
    """Parse PTB-style ``"(S (NP the dog) (VP barks))"``."""
    toks = _lex(text)
    if not toks:
        raise BracketSyntaxError("empty input", 0)
    pos = 0

    def node() -> LabeledTree:
        nonlocal pos
        if pos >= len(toks):
            raise BracketSyntaxError("unexpected end of input", len(text.encode()))
        tok, off = toks[pos]
        if tok == ")":
            raise BracketSyntaxError("unexpected ')'", _byte(text, off))
        pos += 1
        if tok != "(":
            return leaf(tok)
        if pos >= len(toks) or toks[pos][0] in "()":
            # "( (S ...) )" wrapper without a label, as in raw PTB files
            label = ""
        else:
            label = toks[pos][0]
            pos += 1
        kids = []
        while True:
            if pos >= len(toks):
                raise BracketSyntaxError("unclosed '('", _byte(text, off))
            if toks[pos][0] == ")":
                pos += 1
                break
            kids.append(node())
        if not kids:
            raise BracketSyntaxError("empty node", _byte(text, off))
        if not label:
            if len(kids) != 1:
                raise BracketSyntaxError("unlabeled node", _byte(text, off))
            return kids[0]
        return LabeledTree(label, tuple(kids))

    tree = node()
    if pos != len(toks):
        raise BracketSyntaxError("trailing input", _byte(text, toks[pos][1]))
    return tree


def render_labeled(t: LabeledTree) -> str:
    if t.is_leaf:
        return t.label
    return "(" + t.label + " " + " ".join(render_labeled(c) for c in t.children) + ")"


def parse_bracketed(text: str, labeled: bool | None = None):
    """Parse either format; ``labeled=None`` sniffs for ``(LABEL``."""
    if labeled is None:
        labeled = re.search(r"\([^\s()]", text) is not None
    if labeled:
        return parse_labeled(text)
    return parse_binary(text)


def render_bracketed(tree, tokens: Sequence[str] | None = None) -> str:
    if isinstance(tree, LabeledTree):
        return render_labeled(tree)
    return render_binary(tree, tokens)


def _byte(text: str, char_offset: int) -> int:
    return len(text[:char_offset].encode())
