"""Sentence-pair corpora: JSONL I/O, the synthetic arithmetic corpus, and
length-bucketed batching."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .. import treekit

LABELS = ("entailment", "neutral", "contradiction")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}
NEGATE = "~"


class CorpusError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, path=None):
        where = f"{path or '<corpus>'}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


@dataclass
class Example:
    pair_id: str
    sentence1: list
    sentence2: list
    label: str | None = None
    parse1: object = None
    parse2: object = None

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]

    def to_json(self) -> dict:
        d = {
            "pairID": self.pair_id,
            "sentence1": " ".join(self.sentence1),
            "sentence2": " ".join(self.sentence2),
        }
        if self.parse1 is not None:
            d["sentence1_binary_parse"] = treekit.render_binary(self.parse1, self.sentence1)
        if self.parse2 is not None:
            d["sentence2_binary_parse"] = treekit.render_binary(self.parse2, self.sentence2)
        if self.label is not None:
            d["gold_label"] = self.label
        return d


def _parse_field(text, tokens, lineno, path, key):
    tree, words = treekit.parse_binary(text)
    if words != tokens:
        raise CorpusError(f"{key} tokens do not match the sentence", lineno, path)
    return tree


def example_from_json(d: dict, lineno: int | None = None, path=None, require_label: bool = True) -> Example:
    try:
        pid = str(d["pairID"])
        s1 = d["sentence1"].split()
        s2 = d["sentence2"].split()
    except (KeyError, AttributeError) as exc:
        raise CorpusError(f"missing or malformed field {exc}", lineno, path) from None
    if not s1 or not s2:
        raise CorpusError("empty sentence", lineno, path)
    label = d.get("gold_label")
    if label is not None and label not in LABEL_INDEX:
        raise CorpusError(f"unknown label {label!r}", lineno, path)
    if label is None and require_label:
        raise CorpusError("missing gold_label", lineno, path)
    try:
        p1 = _parse_field(d["sentence1_binary_parse"], s1, lineno, path, "sentence1_binary_parse") if d.get("sentence1_binary_parse") else None
        p2 = _parse_field(d["sentence2_binary_parse"], s2, lineno, path, "sentence2_binary_parse") if d.get("sentence2_binary_parse") else None
    except treekit.BracketSyntaxError as exc:
        raise CorpusError(str(exc), lineno, path) from None
    return Example(pid, s1, s2, label, p1, p2)


def load_jsonl(path, require_label: bool = True) -> list[Example]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", lineno, path) from None
            if not isinstance(d, dict):
                raise CorpusError("expected a JSON object", lineno, path)
            ex = example_from_json(d, lineno, path, require_label)
            if ex.pair_id in seen:
                raise CorpusError(f"duplicate pairID {ex.pair_id!r}", lineno, path)
            seen.add(ex.pair_id)
            out.append(ex)
    return out


def save_jsonl(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sentences(examples: Iterable[Example]) -> Iterator[tuple[str, list]]:
    """``(sentence id, tokens)`` for both halves of every pair."""
    for ex in examples:
        yield f"{ex.pair_id}:1", ex.sentence1
        yield f"{ex.pair_id}:2", ex.sentence2


# ---------------------------------------------------------------------------
# synthetic arithmetic corpus


def value(tokens: Sequence[str]) -> int:
    """Sum of digits, where ``~`` flips the sign of the next digit."""
    total = 0
    sign = 1
    for tok in tokens:
        if tok == NEGATE:
            sign = -1
        else:
            total += sign * int(tok)
            sign = 1
    return total


def label_for(s1: Sequence[str], s2: Sequence[str]) -> str:
    a, b = value(s1), value(s2)
    if a > b:
        return "entailment"
    if a < b:
        return "contradiction"
    return "neutral"


def reference_parse(tokens: Sequence[str]):
    """Each ``~ d`` is a constituent; units then nest to the right."""
    units = []
    i = 0
    while i < len(tokens):
        if tokens[i] == NEGATE:
            units.append((i, i + 1))
            i += 2
        else:
            units.append(i)
            i += 1
    tree = units[-1]
    for u in reversed(units[:-1]):
        tree = (u, tree)
    return tree


def random_sentence(rng: np.random.Generator, length: int, p_negate: float = 0.15) -> list[str]:
    out: list[str] = []
    while len(out) < length:
        if len(out) <= length - 2 and rng.random() < p_negate:
            out.append(NEGATE)
        out.append(str(int(rng.integers(10))))
    return out


def _match_value(tokens: list[str], target: int, rng: np.random.Generator) -> bool:
    """Edit digits in place until ``value(tokens) == target``; False if stuck."""
    digits = [i for i, t in enumerate(tokens) if t != NEGATE]
    for i in rng.permutation(digits):
        gap = target - value(tokens)
        if gap == 0:
            break
        sign = -1 if i > 0 and tokens[i - 1] == NEGATE else 1
        d = int(tokens[i])
        tokens[i] = str(min(9, max(0, d + sign * gap)))
    return value(tokens) == target


def gen_synthetic(size: int, length_range=(4, 12), seed: int = 0, prefix: str = "syn") -> list[Example]:
    """Pairs labelled by comparing their signed digit sums, balanced by label.

    Unequal pairs come from rejection sampling; for neutral pairs the second
    sentence has its digits edited to hit the first sentence's sum.
    """
    lo, hi = length_range
    if lo < 2 or hi > 16 or lo > hi:
        raise ValueError(f"lengths must lie in [2, 16], got {length_range}")
    rng = np.random.default_rng(seed)
    targets = np.resize(np.arange(3), size)
    rng.shuffle(targets)
    out = []
    for k, target in enumerate(targets):
        want = LABELS[target]
        s1 = random_sentence(rng, int(rng.integers(lo, hi + 1)))
        while True:
            s2 = random_sentence(rng, int(rng.integers(lo, hi + 1)))
            if want == "neutral" and not _match_value(s2, value(s1), rng):
                continue
            if label_for(s1, s2) == want:
                break
        out.append(Example(f"{prefix}{k:06d}", s1, s2, want, reference_parse(s1), reference_parse(s2)))
    return out


def majority_rate(examples: Sequence[Example]) -> float:
    counts = np.bincount([ex.label_index for ex in examples], minlength=3)
    return float(counts.max() / counts.sum())


# ---------------------------------------------------------------------------
# batching


def make_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator | None = None) -> list[list[Example]]:
    """Batches whose first sentences share a length and whose second ones do too.

    With ``rng`` the pairs and the batch order are shuffled; without it the
    order is fixed, which evaluation relies on for exact reproducibility.
    """
    buckets: dict = {}
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    for i in order:
        ex = examples[i]
        buckets.setdefault((len(ex.sentence1), len(ex.sentence2)), []).append(ex)
    batches = []
    for key in sorted(buckets):
        group = buckets[key]
        for start in range(0, len(group), batch_size):
            batches.append(group[start : start + batch_size])
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches
