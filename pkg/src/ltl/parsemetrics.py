"""Tree comparison metrics: unlabeled F1, self F1, label recall, depth, and
phenomenon rates over parse sets."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import treekit
from .treekit import BinaryTree

NEGATION_WORDS = frozenset({"not", "n't", "no", "none"})


class LengthMismatch(ValueError):
    pass


class IdMismatch(ValueError):
    def __init__(self, missing: Iterable, extra: Iterable):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(f"id sets differ: missing={self.missing[:10]} extra={self.extra[:10]}")


class NeedTwoRuns(ValueError):
    pass


class UnknownLabel(KeyError):
    pass


@dataclass
class ParseSet:
    """Trees keyed by sentence id, in file order."""

    trees: dict
    tokens: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs, provenance=None, tokens=None):
        trees: dict = {}
        for sid, tree in pairs:
            if sid in trees:
                raise ValueError(f"duplicate sentence id {sid!r}")
            trees[sid] = tree
        return cls(trees, dict(tokens or {}), dict(provenance or {}))

    @property
    def ids(self) -> list:
        return list(self.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def __getitem__(self, sid):
        return self.trees[sid]

    def dumps(self) -> str:
        lines = []
        for sid, tree in self.trees.items():
            toks = self.tokens.get(sid)
            lines.append(f"{sid}\t{treekit.render_binary(tree, toks)}\n")
        return "".join(lines)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str, provenance=None) -> "ParseSet":
        trees: dict = {}
        tokens: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            sid, sep, body = line.partition("\t")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'id<TAB>tree'")
            if sid in trees:
                raise ValueError(f"line {lineno}: duplicate id {sid!r}")
            try:
                tree, toks = treekit.parse_binary(body)
            except treekit.BracketSyntaxError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            trees[sid] = tree
            tokens[sid] = toks
        return cls(trees, tokens, dict(provenance or {}))

    @classmethod
    def load(cls, path) -> "ParseSet":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read(), {"path": str(path)})


@dataclass
class MetricReport:
    metric: str
    values: dict
    counts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float | None:
        vals = list(self.values.values())
        return math.fsum(vals) / len(vals) if vals else None

    @property
    def std(self) -> float | None:
        vals = list(self.values.values())
        if not vals:
            return None
        mu = math.fsum(vals) / len(vals)
        return math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals))

    @property
    def max(self) -> float | None:
        return max(self.values.values()) if self.values else None

    def summary(self) -> dict:
        out = {"metric": self.metric, "mean": self.mean, "std": self.std, "max": self.max}
        out.update(self.counts)
        out.update(self.extra)
        return out

    def to_dict(self, per_sentence: bool = True) -> dict:
        d = self.summary()
        if per_sentence:
            d["values"] = dict(self.values)
        return d


# ---------------------------------------------------------------------------
# per-tree metrics


def unlabeled_f1(pred: BinaryTree, gold: BinaryTree) -> float:
    n_pred, n_gold = treekit.num_leaves(pred), treekit.num_leaves(gold)
    if n_pred != n_gold:
        raise LengthMismatch(f"{n_pred} leaves vs {n_gold}")
    if n_pred < 2:
        return 100.0
    p_spans, g_spans = treekit.spans(pred), treekit.spans(gold)
    overlap = len(p_spans & g_spans)
    precision = overlap / len(p_spans)
    recall = overlap / len(g_spans)
    return 100.0 * 2 * precision * recall / (precision + recall)


def avg_depth(t: BinaryTree) -> float:
    depths = treekit.leaf_depths(t)
    return sum(depths) / len(depths)


# ---------------------------------------------------------------------------
# corpus metrics


def _check_ids(a: ParseSet, b: ParseSet) -> None:
    ka, kb = set(a.trees), set(b.trees)
    if ka != kb:
        raise IdMismatch(kb - ka, ka - kb)


def corpus_f1(a: ParseSet, b: ParseSet, micro: bool = False) -> MetricReport:
    """Macro-averaged per-sentence F1; the pooled-span micro value rides along."""
    _check_ids(a, b)
    values = {}
    skipped = 0
    overlap = total_a = total_b = 0
    for sid in a.ids:
        ta, tb = a[sid], b[sid]
        if treekit.num_leaves(ta) < 2:
            if treekit.num_leaves(tb) != 1:
                raise LengthMismatch(f"sentence {sid!r}")
            skipped += 1
            continue
        values[sid] = unlabeled_f1(ta, tb)
        sa, sb = treekit.spans(ta), treekit.spans(tb)
        overlap += len(sa & sb)
        total_a += len(sa)
        total_b += len(sb)
    if total_a and total_b and overlap:
        p, r = overlap / total_a, overlap / total_b
        micro_f1 = 100.0 * 2 * p * r / (p + r)
    else:
        micro_f1 = 0.0 if total_a else None
    report = MetricReport(
        "f1", values, {"sentences": len(values), "skipped": skipped}, {"micro": micro_f1}
    )
    report.extra["macro"] = report.mean
    report.extra["headline"] = "micro" if micro else "macro"
    return report


def self_f1(runs: Sequence[ParseSet]) -> float:
    """Mean corpus F1 over all unordered pairs of runs."""
    if len(runs) < 2:
        raise NeedTwoRuns(f"self F1 needs at least two runs, got {len(runs)}")
    scores = [corpus_f1(a, b).mean for a, b in itertools.combinations(runs, 2)]
    return math.fsum(scores) / len(scores)


def label_recall(pred: ParseSet, gold_labels: dict, label: str) -> float:
    """Percentage of gold ``label`` constituents (length >= 2) found in ``pred``.

    ``gold_labels`` maps sentence id to a set of ``((start, end), label)``.
    """
    found = total = 0
    for sid, pairs in gold_labels.items():
        if sid not in pred.trees:
            raise IdMismatch([sid], [])
        wanted = {span for span, lab in pairs if lab == label and span[1] - span[0] >= 2}
        if not wanted:
            continue
        pred_spans = treekit.spans(pred[sid])
        total += len(wanted)
        found += len(wanted & pred_spans)
    if total == 0:
        raise UnknownLabel(label)
    return 100.0 * found / total


def all_labels(gold_labels: dict) -> list[str]:
    out = set()
    for pairs in gold_labels.values():
        out.update(lab for span, lab in pairs if span[1] - span[0] >= 2)
    return sorted(out)


def corpus_macro_depth(ps: ParseSet) -> MetricReport:
    values = {sid: avg_depth(t) for sid, t in ps.trees.items()}
    return MetricReport("depth", values, {"sentences": len(values)})


def edge_stats(ps: ParseSet) -> MetricReport:
    """Rates of first-two-word and last-two-word constituents."""
    first = last = 0
    values = {}
    skipped = 0
    for sid, t in ps.trees.items():
        n = treekit.num_leaves(t)
        if n < 2:
            skipped += 1
            continue
        s = treekit.spans(t)
        f, l = (0, 2) in s, (n - 2, n) in s
        first += f
        last += l
        values[sid] = float(f)
    counted = len(values)
    return MetricReport(
        "first_two",
        values,
        {"sentences": counted, "skipped": skipped},
        {
            "first_two_rate": 100.0 * first / counted if counted else None,
            "last_two_rate": 100.0 * last / counted if counted else None,
        },
    )


def negation_stats(ps: ParseSet, tokens: dict | None = None, lexicon=NEGATION_WORDS) -> MetricReport:
    """How often a negation word forms a constituent with the next word.

    The headline rate is over sentences with an eligible negation token; the
    all-sentences rate is reported alongside.
    """
    tokens = ps.tokens if tokens is None else tokens
    lexicon = {w.lower() for w in lexicon}
    values = {}
    for sid, t in ps.trees.items():
        toks = tokens[sid]
        eligible = [i for i, w in enumerate(toks[:-1]) if w.lower() in lexicon]
        if not eligible:
            continue
        s = treekit.spans(t)
        values[sid] = float(any((i, i + 2) in s for i in eligible))
    hits = sum(values.values())
    total = len(ps.trees)
    return MetricReport(
        "negation",
        values,
        {"with_negation": len(values), "sentences": total},
        {
            "rate": 100.0 * hits / len(values) if values else None,
            "rate_all_sentences": 100.0 * hits / total if total else None,
        },
    )


# ---------------------------------------------------------------------------
# report serialization


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_csv(rows: list[dict]) -> str:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
