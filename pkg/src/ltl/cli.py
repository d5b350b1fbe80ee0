"""Command-line entry point: ``ltl <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import gradcore as gc
from . import parsemetrics as pm
from . import treekit
from .trainer import data as D
from .trainer.loop import ExperimentConfig, evaluate, hyper_search, load_model, train
from .trainer.model import VARIANTS, VariantMismatch

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("ltl")


class DataError(Exception):
    pass


def _hash_files(paths) -> str | None:
    paths = [p for p in paths if p]
    if not paths:
        return None
    h = hashlib.sha256()
    for p in paths:
        h.update(D.file_hash(p).encode())
    return h.hexdigest()


def provenance(args, inputs=()) -> dict:
    return {
        "command": args.argv,
        "seed": args.seed,
        "corpus_hash": _hash_files(inputs),
        "code_version": __version__,
    }


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lengths = tuple(args.lengths)
    train_set = D.gen_synthetic(args.size, lengths, args.seed, "train")
    dev_set = D.gen_synthetic(args.dev_size, lengths, args.seed + 1, "dev")
    D.save_jsonl(out / "train.jsonl", train_set)
    D.save_jsonl(out / "dev.jsonl", dev_set)
    from .encoders import build_vocab, random_embeddings

    vocab = build_vocab(s for ex in train_set + dev_set for s in (ex.sentence1, ex.sentence2))
    random_embeddings(vocab, args.emb_dim, np.random.default_rng(args.seed)).dump(out / "embeddings.txt")
    meta = {"provenance": provenance(args), "train": len(train_set), "dev": len(dev_set), "lengths": list(lengths)}
    _write(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def _corpus_sentences(path):
    try:
        examples = D.load_jsonl(path, require_label=False)
    except D.CorpusError as exc:
        raise DataError(str(exc)) from None
    return list(D.sentences(examples))


def cmd_trees(args) -> int:
    rng = np.random.default_rng(args.seed)
    lines = []
    for sid, toks in _corpus_sentences(args.lengths_from):
        tree = treekit.generate(args.strategy, len(toks), rng)
        lines.append(f"{sid}\t{treekit.render_binary(tree, toks)}\n")
    _write(args.out, "".join(lines))
    return 0


def _read_labeled(path) -> dict:
    """``id<TAB>(labeled tree)`` lines (a bare tree per line gets its line number)."""
    trees = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            sid, sep, body = line.rstrip("\n").partition("\t")
            if not sep:
                sid, body = str(lineno), line
            try:
                trees[sid] = treekit.parse_labeled(body)
            except treekit.BracketSyntaxError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return trees


def convert_labeled(tree: treekit.LabeledTree):
    """Treebank tree -> (binary tree, tokens, (span, label) set)."""
    collapsed = treekit.collapse_unary(treekit.strip_preterminals(tree))
    binary, labels = treekit.binarize(collapsed)
    return binary, collapsed.tokens(), labels


def cmd_binarize(args) -> int:
    lines = []
    for sid, tree in _read_labeled(args.input).items():
        binary, toks, _ = convert_labeled(tree)
        lines.append(f"{sid}\t{treekit.render_binary(binary, toks)}\n")
    _write(args.out, "".join(lines))
    return 0


def _load_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            d = json.load(f)
    for key in ("variant", "train_path", "dev_path", "embeddings_path", "max_steps"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    d["seed"] = args.seed
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from None


def _load_pair_sets(cfg):
    try:
        return D.load_jsonl(cfg.train_path), D.load_jsonl(cfg.dev_path)
    except D.CorpusError as exc:
        raise DataError(str(exc)) from None


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_set, dev_set = _load_pair_sets(cfg)
    result = train(cfg, train_set, dev_set, args.out)
    summary = result.to_dict()
    summary["provenance"] = provenance(args, [cfg.train_path, cfg.dev_path])
    _write(Path(args.out) / "result.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_search(args) -> int:
    cfg = _load_config(args)
    train_set, dev_set = _load_pair_sets(cfg)
    results, summary = hyper_search(cfg, k=args.k, train_set=train_set, dev_set=dev_set, out_dir=args.out)
    doc = {"summary": summary, "runs": [r.to_dict() for r in results], "provenance": provenance(args, [cfg.train_path, cfg.dev_path])}
    _write(Path(args.out) / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_parse(args) -> int:
    model, table, cfg, _ = load_model(args.checkpoint)
    if args.seed is None:
        # reproduce the dev parses written at training time
        args.seed = cfg.seed
    if not model.produces_parses:
        raise VariantMismatch(f"checkpoint variant {cfg.variant!r} does not produce parses")
    try:
        examples = D.load_jsonl(args.corpus, require_label=False)
    except D.CorpusError as exc:
        raise DataError(str(exc)) from None
    _, parses, _ = evaluate(model, table, examples, args.seed)
    _write(args.out, parses.dumps())
    if args.emit_distributions:
        dists = collect_distributions(model, table, examples, args.seed)
        _write(args.emit_distributions, json.dumps({"variant": cfg.variant, "provenance": provenance(args, [args.corpus]), "sentences": dists}, sort_keys=True) + "\n")
    return 0


def collect_distributions(model, table, examples, seed) -> dict:
    """Per-sentence per-step probabilities (SPINN: [p_shift, p_reduce]; ST-Gumbel: candidate weights)."""
    rngs = gc.RngStream(seed)
    tree_rng = gc.RngStream(seed)["eval-trees"]
    out = {}
    for batch in D.make_batches(examples, 64):
        res = model.forward(batch, table, False, rngs, tree_rng=tree_rng)
        for side, key in ((1, "dist1"), (2, "dist2")):
            steps = res.extras[key]
            for b, ex in enumerate(batch):
                out[f"{ex.pair_id}:{side}"] = [np.asarray(s[b]).tolist() for s in steps]
    return dict(sorted(out.items()))


def _load_parseset(path) -> pm.ParseSet:
    try:
        return pm.ParseSet.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def analyze(preds: dict, refs: dict, labeled: dict | None = None) -> dict:
    """The full metric surface for named prediction and reference parse sets."""
    report: dict = {"predictions": {}, "self_f1": None}
    first = next(iter(preds.values()))
    lengths = {sid: treekit.num_leaves(t) for sid, t in first.trees.items()}
    generated = {
        name: pm.ParseSet.from_pairs(((sid, treekit.generate(name, n)) for sid, n in lengths.items()), {"generated": name})
        for name in ("left", "right", "balanced")
    }
    all_refs = dict(generated)
    all_refs.update(refs)
    gold_labels = None
    if labeled is not None:
        gold_labels = {}
        for sid, tree in labeled.items():
            _, _, labs = convert_labeled(tree)
            gold_labels[sid] = labs
    for name, ps in preds.items():
        entry: dict = {"f1": {}}
        for ref_name, ref in all_refs.items():
            rep = pm.corpus_f1(ps, ref)
            entry["f1"][ref_name] = {"macro": rep.mean, "micro": rep.extra["micro"], "skipped": rep.counts["skipped"]}
        depth = pm.corpus_macro_depth(ps)
        entry["depth"] = {"mean": depth.mean, "std": depth.std, "max": depth.max}
        edge = pm.edge_stats(ps)
        entry["edges"] = {"first_two_rate": edge.extra["first_two_rate"], "last_two_rate": edge.extra["last_two_rate"], "sentences": edge.counts["sentences"], "skipped": edge.counts["skipped"]}
        neg = pm.negation_stats(ps)
        entry["negation"] = {"rate": neg.extra["rate"], "rate_all_sentences": neg.extra["rate_all_sentences"], **neg.counts}
        if gold_labels is not None:
            entry["label_recall"] = {lab: pm.label_recall(ps, gold_labels, lab) for lab in pm.all_labels(gold_labels)}
        report["predictions"][name] = entry
    if len(preds) >= 2:
        report["self_f1"] = pm.self_f1(list(preds.values()))
    return report


def _csv_rows(report: dict) -> list[dict]:
    rows = []
    for name, entry in report["predictions"].items():
        row = {"pred": name}
        for ref, vals in entry["f1"].items():
            row[f"f1_{ref}"] = vals["macro"]
        row["depth"] = entry["depth"]["mean"]
        row["first_two_rate"] = entry["edges"]["first_two_rate"]
        row["last_two_rate"] = entry["edges"]["last_two_rate"]
        row["negation_rate"] = entry["negation"]["rate"]
        for lab, val in entry.get("label_recall", {}).items():
            row[f"recall_{lab}"] = val
        row["self_f1"] = report["self_f1"]
        rows.append(row)
    return rows


def cmd_analyze(args) -> int:
    preds = {}
    for p in args.pred:
        name = p
        while name in preds:
            name += "'"
        preds[name] = _load_parseset(p)
    refs = {}
    for r in args.ref or []:
        # user references never shadow the generated left/right/balanced ones
        name = Path(r).stem
        if name in ("left", "right", "balanced") or name in refs:
            name = f"ref:{r}"
        refs[name] = _load_parseset(r)
    labeled = _read_labeled(args.labeled_ref) if args.labeled_ref else None
    report = analyze(preds, refs, labeled)
    report["provenance"] = provenance(args, list(args.pred) + list(args.ref or []) + ([args.labeled_ref] if args.labeled_ref else []))
    if args.report == "json":
        _write(args.out, pm.report_json(report))
    else:
        _write(args.out, pm.report_csv(_csv_rows(report)))
    return 0


def cmd_gradcheck(args) -> int:
    from .trainer.gradcheck import check_variant

    errors = {}
    for v in args.variant or VARIANTS:
        errors[v] = check_variant(v, args.seed)
    worst = max(errors.values())
    doc = {"max_rel_error": errors, "tolerance": args.tol, "passed": worst < args.tol, "provenance": provenance(args)}
    _write(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0 if worst < args.tol else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, fn, help, out_required=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=fn)
        return p

    p = command("gen-data", cmd_gen_data, "write the synthetic train/dev corpus")
    p.add_argument("--size", type=int, default=50000)
    p.add_argument("--dev-size", type=int, default=5000)
    p.add_argument("--lengths", type=int, nargs=2, default=[4, 12], metavar=("MIN", "MAX"))
    p.add_argument("--emb-dim", type=int, default=32)

    p = command("trees", cmd_trees, "degenerate or random trees for every corpus sentence")
    p.add_argument("--strategy", choices=treekit.STRATEGIES, required=True)
    p.add_argument("--lengths-from", required=True)

    p = command("binarize", cmd_binarize, "treebank trees -> unlabeled binary parses")
    p.add_argument("--in", dest="input", required=True)

    for name, fn, help in (("train", cmd_train, "train one model"), ("search", cmd_search, "random hyperparameter search")):
        p = command(name, fn, help)
        p.add_argument("--config")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--train", dest="train_path")
        p.add_argument("--dev", dest="dev_path")
        p.add_argument("--embeddings", dest="embeddings_path")
        p.add_argument("--max-steps", dest="max_steps", type=int)
        if name == "search":
            p.add_argument("--k", type=int, default=5)

    p = command("parse", cmd_parse, "eval-mode parses from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--emit-distributions", metavar="FILE")
    p.set_defaults(seed=None)

    p = command("analyze", cmd_analyze, "F1, self F1, depth, and phenomenon statistics", out_required=False)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--ref", action="append")
    p.add_argument("--labeled-ref")
    p.add_argument("--report", choices=("json", "csv"), default="json")

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of every model path", out_required=False)
    p.add_argument("--variant", action="append", choices=VARIANTS)
    p.add_argument("--tol", type=float, default=1e-4)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["ltl"] + argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, D.CorpusError, pm.IdMismatch, pm.LengthMismatch, pm.UnknownLabel, VariantMismatch, treekit.BracketSyntaxError, FileNotFoundError) as exc:
        print(f"ltl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (gc.NaNGuard, FloatingPointError) as exc:
        print(f"ltl {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
