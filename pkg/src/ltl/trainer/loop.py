"""Training with early stopping, evaluation, and random hyperparameter search."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .. import gradcore as gc
from .. import parsemetrics as pm
from ..encoders import EmbeddingTable, build_vocab, load_embeddings, random_embeddings
from ..gradcore import Adam, NaNGuard, ParameterStore, RngStream
from .data import Example, load_jsonl, majority_rate, make_batches
from .model import VARIANTS, EMABaseline, NLIModel, build_model

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    variant: str = "st-gumbel"
    leaf: str = "bigru"
    leaf_proj: str = "none"
    dim: int = 32
    tracker_dim: int = 16
    pair_dim: int = 64
    emb_dim: int = 32
    lr: float = 2e-3
    l2: float = 1e-6
    dropout: float = 0.1
    # relative weight of the REINFORCE term; 1.0 is a placeholder default
    rl_weight: float = 1.0
    ema_decay: float = 0.9
    transition_weight: float = 1.0
    batch_size: int = 32
    eval_interval: int = 200
    patience: int = 3
    max_steps: int = 2000
    seed: int = 0
    dtype: str = "float32"
    train_path: str | None = None
    dev_path: str | None = None
    embeddings_path: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("dim", "tracker_dim", "pair_dim", "emb_dim", "batch_size", "eval_interval", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.l2 < 0 or not 0 <= self.dropout < 1 or self.patience < 0:
            raise ValueError("lr must be positive, l2 >= 0, dropout in [0, 1), patience >= 0")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.variant != "rl-spinn" and self.rl_weight != 1.0:
            raise ValueError("rl_weight only applies to rl-spinn")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    config: dict
    best_dev_accuracy: float
    best_step: int
    evaluations: int
    majority_rate: float
    history: list = field(default_factory=list)
    checkpoint_path: str | None = None
    parses_path: str | None = None
    dev_parses: pm.ParseSet | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "best_dev_accuracy": self.best_dev_accuracy,
            "best_step": self.best_step,
            "evaluations": self.evaluations,
            "majority_rate": self.majority_rate,
            "history": self.history,
            "checkpoint_path": self.checkpoint_path,
            "parses_path": self.parses_path,
        }


def embedding_table(cfg: ExperimentConfig, examples) -> EmbeddingTable:
    vocab = build_vocab(s for ex in examples for s in (ex.sentence1, ex.sentence2))
    if cfg.embeddings_path:
        return load_embeddings(cfg.embeddings_path, vocab)
    # no pretrained vectors: fixed random ones, seeded apart from the model seed
    return random_embeddings(vocab, cfg.emb_dim, np.random.default_rng(12345))


def new_model(cfg: ExperimentConfig, table: EmbeddingTable) -> tuple[NLIModel, ParameterStore]:
    store = ParameterStore(np.dtype(cfg.dtype), RngStream(cfg.seed))
    return build_model(cfg, store, table), store


def evaluate(model: NLIModel, table: EmbeddingTable, examples: list[Example], seed: int = 0, batch_size: int = 64):
    """Deterministic eval-mode accuracy and parses.

    Returns ``(accuracy, ParseSet or None, predictions)``.
    """
    rngs = RngStream(seed)
    tree_rng = RngStream(seed)["eval-trees"]
    correct = 0
    pairs = []
    tokens = {}
    preds = {}
    for batch in make_batches(examples, batch_size):
        out = model.forward(batch, table, False, rngs, tree_rng=tree_rng)
        guess = np.argmax(out.logits.data, axis=1)
        for ex, g, t1, t2 in zip(batch, guess, out.trees1, out.trees2):
            preds[ex.pair_id] = int(g)
            if ex.label is not None:
                correct += int(g == ex.label_index)
            if model.produces_parses:
                pairs.append((f"{ex.pair_id}:1", t1))
                pairs.append((f"{ex.pair_id}:2", t2))
                tokens[f"{ex.pair_id}:1"] = ex.sentence1
                tokens[f"{ex.pair_id}:2"] = ex.sentence2
    labeled = sum(ex.label is not None for ex in examples)
    acc = 100.0 * correct / labeled if labeled else float("nan")
    parses = None
    if model.produces_parses:
        parses = pm.ParseSet.from_pairs(sorted(pairs), {"variant": model.variant, "seed": seed}, tokens)
    return acc, parses, preds


def train(cfg: ExperimentConfig, train_set: list[Example] | None = None, dev_set: list[Example] | None = None, out_dir=None, table: EmbeddingTable | None = None) -> RunResult:
    """Adam with early stopping on dev accuracy; keeps the best parameters."""
    if train_set is None:
        train_set = load_jsonl(cfg.train_path)
    if dev_set is None:
        dev_set = load_jsonl(cfg.dev_path)
    if table is None:
        table = embedding_table(cfg, list(train_set) + list(dev_set))
    model, store = new_model(cfg, table)
    opt = Adam(cfg.lr, l2=cfg.l2)
    rngs = store.rng
    baseline = EMABaseline(cfg.ema_decay)
    best_acc, best_step, best_snap, best_parses = -1.0, 0, None, None
    since_best = 0
    history = []
    step = 0
    done = False
    while not done:
        for batch in make_batches(train_set, cfg.batch_size, rngs["data"]):
            step += 1
            out = model.forward(batch, table, True, rngs, cfg.dropout, cfg.transition_weight, cfg.rl_weight, baseline)
            loss_value = float(out.loss.data)
            if not math.isfinite(loss_value):
                raise NaNGuard("loss", f"step {step}")
            store.zero_grad()
            gc.backward(out.loss)
            opt.step(store)
            if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                acc, parses, _ = evaluate(model, table, dev_set, cfg.seed)
                history.append([step, acc])
                log.info("%s step %d dev %.2f (loss %.4f)", cfg.variant, step, acc, loss_value)
                if acc > best_acc:
                    best_acc, best_step, best_snap, best_parses = acc, step, store.snapshot(), parses
                    since_best = 0
                else:
                    since_best += 1
                if since_best >= cfg.patience or step >= cfg.max_steps:
                    done = True
                    break
    store.restore(best_snap)
    result = RunResult(cfg.to_dict(), best_acc, best_step, len(history), 100.0 * majority_rate(dev_set), history, dev_parses=best_parses)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.ckpt.json"
        gc.save_checkpoint(ckpt, store, opt, {"config": cfg.to_dict(), "vocab": table.tokens, "best_step": best_step, "dev_accuracy": best_acc})
        result.checkpoint_path = str(ckpt)
        if best_parses is not None:
            parses_path = out / "dev_parses.txt"
            best_parses.save(parses_path)
            result.parses_path = str(parses_path)
        with open(out / "result.json", "w", encoding="utf-8") as f:
            json.dump(result.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return result


def load_model(path) -> tuple[NLIModel, EmbeddingTable, ExperimentConfig, dict]:
    store, _, meta = gc.load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    table = EmbeddingTable(meta["vocab"], store["embeddings"].data)
    return build_model(cfg, store, table), table, cfg, meta


# ---------------------------------------------------------------------------
# search

DEFAULT_RANGES = {
    "lr": (5e-4, 5e-3),
    "l2": (1e-7, 1e-5),
    "dropout": (0.0, 0.3),
    "rl_weight": (0.1, 10.0),
    "tracker_dim": (8, 32),
}


def sample_config(base: ExperimentConfig, ranges: dict, rng: np.random.Generator) -> ExperimentConfig:
    """lr, l2, rl_weight log-uniform; dropout uniform; tracker_dim uniform integer."""

    def loguniform(lo, hi):
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    updates: dict = {"seed": int(rng.integers(2**31))}
    if "lr" in ranges:
        updates["lr"] = loguniform(*ranges["lr"])
    if "l2" in ranges:
        updates["l2"] = loguniform(*ranges["l2"])
    if "dropout" in ranges:
        updates["dropout"] = float(rng.uniform(*ranges["dropout"]))
    if "tracker_dim" in ranges:
        lo, hi = ranges["tracker_dim"]
        updates["tracker_dim"] = int(rng.integers(lo, hi + 1))
    if "rl_weight" in ranges and base.variant == "rl-spinn":
        updates["rl_weight"] = loguniform(*ranges["rl_weight"])
    return replace(base, **updates)


def _run(args):
    cfg, train_set, dev_set, out_dir, table = args
    return train(cfg, train_set, dev_set, out_dir, table)


def summarize(results: list[RunResult]) -> dict:
    """Table-2 style: mean (sample std) / max dev accuracy and self F1."""
    accs = [r.best_dev_accuracy for r in results]
    k = len(accs)
    mean = math.fsum(accs) / k
    std = math.sqrt(math.fsum((a - mean) ** 2 for a in accs) / (k - 1)) if k > 1 else 0.0
    summary = {
        "runs": k,
        "accuracy_mean": mean,
        "accuracy_std": std,
        "accuracy_std_defined": k > 1,
        "accuracy_max": max(accs),
        "self_f1": None,
    }
    parses = [r.dev_parses for r in results if r.dev_parses is not None]
    if len(parses) >= 2:
        summary["self_f1"] = pm.self_f1(parses)
    return summary


def hyper_search(base: ExperimentConfig, ranges: dict | None = None, k: int = 5, train_set=None, dev_set=None, out_dir=None, search_seed: int | None = None, workers: int | None = None) -> tuple[list[RunResult], dict]:
    ranges = DEFAULT_RANGES if ranges is None else ranges
    rng = np.random.default_rng(base.seed if search_seed is None else search_seed)
    configs = [sample_config(base, ranges, rng) for _ in range(k)]
    if train_set is None:
        train_set = load_jsonl(base.train_path)
    if dev_set is None:
        dev_set = load_jsonl(base.dev_path)
    table = embedding_table(base, list(train_set) + list(dev_set))
    jobs = [(c, train_set, dev_set, None if out_dir is None else Path(out_dir) / f"run{i}", table) for i, c in enumerate(configs)]
    workers = workers or int(os.environ.get("LTL_THREADS", "1"))
    if workers > 1 and k > 1:
        with ProcessPoolExecutor(max_workers=min(workers, k)) as pool:
            results = list(pool.map(_run, jobs))
    else:
        results = [_run(j) for j in jobs]
    summary = summarize(results)
    summary["variant"] = base.variant
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.json", "w", encoding="utf-8") as f:
            json.dump({"summary": summary, "runs": [r.to_dict() for r in results]}, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(out / "summary.csv", "w", encoding="utf-8") as f:
            f.write(pm.report_csv([{"run": i, "seed": r.config["seed"], "lr": r.config["lr"], "l2": r.config["l2"], "dropout": r.config["dropout"], "dev_accuracy": r.best_dev_accuracy, "best_step": r.best_step} for i, r in enumerate(results)]))
    return results, summary
