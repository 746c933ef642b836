"""Training and evaluation harness for the two toy tasks.

A run is (strategy, position, seed): parameters are initialized from the
seed, trained with Adam for a fixed number of epochs, the validation metric
is tracked per epoch (epoch 0 = before any step), and the best-validation
parameters (earliest epoch on ties) are scored once on the test split. The
reported FLOPs are the analytic per-forward counts summed over the test
split at true (unpadded) lengths; the classification head is excluded, the
seq2seq vocabulary projection included.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datasets import generate_classification_dataset, generate_translation_dataset
from .flops import count_encdec_flops, count_encoder_flops, length_schedule
from .grouping import WordIdBatch, group_subwords, merged_lengths
from .merging import MERGE_KINDS
from .metrics import bleu4, macro_f1, relex
from .tokenizer import encode, pretokenize, train_bpe
from .transformer import (
    MergeSpec,
    ModelConfig,
    ModelParams,
    classify,
    decode_teacher_forced,
    greedy_decode,
    pad_id_rows,
    pad_sequences,
)

TASKS = ("classify", "translate")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or parameter stops being finite."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs: task, model, grid, and optimizer budget."""

    task: str
    model: ModelConfig
    strategies: tuple = ("mean", "learnable")
    positions: tuple = None
    seeds: tuple = (0, 1, 2)
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 3e-4
    dataset: dict = field(default_factory=dict)
    max_decode_len: int = 48

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        object.__setattr__(self, "strategies", tuple(self.strategies))
        positions = (
            tuple(range(self.model.num_layers + 1))
            if self.positions is None
            else tuple(int(p) for p in self.positions)
        )
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")
        for s in self.strategies:
            if s not in MERGE_KINDS:
                raise ValueError(f"unknown strategy {s!r}")
        for p in positions:
            if not 0 <= p <= self.model.num_layers:
                raise ValueError(
                    f"position {p} out of range 0..{self.model.num_layers}"
                )
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self):
        return {
            "task": self.task,
            "model": self.model.to_dict(),
            "strategies": list(self.strategies),
            "positions": list(self.positions),
            "seeds": list(self.seeds),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "dataset": dict(self.dataset),
            "max_decode_len": self.max_decode_len,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class Adam:
    """Plain Adam over a list of parameter tensors (updates data in place)."""

    def __init__(self, tensors, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.tensors]
        self._v = [np.zeros_like(p.data) for p in self.tensors]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.tensors):
            g = grads[p]
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            m_hat = self._m[i] / (1 - b1**self.t)
            v_hat = self._v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TaskData:
    """Shared per-experiment state: the trained vocab and encoded splits.

    classify: splits hold (TokenizedSequence, label) pairs.
    translate: splits hold (src TokenizedSequence, target id list, target text).
    """

    task: str
    vocab: object
    train: list
    valid: list
    test: list

    def split(self, name):
        return getattr(self, name)


def prepare_task(exp):
    """Generate the dataset, train the tokenizer on the train split, encode."""
    if exp.task == "classify":
        ds = generate_classification_dataset(
            exp.dataset.get("num_classes", exp.model.num_classes),
            exp.dataset.get("per_class", 100),
            exp.dataset.get("seed", 0),
        )
        vocab = train_bpe([s.text for s in ds.train], exp.model.vocab_size)
        splits = [
            [(encode(s.text, vocab), s.label) for s in part] for part in ds
        ]
    else:
        ds = generate_translation_dataset(
            exp.dataset.get("pairs", 120), exp.dataset.get("seed", 0)
        )
        texts = [p.source for p in ds.train] + [p.target for p in ds.train]
        vocab = train_bpe(texts, exp.model.vocab_size)
        splits = []
        for part in ds:
            rows = []
            for pair in part:
                src = encode(pair.source, vocab)
                tgt = encode(pair.target, vocab, add_specials=False)
                rows.append((src, list(tgt.token_ids), pair.target))
            splits.append(rows)
    return TaskData(exp.task, vocab, *splits)


def _merged_count(seq):
    """Number of positions after merging one TokenizedSequence."""
    batch = WordIdBatch.from_sequences([[w for w in seq.word_ids]])
    groups = group_subwords(batch)
    return int(merged_lengths(groups, np.array([len(seq)]))[0])


def eval_flops(config, merge, samples, task):
    """Analytic forward FLOPs summed over encoded eval samples, true lengths."""
    total = 0
    merging = merge.strategy is not None
    for row in samples:
        src = row[0]
        n = len(src)
        n_merged = _merged_count(src) if merging else None
        pos = merge.position if merging else None
        schedule = length_schedule(config.num_layers, n, n_merged, pos)
        if task == "classify":
            total += count_encoder_flops(config, schedule).total
        else:
            t = len(row[1]) + 1  # BOS-led decoder input
            memory = n_merged if merging else n
            total += count_encdec_flops(config, schedule, t, memory).total
    return total


def _batches(n_items, batch_size, rng=None):
    order = np.arange(n_items)
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, n_items, batch_size):
        yield order[start : start + batch_size]


def evaluate(params, split, task, vocab, batch_size=16, max_decode_len=48):
    """Metric of params on an encoded split: macro-F1 or lexeme BLEU-4."""
    config, merge = params.config, params.merge
    if task == "classify":
        y_true, y_pred = [], []
        for idx in _batches(len(split), batch_size):
            rows = [split[i] for i in idx]
            batch = pad_sequences([r[0] for r in rows], vocab.pad_id)
            logits = classify(batch, params, config, merge)
            y_pred.extend(logits.data.argmax(axis=1).tolist())
            y_true.extend(r[1] for r in rows)
        return macro_f1(y_true, y_pred, config.num_classes)
    hyps, refs = [], []
    for idx in _batches(len(split), batch_size):
        rows = [split[i] for i in idx]
        batch = pad_sequences([r[0] for r in rows], vocab.pad_id)
        decoded = greedy_decode(
            batch,
            params,
            config,
            merge,
            bos_id=vocab.bos_id,
            eos_id=vocab.eos_id,
            max_steps=max_decode_len,
        )
        for row, ids in zip(rows, decoded):
            hyps.append(relex(vocab.tokens_of(ids)))
            refs.append([lex.text for lex in pretokenize(row[2])])
    return bleu4(hyps, refs)


@dataclass
class RunResult:
    """Outcome of one (strategy, position, seed) training run."""

    strategy: str
    position: int
    seed: int
    metric: float
    flops: int
    curve: list
    status: str = "ok"
    error: str = None
    params: object = None

    def row(self):
        return {
            "strategy": self.strategy or "none",
            "position": "" if self.strategy is None else self.position,
            "seed": self.seed,
            "metric": self.metric,
            "flops": self.flops,
        }


def _loss_of_batch(exp, data, params, rows):
    vocab = data.vocab
    if exp.task == "classify":
        batch = pad_sequences([r[0] for r in rows], vocab.pad_id)
        logits = classify(batch, params)
        return ad.cross_entropy_with_logits(
            logits, np.array([r[1] for r in rows], dtype=np.int64)
        )
    src = pad_sequences([r[0] for r in rows], vocab.pad_id)
    dec_in = pad_id_rows(
        [[vocab.bos_id] + r[1] for r in rows], vocab.pad_id
    )
    labels_rows = [r[1] + [vocab.eos_id] for r in rows]
    t = dec_in.token_ids.shape[1]
    labels = np.full((len(rows), t), vocab.pad_id, dtype=np.int64)
    for i, lab in enumerate(labels_rows):
        labels[i, : len(lab)] = lab
    logits = decode_teacher_forced(src, dec_in, params, bos_id=vocab.bos_id)
    return ad.cross_entropy_with_logits(logits, labels, valid_mask=dec_in.mask)


def train(exp, strategy, position, seed, data=None):
    """One full training run; returns a RunResult with best-valid params.

    strategy None trains the no-merge baseline (position is ignored). Raises
    TrainingDiverged when the loss leaves the finite range.
    """
    if data is None:
        data = prepare_task(exp)
    merge = MergeSpec(strategy, position if strategy is not None else 0)
    params = ModelParams.init(exp.model, merge, seed)
    opt = Adam(params.trainable(), lr=exp.learning_rate)
    rng = np.random.default_rng(seed)

    def valid_metric(p):
        return evaluate(
            p, data.valid, exp.task, data.vocab,
            batch_size=exp.batch_size, max_decode_len=exp.max_decode_len,
        )

    curve = [valid_metric(params)]
    best_metric, best_params = curve[0], params.copy()
    for _ in range(exp.epochs):
        for idx in _batches(len(data.train), exp.batch_size, rng):
            rows = [data.train[i] for i in idx]
            with ad.Tape() as tape:
                loss = _loss_of_batch(exp, data, params, rows)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss at step {opt.t + 1} "
                    f"(strategy={strategy}, position={position}, seed={seed})"
                )
            grads = ad.backward(loss, tape, params.trainable())
            opt.step(grads)
        metric = valid_metric(params)
        curve.append(metric)
        if metric > best_metric:
            best_metric, best_params = metric, params.copy()
    test_metric = evaluate(
        best_params, data.test, exp.task, data.vocab,
        batch_size=exp.batch_size, max_decode_len=exp.max_decode_len,
    )
    flops = eval_flops(exp.model, merge, data.test, exp.task)
    return RunResult(
        strategy=strategy,
        position=position if strategy is not None else None,
        seed=seed,
        metric=test_metric,
        flops=flops,
        curve=curve,
        params=best_params,
    )
