"""A small post-LN Transformer with an optional mid-stack merge.

Two architectures share the encoder: "classifier" pools the first position
into a linear head; "seq2seq" adds a causal decoder with cross attention and
a vocabulary projection. The merge (mean or learnable) can run after the
embedding (position 0) or after encoder layer l (position l), shortening the
sequence every layer above it. Positional encodings are added once, at the
embedding; they are never re-applied after merging.
"""

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .grouping import WordIdBatch, group_subwords
from .merging import merge_op

ARCHS = ("classifier", "seq2seq")
MERGE_STRATEGIES = (None, "mean", "learnable")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    num_layers: int
    d_model: int
    num_heads: int
    d_ff: int
    vocab_size: int
    max_len: int
    num_classes: int = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("num_layers", "d_model", "num_heads", "d_ff", "vocab_size", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.arch == "classifier":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("classifier needs num_classes >= 2")

    @property
    def d_k(self):
        return self.d_model // self.num_heads

    def to_dict(self):
        out = {
            "arch": self.arch,
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
        }
        if self.num_classes is not None:
            out["num_classes"] = self.num_classes
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class MergeSpec:
    """What to merge and where: strategy None disables merging entirely.

    position 0 merges right after the embedding; position l (1-based) after
    encoder layer l. Must satisfy 0 <= position <= num_layers.
    """

    strategy: str = None
    position: int = 0

    def __post_init__(self):
        if self.strategy not in MERGE_STRATEGIES:
            raise ValueError(
                f"strategy must be one of {MERGE_STRATEGIES}, got {self.strategy!r}"
            )
        if self.position < 0:
            raise ValueError(f"merge position must be >= 0, got {self.position}")

    @classmethod
    def none(cls):
        return cls(None, 0)

    def to_dict(self):
        return {"strategy": self.strategy, "position": self.position}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("strategy"), d.get("position", 0))


@dataclass(frozen=True)
class PaddedBatch:
    """Right-padded token ids, word ids (-1 at specials/padding), valid lengths."""

    token_ids: np.ndarray
    word_ids: np.ndarray
    valid_lens: np.ndarray

    def __post_init__(self):
        tok = np.asarray(self.token_ids, dtype=np.int64)
        wid = np.asarray(self.word_ids, dtype=np.int64)
        lens = np.asarray(self.valid_lens, dtype=np.int64)
        if tok.ndim != 2 or wid.shape != tok.shape or lens.shape != (tok.shape[0],):
            raise ValueError(
                f"inconsistent batch shapes: tokens {tok.shape}, words {wid.shape}, "
                f"lens {lens.shape}"
            )
        if lens.size and (lens.min() < 1 or lens.max() > tok.shape[1]):
            raise ValueError("valid lengths must lie in [1, N]")
        object.__setattr__(self, "token_ids", tok)
        object.__setattr__(self, "word_ids", wid)
        object.__setattr__(self, "valid_lens", lens)

    @property
    def mask(self):
        return np.arange(self.token_ids.shape[1])[None, :] < self.valid_lens[:, None]


def pad_sequences(seqs, pad_id, pad_to=None):
    """Stack TokenizedSequences into a PaddedBatch (right padding, word id -1)."""
    if not seqs:
        raise ValueError("cannot pad an empty batch")
    n = pad_to if pad_to is not None else max(len(s) for s in seqs)
    if any(len(s) > n for s in seqs):
        raise ValueError("pad_to is shorter than the longest sequence")
    tok = np.full((len(seqs), n), pad_id, dtype=np.int64)
    wid = np.full((len(seqs), n), -1, dtype=np.int64)
    lens = np.empty(len(seqs), dtype=np.int64)
    for b, s in enumerate(seqs):
        lens[b] = len(s)
        tok[b, : len(s)] = s.token_ids
        wid[b, : len(s)] = [-1 if w is None else w for w in s.word_ids]
    return PaddedBatch(tok, wid, lens)


def pad_id_rows(rows, pad_id, pad_to=None):
    """PaddedBatch from raw id lists (decoder side; word ids stay -1)."""
    if not rows:
        raise ValueError("cannot pad an empty batch")
    n = pad_to if pad_to is not None else max(len(r) for r in rows)
    tok = np.full((len(rows), n), pad_id, dtype=np.int64)
    wid = np.full((len(rows), n), -1, dtype=np.int64)
    lens = np.empty(len(rows), dtype=np.int64)
    for b, r in enumerate(rows):
        lens[b] = len(r)
        tok[b, : len(r)] = r
    return PaddedBatch(tok, wid, lens)


@lru_cache(maxsize=8)
def _positional_encoding(n, d):
    """Sinusoidal table (n, d): sin on even dims, cos on odd dims."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(j / 2.0) / d)
    pe = np.where(j.astype(np.int64) % 2 == 0, np.sin(angle), np.cos(angle))
    pe.flags.writeable = False
    return pe


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ModelParams:
    """Named parameter tensors plus the config/merge they were built for.

    Names follow the module tree, e.g. "enc.0.attn.wq", "enc.1.ffn.b2",
    "dec.0.cross.wo", "head.w", "out.b", "merge.w". merge.w exists only for
    the learnable strategy and is initialized to zeros without consuming a
    random draw, so runs that differ only in merge strategy share every other
    initial parameter exactly.
    """

    def __init__(self, config, merge, tensors):
        self.config = config
        self.merge = merge
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self):
        return list(self.tensors.values())

    def copy(self):
        fresh = {
            name: ad.Tensor(t.data.copy(), name=name) for name, t in self.tensors.items()
        }
        return ModelParams(self.config, self.merge, fresh)

    @classmethod
    def init(cls, config, merge, seed):
        if merge.strategy is not None and merge.position > config.num_layers:
            raise ValueError(
                f"merge position {merge.position} exceeds num_layers {config.num_layers}"
            )
        rng = np.random.default_rng(seed)
        d, dff = config.d_model, config.d_ff
        t = {}

        def mat(name, fan_in, fan_out):
            t[name] = ad.Tensor(_glorot(rng, fan_in, fan_out), name=name)

        def vec(name, size, value):
            t[name] = ad.Tensor(np.full(size, value, dtype=np.float64), name=name)

        mat("embed.table", config.vocab_size, d)

        def attn_block(prefix):
            for w in ("wq", "wk", "wv", "wo"):
                mat(f"{prefix}.{w}", d, d)

        def ffn_block(prefix):
            mat(f"{prefix}.w1", d, dff)
            vec(f"{prefix}.b1", dff, 0.0)
            mat(f"{prefix}.w2", dff, d)
            vec(f"{prefix}.b2", d, 0.0)

        def ln_block(prefix):
            vec(f"{prefix}.gamma", d, 1.0)
            vec(f"{prefix}.beta", d, 0.0)

        for l in range(config.num_layers):
            attn_block(f"enc.{l}.attn")
            ffn_block(f"enc.{l}.ffn")
            ln_block(f"enc.{l}.ln1")
            ln_block(f"enc.{l}.ln2")

        if config.arch == "classifier":
            mat("head.w", d, config.num_classes)
            vec("head.b", config.num_classes, 0.0)
        else:
            for l in range(config.num_layers):
                attn_block(f"dec.{l}.self")
                attn_block(f"dec.{l}.cross")
                ffn_block(f"dec.{l}.ffn")
                ln_block(f"dec.{l}.ln1")
                ln_block(f"dec.{l}.ln2")
                ln_block(f"dec.{l}.ln3")
            mat("out.w", d, config.vocab_size)
            vec("out.b", config.vocab_size, 0.0)

        if merge.strategy == "learnable":
            vec("merge.w", d, 0.0)
        return cls(config, merge, t)


def _resolve(params, config, merge):
    config = config if config is not None else params.config
    merge = merge if merge is not None else params.merge
    if merge.strategy is not None and merge.position > config.num_layers:
        raise ValueError(
            f"merge position {merge.position} exceeds num_layers {config.num_layers}"
        )
    return config, merge


def _mha(params, prefix, config, q_in, kv_in, key_mask, causal=False, capture=None):
    """Multi-head attention block; key_mask marks valid key positions."""
    q = ad.matmul(q_in, params[f"{prefix}.wq"])
    k = ad.matmul(kv_in, params[f"{prefix}.wk"])
    v = ad.matmul(kv_in, params[f"{prefix}.wv"])
    qh = ad.split_heads(q, config.num_heads)
    kh = ad.split_heads(k, config.num_heads)
    vh = ad.split_heads(v, config.num_heads)
    scores = ad.scale(
        ad.matmul(qh, ad.transpose_last2(kh)), 1.0 / math.sqrt(config.d_k)
    )
    n_q, n_k = q_in.data.shape[1], kv_in.data.shape[1]
    drop = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
    if causal:
        future = np.triu(np.ones((n_q, n_k), dtype=bool), k=1)
        drop = drop | future[None, None, :, :]
    scores = ad.masked_fill(scores, drop, -1e30)
    probs = ad.softmax_lastdim(scores)
    if capture is not None:
        capture[prefix] = probs.data
    ctx = ad.join_heads(ad.matmul(probs, vh))
    return ad.matmul(ctx, params[f"{prefix}.wo"])


def _ffn(params, prefix, h):
    inner = ad.relu(ad.add(ad.matmul(h, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(inner, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _add_ln(params, prefix, residual, sub):
    return ad.layernorm_lastdim(
        ad.add(residual, sub), params[f"{prefix}.gamma"], params[f"{prefix}.beta"]
    )


def _embed(params, config, token_ids):
    n = token_ids.shape[1]
    if n > config.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {config.max_len}")
    h = ad.embedding_lookup(params["embed.table"], token_ids)
    pe = ad.Tensor(_positional_encoding(config.max_len, config.d_model)[:n])
    return ad.add(h, pe)


def encode(x_src, params, config=None, merge=None, capture=None):
    """Run the encoder; returns (hidden Tensor, valid mask, groups or None).

    The merge, when enabled, runs after the embedding (position 0) or after
    encoder layer l (position l); the returned mask reflects the merged
    length. Groups are derived from the word ids before any layer runs.
    """
    config, merge = _resolve(params, config, merge)
    h = _embed(params, config, x_src.token_ids)
    mask = x_src.mask
    groups = None
    merging = merge.strategy is not None
    if merging:
        groups = group_subwords(WordIdBatch(x_src.word_ids))
        w = params.tensors.get("merge.w")
        if merge.position == 0:
            h, mask = merge_op(h, mask, groups, merge.strategy, w)
    for l in range(config.num_layers):
        attn = _mha(params, f"enc.{l}.attn", config, h, h, mask, capture=capture)
        h = _add_ln(params, f"enc.{l}.ln1", h, attn)
        h = _add_ln(params, f"enc.{l}.ln2", h, _ffn(params, f"enc.{l}.ffn", h))
        if merging and merge.position == l + 1:
            h, mask = merge_op(h, mask, groups, merge.strategy, w)
    return h, mask, groups


def classify(x_src, params, config=None, merge=None, capture=None):
    """Class logits (B, num_classes) from the first pooled position."""
    config, merge = _resolve(params, config, merge)
    if config.arch != "classifier":
        raise ValueError(f"classify needs arch 'classifier', got {config.arch!r}")
    h, _, _ = encode(x_src, params, config, merge, capture=capture)
    pooled = ad.select_position(h, 0)
    return ad.add(ad.matmul(pooled, params["head.w"]), params["head.b"])


def _decoder(params, config, tgt_ids, tgt_mask, memory, memory_mask, capture=None):
    h = _embed(params, config, tgt_ids)
    for l in range(config.num_layers):
        self_attn = _mha(
            params, f"dec.{l}.self", config, h, h, tgt_mask, causal=True, capture=capture
        )
        h = _add_ln(params, f"dec.{l}.ln1", h, self_attn)
        cross = _mha(
            params, f"dec.{l}.cross", config, h, memory, memory_mask, capture=capture
        )
        h = _add_ln(params, f"dec.{l}.ln2", h, cross)
        h = _add_ln(params, f"dec.{l}.ln3", h, _ffn(params, f"dec.{l}.ffn", h))
    return ad.add(ad.matmul(h, params["out.w"]), params["out.b"])


def decode_teacher_forced(x_src, x_tgt, params, config=None, merge=None, capture=None, bos_id=None):
    """Next-token logits (B, T, vocab) for a BOS-led decoder input batch."""
    config, merge = _resolve(params, config, merge)
    if config.arch != "seq2seq":
        raise ValueError(f"decode needs arch 'seq2seq', got {config.arch!r}")
    if bos_id is not None and np.any(x_tgt.token_ids[:, 0] != bos_id):
        raise ValueError("decoder input must start with BOS")
    memory, memory_mask, _ = encode(x_src, params, config, merge, capture=capture)
    return _decoder(
        params, config, x_tgt.token_ids, x_tgt.mask, memory, memory_mask, capture=capture
    )


def greedy_decode(x_src, params, config=None, merge=None, *, bos_id, eos_id, max_steps):
    """Argmax decoding until EOS or max_steps; returns id lists without BOS/EOS."""
    config, merge = _resolve(params, config, merge)
    b = x_src.token_ids.shape[0]
    outs = [[] for _ in range(b)]
    if max_steps <= 0:
        return outs
    memory, memory_mask, _ = encode(x_src, params, config, merge)
    tgt = np.full((b, 1), bos_id, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    for _ in range(max_steps):
        tgt_mask = np.ones(tgt.shape, dtype=bool)
        logits = _decoder(params, config, tgt, tgt_mask, memory, memory_mask)
        nxt = logits.data[:, -1, :].argmax(axis=1)
        for i in range(b):
            if not done[i]:
                if nxt[i] == eos_id:
                    done[i] = True
                else:
                    outs[i].append(int(nxt[i]))
        if done.all():
            break
        tgt = np.concatenate([tgt, nxt[:, None].astype(np.int64)], axis=1)
    return outs


def save_checkpoint(params, path):
    """Write config, merge spec, and all named parameter arrays as JSON."""
    payload = {
        "format": "submerge-checkpoint-v1",
        "config": params.config.to_dict(),
        "merge": params.merge.to_dict(),
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "submerge-checkpoint-v1":
        raise ValueError(f"not a model checkpoint: {path}")
    config = ModelConfig.from_dict(payload["config"])
    merge = MergeSpec.from_dict(payload["merge"])
    tensors = {
        name: ad.Tensor(
            np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]),
            name=name,
        )
        for name, entry in payload["params"].items()
    }
    return ModelParams(config, merge, tensors)
