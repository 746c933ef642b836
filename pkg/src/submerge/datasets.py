"""Synthetic code corpora for the two toy tasks.

Classification: K classes of short C-like snippets, each class built around a
distinct control construct, with compound camelCase identifiers so BPE has
something to inflate. Translation: a toy function grammar rewritten lexeme by
lexeme into a sibling syntax; the rewrite is deterministic, so the reference
target is exactly rewrite_source(source). Both generators are seeded and the
split is 70/15/15 per class (or overall for translation).
"""

from dataclasses import dataclass

import numpy as np

from .tokenizer import pretokenize

_VERBS = ("get", "set", "fetch", "load", "store", "scan", "push", "emit", "read", "fold")
_NOUNS = ("User", "Data", "Index", "Value", "Buffer", "Count", "Token", "Record", "Cache", "Total")
_TAILS = ("Fast", "Slow", "Next", "Prev", "Left", "Right", "Local", "Shared", "Inner", "Outer")


def _identifier(rng, parts=3):
    word = _VERBS[rng.integers(len(_VERBS))] + _NOUNS[rng.integers(len(_NOUNS))]
    if parts >= 3 and rng.random() < 0.6:
        word += _TAILS[rng.integers(len(_TAILS))]
    return word


def _num(rng, lo=2, hi=30):
    return str(int(rng.integers(lo, hi)))


@dataclass(frozen=True)
class LabelledText:
    text: str
    label: int


@dataclass(frozen=True)
class TextPair:
    source: str
    target: str


@dataclass(frozen=True)
class DatasetSplits:
    train: tuple
    valid: tuple
    test: tuple

    def __iter__(self):
        yield from (self.train, self.valid, self.test)


def _t_for(rng):
    a, i, n = _identifier(rng), _identifier(rng, 2), _num(rng)
    return (
        f"int {a} = 0; "
        f"for (int {i} = 0; {i} < {n}; {i} = {i} + 1) {{ {a} = {a} + {i}; }}"
    )


def _t_while(rng):
    a, f, n = _identifier(rng), _identifier(rng), _num(rng)
    return f"int {a} = {n}; while ({a} > 0) {{ {a} = {a} - 1; {f}({a}); }}"


def _t_branch(rng):
    a, b, f, g, n = (
        _identifier(rng),
        _identifier(rng),
        _identifier(rng),
        _identifier(rng),
        _num(rng),
    )
    return f"if ({a} == {n}) {{ {b} = {f}({a}); }} else {{ {b} = {g}({a}); }}"


def _t_float(rng):
    a, b, f = _identifier(rng), _identifier(rng), _identifier(rng)
    x = f"{int(rng.integers(1, 9))}.{int(rng.integers(0, 9))}"
    return f"float {a} = {x}; float {b} = {a} * {a}; {b} = {b} / 2.0; {f}({b});"


def _t_dowhile(rng):
    i, arr, n = _identifier(rng, 2), _identifier(rng), _num(rng)
    return (
        f"int {i} = 0; do {{ {arr}[{i}] = {i} * 2; {i} = {i} + 1; }} "
        f"while ({i} < {n});"
    )


def _t_switch(rng):
    a, b = _identifier(rng), _identifier(rng)
    x, y = _num(rng), _num(rng)
    return (
        f"switch ({a}) {{ case 0: {b} = {x}; break; case 1: {b} = {y}; break; "
        f"default: {b} = 0; }}"
    )


def _t_nested(rng):
    i, j, acc, n, m = (
        _identifier(rng, 2),
        _identifier(rng, 2),
        _identifier(rng),
        _num(rng),
        _num(rng),
    )
    return (
        f"for (int {i} = 0; {i} < {n}; {i} = {i} + 1) {{ "
        f"for (int {j} = 0; {j} < {m}; {j} = {j} + 1) {{ {acc} = {acc} + {i} * {j}; }} }}"
    )


def _t_recursion(rng):
    f, x = _identifier(rng), _identifier(rng, 2)
    return (
        f"int {f}(int {x}) {{ if ({x} <= 1) {{ return 1; }} "
        f"return {x} * {f}({x} - 1); }}"
    )


CLASS_TEMPLATES = (
    _t_for,
    _t_while,
    _t_branch,
    _t_float,
    _t_dowhile,
    _t_switch,
    _t_nested,
    _t_recursion,
)


def _split_three(items, train_frac=0.7, valid_frac=0.15):
    n = len(items)
    n_train = int(n * train_frac)
    n_valid = int(n * valid_frac)
    return (
        items[:n_train],
        items[n_train : n_train + n_valid],
        items[n_train + n_valid :],
    )


def generate_classification_dataset(num_classes, per_class, seed):
    """K-way labelled snippets, per_class samples each, split 70/15/15 per class."""
    if not 2 <= num_classes <= len(CLASS_TEMPLATES):
        raise ValueError(
            f"num_classes must lie in [2, {len(CLASS_TEMPLATES)}], got {num_classes}"
        )
    if per_class < 10:
        raise ValueError(f"per_class must be >= 10, got {per_class}")
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for label in range(num_classes):
        template = CLASS_TEMPLATES[label]
        samples = [LabelledText(template(rng), label) for _ in range(per_class)]
        tr, va, te = _split_three(samples)
        train.extend(tr)
        valid.extend(va)
        test.extend(te)
    for bucket in (train, valid, test):
        rng.shuffle(bucket)
    return DatasetSplits(tuple(train), tuple(valid), tuple(test))


REWRITE_MAP = {"fn": "def", "give": "return", "=": ":="}


def rewrite_source(source):
    """Deterministic lexeme-wise rewrite defining the translation target."""
    return "".join(REWRITE_MAP.get(lex.text, lex.text) for lex in pretokenize(source))


_OPS = ("+", "-", "*")


def _translation_source(rng):
    """fn(a,b){ x=(y op z); ... give(x); }.

    Every identifier/number lexeme is bounded by punctuation, so joining
    lexemes back without whitespace re-lexes exactly; that property is what
    makes lexeme-level BLEU on concatenated model output well defined.
    """
    arg_a, arg_b = _identifier(rng, 2), _identifier(rng, 2)
    known = [arg_a, arg_b]
    body = []
    for _ in range(int(rng.integers(1, 4))):
        dest = _identifier(rng, 2)
        left = known[rng.integers(len(known))]
        right = _num(rng) if rng.random() < 0.5 else known[rng.integers(len(known))]
        op = _OPS[rng.integers(len(_OPS))]
        body.append(f"{dest}=({left}{op}{right});")
        known.append(dest)
    body.append(f"give({known[-1]});")
    return f"fn({arg_a},{arg_b}){{{''.join(body)}}}"


def generate_translation_dataset(pairs, seed):
    """Seeded (source, target) pairs of the toy rewrite task, split 70/15/15."""
    if pairs < 10:
        raise ValueError(f"pairs must be >= 10, got {pairs}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(pairs):
        src = _translation_source(rng)
        samples.append(TextPair(src, rewrite_source(src)))
    tr, va, te = _split_three(samples)
    return DatasetSplits(tuple(tr), tuple(va), tuple(te))
