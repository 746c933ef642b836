"""Evaluation metrics: macro-F1 for classification, lexeme-level BLEU-4.

BLEU is computed over lexeme sequences, not subtokens, so scores are
comparable across tokenizers: generated subtokens are concatenated and
re-lexed first (relex), which is exact whenever punctuation separates the
lexemes, as the toy translation grammar guarantees.
"""

import math
from collections import Counter

import numpy as np

from .tokenizer import pretokenize


def macro_f1(y_true, y_pred, num_classes):
    """Unweighted mean of per-class F1; absent classes contribute 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def relex(pieces):
    """Lexeme strings of the concatenation of text pieces."""
    return [lex.text for lex in pretokenize("".join(pieces))]


def _ngrams(seq, n):
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu4(hypotheses, references):
    """Corpus BLEU with n-grams up to 4 and the standard brevity penalty.

    No smoothing: any order with zero matches zeroes the score (as does an
    empty hypothesis corpus). Identical corpora score 1.0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"count mismatch: {len(hypotheses)} hypotheses, {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("bleu needs at least one sentence pair")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, 5):
        matched = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hg = _ngrams(hyp, n)
            rg = _ngrams(ref, n)
            matched += sum(min(c, rg[g]) for g, c in hg.items())
            total += max(len(hyp) - n + 1, 0)
        if matched == 0 or total == 0:
            return 0.0
        log_precision += math.log(matched / total) / 4.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_precision)
