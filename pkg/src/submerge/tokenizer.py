"""Code-flavoured lexer plus a byte-pair tokenizer that respects lexemes.

The lexer splits source text into lexemes (identifiers, numbers, strings,
single punctuation characters). BPE is then trained and applied strictly
within lexeme boundaries, so every subtoken belongs to exactly one lexeme and
the word-id stream needed for grouping falls out of encode() for free.
"""

import json
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

PAD, CLS, SEP, UNK, BOS, EOS = "<pad>", "<cls>", "<sep>", "<unk>", "<bos>", "<eos>"
SPECIAL_TOKENS = (PAD, CLS, SEP, UNK, BOS, EOS)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_STRING_RE = {
    '"': re.compile(r'"(?:\\.|[^"\\\n])*"'),
    "'": re.compile(r"'(?:\\.|[^'\\\n])*'"),
}


@dataclass(frozen=True)
class Lexeme:
    """One lexeme: its text and its 0-based index within the sample."""

    text: str
    index: int


def pretokenize(text):
    """Split text into lexemes. Whitespace separates and is dropped.

    Identifiers, numbers and quoted strings are single lexemes; any other
    non-whitespace character is a lexeme on its own (so "==" is two "="
    lexemes). An unterminated string swallows the rest of its line.
    """
    lexemes = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _STRING_RE:
            m = _STRING_RE[ch].match(text, i)
            if m is None:
                eol = text.find("\n", i)
                stop = n if eol < 0 else eol
                piece = text[i:stop].rstrip()
                lexemes.append(Lexeme(piece, len(lexemes)))
                i = stop
                continue
        else:
            m = _IDENT_RE.match(text, i) or _NUMBER_RE.match(text, i)
        if m is not None:
            lexemes.append(Lexeme(m.group(), len(lexemes)))
            i = m.end()
        else:
            lexemes.append(Lexeme(ch, len(lexemes)))
            i += 1
    return lexemes


@dataclass(frozen=True, eq=False)
class Vocab:
    """Token table plus the ordered merge rules that produced it.

    Ids: specials 0..5 in SPECIAL_TOKENS order, then the sorted character
    alphabet, then merged symbols in creation order.
    """

    token_to_id: dict
    merge_rules: tuple

    def __post_init__(self):
        ordered = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise ValueError("token ids must be exactly 0..len(vocab)-1")
        if tuple(t for t, _ in ordered[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocab must start with the special tokens {SPECIAL_TOKENS}")
        object.__setattr__(self, "id_to_token", tuple(t for t, _ in ordered))

    def __len__(self):
        return len(self.id_to_token)

    @property
    def pad_id(self):
        return self.token_to_id[PAD]

    @property
    def cls_id(self):
        return self.token_to_id[CLS]

    @property
    def sep_id(self):
        return self.token_to_id[SEP]

    @property
    def unk_id(self):
        return self.token_to_id[UNK]

    @property
    def bos_id(self):
        return self.token_to_id[BOS]

    @property
    def eos_id(self):
        return self.token_to_id[EOS]

    def tokens_of(self, ids):
        return [self.id_to_token[i] for i in ids]


@dataclass(frozen=True)
class TokenizedSequence:
    """Subtoken ids plus the word id (lexeme index) each subtoken came from.

    word_ids[j] is None for special tokens, otherwise the lexeme index; the
    non-None entries are non-decreasing and subtokens of a lexeme are
    contiguous.
    """

    token_ids: tuple
    word_ids: tuple

    def __post_init__(self):
        tok = tuple(int(t) for t in self.token_ids)
        wid = tuple(None if w is None else int(w) for w in self.word_ids)
        if len(tok) != len(wid):
            raise ValueError(
                f"token/word id length mismatch: {len(tok)} vs {len(wid)}"
            )
        real = [w for w in wid if w is not None]
        if any(b < a for a, b in zip(real, real[1:])):
            raise ValueError(f"word ids must be non-decreasing, got {wid}")
        object.__setattr__(self, "token_ids", tok)
        object.__setattr__(self, "word_ids", wid)

    def __len__(self):
        return len(self.token_ids)


def _merge_once(symbols, left, right):
    """Replace adjacent (left, right) pairs by left+right, greedy left-to-right."""
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def train_bpe(corpus, vocab_size):
    """Train BPE within lexeme boundaries.

    Merges the most frequent adjacent symbol pair (lexicographically smallest
    pair on frequency ties) until the vocab reaches vocab_size or no pair
    occurs at least twice. The base vocab is the specials plus the sorted
    character alphabet of the corpus; vocab_size must cover it.
    """
    lexeme_counts = Counter(
        lex.text for text in corpus for lex in pretokenize(text)
    )
    alphabet = sorted({ch for word in lexeme_counts for ch in word})
    tokens = list(SPECIAL_TOKENS) + alphabet
    if vocab_size < len(tokens):
        raise ValueError(
            f"vocab_size {vocab_size} smaller than base vocab {len(tokens)} "
            f"({len(SPECIAL_TOKENS)} specials + {len(alphabet)} characters)"
        )
    pieces = {word: list(word) for word in lexeme_counts}
    merges = []
    seen = set(tokens)
    while len(tokens) < vocab_size:
        pair_counts = Counter()
        for word, count in lexeme_counts.items():
            syms = pieces[word]
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        if merged not in seen:
            # Two merge paths can concatenate to the same string; keep one id.
            tokens.append(merged)
            seen.add(merged)
        for word in pieces:
            pieces[word] = _merge_once(pieces[word], *best)
    return Vocab({t: i for i, t in enumerate(tokens)}, tuple(merges))


@lru_cache(maxsize=65536)
def _segment_lexeme(vocab, word):
    """Subtoken strings for one lexeme under vocab's merge rules (cached)."""
    symbols = list(word)
    for left, right in vocab.merge_rules:
        if len(symbols) == 1:
            break
        symbols = _merge_once(symbols, left, right)
    return tuple(symbols)


def encode(text, vocab, add_specials=True):
    """Tokenize text to a TokenizedSequence.

    Each lexeme is segmented independently; unknown symbols map to <unk>. With
    add_specials the sequence is wrapped as <cls> ... <sep>, both carrying
    word id None.
    """
    token_ids = []
    word_ids = []
    if add_specials:
        token_ids.append(vocab.cls_id)
        word_ids.append(None)
    for lex in pretokenize(text):
        for sym in _segment_lexeme(vocab, lex.text):
            token_ids.append(vocab.token_to_id.get(sym, vocab.unk_id))
            word_ids.append(lex.index)
    if add_specials:
        token_ids.append(vocab.sep_id)
        word_ids.append(None)
    return TokenizedSequence(tuple(token_ids), tuple(word_ids))


def save_vocab(vocab, path):
    """Write vocab as text: one token per line in id order, a blank line,
    then one JSON [left, right] merge rule per line (tokens may contain
    spaces, so merge pairs are JSON-encoded)."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.id_to_token:
            fh.write(token + "\n")
        fh.write("\n")
        for left, right in vocab.merge_rules:
            fh.write(json.dumps([left, right]) + "\n")


def load_vocab(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if "" not in lines:
        raise ValueError("vocab file has no blank separator line")
    split = lines.index("")
    tokens = lines[:split]
    merges = []
    for line in lines[split + 1 :]:
        if not line:
            continue
        pair = json.loads(line)
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ValueError(f"bad merge rule line: {line!r}")
        merges.append((pair[0], pair[1]))
    return Vocab({t: i for i, t in enumerate(tokens)}, tuple(merges))


@dataclass(frozen=True)
class InflationReport:
    """Per-sample (lexeme count, subtoken count) pairs and their statistics.

    mean_ratio averages subtokens/lexemes over samples with at least one
    lexeme; slope/intercept are the least-squares fit of subtokens against
    lexemes over the same samples.
    """

    pairs: tuple
    mean_ratio: float
    slope: float
    intercept: float


def inflation_stats(corpus, vocab):
    """Measure subtoken inflation of corpus under vocab (specials excluded)."""
    if not corpus:
        raise ValueError("inflation_stats needs a non-empty corpus")
    pairs = []
    for text in corpus:
        lexemes = pretokenize(text)
        seq = encode(text, vocab, add_specials=False)
        pairs.append((len(lexemes), len(seq.token_ids)))
    kept = [(lx, st) for lx, st in pairs if lx > 0]
    if not kept:
        raise ValueError("no sample has any lexemes")
    ratios = [st / lx for lx, st in kept]
    mean_ratio = sum(ratios) / len(ratios)
    xs = [float(lx) for lx, _ in kept]
    ys = [float(st) for _, st in kept]
    n = len(kept)
    x_mean = sum(xs) / n
    y_mean = sum(ys) / n
    var = sum((x - x_mean) ** 2 for x in xs)
    if var == 0.0:
        slope, intercept = 0.0, y_mean
    else:
        slope = sum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys)) / var
        intercept = y_mean - slope * x_mean
    return InflationReport(tuple(pairs), mean_ratio, slope, intercept)
