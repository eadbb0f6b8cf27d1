"""Shared deterministic tokenizer and persistent vocabulary.

All sources (built-in statistical LMs, external providers, the human corpus)
share a single vocabulary so that their probability dictionaries are directly
comparable. Token ids are dense integers; id 0 is always the unk token.
"""

import re
import unicodedata
from collections import Counter
from typing import Iterable

UNK_TOKEN = "<unk>"

# Maximal runs of letters/digits, or a single punctuation character.
# Underscore is word-punctuation, not a letter, so it tokenizes alone.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def split_text(text: str) -> list[str]:
    """Split text into surface tokens: NFC, lowercase, runs of alnum or single punctuation."""
    normalized = unicodedata.normalize("NFC", text).lower()
    return _TOKEN_RE.findall(normalized)


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to bind dictionaries to a vocabulary file."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class Vocabulary:
    """Ordered token list with dense ids; id 0 is reserved for unk."""

    def __init__(self, tokens: list[str]):
        if not tokens or tokens[0] != UNK_TOKEN:
            raise ValueError("vocabulary must start with the unk token %r" % UNK_TOKEN)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.id_of = {tok: i for i, tok in enumerate(self.tokens)}
        self.unk_id = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def to_bytes(self) -> bytes:
        """Canonical file form: one token per line, line number = id."""
        return ("\n".join(self.tokens) + "\n").encode("utf-8")

    def fnv1a(self) -> int:
        return fnv1a_64(self.to_bytes())

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "rb") as f:
            data = f.read()
        lines = data.decode("utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids; surface tokens outside the vocabulary become unk."""
    get = vocab.id_of.get
    unk = vocab.unk_id
    return [get(tok, unk) for tok in split_text(text)]


def build_vocabulary(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Build a vocabulary of at most max_size tokens (including unk) from a text stream.

    Tokens are ranked by descending frequency, ties broken lexicographically.
    """
    if max_size < 2:
        raise ValueError("max_size must be >= 2")
    counts: Counter = Counter()
    for text in corpus:
        counts.update(split_text(text))
    if not counts:
        raise ValueError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = [UNK_TOKEN] + [tok for tok, _ in ranked[: max_size - 1]]
    return Vocabulary(tokens)
