"""Per-source n-gram -> top-K next-token probability dictionaries.

A dictionary holds one level per gram order n in 2..n_max. A level maps a
context (the first n-1 token ids of an n-gram) to the top-K next-token
probabilities, sorted by descending probability with ascending-token-id
tie-break. Dictionaries can be quantized (binary16 probabilities, narrow
token ids) and serialized to a compact little-endian binary file.
"""

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

MAGIC = b"LLMDICT1"

# MISS is a value, not an error: lookup returns it for any unmatched query.
MISS = None

# Entries below this are dropped before storage: binary16 cannot represent
# them (smallest subnormal is 2^-24).
PROB_FLOOR = 2.0 ** -24

_MAX_ENTRIES_PER_KEY = 0xFFFF  # entry count is a u16 in the file format


class ProbEntry(NamedTuple):
    token_id: int
    prob: float


class DictionaryFormatError(ValueError):
    """Malformed dictionary file; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DictionaryBuildError(RuntimeError):
    """Provider failure during build; carries the failing context."""

    def __init__(self, message: str, level: int, context: tuple):
        super().__init__(message)
        self.level = level
        self.context = context


@dataclass
class DictLevel:
    """One gram order: context tuple -> ordered {token_id: prob}.

    The inner dicts preserve insertion order, which is always the canonical
    entry order (descending prob, ascending token id).
    """

    n: int
    entries: dict = field(default_factory=dict)

    def num_entries(self) -> int:
        return sum(len(v) for v in self.entries.values())


@dataclass
class NgramDictionary:
    source_name: str
    levels: dict  # n -> DictLevel, contiguous for n in 2..n_max
    vocab_hash: int
    quantized: bool = False

    @property
    def n_max(self) -> int:
        return max(self.levels) if self.levels else 1

    def lookup(self, context: Sequence[int], next_id: int):
        """Exact-length match: probability from level len(context)+1, or MISS."""
        level = self.levels.get(len(context) + 1)
        if level is None:
            return MISS
        bucket = level.entries.get(tuple(context))
        if bucket is None:
            return MISS
        return bucket.get(next_id, MISS)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NgramDictionary):
            return NotImplemented
        return (
            self.source_name == other.source_name
            and self.vocab_hash == other.vocab_hash
            and self.quantized == other.quantized
            and {n: lv.entries for n, lv in self.levels.items()}
            == {n: lv.entries for n, lv in other.levels.items()}
        )


@dataclass
class StorageEstimate:
    bytes: int
    breakdown: list  # (gram order n, bytes for that level)


def lookup(dictionary: NgramDictionary, context: Sequence[int], next_id: int):
    return dictionary.lookup(context, next_id)


def count_top_ngrams(texts: Iterable[Sequence[int]], n: int, k: int) -> list:
    """The k most frequent n-token windows, as (ngram tuple, count) pairs.

    Ties are broken by lexicographic token-id order. Sequences shorter than n
    contribute nothing; fewer than k pairs are returned if the corpus has
    fewer distinct n-grams.
    """
    if n < 2:
        raise ValueError("gram order must be >= 2")
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: Counter = Counter()
    for seq in texts:
        seq = tuple(seq)
        for i in range(len(seq) - n + 1):
            counts[seq[i : i + n]] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def contexts_from_ngrams(ngram_counts: Iterable[tuple]) -> list:
    """Distinct (n-1)-token contexts of counted n-grams, in first-seen order."""
    seen = {}
    for ngram, _ in ngram_counts:
        seen.setdefault(tuple(ngram[:-1]), None)
    return list(seen)


def _canonical_entries(pairs: Iterable[tuple]) -> dict:
    ordered = sorted(pairs, key=lambda e: (-e[1], e[0]))
    return {tok: p for tok, p in ordered}


def build_dictionary(
    provider,
    contexts_per_level: dict,
    top_k_per_level: dict,
    source_name: Optional[str] = None,
) -> NgramDictionary:
    """Query the provider for every selected context and keep the top-K entries.

    contexts_per_level maps gram order n to the context tuples of that level;
    top_k_per_level maps n to its top-K budget. Entries with probability below
    PROB_FLOOR are dropped. Deterministic given a deterministic provider.
    """
    levels = {}
    for n in sorted(contexts_per_level):
        top_k = top_k_per_level[n]
        if top_k < 1:
            raise ValueError("top-K must be >= 1")
        level = DictLevel(n=n)
        for context in sorted(set(tuple(c) for c in contexts_per_level[n])):
            if len(context) != n - 1:
                raise ValueError(
                    f"context {context} has length {len(context)}, level {n} needs {n - 1}"
                )
            try:
                entries = provider.next_token_distribution(context, top_k)
            except Exception as exc:
                raise DictionaryBuildError(
                    f"provider {provider.name!r} failed on level-{n} context {context}: {exc}",
                    level=n,
                    context=context,
                ) from exc
            kept = [(int(t), float(p)) for t, p in entries if p >= PROB_FLOOR]
            total = sum(p for _, p in kept)
            if total > 1.0 + 1e-6:
                raise DictionaryBuildError(
                    f"provider {provider.name!r} returned probabilities summing to {total}",
                    level=n,
                    context=context,
                )
            level.entries[context] = _canonical_entries(kept)
        levels[n] = level
    return NgramDictionary(
        source_name=source_name if source_name is not None else provider.name,
        levels=levels,
        vocab_hash=provider.vocab_hash,
        quantized=False,
    )


def quantize(dictionary: NgramDictionary) -> NgramDictionary:
    """Round probabilities to IEEE binary16 (round-to-nearest-even).

    Entries are re-sorted with the usual tie rule after rounding, and entries
    rounding to zero are dropped. Idempotent.
    """
    levels = {}
    for n, level in dictionary.levels.items():
        new_level = DictLevel(n=n)
        for context, bucket in level.entries.items():
            rounded = [
                (tok, float(np.float16(p))) for tok, p in bucket.items()
            ]
            rounded = [(t, p) for t, p in rounded if p > 0.0]
            new_level.entries[context] = _canonical_entries(rounded)
        levels[n] = new_level
    return NgramDictionary(
        source_name=dictionary.source_name,
        levels=levels,
        vocab_hash=dictionary.vocab_hash,
        quantized=True,
    )


def estimate_storage(n_max: int, contexts_per_level: int, top_k: int, bytes_per_prob: int) -> StorageEstimate:
    """Probability-storage cost of a dictionary: (n_max-1) levels x k x K x width."""
    if min(n_max, contexts_per_level, top_k, bytes_per_prob) < 1:
        raise ValueError("all storage-estimate inputs must be >= 1")
    per_level = contexts_per_level * top_k * bytes_per_prob
    breakdown = [(n, per_level) for n in range(2, n_max + 1)]
    return StorageEstimate(bytes=sum(b for _, b in breakdown), breakdown=breakdown)


# ---------------------------------------------------------------------------
# Binary serialization
#
# Little-endian layout:
#   magic "LLMDICT1" | u8 id width (2 or 4) | u8 prob width (2, 4, or 8)
#   | u8 n_max | u64 vocab hash
#   then for each level n = 2..n_max:
#     u32 key count, then records sorted by context:
#       [n-1 context ids] [u16 entry count] [entries: id, prob]
# ---------------------------------------------------------------------------

_ID_FMT = {2: "H", 4: "I"}
_PROB_FMT = {2: "e", 4: "f", 8: "d"}


def _max_token_id(dictionary: NgramDictionary) -> int:
    top = 0
    for level in dictionary.levels.values():
        for context, bucket in level.entries.items():
            if context:
                top = max(top, max(context))
            if bucket:
                top = max(top, max(bucket))
    return top


def dictionary_to_bytes(dictionary: NgramDictionary) -> bytes:
    if dictionary.quantized:
        prob_width = 2
        id_width = 2 if _max_token_id(dictionary) <= 0xFFFF else 4
    else:
        prob_width = 8
        id_width = 4
    n_max = dictionary.n_max
    if sorted(dictionary.levels) != list(range(2, n_max + 1)):
        raise ValueError("dictionary levels must be contiguous from 2 to n_max")

    out = [MAGIC, struct.pack("<BBBQ", id_width, prob_width, n_max, dictionary.vocab_hash)]
    id_fmt = _ID_FMT[id_width]
    prob_fmt = _PROB_FMT[prob_width]
    for n in range(2, n_max + 1):
        level = dictionary.levels[n]
        out.append(struct.pack("<I", len(level.entries)))
        record_head = struct.Struct("<" + id_fmt * (n - 1) + "H")
        entry_fmt = struct.Struct("<" + id_fmt + prob_fmt)
        for context in sorted(level.entries):
            bucket = level.entries[context]
            if len(bucket) > _MAX_ENTRIES_PER_KEY:
                raise ValueError(
                    f"{len(bucket)} entries for context {context} exceed the u16 format limit"
                )
            out.append(record_head.pack(*context, len(bucket)))
            for tok, prob in bucket.items():
                out.append(entry_fmt.pack(tok, prob))
    return b"".join(out)


def save_dictionary(dictionary: NgramDictionary, path) -> None:
    with open(path, "wb") as f:
        f.write(dictionary_to_bytes(dictionary))


def dictionary_from_bytes(data: bytes, source_name: str = "") -> NgramDictionary:
    view = memoryview(data)
    offset = 0

    def need(count: int, what: str):
        nonlocal offset
        if offset + count > len(view):
            raise DictionaryFormatError(f"truncated {what}", offset)
        chunk = view[offset : offset + count]
        offset += count
        return chunk

    magic = bytes(need(8, "magic"))
    if magic != MAGIC:
        raise DictionaryFormatError(f"bad magic {magic!r}", 0)
    id_width, prob_width, n_max = struct.unpack("<BBB", need(3, "header"))
    if id_width not in _ID_FMT:
        raise DictionaryFormatError(f"unsupported id width {id_width}", offset - 3)
    if prob_width not in _PROB_FMT:
        raise DictionaryFormatError(f"unsupported prob width {prob_width}", offset - 2)
    if n_max < 2:
        raise DictionaryFormatError(f"bad n_max {n_max}", offset - 1)
    (vocab_hash,) = struct.unpack("<Q", need(8, "vocab hash"))

    levels = {}
    for n in range(2, n_max + 1):
        (key_count,) = struct.unpack("<I", need(4, f"level-{n} key count"))
        record_head = struct.Struct("<" + _ID_FMT[id_width] * (n - 1) + "H")
        entry_struct = struct.Struct("<" + _ID_FMT[id_width] + _PROB_FMT[prob_width])
        level = DictLevel(n=n)
        for _ in range(key_count):
            head = record_head.unpack(bytes(need(record_head.size, f"level-{n} record")))
            context, entry_count = tuple(head[:-1]), head[-1]
            blob = bytes(need(entry_struct.size * entry_count, f"level-{n} entries"))
            bucket = {}
            for tok, prob in entry_struct.iter_unpack(blob):
                bucket[tok] = float(prob)
            level.entries[context] = bucket
        levels[n] = level
    if offset != len(view):
        raise DictionaryFormatError("trailing bytes after last level", offset)
    return NgramDictionary(
        source_name=source_name,
        levels=levels,
        vocab_hash=vocab_hash,
        quantized=prob_width == 2,
    )


def load_dictionary(path) -> NgramDictionary:
    import os

    with open(path, "rb") as f:
        data = f.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return dictionary_from_bytes(data, source_name=stem)


def inspect_dictionary(path) -> dict:
    """Header fields and per-level stats for a serialized dictionary."""
    import os

    d = load_dictionary(path)
    if d.quantized:
        id_width = 2 if _max_token_id(d) <= 0xFFFF else 4
        prob_width = 2
    else:
        id_width, prob_width = 4, 8
    levels = []
    for n in sorted(d.levels):
        level = d.levels[n]
        entries = level.num_entries()
        record_bytes = (
            len(level.entries) * ((n - 1) * id_width + 2)
            + entries * (id_width + prob_width)
        )
        levels.append(
            {
                "n": n,
                "keys": len(level.entries),
                "entries": entries,
                "bytes": record_bytes + 4,
            }
        )
    return {
        "source": d.source_name,
        "quantized": d.quantized,
        "id_width": id_width,
        "prob_width": prob_width,
        "n_max": d.n_max,
        "vocab_hash": f"{d.vocab_hash:016x}",
        "file_bytes": os.path.getsize(path),
        "levels": levels,
    }
