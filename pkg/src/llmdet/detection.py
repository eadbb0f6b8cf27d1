"""Proxy perplexity and result ranking.

Proxy perplexity replaces live model access with dictionary lookups: each
token is scored against the longest context the dictionary matches (backoff
from the top gram order down to 2-gram), unmatched positions are skipped,
and the result is the average negative log probability over scored
positions. One proxy perplexity per source dictionary forms the feature
vector a classifier turns into per-source probabilities, which are smoothed
by text length and softmax-normalized into the final ranking.
"""

import math
from dataclasses import dataclass
from typing import Sequence

from .dictionary import MISS, NgramDictionary
from .tokenizer import Vocabulary, tokenize

# Classifiers may emit exact zeros; smoothing takes a log.
PROB_EPSILON = 1e-12


@dataclass
class FeatureVector:
    """Per-source proxy perplexities (index 0 = human source by convention)."""

    ppl: list
    scored_fraction: list  # diagnostic: fraction of positions each dictionary scored


@dataclass
class DetectionResult:
    ranked: list  # (source name, probability), descending
    features: FeatureVector
    text_len: int


def proxy_perplexity(ids: Sequence[int], dictionary: NgramDictionary) -> tuple:
    """Average -ln(stored probability) over dictionary-matched positions.

    Positions 1..t-1 are scored; each tries the longest context first
    (n_max-1 tokens) and backs off one token at a time. Positions with no
    match at any level contribute nothing. Returns (ppl, scored_fraction);
    ppl is 0.0 when nothing matches.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("empty text")
    max_context = dictionary.n_max - 1
    total = 0.0
    hits = 0
    for i in range(1, len(ids)):
        token = ids[i]
        for width in range(min(max_context, i), 0, -1):
            p = dictionary.lookup(ids[i - width : i], token)
            if p is not MISS:
                total += -math.log(p)
                hits += 1
                break
    positions = len(ids) - 1
    ppl = total / hits if hits else 0.0
    fraction = hits / positions if positions else 0.0
    return ppl, fraction


def extract_features(ids: Sequence[int], dictionaries: Sequence[NgramDictionary]) -> FeatureVector:
    """One proxy perplexity per dictionary, in source order."""
    if not dictionaries:
        raise ValueError("no dictionaries loaded")
    hashes = {d.vocab_hash for d in dictionaries}
    if len(hashes) != 1:
        raise ValueError("dictionaries were built against different vocabularies")
    ppl = []
    fractions = []
    for d in dictionaries:
        p, f = proxy_perplexity(ids, d)
        ppl.append(p)
        fractions.append(f)
    return FeatureVector(ppl=ppl, scored_fraction=fractions)


def smooth(probs: Sequence[float], text_len: int) -> list:
    """Length-dependent log adjustment of classifier probabilities.

    Each probability becomes ln(p_i) + (1/L) * ln(1/(c+1)), where L is the
    token count of the detected text and c+1 the number of sources. The
    added term does not depend on i, so the subsequent softmax recovers the
    normalized input probabilities; it is applied verbatim all the same.
    """
    if text_len < 1:
        raise ValueError("text length must be >= 1")
    shift = math.log(1.0 / len(probs)) / text_len
    return [math.log(max(p, PROB_EPSILON)) + shift for p in probs]


def softmax_rank(smoothed: Sequence[float], source_names: Sequence[str]) -> DetectionResult:
    """Max-shifted softmax over smoothed scores, sorted descending.

    Ties are broken by ascending source index. The returned result carries
    no features; callers fill them in.
    """
    if len(smoothed) != len(source_names):
        raise ValueError("scores and source names differ in length")
    top = max(smoothed)
    weights = [math.exp(s - top) for s in smoothed]
    norm = sum(weights)
    probs = [w / norm for w in weights]
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    ranked = [(source_names[i], probs[i]) for i in order]
    return DetectionResult(ranked=ranked, features=None, text_len=0)


def rank_from_features(
    features: FeatureVector,
    text_len: int,
    classifier,
) -> DetectionResult:
    """classifier -> smooth -> softmax_rank, shared by detect() and the harness."""
    probs = classifier.predict_proba(features.ppl)
    result = softmax_rank(smooth(probs, text_len), classifier.source_names)
    result.features = features
    result.text_len = text_len
    return result


def detect(
    text: str,
    vocab: Vocabulary,
    dictionaries: Sequence[NgramDictionary],
    classifier,
) -> DetectionResult:
    """Full pipeline: tokenize, score against every dictionary, rank sources."""
    ids = tokenize(text, vocab)
    if not ids:
        raise ValueError("empty text")
    expected = vocab.fnv1a()
    for d in dictionaries:
        if d.vocab_hash != expected:
            raise ValueError(
                f"dictionary {d.source_name!r} was built against a different vocabulary"
            )
    features = extract_features(ids, dictionaries)
    return rank_from_features(features, len(ids), classifier)
