"""Synthetic disjoint-topic corpora for desk-scale experiment tests."""

import numpy as np
import pytest

from llmdet.harness import ExperimentConfig, SourceSpec


def word_set(prefix: str, n: int) -> list:
    return [f"{prefix}{i:02d}" for i in range(n)]


def synth_texts(words, n_texts, seed, min_len=8, max_len=28) -> list:
    """Random texts over one word set, Zipf-weighted for a realistic frequency spread."""
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, len(words) + 1)
    weights /= weights.sum()
    texts = []
    for _ in range(n_texts):
        length = int(rng.integers(min_len, max_len + 1))
        texts.append(" ".join(rng.choice(words, size=length, p=weights)))
    return texts


def make_config(samples_per_source=60, words_per_source=45, seed=7, **overrides) -> ExperimentConfig:
    """Three disjoint synthetic sources plus a disjoint human corpus."""
    sources = []
    for i, name in enumerate(("alpha", "beta", "gamma")):
        texts = synth_texts(word_set(name, words_per_source), 120, seed=100 + i)
        sources.append(SourceSpec(name=name, texts=texts))
    human = SourceSpec(
        name="human",
        texts=synth_texts(word_set("human", words_per_source), samples_per_source, seed=900),
    )
    defaults = dict(
        sources=sources,
        human=human,
        samples_per_source=samples_per_source,
        gen_len=40,
        seed=seed,
        vocab_size=4096,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)
