"""Desk-scale experiment protocol.

Assembles corpora (human texts plus texts generated by each source), splits
them into statistical and validation halves, builds per-source dictionaries
from the statistical halves, trains the classifier on validation-half
features, and evaluates. Also: robustness perturbation, axis sweeps, and a
detection benchmark.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import classifier as clf
from .detection import detect, extract_features
from .dictionary import (
    NgramDictionary,
    build_dictionary,
    contexts_from_ngrams,
    count_top_ngrams,
    dictionary_to_bytes,
)
from .metrics import EvalReport, evaluate
from .providers import ExternalProvider, train_ngram_lm
from .tokenizer import Vocabulary, build_vocabulary, split_text, tokenize

DEFAULT_TOP_K = {2: 2000, 3: 100, 4: 100}


@dataclass
class SourceSpec:
    """One text source: a built-in LM trained on a seed corpus, or an external command."""

    name: str
    corpus: Optional[str] = None  # path to one-document-per-line file
    texts: Optional[list] = None  # in-memory alternative to corpus
    command: Optional[str] = None  # external provider over stdio
    tcp: Optional[str] = None  # external provider at host:port


@dataclass
class ExperimentConfig:
    sources: list
    human: SourceSpec
    prompt_len: int = 5
    samples_per_source: int = 200
    split: float = 0.5
    n_max: int = 4
    max_contexts_per_level: int = 0  # 0 = keep every observed context
    top_k_per_level: dict = field(default_factory=lambda: dict(DEFAULT_TOP_K))
    temperature: float = 1.0
    seed: int = 0
    vocab_size: int = 8192
    lm_order: int = 3
    lm_alpha: float = 0.1
    gen_len: int = 60
    quantize: bool = False
    classifier: clf.TrainConfig = field(default_factory=clf.TrainConfig)

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must be in (0, 1)")
        if self.samples_per_source < 2:
            raise ValueError("samples_per_source must be >= 2")
        if self.prompt_len < 1:
            raise ValueError("prompt_len must be >= 1")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as f:
                doc = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "ExperimentConfig":
        def resolve(spec: dict) -> SourceSpec:
            out = SourceSpec(name=spec["name"])
            if "corpus" in spec:
                out.corpus = os.path.join(base_dir, spec["corpus"])
            out.command = spec.get("command")
            out.tcp = spec.get("tcp")
            return out

        kwargs = dict(doc)
        kwargs["sources"] = [resolve(s) for s in doc["sources"]]
        human = dict(doc["human"])
        human.setdefault("name", "human")
        kwargs["human"] = resolve(human)
        if "top_k_per_level" in kwargs:
            kwargs["top_k_per_level"] = {int(k): int(v) for k, v in kwargs["top_k_per_level"].items()}
        if "classifier" in kwargs:
            kwargs["classifier"] = clf.TrainConfig(**kwargs["classifier"])
        return cls(**kwargs)


@dataclass
class CorpusBundle:
    """Stage-1 output: everything that depends on generation but not on dictionary shape."""

    vocab: Vocabulary
    source_names: list  # human first
    providers: dict  # source name -> provider (none for human)
    statistical: dict  # source name -> list of texts
    validation: dict  # source name -> list of texts


@dataclass
class ExperimentArtifacts:
    vocab: Vocabulary
    dictionaries: list  # human dictionary first, then sources in config order
    classifier: clf.ClassifierModel
    eval_texts: list  # (text, label) rows, label 0 = human
    features: list  # FeatureVector per eval text, classifier training input
    timings: dict = field(default_factory=dict)


@dataclass
class SweepRow:
    value: float
    report: EvalReport
    dictionary_bytes: Optional[int] = None


@dataclass
class BenchResult:
    n_texts: int
    single_wall_s: float
    single_texts_per_s: float
    threaded_wall_s: float
    threaded_texts_per_s: float
    threads: int

    def to_dict(self) -> dict:
        return {
            "n_texts": self.n_texts,
            "single_thread": {
                "wall_time_s": self.single_wall_s,
                "texts_per_second": self.single_texts_per_s,
            },
            "multi_thread": {
                "wall_time_s": self.threaded_wall_s,
                "texts_per_second": self.threaded_texts_per_s,
                "threads": self.threads,
            },
        }


def load_corpus_file(path) -> list:
    """One document per line; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def make_prompts(texts: Sequence[str], prompt_len: int) -> list:
    """First prompt_len surface tokens of each text, joined by single spaces."""
    if prompt_len < 1:
        raise ValueError("prompt_len must be >= 1")
    prompts = []
    for text in texts:
        tokens = split_text(text)
        if tokens:
            prompts.append(" ".join(tokens[:prompt_len]))
    return prompts


def perturb_delete(text: str, rate: float, seed: int = 0) -> str:
    """Remove each whitespace-delimited word independently with the given rate.

    At least one word survives a nonempty input. rate 0 returns the text
    byte-identically.
    """
    if not 0 <= rate <= 1:
        raise ValueError("rate must be in [0, 1]")
    if rate == 0:
        return text
    words = text.split()
    if not words:
        return text
    rng = np.random.default_rng(seed)
    keep = rng.random(len(words)) >= rate
    if not keep.any():
        keep[int(rng.integers(len(words)))] = True
    return " ".join(w for w, kept in zip(words, keep) if kept)


def _mix_seed(*parts: int) -> int:
    h = 0xCBF29CE484222325
    for part in parts:
        for byte in int(part).to_bytes(8, "little", signed=True):
            h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _source_texts(spec: SourceSpec) -> Optional[list]:
    if spec.texts is not None:
        return list(spec.texts)
    if spec.corpus is not None:
        return load_corpus_file(spec.corpus)
    return None


def _split(texts: list, fraction: float, rng) -> tuple:
    order = rng.permutation(len(texts))
    shuffled = [texts[i] for i in order]
    n_stat = int(round(len(texts) * fraction))
    n_stat = min(max(n_stat, 1), len(texts) - 1)
    return shuffled[:n_stat], shuffled[n_stat:]


def assemble_corpus(config: ExperimentConfig, log=None) -> CorpusBundle:
    """Stage 1: vocabulary, providers, generated texts, statistical/validation split."""
    human_texts = _source_texts(config.human)
    if not human_texts:
        raise ValueError("human corpus is empty")
    if len(config.sources) < 2:
        raise ValueError("need at least 2 model sources")

    seed_corpora = {}
    for spec in config.sources:
        seed_corpora[spec.name] = _source_texts(spec)

    vocab_texts = list(human_texts)
    for texts in seed_corpora.values():
        if texts:
            vocab_texts.extend(texts)
    vocab = build_vocabulary(vocab_texts, config.vocab_size)

    rng = np.random.default_rng(config.seed)
    source_names = [config.human.name] + [s.name for s in config.sources]
    providers = {}
    statistical = {}
    validation = {}

    # human texts are used as-is, capped at samples_per_source
    pool = list(human_texts)
    if len(pool) > config.samples_per_source:
        idx = rng.choice(len(pool), size=config.samples_per_source, replace=False)
        pool = [pool[i] for i in idx]
    statistical[config.human.name], validation[config.human.name] = _split(pool, config.split, rng)

    for si, spec in enumerate(config.sources, start=1):
        if spec.command is not None:
            provider = ExternalProvider.spawn(spec.command, vocab)
        elif spec.tcp is not None:
            host, _, port = spec.tcp.partition(":")
            provider = ExternalProvider.connect(host, int(port), vocab)
        else:
            seqs = [tokenize(t, vocab) for t in seed_corpora[spec.name]]
            provider = train_ngram_lm(
                [s for s in seqs if s], config.lm_order, config.lm_alpha, vocab, name=spec.name
            )
        providers[spec.name] = provider

        # prompts come from the source's own seed corpus so the stand-in LM
        # stays in-distribution; external sources fall back to human prompts
        prompt_pool = make_prompts(seed_corpora[spec.name] or human_texts, config.prompt_len)
        if not prompt_pool:
            raise ValueError(f"no prompts available for source {spec.name!r}")
        picks = rng.choice(len(prompt_pool), size=config.samples_per_source, replace=True)
        generated = []
        for ti, pi in enumerate(picks):
            prompt_ids = tokenize(prompt_pool[pi], vocab)
            ids = provider.generate(
                prompt_ids,
                max_len=config.gen_len,
                temperature=config.temperature,
                seed=_mix_seed(config.seed, si, ti),
            )
            generated.append(" ".join(vocab.token(i) for i in ids))
        statistical[spec.name], validation[spec.name] = _split(generated, config.split, rng)
        if log:
            print(f"generated {len(generated)} texts for {spec.name}", file=log)

    return CorpusBundle(
        vocab=vocab,
        source_names=source_names,
        providers=providers,
        statistical=statistical,
        validation=validation,
    )


def _build_source_dictionary(provider, stat_texts, vocab, config) -> NgramDictionary:
    seqs = [tokenize(t, vocab) for t in stat_texts]
    budget = config.max_contexts_per_level or None
    contexts = {}
    for n in range(2, config.n_max + 1):
        counted = count_top_ngrams(seqs, n, budget if budget else len(seqs) * config.gen_len + 1)
        contexts[n] = contexts_from_ngrams(counted)
    top_k = {n: config.top_k_per_level.get(n, 100) for n in range(2, config.n_max + 1)}
    return build_dictionary(provider, contexts, top_k, source_name=provider.name)


def build_artifacts(bundle: CorpusBundle, config: ExperimentConfig) -> ExperimentArtifacts:
    """Stage 2: dictionaries from statistical halves, classifier from validation features."""
    from .dictionary import quantize as quantize_dictionary

    timings = {}
    t0 = time.perf_counter()
    human_name = bundle.source_names[0]
    human_lm = train_ngram_lm(
        [s for s in (tokenize(t, bundle.vocab) for t in bundle.statistical[human_name]) if s],
        config.lm_order,
        config.lm_alpha,
        bundle.vocab,
        name=human_name,
    )
    dictionaries = [
        _build_source_dictionary(human_lm, bundle.statistical[human_name], bundle.vocab, config)
    ]
    for name in bundle.source_names[1:]:
        dictionaries.append(
            _build_source_dictionary(
                bundle.providers[name], bundle.statistical[name], bundle.vocab, config
            )
        )
    if config.quantize:
        dictionaries = [quantize_dictionary(d) for d in dictionaries]
    timings["dictionary_build_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    eval_texts = []
    features = []
    for label, name in enumerate(bundle.source_names):
        for text in bundle.validation[name]:
            ids = tokenize(text, bundle.vocab)
            if not ids:
                continue
            eval_texts.append((text, label))
            features.append(extract_features(ids, dictionaries))
    timings["feature_extraction_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    data = [clf.LabeledFeature(f.ppl, label) for f, (_, label) in zip(features, eval_texts)]
    model = clf.train(data, config.classifier, bundle.source_names)
    timings["classifier_train_s"] = time.perf_counter() - t0

    return ExperimentArtifacts(
        vocab=bundle.vocab,
        dictionaries=dictionaries,
        classifier=model,
        eval_texts=eval_texts,
        features=features,
        timings=timings,
    )


def build_experiment(config: ExperimentConfig, log=None) -> ExperimentArtifacts:
    """Full deterministic pipeline: assemble_corpus + build_artifacts."""
    bundle = assemble_corpus(config, log=log)
    artifacts = build_artifacts(bundle, config)
    artifacts.timings["source_names"] = bundle.source_names
    return artifacts


def evaluate_texts(
    artifacts: ExperimentArtifacts,
    texts: Sequence[str],
    labels: Sequence[int],
) -> EvalReport:
    """Run the full detect pipeline over texts and score it, timing the run."""
    t0 = time.perf_counter()
    results = [
        detect(text, artifacts.vocab, artifacts.dictionaries, artifacts.classifier)
        for text in texts
    ]
    wall = time.perf_counter() - t0
    return evaluate(results, labels, artifacts.classifier.source_names, wall_time_s=wall)


def evaluate_experiment(artifacts: ExperimentArtifacts) -> EvalReport:
    texts = [t for t, _ in artifacts.eval_texts]
    labels = [l for _, l in artifacts.eval_texts]
    return evaluate_texts(artifacts, texts, labels)


SWEEP_AXES = ("n_max", "K", "temperature", "delete_rate")


def sweep(config: ExperimentConfig, axis: str, values: Sequence[float], log=None) -> list:
    """One EvalReport per value, rebuilding only the stages the axis touches."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ValueError("no sweep values given")
    rows = []
    if axis == "temperature":
        for v in values:
            artifacts = build_experiment(replace(config, temperature=float(v)), log=log)
            rows.append(SweepRow(value=float(v), report=evaluate_experiment(artifacts)))
        return rows

    bundle = assemble_corpus(config, log=log)
    if axis == "delete_rate":
        artifacts = build_artifacts(bundle, config)
        texts = [t for t, _ in artifacts.eval_texts]
        labels = [l for _, l in artifacts.eval_texts]
        for v in values:
            perturbed = [
                perturb_delete(t, float(v), seed=_mix_seed(config.seed, 97, i))
                for i, t in enumerate(texts)
            ]
            rows.append(SweepRow(value=float(v), report=evaluate_texts(artifacts, perturbed, labels)))
        return rows

    for v in values:
        if axis == "n_max":
            cfg = replace(config, n_max=int(v))
        else:  # uniform top-K override across levels
            cfg = replace(
                config, top_k_per_level={n: int(v) for n in range(2, config.n_max + 1)}
            )
        artifacts = build_artifacts(bundle, cfg)
        nbytes = sum(len(dictionary_to_bytes(d)) for d in artifacts.dictionaries)
        rows.append(
            SweepRow(value=float(v), report=evaluate_experiment(artifacts), dictionary_bytes=nbytes)
        )
    return rows


def bench_detect(
    texts: Sequence[str],
    vocab: Vocabulary,
    dictionaries: Sequence[NgramDictionary],
    model: clf.ClassifierModel,
    threads: Optional[int] = None,
) -> BenchResult:
    """Time the detect pipeline single-threaded and with a thread pool."""
    texts = list(texts)

    t0 = time.perf_counter()
    for text in texts:
        detect(text, vocab, dictionaries, model)
    single = time.perf_counter() - t0

    workers = threads or os.cpu_count() or 1
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda t: detect(t, vocab, dictionaries, model), texts))
    threaded = time.perf_counter() - t0

    n = len(texts)
    return BenchResult(
        n_texts=n,
        single_wall_s=single,
        single_texts_per_s=n / single if single > 0 else float("inf"),
        threaded_wall_s=threaded,
        threaded_texts_per_s=n / threaded if threaded > 0 else float("inf"),
        threads=workers,
    )
