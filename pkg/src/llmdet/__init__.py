"""llmdet: attribute a text to its generating source via proxy perplexity.

The pipeline: a shared tokenizer feeds per-source n-gram probability
dictionaries; a text's proxy perplexity against every dictionary forms a
feature vector; a multiclass classifier plus length smoothing and softmax
ranking turn the vector into per-source probabilities.
"""

from .classifier import ClassifierModel, LabeledFeature, TrainConfig, load_model, save_model, train
from .detection import DetectionResult, FeatureVector, detect, extract_features, proxy_perplexity, smooth, softmax_rank
from .dictionary import (
    MISS,
    DictLevel,
    NgramDictionary,
    ProbEntry,
    StorageEstimate,
    build_dictionary,
    count_top_ngrams,
    estimate_storage,
    load_dictionary,
    lookup,
    quantize,
    save_dictionary,
)
from .harness import (
    BenchResult,
    ExperimentConfig,
    SourceSpec,
    bench_detect,
    build_experiment,
    evaluate_experiment,
    make_prompts,
    perturb_delete,
    sweep,
)
from .metrics import EvalReport, efficiency_ratio, evaluate, f1, f1_macro, recall_at_k
from .providers import ExternalProvider, NgramLM, ProviderProtocolError, train_ngram_lm
from .tokenizer import Vocabulary, build_vocabulary, tokenize

__version__ = "0.1.0"
