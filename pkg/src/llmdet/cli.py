"""Command-line interface.

Machine-readable output (JSON lines, CSV) goes to stdout, diagnostics to
stderr. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import classifier as clf
from . import harness
from .detection import detect, extract_features, rank_from_features
from .dictionary import (
    build_dictionary,
    contexts_from_ngrams,
    count_top_ngrams,
    inspect_dictionary,
    load_dictionary,
    quantize,
    save_dictionary,
)
from .harness import ExperimentConfig, bench_detect, load_corpus_file, make_prompts, perturb_delete
from .metrics import evaluate_rankings
from .providers import ExternalProvider, train_ngram_lm
from .tokenizer import Vocabulary, tokenize

DICT_PATH_ENV = "LLMDET_DICT_PATH"


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _global_options(parser):
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global RNG seed")
    parser.add_argument("--config", default=argparse.SUPPRESS, help="experiment config file (TOML or JSON)")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker thread bound")


def build_parser() -> _Parser:
    parser = _Parser(prog="llmdet", description=__doc__)
    _global_options(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-dict", help="build a probability dictionary for one source")
    _global_options(p)
    p.add_argument("--vocab", required=True, help="shared vocabulary file")
    p.add_argument(
        "--make-vocab",
        type=int,
        default=0,
        metavar="SIZE",
        help="first build a vocabulary of SIZE from the corpus files and write it to --vocab",
    )
    p.add_argument("--corpus", required=True, help="texts for n-gram frequency statistics, one per line")
    p.add_argument("--lm-corpus", help="train the built-in LM provider on this corpus")
    p.add_argument("--provider-cmd", help="external provider command (stdio protocol)")
    p.add_argument("--provider-tcp", help="external provider at host:port")
    p.add_argument("--name", help="source name (default: provider name)")
    p.add_argument("--order", type=int, default=3, help="built-in LM gram order")
    p.add_argument("--alpha", type=float, default=0.1, help="built-in LM smoothing constant")
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--contexts", type=int, default=0, help="context budget per level, 0 = all observed")
    p.add_argument("--top-k", default="2:2000,3:100,4:100", help="K per level, 'N' or 'n:K,n:K'")
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="generate texts from a provider")
    _global_options(p)
    p.add_argument("--vocab", required=True)
    p.add_argument("--lm-corpus")
    p.add_argument("--provider-cmd")
    p.add_argument("--provider-tcp")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--prompts", required=True, help="texts to draw prompts from")
    p.add_argument("--prompt-len", type=int, default=5)
    p.add_argument("--count", type=int, default=0, help="texts to generate, 0 = one per prompt")
    p.add_argument("--max-len", type=int, default=60)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the source classifier from labeled features")
    _global_options(p)
    p.add_argument("--features", required=True, help='JSONL of {"features": [...], "label": int}')
    p.add_argument("--labels", help="label file when the feature lines carry no label")
    p.add_argument("--sources", required=True, help="comma-separated source names, human first")
    p.add_argument("--kind", choices=["softmax_regression", "boosted_stumps"], default="softmax_regression")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="attribute texts to sources, one JSON line per input line")
    _global_options(p)
    p.add_argument("--dicts", required=True, help="comma-separated dictionary files or names")
    p.add_argument("--model", help="classifier file (omit with --features-only)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", default="-", help="text file, one per line; '-' for stdin")
    p.add_argument("--features-only", action="store_true", help="emit features without classifying")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="score detect output against labels")
    _global_options(p)
    p.add_argument("--pred", required=True, help="detect JSONL output")
    p.add_argument("--labels", required=True, help="one label per line (source name or index)")
    p.add_argument("--sources", required=True, help="canonical source order, human first")
    p.add_argument("--csv", help="write the confusion matrix as CSV here")
    p.add_argument("--figures", help="render report figures into this directory")
    p.add_argument("--time-s", type=float, help="wall time to record in the report")

    p = sub.add_parser("perturb", help="randomly delete words from each input line")
    _global_options(p)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="rerun the experiment over one axis")
    _global_options(p)
    p.add_argument("--axis", required=True, choices=list(harness.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="CSV table destination (default stdout)")
    p.add_argument("--report-dir", help="write one JSON report per value here")
    p.add_argument("--figures", help="render the sweep curve into this directory")
    p.add_argument("--artifacts", help="save vocab/dictionaries/model of the last run here")

    p = sub.add_parser("bench", help="time the detect pipeline")
    _global_options(p)
    p.add_argument("--dicts", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--repeat-to", type=int, default=0, help="replicate inputs up to this count")

    p = sub.add_parser("dict-inspect", help="print header and per-level stats of a dictionary")
    _global_options(p)
    p.add_argument("path")

    return parser


def _resolve_dict_path(name: str) -> str:
    if os.path.exists(name):
        return name
    if os.sep not in name:
        root = os.environ.get(DICT_PATH_ENV)
        if root:
            for candidate in (os.path.join(root, name), os.path.join(root, name + ".dict")):
                if os.path.exists(candidate):
                    return candidate
    return name


def _load_dicts(spec: str) -> list:
    return [load_dictionary(_resolve_dict_path(p)) for p in spec.split(",") if p]


def _read_lines(path: str) -> list:
    if path == "-":
        data = sys.stdin.read()
    else:
        with open(path, "r", encoding="utf-8") as f:
            data = f.read()
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _parse_top_k(spec: str, n_max: int) -> dict:
    if ":" not in spec:
        return {n: int(spec) for n in range(2, n_max + 1)}
    out = {}
    for piece in spec.split(","):
        n, _, k = piece.partition(":")
        out[int(n)] = int(k)
    return {n: out.get(n, 100) for n in range(2, n_max + 1)}


def _make_provider(args, vocab: Vocabulary):
    chosen = [x for x in (args.lm_corpus, args.provider_cmd, args.provider_tcp) if x]
    if len(chosen) != 1:
        raise SystemExit2("exactly one of --lm-corpus/--provider-cmd/--provider-tcp is required")
    if args.lm_corpus:
        texts = load_corpus_file(args.lm_corpus)
        seqs = [s for s in (tokenize(t, vocab) for t in texts) if s]
        name = getattr(args, "name", None) or os.path.splitext(os.path.basename(args.lm_corpus))[0]
        return train_ngram_lm(seqs, args.order, args.alpha, vocab, name=name)
    if args.provider_cmd:
        return ExternalProvider.spawn(args.provider_cmd, vocab)
    host, _, port = args.provider_tcp.partition(":")
    return ExternalProvider.connect(host, int(port), vocab)


class SystemExit2(RuntimeError):
    """Runtime failure that should exit with code 2."""


def _cmd_build_dict(args) -> int:
    if args.make_vocab:
        from .tokenizer import build_vocabulary

        texts = load_corpus_file(args.corpus)
        if args.lm_corpus and args.lm_corpus != args.corpus:
            texts += load_corpus_file(args.lm_corpus)
        build_vocabulary(texts, args.make_vocab).save(args.vocab)
        print(f"wrote vocabulary to {args.vocab}", file=sys.stderr)
    vocab = Vocabulary.load(args.vocab)
    provider = _make_provider(args, vocab)
    texts = load_corpus_file(args.corpus)
    seqs = [s for s in (tokenize(t, vocab) for t in texts) if s]
    budget = args.contexts or max(sum(len(s) for s in seqs), 1)
    contexts = {}
    for n in range(2, args.n_max + 1):
        contexts[n] = contexts_from_ngrams(count_top_ngrams(seqs, n, budget))
    top_k = _parse_top_k(args.top_k, args.n_max)
    d = build_dictionary(provider, contexts, top_k, source_name=getattr(args, "name", None) or provider.name)
    if args.quantize:
        d = quantize(d)
    save_dictionary(d, args.out)
    print(json.dumps(inspect_dictionary(args.out)))
    if isinstance(provider, ExternalProvider):
        provider.close()
    return 0


def _cmd_sample(args, seed: int) -> int:
    vocab = Vocabulary.load(args.vocab)
    provider = _make_provider(args, vocab)
    prompts = make_prompts(load_corpus_file(args.prompts), args.prompt_len)
    if not prompts:
        raise SystemExit2("no usable prompts in the prompt file")
    count = args.count or len(prompts)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(prompts), size=count, replace=True)
    out = _open_out(args.out)
    for i, pi in enumerate(picks):
        ids = provider.generate(
            tokenize(prompts[pi], vocab),
            max_len=args.max_len,
            temperature=args.temperature,
            seed=harness._mix_seed(seed, i),
        )
        print(" ".join(vocab.token(t) for t in ids), file=out)
    if out is not sys.stdout:
        out.close()
    if isinstance(provider, ExternalProvider):
        provider.close()
    return 0


def _cmd_train(args, seed: int) -> int:
    sources = args.sources.split(",")
    index_of = {name: i for i, name in enumerate(sources)}
    labels = None
    if args.labels:
        labels = [
            int(s) if s.lstrip("-").isdigit() else index_of[s]
            for s in (line.strip() for line in _read_lines(args.labels))
            if s
        ]
    data = []
    for i, line in enumerate(_read_lines(args.features)):
        if not line.strip():
            continue
        row = json.loads(line)
        label = int(row["label"]) if labels is None else labels[len(data)]
        data.append(clf.LabeledFeature(row["features"], label))
    if labels is not None and len(labels) != len(data):
        raise SystemExit2(f"{len(data)} feature rows vs {len(labels)} labels")
    config = clf.TrainConfig(
        kind=args.kind,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        l2=args.l2,
        seed=seed,
    )
    model = clf.train(data, config, sources)
    clf.save_model(model, args.out)
    correct = sum(
        1 for f, y in data if int(np.argmax(model.predict_proba(list(f)))) == y
    )
    print(
        json.dumps(
            {
                "out": args.out,
                "kind": model.kind,
                "train_accuracy": correct / len(data),
                "final_loss": model.train_loss[-1] if model.train_loss else None,
            }
        )
    )
    return 0


def _detect_line(text, vocab, dicts, model, features_only):
    ids = tokenize(text, vocab)
    if not ids:
        raise ValueError("empty text")
    features = extract_features(ids, dicts)
    row = {"features": features.ppl, "scored_fraction": features.scored_fraction}
    if not features_only:
        result = rank_from_features(features, len(ids), model)
        row["ranked"] = [{"source": s, "prob": p} for s, p in result.ranked]
    return row


def _cmd_detect(args, threads: int) -> int:
    vocab = Vocabulary.load(args.vocab)
    dicts = _load_dicts(args.dicts)
    expected = vocab.fnv1a()
    for d in dicts:
        if d.vocab_hash != expected:
            raise SystemExit2(f"dictionary {d.source_name!r} does not match vocabulary {args.vocab}")
    model = None
    if not args.features_only:
        if not args.model:
            raise SystemExit2("--model is required unless --features-only is given")
        model = clf.load_model(args.model)
        if len(model.source_names) != len(dicts):
            raise SystemExit2(
                f"model has {len(model.source_names)} sources but {len(dicts)} dictionaries given"
            )
    lines = _read_lines(args.input)

    def run(pair):
        i, text = pair
        try:
            row = _detect_line(text, vocab, dicts, model, args.features_only)
        except ValueError as exc:
            return {"text_id": i, "error": str(exc)}
        return {"text_id": i, **row}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, enumerate(lines)))
    else:
        rows = [run(p) for p in enumerate(lines)]
    out = _open_out(args.out)
    for row in rows:
        print(json.dumps(row), file=out)
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_eval(args) -> int:
    sources = args.sources.split(",")
    index_of = {name: i for i, name in enumerate(sources)}
    ranked = []
    for i, line in enumerate(_read_lines(args.pred)):
        if not line.strip():
            continue
        row = json.loads(line)
        if "error" in row:
            raise SystemExit2(f"prediction line {i} carries an error: {row['error']}")
        try:
            ranked.append([index_of[e["source"]] for e in row["ranked"]])
        except KeyError as exc:
            raise SystemExit2(f"prediction line {i} names unknown source {exc}")
    labels = []
    for line in _read_lines(args.labels):
        line = line.strip()
        if not line:
            continue
        labels.append(int(line) if line.lstrip("-").isdigit() else index_of[line])
    if len(ranked) != len(labels):
        raise SystemExit2(f"{len(ranked)} predictions vs {len(labels)} labels")
    report = evaluate_rankings(ranked, labels, sources, wall_time_s=args.time_s)
    print(json.dumps(report.to_dict(), indent=2))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["true\\pred"] + sources)
            for name, row in zip(sources, report.confusion.tolist()):
                writer.writerow([name] + row)
    if args.figures:
        from .figures import save_confusion_figure

        os.makedirs(args.figures, exist_ok=True)
        path = save_confusion_figure(report, os.path.join(args.figures, "confusion_matrix.png"))
        print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_perturb(args, seed: int) -> int:
    lines = _read_lines(args.input)
    out = _open_out(args.out)
    for i, line in enumerate(lines):
        print(perturb_delete(line, args.rate, seed=harness._mix_seed(seed, i)), file=out)
    if out is not sys.stdout:
        out.close()
    return 0


def _cmd_sweep(args, seed) -> int:
    if not getattr(args, "config", None):
        raise SystemExit2("sweep requires --config")
    config = ExperimentConfig.from_file(args.config)
    if seed is not None:
        config = harness.replace(config, seed=seed)
    values = [float(v) for v in args.values.split(",")]
    rows = harness.sweep(config, args.axis, values, log=sys.stderr)

    out = _open_out(args.out)
    writer = csv.writer(out)
    writer.writerow(["value", "f1_macro", "r_at_1", "r_at_2", "r_at_3", "wall_time_s", "dictionary_bytes"])
    for row in rows:
        writer.writerow(
            [
                row.value,
                f"{row.report.f1_macro:.6f}",
                f"{row.report.r_at[1]:.6f}",
                f"{row.report.r_at[2]:.6f}",
                f"{row.report.r_at[3]:.6f}",
                f"{row.report.wall_time_s:.3f}" if row.report.wall_time_s else "",
                row.dictionary_bytes if row.dictionary_bytes is not None else "",
            ]
        )
    if out is not sys.stdout:
        out.close()

    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        for row in rows:
            name = f"{args.axis}_{row.value:g}.json"
            with open(os.path.join(args.report_dir, name), "w", encoding="utf-8") as f:
                json.dump(row.report.to_dict(), f, indent=2)
    if args.figures:
        from .figures import save_sweep_figure

        os.makedirs(args.figures, exist_ok=True)
        path = save_sweep_figure(args.axis, rows, os.path.join(args.figures, f"sweep_{args.axis}.png"))
        print(f"wrote {path}", file=sys.stderr)
    if args.artifacts:
        artifacts = harness.build_experiment(config)
        os.makedirs(args.artifacts, exist_ok=True)
        artifacts.vocab.save(os.path.join(args.artifacts, "vocab.txt"))
        for d in artifacts.dictionaries:
            save_dictionary(d, os.path.join(args.artifacts, f"{d.source_name}.dict"))
        clf.save_model(artifacts.classifier, os.path.join(args.artifacts, "model.json"))
        with open(os.path.join(args.artifacts, "eval_texts.txt"), "w", encoding="utf-8") as f:
            for text, _ in artifacts.eval_texts:
                f.write(text + "\n")
        with open(os.path.join(args.artifacts, "eval_labels.txt"), "w", encoding="utf-8") as f:
            for _, label in artifacts.eval_texts:
                f.write(f"{label}\n")
        print(f"wrote artifacts to {args.artifacts}", file=sys.stderr)
    return 0


def _cmd_bench(args, threads) -> int:
    vocab = Vocabulary.load(args.vocab)
    dicts = _load_dicts(args.dicts)
    model = clf.load_model(args.model)
    texts = [t for t in _read_lines(args.input) if t.strip()]
    if not texts:
        raise SystemExit2("no texts to benchmark")
    if args.repeat_to and len(texts) < args.repeat_to:
        reps = -(-args.repeat_to // len(texts))
        texts = (texts * reps)[: args.repeat_to]
    result = bench_detect(texts, vocab, dicts, model, threads=threads if threads > 1 else None)
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def _cmd_dict_inspect(args) -> int:
    print(json.dumps(inspect_dictionary(args.path), indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    seed = getattr(args, "seed", None)
    threads = getattr(args, "threads", None) or 1
    try:
        if args.command == "build-dict":
            return _cmd_build_dict(args)
        if args.command == "sample":
            return _cmd_sample(args, seed or 0)
        if args.command == "train":
            return _cmd_train(args, seed or 0)
        if args.command == "detect":
            return _cmd_detect(args, threads)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "perturb":
            return _cmd_perturb(args, seed or 0)
        if args.command == "sweep":
            return _cmd_sweep(args, seed)
        if args.command == "bench":
            return _cmd_bench(args, threads)
        if args.command == "dict-inspect":
            return _cmd_dict_inspect(args)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit2 as exc:
        print(f"llmdet: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError, json.JSONDecodeError) as exc:
        print(f"llmdet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
