"""Minimal provider-protocol server used by the client tests.

Serves a deterministic distribution derived from the context, over stdio or
a TCP port. Fault-injection flags let tests exercise protocol errors.
"""

import argparse
import hashlib
import json
import socket
import sys
import time

import numpy as np


def load_vocab(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens = data.decode("utf-8").split("\n")
    if tokens and tokens[-1] == "":
        tokens.pop()
    return tokens, hashlib.sha256(data).hexdigest()


def context_distribution(tokens, context, seed):
    digest = hashlib.sha256((" ".join(context) + f"|{seed}").encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    logits = rng.normal(size=len(tokens))
    w = np.exp(logits - logits.max())
    return w / w.sum()


def handle(request, tokens, vocab_sha, args):
    op = request.get("op")
    if op == "hello":
        sha = "0" * 64 if args.bad_vocab_sha else vocab_sha
        return {"name": args.name, "vocab_sha": sha}
    if op == "next_token":
        if args.sleep_on_next:
            time.sleep(args.sleep_on_next)
        probs = context_distribution(tokens, request["context"], args.seed)
        order = np.argsort(-probs, kind="stable")[: int(request["top_k"])]
        return {
            "tokens": [tokens[i] for i in order],
            "probs": [float(probs[i]) for i in order],
        }
    if op == "generate":
        rng = np.random.default_rng(int(request["seed"]))
        out = list(request["prompt"])
        while len(out) < int(request["max_len"]):
            probs = context_distribution(tokens, out[-2:], args.seed)
            t = 1.0 / max(float(request["temperature"]), 1e-9)
            w = probs ** t
            w /= w.sum()
            out.append(tokens[int(rng.choice(len(tokens), p=w))])
        return {"tokens": out}
    return {"error": f"unknown op {op!r}"}


def serve_stream(reader, writer, tokens, vocab_sha, args):
    for line in reader:
        line = line.strip()
        if not line:
            continue
        if args.garbage:
            writer.write("this is not json\n")
            writer.flush()
            continue
        try:
            request = json.loads(line)
            response = handle(request, tokens, vocab_sha, args)
        except Exception as exc:  # keep serving
            response = {"error": str(exc)}
        writer.write(json.dumps(response) + "\n")
        writer.flush()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--vocab", required=True)
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--name", default="toy")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--bad-vocab-sha", action="store_true")
    parser.add_argument("--garbage", action="store_true")
    parser.add_argument("--sleep-on-next", type=float, default=0.0)
    args = parser.parse_args()
    tokens, vocab_sha = load_vocab(args.vocab)

    if args.port:
        server = socket.create_server(("127.0.0.1", args.port))
        print(f"listening on {server.getsockname()[1]}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8")
                writer = conn.makefile("w", encoding="utf-8")
                serve_stream(reader, writer, tokens, vocab_sha, args)
    else:
        serve_stream(sys.stdin, sys.stdout, tokens, vocab_sha, args)


if __name__ == "__main__":
    main()
