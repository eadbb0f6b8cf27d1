"""Line-delimited JSON provider server.

One JSON object per line, responses in request order; a malformed request
produces an {"error": ...} line and the server keeps running. Serves over
the process stdio by default, or accepts TCP connections with --port
(one request pipeline per connection, connections handled concurrently).
"""

import argparse
import json
import socket
import sys
import threading

import numpy as np

from .backends import load_vocab, make_backend


class ProviderServer:
    def __init__(self, backend, tokens, vocab_sha, top_k_cap=None, name=None):
        self.backend = backend
        self.tokens = tokens
        self.vocab_sha = vocab_sha
        self.top_k_cap = min(top_k_cap or len(tokens), len(tokens))
        self.name = name or backend.name
        self.id_of = {tok: i for i, tok in enumerate(tokens)}

    def _context_ids(self, surface_tokens):
        try:
            return [self.id_of[t] for t in surface_tokens]
        except KeyError as exc:
            raise ValueError(f"unknown token {exc} in context") from exc

    def handle(self, request: dict) -> dict:
        op = request.get("op")
        if op == "hello":
            response = {"name": self.name, "vocab_sha": self.vocab_sha}
            if getattr(self.backend, "diagnostics", None):
                response["diagnostics"] = self.backend.diagnostics
            return response
        if op == "next_token":
            context = self._context_ids(request.get("context", []))
            top_k = int(request.get("top_k", 1))
            if top_k < 1:
                raise ValueError("top_k must be >= 1")
            top_k = min(top_k, self.top_k_cap)
            probs = self.backend.next_token_probs(context)
            # stable sort keeps ascending token id among equal probabilities
            order = np.argsort(-probs, kind="stable")
            order = [int(i) for i in order if probs[i] > 0.0][:top_k]
            return {
                "tokens": [self.tokens[i] for i in order],
                "probs": [float(probs[i]) for i in order],
            }
        if op == "generate":
            prompt = self._context_ids(request.get("prompt", []))
            max_len = int(request.get("max_len", 0))
            temperature = float(request.get("temperature", 1.0))
            if temperature <= 0:
                raise ValueError("temperature must be > 0")
            rng = np.random.default_rng(int(request.get("seed", 0)))
            out = list(prompt)
            while len(out) < max_len:
                probs = self.backend.next_token_probs(out)
                logp = np.log(np.clip(probs, 1e-300, None)) / temperature
                logp -= logp.max()
                w = np.exp(logp)
                w /= w.sum()
                out.append(int(rng.choice(len(self.tokens), p=w)))
            return {"tokens": [self.tokens[i] for i in out]}
        raise ValueError(f"unknown op {op!r}")

    def serve_stream(self, reader, writer):
        for line in reader:
            line = line.strip()
            if not line:
                continue
            try:
                response = self.handle(json.loads(line))
            except Exception as exc:
                response = {"error": str(exc)}
            writer.write(json.dumps(response) + "\n")
            writer.flush()

    def serve_stdio(self):
        self.serve_stream(sys.stdin, sys.stdout)

    def serve_tcp(self, host, port):
        server = socket.create_server((host, port))
        bound = server.getsockname()[1]
        print(f"listening on {host}:{bound}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            thread = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            thread.start()

    def _serve_connection(self, conn):
        with conn:
            reader = conn.makefile("r", encoding="utf-8")
            writer = conn.makefile("w", encoding="utf-8")
            try:
                self.serve_stream(reader, writer)
            except (BrokenPipeError, ConnectionResetError):
                pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="provider-server", description=__doc__)
    parser.add_argument("--vocab", required=True, help="shared vocabulary file")
    parser.add_argument("--backend", choices=["toy", "transformers"], default="toy")
    parser.add_argument("--model-id", help="backend model identifier (transformers)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0, help="toy backend parameter seed")
    parser.add_argument("--top-k-cap", type=int, default=0, help="maximum servable K (0 = vocabulary size)")
    parser.add_argument("--name", help="override the advertised provider name")
    parser.add_argument("--port", type=int, default=0, help="serve TCP on this port instead of stdio")
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    tokens, vocab_sha = load_vocab(args.vocab)
    backend = make_backend(
        args.backend, tokens, model_id=args.model_id, device=args.device, seed=args.seed
    )
    server = ProviderServer(
        backend, tokens, vocab_sha, top_k_cap=args.top_k_cap or None, name=args.name
    )
    if args.port:
        server.serve_tcp(args.host, args.port)
    else:
        server.serve_stdio()
    return 0


if __name__ == "__main__":
    sys.exit(main())
