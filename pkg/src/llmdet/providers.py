"""Sources of next-token distributions.

Two implementations of the same provider surface: a built-in add-alpha
smoothed n-gram statistical LM (the desk-scale stand-in for a large model,
and the generator behind the "human" dictionary), and a client speaking a
line-delimited JSON protocol to an external provider process or socket.

Every provider exposes:
    name                    identifying string
    vocab_hash              FNV-1a binding to the shared vocabulary
    next_token_distribution(context, top_k) -> [ProbEntry...]
    generate(prompt, max_len, temperature, seed) -> token ids
"""

import hashlib
import json
import select
import shlex
import socket
import subprocess
from typing import Optional, Sequence

import numpy as np

from .dictionary import ProbEntry
from .tokenizer import Vocabulary

# Begin-of-sequence sentinel used inside the LM's count tables; never a
# valid token id and never part of a dictionary key.
BOS = -1


class ProviderProtocolError(RuntimeError):
    """Wire-protocol violation or timeout; carries the raw payload."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


def _temperature_probs(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Reweight p_i -> p_i^(1/T) / sum_j p_j^(1/T), in log space for stability."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if temperature == 1.0:
        return probs
    logp = np.log(probs) / temperature
    logp -= logp.max()
    w = np.exp(logp)
    return w / w.sum()


class NgramLM:
    """Add-alpha smoothed n-gram LM over a shared vocabulary.

    Count tables are kept for every context length 0..order-1 so the model
    can answer dictionary queries at any level (a 4-gram dictionary needs
    length-1, -2 and -3 contexts). Sequence starts are padded with a BOS
    sentinel when counting and generating; scoring of a finished text uses
    length-matched contexts without BOS.
    """

    def __init__(self, order: int, alpha: float, vocab: Vocabulary, name: str = "ngram-lm"):
        if order < 2:
            raise ValueError("order must be >= 2")
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.order = order
        self.alpha = alpha
        self.vocab = vocab
        self.name = name
        self.vocab_hash = vocab.fnv1a()
        self.eos_id: Optional[int] = None
        # context length -> {context tuple -> {token id -> count}}
        self._counts: dict = {length: {} for length in range(order)}
        self._totals: dict = {length: {} for length in range(order)}

    def fit(self, corpus: Sequence[Sequence[int]]) -> "NgramLM":
        trained = False
        for seq in corpus:
            seq = list(seq)
            for i, tok in enumerate(seq):
                trained = True
                for length in range(self.order):
                    if i >= length:
                        ctx = tuple(seq[i - length : i])
                    else:
                        ctx = (BOS,) * (length - i) + tuple(seq[:i])
                    bucket = self._counts[length].setdefault(ctx, {})
                    bucket[tok] = bucket.get(tok, 0) + 1
                    totals = self._totals[length]
                    totals[ctx] = totals.get(ctx, 0) + 1
        if not trained:
            raise ValueError("empty corpus")
        return self

    def _context_key(self, context: Sequence[int]) -> tuple:
        ctx = tuple(context)
        if len(ctx) >= self.order:
            ctx = ctx[-(self.order - 1) :]
        return ctx

    def full_distribution(self, context: Sequence[int]) -> np.ndarray:
        """The smoothed conditional distribution over the whole vocabulary."""
        ctx = self._context_key(context)
        size = len(self.vocab)
        vec = np.full(size, self.alpha, dtype=np.float64)
        counts = self._counts[len(ctx)].get(ctx)
        total = self._totals[len(ctx)].get(ctx, 0)
        if counts:
            for tok, c in counts.items():
                vec[tok] += c
        return vec / (total + self.alpha * size)

    def prob(self, context: Sequence[int], token_id: int) -> float:
        return float(self.full_distribution(context)[token_id])

    def next_token_distribution(self, context: Sequence[int], top_k: int) -> list:
        """Top-k tokens by conditional probability; raw values, not renormalized."""
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        vec = self.full_distribution(context)
        # stable sort on -p keeps ascending token id within ties
        order = np.argsort(-vec, kind="stable")[:top_k]
        return [ProbEntry(int(t), float(vec[t])) for t in order]

    def generate(
        self,
        prompt: Sequence[int],
        max_len: int,
        temperature: float = 1.0,
        seed: int = 0,
    ) -> list:
        """Ancestral sampling from the BOS-padded context, capped at max_len tokens."""
        rng = np.random.default_rng(seed)
        out = list(prompt)
        ids = np.arange(len(self.vocab))
        while len(out) < max_len:
            pad = self.order - 1 - len(out)
            if pad > 0:
                ctx = (BOS,) * pad + tuple(out)
            else:
                ctx = tuple(out[-(self.order - 1) :])
            probs = _temperature_probs(self.full_distribution(ctx), temperature)
            tok = int(rng.choice(ids, p=probs))
            if self.eos_id is not None and tok == self.eos_id:
                break
            out.append(tok)
        return out

    def avg_nll(self, ids: Sequence[int]) -> float:
        """Exact average negative log-likelihood of a token sequence.

        Each position i >= 1 is scored against its longest available context
        (up to order-1 tokens, length-matched table, no BOS padding), the
        same conditioning the dictionary lookup path uses.
        """
        ids = list(ids)
        if not ids:
            raise ValueError("empty text")
        total = 0.0
        scored = 0
        for i in range(1, len(ids)):
            ctx = ids[max(0, i - (self.order - 1)) : i]
            total += -np.log(self.prob(ctx, ids[i]))
            scored += 1
        return total / scored if scored else 0.0


def train_ngram_lm(
    corpus: Sequence[Sequence[int]],
    order: int,
    alpha: float,
    vocab: Vocabulary,
    name: str = "ngram-lm",
) -> NgramLM:
    """Count-and-smooth training over tokenized texts."""
    return NgramLM(order=order, alpha=alpha, vocab=vocab, name=name).fit(corpus)


def vocab_sha256(vocab: Vocabulary) -> str:
    return hashlib.sha256(vocab.to_bytes()).hexdigest()


class ExternalProvider:
    """Client for the line-delimited JSON provider protocol.

    One JSON object per line, UTF-8, responses in request order:
      {"op":"hello"}                              -> {"name":..., "vocab_sha":...}
      {"op":"next_token","context":[tok...],"top_k":K}
                                                  -> {"tokens":[...],"probs":[...]}
      {"op":"generate","prompt":[tok...],"max_len":N,"temperature":T,"seed":S}
                                                  -> {"tokens":[...]}
    Context and prompt travel as token strings of the shared vocabulary.
    """

    def __init__(self, vocab: Vocabulary, timeout: float = 30.0):
        self.vocab = vocab
        self.vocab_hash = vocab.fnv1a()
        self.timeout = timeout
        self.name = "external"
        self.eos_id: Optional[int] = None
        self._proc = None
        self._sock = None
        self._reader = None
        self._writer = None

    @classmethod
    def spawn(cls, command, vocab: Vocabulary, timeout: float = 30.0) -> "ExternalProvider":
        """Launch the provider as a child process and talk over its stdio."""
        self = cls(vocab, timeout)
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = self._proc.stdout
        self._writer = self._proc.stdin
        self._handshake()
        return self

    @classmethod
    def connect(cls, host: str, port: int, vocab: Vocabulary, timeout: float = 30.0) -> "ExternalProvider":
        self = cls(vocab, timeout)
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
        self._handshake()
        return self

    def _readline(self) -> str:
        if self._proc is not None:
            ready, _, _ = select.select([self._proc.stdout], [], [], self.timeout)
            if not ready:
                raise ProviderProtocolError(f"timeout after {self.timeout}s waiting for provider")
            line = self._proc.stdout.readline()
        else:
            try:
                line = self._reader.readline()
            except socket.timeout as exc:
                raise ProviderProtocolError(f"timeout after {self.timeout}s waiting for provider") from exc
        if not line:
            raise ProviderProtocolError("provider closed the stream")
        return line

    def _call(self, request: dict) -> dict:
        self._writer.write(json.dumps(request) + "\n")
        self._writer.flush()
        line = self._readline()
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderProtocolError(f"provider sent invalid JSON: {exc}", payload=line) from exc
        if not isinstance(response, dict):
            raise ProviderProtocolError("provider response is not an object", payload=line)
        if "error" in response:
            raise ProviderProtocolError(f"provider error: {response['error']}", payload=line)
        return response

    def _handshake(self) -> None:
        response = self._call({"op": "hello"})
        if "name" not in response or "vocab_sha" not in response:
            raise ProviderProtocolError("hello response missing name/vocab_sha", payload=response)
        self.name = str(response["name"])
        expected = vocab_sha256(self.vocab)
        if response["vocab_sha"] != expected:
            raise ProviderProtocolError(
                f"provider vocabulary {response['vocab_sha'][:12]}... does not match "
                f"local vocabulary {expected[:12]}...",
                payload=response,
            )

    def next_token_distribution(self, context: Sequence[int], top_k: int) -> list:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        request = {
            "op": "next_token",
            "context": [self.vocab.token(i) for i in context],
            "top_k": top_k,
        }
        response = self._call(request)
        tokens = response.get("tokens")
        probs = response.get("probs")
        if not isinstance(tokens, list) or not isinstance(probs, list) or len(tokens) != len(probs):
            raise ProviderProtocolError("malformed next_token response", payload=response)
        entries = []
        for tok, p in zip(tokens, probs):
            tok_id = self.vocab.id_of.get(tok)
            if tok_id is None:
                raise ProviderProtocolError(f"provider returned out-of-vocabulary token {tok!r}", payload=response)
            if not 0.0 < p <= 1.0:
                raise ProviderProtocolError(f"provider returned probability {p} outside (0,1]", payload=response)
            entries.append(ProbEntry(tok_id, float(p)))
        entries.sort(key=lambda e: (-e.prob, e.token_id))
        return entries[:top_k]

    def generate(
        self,
        prompt: Sequence[int],
        max_len: int,
        temperature: float = 1.0,
        seed: int = 0,
    ) -> list:
        request = {
            "op": "generate",
            "prompt": [self.vocab.token(i) for i in prompt],
            "max_len": max_len,
            "temperature": temperature,
            "seed": seed,
        }
        response = self._call(request)
        tokens = response.get("tokens")
        if not isinstance(tokens, list):
            raise ProviderProtocolError("malformed generate response", payload=response)
        unk = self.vocab.unk_id
        return [self.vocab.id_of.get(tok, unk) for tok in tokens]

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self) -> "ExternalProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
