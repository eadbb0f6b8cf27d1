"""Causal-LM backends behind the provider protocol.

A backend answers one question: given a context of shared-vocabulary token
ids, what is the next-token probability vector over that vocabulary? The
`toy` backend is a seeded random-parameter neural model, self-contained and
deterministic, used for testing and demos. The `transformers` backend wraps
a real causal LM and bridges its tokenizer onto the shared vocabulary by
exact surface match.
"""

import hashlib

import numpy as np


def load_vocab(path):
    """Shared vocabulary file: tokens in id order plus its sha256 hex."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = data.decode("utf-8").split("\n")
    if tokens and tokens[-1] == "":
        tokens.pop()
    return tokens, hashlib.sha256(data).hexdigest()


class ToyCausalBackend:
    """Tiny fixed-weight causal model over the shared vocabulary.

    Embedding mean -> tanh hidden layer -> softmax. Weights are drawn once
    from a seeded generator, so distributions are deterministic across runs
    and platforms.
    """

    def __init__(self, tokens, seed=0, hidden=48):
        self.tokens = tokens
        self.name = f"toy-causal-{seed}"
        rng = np.random.default_rng(seed)
        size = len(tokens)
        dim = 24
        self._embed = rng.normal(scale=0.8, size=(size, dim))
        self._w1 = rng.normal(scale=0.8, size=(dim, hidden))
        self._b1 = rng.normal(scale=0.3, size=hidden)
        self._w2 = rng.normal(scale=0.8, size=(hidden, size))
        self._b2 = rng.normal(scale=0.3, size=size)
        self.diagnostics = {}

    def next_token_probs(self, context_ids):
        if context_ids:
            x = self._embed[np.asarray(context_ids)].mean(axis=0)
        else:
            x = np.zeros(self._embed.shape[1])
        h = np.tanh(x @ self._w1 + self._b1)
        logits = h @ self._w2 + self._b2
        logits -= logits.max()
        w = np.exp(logits)
        return w / w.sum()


class TransformersBackend:
    """Bridge a Hugging Face causal LM onto the shared vocabulary.

    Shared tokens are mapped to backend tokens by exact surface match
    (plain and space-prefixed forms are tried); tokens with no match are
    reported in the hello diagnostics and receive no probability mass.
    Served probabilities are the raw softmax restricted to mapped tokens,
    so they sum to at most 1 and are not renormalized.
    """

    def __init__(self, tokens, model_id, device="cpu"):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self._torch = torch
        self.tokens = tokens
        self.name = model_id
        self.device = device
        self._tokenizer = AutoTokenizer.from_pretrained(model_id)
        self._model = AutoModelForCausalLM.from_pretrained(model_id).to(device).eval()

        backend_vocab = self._tokenizer.get_vocab()
        self._backend_id = np.full(len(tokens), -1, dtype=np.int64)
        unmappable = 0
        for i, tok in enumerate(tokens):
            for surface in (tok, " " + tok, "Ġ" + tok):  # plain, spaced, BPE-spaced
                if surface in backend_vocab:
                    self._backend_id[i] = backend_vocab[surface]
                    break
            else:
                unmappable += 1
        self._mapped = np.nonzero(self._backend_id >= 0)[0]
        self.diagnostics = {"unmappable_tokens": unmappable, "mapped_tokens": int(self._mapped.size)}
        if self._mapped.size == 0:
            raise RuntimeError("no shared-vocabulary token maps onto the backend tokenizer")

    def next_token_probs(self, context_ids):
        torch = self._torch
        backend_ids = [int(self._backend_id[i]) for i in context_ids if self._backend_id[i] >= 0]
        if not backend_ids:
            bos = self._tokenizer.bos_token_id or self._tokenizer.eos_token_id or 0
            backend_ids = [bos]
        with torch.no_grad():
            inputs = torch.tensor([backend_ids], device=self.device)
            logits = self._model(inputs).logits[0, -1]
            full = torch.softmax(logits, dim=-1).cpu().numpy()
        probs = np.zeros(len(self.tokens))
        probs[self._mapped] = full[self._backend_id[self._mapped]]
        return probs


def make_backend(kind, tokens, model_id=None, device="cpu", seed=0):
    if kind == "toy":
        return ToyCausalBackend(tokens, seed=seed)
    if kind == "transformers":
        if not model_id:
            raise ValueError("the transformers backend needs --model-id")
        return TransformersBackend(tokens, model_id, device=device)
    raise ValueError(f"unknown backend {kind!r}")
