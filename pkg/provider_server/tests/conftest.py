import socket
import subprocess
import sys

import pytest

from llmdet.tokenizer import build_vocabulary


@pytest.fixture(scope="session")
def shared_vocab(tmp_path_factory):
    corpus = [
        "the quick brown fox jumps over the lazy dog",
        "pack my box with five dozen liquor jugs",
        "how vexingly quick daft zebras jump",
    ]
    vocab = build_vocabulary(corpus, 64)
    path = tmp_path_factory.mktemp("vocab") / "vocab.txt"
    vocab.save(path)
    return vocab, path


@pytest.fixture
def tcp_server(shared_vocab):
    _, vocab_path = shared_vocab
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "provider_server", "--vocab", str(vocab_path),
         "--backend", "toy", "--port", str(port)],
        stderr=subprocess.PIPE,
        text=True,
    )
    proc.stderr.readline()  # "listening on ..."
    yield "127.0.0.1", port
    proc.terminate()
    proc.wait(timeout=5)
