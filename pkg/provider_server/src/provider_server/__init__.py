"""Reference provider-protocol server wrapping a causal language model."""

from .backends import ToyCausalBackend, load_vocab, make_backend
from .server import ProviderServer, main

__version__ = "0.1.0"
