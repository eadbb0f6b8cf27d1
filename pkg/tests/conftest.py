"""Shared fixtures built on the synthetic corpora in synthdata.py."""

import pytest

from synthdata import make_config


@pytest.fixture(scope="session")
def small_config():
    return make_config(samples_per_source=60)


@pytest.fixture(scope="session")
def small_artifacts(small_config):
    from llmdet.harness import build_experiment

    return build_experiment(small_config)
