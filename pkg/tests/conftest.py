"""Shared fixtures: a small corpus and a briefly trained encoder."""

import numpy as np
import pytest

from trigmark.corpus import SyntheticCorpusSpec, default_vocabulary, generate_synthetic_corpus
from trigmark.encoder import EncoderTrainingConfig, caption_classes, train_toy_encoder


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(SyntheticCorpusSpec(), default_vocabulary())


@pytest.fixture(scope="session")
def small_encoder(small_corpus):
    cfg = EncoderTrainingConfig(epochs=100)
    return train_toy_encoder(small_corpus, cfg, default_vocabulary(), model_id="toy-small")


@pytest.fixture(scope="session")
def gallery(small_corpus):
    return caption_classes(small_corpus)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def owner_set(small_encoder, small_corpus, gallery):
    from trigmark.triggers import TriggerSettings, generate_owner_triggers

    return generate_owner_triggers(small_encoder, small_corpus, TriggerSettings(k=8, pool=40), gallery)


@pytest.fixture(scope="session")
def owner_module(small_encoder, owner_set):
    from trigmark.transform import TransformTrainingConfig, train_transform

    return train_transform(small_encoder, owner_set, TransformTrainingConfig(eta=0.05, freeze_g=True))


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
