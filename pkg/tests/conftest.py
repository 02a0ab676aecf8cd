"""Shared fixtures: a small vocabulary and corpora sized for fast tests."""

import numpy as np
import pytest

from smile.data import DomainConfig, VocabSpec, generate_corpus, make_templates

SMALL_SHIFT = dict(salt_pepper_prob=0.1, intensity_scale=0.8,
                   background_level=0.05, horizontal_shear=1)


@pytest.fixture(scope="session")
def vocab():
    return VocabSpec("ABCD")


@pytest.fixture(scope="session")
def templates(vocab):
    return make_templates(vocab, seed=5)


@pytest.fixture(scope="session")
def small_source(vocab, templates):
    return generate_corpus(vocab, templates, 160, (1, 3), seed=11)


@pytest.fixture(scope="session")
def small_target(vocab, templates):
    cfg = DomainConfig(seed=90, **SMALL_SHIFT)
    corpus = generate_corpus(vocab, templates, 160, (1, 3), seed=12,
                             domain_cfg=cfg)
    return corpus.without_labels()


@pytest.fixture(scope="session")
def small_test(vocab, templates):
    cfg = DomainConfig(seed=90, **SMALL_SHIFT)
    return generate_corpus(vocab, templates, 48, (1, 3), seed=13,
                           domain_cfg=cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
