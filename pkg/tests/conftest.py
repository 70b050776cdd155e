import numpy as np
import pytest

from privfan.corpus import synth_corpus, write_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(6, seed=100)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, small_corpus):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(small_corpus, root)
    return root
