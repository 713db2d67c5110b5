import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from choralegen import build_vocabulary, load_corpus, mini_corpus_path


@pytest.fixture(scope="session")
def vocab():
    return build_vocabulary()


@pytest.fixture(scope="session")
def mini_corpus():
    return load_corpus(mini_corpus_path())
