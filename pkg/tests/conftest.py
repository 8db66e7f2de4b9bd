import pytest

from phsbench.synthetic import separable_dataset, synthetic_posts
from phsbench.normalizer import normalize_corpus
from phsbench.tokenizer import WordPieceTokenizer, build_vocab


@pytest.fixture(scope="session")
def toy_tokenizer():
    posts, _ = normalize_corpus(synthetic_posts(300, seed=1))
    texts = [p.text for p in posts] + [e.text for e in separable_dataset(60)]
    return WordPieceTokenizer(build_vocab(texts, vocab_size=600))


@pytest.fixture
def store_home(tmp_path, monkeypatch):
    home = tmp_path / "home"
    monkeypatch.setenv("PHSBENCH_HOME", str(home))
    return home
