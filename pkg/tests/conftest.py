import time

import numpy as np
import pytest

from beexformer.config import ModelConfig, TrainConfig
from beexformer.data import encode, synthetic_splits
from beexformer.embedding import Vocabulary
from beexformer.model import BEExformer
from beexformer.training import train


def tiny_config(**overrides) -> ModelConfig:
    base = dict(vocab_size=12, num_classes=2, max_len=6, num_blocks=2, num_heads=2,
                model_dim=8, slfn_dim=6, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (in place)."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE: list[str] = []

# desk-scale learning-sanity setup; lr sits inside the 0.01..0.0001 schedule range
TINY = dict(num_blocks=2, model_dim=32, slfn_dim=48, num_heads=4, max_len=20)
TINY_TRAIN = dict(seed=0, lr=0.003, epochs=50)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sentiment_data():
    train_set, dev_set = synthetic_splits("keyword-sentiment", 2000, 200, 1234)
    vocab = Vocabulary.build(train_set.texts())
    return vocab, encode(train_set, vocab, TINY["max_len"]), encode(dev_set, vocab, TINY["max_len"])


def train_tiny(sentiment_data, binarizer="b2", log_path=None, **train_overrides):
    vocab, (tids, tl), (dids, dl) = sentiment_data
    cfg = ModelConfig(vocab_size=vocab.size, binarizer=binarizer, **TINY)
    model = BEExformer(cfg, seed=0)
    return train(model, tids, tl, dids, dl, TrainConfig(**{**TINY_TRAIN, **train_overrides}), log_path)


@pytest.fixture(scope="session")
def trained_tiny(sentiment_data, tmp_path_factory):
    """The tiny b(r) model from the learning-sanity run, trained once per session."""
    log_path = tmp_path_factory.mktemp("tiny") / "train_log.jsonl"
    start = time.perf_counter()
    result = train_tiny(sentiment_data, log_path=log_path)
    return result, log_path, time.perf_counter() - start
