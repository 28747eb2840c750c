import numpy as np
import pytest

from avdub import synthcorpus as sc
from avdub.codec import CodecConfig, fit_codebooks
from avdub.frontend import bundled_lexicon


@pytest.fixture(scope="session")
def lexicon():
    return bundled_lexicon()


@pytest.fixture(scope="session")
def small_corpus(lexicon):
    return sc.make_corpus(6, 4, lexicon, seed=11)


@pytest.fixture(scope="session")
def small_books(small_corpus):
    frames = np.concatenate([u.frames for u in small_corpus.utterances])
    return fit_codebooks(frames, CodecConfig(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def medium_corpus(lexicon):
    return sc.make_corpus(20, 5, lexicon, seed=21)


@pytest.fixture(scope="session")
def toy_run(lexicon):
    """The 50 x 10 toy corpus with fitted codebooks and a model trained for
    5000 steps; shared by the training, conditioning and selection checks."""
    import time
    from types import SimpleNamespace

    import torch

    from avdub.nclm import DubbingLM, ModelConfig
    from avdub.training import TrainConfig, encode_utterances, heldout_examples, train

    torch.set_num_threads(1)
    start = time.perf_counter()
    corpus = sc.make_corpus(50, 10, lexicon, seed=0)
    train_utts, test_utts = corpus.split("train"), corpus.split("test")
    books = fit_codebooks(np.concatenate([u.frames for u in train_utts]), CodecConfig(), seed=0)
    pool = encode_utterances(train_utts, books, lexicon)
    heldout = encode_utterances(test_utts, books, lexicon)
    examples = heldout_examples(heldout[:40], pool, seed=1, max_prompt_frames=150)
    torch.manual_seed(0)
    model = DubbingLM(ModelConfig())
    history = train(model, pool, TrainConfig(steps=5000), examples)
    return SimpleNamespace(books=books, pool=pool, heldout=heldout, model=model, history=history,
                           seconds=time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter):
    from _util import VERDICTS
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}")
