import numpy as np
import pytest

from tcfp.attacks import generate_song
from tcfp.config import Config
from tcfp.pipeline import build_db, dictionary_from
from tcfp.timechroma import time_chroma

CORPUS_SEEDS = range(1000, 1025)  # 25 songs x 60 s


@pytest.fixture(scope="session")
def corpus():
    """The deterministic synthetic corpus: scores, signals, images, dictionary, DB."""
    cfg = Config()
    songs = [generate_song(s, 60.0) for s in CORPUS_SEEDS]
    images = [time_chroma(sig) for _, sig in songs]
    dictionary = dictionary_from(images, cfg)
    db = build_db(images, dictionary, cfg)
    return {
        "cfg": cfg,
        "scores": [sc for sc, _ in songs],
        "signals": [sig for _, sig in songs],
        "images": images,
        "dictionary": dictionary,
        "db": db,
    }


@pytest.fixture(scope="session")
def short_song():
    """One 20 s song and its image, for tests that need real content quickly."""
    score, sig = generate_song(7, 20.0)
    return score, sig, time_chroma(sig)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
