import numpy as np
import pytest

from symface.synthgen import corpus_manifest, generate_corpus, train_test_indices


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(4, 12, (16, 16), seed=7)


@pytest.fixture(scope="session")
def small_train(small_corpus):
    train_idx, _ = train_test_indices(small_corpus, 2)
    manifest = corpus_manifest(small_corpus, train_idx, 0.2)
    images = {cid: img for cid, img in zip(small_corpus.ids, small_corpus.images)}
    return manifest, images


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record an acceptance verdict; the summary prints one line per criterion."""

    def record(key: str, ok: bool, detail: str = "") -> bool:
        prev = _CRITERIA.get(key)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}" if detail else prev[1]
        _CRITERIA[key] = (bool(ok), detail)
        return bool(ok)

    return record


def _order(key):
    head = key.split()[0]
    return (int("".join(ch for ch in head if ch.isdigit()) or 0), key)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=_order):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
