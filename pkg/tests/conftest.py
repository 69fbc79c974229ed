import numpy as np
import pytest

from famle.model import ModelParams, TransitionDataset, init_params


def random_dataset(rng, n, sd, ad, scale=1.0):
    s = rng.normal(size=(n, sd))
    a = rng.uniform(-1, 1, size=(n, ad))
    return TransitionDataset(s, a, s + scale * rng.normal(size=(n, sd)))


def zero_params(sd, ad, ed, hidden=(4,)):
    p = init_params(sd, ad, ed, hidden, np.random.default_rng(0))
    return p.with_tensors([np.zeros_like(t) for t in p.tensors()])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_RESULTS = []


def record(name, ok, detail):
    """Register one acceptance outcome for the terminal summary."""
    _RESULTS.append((name, ok, detail))


def pytest_collection_modifyitems(items):
    # every hypothesis property test belongs to the invariant suite
    for item in items:
        fn = getattr(item, "function", None)
        if fn is not None and getattr(fn, "is_hypothesis_test", False):
            item.add_marker(pytest.mark.invariant)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {name}: {detail}")
