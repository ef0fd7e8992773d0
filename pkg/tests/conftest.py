import numpy as np
import pytest
import torch
from hypothesis import settings

from stamp_mil.data import SynthConfig, synth_bags
from stamp_mil.model import ModelConfig

settings.register_profile("ci", max_examples=100, deadline=None)
settings.register_profile("fast", max_examples=20, deadline=None)
settings.load_profile("ci")

torch.set_num_threads(1)

TINY = dict(d=8, L=16, n_p=2, D=8, heads=2)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_splits():
    """Small, easy synthetic dataset for smoke and determinism tests."""
    cfg = SynthConfig(
        bags_per_class={"train": 5, "val": 3, "test": 4},
        n_min=6,
        n_max=12,
        d=8,
        witness_rate=(0.2, 0.3),
        motif_separation=4.0,
        seed=7,
    )
    out = {"train": [], "val": [], "test": []}
    for split, bag in synth_bags(cfg):
        out[split].append(bag)
    return out


# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def _entry(n: int) -> dict:
    return _CRITERIA.setdefault(n, {"title": "", "outcomes": [], "details": []})


@pytest.fixture
def report(request):
    """Attach measured values to the acceptance line of the current test's criterion."""
    mark = request.node.get_closest_marker("criterion")
    entry = _entry(mark.args[0])
    return entry["details"].append


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _entry(mark.args[0])
    entry["title"] = mark.kwargs.get("title", entry["title"])
    if call.when == "setup" and call.excinfo is not None:
        entry["outcomes"].append(False)
    elif call.when == "call":
        entry["outcomes"].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["outcomes"] and all(e["outcomes"]) else "FAIL"
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"[{status}] criterion {n}: {e['title']}" + (f" | {detail}" if detail else ""))
