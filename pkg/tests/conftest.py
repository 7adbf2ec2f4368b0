"""Shared corpora, trained models and the acceptance summary."""

import time
from dataclasses import dataclass

import pytest

from avrdiar.core import Config
from avrdiar.features import make_synthetic_corpus
from avrdiar.training import train

ACCEPT_SEED = 1
SIGMA0_SEED = 2


@dataclass
class Split:
    train: object
    val: object
    test: object


@dataclass
class TrainedRun:
    scorer: object
    cfg: Config
    seconds: float


def split_corpus(n_videos, sigma, seed):
    """100/10/10 style split of one generated corpus (disjoint video ids)."""
    full = make_synthetic_corpus(n_videos, (4, 8), 0.25, 3, sigma, seed=seed)
    n_eval = 10
    n_train = n_videos - 2 * n_eval
    return Split(full.subset(0, n_train), full.subset(n_train, n_train + n_eval),
                 full.subset(n_train + n_eval, n_videos))


def timed_train(split, cfg):
    start = time.perf_counter()
    scorer = train(split.train, split.val, cfg)
    return TrainedRun(scorer, cfg, time.perf_counter() - start)


@pytest.fixture(scope="session")
def acceptance_split():
    """4-8 speakers per video, a quarter off screen, noise sigma 0.1."""
    return split_corpus(120, 0.1, ACCEPT_SEED)


@pytest.fixture(scope="session")
def run_p05(acceptance_split):
    return timed_train(acceptance_split, Config(missing_prob=0.5, seed=ACCEPT_SEED))


@pytest.fixture(scope="session")
def run_p10(acceptance_split):
    return timed_train(acceptance_split, Config(missing_prob=1.0, seed=ACCEPT_SEED))


@pytest.fixture(scope="session")
def sigma0_split():
    return split_corpus(120, 0.0, SIGMA0_SEED)


@pytest.fixture(scope="session")
def run_sigma0(sigma0_split):
    return timed_train(sigma0_split, Config(seed=SIGMA0_SEED))


# ---- acceptance summary: one PASS/FAIL line per criterion -----------------

_outcomes: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        prev = _outcomes.get(number)
        status = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        _outcomes[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status, title, detail = _outcomes[number]
        line = f"{status} criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
