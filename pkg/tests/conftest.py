"""Shared trained artifacts and the acceptance report.

Each artifact is trained once per session, on first use, and its training
wall time is kept for the runtime budgets.
"""

import time

import pytest

from amortsmc.models import build, build_conjugate_toy, build_fhmm
from amortsmc.training import train_all

from _setups import HMM_CONFIG, HMM_TRAIN, HMM_YS, SMALL_FHMM, SMALL_FHMM_TRAIN

ACCEPTANCE: list[tuple[int, bool, str]] = []


def _train(bundle, config=None):
    start = time.perf_counter()
    art = train_all(bundle.model, bundle.inverse, bundle.specs, config or bundle.train_config,
                    bundle.model_config)
    return art, time.perf_counter() - start


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; returns ``ok``."""
    def record(number: int, ok: bool, detail: str) -> bool:
        ok = bool(ok)
        ACCEPTANCE.append((number, ok, detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def toy_bundle():
    return build_conjugate_toy()


@pytest.fixture(scope="session")
def toy_training(toy_bundle):
    return _train(toy_bundle)


@pytest.fixture(scope="session")
def toy_artifact(toy_training):
    return toy_training[0]


@pytest.fixture(scope="session")
def hmm_bundle():
    return build_fhmm(HMM_CONFIG, ys=HMM_YS)


@pytest.fixture(scope="session")
def hmm_artifact(hmm_bundle):
    return _train(hmm_bundle, HMM_TRAIN)[0]


@pytest.fixture(scope="session")
def small_fhmm_bundle():
    return build_fhmm(SMALL_FHMM)


@pytest.fixture(scope="session")
def small_fhmm_training(small_fhmm_bundle):
    return _train(small_fhmm_bundle, SMALL_FHMM_TRAIN)


@pytest.fixture(scope="session")
def pump_bundle():
    return build("pump")


@pytest.fixture(scope="session")
def pump_training(pump_bundle):
    return _train(pump_bundle)


@pytest.fixture(scope="session")
def pump_artifact(pump_training):
    return pump_training[0]


@pytest.fixture(scope="session")
def fhmm_bundle():
    return build("fhmm")


@pytest.fixture(scope="session")
def fhmm_training(fhmm_bundle):
    return _train(fhmm_bundle)


@pytest.fixture(scope="session")
def fhmm_artifact(fhmm_training):
    return fhmm_training[0]
