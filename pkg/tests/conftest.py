import numpy as np
import pytest

from robustcast.synthdata import build_benchmark, default_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(train=6, val=3, test=4):
    cfg = default_config()
    cfg["sequences"] = {"train": train, "val": val, "test": test}
    return cfg


@pytest.fixture(scope="session")
def small_bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    return build_benchmark(small_config(), root=root)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
