import functools

import pytest

from pa_inv import catalog
from pa_inv.numeric import set_precision

set_precision(256)


@pytest.fixture(scope="session")
def cache_root(tmp_path_factory):
    return tmp_path_factory.mktemp("shape-cache")


@pytest.fixture(scope="session")
def prepared(cache_root):
    """Prepared preset pipelines, solved once per session."""

    @functools.lru_cache(maxsize=None)
    def get(name):
        return catalog.prepare(catalog.load_preset(name), cache=cache_root)

    return get


@pytest.fixture(scope="session")
def verified(prepared):
    @functools.lru_cache(maxsize=None)
    def get(name, n):
        return catalog.run(prepared(name), n, "verify", timings=False)

    return get


@pytest.fixture(autouse=True)
def _precision():
    set_precision(256)
    yield
    set_precision(256)


_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
