import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from wsd import ImagingGeometry, augment_background, build_measurement_matrix, build_operator_bundle
from wsd import formats
from wsd.config import RunConfig
from wsd.pipeline import default_cache_path


@pytest.fixture(scope="session")
def geometry():
    return ImagingGeometry()


@pytest.fixture(scope="session")
def A(geometry):
    return build_measurement_matrix(geometry)


@pytest.fixture(scope="session")
def phi(A):
    return augment_background(A)


@pytest.fixture(scope="session")
def bundle(A):
    """The default 196-pixel operator at 40 digits (the one slow build of the session)."""
    return build_operator_bundle(A)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory, bundle):
    """Directory holding the default operator under its canonical cache name."""
    d = tmp_path_factory.mktemp("wsd_cache")
    formats.write_operator(os.path.join(d, os.path.basename(default_cache_path(RunConfig()))),
                           bundle)
    return str(d)


@pytest.fixture(scope="session")
def maps(cache_dir):
    """Working maps read back from the cache file, exactly as the pipeline uses them."""
    name = os.path.basename(default_cache_path(RunConfig()))
    return formats.read_operator(os.path.join(cache_dir, name))


@pytest.fixture(autouse=True)
def _cache_env(monkeypatch, request):
    if "cache_dir" in request.fixturenames:
        monkeypatch.setenv("WSD_CACHE_DIR", request.getfixturevalue("cache_dir"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def A_o(A):
    """Row-orthonormalized default matrix at extended precision."""
    from wsd import row_orthonormalize
    return row_orthonormalize(A)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdicts():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
