import numpy as np
import pytest

from hippomap.cogmap import CognitiveMap
from hippomap.embed import StubEmbedder, normalize


@pytest.fixture
def provider():
    return StubEmbedder(384)


@pytest.fixture
def small_provider():
    return StubEmbedder(32)


def unit(i, d):
    v = np.zeros(d)
    v[i] = 1.0
    return v


def build_map(states, edges=(), dimension=16, trust_mode="static"):
    """Map with hand-set statistics.

    ``states`` is a list of (trust, visits) or (trust, visits, exemplar);
    ``edges`` a list of (src, dst, success, total). State i gets the i-th
    basis vector as its centroid.
    """
    cmap = CognitiveMap(dimension=dimension, trust_mode=trust_mode)
    for i, spec in enumerate(states):
        trust, visits = spec[0], spec[1]
        exemplar = spec[2] if len(spec) > 2 else f"state {i} exemplar"
        v = unit(i % dimension, dimension) if i < dimension else normalize(np.random.default_rng(i).standard_normal(dimension))
        sid, _ = cmap.assign_state(v, exemplar)
        # force a new state even if the random fallback vector lands near an old one
        assert sid == i
        st = cmap.states[sid]
        st.visit_count = visits
        st.success_count = round(trust * visits)
        st.trust = trust
    for src, dst, success, total in edges:
        cmap.set_edge(src, dst, success, total)
    return cmap


@pytest.fixture
def map_factory():
    return build_map


# -- acceptance summary ---------------------------------------------------------

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::test_criterion_", 1)[1]
        num, _, title = name.partition("_")
        _criteria[num] = (title.replace("_", " "), "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria, key=int):
        title, verdict = _criteria[num]
        terminalreporter.write_line(f"criterion {num} ({title}): {verdict}")
