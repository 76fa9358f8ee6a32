import numpy as np
import pytest

from ccr.backends import MockBackend


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion implemented by this test"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        marker = item.get_closest_marker("criterion")
        if marker:
            status = "PASS" if report.passed else "FAIL"
            print(f"\n[{status}] criterion: {marker.args[0]}")
from ccr.corpus import ParagraphRecord
from ccr.evaluation import generate_synthetic_corpus, planted_title_model
from ccr.pairing import title_similarity_matrix


def make_record(pid, title="t", text=None, work=None, split=None):
    return ParagraphRecord(
        id=pid,
        work_id=work or f"work-{title}",
        title=title,
        text=text or f"text of {pid}",
        split=split,
    )


@pytest.fixture
def mock_backend():
    return MockBackend(dim=64, seed=7)


@pytest.fixture(scope="session")
def planted_corpus():
    """Two-cluster synthetic corpus shared by pairing/eval tests: 8 titles x 25."""
    records, planted = generate_synthetic_corpus(
        n_titles=8, paragraphs_per_title=25, dim=64, noise=0.25, seed=11
    )
    model = planted_title_model(planted)
    sims = title_similarity_matrix(records, model)
    return records, planted, model, sims


def brute_force_cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
