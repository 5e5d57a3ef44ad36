import os
import sys

import hypothesis
import numpy as np
import pytest

from sloma.data import RatingMatrix, SocialGraph

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.register_profile("thorough", deadline=None, max_examples=500)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_ratings(triples, num_users=None, num_items=None) -> RatingMatrix:
    t = np.asarray(triples, dtype=float).reshape(-1, 3)
    m = num_users if num_users is not None else int(t[:, 0].max()) + 1
    n = num_items if num_items is not None else int(t[:, 1].max()) + 1
    return RatingMatrix(m, n, t[:, 0].astype(int), t[:, 1].astype(int), t[:, 2],
                        tuple(f"u{k}" for k in range(m)), tuple(f"i{k}" for k in range(n)))


def dense_ratings(M: np.ndarray) -> RatingMatrix:
    us, its = np.nonzero(np.ones_like(M, dtype=bool))
    return make_ratings(np.column_stack([us, its, M[us, its]]), *M.shape)


def random_graph(m: int, p: float, seed: int) -> SocialGraph:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(m, k=1)
    hit = rng.random(len(iu)) < p
    return SocialGraph(m, np.column_stack([iu[hit], ju[hit]]))


@pytest.fixture
def tmp(tmp_path):
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for n in sorted(report):
            terminalreporter.write_line(report[n])
