import numpy as np
import pytest

from isinggame.model import IsingModel


def random_tree_model(rng: np.random.Generator, n: int, scale: float = 2.0) -> IsingModel:
    """Random labelled tree: node k attaches to a uniformly chosen earlier node."""
    perm = rng.permutation(n)
    edges = []
    for k in range(1, n):
        a, b = perm[k], perm[rng.integers(0, k)]
        edges.append((min(a, b), max(a, b)))
    edges.sort()
    return IsingModel(n, edges, rng.uniform(-scale, scale, n - 1), rng.uniform(-1, 1, n))


def random_graph_model(rng: np.random.Generator, n: int, extra: int, scale: float = 2.0) -> IsingModel:
    """Connected random graph: a random tree plus up to ``extra`` chords."""
    tree = random_tree_model(rng, n, scale)
    pairs = {tuple(e) for e in tree.edges.tolist()}
    for _ in range(extra):
        a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
        pairs.add((a, b))
    edges = sorted(pairs)
    return IsingModel(n, edges, rng.uniform(-scale, scale, len(edges)), rng.uniform(-1, 1, n))


def pair_model(w: float, b=(0.0, 0.0)) -> IsingModel:
    return IsingModel(2, [(0, 1)], [w], list(b))


def single_node(b: float) -> IsingModel:
    return IsingModel(1, np.zeros((0, 2), dtype=np.int64), [], [b])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
