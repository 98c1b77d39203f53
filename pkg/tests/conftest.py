import numpy as np
import pytest

from dgpzsl.taxonomy import build_dag


def random_dag_edges(rng: np.random.Generator, n: int, p: float):
    """Edges child->parent drawn over a random topological order."""
    order = rng.permutation(n)
    names = [f"v{i}" for i in range(n)]
    edges = []
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                # later node in the order is the child
                edges.append((names[order[b]], names[order[a]]))
    return names, edges


@pytest.fixture
def chain6():
    return build_dag([(f"c{i}", f"c{i + 1}") for i in range(5)])


def dense_matmul(a, b):
    """Triple loop, independent of numpy's matmul."""
    n, m = len(a), len(a[0]) if len(a) else 0
    p = len(b[0]) if len(b) else 0
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        for k in range(m):
            aik = a[i][k]
            if aik == 0.0:
                continue
            for j in range(p):
                out[i][j] += aik * b[k][j]
    return np.array(out).reshape(n, p)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
