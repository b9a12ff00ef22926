import numpy as np
from hypothesis import settings, strategies as st

from graphon_lab.core import MultipodalGraphon

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("repo")

# criterion lines collected by test_acceptance, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_graphon(rng, n=None, max_n=5):
    n = n or int(rng.integers(1, max_n + 1))
    c = rng.dirichlet(np.ones(n))
    P = rng.random((n, n))
    P = np.triu(P) + np.triu(P, 1).T
    return MultipodalGraphon(c, P)


@st.composite
def graphons(draw, max_n=5):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    n = draw(st.integers(1, max_n))
    return random_graphon(np.random.default_rng(seed), n)
