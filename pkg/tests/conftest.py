import numpy as np
import pytest
from hypothesis import settings

from evotab.schema import CATEGORICAL, CONTINUOUS, ColumnSpec, Table, TableSchema

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def mixed_schema():
    return TableSchema((
        ColumnSpec("sex", CATEGORICAL, ("F", "M")),
        ColumnSpec("age", CONTINUOUS),
        ColumnSpec("region", CATEGORICAL, ("a", "b", "c")),
    ))


def random_table(n=200, seed=0):
    rng = np.random.default_rng(seed)
    sex = rng.integers(0, 2, n)
    region = rng.choice(3, n, p=[0.5, 0.3, 0.2])
    age = np.where(rng.random(n) < 0.5, rng.normal(25, 2, n), rng.normal(60, 3, n))
    return Table(mixed_schema(), np.column_stack([sex, age, region]).astype(float))


@pytest.fixture
def small_table():
    return random_table()


def bandit_recovers(seed, steps=2000):
    """Two-state, three-action bandit: only action 1 pays in state A, only action 2 in state B.

    Each update appends one transition (epsilon-greedy, epsilon 0.1) and takes
    one SARSA step. True iff both states end with the paying action greedy.
    """
    import torch

    from evotab.variation import QFunction, ReplayBuffer, Transition, greedy_action, select_action, train_q

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    states = [(0.2, 0.3), (-0.5, 0.8)]
    best = [1, 2]
    q = QFunction()
    buf = ReplayBuffer()
    s = int(rng.integers(2))
    for _ in range(steps):
        a = select_action(q, states[s], 0.1, rng)
        r = int(a == best[s])
        nxt = int(rng.integers(2))
        buf.append(Transition(states[s], a, r, states[nxt], greedy_action(q, states[nxt])))
        train_q(q, buf, seed=rng)
        s = nxt
    return all(greedy_action(q, states[i]) == best[i] for i in range(2))


# one line per acceptance criterion, echoed at the end of the session
CRITERIA: dict[int, str] = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
