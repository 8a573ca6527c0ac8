import math

import numpy as np
import pytest
import torch
from scipy import stats

from evotab.evolution import Individual
from evotab.gan import AdamConfig, Discriminator, build_generator, condition_targets, parameter_hash
from evotab.transform import CondSampler, DataTransformer
from evotab.variation import (
    N_ACTIONS,
    QFunction,
    ReplayBuffer,
    Transition,
    VariationContext,
    encode_state,
    greedy_action,
    reward,
    select_action,
    smart_variation,
    train_child,
    train_q,
)

from conftest import bandit_recovers, random_table


def fixed_q(values):
    q = QFunction()
    with torch.no_grad():
        last = q.seq[-1]
        last.weight.zero_()
        last.bias.copy_(torch.tensor(values))
    return q


def test_uniform_when_always_exploring():
    q = fixed_q([0.0, 5.0, 0.0])
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(q, (0.1, 0.5), 1.0, rng) for _ in range(10000)], minlength=3)
    assert np.all(np.abs(counts / 10000 - 1 / 3) <= 0.02)


def test_exploration_rate_binomial():
    q = fixed_q([0.0, 0.0, 5.0])
    rng = np.random.default_rng(1)
    picks = np.array([select_action(q, (0.0, 0.0), 0.1, rng) for _ in range(6000)])
    # a random pick lands off the greedy action with probability 2/3
    off = int(np.sum(picks != 2))
    assert stats.binomtest(off, 6000, 0.1 * 2 / 3).pvalue > 0.001


@pytest.mark.parametrize("values, expected", [([0.1, 0.9, 0.3], 1), ([0.5, 0.5, 0.5], 0), ([0.0, 0.7, 0.7], 1)])
def test_greedy_argmax_and_ties(values, expected):
    assert select_action(fixed_q(values), (0.3, 0.4), 0.0, 0) == expected


def test_epsilon_range_checked():
    with pytest.raises(ValueError):
        select_action(QFunction(), (0, 0), 1.5, 0)


@pytest.mark.parametrize("parent, child, r", [(0.40, 0.45, 1), (0.40, 0.40, 0), (0.45, 0.40, 0)])
def test_reward(parent, child, r):
    assert reward(parent, child) == r


def test_state_clamped():
    assert encode_state(-3.0, 0.5) == (-1.0, 0.5)
    assert encode_state(0.2, -7.0) == (0.2, -1.0)


def test_q_output_arity():
    assert QFunction().values((0.0, 0.0)).shape == (N_ACTIONS,)


# ---------------------------------------------------------------- replay buffer


def test_buffer_is_bounded_fifo():
    buf = ReplayBuffer(capacity=3)
    for i in range(5):
        buf.append(Transition((0.0, 0.0), i % 3, 0, (0.0, 0.0), 0))
    assert len(buf) == 3 and buf.total_added == 5
    assert [t.a for t in buf] == [2, 0, 1]


def test_buffer_sample_without_replacement():
    buf = ReplayBuffer()
    for i in range(40):
        buf.append(Transition((i / 40, 0.0), 0, 0, (0.0, 0.0), 0))
    batch = buf.sample(40, np.random.default_rng(0))
    assert len({t.s for t in batch}) == 40


def test_buffer_sampling_uniform():
    buf = ReplayBuffer()
    for i in range(10):
        buf.append(Transition((i / 10, 0.0), 0, 0, (0.0, 0.0), 0))
    rng = np.random.default_rng(3)
    hits = np.zeros(10)
    for _ in range(3000):
        for t in buf.sample(3, rng):
            hits[round(t.s[0] * 10)] += 1
    assert stats.chisquare(hits).pvalue > 0.001


def test_buffer_stats():
    buf = ReplayBuffer(capacity=5)
    assert buf.stats()["mean_reward"] is None
    buf.append(Transition((0.0, 0.0), 2, 1, (0.0, 0.0), 0))
    buf.append(Transition((0.0, 0.0), 0, 0, (0.0, 0.0), 0))
    assert buf.stats() == {"size": 2, "capacity": 5, "total_added": 2, "mean_reward": 0.5, "action_counts": [1, 0, 1]}


# ---------------------------------------------------------------- train_q


def test_train_q_skips_small_buffer():
    q = QFunction()
    before = parameter_hash(q)
    assert train_q(q, ReplayBuffer(), batch_size=32) is False
    assert parameter_hash(q) == before


@pytest.mark.parametrize("r", [1, 0])
def test_train_q_constant_target_fixed_point(r):
    torch.manual_seed(0)
    q = QFunction()
    buf = ReplayBuffer()
    s = (0.3, 0.6)
    for _ in range(32):
        buf.append(Transition(s, 1, r, (0.1, 0.2), 0))
    for i in range(500):
        train_q(q, buf, batch_size=32, gamma=0.0, seed=i)
    assert abs(q.values(s)[1] - r) <= 0.05


def test_train_q_sarsa_target():
    # with a self-loop on the stored next action the fixed point is r / (1 - gamma)
    torch.manual_seed(1)
    q = QFunction()
    buf = ReplayBuffer()
    s = (0.5, 0.5)
    for _ in range(32):
        buf.append(Transition(s, 0, 1, s, 0))
    for i in range(3000):
        train_q(q, buf, batch_size=32, gamma=0.5, seed=i)
    assert abs(q.values(s)[0] - 2.0) <= 0.05


@pytest.mark.parametrize("seed", [0, 1])
def test_bandit_recovered(seed):
    assert bandit_recovers(seed, steps=2000)


# ---------------------------------------------------------------- smart variation


@pytest.fixture(scope="module")
def setup():
    torch.manual_seed(0)
    table = random_table(n=400, seed=3)
    tr = DataTransformer.fit(table, seed=0)
    cond = CondSampler(table)
    gen = build_generator(tr, noise_dim=16, hidden=(32,))
    disc = Discriminator(tr.output_dim + tr.cond_dim, hidden=(32,), pac=2, dropout=0.0)
    return tr, cond, gen, disc


def make_ctx(setup, seed=0, evaluate=lambda g: (0.6, 0.1)):
    tr, cond, _, _ = setup
    c1, chosen = cond.sample_condvec(20, seed)
    g = torch.Generator().manual_seed(seed)
    return VariationContext(
        z=torch.randn(20, 16, generator=g),
        c1=torch.as_tensor(c1, dtype=torch.float32),
        targets=condition_targets(tr, chosen),
        adam=AdamConfig(),
        evaluate=evaluate,
        gumbel=torch.Generator().manual_seed(seed + 1),
    )


def test_forced_action_uses_least_square(setup):
    _, _, gen, disc = setup
    parent = Individual(gen, None, f_u=0.5, f_r=0.2)
    q = fixed_q([0.0, 0.0, 1.0])
    buf = ReplayBuffer()
    child = smart_variation(disc, parent, make_ctx(setup), q, buf, epsilon=0.0, seed=0, uid=7)
    expected, _, loss = train_child(disc, parent, 2, make_ctx(setup))
    assert child.action == 2 and child.uid == 7
    assert parameter_hash(child.generator) == parameter_hash(expected)
    assert child.loss == loss
    for other in (0, 1):
        alt, _, _ = train_child(disc, parent, other, make_ctx(setup))
        assert parameter_hash(alt) != parameter_hash(expected)


def test_variation_bookkeeping_and_isolation(setup):
    _, _, gen, disc = setup
    parent = Individual(gen, None, f_u=0.5, f_r=0.2)
    gen_before, disc_before = parameter_hash(gen), parameter_hash(disc)
    q = QFunction()
    q_before = parameter_hash(q)
    buf = ReplayBuffer()
    for i in range(3):
        child = smart_variation(disc, parent, make_ctx(setup, seed=i, evaluate=lambda g: (0.55, 0.3)), q, buf, 0.1, seed=i)
        assert len(buf) == i + 1
    assert parameter_hash(gen) == gen_before
    assert parameter_hash(disc) == disc_before
    assert parameter_hash(q) == q_before
    assert parent.adam_state is None
    t = buf.stats()
    assert t["mean_reward"] == 1.0
    last = list(buf)[-1]
    assert last.s == (0.2, 0.5) and last.s_child == (0.3, 0.55) and last.r == 1
    assert last.a_next == greedy_action(q, (0.3, 0.55))
    assert child.f_u == 0.55 and child.reward == 1 and child.adam_state.step == 1


def test_child_adam_state_is_independent(setup):
    _, _, gen, disc = setup
    parent = Individual(gen, None, f_u=0.5, f_r=0.2)
    first = smart_variation(disc, parent, make_ctx(setup), QFunction(), ReplayBuffer(), 0.0, 0)
    grandchild = smart_variation(disc, first, make_ctx(setup, 1), QFunction(), ReplayBuffer(), 0.0, 0)
    assert first.adam_state.step == 1 and grandchild.adam_state.step == 2


def test_unevaluated_parent_rejected(setup):
    _, _, gen, disc = setup
    with pytest.raises(ValueError):
        smart_variation(disc, Individual(gen), make_ctx(setup), QFunction(), ReplayBuffer(), 0.1, 0)
    assert math.isnan(Individual(gen).f_u)
