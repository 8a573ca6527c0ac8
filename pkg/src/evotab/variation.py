"""Q-learning choice of the generator loss used to produce each child."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import TrainingError
from .evolution import Individual
from .gan import (
    LOSS_KINDS,
    AdamConfig,
    AdamState,
    Discriminator,
    adam_step,
    block_probabilities,
    clone_generator,
    generate,
    generator_loss,
)

log = logging.getLogger(__name__)

N_ACTIONS = len(LOSS_KINDS)
EPSILON = 0.1
GAMMA = 0.9
BUFFER_CAPACITY = 1000
Q_BATCH = 32
Q_HIDDEN = (64, 64)
Q_ADAM = AdamConfig(lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=0.0)


class QFunction(nn.Module):
    """Maps a (risk, utility) state to one value per generator loss."""

    def __init__(self, hidden: Sequence[int] = Q_HIDDEN, adam: AdamConfig = Q_ADAM):
        super().__init__()
        layers: list[nn.Module] = []
        dim = 2
        for h in hidden:
            layers += [nn.Linear(dim, h), nn.ReLU()]
            dim = h
        layers.append(nn.Linear(dim, N_ACTIONS))
        self.seq = nn.Sequential(*layers)
        self.hidden = tuple(hidden)
        self.adam = adam
        self.adam_state = AdamState()

    def forward(self, states):
        return self.seq(states)

    @torch.no_grad()
    def values(self, state: Sequence[float]) -> np.ndarray:
        x = torch.tensor([list(state)], dtype=torch.float32)
        return self(x)[0].double().numpy()


def encode_state(f_r: float, f_u: float) -> tuple[float, float]:
    """Clamp the (risk, utility) pair into [-1, 1] for the Q network."""
    return (min(max(f_r, -1.0), 1.0), min(max(f_u, -1.0), 1.0))


@dataclass(frozen=True)
class Transition:
    s: tuple[float, float]
    a: int
    r: int
    s_child: tuple[float, float]
    a_next: int


class ReplayBuffer:
    """Bounded FIFO of transitions."""

    def __init__(self, capacity: int = BUFFER_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)
        self.total_added = 0

    def append(self, t: Transition) -> None:
        self._items.append(t)
        self.total_added += 1

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]

    def stats(self) -> dict:
        rewards = [t.r for t in self._items]
        actions = np.bincount([t.a for t in self._items], minlength=N_ACTIONS).tolist() if rewards else [0] * N_ACTIONS
        return {
            "size": len(self),
            "capacity": self.capacity,
            "total_added": self.total_added,
            "mean_reward": float(np.mean(rewards)) if rewards else None,
            "action_counts": actions,
        }


def greedy_action(q: QFunction, state) -> int:
    # np.argmax returns the lowest index among ties
    return int(np.argmax(q.values(state)))


def select_action(q: QFunction, state, epsilon: float, seed) -> int:
    """Epsilon-greedy action over the three generator losses."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return greedy_action(q, state)


def reward(parent_utility: float, child_utility: float) -> int:
    return 1 if child_utility > parent_utility else 0


@dataclass
class VariationContext:
    """Everything one child update needs besides the parent and the Q machinery."""

    z: torch.Tensor
    c1: torch.Tensor
    targets: torch.Tensor  # encoded-row position of each row's imposed category
    adam: AdamConfig
    evaluate: Callable  # generator -> (f_u, f_r)
    gumbel: torch.Generator | None = None


def train_child(disc: Discriminator, parent: Individual, action: int, ctx: VariationContext):
    """One Adam step of a cloned generator on loss ``action`` + conditional loss."""
    child = clone_generator(parent.generator)
    state = parent.adam_state.clone() if parent.adam_state is not None else AdamState()
    soft, logits = generate(child, ctx.z, ctx.c1, ctx.gumbel, return_logits=True)
    d_scores = disc.score(torch.cat([soft, ctx.c1], dim=1))
    loss = generator_loss(action, d_scores, block_probabilities(logits, child.spans), ctx.targets)
    if not torch.isfinite(loss):
        norms = {n: float(p.norm()) for n, p in child.named_parameters()}
        raise TrainingError(f"non-finite generator loss {float(loss)} (action {action}); parameter norms {norms}")
    params = list(child.parameters())
    grads = torch.autograd.grad(loss, params)
    adam_step(params, grads, ctx.adam, state)
    return child, state, float(loss.detach())


def smart_variation(
    disc: Discriminator,
    parent: Individual,
    ctx: VariationContext,
    q: QFunction,
    buffer: ReplayBuffer,
    epsilon: float,
    seed,
    uid: int = 0,
) -> Individual:
    """Produce one child of ``parent`` and record the resulting transition."""
    if not (math.isfinite(parent.f_u) and math.isfinite(parent.f_r)):
        raise ValueError("parent must carry evaluated objectives")
    s = encode_state(parent.f_r, parent.f_u)
    action = select_action(q, s, epsilon, seed)
    gen, state, loss = train_child(disc, parent, action, ctx)
    f_u, f_r = ctx.evaluate(gen)
    r = reward(parent.f_u, f_u)
    s_child = encode_state(f_r, f_u)
    buffer.append(Transition(s, action, r, s_child, greedy_action(q, s_child)))
    child = Individual(gen, state, f_u, f_r, uid=uid)
    child.action, child.reward, child.loss = action, r, loss
    return child


def train_q(q: QFunction, buffer: ReplayBuffer, batch_size: int = Q_BATCH, gamma: float = GAMMA, seed=None) -> bool:
    """One SARSA regression step: Q(s, a) towards r + gamma * Q(s', a_next).

    Returns False (and does nothing) when the buffer holds fewer than
    ``batch_size`` transitions.
    """
    if len(buffer) < max(batch_size, 1):
        log.debug("train_q skipped: %d transitions < batch %d", len(buffer), batch_size)
        return False
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch = buffer.sample(batch_size, rng)
    s = torch.tensor([t.s for t in batch], dtype=torch.float32)
    s2 = torch.tensor([t.s_child for t in batch], dtype=torch.float32)
    a = torch.tensor([t.a for t in batch])
    a2 = torch.tensor([t.a_next for t in batch])
    r = torch.tensor([float(t.r) for t in batch])
    with torch.no_grad():
        target = r + gamma * q(s2).gather(1, a2[:, None]).squeeze(1)
    pred = q(s).gather(1, a[:, None]).squeeze(1)
    loss = ((pred - target) ** 2).mean()
    params = list(q.parameters())
    grads = torch.autograd.grad(loss, params)
    adam_step(params, grads, q.adam, q.adam_state)
    return True
