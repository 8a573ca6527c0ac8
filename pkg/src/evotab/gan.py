"""Generator/discriminator networks, GAN losses and a functional Adam step."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ShapeError
from .transform import DataTransformer, Span

LOSS_KINDS = ("minimax", "heuristic", "least-square")
SCORE_EPS = 1e-8
NOISE_DIM = 128
GEN_HIDDEN = (256, 256)
DISC_HIDDEN = (256, 256)
PAC = 10
GUMBEL_TAU = 0.2
GP_COEF = 10.0


class Residual(nn.Module):
    """Fully connected layer whose output is concatenated with its input."""

    def __init__(self, i: int, o: int):
        super().__init__()
        self.fc = nn.Linear(i, o)
        self.relu = nn.ReLU()

    def forward(self, x):
        return torch.cat([self.relu(self.fc(x)), x], dim=1)


class Generator(nn.Module):
    def __init__(
        self,
        noise_dim: int,
        cond_dim: int,
        output_dim: int,
        spans: Sequence[Span],
        hidden: Sequence[int] = GEN_HIDDEN,
        tau: float = GUMBEL_TAU,
    ):
        super().__init__()
        self.noise_dim = noise_dim
        self.cond_dim = cond_dim
        self.output_dim = output_dim
        self.spans = list(spans)
        self.hidden = tuple(hidden)
        self.tau = tau
        dim = noise_dim + cond_dim
        layers = []
        for h in hidden:
            layers.append(Residual(dim, h))
            dim += h
        layers.append(nn.Linear(dim, output_dim))
        self.seq = nn.Sequential(*layers)

    def forward(self, z, c1):
        return self.seq(torch.cat([z, c1], dim=1))

    def config(self) -> dict:
        return {
            "noise_dim": self.noise_dim,
            "cond_dim": self.cond_dim,
            "output_dim": self.output_dim,
            "spans": [[s.start, s.width, s.activation] for s in self.spans],
            "hidden": list(self.hidden),
            "tau": self.tau,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "Generator":
        spans = [Span(*s) for s in cfg["spans"]]
        return cls(cfg["noise_dim"], cfg["cond_dim"], cfg["output_dim"], spans, cfg["hidden"], cfg["tau"])


def build_generator(transformer: DataTransformer, noise_dim=NOISE_DIM, hidden=GEN_HIDDEN, tau=GUMBEL_TAU):
    return Generator(noise_dim, transformer.cond_dim, transformer.output_dim, transformer.spans, hidden, tau)


class Discriminator(nn.Module):
    """Scores packs of ``pac`` rows; ``forward`` returns pre-sigmoid logits."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = DISC_HIDDEN, pac: int = PAC, dropout: float = 0.5):
        super().__init__()
        self.input_dim = input_dim
        self.pac = pac
        dim = input_dim * pac
        layers: list[nn.Module] = []
        for h in hidden:
            layers += [nn.Linear(dim, h), nn.LeakyReLU(0.2)]
            if dropout > 0:
                layers.append(nn.Dropout(dropout))
            dim = h
        layers.append(nn.Linear(dim, 1))
        self.seq = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[0] % self.pac:
            raise ValueError(f"batch of {x.shape[0]} rows is not divisible by pac={self.pac}")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"discriminator expects width {self.input_dim}, got {x.shape[1]}")
        return self.seq(x.reshape(-1, self.input_dim * self.pac)).reshape(-1)

    def score(self, x):
        return torch.sigmoid(self(x))


def gumbel_softmax(logits, tau: float, generator: torch.Generator | None = None):
    u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
    g = -torch.log(-torch.log(u + 1e-20) + 1e-20)
    return torch.softmax((logits + g) / tau, dim=1)


def apply_activation(logits, spans: Sequence[Span], tau: float, generator: torch.Generator | None = None):
    parts = []
    for s in spans:
        block = logits[:, s.start:s.start + s.width]
        parts.append(torch.tanh(block) if s.activation == "tanh" else gumbel_softmax(block, tau, generator))
    return torch.cat(parts, dim=1)


def block_probabilities(logits, spans: Sequence[Span]):
    """Noise-free softmax per one-hot block; scalar slots pass through tanh."""
    parts = []
    for s in spans:
        block = logits[:, s.start:s.start + s.width]
        parts.append(torch.tanh(block) if s.activation == "tanh" else torch.softmax(block, dim=1))
    return torch.cat(parts, dim=1)


def generate(gen: Generator, z, c1, generator: torch.Generator | None = None, return_logits: bool = False):
    """Soft-encoded rows: tanh scalar slots and Gumbel-softmax one-hot blocks."""
    if z.shape[1] != gen.noise_dim or c1.shape[1] != gen.cond_dim or z.shape[0] != c1.shape[0]:
        raise ShapeError(
            f"generator expects noise {gen.noise_dim} and cond {gen.cond_dim} columns, "
            f"got {tuple(z.shape)} and {tuple(c1.shape)}"
        )
    logits = gen(z, c1)
    soft = apply_activation(logits, gen.spans, gen.tau, generator)
    return (soft, logits) if return_logits else soft


def gradient_penalty(disc: Discriminator, real, fake, u=None, generator: torch.Generator | None = None):
    """Mean over packs of (||grad D(x_hat)|| - 1)^2 on the pre-sigmoid score."""
    pac, dim = disc.pac, real.shape[1]
    n_packs = real.shape[0] // pac
    if u is None:
        u = torch.rand(n_packs, 1, 1, generator=generator, dtype=real.dtype)
    u = torch.as_tensor(u, dtype=real.dtype).reshape(n_packs, 1, 1).expand(n_packs, pac, dim).reshape(-1, dim)
    x_hat = (u * real + (1 - u) * fake).detach().requires_grad_(True)
    out = disc(x_hat)
    (grad,) = torch.autograd.grad(out.sum(), x_hat, create_graph=True)
    norms = grad.reshape(-1, pac * dim).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def discriminator_loss(
    disc: Discriminator,
    real,
    fake,
    gp_coef: float = GP_COEF,
    u=None,
    generator: torch.Generator | None = None,
):
    """Cross-entropy classification loss plus gradient penalty.

    Returns ``(loss, parts)`` where ``parts`` holds the detached components.
    """
    if real.shape[0] % disc.pac or fake.shape[0] % disc.pac:
        raise ValueError(f"batch sizes must be divisible by pac={disc.pac}")
    logit_real = disc(real)
    logit_fake = disc(fake)
    # log D = logsigmoid(l), log(1 - D) = logsigmoid(-l)
    cls_loss = -(nn.functional.logsigmoid(logit_real).mean() + nn.functional.logsigmoid(-logit_fake).mean())
    gp = gradient_penalty(disc, real, fake, u, generator) if gp_coef else torch.zeros((), dtype=real.dtype)
    loss = cls_loss + gp_coef * gp
    return loss, {"classification": float(cls_loss.detach()), "gradient_penalty": float(gp.detach())}


def adversarial_loss(kind, d_scores):
    if isinstance(kind, (int, np.integer)):
        kind = LOSS_KINDS[int(kind)]
    d = d_scores.clamp(SCORE_EPS, 1 - SCORE_EPS)
    if kind == "minimax":
        return 0.5 * torch.log(1 - d).mean()
    if kind == "heuristic":
        return -0.5 * torch.log(d).mean()
    if kind == "least-square":
        return ((d - 1) ** 2).mean()
    raise ValueError(f"unknown generator loss {kind!r}; expected one of {LOSS_KINDS}")


def condition_targets(transformer: DataTransformer, chosen) -> torch.Tensor:
    """Encoded-row position of each chosen (column, category) pair."""
    chosen = np.asarray(chosen, dtype=np.int64).reshape(-1, 2)
    starts = np.array([b.start for b in transformer.blocks])
    return torch.as_tensor(starts[chosen[:, 0]] + chosen[:, 1])


def condition_loss(fake_soft, targets):
    """Cross-entropy of the chosen one-hot block against the imposed category."""
    p = fake_soft[torch.arange(fake_soft.shape[0]), targets]
    return -torch.log(p.clamp_min(SCORE_EPS)).mean()


def generator_loss(kind, d_scores, fake_soft=None, targets=None):
    """Adversarial term for ``kind`` plus the conditional cross-entropy."""
    loss = adversarial_loss(kind, d_scores)
    if fake_soft is not None and targets is not None:
        loss = loss + condition_loss(fake_soft, targets)
    return loss


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay: float = 1e-6
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)

    def clone(self) -> "AdamState":
        return AdamState(self.step, [t.clone() for t in self.exp_avg], [t.clone() for t in self.exp_avg_sq])


@torch.no_grad()
def adam_step(params, grads, cfg: AdamConfig, state: AdamState) -> AdamState:
    """In-place Adam update with decoupled weight decay and bias correction."""
    params = list(params)
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1 - cfg.beta1 ** state.step
    bc2 = 1 - cfg.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            continue
        if cfg.weight_decay:
            p.mul_(1 - cfg.lr * cfg.weight_decay)
        m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
        denom = (v / bc2).sqrt_().add_(cfg.eps)
        p.addcdiv_(m, denom, value=-cfg.lr / bc1)
    return state


def clone_generator(gen: Generator) -> Generator:
    return copy.deepcopy(gen)


def parameter_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
