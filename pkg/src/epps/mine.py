"""Mutual-information penalty between significant and unimportant features.

A statistic network ``T`` scores concatenated ``(s, u)`` vectors; the
Donsker-Varadhan bound ``mean T(joint) - log mean exp T(marginal)`` is the
estimate, and the penalty sums its sigmoid over the pyramid levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .errors import InsufficientBatchError

POOL_CELLS = 4


def reduce_features(x: torch.Tensor, cells: int = POOL_CELLS) -> torch.Tensor:
    """Average-pool to ``cells x cells`` and flatten: ``[B, C, H, W] -> [B, C * cells**2]``."""
    return F.adaptive_avg_pool2d(x, cells).flatten(1)


def derangement(n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise InsufficientBatchError(f"need a batch of at least 2 for marginal pairing, got {n}")
    if n == 2:
        return torch.tensor([1, 0])
    ar = torch.arange(n)
    while True:
        perm = torch.randperm(n, generator=generator)
        if not (perm == ar).any():
            return perm


@dataclass
class MineBatch:
    joint: torch.Tensor  # [B, 2D]
    marginal: torch.Tensor  # [B, 2D]
    level: int
    perm: torch.Tensor


def pair_vectors(a: torch.Tensor, b: torch.Tensor, generator=None, level: int = 0) -> MineBatch:
    perm = derangement(a.shape[0], generator)
    return MineBatch(torch.cat([a, b], dim=1), torch.cat([a, b[perm]], dim=1), level, perm)


def make_pairs(s: torch.Tensor, u: torch.Tensor, generator=None, level: int = 0) -> MineBatch:
    return pair_vectors(reduce_features(s), reduce_features(u), generator, level)


class StatisticNetwork(nn.Module):
    def __init__(self, in_dim: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ELU(),
            nn.Linear(hidden, hidden),
            nn.ELU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(-1)


def dv_bound(t_joint: torch.Tensor, t_marginal: torch.Tensor) -> torch.Tensor:
    # log-mean-exp via logsumexp so large statistics cannot overflow
    return t_joint.mean() - (torch.logsumexp(t_marginal.flatten(), dim=0) - math.log(t_marginal.numel()))


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -grad


def grad_reverse(x: torch.Tensor) -> torch.Tensor:
    return _GradReverse.apply(x)


def mine_estimate(net: StatisticNetwork, batch: MineBatch, adversarial: bool = False) -> torch.Tensor:
    """Mutual-information estimate for one level.

    With ``adversarial`` the statistic network's parameters see reversed
    gradients, so minimising the returned value trains the features to
    reduce MI while ``T`` still tightens the bound.
    """
    if adversarial:
        params = {name: grad_reverse(p) for name, p in net.named_parameters()}
        t_joint = functional_call(net, params, (batch.joint,))
        t_marginal = functional_call(net, params, (batch.marginal,))
    else:
        t_joint, t_marginal = net(batch.joint), net(batch.marginal)
    return dv_bound(t_joint, t_marginal)


class MineHead(nn.Module):
    """One statistic network per pyramid level."""

    def __init__(self, channels: Sequence[int], hidden: int = 64, cells: int = POOL_CELLS):
        super().__init__()
        self.cells = cells
        self.nets = nn.ModuleList(StatisticNetwork(2 * c * cells * cells, hidden) for c in channels)

    def __len__(self) -> int:
        return len(self.nets)

    def __getitem__(self, i: int) -> StatisticNetwork:
        return self.nets[i]


def loss_mi(
    pairs,
    nets: MineHead | Sequence[StatisticNetwork],
    generator: Optional[torch.Generator] = None,
    adversarial: bool = False,
) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Sum over levels of ``sigmoid(estimate)``; also returns the raw per-level estimates."""
    estimates = []
    for pair, net in zip(pairs, nets):
        batch = make_pairs(pair.s, pair.u, generator, pair.level)
        estimates.append(mine_estimate(net, batch, adversarial))
    total = torch.stack([torch.sigmoid(e) for e in estimates]).sum()
    return total, estimates


def fit_statistic_network(
    x: torch.Tensor,
    y: torch.Tensor,
    hidden: int = 64,
    steps: int = 1000,
    lr: float = 1e-3,
    seed: int = 0,
    eval_permutations: int = 16,
) -> float:
    """Train a statistic network alone to maximise the bound on ``(x, y)``.

    Returns the bound averaged over fresh marginal permutations of the same
    sample after training.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    x = x.reshape(len(x), -1).float()
    y = y.reshape(len(y), -1).float()
    net = StatisticNetwork(x.shape[1] + y.shape[1], hidden)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    for _ in range(steps):
        batch = pair_vectors(x, y, gen)
        loss = -mine_estimate(net, batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        vals = [mine_estimate(net, pair_vectors(x, y, gen)).item() for _ in range(eval_permutations)]
    return sum(vals) / len(vals)
