"""Seeded training loop with epoch selection by dev accuracy.

Epoch selection uses a held-out dev split (never any test set); the best
epoch's parameters are restored before the bundle is returned.  Everything
is deterministic given the seed: shuffling uses a local RNG and parameter
snapshots are plain tensor copies.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitSettings:
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5


def _snapshot(modules: Sequence[nn.Module]) -> list[dict[str, torch.Tensor]]:
    return [{k: v.detach().clone() for k, v in m.state_dict().items()} for m in modules]


def _restore(modules: Sequence[nn.Module], states: list[dict[str, torch.Tensor]]) -> None:
    for module, state in zip(modules, states):
        module.load_state_dict(state)


def fit(
    modules: Sequence[nn.Module],
    batch_loss: Callable[[list[int]], torch.Tensor],
    dev_accuracy: Callable[[], float],
    n_train: int,
    settings: FitSettings,
) -> dict:
    """Adam training over index batches; returns the training log.

    ``batch_loss`` maps a list of training indices to a scalar loss;
    ``dev_accuracy`` scores the current parameters on the dev split.  Ties in
    dev accuracy keep the earlier epoch.
    """
    log: list[dict] = []
    if settings.max_epochs <= 0:
        return {"epochs": log, "best_epoch": None, "best_dev_accuracy": None}

    params = [p for m in modules for p in m.parameters()]
    optimizer = torch.optim.Adam(params, lr=settings.lr)
    rng = random.Random(settings.seed)

    best_acc = -1.0
    best_epoch = -1
    best_state = _snapshot(modules)
    stale = 0
    for epoch in range(settings.max_epochs):
        order = list(range(n_train))
        rng.shuffle(order)
        total = 0.0
        n_batches = 0
        for lo in range(0, n_train, settings.batch_size):
            idx = order[lo : lo + settings.batch_size]
            optimizer.zero_grad()
            loss = batch_loss(idx)
            loss.backward()
            optimizer.step()
            total += loss.item()
            n_batches += 1
        acc = dev_accuracy()
        log.append({"epoch": epoch, "train_loss": total / n_batches, "dev_accuracy": acc})
        logger.debug("epoch %d loss %.4f dev %.4f", epoch, total / n_batches, acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_state = _snapshot(modules)
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    _restore(modules, best_state)
    return {"epochs": log, "best_epoch": best_epoch, "best_dev_accuracy": best_acc}
