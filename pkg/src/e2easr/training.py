"""Epoch-based training loop for the acoustic models."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from .corpus import Utterance, Vocabulary
from .frontend import SpecAugmentPolicy, apply_specaugment
from .network import ModelConfig, build_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    clip: float = 5.0
    seed: int = 0
    specaugment: Optional[SpecAugmentPolicy] = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.clip <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float
    seconds: float


@dataclass
class TrainResult:
    model: torch.nn.Module
    initial_valid_loss: float
    history: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def _targets(utts: Sequence[Utterance], vocab: Vocabulary) -> List[List[int]]:
    return [vocab.encode(u.text) for u in utts]


def mean_loss(model, utts: Sequence[Utterance], vocab: Vocabulary, batch_size: int = 32) -> float:
    """Per-utterance mean loss in eval mode."""
    was = model.training
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(utts), batch_size):
            chunk = utts[i:i + batch_size]
            total += float(model.loss([u.features.frames for u in chunk], _targets(chunk, vocab)))
    model.train(was)
    return total / max(len(utts), 1)


def train_model(config: ModelConfig, train: Sequence[Utterance], valid: Sequence[Utterance],
                vocab: Vocabulary, opts: TrainConfig = TrainConfig()) -> TrainResult:
    """Train from a seeded initialisation; the returned model holds the best-validation weights."""
    if not train:
        raise ValueError("empty training set")
    if config.vocab_size != vocab.num_outputs:
        raise ValueError(f"config has {config.vocab_size} outputs, vocabulary {vocab.num_outputs}")
    dims = {u.features.dim for u in list(train) + list(valid)}
    if dims != {config.input_dim}:
        raise ValueError(f"feature dims {sorted(dims)} do not match input_dim {config.input_dim}")

    torch.manual_seed(opts.seed)
    model = build_model(config)
    rng = np.random.default_rng([opts.seed, 0])
    aug_rng = np.random.default_rng([opts.seed, 1])
    optim = torch.optim.Adam(model.parameters(), lr=opts.lr)
    valid = list(valid) if valid else list(train)
    best_loss = mean_loss(model, valid, vocab)
    result = TrainResult(copy.deepcopy(model).eval(), best_loss)
    log.info("initial valid loss %.4f", best_loss)

    train = list(train)
    targets = _targets(train, vocab)
    for epoch in range(1, opts.epochs + 1):
        start = time.perf_counter()
        model.train()
        total = 0.0
        for idx in _batches(len(train), opts.batch_size, rng):
            feats = []
            for i in idx:
                f = train[i].features
                if opts.specaugment is not None:
                    f = apply_specaugment(f, opts.specaugment, aug_rng)
                feats.append(f.frames)
            loss = model.loss(feats, [targets[i] for i in idx]) / len(idx)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}")
            optim.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), opts.clip)
            optim.step()
            total += loss.item() * len(idx)
        v = mean_loss(model, valid, vocab)
        if not math.isfinite(v):
            raise TrainingDiverged(f"non-finite validation loss in epoch {epoch}")
        entry = EpochLog(epoch, total / len(train), v, time.perf_counter() - start)
        result.history.append(entry)
        log.info("epoch %d: train %.4f valid %.4f (%.1fs)", epoch, entry.train_loss, v, entry.seconds)
        if v < best_loss:
            best_loss = v
            result.best_epoch = epoch
            result.model = copy.deepcopy(model).eval()
    return result
