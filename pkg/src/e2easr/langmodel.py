"""Character-level LSTM language model with weight-drop regularisation.

Weight-drop applies DropConnect to each layer's hidden-to-hidden matrix: one
mask per forward call (so fixed along the sequence, redrawn per batch), identity
in eval mode. Training is truncated back-propagation through time with plain
SGD and optional iterate averaging, a simplification of AWD-LSTM's ASGD.

Vocabulary layout matches the acoustic models: output 0 is end-of-sentence,
1..V-1 are units, and the start symbol is input index V.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .numerics import DTYPE

log = logging.getLogger(__name__)


@dataclass
class LMConfig:
    vocab_size: int
    layers: int = 1
    units: int = 64
    embedding_dim: int = 64
    # AWD-LSTM character-level style rates; not tuned for any particular corpus.
    weight_drop: float = 0.5
    input_dropout: float = 0.1
    output_dropout: float = 0.1
    tie_embeddings: bool = False
    init_scale: float = 0.1

    def __post_init__(self):
        for name in ("weight_drop", "input_dropout", "output_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name}={v} outside [0, 1)")
        if self.vocab_size < 2 or self.layers < 1 or self.units < 1 or self.embedding_dim < 1:
            raise ValueError("LM extents must be positive (vocab >= 2)")
        if self.tie_embeddings and self.units != self.embedding_dim:
            raise ValueError("tied embeddings need units == embedding_dim")


@dataclass
class LMState:
    h: List[torch.Tensor]
    c: List[torch.Tensor]

    def detach(self) -> "LMState":
        return LMState([x.detach() for x in self.h], [x.detach() for x in self.c])


def weight_drop_apply(weight: torch.Tensor, p: float, train_mode: bool,
                      rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """DropConnect: keep each entry with probability 1-p and rescale by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"weight-drop rate must be in [0, 1), got {p}")
    if not train_mode or p == 0.0:
        return weight
    keep = torch.rand(weight.shape, generator=rng, dtype=weight.dtype) >= p
    return weight * keep / (1.0 - p)


class WeightDropLSTMLayer(nn.Module):
    def __init__(self, input_dim: int, units: int):
        super().__init__()
        self.units = units
        self.weight_ih = nn.Parameter(torch.empty(4 * units, input_dim))
        self.weight_hh = nn.Parameter(torch.empty(4 * units, units))
        self.bias = nn.Parameter(torch.empty(4 * units))

    def forward(self, x: torch.Tensor, h: torch.Tensor, c: torch.Tensor, weight_hh: torch.Tensor):
        """x: (B, T, I); h, c: (B, H). Gate order (i, f, g, o)."""
        pre = x @ self.weight_ih.T + self.bias
        H = self.units
        outs = []
        for t in range(x.shape[1]):
            z = pre[:, t] + h @ weight_hh.T
            i, f = torch.sigmoid(z[:, :H]), torch.sigmoid(z[:, H:2 * H])
            g, o = torch.tanh(z[:, 2 * H:3 * H]), torch.sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * torch.tanh(c)
            outs.append(h)
        return torch.stack(outs, dim=1), h, c


class CharLM(nn.Module):
    def __init__(self, config: LMConfig):
        super().__init__()
        self.config = config
        V = config.vocab_size
        self.start_id = V
        self.embed = nn.Embedding(V + 1, config.embedding_dim)
        dims = [config.embedding_dim] + [config.units] * config.layers
        self.rnns = nn.ModuleList([WeightDropLSTMLayer(dims[i], dims[i + 1]) for i in range(config.layers)])
        self.in_drop = nn.Dropout(config.input_dropout)
        self.out_drop = nn.Dropout(config.output_dropout)
        self.out_bias = nn.Parameter(torch.empty(V))
        if not config.tie_embeddings:
            self.out_weight = nn.Parameter(torch.empty(V, config.units))
        for p in self.parameters():
            nn.init.uniform_(p, -config.init_scale, config.init_scale)
        self.to(DTYPE)

    @property
    def output_weight(self) -> torch.Tensor:
        if self.config.tie_embeddings:
            return self.embed.weight[: self.config.vocab_size]
        return self.out_weight

    def initial_state(self, batch: int = 1) -> LMState:
        z = [torch.zeros(batch, r.units, dtype=DTYPE) for r in self.rnns]
        return LMState(z, [x.clone() for x in z])

    def forward(self, inputs: torch.Tensor, state: Optional[LMState] = None,
                rng: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, LMState]:
        """inputs: (B, T) label ids. Returns logits (B, T, V) and the carried state."""
        if state is None:
            state = self.initial_state(inputs.shape[0])
        x = self.in_drop(self.embed(inputs))
        hs, cs = [], []
        for i, rnn in enumerate(self.rnns):
            w_hh = weight_drop_apply(rnn.weight_hh, self.config.weight_drop, self.training, rng)
            x, h, c = rnn(x, state.h[i], state.c[i], w_hh)
            hs.append(h)
            cs.append(c)
        x = self.out_drop(x)
        return x @ self.output_weight.T + self.out_bias, LMState(hs, cs)

    def _check_label(self, label: int) -> int:
        label = int(label)
        if not 0 < label <= self.start_id:
            raise ValueError(f"label {label} is not a valid LM input")
        return label

    def score_step(self, state: Optional[LMState], label: int) -> Tuple[torch.Tensor, LMState]:
        label = self._check_label(label)
        with torch.no_grad():
            logits, new = self.forward(torch.tensor([[label]]), state)
        return torch.log_softmax(logits[0, 0], -1), new

    def sequence_log_prob(self, labels: Sequence[int], include_eos: bool = True) -> float:
        """Sum of log-probabilities of ``labels`` (then end-of-sentence) from the start symbol."""
        inputs = [self.start_id] + [self._check_label(k) for k in labels]
        targets = list(labels) + [0]
        if not include_eos:
            inputs, targets = inputs[:-1], targets[:-1]
        if not targets:
            return 0.0
        with torch.no_grad():
            logits, _ = self.forward(torch.tensor([inputs]))
        lp = torch.log_softmax(logits[0], -1)
        return float(lp[torch.arange(len(targets)), torch.tensor(targets)].sum())


def lm_score_step(lm: CharLM, state: Optional[LMState], label: int) -> Tuple[torch.Tensor, LMState]:
    """Log-distribution over the next unit (slot 0 = end-of-sentence) after feeding ``label``."""
    return lm.score_step(state, label)


# ---------------------------------------------------------------------------
# training


@dataclass
class LMTrainConfig:
    epochs: int = 20
    lr: float = 1.0
    batch_size: int = 8
    bptt: int = 32
    clip: float = 0.25
    average_from_epoch: Optional[int] = None
    seed: int = 0


@dataclass
class LMHistory:
    initial_perplexity: float
    perplexities: List[float] = field(default_factory=list)


def _stream(sequences: Sequence[Sequence[int]], start_id: int) -> Tuple[np.ndarray, np.ndarray]:
    inputs, targets = [], []
    for seq in sequences:
        inputs += [start_id] + list(seq)
        targets += list(seq) + [0]
    return np.array(inputs), np.array(targets)


def perplexity(lm: CharLM, sequences: Sequence[Sequence[int]]) -> float:
    was_training = lm.training
    lm.eval()
    total, count = 0.0, 0
    for seq in sequences:
        total -= lm.sequence_log_prob(seq)
        count += len(seq) + 1
    lm.train(was_training)
    return math.exp(total / count)


def train_lm(train: Sequence[Sequence[int]], config: LMConfig, opts: LMTrainConfig = LMTrainConfig(),
             valid: Optional[Sequence[Sequence[int]]] = None) -> Tuple[CharLM, LMHistory]:
    """Train on encoded utterances; returns the model and per-epoch validation perplexity."""
    if not train or not any(len(s) for s in train):
        raise ValueError("cannot train a language model on an empty corpus")
    for seq in train:
        if any(not 0 < int(k) < config.vocab_size for k in seq):
            raise ValueError("corpus contains labels outside the vocabulary")
    valid = list(valid) if valid is not None else list(train)
    torch.manual_seed(opts.seed)
    rng = torch.Generator().manual_seed(opts.seed)
    lm = CharLM(config)
    history = LMHistory(perplexity(lm, valid))
    optim = torch.optim.SGD(lm.parameters(), lr=opts.lr)

    x, y = _stream(train, lm.start_id)
    B = max(1, min(opts.batch_size, len(x)))
    n = len(x) // B
    x = torch.as_tensor(x[: n * B].reshape(B, n))
    y = torch.as_tensor(y[: n * B].reshape(B, n))
    averaged = None
    n_avg = 0
    for epoch in range(1, opts.epochs + 1):
        lm.train()
        state = lm.initial_state(B)
        for s in range(0, n, opts.bptt):
            inp, tgt = x[:, s:s + opts.bptt], y[:, s:s + opts.bptt]
            logits, state = lm(inp, state, rng)
            state = state.detach()
            loss = nn.functional.cross_entropy(logits.reshape(-1, config.vocab_size), tgt.reshape(-1))
            optim.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(lm.parameters(), opts.clip)
            optim.step()
            if opts.average_from_epoch is not None and epoch >= opts.average_from_epoch:
                n_avg += 1
                params = [p.detach().clone() for p in lm.parameters()]
                if averaged is None:
                    averaged = params
                else:
                    for a, p in zip(averaged, params):
                        a += (p - a) / n_avg
        if averaged is not None:
            scored = copy.deepcopy(lm)
            with torch.no_grad():
                for p, a in zip(scored.parameters(), averaged):
                    p.copy_(a)
        else:
            scored = lm
        history.perplexities.append(perplexity(scored, valid))
        log.info("lm epoch %d: valid perplexity %.4f", epoch, history.perplexities[-1])
    final = scored
    final.eval()
    return final, history
