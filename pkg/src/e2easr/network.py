"""Neural building blocks and the four model families.

``TransducerModel`` covers RNN-T (BLSTM encoder) and Transformer-Transducer
(self-attention encoder); ``AttentionModel`` covers CTC-Attention (BLSTM
encoder, LSTM decoder with additive attention) and the Transformer (self-
attention encoder and decoder) trained with a joint CTC objective.

Label layout follows :class:`e2easr.corpus.Vocabulary`: output slot 0 is blank
(or end-of-sequence for attention decoders), units are 1..V-1, and the start
symbol is fed as index V.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .losses import ctc_loss_batch, transducer_loss_batch
from .numerics import DTYPE

SUBSAMPLING = 4


class Architecture(str, enum.Enum):
    CTC_ATTENTION = "ctc_attention"
    RNNT = "rnnt"
    TRANSFORMER_TRANSDUCER = "transformer_transducer"
    TRANSFORMER = "transformer"

    @property
    def is_transducer(self) -> bool:
        return self in (Architecture.RNNT, Architecture.TRANSFORMER_TRANSDUCER)

    @property
    def self_attention_encoder(self) -> bool:
        return self in (Architecture.TRANSFORMER_TRANSDUCER, Architecture.TRANSFORMER)


@dataclass
class LayerSpec:
    layers: int
    units: int
    dropout: float = 0.0


@dataclass
class AttentionSpec:
    heads: int
    units: int
    dropout: float = 0.0


@dataclass
class ModelConfig:
    architecture: Architecture
    input_dim: int
    vocab_size: int
    encoder: LayerSpec
    decoder: LayerSpec
    attention: Optional[AttentionSpec] = None
    joiner_units: int = 0
    vgg_channels: Tuple[int, int] = (64, 128)
    ffn_multiplier: int = 4
    ctc_weight: float = 0.3
    # None keeps torch's default (fan-in scaled) initialisers
    init_scale: Optional[float] = 0.1

    def __post_init__(self):
        self.architecture = Architecture(self.architecture)
        self.vgg_channels = tuple(self.vgg_channels)
        if isinstance(self.encoder, dict):
            self.encoder = LayerSpec(**self.encoder)
        if isinstance(self.decoder, dict):
            self.decoder = LayerSpec(**self.decoder)
        if isinstance(self.attention, dict):
            self.attention = AttentionSpec(**self.attention)
        self.validate()

    def validate(self) -> None:
        specs = [self.encoder, self.decoder] + ([self.attention] if self.attention else [])
        for s in specs:
            if not 0.0 <= s.dropout < 1.0:
                raise ValueError(f"dropout {s.dropout} outside [0, 1)")
        extents = [self.input_dim, self.vocab_size, self.encoder.layers, self.encoder.units,
                   self.decoder.layers, self.decoder.units, *self.vgg_channels]
        if any(int(e) <= 0 for e in extents):
            raise ValueError("all model extents must be positive")
        if self.vocab_size < 2:
            raise ValueError("vocabulary needs blank plus at least one unit")
        arch = self.architecture
        if arch.is_transducer and self.joiner_units <= 0:
            raise ValueError("transducer models need joiner_units > 0")
        if (arch.self_attention_encoder or arch == Architecture.CTC_ATTENTION) and self.attention is None:
            raise ValueError(f"{arch.value} needs an attention spec")
        if self.attention is not None and self.attention.units % self.attention.heads:
            raise ValueError("attention units must be divisible by the head count")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["vgg_channels"] = list(self.vgg_channels)
        return d

    @classmethod
    def full(cls, architecture, input_dim: int = 83, vocab_size: int = 34) -> "ModelConfig":
        """Full-size configuration. Self-attention encoders map units to d_model and
        attention units to the Q/K/V projection width."""
        arch = Architecture(architecture)
        blstm = LayerSpec(6, 512, 0.4)
        lstm_pred = LayerSpec(2, 256, 0.4)
        if arch == Architecture.CTC_ATTENTION:
            return cls(arch, input_dim, vocab_size, blstm, LayerSpec(2, 256, 0.4), AttentionSpec(1, 256, 0.4))
        if arch == Architecture.RNNT:
            return cls(arch, input_dim, vocab_size, blstm, lstm_pred, joiner_units=256)
        if arch == Architecture.TRANSFORMER_TRANSDUCER:
            return cls(arch, input_dim, vocab_size, LayerSpec(12, 1024, 0.4), lstm_pred,
                       AttentionSpec(8, 512, 0.4), joiner_units=256)
        return cls(arch, input_dim, vocab_size, LayerSpec(12, 1024, 0.5), LayerSpec(2, 1024, 0.5),
                   AttentionSpec(4, 256, 0.5))

    @classmethod
    def toy(cls, architecture, input_dim: int, vocab_size: int, dropout: float = 0.0) -> "ModelConfig":
        arch = Architecture(architecture)
        common = dict(vgg_channels=(16, 32), init_scale=None)
        if arch == Architecture.CTC_ATTENTION:
            return cls(arch, input_dim, vocab_size, LayerSpec(2, 64, dropout), LayerSpec(1, 32, dropout),
                       AttentionSpec(1, 32, dropout), **common)
        if arch == Architecture.RNNT:
            return cls(arch, input_dim, vocab_size, LayerSpec(2, 64, dropout), LayerSpec(1, 32, dropout),
                       joiner_units=32, **common)
        if arch == Architecture.TRANSFORMER_TRANSDUCER:
            return cls(arch, input_dim, vocab_size, LayerSpec(2, 64, dropout), LayerSpec(1, 32, dropout),
                       AttentionSpec(4, 64, dropout), joiner_units=32, **common)
        return cls(arch, input_dim, vocab_size, LayerSpec(2, 64, dropout), LayerSpec(1, 64, dropout),
                   AttentionSpec(4, 64, dropout), **common)

    @classmethod
    def tiny(cls, architecture, input_dim: int = 5, vocab_size: int = 3) -> "ModelConfig":
        """Smallest sensible sizes, for finite-difference gradient checks."""
        arch = Architecture(architecture)
        base = cls.toy(arch, input_dim, vocab_size)
        enc = LayerSpec(1, 4 if arch.self_attention_encoder else 3)
        att = AttentionSpec(2, 4) if base.attention is not None else None
        return replace(base, encoder=enc, decoder=LayerSpec(1, 4 if arch == Architecture.TRANSFORMER else 3),
                       attention=att, joiner_units=3 if arch.is_transducer else 0,
                       vgg_channels=(2, 2), ffn_multiplier=2, init_scale=0.5)


# ---------------------------------------------------------------------------
# containers


@dataclass
class EncoderOutput:
    states: torch.Tensor  # (T', d_enc)
    subsampling_factor: int = SUBSAMPLING

    @property
    def num_frames(self) -> int:
        return self.states.shape[0]


@dataclass
class PredictorState:
    h: torch.Tensor  # (layers, units)
    c: torch.Tensor
    g: torch.Tensor  # output embedding g_u


@dataclass
class DecoderState:
    h: torch.Tensor  # (layers, units)
    c: torch.Tensor
    context: torch.Tensor


def subsampled_length(t: int) -> int:
    return -(-int(t) // SUBSAMPLING)


def _length_mask(lengths, max_len: int) -> torch.Tensor:
    lengths = torch.as_tensor(lengths)
    return torch.arange(max_len)[None, :] < lengths[:, None]


# ---------------------------------------------------------------------------
# blocks


class VGGSubsampler(nn.Module):
    """Two VGG blocks (two 3x3 convs + 2x2 max-pool each): time and frequency shrink by 4."""

    def __init__(self, input_dim: int, channels: Tuple[int, int] = (64, 128)):
        super().__init__()
        c1, c2 = channels
        self.convs = nn.ModuleList([
            nn.Conv2d(1, c1, 3, padding=1), nn.Conv2d(c1, c1, 3, padding=1),
            nn.Conv2d(c1, c2, 3, padding=1), nn.Conv2d(c2, c2, 3, padding=1),
        ])
        self.pool = nn.MaxPool2d(2, stride=2, ceil_mode=True)
        self.output_dim = c2 * subsampled_length(input_dim)

    def forward(self, x: torch.Tensor, lengths: Optional[Sequence[int]] = None):
        """x: (B, T, D). Returns ((B, ceil(T/4), C*ceil(D/4)), lengths)."""
        B, T, _ = x.shape
        if T < SUBSAMPLING:
            raise ValueError(f"VGG subsampling needs at least {SUBSAMPLING} frames, got {T}")
        lengths = torch.full((B,), T) if lengths is None else torch.as_tensor(lengths)
        if int(lengths.min()) < SUBSAMPLING:
            raise ValueError(f"VGG subsampling needs at least {SUBSAMPLING} frames")
        h = x.unsqueeze(1)
        cur = lengths
        for i, conv in enumerate(self.convs):
            h = torch.relu(conv(h))
            # zero padded frames so batched and single-utterance passes agree
            h = h * _length_mask(cur, h.shape[2])[:, None, :, None]
            if i % 2 == 1:
                h = self.pool(h)
                cur = (cur + 1) // 2
        B, C, Tp, Dp = h.shape
        return h.permute(0, 2, 1, 3).reshape(B, Tp, C * Dp), cur


class BLSTMEncoder(nn.Module):
    def __init__(self, input_dim: int, spec: LayerSpec):
        super().__init__()
        self.lstm = nn.LSTM(input_dim, spec.units, num_layers=spec.layers, bidirectional=True,
                            batch_first=True, dropout=spec.dropout if spec.layers > 1 else 0.0)
        self.output_dim = 2 * spec.units

    def forward(self, x: torch.Tensor, lengths) -> torch.Tensor:
        packed = pack_padded_sequence(x, torch.as_tensor(lengths).cpu(), batch_first=True,
                                      enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        return out


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=DTYPE) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with separate query and key/value widths."""

    def __init__(self, query_dim: int, kv_dim: int, attn_dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if attn_dim % heads:
            raise ValueError(f"attention width {attn_dim} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = attn_dim // heads
        self.q = nn.Linear(query_dim, attn_dim)
        self.k = nn.Linear(kv_dim, attn_dim)
        self.v = nn.Linear(kv_dim, attn_dim)
        self.out = nn.Linear(attn_dim, query_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, memory, mask: Optional[torch.Tensor] = None):
        """mask: bool, broadcastable to (B, Tq, Tk); True marks visible keys."""
        B, Tq, _ = query.shape
        Tk = memory.shape[1]

        def split(x, n):
            return x.view(B, n, self.heads, self.d_head).transpose(1, 2)

        q, k, v = split(self.q(query), Tq), split(self.k(memory), Tk), split(self.v(memory), Tk)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = self.dropout(weights) @ v
        ctx = ctx.transpose(1, 2).reshape(B, Tq, self.heads * self.d_head)
        return self.out(ctx), weights


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__(nn.Linear(dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, dim))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, d_model: int, att: AttentionSpec, ffn: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, d_model, att.units, att.heads, att.dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        a, w = self.attn(self.norm1(x), self.norm1(x), mask)
        x = x + self.dropout(a)
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x, w


class TransformerEncoder(nn.Module):
    def __init__(self, input_dim: int, spec: LayerSpec, att: AttentionSpec, ffn_multiplier: int = 4):
        super().__init__()
        d = spec.units
        self.input = nn.Linear(input_dim, d)
        self.blocks = nn.ModuleList(
            [EncoderBlock(d, att, ffn_multiplier * d, spec.dropout) for _ in range(spec.layers)]
        )
        self.norm = nn.LayerNorm(d)
        self.dropout = nn.Dropout(spec.dropout)
        self.output_dim = d

    def forward(self, x, lengths, return_weights: bool = False):
        B, T, _ = x.shape
        h = self.input(x) + sinusoidal_encoding(T, self.output_dim).to(x)
        h = self.dropout(h)
        mask = _length_mask(lengths, T)[:, None, :]
        weights = []
        for block in self.blocks:
            h, w = block(h, mask)
            weights.append(w)
        h = self.norm(h)
        return (h, weights) if return_weights else h


class Predictor(nn.Module):
    """LSTM prediction network over non-blank labels; the start symbol is index ``vocab_size``."""

    def __init__(self, vocab_size: int, spec: LayerSpec):
        super().__init__()
        self.vocab_size = vocab_size
        self.start_id = vocab_size
        self.embed = nn.Embedding(vocab_size + 1, spec.units)
        self.lstm = nn.LSTM(spec.units, spec.units, num_layers=spec.layers, batch_first=True,
                            dropout=spec.dropout if spec.layers > 1 else 0.0)
        self.dropout = nn.Dropout(spec.dropout)
        self.layers = spec.layers
        self.units = spec.units
        self.output_dim = spec.units

    def fresh_state(self) -> PredictorState:
        z = torch.zeros(self.layers, self.units, dtype=self.embed.weight.dtype)
        return PredictorState(z, z.clone(), torch.zeros(self.units, dtype=z.dtype))

    def step(self, state: PredictorState, y_prev: int) -> PredictorState:
        y_prev = int(y_prev)
        if y_prev == 0:
            raise ValueError("blank is never fed to the predictor; reuse the previous state")
        if not 0 < y_prev <= self.vocab_size:
            raise ValueError(f"label {y_prev} out of range")
        e = self.dropout(self.embed(torch.tensor([[y_prev]])))
        out, (h, c) = self.lstm(e, (state.h[:, None], state.c[:, None]))
        return PredictorState(h[:, 0], c[:, 0], self.dropout(out[0, 0]))

    def start_state(self) -> PredictorState:
        return self.step(self.fresh_state(), self.start_id)

    def forward(self, labels: torch.Tensor) -> torch.Tensor:
        """labels: (B, U) padded non-blank labels. Returns g: (B, U+1, units)."""
        B = labels.shape[0]
        start = torch.full((B, 1), self.start_id, dtype=torch.long)
        ys = torch.cat([start, labels.clamp(min=1)], dim=1)
        out, _ = self.lstm(self.dropout(self.embed(ys)))
        return self.dropout(out)


class Joiner(nn.Module):
    """z = W_out tanh(W_enc h + W_pred g + b)."""

    def __init__(self, enc_dim: int, pred_dim: int, hidden: int, vocab_size: int):
        super().__init__()
        self.enc_proj = nn.Linear(enc_dim, hidden)
        self.pred_proj = nn.Linear(pred_dim, hidden, bias=False)
        self.out = nn.Linear(hidden, vocab_size, bias=False)

    def forward(self, h: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.enc_proj.in_features or g.shape[-1] != self.pred_proj.in_features:
            raise ValueError("joiner input widths do not match its configuration")
        return self.out(torch.tanh(self.enc_proj(h) + self.pred_proj(g)))

    def lattice(self, enc: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        """(B, T, d_enc) x (B, U+1, d_pred) -> (B, T, U+1, V)."""
        return self.out(torch.tanh(self.enc_proj(enc)[:, :, None] + self.pred_proj(g)[:, None]))


class AdditiveAttentionDecoder(nn.Module):
    """LSTM decoder with single-head additive (content-based) attention."""

    def __init__(self, vocab_size: int, enc_dim: int, spec: LayerSpec, att_units: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.start_id = vocab_size
        self.units = spec.units
        self.layers = spec.layers
        self.enc_dim = enc_dim
        self.embed = nn.Embedding(vocab_size + 1, spec.units)
        self.att_enc = nn.Linear(enc_dim, att_units)
        self.att_dec = nn.Linear(spec.units, att_units, bias=False)
        self.att_score = nn.Linear(att_units, 1, bias=False)
        self.cells = nn.ModuleList(
            [nn.LSTMCell(spec.units + enc_dim if i == 0 else spec.units, spec.units) for i in range(spec.layers)]
        )
        self.output = nn.Linear(spec.units + enc_dim, vocab_size)
        self.dropout = nn.Dropout(spec.dropout)

    def initial_state(self, batch: int = 1) -> DecoderState:
        z = torch.zeros(self.layers, batch, self.units, dtype=self.embed.weight.dtype)
        return DecoderState(z, z.clone(), torch.zeros(batch, self.enc_dim, dtype=z.dtype))

    def attend(self, enc, query, mask=None):
        """enc: (B, T, d), query: (B, units). Returns (context (B, d), weights (B, T))."""
        e = self.att_score(torch.tanh(self.att_enc(enc) + self.att_dec(query)[:, None])).squeeze(-1)
        if mask is not None:
            e = e.masked_fill(~mask, float("-inf"))
        w = torch.softmax(e, dim=-1)
        return (w[:, :, None] * enc).sum(dim=1), w

    def step_batch(self, state: DecoderState, y_prev: torch.Tensor, enc, mask=None):
        context, w = self.attend(enc, state.h[-1], mask)
        x = torch.cat([self.dropout(self.embed(y_prev)), context], dim=-1)
        hs, cs = [], []
        for i, cell in enumerate(self.cells):
            h, c = cell(x, (state.h[i], state.c[i]))
            hs.append(h)
            cs.append(c)
            x = self.dropout(h)
        logits = self.output(torch.cat([x, context], dim=-1))
        return logits, DecoderState(torch.stack(hs), torch.stack(cs), context), w

    def forward(self, enc, enc_lengths, ys_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits (B, U+1, V) for inputs ys_in (B, U+1) starting with the start symbol."""
        mask = _length_mask(enc_lengths, enc.shape[1])
        state = self.initial_state(enc.shape[0])
        outs = []
        for u in range(ys_in.shape[1]):
            logits, state, _ = self.step_batch(state, ys_in[:, u], enc, mask)
            outs.append(logits)
        return torch.stack(outs, dim=1)


class DecoderBlock(nn.Module):
    def __init__(self, d_model: int, enc_dim: int, att: AttentionSpec, ffn: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, d_model, att.units, att.heads, att.dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, enc_dim, att.units, att.heads, att.dropout)
        self.norm3 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, enc, self_mask, enc_mask):
        n = self.norm1(x)
        x = x + self.dropout(self.self_attn(n, n, self_mask)[0])
        x = x + self.dropout(self.cross_attn(self.norm2(x), enc, enc_mask)[0])
        return x + self.dropout(self.ffn(self.norm3(x)))


class TransformerDecoder(nn.Module):
    def __init__(self, vocab_size: int, enc_dim: int, spec: LayerSpec, att: AttentionSpec, ffn_multiplier: int):
        super().__init__()
        d = spec.units
        self.vocab_size = vocab_size
        self.start_id = vocab_size
        self.d_model = d
        self.embed = nn.Embedding(vocab_size + 1, d)
        self.blocks = nn.ModuleList(
            [DecoderBlock(d, enc_dim, att, ffn_multiplier * d, spec.dropout) for _ in range(spec.layers)]
        )
        self.norm = nn.LayerNorm(d)
        self.output = nn.Linear(d, vocab_size)
        self.dropout = nn.Dropout(spec.dropout)

    def forward(self, enc, enc_lengths, ys_in: torch.Tensor) -> torch.Tensor:
        B, U1 = ys_in.shape
        x = self.dropout(self.embed(ys_in) + sinusoidal_encoding(U1, self.d_model).to(enc))
        causal = torch.tril(torch.ones(U1, U1, dtype=torch.bool))[None]
        enc_mask = _length_mask(enc_lengths, enc.shape[1])[:, None, :]
        for block in self.blocks:
            x = block(x, enc, causal, enc_mask)
        return self.output(self.norm(x))


# ---------------------------------------------------------------------------
# models


def _init_parameters(module: nn.Module, scale: Optional[float]) -> None:
    if scale is None:
        return
    for p in module.parameters():
        nn.init.uniform_(p, -scale, scale)
    for m in module.modules():
        if isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def _pad_features(feats: Sequence, dtype=DTYPE):
    arrays = [np.asarray(getattr(f, "frames", f), dtype=np.float64) for f in feats]
    lengths = [a.shape[0] for a in arrays]
    x = np.zeros((len(arrays), max(lengths), arrays[0].shape[1]))
    for i, a in enumerate(arrays):
        x[i, : a.shape[0]] = a
    return torch.as_tensor(x, dtype=dtype), lengths


def pad_labels(targets: Sequence[Sequence[int]], fill: int = 0) -> torch.Tensor:
    U = max((len(t) for t in targets), default=0)
    out = torch.full((len(targets), U), fill, dtype=torch.long)
    for i, t in enumerate(targets):
        if len(t):
            out[i, : len(t)] = torch.as_tensor(list(t), dtype=torch.long)
    return out


class _EncoderMixin:
    config: ModelConfig

    def _build_encoder(self):
        cfg = self.config
        self.vgg = VGGSubsampler(cfg.input_dim, cfg.vgg_channels)
        if cfg.architecture.self_attention_encoder:
            self.encoder = TransformerEncoder(self.vgg.output_dim, cfg.encoder, cfg.attention, cfg.ffn_multiplier)
        else:
            self.encoder = BLSTMEncoder(self.vgg.output_dim, cfg.encoder)
        self.enc_dim = self.encoder.output_dim

    def encode(self, x: torch.Tensor, lengths=None):
        """Batched encoder: (B, T, D) -> ((B, T', d_enc), T' lengths)."""
        sub, sub_lengths = self.vgg(x, lengths)
        return self.encoder(sub, sub_lengths), sub_lengths

    def encode_features(self, features) -> EncoderOutput:
        x, lengths = _pad_features([features])
        with torch.no_grad():
            enc, _ = self.encode(x, lengths)
        return EncoderOutput(enc[0])


class TransducerModel(_EncoderMixin, nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if not config.architecture.is_transducer:
            raise ValueError(f"{config.architecture.value} is not a transducer architecture")
        self.config = config
        self._build_encoder()
        self.predictor = Predictor(config.vocab_size, config.decoder)
        self.joiner = Joiner(self.enc_dim, self.predictor.output_dim, config.joiner_units, config.vocab_size)
        _init_parameters(self, config.init_scale)
        self.to(DTYPE)

    def lattice(self, feats: Sequence, targets: Sequence[Sequence[int]]):
        x, lengths = _pad_features(feats)
        enc, enc_lengths = self.encode(x, lengths)
        g = self.predictor(pad_labels(targets))
        return self.joiner.lattice(enc, g), enc_lengths

    def loss(self, feats: Sequence, targets: Sequence[Sequence[int]]) -> torch.Tensor:
        """Summed transducer negative log-likelihood over the batch."""
        z, enc_lengths = self.lattice(feats, targets)
        return transducer_loss_batch(z, enc_lengths.tolist(), targets)


class AttentionModel(_EncoderMixin, nn.Module):
    """Encoder with a CTC head plus an attention decoder (joint CTC-attention training)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.architecture.is_transducer:
            raise ValueError(f"{config.architecture.value} is a transducer architecture")
        self.config = config
        self._build_encoder()
        V = config.vocab_size
        self.ctc_head = nn.Linear(self.enc_dim, V)
        if config.architecture == Architecture.TRANSFORMER:
            self.decoder = TransformerDecoder(V, self.enc_dim, config.decoder, config.attention, config.ffn_multiplier)
        else:
            self.decoder = AdditiveAttentionDecoder(V, self.enc_dim, config.decoder, config.attention.units)
        _init_parameters(self, config.init_scale)
        self.to(DTYPE)

    @property
    def start_id(self) -> int:
        return self.config.vocab_size

    def decoder_logits(self, enc, enc_lengths, targets) -> torch.Tensor:
        ys = pad_labels(targets)
        start = torch.full((len(targets), 1), self.start_id, dtype=torch.long)
        ys_in = torch.cat([start, ys.clamp(min=1)], dim=1)
        return self.decoder(enc, enc_lengths, ys_in)

    def losses(self, feats: Sequence, targets: Sequence[Sequence[int]]):
        """(ctc, attention) summed over the batch; attention targets end with eos = 0."""
        x, lengths = _pad_features(feats)
        enc, enc_lengths = self.encode(x, lengths)
        ctc = ctc_loss_batch(self.ctc_head(enc), enc_lengths.tolist(), targets)
        logits = self.decoder_logits(enc, enc_lengths, targets)
        lp = torch.log_softmax(logits, dim=-1)
        att = lp.new_zeros(())
        for b, t in enumerate(targets):
            ys_out = torch.as_tensor(list(t) + [0], dtype=torch.long)
            att = att - lp[b, : len(ys_out)].gather(1, ys_out[:, None]).sum()
        return ctc, att

    def loss(self, feats: Sequence, targets: Sequence[Sequence[int]]) -> torch.Tensor:
        ctc, att = self.losses(feats, targets)
        lam = self.config.ctc_weight
        return lam * ctc + (1.0 - lam) * att

    def decoder_step(self, state, y_prev: int, enc: EncoderOutput):
        """One label step: (log-distribution (V,), new state, attention weights)."""
        if enc.num_frames == 0:
            raise ValueError("empty encoder output")
        memory = enc.states[None]
        if isinstance(self.decoder, TransformerDecoder):
            prefix = tuple(state or ()) + (int(y_prev),)
            ys_in = torch.tensor([prefix])
            logits = self.decoder(memory, [enc.num_frames], ys_in)[0, -1]
            return torch.log_softmax(logits, -1), prefix, None
        if state is None:
            state = self.decoder.initial_state(1)
        logits, new, w = self.decoder.step_batch(state, torch.tensor([int(y_prev)]), memory)
        return torch.log_softmax(logits[0], -1), new, w[0]


def build_model(config: ModelConfig) -> nn.Module:
    if config.architecture.is_transducer:
        return TransducerModel(config)
    return AttentionModel(config)
