"""Alignment-lattice objectives: CTC, transducer, joint CTC-attention, cross-entropy.

The lattice losses consume raw logits, normalise them internally and return
the negative log-likelihood together with its gradient with respect to the
logits, computed from the forward (alpha) and backward (beta) grids.
``CTCLossFunction`` and ``TransducerLossFunction`` plug those gradients into
torch autograd for training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from .numerics import LOG_ZERO

BLANK = 0


class InfeasibleAlignmentError(ValueError):
    """No alignment path can produce the target (CTC: too few frames)."""


@dataclass
class AlignmentLattice:
    log_probs: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood_forward: float
    log_likelihood_backward: float


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    lattice: Optional[AlignmentLattice] = None


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _lse2(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b <= LOG_ZERO:
        return a
    return a + np.log1p(np.exp(b - a))


def _lse3(a: float, b: float, c: float) -> float:
    return _lse2(_lse2(a, b), c)


def _check_logits(logits: np.ndarray, ndim: int, name: str) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != ndim:
        raise ValueError(f"{name} expects a {ndim}-d logit array, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise FloatingPointError(f"{name}: non-finite logits")
    return logits


def _check_target(target: Sequence[int], vocab: int, blank: int) -> List[int]:
    target = [int(k) for k in target]
    for k in target:
        if k == blank or not 0 <= k < vocab:
            raise ValueError(f"invalid target label {k} (blank={blank}, V={vocab})")
    return target


# ---------------------------------------------------------------------------
# CTC


def ctc_loss(logits: np.ndarray, target: Sequence[int], blank: int = BLANK) -> LossResult:
    """CTC negative log-likelihood of ``target`` under ``logits`` (T x V)."""
    logits = _check_logits(logits, 2, "ctc_loss")
    T, V = logits.shape
    target = _check_target(target, V, blank)
    U = len(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    if T < U + repeats:
        raise InfeasibleAlignmentError(
            f"{T} frames cannot emit {U} labels with {repeats} repeats"
        )

    lp = _log_softmax(logits)
    ext = [blank]
    for k in target:
        ext += [k, blank]
    S = len(ext)

    def can_skip(s: int) -> bool:
        return s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lse2(a, alpha[t - 1, s - 1])
            if can_skip(s):
                a = _lse2(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + lp[t, ext[s]] if a > LOG_ZERO else LOG_ZERO

    # beta[t, s]: log prob of emitting the rest after frame t given state s at t
    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[t + 1, s] + lp[t + 1, ext[s]]
            if s + 1 < S:
                b = _lse2(b, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
            if s + 2 < S and can_skip(s + 2):
                b = _lse2(b, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
            beta[t, s] = b if b > LOG_ZERO / 2 else LOG_ZERO

    ll_fwd = alpha[T - 1, S - 1] if S == 1 else _lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    ll_bwd = _lse2(alpha[0, 0] + beta[0, 0], alpha[0, 1] + beta[0, 1]) if S > 1 else alpha[0, 0] + beta[0, 0]
    if ll_fwd <= LOG_ZERO / 2:
        raise InfeasibleAlignmentError("target has zero probability")

    # occupancy of label k at frame t, summed over extended positions
    ab = alpha + beta
    occ = np.zeros((T, V))
    for s in range(S):
        occ[:, ext[s]] += np.exp(np.clip(ab[:, s] - ll_fwd, -745.0, 0.0))
    occ[ab.max(axis=1) <= LOG_ZERO / 2] = 0.0
    grad = np.exp(lp) - occ
    lattice = AlignmentLattice(lp, alpha, beta, float(ll_fwd), float(ll_bwd))
    return LossResult(loss=float(-ll_fwd), grad=grad, lattice=lattice)


# ---------------------------------------------------------------------------
# Transducer


def transducer_loss(
    logit_lattice: np.ndarray, target: Sequence[int], blank: int = BLANK
) -> LossResult:
    """Transducer negative log-likelihood over a T x (U+1) x V logit lattice.

    Node (t, u) has emitted u labels by frame t. A blank moves to (t+1, u), the
    label ``target[u]`` moves to (t, u+1); the path terminates with a blank
    from (T-1, U).
    """
    z = _check_logits(logit_lattice, 3, "transducer_loss")
    T, U1, V = z.shape
    if T == 0 or U1 == 0:
        raise ValueError("empty lattice")
    target = _check_target(target, V, blank)
    U = len(target)
    if U1 != U + 1:
        raise ValueError(f"lattice has {U1} label positions, target needs {U + 1}")

    lp = _log_softmax(z)
    lp_blank = lp[:, :, blank]
    lp_label = np.full((T, U1), LOG_ZERO)
    for u in range(U):
        lp_label[:, u] = lp[:, u, target[u]]

    alpha = np.empty((T, U1))
    alpha[0, 0] = 0.0
    for u in range(1, U1):
        alpha[0, u] = alpha[0, u - 1] + lp_label[0, u - 1]
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + lp_blank[t - 1, 0]
        for u in range(1, U1):
            alpha[t, u] = _lse2(
                alpha[t - 1, u] + lp_blank[t - 1, u],
                alpha[t, u - 1] + lp_label[t, u - 1],
            )
    ll_fwd = alpha[T - 1, U] + lp_blank[T - 1, U]

    # beta[t, u]: log prob of finishing from node (t, u), emissions at (t, u) included
    beta = np.empty((T, U1))
    beta[T - 1, U] = lp_blank[T - 1, U]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = beta[T - 1, u + 1] + lp_label[T - 1, u]
    for t in range(T - 2, -1, -1):
        beta[t, U] = beta[t + 1, U] + lp_blank[t, U]
        for u in range(U - 1, -1, -1):
            beta[t, u] = _lse2(
                beta[t + 1, u] + lp_blank[t, u],
                beta[t, u + 1] + lp_label[t, u],
            )
    ll_bwd = beta[0, 0]

    # posterior occupancy of each outgoing arc
    occ = np.zeros((T, U1, V))
    blank_next = np.empty((T, U1))
    blank_next[:-1] = beta[1:]
    blank_next[T - 1] = LOG_ZERO
    blank_next[T - 1, U] = 0.0
    occ[:, :, blank] = np.exp(alpha + lp_blank + blank_next - ll_fwd)
    for u in range(U):
        occ[:, u, target[u]] += np.exp(alpha[:, u] + lp_label[:, u] + beta[:, u + 1] - ll_fwd)

    node_occ = occ.sum(axis=-1, keepdims=True)
    grad = np.exp(lp) * node_occ - occ
    lattice = AlignmentLattice(lp, alpha, beta, float(ll_fwd), float(ll_bwd))
    return LossResult(loss=float(-ll_fwd), grad=grad, lattice=lattice)


# ---------------------------------------------------------------------------
# Combinations and plain cross-entropy


def joint_ctc_attention_loss(ctc_loss_val: float, attention_ce_val: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"CTC weight must lie in [0, 1], got {lam}")
    if not (np.isfinite(ctc_loss_val) and np.isfinite(attention_ce_val)):
        raise FloatingPointError("component losses must be finite")
    return lam * ctc_loss_val + (1.0 - lam) * attention_ce_val


def sequence_cross_entropy(logits: np.ndarray, targets: Sequence[int]) -> LossResult:
    """Mean per-token negative log-likelihood of ``targets`` under U x V logits."""
    logits = _check_logits(logits, 2, "sequence_cross_entropy")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ValueError(f"{len(targets)} targets for {logits.shape[0]} logit rows")
    n = logits.shape[0]
    lp = _log_softmax(logits)
    nll = -lp[np.arange(n), targets]
    grad = np.exp(lp)
    grad[np.arange(n), targets] -= 1.0
    return LossResult(loss=float(nll.mean()), grad=grad / n)


# ---------------------------------------------------------------------------
# torch bridges


class TransducerLossFunction(torch.autograd.Function):
    """Summed transducer loss over a padded batch lattice (B, T, U+1, V)."""

    @staticmethod
    def forward(ctx, lattice, enc_lengths, targets, blank=BLANK):
        z = lattice.detach().cpu().numpy()
        grad = np.zeros_like(z)
        total = 0.0
        for b, (t_len, tgt) in enumerate(zip(enc_lengths, targets)):
            res = transducer_loss(z[b, :t_len, : len(tgt) + 1], tgt, blank)
            total += res.loss
            grad[b, :t_len, : len(tgt) + 1] = res.grad
        ctx.save_for_backward(torch.from_numpy(grad).to(lattice))
        return lattice.new_tensor(total)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out, None, None, None


class CTCLossFunction(torch.autograd.Function):
    """Summed CTC loss over padded logits (B, T, V)."""

    @staticmethod
    def forward(ctx, logits, lengths, targets, blank=BLANK):
        z = logits.detach().cpu().numpy()
        grad = np.zeros_like(z)
        total = 0.0
        for b, (t_len, tgt) in enumerate(zip(lengths, targets)):
            res = ctc_loss(z[b, :t_len], tgt, blank)
            total += res.loss
            grad[b, :t_len] = res.grad
        ctx.save_for_backward(torch.from_numpy(grad).to(logits))
        return logits.new_tensor(total)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out, None, None, None


def transducer_loss_batch(lattice, enc_lengths, targets, blank: int = BLANK):
    return TransducerLossFunction.apply(lattice, list(enc_lengths), [list(t) for t in targets], blank)


def ctc_loss_batch(logits, lengths, targets, blank: int = BLANK):
    return CTCLossFunction.apply(logits, list(lengths), [list(t) for t in targets], blank)
