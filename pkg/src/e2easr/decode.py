"""Inference-time search for transducer and attention models.

Transducer search is time-synchronous: per encoder frame, hypotheses that
end in blank form the set B; the set A holds hypotheses still emitting labels
in that frame. The improved variant adds two log-domain prunings
(``expand_beam`` on which labels a hypothesis may extend with, ``state_beam``
on how far A may trail B before the frame is abandoned).

Scores are kept as Python floats so that equivalent searches produce
bit-identical results.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Protocol, Tuple, Union

import numpy as np
import torch

from .network import AttentionModel, EncoderOutput, TransducerModel
from .numerics import log_sum_exp

BLANK = 0
EOS = 0


@dataclass
class Hypothesis:
    labels: Tuple[int, ...]
    log_score: float
    transducer_score: float = 0.0
    lm_score: float = 0.0
    predictor_state: Any = None
    lm_state: Any = None

    def __post_init__(self):
        self.labels = tuple(int(k) for k in self.labels)
        if BLANK in self.labels:
            raise ValueError("hypothesis labels must not contain blank")


@dataclass
class BeamConfig:
    beam_size: int = 10
    expand_beam: float = math.inf
    state_beam: float = math.inf
    lm_weight: float = 0.0
    max_symbols_per_frame: int = 5

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.expand_beam < 0 or self.state_beam < 0:
            raise ValueError("expand_beam and state_beam must be >= 0")
        if self.lm_weight < 0:
            raise ValueError("lm_weight must be >= 0")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")


@dataclass
class NBestList:
    hypotheses: List[Hypothesis]
    joiner_calls: int = 0

    def __post_init__(self):
        scores = [h.log_score for h in self.hypotheses]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("n-best list must be sorted by fused score, best first")

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)


class TransducerScorer(Protocol):
    """What the transducer searches need from a model."""

    def initial_state(self) -> Any: ...

    def advance(self, state: Any, label: int) -> Any: ...

    def log_probs(self, h_t: torch.Tensor, state: Any) -> np.ndarray: ...


class NetworkScorer:
    """Adapts a :class:`TransducerModel` to the scorer interface (one joiner evaluation per call)."""

    def __init__(self, model: TransducerModel):
        self.model = model

    def initial_state(self):
        with torch.no_grad():
            return self.model.predictor.start_state()

    def advance(self, state, label: int):
        with torch.no_grad():
            return self.model.predictor.step(state, label)

    def log_probs(self, h_t: torch.Tensor, state) -> np.ndarray:
        with torch.no_grad():
            z = self.model.joiner(h_t, state.g)
        return torch.log_softmax(z, -1).numpy()


def _scorer(model) -> TransducerScorer:
    if isinstance(model, TransducerModel):
        if model.training:
            raise ValueError("decode with the model in eval mode")
        return NetworkScorer(model)
    if isinstance(model, AttentionModel):
        raise ValueError("transducer search needs a transducer model")
    return model


class _LMContext:
    """Per-prefix cache of the LM's next-label distribution."""

    def __init__(self, lm, num_outputs: int):
        if lm.config.vocab_size != num_outputs:
            raise ValueError(f"LM has {lm.config.vocab_size} outputs, acoustic model {num_outputs}")
        self.lm = lm
        self.cache: Dict[Tuple[int, ...], Tuple[np.ndarray, Any]] = {}

    def dist(self, labels: Tuple[int, ...]) -> Tuple[np.ndarray, Any]:
        if labels not in self.cache:
            if labels:
                _, prev_state = self.dist(labels[:-1])
                lp, state = self.lm.score_step(prev_state, labels[-1])
            else:
                lp, state = self.lm.score_step(None, self.lm.start_id)
            self.cache[labels] = (lp.numpy(), state)
        return self.cache[labels]


def shallow_fusion_extend(hyp: Hypothesis, label: int, transducer_lp: float,
                          lm_log_prob: float, beta: float) -> Hypothesis:
    """Extend ``hyp`` by a non-blank ``label``: score += transducer_lp + beta * lm_log_prob."""
    if int(label) == BLANK:
        raise ValueError("blank extensions never take an LM score")
    lm_term = beta * lm_log_prob
    return Hypothesis(
        labels=hyp.labels + (int(label),),
        log_score=hyp.log_score + transducer_lp + lm_term,
        transducer_score=hyp.transducer_score + transducer_lp,
        lm_score=hyp.lm_score + lm_log_prob,
    )


def _blank_extend(hyp: Hypothesis, blank_lp: float) -> Hypothesis:
    return replace(hyp, log_score=hyp.log_score + blank_lp,
                   transducer_score=hyp.transducer_score + blank_lp)


def _close_with_eos(hyps: List[Hypothesis], lmc: Optional[_LMContext], beta: float) -> List[Hypothesis]:
    if lmc is None:
        return hyps
    out = []
    for h in hyps:
        eos_lp = float(lmc.dist(h.labels)[0][EOS])
        out.append(replace(h, log_score=h.log_score + beta * eos_lp, lm_score=h.lm_score + eos_lp))
    return out


def _sorted(hyps: Iterable[Hypothesis]) -> List[Hypothesis]:
    return sorted(hyps, key=lambda h: (-h.log_score, h.labels))


def greedy_decode(enc: EncoderOutput, model, max_symbols_per_frame: int = 5,
                  lm=None, lm_weight: float = 0.0) -> NBestList:
    """Per frame, emit argmax labels until blank wins or the symbol cap is hit."""
    if enc.num_frames == 0:
        raise ValueError("empty encoder output")
    scorer = _scorer(model)
    lmc = _LMContext(lm, _num_outputs(scorer, enc)) if lm is not None else None
    hyp = Hypothesis((), 0.0, predictor_state=scorer.initial_state())
    calls = 0
    for t in range(enc.num_frames):
        h_t = enc.states[t]
        emitted = 0
        while True:
            lp = scorer.log_probs(h_t, hyp.predictor_state)
            calls += 1
            fused = lp.copy()
            lm_lp = None
            if lmc is not None:
                lm_lp = lmc.dist(hyp.labels)[0]
                fused[1:] = lp[1:] + lm_weight * lm_lp[1:]
            k = int(np.argmax(fused))
            if k == BLANK or emitted >= max_symbols_per_frame:
                hyp = _blank_extend(hyp, float(lp[BLANK]))
                break
            state = scorer.advance(hyp.predictor_state, k)
            hyp = shallow_fusion_extend(hyp, k, float(lp[k]), 0.0 if lm_lp is None else float(lm_lp[k]),
                                        lm_weight if lmc is not None else 0.0)
            hyp.predictor_state = state
            emitted += 1
    return NBestList(_close_with_eos([hyp], lmc, lm_weight), calls)


def _num_outputs(scorer, enc: EncoderOutput) -> int:
    if isinstance(scorer, NetworkScorer):
        return scorer.model.config.vocab_size
    return len(scorer.log_probs(enc.states[0], scorer.initial_state()))


@dataclass(order=True)
class _Entry:
    key: Tuple[float, Tuple[int, ...]]
    hyp: Hypothesis = field(compare=False)
    emitted: int = field(compare=False, default=0)


def _time_sync_search(enc: EncoderOutput, scorer, cfg: BeamConfig, lm=None,
                      pruned: bool = False) -> NBestList:
    T = enc.num_frames
    if T == 0:
        raise ValueError("empty encoder output")
    lmc = _LMContext(lm, _num_outputs(scorer, enc)) if lm is not None else None
    beta = cfg.lm_weight if lmc is not None else 0.0
    expand_beam = cfg.expand_beam if pruned else math.inf
    state_beam = cfg.state_beam if pruned else math.inf
    pred_cache: Dict[Tuple[int, ...], Any] = {(): scorer.initial_state()}

    def pred_state(labels):
        if labels not in pred_cache:
            pred_cache[labels] = scorer.advance(pred_state(labels[:-1]), labels[-1])
        return pred_cache[labels]

    calls = 0
    B: List[Hypothesis] = [Hypothesis((), 0.0)]
    for t in range(T):
        h_t = enc.states[t]
        A = [_Entry((-h.log_score, h.labels), h) for h in B]
        heapq.heapify(A)
        merged: Dict[Tuple[int, ...], Hypothesis] = {}
        while A:
            best_a = A[0].hyp.log_score
            ranked = sorted((h.log_score for h in merged.values()), reverse=True)
            if len(ranked) >= cfg.beam_size and ranked[cfg.beam_size - 1] >= best_a:
                break
            if ranked and ranked[0] - best_a > state_beam:
                break
            entry = heapq.heappop(A)
            hyp = entry.hyp
            lp = scorer.log_probs(h_t, pred_state(hyp.labels))
            calls += 1

            ext = _blank_extend(hyp, float(lp[BLANK]))
            prev = merged.get(ext.labels)
            if prev is not None:
                ext = replace(ext,
                              log_score=log_sum_exp([prev.log_score, ext.log_score]),
                              transducer_score=log_sum_exp([prev.transducer_score, ext.transducer_score]))
            merged[ext.labels] = ext

            if entry.emitted >= cfg.max_symbols_per_frame:
                continue
            threshold = float(lp.max()) - expand_beam
            lm_lp = lmc.dist(hyp.labels)[0] if lmc is not None else None
            for k in range(1, len(lp)):
                if lp[k] < threshold:
                    continue
                new = shallow_fusion_extend(hyp, k, float(lp[k]),
                                            0.0 if lm_lp is None else float(lm_lp[k]), beta)
                heapq.heappush(A, _Entry((-new.log_score, new.labels), new, entry.emitted + 1))
        B = _sorted(merged.values())[: cfg.beam_size]
    final = _sorted(_close_with_eos(B, lmc, beta))
    for h in final:
        h.predictor_state = pred_state(h.labels)
        if lmc is not None:
            h.lm_state = lmc.dist(h.labels)[1]
    return NBestList(final, calls)


def beam_search(enc: EncoderOutput, model, cfg: BeamConfig = BeamConfig(), lm=None) -> NBestList:
    """Time-synchronous transducer beam search without pruning.

    With ``beam_size == 1`` this is greedy decoding: the A/B recursion at
    width one can trade an emitted label for a blank and so is not itself
    greedy-equivalent.
    """
    scorer = _scorer(model)
    if cfg.beam_size == 1:
        return greedy_decode(enc, scorer, cfg.max_symbols_per_frame, lm, cfg.lm_weight)
    return _time_sync_search(enc, scorer, cfg, lm, pruned=False)


def improved_beam_search(enc: EncoderOutput, model, cfg: BeamConfig = BeamConfig(), lm=None) -> NBestList:
    """Beam search with expand_beam and state_beam pruning (identical to beam_search at inf, inf)."""
    scorer = _scorer(model)
    if cfg.beam_size == 1:
        return greedy_decode(enc, scorer, cfg.max_symbols_per_frame, lm, cfg.lm_weight)
    return _time_sync_search(enc, scorer, cfg, lm, pruned=True)


def nbest_rescore(nbest: NBestList, lm, beta: float) -> NBestList:
    """Re-rank by transducer score + beta * full-sequence LM log-prob (end-of-sentence included)."""
    if not len(nbest):
        raise ValueError("cannot rescore an empty n-best list")
    out = []
    for h in nbest:
        lm_lp = lm.sequence_log_prob(h.labels)
        out.append(replace(h, log_score=h.transducer_score + beta * lm_lp, lm_score=lm_lp))
    out.sort(key=lambda h: -h.log_score)
    return NBestList(out, nbest.joiner_calls)


# ---------------------------------------------------------------------------
# attention / CTC joint decoding


class CTCPrefixScorer:
    """Prefix probabilities under CTC: log P(prefix is the start of the labelling)."""

    def __init__(self, log_probs: np.ndarray, blank: int = BLANK):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.blank = blank
        T = self.lp.shape[0]
        self.T = T
        # (r_n, r_b) for the empty prefix
        self.initial = (np.full(T, -np.inf), np.cumsum(self.lp[:, blank]))

    def full(self, state) -> float:
        r_n, r_b = state
        return float(np.logaddexp(r_n[-1], r_b[-1]))

    def extend(self, prefix: Tuple[int, ...], state, c: int):
        """Returns (prefix score of prefix + c, state of prefix + c)."""
        r_n_g, r_b_g = state
        T, lp = self.T, self.lp
        r_n = np.full(T, -np.inf)
        r_b = np.full(T, -np.inf)
        if not prefix:
            r_n[0] = lp[0, c]
        if prefix and prefix[-1] == c:
            phi = r_b_g
        else:
            phi = np.logaddexp(r_n_g, r_b_g)
        psi = r_n[0]
        for t in range(1, T):
            r_n[t] = np.logaddexp(r_n[t - 1], phi[t - 1]) + lp[t, c]
            r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + lp[t, self.blank]
            psi = np.logaddexp(psi, phi[t - 1] + lp[t, c])
        return float(psi), (r_n, r_b)


@dataclass
class _LabelHyp:
    labels: Tuple[int, ...]
    score: float
    att: float
    ctc: float
    dec_state: Any
    ctc_state: Any


def _fuse(att: float, ctc: float, w: float) -> float:
    if w == 0.0:
        return att
    if w == 1.0:
        return ctc
    return (1.0 - w) * att + w * ctc


def attention_joint_decode(enc: EncoderOutput, model: AttentionModel, cfg: BeamConfig = BeamConfig(),
                           ctc_weight: float = 0.3, max_len: Optional[int] = None) -> NBestList:
    """Label-synchronous beam search scoring (1-w) * attention + w * CTC prefix score.

    Every step extends each live hypothesis with every unit or end-of-sequence.
    Both score components can only fall as a prefix grows, so the search stops
    once the best finished hypothesis beats every live one. In the returned
    hypotheses ``transducer_score`` holds the attention log-prob (end-of-sequence
    included) and ``lm_score`` the CTC log-prob.
    """
    if not isinstance(model, AttentionModel):
        raise ValueError("joint decoding needs a ctc_attention or transformer model")
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError("ctc_weight must be in [0, 1]")
    if model.training:
        raise ValueError("decode with the model in eval mode")
    T = enc.num_frames
    if T == 0:
        raise ValueError("empty encoder output")
    max_len = T if max_len is None else max_len
    with torch.no_grad():
        ctc_lp = torch.log_softmax(model.ctc_head(enc.states), -1).numpy()
    ctc = CTCPrefixScorer(ctc_lp)
    V = ctc_lp.shape[1]
    use_ctc = ctc_weight > 0.0

    live = [_LabelHyp((), 0.0, 0.0, 0.0, None, ctc.initial)]
    ended: List[_LabelHyp] = []
    for step in range(max_len + 1):
        candidates: List[_LabelHyp] = []
        for h in live:
            y_prev = h.labels[-1] if h.labels else model.start_id
            with torch.no_grad():
                att_lp, dec_state, _ = model.decoder_step(h.dec_state, y_prev, enc)
            att_lp = att_lp.numpy()
            ctc_full = ctc.full(h.ctc_state) if use_ctc else 0.0
            att = h.att + float(att_lp[EOS])
            ended.append(_LabelHyp(h.labels, _fuse(att, ctc_full, ctc_weight), att, ctc_full, None, None))
            if step == max_len:
                continue
            for c in range(1, V):
                if use_ctc:
                    ctc_score, ctc_state = ctc.extend(h.labels, h.ctc_state, c)
                else:
                    ctc_score, ctc_state = 0.0, None
                att = h.att + float(att_lp[c])
                candidates.append(_LabelHyp(h.labels + (c,), _fuse(att, ctc_score, ctc_weight),
                                            att, ctc_score, dec_state, ctc_state))
        candidates.sort(key=lambda h: (-h.score, h.labels))
        live = [h for h in candidates if h.score > -math.inf][: cfg.beam_size]
        ended.sort(key=lambda h: (-h.score, h.labels))
        ended = ended[: cfg.beam_size]
        if not live or (ended and ended[0].score >= live[0].score):
            break
    hyps = [Hypothesis(h.labels, h.score, transducer_score=h.att, lm_score=h.ctc) for h in ended]
    return NBestList(hyps, 0)


# ---------------------------------------------------------------------------
# output files


def write_hypotheses(path: Union[str, Path], hyps: Dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(hyps):
            f.write(f"{utt}\t{hyps[utt]}\n")


def read_hypotheses(path: Union[str, Path]) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        utt, _, text = line.partition("\t")
        out[utt] = text
    return out


def write_nbest(path: Union[str, Path], nbests: Dict[str, NBestList], vocab) -> None:
    """One line per entry: ``utt_id rank fused transducer lm text``."""
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(nbests):
            for rank, h in enumerate(nbests[utt], 1):
                f.write(f"{utt} {rank} {h.log_score:.6f} {h.transducer_score:.6f} "
                        f"{h.lm_score:.6f} {vocab.decode(h.labels)}\n")
