"""Corpus-level decoding: features in, transcripts and cost accounting out."""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

from .corpus import Utterance, Vocabulary
from .decode import (
    BeamConfig,
    NBestList,
    attention_joint_decode,
    beam_search,
    greedy_decode,
    improved_beam_search,
    nbest_rescore,
)
from .network import AttentionModel
from .scoring import DecodeCost


class SearchMode(str, enum.Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    IMPROVED = "improved"


@dataclass
class Recognition:
    hyps: Dict[str, str]
    nbests: Dict[str, NBestList] = field(default_factory=dict)
    cost: DecodeCost = field(default_factory=DecodeCost)


def decode_one(model, utt: Utterance, mode: SearchMode, cfg: BeamConfig, lm=None,
               rescore_weight: Optional[float] = None) -> NBestList:
    enc = model.encode_features(utt.features.frames)
    if isinstance(model, AttentionModel):
        out = attention_joint_decode(enc, model, cfg, model.config.ctc_weight)
    elif SearchMode(mode) == SearchMode.GREEDY:
        out = greedy_decode(enc, model, cfg.max_symbols_per_frame, lm, cfg.lm_weight)
    elif SearchMode(mode) == SearchMode.BEAM:
        out = beam_search(enc, model, cfg, lm)
    else:
        out = improved_beam_search(enc, model, cfg, lm)
    if rescore_weight is not None and lm is not None:
        out = nbest_rescore(out, lm, rescore_weight)
    return out


def recognize(model, utts: Sequence[Utterance], vocab: Vocabulary, mode=SearchMode.IMPROVED,
              cfg: BeamConfig = BeamConfig(), lm=None, rescore_weight: Optional[float] = None,
              jobs: int = 1) -> Recognition:
    """Decode every utterance; results do not depend on ``jobs``."""
    model.eval()

    def run(u):
        start = time.perf_counter()
        out = decode_one(model, u, mode, cfg, lm, rescore_weight)
        return u.utt_id, out, time.perf_counter() - start

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, utts))
    else:
        results = [run(u) for u in utts]
    rec = Recognition({})
    for utt_id, out, secs in results:
        rec.nbests[utt_id] = out
        rec.hyps[utt_id] = vocab.decode(out.best.labels)
        rec.cost = rec.cost + DecodeCost(out.joiner_calls, secs, 1)
    return rec
