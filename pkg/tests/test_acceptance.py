"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Criteria 5 and 6 share one trained toy RNN-T (module fixture).
"""

import itertools
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_RESULTS
from e2easr import decode as dc
from e2easr import frontend as fe
from e2easr.corpus import SyntheticSpec, build_vocabulary, generate_synthetic_corpus
from e2easr.langmodel import LMConfig, LMTrainConfig, train_lm
from e2easr.losses import ctc_loss, ctc_loss_batch, transducer_loss, transducer_loss_batch
from e2easr.network import ModelConfig, build_model
from e2easr.numerics import check_gradients
from e2easr.recognize import SearchMode, recognize
from e2easr.scoring import edit_align, score_corpus
from e2easr.training import TrainConfig, train_model
from oracles import (
    ctc_brute_force_nll,
    edit_counts_dp,
    enumerate_alignment_counts,
    edit_distance_counts,
    transducer_brute_force_nll,
    transducer_sequence_log_prob,
)
from toys import random_transducer


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. loss oracles


def test_01_loss_oracles():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    cases = 0
    for _ in range(200):
        T = int(rng.integers(1, 5))
        U = int(rng.integers(0, 3))
        V = int(rng.integers(2, 4))
        target = [int(k) for k in rng.integers(1, V, size=U)]
        lattice = rng.normal(scale=2.0, size=(T, U + 1, V))
        worst = max(worst, abs(transducer_loss(lattice, target).loss - transducer_brute_force_nll(lattice, target)))
        logits = rng.normal(scale=2.0, size=(T, V))
        repeats = sum(a == b for a, b in zip(target, target[1:]))
        if T >= U + repeats:
            worst = max(worst, abs(ctc_loss(logits, target).loss - ctc_brute_force_nll(logits, target)))
            cases += 1
        cases += 1
    elapsed = time.perf_counter() - start
    record(1, "loss oracles", worst <= 1e-9 and elapsed < 10.0,
           f"{cases} loss evaluations, max |delta| {worst:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. gradient checks


def test_02_gradient_checks():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    reports = {}
    lat = torch.tensor(rng.standard_normal((2, 3, 3, 4)), requires_grad=True)
    reports["transducer loss"] = check_gradients(lambda: transducer_loss_batch(lat, [3, 2], [[1, 3], [2, 2]]), [lat])
    logits = torch.tensor(rng.standard_normal((2, 5, 4)), requires_grad=True)
    reports["ctc loss"] = check_gradients(lambda: ctc_loss_batch(logits, [5, 4], [[1, 1], [3]]), [logits])
    for arch in ("rnnt", "transformer_transducer", "ctc_attention"):
        torch.manual_seed(0)
        model = build_model(ModelConfig.tiny(arch)).eval()
        x = [rng.standard_normal((10, 5)), rng.standard_normal((7, 5))]
        reports[arch] = check_gradients(lambda: model.loss(x, [[1, 2], [2]]), list(model.parameters()),
                                        max_coords_per_param=8)
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in reports.values())
    detail = ", ".join(f"{k} {r.max_rel_error:.1e}" for k, r in reports.items())
    record(2, "gradient checks", worst <= 1e-4 and elapsed < 120.0, f"{detail}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. search soundness


def test_03_search_soundness():
    start = time.perf_counter()
    bit_equal = label_equal = 0
    for seed in range(100):
        V = 3 + seed % 4
        model, enc = random_transducer(seed, vocab_size=V, frames=4 + seed % 5, scale=0.3 + 0.1 * (seed % 8))
        cfg = dc.BeamConfig(beam_size=2 + seed % 7)
        a = dc.beam_search(enc, model, cfg)
        b = dc.improved_beam_search(enc, model, cfg)
        bit_equal += [(h.labels, h.log_score) for h in a] == [(h.labels, h.log_score) for h in b]
        g = dc.greedy_decode(enc, model)
        one = dc.beam_search(enc, model, dc.BeamConfig(beam_size=1))
        label_equal += g.best.labels == one.best.labels
    elapsed = time.perf_counter() - start
    record(3, "search soundness", bit_equal == 100 and label_equal == 100 and elapsed < 60.0,
           f"improved(inf,inf) bit-equal {bit_equal}/100, beam=1 vs greedy {label_equal}/100, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. exhaustive decode oracle


def test_04_exhaustive_decode_oracle():
    agree = 0
    for seed in range(50):
        V = 2 + seed % 2  # blank plus one or two units
        model, enc = random_transducer(1000 + seed, vocab_size=V, frames=2, scale=1.0)
        scorer = dc.NetworkScorer(model)
        cache = {}

        def predictor(prefix):
            prefix = tuple(prefix)
            if prefix not in cache:
                cache[prefix] = (scorer.initial_state() if not prefix
                                 else scorer.advance(predictor(prefix[:-1]), prefix[-1]))
            return cache[prefix]

        def step(t, state):
            return scorer.log_probs(enc.states[t], state)

        exact = {seq: transducer_sequence_log_prob(step, predictor, seq, 2, 2)
                 for n in range(5) for seq in itertools.product(range(1, V), repeat=n)}
        out = dc.beam_search(enc, model, dc.BeamConfig(beam_size=64, max_symbols_per_frame=2))
        agree += out.best.labels == max(exact, key=exact.get)
    record(4, "exhaustive decode oracle", agree == 50, f"{agree}/50 models agree")


# ---------------------------------------------------------------------------
# 5 and 6. learnability and pruned-search efficiency on the synthetic task


@pytest.fixture(scope="module")
def synthetic_task():
    utts = generate_synthetic_corpus(SyntheticSpec(num_utterances=650, seed=0))
    vocab = build_vocabulary([u.text for u in utts], aux_units=())
    return utts[:500], utts[500:550], utts[550:], vocab


@pytest.fixture(scope="module")
def trained_rnnt(synthetic_task):
    train, valid, _, vocab = synthetic_task
    cfg = ModelConfig.toy("rnnt", train[0].features.dim, vocab.num_outputs, dropout=0.2)
    start = time.perf_counter()
    res = train_model(cfg, train, valid, vocab, TrainConfig(epochs=50, batch_size=16, seed=0))
    return res, time.perf_counter() - start


def _cer(model, utts, vocab, mode, cfg):
    rec = recognize(model, utts, vocab, mode, cfg)
    return score_corpus({u.utt_id: u.text for u in utts}, rec.hyps, "char").wer, rec.cost


@pytest.mark.slow
def test_06_learnability(synthetic_task, trained_rnnt):
    train, valid, test, vocab = synthetic_task
    res, seconds = trained_rnnt
    cer, _ = _cer(res.model, test, vocab, SearchMode.BEAM, dc.BeamConfig(beam_size=10))
    # determinism: a short rerun with the same seed reproduces the loss trace exactly
    cfg = ModelConfig.toy("rnnt", train[0].features.dim, vocab.num_outputs, dropout=0.2)
    short = [train_model(cfg, train[:100], valid, vocab, TrainConfig(epochs=2, seed=0)) for _ in range(2)]
    same = [e.valid_loss for e in short[0].history] == [e.valid_loss for e in short[1].history]
    record(6, "learnability", cer <= 0.05 and seconds < 1800 and same,
           f"held-out CER {100 * cer:.2f}% (beam 10), best epoch {res.best_epoch}/50, "
           f"train {seconds:.0f}s, seeded rerun identical: {same}")


@pytest.mark.slow
def test_05_pruned_search_efficiency(synthetic_task, trained_rnnt):
    _, _, dev, vocab = synthetic_task
    model = trained_rnnt[0].model
    start = time.perf_counter()
    base_cer, base_cost = _cer(model, dev, vocab, SearchMode.BEAM, dc.BeamConfig(beam_size=10))
    imp_cer, imp_cost = _cer(model, dev, vocab, SearchMode.IMPROVED,
                             dc.BeamConfig(beam_size=10, expand_beam=2.0, state_beam=1.0))
    elapsed = time.perf_counter() - start
    saving = 1.0 - imp_cost.joiner_calls / base_cost.joiner_calls
    degradation = 100 * (imp_cer - base_cer)
    record(5, "pruned-search efficiency", saving >= 0.10 and degradation <= 1.0 and elapsed < 300,
           f"joiner calls {base_cost.joiner_calls} -> {imp_cost.joiner_calls} ({100 * saving:.1f}% fewer), "
           f"CER {100 * base_cer:.2f}% -> {100 * imp_cer:.2f}%, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. fusion neutrality


def test_07_fusion_neutrality(synthetic_task):
    train, _, dev, vocab = synthetic_task
    lm, _ = train_lm([vocab.encode(u.text) for u in train[:200]],
                     LMConfig(vocab_size=vocab.num_outputs, units=16, embedding_dim=8),
                     LMTrainConfig(epochs=2))
    torch.manual_seed(0)
    model = build_model(ModelConfig.toy("rnnt", dev[0].features.dim, vocab.num_outputs)).eval()
    fused_equal = order_kept = 0
    for u in dev[:20]:
        enc = model.encode_features(u.features.frames)
        for beam in (1, 4):
            cfg = dc.BeamConfig(beam_size=beam, lm_weight=0.0)
            plain = dc.beam_search(enc, model, cfg)
            fused = dc.beam_search(enc, model, cfg, lm=lm)
            fused_equal += [(h.labels, h.log_score) for h in plain] == [(h.labels, h.log_score) for h in fused]
        nbest = dc.beam_search(enc, model, dc.BeamConfig(beam_size=6))
        order_kept += [h.labels for h in dc.nbest_rescore(nbest, lm, 0.0)] == [h.labels for h in nbest]
    record(7, "fusion neutrality", fused_equal == 40 and order_kept == 20,
           f"beta=0 fusion bit-equal {fused_equal}/40 decodes, rescoring order kept {order_kept}/20")


# ---------------------------------------------------------------------------
# 8. SpecAugment contract


def test_08_specaugment_contract():
    rng = np.random.default_rng(8)
    violations = 0
    for i in range(1000):
        T, D = int(rng.integers(2, 60)), int(rng.integers(2, 40))
        zero = i % 10 == 0
        policy = fe.SpecAugmentPolicy(
            num_freq_masks=0 if zero else int(rng.integers(0, 4)),
            max_freq_width=int(rng.integers(0, D)),
            num_time_masks=0 if zero else int(rng.integers(0, 4)),
            max_time_width=int(rng.integers(0, T)),
            mask_value=fe.MaskValue.ZERO if i % 2 else fe.MaskValue.MEAN,
        )
        f = fe.FeatureMatrix(rng.standard_normal((T, D)) + 3.0)
        out, masks = fe.apply_specaugment(f, policy, np.random.default_rng(i), return_masks=True)
        ok = out.frames.shape == (T, D)
        covered = np.zeros((T, D), dtype=bool)
        for m in masks:
            limit = policy.max_freq_width if m.axis == "freq" else policy.max_time_width
            ok &= 0 <= m.width <= limit
            if m.axis == "freq":
                covered[:, m.start:m.start + m.width] = True
            else:
                covered[m.start:m.start + m.width, :] = True
        ok &= np.array_equal(out.frames[~covered], f.frames[~covered])
        ok &= len([m for m in masks if m.axis == "freq"]) == policy.num_freq_masks
        ok &= len([m for m in masks if m.axis == "time"]) == policy.num_time_masks
        if zero:
            ok &= np.array_equal(out.frames, f.frames)
        violations += not ok
    record(8, "SpecAugment contract", violations == 0, f"{violations} violations over 1000 random policies")


# ---------------------------------------------------------------------------
# 9. WER scorer vs DP oracle


def test_09_wer_scorer_oracle():
    rng = np.random.default_rng(9)
    mismatches = 0
    for i in range(500):
        alphabet = list("abcd")[: 2 + i % 3]
        n_ref = int(rng.integers(1, 7 if i < 250 else 25))
        ref = [str(x) for x in rng.choice(alphabet, size=n_ref)]
        hyp = [str(x) for x in rng.choice(alphabet, size=int(rng.integers(0, n_ref + 4)))]
        s = edit_align(ref, hyp)
        got = (s.substitutions, s.deletions, s.insertions)
        expect = edit_counts_dp(ref, hyp)
        if i < 250:
            # short pairs: cross-check the DP oracle against every alignment
            dist = edit_distance_counts(ref, hyp)
            best = min((c for c in enumerate_alignment_counts(ref, hyp) if sum(c) == dist),
                       key=lambda c: c[1] + c[2])
            mismatches += best != expect
        mismatches += got != expect
    record(9, "WER scorer vs DP oracle", mismatches == 0, f"{mismatches} S/D/I mismatches over 500 pairs")


# ---------------------------------------------------------------------------
# 10. feature pipeline


def test_10_feature_pipeline():
    t = np.arange(16000) / 16000.0
    tone = fe.Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t), 16000)
    fbank = fe.compute_features(tone, "fbank80")
    both = fe.compute_features(tone, "fbank80_pitch3")
    _, centres = fe.mel_filterbank(80, 512, 16000)
    peak = np.bincount(np.argmax(fbank.frames, axis=1)).argmax()
    nearest = int(np.argmin(np.abs(centres - 1000.0)))
    ok = fbank.frames.shape == (98, 80) and both.dim == 83 and abs(int(peak) - nearest) <= 1
    record(10, "feature pipeline", ok,
           f"fbank {fbank.frames.shape}, fbank+pitch D={both.dim}, 1 kHz tone peaks in mel bin {peak} "
           f"(centre {centres[peak]:.0f} Hz)")
