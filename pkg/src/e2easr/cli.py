"""Command-line entry point: ``e2easr <command> [--config FILE] [flags]``.

Every command accepts ``--config`` pointing at a plain ``key = value`` file
whose keys are the command's long flag names (dashes or underscores).
Precedence is built-in default < config file < explicit flag. Unknown keys
are rejected. The resolved configuration is logged at the start of a run.

Exit codes: 0 success, 1 task failure, 2 usage or I/O error.
Log verbosity comes from the ``E2EASR_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .corpus import (
    DEFAULT_AUX_UNITS,
    DataDirError,
    SyntheticSpec,
    Utterance,
    Vocabulary,
    build_vocabulary,
    generate_synthetic_corpus,
    load_corpus,
    load_data_dir,
    save_corpus,
)
from .decode import BeamConfig, write_hypotheses, write_nbest, read_hypotheses
from .frontend import FeatureKind, SpecAugmentPolicy, apply_specaugment, cmvn, compute_features, read_wav
from .langmodel import LMConfig, LMTrainConfig, train_lm
from .network import Architecture, ModelConfig
from .recognize import SearchMode, recognize
from .scoring import alignment_report, score_corpus, summary_csv, summary_table
from .training import TrainConfig, TrainingDiverged, train_model

log = logging.getLogger("e2easr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files


def read_config_file(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} does not exist")
    out = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for key, text in values.items():
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(text)
        elif action.type is not None:
            try:
                defaults[key] = action.type(text)
            except (TypeError, ValueError) as e:
                raise UsageError(f"config key {key}: {e}") from None
        else:
            defaults[key] = text
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"config key {key}: {text!r} not in {sorted(action.choices)}")
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# helpers


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _load_features_dir(path: str) -> List[Utterance]:
    p = _require_dir(path, "feature directory")
    try:
        return load_corpus(p, FeatureKind.CONCAT)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from None


def _spec_policy(args) -> SpecAugmentPolicy:
    return SpecAugmentPolicy(args.freq_masks, args.freq_width, args.time_masks, args.time_width)


def _aux_units(text: str) -> Sequence[str]:
    if text == "default":
        return DEFAULT_AUX_UNITS
    if text == "none":
        return ()
    return tuple(u for u in text.split(",") if u)


def _add_specaugment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--specaugment", action="store_true", help="apply SpecAugment masks")
    p.add_argument("--freq-masks", type=int, default=2)
    p.add_argument("--freq-width", type=int, default=10)
    p.add_argument("--time-masks", type=int, default=2)
    p.add_argument("--time-width", type=int, default=5)


# ---------------------------------------------------------------------------
# commands


def cmd_features(args) -> int:
    data = load_data_dir(_require_dir(args.in_dir, "data directory"))
    kind = FeatureKind(args.feature_kind)
    policy = _spec_policy(args) if args.specaugment else None

    def extract(utt_id: str) -> Utterance:
        feats = compute_features(read_wav(data.audio_path(utt_id)), kind)
        if args.cmvn:
            feats = cmvn(feats)
        if policy is not None:
            # per-utterance stream so results do not depend on --jobs
            rng = np.random.default_rng([args.seed, data.utt_ids.index(utt_id)])
            feats = apply_specaugment(feats, policy, rng)
        return Utterance(utt_id, data.text[utt_id], feats)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        utts = list(pool.map(extract, data.utt_ids))
    save_corpus(utts, args.out_dir)
    log.info("wrote %d utterances of %d-dim %s features to %s", len(utts), utts[0].features.dim if utts else 0,
             kind.value, args.out_dir)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(alphabet=args.alphabet, num_utterances=args.num_utterances,
                         length_range=(args.min_length, args.max_length),
                         frames_per_char=(args.min_frames, args.max_frames), feat_dim=args.feat_dim,
                         seed=args.seed, noise=args.noise)
    try:
        spec.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    utts = generate_synthetic_corpus(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = _parse_splits(args.splits, len(utts))
    start = 0
    for name, count in splits:
        save_corpus(utts[start:start + count], out / name if name else out)
        start += count
    build_vocabulary([u.text for u in utts], aux_units=()).save(out / "units.txt")
    log.info("wrote %d synthetic utterances to %s (%s)", len(utts), out,
             ", ".join(f"{n or '.'}={c}" for n, c in splits))
    return EXIT_OK


def _parse_splits(text: str, total: int):
    if not text:
        return [("", total)]
    out = []
    for part in text.split(","):
        name, _, count = part.partition(":")
        if not name or not count.isdigit():
            raise UsageError(f"bad split {part!r}; expected name:count")
        out.append((name, int(count)))
    if sum(c for _, c in out) > total:
        raise UsageError(f"splits ask for {sum(c for _, c in out)} utterances, corpus has {total}")
    return out


def _vocabulary(args, texts: Sequence[str]) -> Vocabulary:
    if args.units:
        if not Path(args.units).is_file():
            raise UsageError(f"unit list {args.units} does not exist")
        return Vocabulary.load(args.units)
    return build_vocabulary(texts, _aux_units(args.aux_units))


def cmd_train(args) -> int:
    train = _load_features_dir(args.train_dir)
    valid = _load_features_dir(args.valid_dir) if args.valid_dir else []
    if not train:
        raise UsageError("training directory holds no utterances")
    vocab = _vocabulary(args, [u.text for u in train])
    input_dim = train[0].features.dim
    preset = {"toy": ModelConfig.toy, "full": ModelConfig.full, "tiny": ModelConfig.tiny}[args.preset]
    if args.preset == "toy":
        cfg = ModelConfig.toy(args.arch, input_dim, vocab.num_outputs, dropout=args.dropout)
    else:
        cfg = preset(args.arch, input_dim=input_dim, vocab_size=vocab.num_outputs)
    cfg = replace(cfg, ctc_weight=args.ctc_weight)
    opts = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, clip=args.clip, seed=args.seed,
                       specaugment=_spec_policy(args) if args.specaugment else None)
    try:
        res = train_model(cfg, train, valid, vocab, opts)
    except KeyError as e:
        raise UsageError(f"transcript unit {e} missing from the vocabulary") from None
    history = [vars(e) for e in res.history]
    ckpt_io.save_model(args.out, res.model, vocab, {"best_epoch": res.best_epoch, "seed": args.seed,
                                                    "initial_valid_loss": res.initial_valid_loss,
                                                    "valid_losses": [e.valid_loss for e in res.history]})
    Path(str(args.out) + ".log.json").write_text(json.dumps(
        {"initial_valid_loss": res.initial_valid_loss, "best_epoch": res.best_epoch, "history": history},
        indent=2))
    log.info("saved best checkpoint (epoch %d) to %s", res.best_epoch, args.out)
    return EXIT_OK


def _read_text_lines(path: str) -> List[str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"text corpus {p} does not exist")
    return [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_train_lm(args) -> int:
    lines = _read_text_lines(args.text)
    valid_lines = _read_text_lines(args.valid_text) if args.valid_text else None
    if args.model:
        _, vocab, _ = _load_checkpoint(ckpt_io.load_model, args.model)
    else:
        vocab = _vocabulary(args, lines)
    try:
        train = [vocab.encode(t) for t in lines]
        valid = [vocab.encode(t) for t in valid_lines] if valid_lines else None
    except KeyError as e:
        raise UsageError(f"vocabulary does not cover the corpus: {e}") from None
    cfg = LMConfig(vocab_size=vocab.num_outputs, layers=args.layers, units=args.units_lm,
                   embedding_dim=args.embedding_dim, weight_drop=args.weight_drop,
                   input_dropout=args.input_dropout, output_dropout=args.output_dropout,
                   tie_embeddings=args.tie_embeddings)
    opts = LMTrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, bptt=args.bptt,
                         clip=args.clip, average_from_epoch=args.average_from, seed=args.seed)
    lm, hist = train_lm(train, cfg, opts, valid)
    if hist.perplexities and not all(math.isfinite(p) for p in hist.perplexities):
        log.error("LM training diverged")
        return EXIT_FAILURE
    ckpt_io.save_lm(args.out, lm, vocab, {"initial_perplexity": hist.initial_perplexity,
                                          "perplexities": hist.perplexities})
    log.info("saved LM to %s (final valid perplexity %s)", args.out,
             f"{hist.perplexities[-1]:.3f}" if hist.perplexities else "n/a")
    return EXIT_OK


def _load_checkpoint(loader, path):
    try:
        return loader(path)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from None


def cmd_decode(args) -> int:
    model, vocab, _ = _load_checkpoint(ckpt_io.load_model, args.model)
    utts = _load_features_dir(args.data_dir)
    dims = {u.features.dim for u in utts}
    if dims and dims != {model.config.input_dim}:
        raise UsageError(f"features are {sorted(dims)}-dim, model expects {model.config.input_dim}")
    lm = None
    if args.lm:
        lm, lm_vocab, _ = _load_checkpoint(ckpt_io.load_lm, args.lm)
        if lm_vocab.units != vocab.units:
            raise UsageError("LM vocabulary does not match the acoustic model's")
    if args.greedy:
        mode = SearchMode.GREEDY
    elif math.isinf(args.expand_beam) and math.isinf(args.state_beam):
        mode = SearchMode.BEAM
    else:
        mode = SearchMode.IMPROVED
    cfg = BeamConfig(beam_size=args.beam, expand_beam=args.expand_beam, state_beam=args.state_beam,
                     lm_weight=args.lm_weight if lm is not None else 0.0,
                     max_symbols_per_frame=args.max_symbols)
    if model.config.architecture in (Architecture.CTC_ATTENTION, Architecture.TRANSFORMER) and args.ctc_weight is not None:
        model.config.ctc_weight = args.ctc_weight
    rec = recognize(model, utts, vocab, mode, cfg, lm, args.rescore_weight, jobs=args.jobs)
    write_hypotheses(args.out, rec.hyps)
    if args.nbest:
        write_nbest(args.nbest, rec.nbests, vocab)
    cost = {"search": mode.value, "joiner_calls": rec.cost.joiner_calls,
            "wall_time": rec.cost.wall_time, "utterances": rec.cost.utterances}
    Path(str(args.out) + ".cost.json").write_text(json.dumps(cost, indent=2))
    log.info("decoded %d utterances: %d joiner calls, %.2fs", rec.cost.utterances, rec.cost.joiner_calls,
             rec.cost.wall_time)
    return EXIT_OK


def _read_refs(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p} does not exist")
    text = p.read_text(encoding="utf-8")
    if "\t" in text:
        return read_hypotheses(p)
    out = {}
    for line in text.splitlines():
        if line.strip():
            utt, _, payload = line.partition(" ")
            out[utt] = payload
    return out


def cmd_score(args) -> int:
    refs = _read_refs(args.ref)
    hyps = _read_refs(args.hyp)
    report = score_corpus(refs, hyps, args.unit, lowercase=not args.case_sensitive)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {args.name: report}
    (out / "alignments.txt").write_text(alignment_report(report), encoding="utf-8")
    (out / "summary.txt").write_text(summary_table(results), encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(results), encoding="utf-8")
    sys.stdout.write(summary_table(results))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .losses import ctc_loss_batch, transducer_loss_batch
    from .network import build_model
    from .numerics import check_gradients

    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    results = {}
    lat = torch.tensor(rng.standard_normal((1, 3, 3, 3)), requires_grad=True)
    results["transducer_loss"] = check_gradients(lambda: transducer_loss_batch(lat, [3], [[1, 2]]), [lat])
    logits = torch.tensor(rng.standard_normal((1, 5, 3)), requires_grad=True)
    results["ctc_loss"] = check_gradients(lambda: ctc_loss_batch(logits, [5], [[1, 2]]), [logits])
    archs = [args.arch] if args.arch != "all" else [a.value for a in Architecture]
    for arch in archs:
        model = build_model(ModelConfig.tiny(arch)).eval()
        x = [rng.standard_normal((9, 5))]
        results[arch] = check_gradients(lambda: model.loss(x, [[1, 2]]), list(model.parameters()),
                                        max_coords_per_param=args.coords)
    ok = True
    for name, rep in results.items():
        passed = rep.passed(args.tolerance)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max_rel={rep.max_rel_error:.2e} "
              f"max_abs={rep.max_abs_error:.2e} coords={rep.parameter_count}")
    return EXIT_OK if ok else EXIT_FAILURE


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="e2easr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key = value file; explicit flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1, help="parallel utterances")
        return p

    p = command("features", cmd_features, "extract features from a Kaldi-style data directory")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--feature-kind", default="fbank80_pitch3",
                   choices=["fbank80", "fbank80_pitch3", "mfcc40_hires", "pitch3"])
    p.add_argument("--cmvn", action="store_true", help="per-utterance mean/variance normalisation")
    _add_specaugment_flags(p)

    p = command("synth", cmd_synth, "generate the synthetic toy corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alphabet", default="abcdefgh")
    p.add_argument("--num-utterances", type=int, default=600)
    p.add_argument("--min-length", type=int, default=3)
    p.add_argument("--max-length", type=int, default=8)
    p.add_argument("--min-frames", type=int, default=3)
    p.add_argument("--max-frames", type=int, default=8)
    p.add_argument("--feat-dim", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--splits", default="", help="e.g. train:500,dev:50,test:100")

    p = command("train", cmd_train, "train an acoustic model")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--valid-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", default="rnnt", choices=[a.value for a in Architecture])
    p.add_argument("--preset", default="toy", choices=["toy", "full", "tiny"])
    p.add_argument("--units", help="unit list file (one unit per line)")
    p.add_argument("--aux-units", default="default", help="'default', 'none' or a comma list")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--ctc-weight", type=float, default=0.3)
    _add_specaugment_flags(p)

    p = command("train-lm", cmd_train_lm, "train a character LM on transcripts")
    p.add_argument("--text", required=True, help="UTF-8, one utterance per line")
    p.add_argument("--valid-text")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="take the vocabulary from this acoustic checkpoint")
    p.add_argument("--units", help="unit list file")
    p.add_argument("--aux-units", default="default")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--units-lm", type=int, default=64, help="LSTM width")
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--weight-drop", type=float, default=0.5)
    p.add_argument("--input-dropout", type=float, default=0.1)
    p.add_argument("--output-dropout", type=float, default=0.1)
    p.add_argument("--tie-embeddings", action="store_true")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--bptt", type=int, default=32)
    p.add_argument("--clip", type=float, default=0.25)
    p.add_argument("--average-from", type=int, default=None, help="epoch to start iterate averaging")

    p = command("decode", cmd_decode, "decode a feature directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="hypothesis file (utt_id<TAB>text)")
    p.add_argument("--nbest", help="optional n-best file")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--expand-beam", type=float, default=math.inf)
    p.add_argument("--state-beam", type=float, default=math.inf)
    p.add_argument("--max-symbols", type=int, default=5)
    p.add_argument("--lm")
    p.add_argument("--lm-weight", type=float, default=0.0, help="shallow-fusion weight")
    p.add_argument("--rescore-weight", type=float, default=None, help="n-best rescoring weight")
    p.add_argument("--ctc-weight", type=float, default=None, help="joint decoding weight (attention models)")

    p = command("score", cmd_score, "score hypotheses against references")
    p.add_argument("--ref", required=True, help="Kaldi text file or utt_id<TAB>text file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--unit", default="word", choices=["word", "char"])
    p.add_argument("--case-sensitive", action="store_true")
    p.add_argument("--name", default="system")
    p.add_argument("--out-dir", required=True)

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of losses and tiny models")
    p.add_argument("--arch", default="all", choices=["all"] + [a.value for a in Architecture])
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=6, help="checked coordinates per parameter tensor")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("E2EASR_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, read_config_file(args.config))
            args = parser.parse_args(argv)
        resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))
        torch.manual_seed(args.seed)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except (UsageError, FileNotFoundError, DataDirError, ckpt_io.CheckpointError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except TrainingDiverged as e:
        log.error("training diverged: %s", e)
        return EXIT_FAILURE
    except ValueError as e:
        log.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
