"""Train the toy RNN-T on the synthetic task and report held-out CER.

Usage: python3 scripts/train_toy_rnnt.py [--epochs 50] [--dropout 0.2] [--seed 0] [--out toy.trnk]
"""

import argparse
import logging
import time

from e2easr.checkpoint import save_model
from e2easr.corpus import SyntheticSpec, build_vocabulary, generate_synthetic_corpus
from e2easr.decode import BeamConfig
from e2easr.network import ModelConfig
from e2easr.recognize import SearchMode, recognize
from e2easr.scoring import score_corpus
from e2easr.training import TrainConfig, train_model


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", default="rnnt", choices=["rnnt", "transformer_transducer", "ctc_attention"])
    p.add_argument("--out", default=None, help="optional checkpoint path")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    utts = generate_synthetic_corpus(SyntheticSpec(num_utterances=650, seed=args.seed))
    vocab = build_vocabulary([u.text for u in utts], aux_units=())
    train, valid, test = utts[:500], utts[500:550], utts[550:]
    cfg = ModelConfig.toy(args.arch, train[0].features.dim, vocab.num_outputs, dropout=args.dropout)

    start = time.perf_counter()
    res = train_model(cfg, train, valid, vocab, TrainConfig(epochs=args.epochs, seed=args.seed))
    print(f"trained {args.epochs} epochs in {time.perf_counter() - start:.0f}s, best epoch {res.best_epoch}")

    refs = {u.utt_id: u.text for u in test}
    for mode, beam in [(SearchMode.GREEDY, BeamConfig(beam_size=1)),
                       (SearchMode.BEAM, BeamConfig(beam_size=10))]:
        rec = recognize(res.model, test, vocab, mode, beam)
        cer = score_corpus(refs, rec.hyps, "char").wer
        print(f"{mode.value:8s} CER {100 * cer:5.2f}%  joiner calls {rec.cost.joiner_calls}")
    if args.out:
        save_model(args.out, res.model, vocab, {"best_epoch": res.best_epoch})
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
