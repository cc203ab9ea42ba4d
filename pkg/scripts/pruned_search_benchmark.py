"""Sweep expand/state beams of the pruned transducer search on a trained checkpoint.

Usage: python3 scripts/pruned_search_benchmark.py toy.trnk [--beam 10]

The checkpoint is expected to come from scripts/train_toy_rnnt.py (same corpus seed).
"""

import argparse
import math

from e2easr.checkpoint import load_model
from e2easr.corpus import SyntheticSpec, generate_synthetic_corpus
from e2easr.decode import BeamConfig
from e2easr.recognize import SearchMode, recognize
from e2easr.scoring import score_corpus

GRID = [(math.inf, math.inf), (4.0, 2.0), (2.0, 1.0), (1.0, 1.0), (1.0, 0.5)]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("checkpoint")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    model, vocab, _ = load_model(args.checkpoint)
    test = generate_synthetic_corpus(SyntheticSpec(num_utterances=650, seed=args.seed))[550:]
    refs = {u.utt_id: u.text for u in test}

    base = recognize(model, test, vocab, SearchMode.BEAM, BeamConfig(beam_size=args.beam))
    base_cer = score_corpus(refs, base.hyps, "char").wer
    print(f"{'search':>22s} {'CER%':>6s} {'calls':>8s} {'saved%':>7s} {'sec':>6s}")
    print(f"{'beam search':>22s} {100 * base_cer:6.2f} {base.cost.joiner_calls:8d} {0.0:7.1f} "
          f"{base.cost.wall_time:6.1f}")
    for expand, state in GRID:
        cfg = BeamConfig(beam_size=args.beam, expand_beam=expand, state_beam=state)
        rec = recognize(model, test, vocab, SearchMode.IMPROVED, cfg)
        cer = score_corpus(refs, rec.hyps, "char").wer
        saved = 100 * (1 - rec.cost.joiner_calls / base.cost.joiner_calls)
        print(f"{f'improved({expand:g},{state:g})':>22s} {100 * cer:6.2f} {rec.cost.joiner_calls:8d} "
              f"{saved:7.1f} {rec.cost.wall_time:6.1f}")


if __name__ == "__main__":
    main()
