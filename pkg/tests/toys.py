"""Small random models and rigged scorers shared by the search tests."""

from dataclasses import replace

import numpy as np
import torch

from e2easr.network import EncoderOutput, ModelConfig, TransducerModel


def random_transducer(seed, vocab_size=4, frames=5, scale=1.0):
    """A tiny transducer with random weights and a random encoder output."""
    torch.manual_seed(seed)
    cfg = replace(ModelConfig.tiny("rnnt", input_dim=5, vocab_size=vocab_size), init_scale=scale)
    model = TransducerModel(cfg).eval()
    g = torch.Generator().manual_seed(seed)
    states = 2.0 * torch.randn(frames, model.enc_dim, generator=g, dtype=torch.float64)
    return model, EncoderOutput(states)


def frame_index_encoding(frames):
    """Encoder output whose row t is the scalar t, for rigged scorers."""
    return EncoderOutput(torch.arange(frames, dtype=torch.float64)[:, None])


class TableScorer:
    """Rigged scorer: log-probs looked up as table(t, labels-so-far)."""

    def __init__(self, table):
        self.table = table

    def initial_state(self):
        return ()

    def advance(self, state, label):
        return state + (int(label),)

    def log_probs(self, h_t, state):
        lp = np.asarray(self.table(int(h_t[0]), state), dtype=np.float64)
        return lp - np.logaddexp.reduce(lp)
