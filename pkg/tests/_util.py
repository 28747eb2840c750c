"""Small builders shared by the model-level tests."""
import numpy as np
import torch

from avdub.nclm import DubbingLM, Example, ModelConfig
from avdub.visual import FeatureStreams


def tiny_config(**kw):
    base = dict(num_layers=2, d_model=32, ffn_dim=64, num_heads=4, num_codebooks=4, vocab_size=8,
                phoneme_vocab_size=42, alpha=(3, 1, 1, 1), max_seq_len=256, d_lip=6, d_face=4)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, dtype=torch.float64, **kw):
    torch.manual_seed(seed)
    return DubbingLM(tiny_config(**kw)).to(dtype)


def random_example(rng, cfg, frames=4, src_rows=6, text_len=5, utt_id="x"):
    feats = FeatureStreams(rng.normal(size=(frames, cfg.d_lip)), rng.normal(size=(frames, cfg.d_face)))
    return Example(rng.integers(3, cfg.phoneme_vocab_size, size=text_len),
                   rng.integers(0, cfg.vocab_size, size=(src_rows, cfg.num_codebooks)),
                   rng.integers(0, cfg.vocab_size, size=(2 * frames, cfg.num_codebooks)),
                   feats, utt_id)


def brute_prose(cands, thr):
    best = None
    for c in cands:
        if c.wer < thr and (best is None or c.sync_distance < best.sync_distance
                            or (c.sync_distance == best.sync_distance and c.index < best.index)):
            best = c
    if best is not None:
        return best
    order = sorted(cands, key=lambda c: c.index)
    best = order[0]
    for c in order[1:]:
        if (c.wer, c.sync_distance) < (best.wer, best.sync_distance):
            best = c
    return best


def brute_formula(cands, thr):
    ranked = sorted(cands, key=lambda c: c.index)
    ranked.sort(key=lambda c: c.sync_distance)
    ranked.sort(key=lambda c: min(c.wer, thr))    # stable sorts: last key is primary
    return ranked[0]


# acceptance verdicts, printed in the terminal summary by conftest
VERDICTS = {}


def verdict(number, title, ok, detail):
    VERDICTS[number] = (title, bool(ok), detail)
    assert ok, f"criterion {number} ({title}): {detail}"
