"""Training-set construction and the training loop."""
from dataclasses import dataclass, field
import logging
import math
import time
import typing as tp

import numpy as np
import torch

from .codec import Codebooks, rvq_encode
from .errors import ValidationError
from .frontend import g2p, normalize
from .nclm import DubbingLM, Example, evaluate_loss, make_optimizer, train_step
from .visual import FeatureStreams

log = logging.getLogger(__name__)

PROMPT_FRACTION = 0.3


@dataclass
class EncodedUtterance:
    utt_id: str
    speaker_id: str
    text: str
    text_ids: np.ndarray
    grid: np.ndarray           # canonical [T, K]
    features: FeatureStreams


def encode_utterances(utterances: tp.Iterable[tp.Any], books: Codebooks,
                      lexicon: tp.Mapping[str, tp.Sequence[str]]) -> tp.List[EncodedUtterance]:
    out = []
    for u in utterances:
        text = normalize(u.transcript)
        out.append(EncodedUtterance(u.utt_id, u.speaker_id, text,
                                    np.asarray(g2p(text, lexicon), dtype=np.int64),
                                    rvq_encode(u.frames, books), u.features))
    return out


def by_speaker(pool: tp.Iterable[EncodedUtterance]) -> tp.Dict[str, tp.List[EncodedUtterance]]:
    groups: tp.Dict[str, tp.List[EncodedUtterance]] = {}
    for u in pool:
        groups.setdefault(u.speaker_id, []).append(u)
    return groups


def crop_prompt(grid: np.ndarray, max_frames: tp.Optional[int]) -> np.ndarray:
    if max_frames is None or grid.shape[0] <= max_frames:
        return grid
    return grid[:max_frames]


def make_example(target: EncodedUtterance, prompts: tp.Mapping[str, tp.Sequence[EncodedUtterance]],
                 rng: np.random.Generator, max_prompt_frames: tp.Optional[int] = None) -> Example:
    """Prompt with another utterance of the same speaker when one exists;
    otherwise the first 30% of the target itself (rounded to a whole video
    frame) becomes the prompt and the rest the target."""
    others = [u for u in prompts.get(target.speaker_id, ()) if u.utt_id != target.utt_id]
    if others:
        prompt = others[int(rng.integers(len(others)))]
        return Example(target.text_ids, crop_prompt(prompt.grid, max_prompt_frames),
                       target.grid, target.features, target.utt_id)
    m = target.features.num_frames
    if m < 2:
        raise ValidationError(f"{target.utt_id}: too short to split into prompt and target")
    cut = min(max(1, int(round(PROMPT_FRACTION * m))), m - 1)
    return Example(target.text_ids, crop_prompt(target.grid[: 2 * cut], max_prompt_frames),
                   target.grid[2 * cut:], target.features.slice(cut), target.utt_id)


def heldout_examples(targets: tp.Sequence[EncodedUtterance], prompt_pool: tp.Sequence[EncodedUtterance],
                     seed: int, max_prompt_frames: tp.Optional[int] = None) -> tp.List[Example]:
    rng = np.random.default_rng(seed)
    groups = by_speaker(prompt_pool)
    return [make_example(t, groups, rng, max_prompt_frames) for t in targets]


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_frames: int = 300
    decoder_lr: float = 1e-3
    visual_lr: float = 3e-3
    weight_decay: float = 0.01
    warmup_steps: int = 200
    min_lr_ratio: float = 0.1
    grad_clip: float = 1.0
    max_prompt_frames: tp.Optional[int] = 150
    eval_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_frames < 1:
            raise ValidationError("steps must be >= 0 and batch_frames >= 1")
        if self.decoder_lr < 0 or self.visual_lr < 0:
            raise ValidationError("learning rates must be non-negative")


def lr_factor(step: int, cfg: TrainConfig) -> float:
    """Linear warmup, then cosine decay to ``min_lr_ratio``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * progress))


def sample_batch(pool: tp.Sequence[EncodedUtterance], groups, rng: np.random.Generator,
                 cfg: TrainConfig) -> tp.List[Example]:
    """Draw examples until the next one would push the target frame count
    past ``batch_frames``; the first example is always kept."""
    batch: tp.List[Example] = []
    frames = 0
    while True:
        ex = make_example(pool[int(rng.integers(len(pool)))], groups, rng, cfg.max_prompt_frames)
        n = ex.tgt_grid.shape[0]
        if batch and frames + n > cfg.batch_frames:
            return batch
        batch.append(ex)
        frames += n
        if frames >= cfg.batch_frames:
            return batch


@dataclass
class TrainHistory:
    steps: tp.List[int] = field(default_factory=list)
    losses: tp.List[float] = field(default_factory=list)
    eval_steps: tp.List[int] = field(default_factory=list)
    eval_losses: tp.List[float] = field(default_factory=list)
    seconds: float = 0.0

    def records(self) -> tp.List[tp.Dict[str, tp.Any]]:
        evals = dict(zip(self.eval_steps, self.eval_losses))
        return [{"step": s, "loss": l, "heldout_loss": evals.get(s)} for s, l in zip(self.steps, self.losses)]


def train(model: DubbingLM, pool: tp.Sequence[EncodedUtterance], cfg: TrainConfig,
          heldout: tp.Sequence[Example] = (), optimizer: tp.Optional[torch.optim.Optimizer] = None,
          start_step: int = 0, callback: tp.Optional[tp.Callable[[int, tp.Dict[str, float]], None]] = None
          ) -> TrainHistory:
    """Run ``cfg.steps`` optimiser steps drawing targets uniformly from ``pool``.

    Held-out loss is measured before the first step, every ``eval_every``
    steps and after the last one.
    """
    if not pool:
        raise ValidationError("training pool is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    groups = by_speaker(pool)
    if optimizer is None:
        optimizer = make_optimizer(model, cfg.decoder_lr, cfg.visual_lr, cfg.weight_decay)
    base = [g["lr"] for g in optimizer.param_groups]
    hist = TrainHistory()
    t0 = time.perf_counter()

    def run_eval(step):
        if heldout:
            value = evaluate_loss(model, heldout)
            hist.eval_steps.append(step)
            hist.eval_losses.append(value)
            log.info("step %d heldout loss %.4f", step, value)

    run_eval(start_step)
    for i in range(cfg.steps):
        step = start_step + i
        f = lr_factor(i, cfg)
        for g, lr in zip(optimizer.param_groups, base):
            g["lr"] = lr * f
        batch = sample_batch(pool, groups, rng, cfg)
        metrics = train_step(model, batch, optimizer, cfg.grad_clip)
        hist.steps.append(step + 1)
        hist.losses.append(metrics["loss"])
        if callback is not None:
            callback(step + 1, metrics)
        if heldout and cfg.eval_every and (i + 1) % cfg.eval_every == 0 and i + 1 < cfg.steps:
            run_eval(step + 1)
    for g, lr in zip(optimizer.param_groups, base):
        g["lr"] = lr
    if cfg.steps:
        run_eval(start_step + cfg.steps)
    hist.seconds = time.perf_counter() - t0
    return hist
