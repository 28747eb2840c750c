"""Fixed-length generation, nucleus sampling and candidate selection."""
from dataclasses import dataclass, field
import json
import math
import typing as tp

import numpy as np
import torch

from .codec import Codebooks, rvq_decode
from .errors import CapacityError, ProviderError, SamplingError, ScoringError, ValidationError
from .frontend import g2p, normalize
from .metrics import wer
from .nclm import DubbingLM, assemble, delay, empty_mandated, undelay
from .visual import FeatureStreams, fuse_step

ARGMAX_TEMPERATURE = 1e-6
# cumulative sums of float probabilities can fall short of top_p by rounding
TOP_P_TOLERANCE = 1e-9
SELECTION_MODES = ("prose", "formula")


@dataclass
class GenerationRequest:
    text: str
    text_ids: np.ndarray
    src_grid: np.ndarray
    features: FeatureStreams
    top_p: float = 0.8
    temperature: float = 1.0
    num_candidates: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ValidationError(f"top_p must lie in (0, 1], got {self.top_p}")
        if not self.temperature > 0.0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if self.num_candidates < 1:
            raise ValidationError("num_candidates must be >= 1")
        self.text_ids = np.asarray(self.text_ids, dtype=np.int64)
        self.src_grid = np.asarray(self.src_grid, dtype=np.int64)
        if self.src_grid.ndim != 2:
            raise ValidationError("src_grid must be [T_src, K]")

    @property
    def num_steps(self) -> int:
        return self.features.num_tokens


@dataclass
class Candidate:
    index: int
    grid: np.ndarray
    seed: int
    wer: float = math.nan
    sync_distance: float = math.nan
    error: tp.Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.wer) and math.isfinite(self.sync_distance)


class GridScorers(tp.Protocol):
    def transcribe(self, grid: np.ndarray) -> str: ...

    def sync(self, grid: np.ndarray, features: FeatureStreams) -> float: ...


# --------------------------------------------------------------------------
# sampling

def nucleus_probs(logits: np.ndarray, top_p: float, temperature: float) -> np.ndarray:
    """Sampling distribution after temperature and top-p truncation.

    The kept prefix is the shortest run of tokens, sorted by descending
    probability with ties broken by lower id, whose mass reaches ``top_p``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValidationError("logits must be a non-empty vector")
    if np.any(np.isnan(z)) or np.any(z == np.inf):
        raise SamplingError("logits contain NaN or +inf")
    if np.all(z == -np.inf):
        raise SamplingError("every logit is masked")
    out = np.zeros_like(z)
    if temperature < ARGMAX_TEMPERATURE:
        out[int(np.argmax(z))] = 1.0
        return out
    z = z / temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    order = np.lexsort((np.arange(len(p)), -p))
    cum = np.cumsum(p[order])
    cut = int(np.searchsorted(cum, top_p - TOP_P_TOLERANCE, side="left"))
    keep = order[: min(cut + 1, len(p))]
    keep = keep[p[keep] > 0]
    out[keep] = p[keep] / p[keep].sum()
    return out


def nucleus_sample(logits: np.ndarray, top_p: float, temperature: float,
                   rng: np.random.Generator) -> int:
    probs = nucleus_probs(logits, top_p, temperature)
    if temperature < ARGMAX_TEMPERATURE:
        return int(np.argmax(probs))
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    # guard the floating edge: never land on a zero-probability slot
    idx = min(idx, len(probs) - 1)
    while probs[idx] == 0.0:
        idx -= 1
    return idx


# --------------------------------------------------------------------------
# generation

@torch.no_grad()
def generate_one(request: GenerationRequest, model: DubbingLM, seed: tp.Optional[int] = None
                 ) -> np.ndarray:
    """Sample one canonical ``[2M, K]`` grid, one delayed column per step."""
    cfg = model.config
    model.eval()
    num_k, empty = cfg.num_codebooks, cfg.empty_id
    length = request.num_steps
    if length < 1:
        raise ValidationError("features must hold at least one video frame")
    if request.src_grid.shape[1] != num_k:
        raise ValidationError(f"src_grid has {request.src_grid.shape[1]} codebooks, model expects {num_k}")
    steps = length + num_k - 1
    d_src = delay(request.src_grid, empty)
    lip, face = model.visual_tokens(request.features)
    prefix = assemble(request.text_ids, d_src, torch.zeros(0, cfg.d_model, dtype=model.dtype), model)
    # the final sampled column is never fed back
    total = prefix.embedded.shape[0] + steps - 1
    if total > cfg.max_seq_len:
        raise CapacityError(f"generation needs {total} positions, max_seq_len is {cfg.max_seq_len}")
    cache = model.new_cache(total)
    hidden = model.decode(prefix.embedded, cache)[-1:]
    rng = np.random.default_rng(request.seed if seed is None else seed)
    src_len = d_src.shape[0]
    rows = np.empty((steps, num_k), dtype=np.int64)
    for s in range(steps):
        logits = model.head_logits(hidden)[0].to(torch.float64).numpy()
        for k in range(num_k):
            if empty_mandated(s, k, length):
                rows[s, k] = empty
                continue
            row = logits[k].copy()
            row[empty] = -np.inf
            rows[s, k] = nucleus_sample(row, request.top_p, request.temperature, rng)
        if s == steps - 1:
            break
        h = model.embed_columns(torch.from_numpy(rows[s: s + 1]))[0]
        fused = fuse_step(h, lip, face, min(s, length - 1), model.fusion)
        hidden = model.decode(model.target_input(fused.unsqueeze(0), src_len, start=s), cache)
    return undelay(rows, empty)


# --------------------------------------------------------------------------
# selection

def select_candidate(candidates: tp.Sequence[Candidate], mode: str = "prose",
                     wer_threshold: float = 0.05) -> Candidate:
    """Pick one candidate.

    prose: lowest sync distance among candidates with WER below the
    threshold; if none qualifies, lowest WER (then sync distance).
    formula: lexicographic minimum of ``(min(wer, threshold), sync_distance)``.
    Remaining ties go to the lower index.
    """
    if mode not in SELECTION_MODES:
        raise ValidationError(f"mode must be one of {SELECTION_MODES}")
    pool = [c for c in candidates if c.ok]
    if not pool:
        raise ValidationError("no scored candidates to select from")
    if mode == "formula":
        return min(pool, key=lambda c: (min(c.wer, wer_threshold), c.sync_distance, c.index))
    passing = [c for c in pool if c.wer < wer_threshold]
    if passing:
        return min(passing, key=lambda c: (c.sync_distance, c.index))
    return min(pool, key=lambda c: (c.wer, c.sync_distance, c.index))


@dataclass
class DubReport:
    candidates: tp.List[Candidate]
    selected: int
    mode: str
    text: str = ""
    extra: tp.Dict[str, tp.Any] = field(default_factory=dict)

    @property
    def selected_candidate(self) -> Candidate:
        return self.candidates[self.selected]

    def records(self) -> tp.List[tp.Dict[str, tp.Any]]:
        return [{
            "index": c.index,
            "seed": c.seed,
            "wer": None if math.isnan(c.wer) else c.wer,
            "sync_distance": None if math.isnan(c.sync_distance) else c.sync_distance,
            "selected": c.index == self.selected,
            "error": c.error,
        } for c in self.candidates]

    def to_dict(self) -> tp.Dict[str, tp.Any]:
        return {"mode": self.mode, "text": self.text, "selected": self.selected,
                "candidates": self.records(), **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def score_candidate(cand: Candidate, text: str, features: FeatureStreams, scorers: GridScorers) -> None:
    try:
        cand.wer = wer(text, scorers.transcribe(cand.grid))
        cand.sync_distance = float(scorers.sync(cand.grid, features))
        if not math.isfinite(cand.sync_distance):
            raise ValueError(f"sync distance {cand.sync_distance}")
    except Exception as exc:  # scorer failures are recorded, not raised
        cand.error = f"{type(exc).__name__}: {exc}"


def dub(request: GenerationRequest, model: DubbingLM, books: Codebooks, scorers: GridScorers,
        mode: str = "prose", wer_threshold: float = 0.05) -> tp.Tuple[np.ndarray, DubReport]:
    """Generate ``num_candidates`` grids (seeds ``seed + i``), score them,
    select one and decode it to frames."""
    candidates = []
    for i in range(request.num_candidates):
        seed = request.seed + i
        cand = Candidate(index=i, grid=generate_one(request, model, seed=seed), seed=seed)
        score_candidate(cand, request.text, request.features, scorers)
        candidates.append(cand)
    if not any(c.ok for c in candidates):
        raise ScoringError("every candidate failed to score: "
                           + "; ".join(str(c.error) for c in candidates))
    chosen = select_candidate(candidates, mode, wer_threshold)
    report = DubReport(candidates, chosen.index, mode, request.text)
    return rvq_decode(chosen.grid, books), report


def video_to_speech(src_grid: np.ndarray, features: FeatureStreams,
                    transcript_provider: tp.Callable[[FeatureStreams], str], model: DubbingLM,
                    books: Codebooks, scorers: GridScorers, lexicon: tp.Mapping[str, tp.Sequence[str]],
                    mode: str = "prose", **request_options) -> tp.Tuple[np.ndarray, DubReport]:
    """Dub a silent clip, taking the text from a lip-reading provider."""
    try:
        raw = transcript_provider(features)
    except Exception as exc:
        raise ProviderError(f"transcript provider failed: {exc}") from exc
    text = normalize(raw or "")
    if not text:
        raise ValidationError("transcript provider returned empty text")
    request = GenerationRequest(text=text, text_ids=np.asarray(g2p(text, lexicon), dtype=np.int64),
                                src_grid=src_grid, features=features, **request_options)
    frames, report = dub(request, model, books, scorers, mode=mode)
    report.extra["transcript_source"] = "provider"
    return frames, report
