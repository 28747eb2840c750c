"""Staged curation of talking-head clips with pluggable providers.

Stages run in a fixed order: language gate, transcription with timestamps,
trimming to single utterances, frontal-pose filter, active-speaker gate,
music suppression, and per-source speaker clustering. A provider failure
drops only the affected item, recorded against the stage where it failed.
"""
from dataclasses import dataclass, field
import json
import math
import typing as tp

import numpy as np

from .errors import ValidationError

STAGES = ("language_id", "transcription", "trim", "frontal_filter", "active_speaker",
          "music_suppression", "speaker_clustering")

Span = tp.Tuple[float, float]


@dataclass(frozen=True)
class WordTimestamps:
    words: tp.Tuple[tp.Tuple[str, float, float], ...]
    sentences: tp.Tuple[Span, ...]

    def __post_init__(self):
        for w, s, e in self.words:
            if not s < e:
                raise ValidationError(f"word {w!r}: start {s} must precede end {e}")
        for s, e in self.sentences:
            if not s < e:
                raise ValidationError(f"sentence span ({s}, {e}) is empty")
            inside = [(ws, we) for _, ws, we in self.words if s <= ws and we <= e]
            if any(b[0] < a[1] for a, b in zip(inside, inside[1:])):
                raise ValidationError(f"words overlap inside sentence ({s}, {e})")


@dataclass(frozen=True)
class PoseSeries:
    yaw: np.ndarray
    pitch: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        yaw = np.asarray(self.yaw, dtype=np.float64)
        pitch = np.asarray(self.pitch, dtype=np.float64)
        if yaw.shape != pitch.shape or yaw.ndim != 1:
            raise ValidationError("yaw and pitch must be equal-length 1-D series")
        if not (np.all(np.isfinite(yaw)) and np.all(np.isfinite(pitch))):
            raise ValidationError("pose angles must be finite")
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "pitch", pitch)


# --------------------------------------------------------------------------
# algorithms

def trim_utterances(media_duration_s: float, timestamps: WordTimestamps, pad_s: float = 0.1
                    ) -> tp.List[Span]:
    """One clip per sentence, padded, clamped to the media, overlaps merged."""
    spans = sorted(timestamps.sentences)
    for s, e in spans:
        if s < 0 or e > media_duration_s:
            raise ValidationError(f"sentence ({s}, {e}) outside media of {media_duration_s}s")
    clips: tp.List[tp.List[float]] = []
    for s, e in spans:
        a, b = max(0.0, s - pad_s), min(media_duration_s, e + pad_s)
        if clips and a <= clips[-1][1]:
            clips[-1][1] = max(clips[-1][1], b)
        else:
            clips.append([a, b])
    return [(a, b) for a, b in clips]


def frontal_filter(pose: PoseSeries, max_abs_deg: float = 25.0, max_jump_deg: float = 15.0) -> bool:
    if pose.yaw.size == 0:
        raise ValidationError("pose series is empty")
    if max(np.abs(pose.yaw).max(), np.abs(pose.pitch).max()) > max_abs_deg:
        return False
    if pose.yaw.size > 1:
        jump = max(np.abs(np.diff(pose.yaw)).max(), np.abs(np.diff(pose.pitch)).max())
        if jump > max_jump_deg:
            return False
    return True


def cluster_speakers(embeddings: tp.Sequence[np.ndarray], threshold: float = 0.5) -> tp.List[int]:
    """Greedy clustering in input order.

    Each item joins the first cluster whose renormalised mean embedding has
    cosine >= ``threshold`` with it, otherwise it opens a new cluster.
    """
    if len(embeddings) == 0:
        raise ValidationError("no embeddings to cluster")
    sums: tp.List[np.ndarray] = []
    centroids: tp.List[np.ndarray] = []
    labels = []
    for i, e in enumerate(embeddings):
        e = np.asarray(e, dtype=np.float64)
        norm = np.linalg.norm(e)
        if norm == 0 or not np.isfinite(norm):
            raise ValidationError(f"embedding {i} is zero or non-finite")
        e = e / norm
        for j, c in enumerate(centroids):
            if float(c @ e) >= threshold:
                sums[j] = sums[j] + e
                centroids[j] = sums[j] / np.linalg.norm(sums[j])
                labels.append(j)
                break
        else:
            sums.append(e.copy())
            centroids.append(e.copy())
            labels.append(len(centroids) - 1)
    return labels


# --------------------------------------------------------------------------
# pipeline

@dataclass
class CurationConfig:
    language: str = "en"
    pad_s: float = 0.1
    max_abs_deg: float = 25.0
    max_jump_deg: float = 15.0
    active_speaker_threshold: float = 0.5
    cluster_threshold: float = 0.5


@dataclass
class SourceItem:
    item_id: str
    group: str                     # original source video
    duration_s: float
    payload: tp.Any = None         # whatever the providers need
    emotion: str = "unknown"
    paths: tp.Dict[str, str] = field(default_factory=dict)


@dataclass
class CurationProviders:
    language_id: tp.Callable[[SourceItem], str]
    transcriber: tp.Callable[[SourceItem], tp.Tuple[str, WordTimestamps]]
    pose_estimator: tp.Callable[[SourceItem, Span], PoseSeries]
    active_speaker: tp.Callable[[SourceItem, Span], float]
    music_suppressor: tp.Callable[[SourceItem, Span], bool]
    speaker_embedder: tp.Callable[[SourceItem, Span], np.ndarray]


@dataclass
class DropRecord:
    item_id: str
    stage: str
    reason: str

    def to_dict(self) -> tp.Dict[str, str]:
        return {"item_id": self.item_id, "stage": self.stage, "reason": self.reason}


@dataclass
class CurationResult:
    manifest: tp.List[tp.Dict[str, tp.Any]]
    statistics: tp.Dict[str, float]
    drops: tp.List[DropRecord]
    stage_log: tp.List[tp.Dict[str, tp.Any]]

    def write_drop_log(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for d in self.drops:
                f.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


def dataset_statistics(manifest: tp.Sequence[tp.Mapping[str, tp.Any]]) -> tp.Dict[str, float]:
    clips = len(manifest)
    speakers = len({r["speaker_id"] for r in manifest})
    total = float(sum(r["duration_s"] for r in manifest))
    return {
        "num_clips": clips,
        "num_speakers": speakers,
        "utterances_per_speaker": clips / speakers if speakers else 0.0,
        "mean_duration_s": total / clips if clips else 0.0,
        "total_hours": total / 3600.0,
    }


class _Dropped(Exception):
    def __init__(self, stage: str, reason: str):
        super().__init__(reason)
        self.stage, self.reason = stage, reason


def _call(stage: str, fn, *args):
    try:
        return fn(*args)
    except _Dropped:
        raise
    except Exception as exc:
        raise _Dropped(stage, f"provider error: {type(exc).__name__}: {exc}") from exc


def run_pipeline(sources: tp.Sequence[SourceItem], providers: CurationProviders,
                 config: tp.Optional[CurationConfig] = None) -> CurationResult:
    cfg = config or CurationConfig()
    drops: tp.List[DropRecord] = []
    entered = {s: 0 for s in STAGES}
    survivors: tp.List[tp.Tuple[SourceItem, str, Span, str, np.ndarray]] = []

    def enter(stage):
        entered[stage] += 1

    for item in sources:
        try:
            enter("language_id")
            lang = _call("language_id", providers.language_id, item)
            if lang != cfg.language:
                raise _Dropped("language_id", f"language {lang!r}")
            enter("transcription")
            transcript, stamps = _call("transcription", providers.transcriber, item)
            enter("trim")
            clips = _call("trim", trim_utterances, item.duration_s, stamps, cfg.pad_s)
            if not clips:
                raise _Dropped("trim", "no sentence spans")
        except _Dropped as d:
            drops.append(DropRecord(item.item_id, d.stage, d.reason))
            continue
        for j, clip in enumerate(clips):
            clip_id = item.item_id if len(clips) == 1 else f"{item.item_id}_c{j:02d}"
            try:
                enter("frontal_filter")
                pose = _call("frontal_filter", providers.pose_estimator, item, clip)
                if not frontal_filter(pose, cfg.max_abs_deg, cfg.max_jump_deg):
                    raise _Dropped("frontal_filter", "non-frontal or abrupt head pose")
                enter("active_speaker")
                score = float(_call("active_speaker", providers.active_speaker, item, clip))
                if not score >= cfg.active_speaker_threshold:
                    raise _Dropped("active_speaker", f"score {score:.3f} below threshold")
                enter("music_suppression")
                _call("music_suppression", providers.music_suppressor, item, clip)
                enter("speaker_clustering")
                emb = np.asarray(_call("speaker_clustering", providers.speaker_embedder, item, clip),
                                 dtype=np.float64)
                norm = np.linalg.norm(emb)
                if not (np.isfinite(norm) and norm > 0):
                    raise _Dropped("speaker_clustering", "zero or non-finite speaker embedding")
            except _Dropped as d:
                drops.append(DropRecord(clip_id, d.stage, d.reason))
                continue
            survivors.append((item, clip_id, clip, transcript, emb / norm))

    groups: tp.Dict[str, tp.List[int]] = {}
    for i, (item, *_rest) in enumerate(survivors):
        groups.setdefault(item.group, []).append(i)
    speaker_of: tp.Dict[int, str] = {}
    for group, idx in groups.items():
        labels = cluster_speakers([survivors[i][4] for i in idx], cfg.cluster_threshold)
        for i, lab in zip(idx, labels):
            speaker_of[i] = f"{group}_spk{lab}"

    manifest = []
    for i, (item, clip_id, (a, b), transcript, _) in enumerate(survivors):
        manifest.append({
            "id": clip_id,
            "speaker_id": speaker_of[i],
            "split": "train",
            "transcript": transcript,
            "duration_s": round(float(b - a), 6),
            "emotion": item.emotion,
            "waveform": item.paths.get("waveform", ""),
            "frames": item.paths.get("frames", ""),
            "features": item.paths.get("features", ""),
            "source_id": item.item_id,
            "start_s": round(float(a), 6),
            "end_s": round(float(b), 6),
        })

    stage_log = []
    for stage in STAGES:
        dropped = sum(1 for d in drops if d.stage == stage)
        n = entered[stage]
        stage_log.append({"stage": stage, "entered": n, "dropped": dropped,
                          "drop_rate": dropped / n if n else 0.0})
    return CurationResult(manifest, dataset_statistics(manifest), drops, stage_log)


# --------------------------------------------------------------------------
# synthetic sources and oracle providers

@dataclass
class SyntheticClip:
    utterance: tp.Any              # synthcorpus.Utterance
    language: str
    yaw: np.ndarray
    pitch: np.ndarray
    active_score: float
    has_music: bool


def word_timestamps(utterance: tp.Any, frame_rate: int = 50) -> WordTimestamps:
    """Word spans from runs of non-silence phonemes; one sentence covering
    all words."""
    from .frontend import SEP
    ph = np.asarray(utterance.frame_phonemes)
    words = utterance.transcript.split()
    speech = ph != SEP
    edges = np.flatnonzero(np.diff(np.concatenate([[0], speech.astype(int), [0]])))
    runs = list(zip(edges[0::2], edges[1::2]))
    if len(runs) != len(words):
        raise ValidationError(f"{utterance.utt_id}: {len(runs)} speech runs for {len(words)} words")
    spans = tuple((w, s / frame_rate, e / frame_rate) for w, (s, e) in zip(words, runs))
    sentences = ((spans[0][1], spans[-1][2]),) if spans else ()
    return WordTimestamps(spans, sentences)


def make_synthetic_sources(num_items: int, lexicon: tp.Mapping[str, tp.Sequence[str]], seed: int = 0,
                           non_english: float = 0.1, side_face: float = 0.1, inactive: float = 0.1,
                           music: float = 0.2, speakers_per_source: int = 2
                           ) -> tp.List[SourceItem]:
    """Synthetic clips with known language, pose, activity and music labels.

    Items are grouped into source videos of ``speakers_per_source`` speakers.
    """
    from .synthcorpus import make_corpus
    rng = np.random.default_rng(seed)
    num_speakers = max(1, math.ceil(num_items / 4))
    per_speaker = math.ceil(num_items / num_speakers)
    corpus = make_corpus(num_speakers, per_speaker, lexicon, seed=seed)
    items = []
    for n, utt in enumerate(corpus.utterances[:num_items]):
        m = utt.features.num_frames
        # slow head motion plus small jitter
        tt = np.arange(m) / 25.0
        yaw = 6.0 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * tt + rng.uniform(0, 6.3)) \
            + rng.normal(0.0, 0.5, m)
        pitch = 4.0 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * tt + rng.uniform(0, 6.3)) \
            + rng.normal(0.0, 0.5, m)
        if rng.random() < side_face:
            yaw += 35.0
        spk = int(utt.speaker_id[3:])
        clip = SyntheticClip(
            utterance=utt,
            language="en" if rng.random() >= non_english else "fr",
            yaw=yaw, pitch=pitch,
            active_score=float(rng.uniform(0.0, 0.4) if rng.random() < inactive else rng.uniform(0.7, 1.0)),
            has_music=bool(rng.random() < music),
        )
        items.append(SourceItem(
            item_id=utt.utt_id,
            group=f"vid{spk // speakers_per_source:03d}",
            duration_s=utt.duration_s,
            payload=clip,
            emotion=utt.emotion,
            paths={"waveform": f"wav/{utt.utt_id}.wav", "frames": f"frames/{utt.utt_id}.npz",
                   "features": f"features/{utt.utt_id}.npz"},
        ))
    return items


def oracle_providers(lexicon: tp.Mapping[str, tp.Sequence[str]]) -> CurationProviders:
    from .metrics import Waveform
    from .synthcorpus import oracle_transcribe, speaker_embedding

    def language_id(item):
        return item.payload.language

    def transcriber(item):
        utt = item.payload.utterance
        return oracle_transcribe(utt.frames, lexicon), word_timestamps(utt)

    def pose(item, clip):
        a, b = (int(round(t * 25)) for t in clip)
        c = item.payload
        return PoseSeries(c.yaw[a:max(b, a + 1)], c.pitch[a:max(b, a + 1)])

    def active(item, clip):
        return item.payload.active_score

    def music(item, clip):
        return item.payload.has_music

    def embedder(item, clip):
        w = item.payload.utterance.waveform
        a, b = (int(round(t * w.sample_rate)) for t in clip)
        return speaker_embedding(Waveform(w.samples[a:b], w.sample_rate))

    return CurationProviders(language_id, transcriber, pose, active, music, embedder)
