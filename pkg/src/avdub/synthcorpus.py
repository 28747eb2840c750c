"""Deterministic synthetic audio-visual corpus.

Each utterance is a phoneme string rendered as 16 kHz audio by a harmonic
source-filter synthesiser, analysed into 50 Hz frame vectors, and paired
with 25 fps lip and face feature streams.

Frame layout (``FRAME_DIM`` = 50)::

    [0:40)   phoneme identity code (scaled one-hot over SEP + 39 phones)
    [40:48)  normalised log-mel band energies of the frame
    48       energy channel (frame RMS, scaled)
    49       F0 channel (Hz / 100, 0 when unvoiced)

Lip features: channel 0 is mouth aperture (proportional to the mean frame
energy over the two audio frames it covers); channels 1.. are a fixed
per-phoneme "viseme" projection plus noise. Face features: four emotion
channels plus four speaker channels, with noise.

Word boundaries and leading/trailing pauses are SEP phonemes rendered as
silence.
"""
from dataclasses import dataclass, field
import json
import math
import os
import typing as tp

import numpy as np
from scipy.io import wavfile
from scipy.ndimage import uniform_filter1d

from .errors import ValidationError
from .frontend import (PAD, RESERVED, SEP, UNK, Lexicon, PhonemeVocab, g2p, inverse_lexicon,
                       normalize)
from .io import load_container, save_container
from .metrics import (SAMPLE_RATE, Waveform, frame_signal, mel_filterbank, toy_sync_distance,
                      track_f0)
from .visual import FeatureStreams

FRAME_RATE = 50
HOP = SAMPLE_RATE // FRAME_RATE          # 320 samples per frame
VOCAB = PhonemeVocab()
CODE_SYMBOLS = (SEP,) + tuple(range(len(RESERVED), len(VOCAB)))
CODE_DIM = len(CODE_SYMBOLS)
CODE_SCALE = 3.0
N_BANDS = 8
BAND_SLICE = slice(CODE_DIM, CODE_DIM + N_BANDS)
ENERGY_CHANNEL = CODE_DIM + N_BANDS
F0_CHANNEL = ENERGY_CHANNEL + 1
FRAME_DIM = F0_CHANNEL + 1
# output level; keeps peaks inside 16-bit PCM range. Frame scales divide it
# back out so frame statistics do not depend on it.
LEVEL = 0.6
ENERGY_SCALE = 10.0 / LEVEL
APERTURE_SCALE = 5.0 / LEVEL
D_LIP = 24
D_FACE = 8

EMOTIONS = ("neutral", "happy", "sad", "angry")
# f0 multiplier, f0 contour depth, loudness gain
_EMOTION_STYLE = {
    "neutral": (1.00, 0.03, 1.00),
    "happy": (1.03, 0.10, 1.10),
    "sad": (0.97, 0.02, 0.85),
    "angry": (1.02, 0.07, 1.20),
}

_CODE_INDEX = {sym: i for i, sym in enumerate(CODE_SYMBOLS)}
_LOGBAND_MEAN = 2.0 * math.log(LEVEL)
_LOGBAND_STD = 4.0


def _fixed_tables():
    rng = np.random.default_rng(20240611)
    n = len(VOCAB)
    f1 = rng.uniform(300, 900, n)
    f2 = rng.uniform(900, 2600, n)
    visemes = rng.normal(0.0, 1.0, (n, D_LIP - 1)) / math.sqrt(D_LIP - 1) * 2.0
    visemes[SEP] = 0.0
    return f1, f2, visemes


FORMANT1, FORMANT2, VISEMES = _fixed_tables()
_MEL_FB = mel_filterbank(N_BANDS, n_fft=2 * HOP, fmin=60.0, fmax=7000.0)


@dataclass(frozen=True)
class UtteranceSpec:
    speaker_id: str
    phonemes: tp.Tuple[int, ...]
    durations: tp.Tuple[int, ...]
    f0_base: float
    emotion: str
    seed: int
    words: tp.Tuple[str, ...] = ()
    formant_factor: float = 1.0
    tilt: float = 1.0
    face_offset: tp.Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)

    def validate(self) -> None:
        if len(self.phonemes) != len(self.durations) or not self.phonemes:
            raise ValidationError("phonemes and durations must be non-empty and equally long")
        if any(d < 2 for d in self.durations):
            raise ValidationError("every phoneme lasts at least 2 frames")
        if any(d % 2 for d in self.durations):
            raise ValidationError("durations must be even so video frames cover one phoneme")
        if not 80.0 <= self.f0_base <= 300.0:
            raise ValidationError(f"f0_base {self.f0_base} outside [80, 300] Hz")
        if self.emotion not in EMOTIONS:
            raise ValidationError(f"unknown emotion {self.emotion!r}")
        if any(p in (PAD, UNK) or not 0 <= p < len(VOCAB) for p in self.phonemes):
            raise ValidationError("phoneme ids must be SEP or real phones")


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    emotion: str
    transcript: str
    waveform: Waveform
    frames: np.ndarray          # [T, FRAME_DIM]
    features: FeatureStreams    # M = T / 2
    frame_phonemes: np.ndarray  # [T] phoneme id per frame

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_frames / FRAME_RATE


# --------------------------------------------------------------------------
# synthesis

def _amplitude_class(p: int) -> float:
    if p == SEP:
        return 0.0
    if VOCAB.is_vowel(p):
        return 0.20 * LEVEL
    if VOCAB.is_voiceless(p):
        return 0.07 * LEVEL
    return 0.12 * LEVEL


def synthesize(f0: np.ndarray, rms: np.ndarray, harmonic_gain: tp.Callable[[int, np.ndarray], np.ndarray],
               rng: np.random.Generator) -> np.ndarray:
    """Render per-frame (f0, rms) into samples. Voiced frames (f0 > 0) are a
    harmonic series with gains from ``harmonic_gain(frame, freqs)``; other
    frames with rms > 0 are white noise. Each frame is scaled to its rms."""
    t_frames = len(f0)
    out = np.zeros(t_frames * HOP)
    phase = 0.0
    n = np.arange(HOP)
    for t in range(t_frames):
        seg = slice(t * HOP, (t + 1) * HOP)
        if rms[t] <= 0:
            continue
        if f0[t] > 0:
            step = 2 * math.pi * f0[t] / SAMPLE_RATE
            ph = phase + step * n
            phase = (phase + step * HOP) % (2 * math.pi)
            h = np.arange(1, int(7000 // f0[t]) + 1)
            g = harmonic_gain(t, h * f0[t])
            sig = np.sin(np.outer(ph, h)) @ g
        else:
            sig = rng.standard_normal(HOP)
        cur = math.sqrt(float(np.mean(sig ** 2)))
        if cur > 0:
            out[seg] = sig * (rms[t] / cur)
    return out


def _formant_gain(p: int, freqs: np.ndarray, formant_factor: float, tilt: float) -> np.ndarray:
    f1, f2 = FORMANT1[p] * formant_factor, FORMANT2[p] * formant_factor
    env = np.exp(-0.5 * ((freqs - f1) / 150.0) ** 2) + 0.7 * np.exp(-0.5 * ((freqs - f2) / 250.0) ** 2)
    return (env + 0.02) * (freqs / 100.0) ** (-tilt)


def analyse_frames(samples: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
    """Per-frame normalised log-mel bands ``[T, 8]`` and RMS ``[T]``."""
    t_frames = len(samples) // HOP
    x = samples[: t_frames * HOP].reshape(t_frames, HOP)
    rms = np.sqrt(np.mean(x ** 2, axis=1))
    padded = np.pad(samples[: t_frames * HOP], (HOP // 2, HOP // 2))
    win = np.hanning(2 * HOP)
    idx = np.arange(2 * HOP)[None, :] + HOP * np.arange(t_frames)[:, None]
    spec = np.abs(np.fft.rfft(padded[np.minimum(idx, len(padded) - 1)] * win, axis=-1)) ** 2
    logband = np.log(spec @ _MEL_FB.T + 1e-6)
    bands = np.clip((logband - _LOGBAND_MEAN) / _LOGBAND_STD, -3.5, 2.5)
    return bands, rms


def phoneme_code(p: int) -> np.ndarray:
    v = np.zeros(CODE_DIM)
    v[_CODE_INDEX[p]] = CODE_SCALE
    return v


def make_utterance(spec: UtteranceSpec, utt_id: tp.Optional[str] = None) -> Utterance:
    """Render one utterance; bit-identical for identical specs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    f0_mult, depth, gain = _EMOTION_STYLE[spec.emotion]
    per_frame = np.repeat(np.asarray(spec.phonemes, dtype=np.int64), spec.durations)
    t_frames = len(per_frame)

    # slow f0 contour from two seeded sinusoids
    tt = np.arange(t_frames) / FRAME_RATE
    rates = rng.uniform(0.5, 2.0, 2)
    phases = rng.uniform(0, 2 * math.pi, 2)
    contour = 0.6 * np.sin(2 * math.pi * rates[0] * tt + phases[0]) \
        + 0.4 * np.sin(2 * math.pi * rates[1] * tt + phases[1])
    f0_track = spec.f0_base * f0_mult * (1.0 + depth * contour)

    jitter = rng.uniform(0.9, 1.1, len(spec.phonemes))
    rms = np.repeat([_amplitude_class(p) * gain * j for p, j in zip(spec.phonemes, jitter)],
                    spec.durations)
    voiced = np.array([p != SEP and not VOCAB.is_voiceless(p) for p in per_frame])
    f0 = np.where(voiced, f0_track, 0.0)

    def gain_fn(t, freqs):
        return _formant_gain(int(per_frame[t]), freqs, spec.formant_factor, spec.tilt)

    samples = synthesize(f0, rms, gain_fn, rng)
    bands, measured_rms = analyse_frames(samples)

    frames = np.zeros((t_frames, FRAME_DIM))
    frames[:, :CODE_DIM] = np.stack([phoneme_code(int(p)) for p in per_frame])
    frames[:, BAND_SLICE] = bands
    frames[:, ENERGY_CHANNEL] = measured_rms * ENERGY_SCALE
    frames[:, F0_CHANNEL] = f0 / 100.0

    m = t_frames // 2
    lip = np.zeros((m, D_LIP))
    lip[:, 0] = APERTURE_SCALE * measured_rms.reshape(m, 2).mean(axis=1)
    lip[:, 1:] = VISEMES[per_frame[0::2]] + rng.normal(0.0, 0.05, (m, D_LIP - 1))
    face = np.zeros((m, D_FACE))
    face[:, EMOTIONS.index(spec.emotion)] = 1.0
    face[:, 4:] = np.asarray(spec.face_offset)
    face += rng.normal(0.0, 0.1, face.shape)

    return Utterance(
        utt_id=utt_id or f"{spec.speaker_id}_{spec.seed}",
        speaker_id=spec.speaker_id,
        emotion=spec.emotion,
        transcript=" ".join(spec.words),
        waveform=Waveform(samples),
        frames=frames,
        features=FeatureStreams(lip, face),
        frame_phonemes=per_frame,
    )


def frames_to_waveform(frames: np.ndarray, seed: int = 0) -> Waveform:
    """Toy vocoder: resynthesise audio from the band, energy and F0 channels."""
    frames = np.asarray(frames, dtype=np.float64)
    f0 = np.where(frames[:, F0_CHANNEL] > 0.4, frames[:, F0_CHANNEL] * 100.0, 0.0)
    rms = np.maximum(frames[:, ENERGY_CHANNEL] / ENERGY_SCALE, 0.0)
    rms = np.where(rms < 1e-3, 0.0, rms)
    band_power = np.exp(frames[:, BAND_SLICE] * _LOGBAND_STD + _LOGBAND_MEAN)
    centres = np.array([np.sum(row * np.arange(len(row))) / max(row.sum(), 1e-12) for row in _MEL_FB])
    centre_hz = centres * SAMPLE_RATE / (2 * HOP)

    def gain_fn(t, freqs):
        return np.sqrt(np.interp(freqs, centre_hz, band_power[t]))

    return Waveform(synthesize(f0, rms, gain_fn, np.random.default_rng(seed)))


# --------------------------------------------------------------------------
# corpus

@dataclass
class SpeakerProfile:
    speaker_id: str
    f0_base: float
    formant_factor: float
    tilt: float
    face_offset: tp.Tuple[float, ...]


@dataclass
class Corpus:
    utterances: tp.List[Utterance]
    manifest: tp.List[tp.Dict[str, tp.Any]]
    speakers: tp.Dict[str, SpeakerProfile] = field(default_factory=dict)

    def split(self, name: str) -> tp.List[Utterance]:
        keep = {r["id"] for r in self.manifest if r["split"] == name}
        return [u for u in self.utterances if u.utt_id in keep]

    def by_id(self) -> tp.Dict[str, Utterance]:
        return {u.utt_id: u for u in self.utterances}


def corpus_words(lexicon: tp.Mapping[str, tp.Sequence[str]]) -> tp.List[str]:
    """Words usable in synthetic speech: unique pronunciation and no repeated
    adjacent phone (runs collapse when transcribing frames)."""
    counts: tp.Dict[tp.Tuple[str, ...], int] = {}
    for w, p in lexicon.items():
        counts[tuple(p)] = counts.get(tuple(p), 0) + 1
    out = []
    for w in sorted(lexicon):
        p = tuple(lexicon[w])
        if counts[p] == 1 and all(a != b for a, b in zip(p, p[1:])) and w.isalpha():
            out.append(w)
    return out


def _speaker_profiles(num_speakers: int, rng: np.random.Generator) -> tp.List[SpeakerProfile]:
    # stratified f0 keeps neighbouring speakers apart
    edges = np.linspace(85.0, 280.0, num_speakers + 1)
    f0s = rng.uniform(edges[:-1], edges[1:])
    rng.shuffle(f0s)
    out = []
    for i in range(num_speakers):
        out.append(SpeakerProfile(
            speaker_id=f"spk{i:03d}",
            f0_base=float(f0s[i]),
            formant_factor=float(rng.uniform(0.85, 1.2)),
            tilt=float(rng.uniform(0.3, 2.0)),
            face_offset=tuple(float(v) for v in rng.normal(0.0, 0.15, 4)),
        ))
    return out


def sample_spec(profile: SpeakerProfile, words: tp.Sequence[str], lexicon: tp.Mapping[str, tp.Sequence[str]],
                rng: np.random.Generator, min_s: float = 2.0, max_s: float = 6.0,
                emotion: tp.Optional[str] = None) -> UtteranceSpec:
    target = int(rng.uniform(min_s, max_s) * FRAME_RATE)
    max_frames = int(max_s * FRAME_RATE)
    lead, trail = (int(v) for v in rng.choice([4, 6, 8, 10], 2))
    phon: tp.List[int] = [SEP]
    dur: tp.List[int] = [lead]
    chosen: tp.List[str] = []
    total = lead + trail
    while total < target:
        w = words[int(rng.integers(len(words)))]
        ids = VOCAB.ids(lexicon[w])
        d = [int(rng.choice([4, 6, 8])) if VOCAB.is_vowel(p) else int(rng.choice([2, 4])) for p in ids]
        extra = sum(d) + (2 if chosen else 0)
        if chosen and total + extra > max_frames:
            break
        if chosen:
            phon.append(SEP)
            dur.append(2)
        phon.extend(ids)
        dur.extend(d)
        chosen.append(w)
        total += extra
    phon.append(SEP)
    dur.append(trail)
    return UtteranceSpec(
        speaker_id=profile.speaker_id,
        phonemes=tuple(phon),
        durations=tuple(dur),
        f0_base=profile.f0_base,
        emotion=emotion or EMOTIONS[int(rng.integers(len(EMOTIONS)))],
        seed=int(rng.integers(2 ** 31)),
        words=tuple(chosen),
        formant_factor=profile.formant_factor,
        tilt=profile.tilt,
        face_offset=profile.face_offset,
    )


def make_corpus(num_speakers: int, utterances_per_speaker: int, lexicon: tp.Mapping[str, tp.Sequence[str]],
                seed: int = 0, test_fraction: float = 0.2) -> Corpus:
    """Sample speakers and utterances; split by utterance with every test
    speaker keeping at least one training utterance."""
    words = corpus_words(lexicon)
    if not words:
        raise ValidationError("lexicon has no usable words")
    rng = np.random.default_rng(seed)
    profiles = _speaker_profiles(num_speakers, rng)
    utterances, manifest = [], []
    for prof in profiles:
        specs = [sample_spec(prof, words, lexicon, rng) for _ in range(utterances_per_speaker)]
        n_test = 0
        if utterances_per_speaker >= 2:
            n_test = min(max(1, int(round(test_fraction * utterances_per_speaker))),
                         utterances_per_speaker - 1)
        test_idx = set(rng.choice(utterances_per_speaker, n_test, replace=False).tolist()) if n_test else set()
        for j, spec in enumerate(specs):
            utt = make_utterance(spec, utt_id=f"{prof.speaker_id}_u{j:03d}")
            utterances.append(utt)
            manifest.append({
                "id": utt.utt_id,
                "speaker_id": prof.speaker_id,
                "split": "test" if j in test_idx else "train",
                "transcript": utt.transcript,
                "duration_s": utt.duration_s,
                "emotion": utt.emotion,
                "waveform": f"wav/{utt.utt_id}.wav",
                "frames": f"frames/{utt.utt_id}.npz",
                "features": f"features/{utt.utt_id}.npz",
            })
    return Corpus(utterances, manifest, {p.speaker_id: p for p in profiles})


def write_corpus(corpus: Corpus, out_dir: str) -> str:
    for sub in ("wav", "frames", "features"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    recs = {r["id"]: r for r in corpus.manifest}
    for utt in corpus.utterances:
        rec = recs[utt.utt_id]
        pcm = np.clip(np.round(utt.waveform.samples * 32767), -32768, 32767).astype(np.int16)
        wavfile.write(os.path.join(out_dir, rec["waveform"]), SAMPLE_RATE, pcm)
        save_container(os.path.join(out_dir, rec["frames"]), "frames",
                       {"frames": utt.frames, "phonemes": utt.frame_phonemes}, {"frame_rate_hz": FRAME_RATE})
        save_container(os.path.join(out_dir, rec["features"]), "features",
                       {"lip": utt.features.lip, "face": utt.features.face}, {"fps": utt.features.fps})
    path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(corpus.manifest, path)
    return path


def write_manifest(records: tp.Iterable[tp.Mapping[str, tp.Any]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path: str) -> tp.List[tp.Dict[str, tp.Any]]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def read_corpus(data_dir: str) -> Corpus:
    manifest = read_manifest(os.path.join(data_dir, "manifest.jsonl"))
    utterances = []
    for rec in manifest:
        sr, pcm = wavfile.read(os.path.join(data_dir, rec["waveform"]))
        fr, _ = load_container(os.path.join(data_dir, rec["frames"]), "frames")
        ft, _ = load_container(os.path.join(data_dir, rec["features"]), "features")
        utterances.append(Utterance(
            utt_id=rec["id"], speaker_id=rec["speaker_id"], emotion=rec["emotion"],
            transcript=rec["transcript"], waveform=Waveform(pcm.astype(np.float64) / 32767, sr),
            frames=fr["frames"], features=FeatureStreams(ft["lip"], ft["face"]),
            frame_phonemes=fr["phonemes"]))
    return Corpus(utterances, manifest)


# --------------------------------------------------------------------------
# oracle providers

def _words_from_symbols(symbols: tp.Sequence[tp.Optional[int]],
                        inverse: tp.Mapping[tp.Tuple[str, ...], str]) -> str:
    """Collapse runs, split on SEP/blank, map pronunciations back to words."""
    collapsed: tp.List[tp.Optional[int]] = []
    for s in symbols:
        if not collapsed or collapsed[-1] != s:
            collapsed.append(s)
    words, cur = [], []
    for s in collapsed + [None]:
        if s is None or s == SEP:
            if cur:
                if UNK in cur:
                    words.append(RESERVED[UNK])
                else:
                    words.append(inverse.get(tuple(VOCAB.symbol(p) for p in cur), RESERVED[UNK]))
                cur = []
        else:
            cur.append(s)
    return " ".join(words)


def decode_frame_symbols(frames: np.ndarray) -> tp.List[tp.Optional[int]]:
    """Phoneme id per frame from the code channels; None for blank frames,
    UNK for codes that match no phoneme."""
    code = np.asarray(frames, dtype=np.float64)[:, :CODE_DIM]
    out: tp.List[tp.Optional[int]] = []
    for row in code:
        if np.linalg.norm(row) < 0.5 * CODE_SCALE:
            out.append(None)
            continue
        j = int(np.argmax(row))
        out.append(CODE_SYMBOLS[j] if row[j] >= 0.5 * CODE_SCALE else UNK)
    return out


def oracle_transcribe(frames: np.ndarray, lexicon: tp.Mapping[str, tp.Sequence[str]]) -> str:
    return _words_from_symbols(decode_frame_symbols(frames), inverse_lexicon(lexicon))


def oracle_lipread(features: FeatureStreams, lexicon: tp.Mapping[str, tp.Sequence[str]]) -> str:
    """Transcript from the viseme channels of the lip stream (oracle VSR)."""
    shapes = np.asarray(features.lip)[:, 1:]
    cands = np.asarray(CODE_SYMBOLS)
    d = ((shapes[:, None, :] - VISEMES[cands][None, :, :]) ** 2).sum(-1)
    symbols = [int(cands[j]) for j in d.argmin(axis=1)]
    return _words_from_symbols(symbols, inverse_lexicon(lexicon))


_F0_CENTRES = np.linspace(math.log(70.0), math.log(350.0), 40)


def speaker_embedding(waveform: Waveform) -> np.ndarray:
    """Smoothed, mean-removed log spectrum of voiced frames below 3 kHz,
    concatenated with a radial-basis code of the median log F0 (each half
    unit-normalised)."""
    x = waveform.samples
    frames = frame_signal(x)
    f0 = track_f0(x)
    voiced = f0 > 0
    if not voiced.any():
        raise ValidationError("speaker embedding needs voiced speech")
    seg = frames[voiced]
    n = seg.shape[1]
    power = np.abs(np.fft.rfft(seg * np.hanning(n), axis=-1)) ** 2
    ltas = np.log(power.mean(axis=0)[2: n * 3000 // SAMPLE_RATE] + 1e-10)
    ltas = uniform_filter1d(ltas, 9, mode="nearest")
    ltas -= ltas.mean()
    pitch = np.exp(-0.5 * ((_F0_CENTRES - np.median(np.log(f0[voiced]))) / 0.1) ** 2)
    return np.concatenate([ltas / np.linalg.norm(ltas), pitch / np.linalg.norm(pitch)])


def emotion_embedding(features: FeatureStreams) -> np.ndarray:
    return np.asarray(features.face).mean(axis=0)


def toy_embedders(utterance: Utterance) -> tp.Tuple[np.ndarray, np.ndarray]:
    return speaker_embedding(utterance.waveform), emotion_embedding(utterance.features)


def prosody_embedding(frames: np.ndarray) -> np.ndarray:
    """Speech-side expressiveness summary from F0 and energy channels; used
    for emotion similarity of generated audio, where no face track exists."""
    frames = np.asarray(frames, dtype=np.float64)
    f0 = frames[:, F0_CHANNEL]
    voiced = f0 > 0.4
    e = frames[:, ENERGY_CHANNEL]
    f0v = f0[voiced] if voiced.any() else np.zeros(1)
    return np.array([f0v.mean(), f0v.std() * 5, e.mean(), e.std(), voiced.mean()])


class OracleScorers:
    """Transcriber and sync scorer over token grids, via the codec decoder."""

    def __init__(self, books, lexicon: tp.Mapping[str, tp.Sequence[str]]):
        from .codec import rvq_decode
        self._decode = rvq_decode
        self.books = books
        self.lexicon = lexicon

    def transcribe(self, grid: np.ndarray) -> str:
        return oracle_transcribe(self._decode(grid, self.books), self.lexicon)

    def sync(self, grid: np.ndarray, features: FeatureStreams) -> float:
        return toy_sync_distance(self._decode(grid, self.books), features)


def text_ids_for(transcript: str, lexicon: tp.Mapping[str, tp.Sequence[str]]) -> np.ndarray:
    return np.asarray(g2p(normalize(transcript), lexicon, VOCAB), dtype=np.int64)


def shuffled_features(features: FeatureStreams, seed: int) -> FeatureStreams:
    """Same video frames in a seeded random temporal order."""
    perm = np.random.default_rng(seed).permutation(features.num_frames)
    return FeatureStreams(features.lip[perm], features.face[perm])
