"""Objective evaluation metrics.

Signal-level metrics share one STFT geometry: a 640-sample Hann window with
a 160-sample hop at 16 kHz, no centre padding. Before comparing, each
signal loses its trailing digital silence and the pair is cut to the
shorter length.
"""
from dataclasses import dataclass
import csv
import json
import math
import typing as tp

import numpy as np
from scipy.fft import dct, rfft

from . import kernels
from .errors import UndefinedResultError, ValidationError

SAMPLE_RATE = 16000
WIN_LENGTH = 640
HOP_LENGTH = 160
N_MELS = 26
N_MFCC = 13
F0_MIN = 80.0
F0_MAX = 600.0
VOICING_THRESHOLD = 0.5
SILENCE_EPS = 1e-8
MCD_SCALE = 10.0 / math.log(10.0)

METRIC_COLUMNS = ("id", "wer", "mcd", "f0", "energy", "spk_sim", "emo_sim", "sync_distance")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValidationError("waveform must be 1-D")
        if not np.all(np.isfinite(x)):
            raise ValidationError("waveform contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise ValidationError(f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ScorerProviders:
    """Pluggable stand-ins for the external scoring models."""
    transcriber: tp.Callable[..., str]
    sync_scorer: tp.Callable[..., float]
    speaker_embedder: tp.Callable[..., np.ndarray]
    emotion_embedder: tp.Callable[..., np.ndarray]


# --------------------------------------------------------------------------
# text

def _words(x: tp.Union[str, tp.Sequence[str]]) -> tp.List[str]:
    return x.split() if isinstance(x, str) else list(x)


def wer(reference: tp.Union[str, tp.Sequence[str]], hypothesis: tp.Union[str, tp.Sequence[str]]) -> float:
    """Word edit distance divided by the reference length."""
    ref, hyp = _words(reference), _words(hypothesis)
    if not ref:
        raise ValidationError("reference transcript is empty")
    vocab: tp.Dict[str, int] = {}
    r = [vocab.setdefault(w, len(vocab)) for w in ref]
    h = [vocab.setdefault(w, len(vocab)) for w in hyp]
    return kernels.levenshtein(r, h) / len(ref)


# --------------------------------------------------------------------------
# signal helpers

def _samples(x: tp.Union[Waveform, np.ndarray]) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def trim_trailing_silence(x: np.ndarray, eps: float = SILENCE_EPS) -> np.ndarray:
    nz = np.flatnonzero(np.abs(x) > eps)
    return x[: nz[-1] + 1] if len(nz) else x[:0]


def trim_pair(a, b) -> tp.Tuple[np.ndarray, np.ndarray]:
    """Drop trailing silence from both, then cut to the shorter. Two fully
    silent signals are kept whole so they compare as identical."""
    raw_a, raw_b = _samples(a), _samples(b)
    a, b = trim_trailing_silence(raw_a), trim_trailing_silence(raw_b)
    if not len(a) and not len(b):
        a, b = raw_a, raw_b
    n = min(len(a), len(b))
    return a[:n], b[:n]


def frame_signal(x: np.ndarray, win: int = WIN_LENGTH, hop: int = HOP_LENGTH) -> np.ndarray:
    if len(x) < win:
        raise ValidationError(f"signal of {len(x)} samples is shorter than one {win}-sample window")
    n = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def magnitude_spectrogram(x: np.ndarray) -> np.ndarray:
    frames = frame_signal(x) * np.hanning(WIN_LENGTH)
    return np.abs(rfft(frames, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = WIN_LENGTH, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: tp.Optional[float] = None) -> np.ndarray:
    """Triangular HTK-mel filters, ``[n_mels, n_fft // 2 + 1]``."""
    fmax = fmax or sr / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


_FB = mel_filterbank()


def mfcc(x: tp.Union[Waveform, np.ndarray]) -> np.ndarray:
    """``[frames, 13]`` cepstra c1..c13 (c0 dropped)."""
    power = magnitude_spectrogram(_samples(x)) ** 2
    logmel = np.log(np.maximum(power @ _FB.T, 1e-10))
    return dct(logmel, type=2, norm="ortho", axis=-1)[:, 1:N_MFCC + 1]


def mcd_from_mfcc(ref: np.ndarray, hyp: np.ndarray) -> float:
    n = min(len(ref), len(hyp))
    if n == 0:
        raise ValidationError("no frames to compare")
    diff = np.asarray(ref[:n]) - np.asarray(hyp[:n])
    return float(np.mean(MCD_SCALE * np.sqrt(2.0 * np.sum(diff ** 2, axis=-1))))


def mcd(ref: tp.Union[Waveform, np.ndarray], hyp: tp.Union[Waveform, np.ndarray]) -> float:
    """Frame-aligned mel-cepstral distortion in dB."""
    a, b = trim_pair(ref, hyp)
    return mcd_from_mfcc(mfcc(a), mfcc(b))


def energy_envelope(x: tp.Union[Waveform, np.ndarray]) -> np.ndarray:
    """Per-frame RMS of the STFT magnitude."""
    mag = magnitude_spectrogram(_samples(x))
    return np.sqrt(np.mean(mag ** 2, axis=-1))


def energy_distance(ref, hyp) -> float:
    a, b = trim_pair(ref, hyp)
    return float(np.mean(np.abs(energy_envelope(a) - energy_envelope(b))))


# --------------------------------------------------------------------------
# pitch

def track_f0(x: tp.Union[Waveform, np.ndarray], sr: int = SAMPLE_RATE, fmin: float = F0_MIN,
             fmax: float = F0_MAX, threshold: float = VOICING_THRESHOLD) -> np.ndarray:
    """Frame-wise F0 in Hz from the normalised autocorrelation; 0 marks
    unvoiced frames.

    The first local maximum reaching 90% of the best peak wins, which avoids
    reporting sub-octaves for strongly periodic input.
    """
    frames = frame_signal(_samples(x))
    lag_min = int(math.ceil(sr / fmax))
    lag_max = int(math.floor(sr / fmin))
    n = frames.shape[1]
    out = np.zeros(len(frames))
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    for i, fr in enumerate(frames):
        fr = fr - fr.mean()
        e = fr ** 2
        if e.sum() <= 1e-10 * n:
            continue
        spec = np.fft.rfft(fr, nfft)
        ac = np.fft.irfft(spec * np.conj(spec), nfft)[: lag_max + 2]
        cum = np.concatenate([[0.0], np.cumsum(e)])
        lags = np.arange(lag_min - 1, lag_max + 2)
        head = cum[n - lags]                 # energy of x[0 : n - lag]
        tail = cum[n] - cum[lags]            # energy of x[lag : n]
        denom = np.sqrt(np.maximum(head * tail, 1e-300))
        r = ac[lags] / denom
        inner = r[1:-1]
        best = inner.max()
        if best < threshold:
            continue
        peaks = [j for j in range(len(inner))
                 if inner[j] >= 0.9 * best and r[j] <= inner[j] >= r[j + 2]]
        j = peaks[0] if peaks else int(inner.argmax())
        y0, y1, y2 = r[j], r[j + 1], r[j + 2]
        denom2 = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom2 if denom2 < 0 else 0.0
        out[i] = sr / (lags[j + 1] + float(np.clip(shift, -0.5, 0.5)))
    return out


def f0_distance(ref, hyp) -> float:
    """Mean |F0 difference| over frames voiced in both signals."""
    a, b = _samples(ref), _samples(hyp)
    min_len = SAMPLE_RATE // 10
    if len(a) < min_len or len(b) < min_len:
        raise ValidationError("f0_distance needs at least 100 ms of audio")
    a, b = trim_pair(a, b)
    if len(a) < WIN_LENGTH:
        raise UndefinedResultError("signals are silent after trimming")
    fa, fb = track_f0(a), track_f0(b)
    both = (fa > 0) & (fb > 0)
    if not both.any():
        raise UndefinedResultError("no frames are voiced in both signals")
    return float(np.mean(np.abs(fa[both] - fb[both])))


# --------------------------------------------------------------------------
# vectors and series

def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError("embeddings differ in size")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("pearson needs two equal-length series of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(dx @ dx), math.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedResultError("pearson correlation of a constant series")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def toy_sync_distance(frames: np.ndarray, features, energy_channel: tp.Optional[int] = None,
                      aperture_channel: int = 0) -> float:
    """``1 - r`` between the frame energy envelope, averaged over frame pairs,
    and the lip-aperture channel. Lies in [0, 2]."""
    if energy_channel is None:
        from .synthcorpus import ENERGY_CHANNEL
        energy_channel = ENERGY_CHANNEL
    frames = np.asarray(frames, dtype=np.float64)
    lip = np.asarray(features.lip, dtype=np.float64)
    m = lip.shape[0]
    if frames.shape[0] != 2 * m:
        raise ValidationError(f"expected {2 * m} frames for {m} video frames, got {frames.shape[0]}")
    env = frames[:, energy_channel].reshape(m, 2).mean(axis=1)
    return 1.0 - pearson(env, lip[:, aperture_channel])


# --------------------------------------------------------------------------
# records

def write_metric_records(records: tp.Sequence[tp.Mapping[str, tp.Any]], csv_path: str,
                         jsonl_path: tp.Optional[str] = None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for rec in records:
            w.writerow({k: _fmt(rec.get(k)) for k in METRIC_COLUMNS})
    if jsonl_path:
        with open(jsonl_path, "w", encoding="utf-8") as f:
            for rec in records:
                clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                         for k, v in rec.items()}
                f.write(json.dumps(clean, sort_keys=True) + "\n")


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return v


def read_metric_csv(path: str) -> tp.List[tp.Dict[str, tp.Any]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if rows and set(rows[0]) != set(METRIC_COLUMNS):
        raise ValidationError(f"{path}: unexpected columns {sorted(rows[0])}")
    out = []
    for row in rows:
        out.append({k: (row[k] if k == "id" else float(row[k])) for k in METRIC_COLUMNS})
    return out
