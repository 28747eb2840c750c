import math

import numpy as np
import pytest

from avdub import synthcorpus as sc
from avdub.errors import UndefinedResultError, ValidationError
from avdub.metrics import (METRIC_COLUMNS, Waveform, cosine_similarity, energy_distance,
                           energy_envelope, f0_distance, mcd, mcd_from_mfcc, mfcc, pearson,
                           read_metric_csv, toy_sync_distance, track_f0, wer, write_metric_records)
from avdub.visual import FeatureStreams

SR = 16000
MCD_PER_UNIT = 6.141851463713754      # 10 / ln 10 * sqrt 2


def tone(freq, seconds=0.5, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def sawtooth(freq, seconds=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return 2 * (t * freq - np.floor(0.5 + t * freq))


def edit_distance(a, b):
    d = [[i + j if i * j == 0 else 0 for j in range(len(b) + 1)] for i in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


def straight_mcd(a, b):
    """Loop-level MFCC + MCD written without the library's helpers."""
    win, hop, n_mels = 640, 160, 26
    hann = [0.5 - 0.5 * math.cos(2 * math.pi * n / (win - 1)) for n in range(win)]
    mel = lambda f: 2595 * math.log10(1 + f / 700)
    inv = lambda m: 700 * (10 ** (m / 2595) - 1)
    edges = [inv(mel(8000) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    freqs = [k * SR / win for k in range(win // 2 + 1)]
    fb = [[max(0.0, min((f - edges[m]) / (edges[m + 1] - edges[m]),
                        (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]))) for f in freqs]
          for m in range(n_mels)]

    def cep(x):
        out = []
        for start in range(0, len(x) - win + 1, hop):
            spec = np.fft.rfft([x[start + n] * hann[n] for n in range(win)])
            power = [abs(s) ** 2 for s in spec]
            logmel = [math.log(max(sum(w * p for w, p in zip(row, power)), 1e-10)) for row in fb]
            row = []
            for q in range(1, 14):
                acc = sum(logmel[m] * math.cos(math.pi * q * (2 * m + 1) / (2 * n_mels)) for m in range(n_mels))
                row.append(acc * math.sqrt(2 / n_mels))
            out.append(row)
        return out

    ca, cb = cep(a), cep(b)
    per = [10 / math.log(10) * math.sqrt(2 * sum((p - q) ** 2 for p, q in zip(r, s))) for r, s in zip(ca, cb)]
    return sum(per) / len(per)


# ---- wer ---------------------------------------------------------------------

def test_wer_examples():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a b c", "a x c") == pytest.approx(1 / 3)
    assert wer("the cat", "cat") == 0.5
    with pytest.raises(ValidationError):
        wer("", "a")


def test_wer_matches_dp(rng):
    words = list("abcde")
    for _ in range(300):
        ref = list(rng.choice(words, size=int(rng.integers(1, 9))))
        hyp = list(rng.choice(words, size=int(rng.integers(0, 9))))
        assert wer(ref, hyp) == edit_distance(ref, hyp) / len(ref)


# ---- mcd ---------------------------------------------------------------------

def test_mcd_identity_and_offset_law(rng):
    x = rng.normal(size=SR // 4)
    assert mcd(x, x) == 0.0
    c = mfcc(x)
    for delta in (0.1, 1.0, 2.5):
        shifted = c.copy()
        shifted[:, 4] += delta
        assert mcd_from_mfcc(c, shifted) == pytest.approx(MCD_PER_UNIT * delta, abs=1e-6)
    assert MCD_PER_UNIT == pytest.approx(10 / math.log(10) * math.sqrt(2), abs=1e-12)


def test_mcd_matches_straight_line(rng):
    noise = rng.normal(size=2000)
    assert mcd(noise, 0.5 * noise) == pytest.approx(straight_mcd(noise, 0.5 * noise), abs=1e-9)


def test_mcd_short_input():
    with pytest.raises(ValidationError):
        mcd(np.ones(100), np.ones(100))


def test_trailing_silence_invariance(rng):
    a, b = rng.normal(size=4000), rng.normal(size=4000)
    pad = np.zeros(1600)
    assert abs(mcd(a, b) - mcd(np.r_[a, pad], np.r_[b, pad])) <= 1e-9
    assert abs(energy_distance(a, b) - energy_distance(np.r_[a, pad], np.r_[b, pad])) <= 1e-9


# ---- f0 / energy ---------------------------------------------------------------------

def test_f0_tracker_on_tones():
    for f in (100, 150, 200, 320):
        est = track_f0(tone(f))
        assert np.all(np.abs(est[est > 0] - f) < 2) and np.mean(est > 0) > 0.9


def test_f0_distance_examples(rng):
    saw = sawtooth(200)
    assert f0_distance(saw, saw) == 0.0
    assert f0_distance(tone(100), tone(200)) == pytest.approx(100, abs=5)
    with pytest.raises(UndefinedResultError):
        f0_distance(rng.normal(size=8000), tone(200))
    with pytest.raises(ValidationError):
        f0_distance(tone(200, 0.05), tone(200, 0.05))


def test_energy_distance_laws(rng):
    x = rng.normal(size=5000)
    assert energy_distance(x, x) == 0.0
    assert energy_distance(np.zeros(3000), np.zeros(3000)) == 0.0
    assert mcd(np.zeros(3000), np.zeros(3000)) == 0.0
    assert energy_distance(x, 2 * x) == pytest.approx(float(np.mean(energy_envelope(x))), rel=1e-12)


def test_distances_symmetric(rng):
    a, b = rng.normal(size=3000), 0.3 * rng.normal(size=3000)
    assert mcd(a, b) == pytest.approx(mcd(b, a))
    assert energy_distance(a, b) == pytest.approx(energy_distance(b, a))
    ta, tb = tone(140)[:3000] + 0.01 * a, tone(170)[:3000] + 0.01 * b
    assert f0_distance(ta, tb) == pytest.approx(f0_distance(tb, ta))


# ---- vectors and series -------------------------------------------------------------

def test_cosine():
    v = np.array([0.3, -1.0, 2.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity(v, 2 * v) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.7071067811865476, abs=1e-12)
    with pytest.raises(ValidationError):
        cosine_similarity([0, 0], [1, 0])


def test_pearson():
    x = np.array([0.2, 1.5, -0.3, 4.0])
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-9)
    with pytest.raises(UndefinedResultError):
        pearson([1, 1, 1], [1, 2, 3])


# ---- sync -----------------------------------------------------------------------------

def sync_case(env):
    m = len(env)
    frames = np.zeros((2 * m, 50))
    frames[:, 48] = np.repeat(env, 2)
    return frames


def test_sync_distance_extremes(rng):
    ap = rng.normal(size=12)
    feats = FeatureStreams(np.c_[ap, rng.normal(size=(12, 3))], np.zeros((12, 2)))
    assert toy_sync_distance(sync_case(ap), feats) == pytest.approx(0.0, abs=1e-12)
    assert toy_sync_distance(sync_case(-ap), feats) == pytest.approx(2.0, abs=1e-12)
    d = toy_sync_distance(sync_case(ap + rng.normal(size=12)), feats)
    assert toy_sync_distance(sync_case(3 * (ap + 0) + 5), feats) == pytest.approx(0.0, abs=1e-12)
    assert 0 <= d <= 2
    with pytest.raises(UndefinedResultError):
        toy_sync_distance(sync_case(np.ones(12)), feats)
    with pytest.raises(ValidationError):
        toy_sync_distance(np.zeros((10, 50)), feats)


def test_sync_affine_invariance(rng):
    ap = rng.normal(size=20)
    env = ap + rng.normal(size=20)
    feats = FeatureStreams(np.c_[ap], np.zeros((20, 1)))
    scaled = FeatureStreams(np.c_[2.5 * ap + 1], np.zeros((20, 1)))
    base = toy_sync_distance(sync_case(env), feats)
    assert toy_sync_distance(sync_case(0.1 * env + 7), feats) == pytest.approx(base, abs=1e-12)
    assert toy_sync_distance(sync_case(env), scaled) == pytest.approx(base, abs=1e-12)


def test_matched_beats_shuffled_on_synthetic_clips(medium_corpus):
    wins = 0
    for i, u in enumerate(medium_corpus.utterances):
        matched = toy_sync_distance(u.frames, u.features)
        shuffled = toy_sync_distance(u.frames, sc.shuffled_features(u.features, seed=i))
        wins += matched < shuffled
    assert wins >= 95


# ---- records ------------------------------------------------------------------------------

def test_metric_records_round_trip(tmp_path):
    recs = [{"id": "u1", "wer": 0.0, "mcd": 3.5, "f0": float("nan"), "energy": 0.1,
             "spk_sim": 0.9, "emo_sim": 0.8, "sync_distance": 0.2, "extra": 1}]
    write_metric_records(recs, tmp_path / "m.csv", tmp_path / "m.jsonl")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS)
    back = read_metric_csv(tmp_path / "m.csv")
    assert back[0]["id"] == "u1" and back[0]["mcd"] == 3.5 and math.isnan(back[0]["f0"])
    assert '"f0": null' in (tmp_path / "m.jsonl").read_text()


def test_waveform_contract():
    with pytest.raises(ValidationError):
        Waveform(np.zeros(10), sample_rate=8000)
    with pytest.raises(ValidationError):
        Waveform(np.array([0.0, np.nan]))
    assert Waveform(np.zeros(8000)).duration_s == 0.5
