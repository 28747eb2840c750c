"""Acceptance criteria, one verdict line each in the terminal summary.

Criteria 7 and 8 and the two decoding checks share the session ``toy_run``
fixture (a 5000-step model on the 50 x 10 corpus), so the first of them to
run pays for training.
"""
import copy
import csv
import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from _util import brute_formula, brute_prose, random_example, tiny_model, verdict
from avdub import config
from avdub import synthcorpus as sc
from avdub.codec import rvq_decode
from avdub.curation import CurationConfig, make_synthetic_sources, oracle_providers, run_pipeline
from avdub.decoding import (Candidate, GenerationRequest, dub, generate_one, nucleus_sample,
                            select_candidate, video_to_speech)
from avdub.errors import UndefinedResultError, ValidationError
from avdub.frontend import SEP
from avdub.metrics import (METRIC_COLUMNS, Waveform, energy_distance, energy_envelope, f0_distance,
                           mcd_from_mfcc, mfcc, pearson, toy_sync_distance, wer)
from avdub.nclm import (ModelConfig, assemble, batch_loss, delay, forward, loss,
                        undelay)
from avdub.training import by_speaker, crop_prompt

SR = 16000
MCD_PER_UNIT = 6.141851463713754      # 10 / ln 10 * sqrt 2


# ---- 1. delay bijection -------------------------------------------------------------

def test_c01_delay_bijection():
    start = time.perf_counter()
    v, checked, failures = 4, 0, 0
    for t, k in itertools.product(range(1, 9), range(1, 5)):
        # delay never looks at values: a grid of distinct cell ids must land
        # on distinct cells, which makes it injective for every value grid
        ids = np.arange(t * k).reshape(t, k)
        d = delay(ids, t * k)
        cells = d[d != t * k]
        failures += sorted(cells.tolist()) != list(range(t * k))
        failures += not np.array_equal(undelay(d, t * k), ids)
        # every value grid, where the count is tractable
        if v ** (t * k) <= 4 ** 7:
            seen = set()
            for flat in itertools.product(range(v), repeat=t * k):
                g = np.array(flat).reshape(t, k)
                d = delay(g, v)
                failures += not np.array_equal(undelay(d, v), g)
                seen.add(d.tobytes())
                checked += 1
            failures += len(seen) != v ** (t * k)
    # onto: among all [T+K-1, K] grids over V+1 symbols, undelay accepts exactly the image
    for t, k in [(1, 1), (2, 1), (4, 1), (6, 1), (1, 2), (2, 2)]:
        s = t + k - 1
        accepted = 0
        for flat in itertools.product(range(v + 1), repeat=s * k):
            d = np.array(flat).reshape(s, k)
            try:
                g = undelay(d, v)
            except ValidationError:
                continue
            accepted += 1
            failures += not np.array_equal(delay(g, v), d)
        failures += accepted != v ** (t * k)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = rng.integers(0, 64, size=(64, 4))
        failures += not np.array_equal(undelay(delay(g, 64), 64), g)
    seconds = time.perf_counter() - start
    verdict(1, "delay bijection", failures == 0 and seconds < 10,
            f"{failures} failures over {checked} enumerated grids + 1000 random, {seconds:.1f}s")


# ---- 2. causality ---------------------------------------------------------------------

def test_c02_causality():
    rng = np.random.default_rng(2)
    failures, trials = 0, 0
    for seed in (0, 1, 2):
        m = tiny_model(seed=seed).eval()
        with torch.no_grad():
            for p in m.fusion.parameters():
                p.normal_(0, 0.1)
            for _ in range(100):
                text = rng.integers(3, 42, size=int(rng.integers(1, 8)))
                src = rng.integers(0, 9, size=(int(rng.integers(1, 8)), 4))
                n = int(rng.integers(2, 16))
                fused = torch.as_tensor(rng.normal(size=(n, 32)))
                t = int(rng.integers(0, n - 1))
                pert = fused.clone()
                pert[t + 1:] = torch.as_tensor(rng.normal(scale=5.0, size=(n - t - 1, 32)))
                a = forward(assemble(text, src, fused, m), m)
                b = forward(assemble(text, src, pert, m), m)
                failures += not torch.equal(a[: t + 1], b[: t + 1])
                trials += 1
    verdict(2, "causality", failures == 0, f"{failures} failures in {trials} trials over 3 seeds")


# ---- 3. gradient oracle ------------------------------------------------------------------

def test_c03_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    m = tiny_model(seed=7)
    assert (m.config.num_layers, m.config.d_model) == (2, 32)
    with torch.no_grad():
        for p in m.fusion.parameters():
            p.normal_(0, 0.05)
    ex = random_example(rng, m.config, frames=3, src_rows=4, text_len=4)
    m.zero_grad()
    batch_loss([ex], m).backward()
    eps, worst, groups, failures = 1e-6, 0.0, 0, []
    for name, params in m.parameter_groups().items():
        groups += 1
        for p in params:
            flat, grad = p.data.view(-1), p.grad.view(-1)
            for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
                old = float(flat[i])
                with torch.no_grad():
                    flat[i] = old + eps
                    up = float(batch_loss([ex], m))
                    flat[i] = old - eps
                    down = float(batch_loss([ex], m))
                    flat[i] = old
                fd, g = (up - down) / (2 * eps), float(grad[i])
                scale = max(abs(fd), abs(g))
                if scale > 1e-7:
                    rel = abs(fd - g) / scale
                    worst = max(worst, rel)
                    if rel > 1e-3:
                        failures.append((name, fd, g))
    seconds = time.perf_counter() - start
    verdict(3, "gradient oracle", not failures and seconds < 120,
            f"{groups} groups, worst relative error {worst:.1e}, {seconds:.1f}s")


# ---- 4. loss closed forms -----------------------------------------------------------------

def test_c04_loss_closed_forms():
    rng = np.random.default_rng(4)
    worst = 0.0
    for k, v in [(4, 8), (4, 64), (2, 5), (4, 2048), (1, 3)]:
        alpha = tuple(rng.uniform(0.1, 4.0, size=k))
        for t in (1, 7, 30):
            target = delay(rng.integers(0, v, size=(t, k)), v)
            got = float(loss(torch.zeros(*target.shape, v + 1, dtype=torch.float64), target, alpha))
            worst = max(worst, abs(got - sum(alpha) * math.log(v + 1)))
    defaults = ModelConfig().alpha == (3, 1, 1, 1) and config.from_dict().model.alpha == [3, 1, 1, 1]
    verdict(4, "loss closed forms", worst <= 1e-9 and defaults,
            f"max deviation {worst:.1e}, default alpha {ModelConfig().alpha}")


# ---- 5. nucleus support ----------------------------------------------------------------------

def test_c05_nucleus_support():
    rng = np.random.default_rng(5)
    logits = np.log([0.5, 0.3, 0.15, 0.05])
    draws = np.array([nucleus_sample(logits, 0.8, 1.0, rng) for _ in range(100_000)])
    outside = int(np.sum(draws > 1))
    share = float(np.mean(draws == 0))
    verdict(5, "nucleus support", outside == 0 and abs(share - 0.625) < 0.01,
            f"{outside} draws outside {{0, 1}}, token 0 share {share:.3f}")


# ---- 6. selection oracle --------------------------------------------------------------------------

def test_c06_selection_oracle():
    rng = np.random.default_rng(6)
    wers = [0.0, 0.02, 0.049, 0.05, 0.051, 0.1, 0.25, 1.0]
    mismatches = 0
    for n in range(10_000):
        if n % 2:
            pairs = zip(rng.choice(wers, size=10), rng.integers(0, 5, size=10).astype(float))
        else:
            pairs = zip(rng.uniform(0, 0.2, size=10), rng.uniform(0, 2, size=10))
        cs = [Candidate(i, np.zeros((2, 1), int), i, float(w), float(s)) for i, (w, s) in enumerate(pairs)]
        mismatches += select_candidate(cs, "prose").index != brute_prose(cs, 0.05).index
        mismatches += select_candidate(cs, "formula").index != brute_formula(cs, 0.05).index
    abc = [Candidate(i, np.zeros((2, 1), int), i, w, s)
           for i, (w, s) in enumerate([(0.0, 8.0), (0.02, 7.0), (0.10, 6.0)])]
    example = (select_candidate(abc, "prose").index, select_candidate(abc, "formula").index)
    verdict(6, "candidate selection", mismatches == 0 and example == (1, 0),
            f"{mismatches} mismatches in 10000 sets, A/B/C gives prose->{'ABC'[example[0]]} "
            f"formula->{'ABC'[example[1]]}")


# ---- 7. toy training -----------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_toy_training(toy_run):
    h = toy_run.history
    assert h.eval_steps[0] == 0 and h.eval_steps[-1] == 5000
    first, last = h.eval_losses[0], h.eval_losses[-1]
    ratio = last / first
    verdict(7, "toy training", ratio < 0.5 and toy_run.seconds < 1800,
            f"held-out loss {first:.3f} -> {last:.3f} ({ratio:.0%}), {toy_run.seconds / 60:.1f} min")


# ---- 8. visual conditioning -------------------------------------------------------------------

def _prompt_for(run, target):
    same = sorted(by_speaker(run.pool)[target.speaker_id], key=lambda u: u.utt_id)
    return crop_prompt(same[0].grid, 150)


def _sync(grid, run, features):
    try:
        return toy_sync_distance(rvq_decode(grid, run.books), features)
    except UndefinedResultError:
        return math.inf


def _matched_wins(model, run):
    wins, gaps = 0, []
    for i, target in enumerate(run.heldout[:100]):
        src = _prompt_for(run, target)
        shuffled = sc.shuffled_features(target.features, seed=i)
        a = generate_one(GenerationRequest(target.text, target.text_ids, src, target.features, seed=i), model)
        b = generate_one(GenerationRequest(target.text, target.text_ids, src, shuffled, seed=i), model)
        da, db = _sync(a, run, target.features), _sync(b, run, target.features)
        wins += da < db
        gaps.append((da, db))
    return wins, gaps


@pytest.mark.slow
def test_c08_visual_conditioning(toy_run):
    assert len(toy_run.heldout) >= 100
    torch.set_num_threads(1)
    wins, gaps = _matched_wins(toy_run.model, toy_run)
    ablated = copy.deepcopy(toy_run.model)
    with torch.no_grad():
        for p in ablated.fusion.parameters():
            p.zero_()
    ablation_wins, _ = _matched_wins(ablated, toy_run)
    matched = np.mean([a for a, _ in gaps])
    shuffled = np.mean([b for _, b in gaps])
    verdict(8, "visual conditioning", wins >= 80 and ablation_wins <= 60,
            f"matched beats shuffled on {wins}/100 (mean sync {matched:.3f} vs {shuffled:.3f}), "
            f"zero-fusion ablation {ablation_wins}/100")


# ---- 9. metric closed forms ---------------------------------------------------------------------

def _tone(freq, seconds=0.5, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def test_c09_metric_closed_forms():
    rng = np.random.default_rng(9)
    c = mfcc(rng.normal(size=SR // 4))
    mcd_dev = 0.0
    for delta in (0.1, 0.5, 1.0, 2.5):
        for coef in (1, 4, 12):
            shifted = c.copy()
            shifted[:, coef] += delta
            mcd_dev = max(mcd_dev, abs(mcd_from_mfcc(c, shifted) - MCD_PER_UNIT * delta))
    x = rng.normal(size=5000)
    energy_dev = abs(energy_distance(x, 2 * x) - float(np.mean(energy_envelope(x))))
    f0 = f0_distance(_tone(100), _tone(200))
    r = pearson([1, 2, 3, 4], [1, 3, 2, 4])
    ok = mcd_dev <= 1e-6 and energy_dev <= 1e-9 and abs(f0 - 100) <= 5 and abs(r - 0.8) <= 1e-9
    verdict(9, "metric closed forms", ok,
            f"MCD law off by {mcd_dev:.1e}, energy doubling off by {energy_dev:.1e}, "
            f"f0 100 vs 200 Hz = {f0:.2f}, pearson = {r:.12f}")


# ---- 10. curation ------------------------------------------------------------------------------

def _greedy_clusters(vectors, threshold):
    means, labels = [], []
    for v in vectors:
        v = v / np.linalg.norm(v)
        for j, (total, _) in enumerate(means):
            centre = total / np.linalg.norm(total)
            if centre @ v >= threshold:
                means[j] = (total + v, None)
                labels.append(j)
                break
        else:
            means.append((v.copy(), None))
            labels.append(len(means) - 1)
    return labels


def _expected_curation(sources, cfg):
    """Survivors, drop stages and statistics recomputed from the payload labels."""
    expected_drops, kept = {}, []
    for item in sources:
        clip = item.payload
        if clip.language != cfg.language:
            expected_drops[item.item_id] = "language_id"
            continue
        speech = np.flatnonzero(np.asarray(clip.utterance.frame_phonemes) != SEP)
        a = max(0.0, speech[0] / 50 - cfg.pad_s)
        b = min(item.duration_s, (speech[-1] + 1) / 50 + cfg.pad_s)
        lo, hi = int(round(a * 25)), int(round(b * 25))
        yaw, pitch = clip.yaw[lo:max(hi, lo + 1)], clip.pitch[lo:max(hi, lo + 1)]
        steady = len(yaw) < 2 or max(np.abs(np.diff(yaw)).max(), np.abs(np.diff(pitch)).max()) <= cfg.max_jump_deg
        if max(np.abs(yaw).max(), np.abs(pitch).max()) > cfg.max_abs_deg or not steady:
            expected_drops[item.item_id] = "frontal_filter"
            continue
        if clip.active_score < cfg.active_speaker_threshold:
            expected_drops[item.item_id] = "active_speaker"
            continue
        w = clip.utterance.waveform
        emb = sc.speaker_embedding(Waveform(w.samples[int(round(a * SR)):int(round(b * SR))], SR))
        kept.append((item, round(b - a, 6), emb))
    speaker = {}
    for group in sorted({item.group for item, _, _ in kept}):
        members = [(item, emb) for item, _, emb in kept if item.group == group]
        for (item, _), lab in zip(members, _greedy_clusters([e for _, e in members], cfg.cluster_threshold)):
            speaker[item.item_id] = f"{group}_{lab}"
    total = sum(d for _, d, _ in kept)
    n, spk = len(kept), len(set(speaker.values()))
    stats = {"num_clips": n, "num_speakers": spk, "utterances_per_speaker": n / spk,
             "mean_duration_s": total / n, "total_hours": total / 3600}
    return expected_drops, [item.item_id for item, _, _ in kept], stats


def test_c10_curation(lexicon):
    sources = make_synthetic_sources(100, lexicon, seed=0)
    cfg = CurationConfig()
    result = run_pipeline(sources, oracle_providers(lexicon), cfg)
    expected_drops, survivors, stats = _expected_curation(sources, cfg)
    got_drops = {d.item_id: d.stage for d in result.drops}
    problems = []
    if got_drops != expected_drops:
        problems.append("drop attribution differs")
    if [r["id"] for r in result.manifest] != survivors:
        problems.append("survivor list differs")
    if result.statistics != stats:
        problems.append(f"statistics differ: {result.statistics} vs {stats}")
    if set(got_drops) | set(survivors) != {s.item_id for s in sources}:
        problems.append("an item is neither kept nor dropped")
    by_stage = {}
    for stage in got_drops.values():
        by_stage[stage] = by_stage.get(stage, 0) + 1
    verdict(10, "curation statistics", not problems,
            "; ".join(problems) or f"{stats['num_clips']} clips, {stats['num_speakers']} speakers, "
            f"{stats['total_hours'] * 3600:.1f}s kept, drops {dict(sorted(by_stage.items()))}")


# ---- 11. CLI smoke -------------------------------------------------------------------------------

def _avdub(*argv):
    proc = subprocess.run([sys.executable, "-m", "avdub.cli", *argv], capture_output=True, text=True)
    assert proc.returncode == 0, f"{argv[0]} exited {proc.returncode}: {proc.stderr[-2000:]}"
    return proc.stdout.strip().splitlines()[-1]


@pytest.mark.slow
def test_c11_cli_smoke(tmp_path):
    start = time.perf_counter()
    out = str(tmp_path)
    data = _avdub("gen-data", "--out", out)
    codec = _avdub("fit-codec", "--out", out, "--data", data)
    train_dir = _avdub("train", "--out", out, "--data", data, "--codec", os.path.join(codec, "codebooks.npz"),
                       "--steps", "500")
    dub_dir = _avdub("dub", "--out", out, "--data", data, "--codec", os.path.join(codec, "codebooks.npz"),
                     "--checkpoint", os.path.join(train_dir, "checkpoint.npz"))
    eval_dir = _avdub("eval", "--out", out, "--data", data, "--dub", dub_dir)
    seconds = time.perf_counter() - start
    with open(os.path.join(eval_dir, "metrics.csv"), newline="") as f:
        reader = csv.DictReader(f)
        header, rows = reader.fieldnames, list(reader)
    ids = [r["id"] for r in rows]
    well_formed = (tuple(header) == METRIC_COLUMNS and len(rows) == 20 and len(set(ids)) == 20
                   and all(0 <= float(r["wer"]) and 0 <= float(r["sync_distance"]) <= 2 for r in rows))
    verdict(11, "CLI smoke", well_formed and seconds < 600,
            f"5 commands exited 0, {len(rows)} metric rows, {seconds / 60:.1f} min")


# ---- decoding checks on the trained model ---------------------------------------------------------

@pytest.mark.slow
def test_selection_beats_median_candidate(toy_run, lexicon):
    scorers = sc.OracleScorers(toy_run.books, lexicon)
    hits = 0
    for i, target in enumerate(toy_run.heldout[:100]):
        req = GenerationRequest(target.text, target.text_ids, _prompt_for(toy_run, target), target.features,
                                num_candidates=10, seed=100 * i)
        _, report = dub(req, toy_run.model, toy_run.books, scorers)
        wers = [c.wer for c in report.candidates if c.ok]
        hits += report.candidates[report.selected].wer <= float(np.median(wers))
    assert hits >= 90, f"selected WER <= median in {hits}/100 trials"


@pytest.mark.slow
def test_video_to_speech_selection_helps(toy_run, lexicon):
    scorers = sc.OracleScorers(toy_run.books, lexicon)
    selected, others = [], []
    for i, target in enumerate(toy_run.heldout[:20]):
        _, report = video_to_speech(_prompt_for(toy_run, target), target.features,
                                    lambda f: sc.oracle_lipread(f, lexicon), toy_run.model, toy_run.books,
                                    scorers, lexicon, num_candidates=10, seed=100 * i)
        assert wer(target.text, report.text) == 0.0
        for c in report.candidates:
            (selected if c.index == report.selected else others).append(c.wer)
    assert np.mean(selected) <= np.mean(others), (np.mean(selected), np.mean(others))
