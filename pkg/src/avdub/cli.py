"""Command-line workflows: gen-data, fit-codec, train, dub, v2s, eval, curate, report."""
import argparse
import json
import logging
import math
import os
import sys
import typing as tp

import numpy as np
from scipy import stats
from scipy.io import wavfile

from . import config as config_mod
from .errors import ValidationError

log = logging.getLogger("avdub")

COMMANDS = ("gen-data", "fit-codec", "train", "dub", "v2s", "eval", "curate", "report")


class CommandError(RuntimeError):
    """A workflow cannot run (missing input, inconsistent artefacts)."""


# --------------------------------------------------------------------------
# run directories

class Run:
    def __init__(self, command: str, cfg: config_mod.RunConfig, inputs: tp.Mapping[str, tp.Any],
                 out_dir: tp.Optional[str]):
        self.cfg = cfg
        root = out_dir or cfg.paths.out_dir
        self.dir = os.path.join(root, f"{command}-{cfg.digest({'command': command, **inputs})}")
        os.makedirs(self.dir, exist_ok=True)
        with open(self.path("config.yaml"), "w", encoding="utf-8") as f:
            f.write(cfg.to_yaml())
        with open(self.path("inputs.json"), "w", encoding="utf-8") as f:
            json.dump({"command": command, **inputs}, f, indent=2, sort_keys=True)
        self._handler = logging.FileHandler(self.path("log.txt"), mode="w")
        self._handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(self._handler)
        logging.getLogger().setLevel(logging.INFO)

    def path(self, *parts: str) -> str:
        return os.path.join(self.dir, *parts)

    def close(self) -> None:
        logging.getLogger().removeHandler(self._handler)
        self._handler.close()


def _write_json(path: str, obj: tp.Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _require(path: tp.Optional[str], what: str) -> str:
    if not path or not os.path.exists(path):
        raise CommandError(f"{what} not found: {path}")
    return path


def _abs(path: tp.Optional[str]) -> tp.Optional[str]:
    return os.path.abspath(path) if path else path


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args, cfg, run: Run) -> None:
    from .frontend import bundled_lexicon
    from .synthcorpus import make_corpus, write_corpus
    c = cfg.corpus
    corpus = make_corpus(c.num_speakers, c.utterances_per_speaker, bundled_lexicon(), seed=c.seed,
                         test_fraction=c.test_fraction)
    write_corpus(corpus, run.dir)
    log.info("wrote %d utterances", len(corpus.utterances))


def _load_corpus(data_dir: str):
    from .synthcorpus import read_corpus
    _require(os.path.join(data_dir, "manifest.jsonl"), "corpus manifest")
    return read_corpus(data_dir)


def cmd_fit_codec(args, cfg, run: Run) -> None:
    from .codec import CodecConfig, fit_codebooks, quantization_mse
    corpus = _load_corpus(_require(args.data, "data directory"))
    frames = np.concatenate([u.frames for u in corpus.split("train")])
    cc = CodecConfig(num_codebooks=cfg.codec.num_codebooks, vocab_size=cfg.codec.vocab_size,
                     frame_dim=frames.shape[1])
    books = fit_codebooks(frames, cc, seed=cfg.codec.seed, iterations=cfg.codec.iterations)
    books.save(run.path("codebooks.npz"))
    mse = quantization_mse(frames, books)
    power = float(np.mean(frames ** 2))
    _write_json(run.path("codec_report.json"),
                {"num_frames": int(frames.shape[0]), "mse_per_prefix": mse,
                 "relative_mse": mse[-1] / power})
    log.info("codec relative mse %.5f", mse[-1] / power)


def _encoded(args, cfg):
    from .codec import Codebooks
    from .frontend import bundled_lexicon
    from .training import encode_utterances
    corpus = _load_corpus(_require(args.data, "data directory"))
    books = Codebooks.load(_require(args.codec, "codebooks"))
    lex = bundled_lexicon()
    train = encode_utterances(corpus.split("train"), books, lex)
    test = encode_utterances(corpus.split("test"), books, lex)
    return corpus, books, lex, train, test


def cmd_train(args, cfg, run: Run) -> None:
    import torch
    from .nclm import DubbingLM, save_checkpoint, make_optimizer
    from .training import TrainConfig, heldout_examples, train
    _, books, _, pool, test = _encoded(args, cfg)
    t = cfg.training
    tc = TrainConfig(steps=t.steps, batch_frames=t.batch_frames, decoder_lr=t.decoder_lr,
                     visual_lr=t.visual_lr, weight_decay=t.weight_decay, warmup_steps=t.warmup_steps,
                     grad_clip=t.grad_clip, max_prompt_frames=t.max_prompt_frames,
                     eval_every=t.eval_every, seed=t.seed)
    torch.manual_seed(cfg.model.seed)
    model = DubbingLM(cfg.model_config())
    held = heldout_examples(test[: t.heldout_clips], pool, seed=t.seed + 1,
                            max_prompt_frames=t.max_prompt_frames)
    opt = make_optimizer(model, tc.decoder_lr, tc.visual_lr, tc.weight_decay)
    hist = train(model, pool, tc, held, optimizer=opt,
                 callback=lambda s, m: log.info("step %d loss %.4f", s, m["loss"])
                 if s % 100 == 0 else None)
    seeds = {"model": cfg.model.seed, "training": t.seed, "corpus": cfg.corpus.seed,
             "codec": cfg.codec.seed}
    save_checkpoint(run.path("checkpoint.npz"), model, opt, step=t.steps, seeds=seeds,
                    extra={"codebooks": os.path.abspath(args.codec)})
    with open(run.path("train_log.jsonl"), "w", encoding="utf-8") as f:
        for rec in hist.records():
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {"steps": t.steps, "heldout_steps": hist.eval_steps, "heldout_losses": hist.eval_losses}
    if hist.eval_losses:
        summary["heldout_ratio"] = hist.eval_losses[-1] / hist.eval_losses[0]
    _write_json(run.path("train_summary.json"), summary)


def _dub_common(args, cfg, run: Run, from_video: bool) -> None:
    from .decoding import GenerationRequest, dub, video_to_speech
    from .nclm import load_checkpoint
    from .synthcorpus import OracleScorers, frames_to_waveform, oracle_lipread
    from .training import by_speaker, crop_prompt
    ckpt_path = args.checkpoint
    if not ckpt_path:
        raise CommandError("checkpoint not found (pass --checkpoint PATH)")
    if not os.path.isfile(ckpt_path):
        raise CommandError(f"checkpoint not found: {ckpt_path}")
    corpus, books, lex, pool, test = _encoded(args, cfg)
    model = load_checkpoint(ckpt_path).model
    scorers = OracleScorers(books, lex)
    d = cfg.decoding
    prompts = {spk: sorted(us, key=lambda u: u.utt_id) for spk, us in by_speaker(pool).items()}
    targets = test if args.split == "test" else pool
    os.makedirs(run.path("outputs"), exist_ok=True)
    dubbed, reports = [], []
    for n, tgt in enumerate(targets[: d.max_clips]):
        cands = [u for u in prompts.get(tgt.speaker_id, []) if u.utt_id != tgt.utt_id]
        if not cands:
            log.warning("%s: no prompt utterance for speaker %s, skipped", tgt.utt_id, tgt.speaker_id)
            continue
        prompt = cands[0]
        src = crop_prompt(prompt.grid, cfg.training.max_prompt_frames)
        options = dict(top_p=d.top_p, temperature=d.temperature, num_candidates=d.num_candidates,
                       seed=d.seed + 1000 * n)
        if from_video:
            frames, report = video_to_speech(src, tgt.features, lambda f: oracle_lipread(f, lex),
                                             model, books, scorers, lex, mode=d.selection_mode,
                                             **options)
        else:
            req = GenerationRequest(text=tgt.text, text_ids=tgt.text_ids, src_grid=src,
                                    features=tgt.features, **options)
            frames, report = dub(req, model, books, scorers, mode=d.selection_mode,
                                 wer_threshold=d.wer_threshold)
        wav = frames_to_waveform(frames, seed=d.seed)
        pcm = np.clip(np.round(wav.samples * 32767), -32768, 32767).astype(np.int16)
        wavfile.write(run.path("outputs", f"{tgt.utt_id}.wav"), wav.sample_rate, pcm)
        np.savez(run.path("outputs", f"{tgt.utt_id}.npz"), frames=frames,
                 grid=report.selected_candidate.grid)
        dubbed.append({"id": tgt.utt_id, "prompt_id": prompt.utt_id, "text": report.text,
                       "frames": f"outputs/{tgt.utt_id}.npz", "waveform": f"outputs/{tgt.utt_id}.wav"})
        reports.append({"id": tgt.utt_id, **report.to_dict()})
        log.info("%s: selected candidate %d", tgt.utt_id, report.selected)
    with open(run.path("dubbed.jsonl"), "w", encoding="utf-8") as f:
        for rec in dubbed:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(run.path("dub_reports.jsonl"), "w", encoding="utf-8") as f:
        for rec in reports:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    if not dubbed:
        raise CommandError("no clip could be dubbed")


def cmd_dub(args, cfg, run):
    _dub_common(args, cfg, run, from_video=False)


def cmd_v2s(args, cfg, run):
    _dub_common(args, cfg, run, from_video=True)


def _safe(fn, *a) -> float:
    try:
        return float(fn(*a))
    except (ValidationError, ValueError) as exc:
        log.warning("metric %s undefined: %s", getattr(fn, "__name__", fn), exc)
        return math.nan


def cmd_eval(args, cfg, run: Run) -> None:
    from . import metrics as M
    from .frontend import bundled_lexicon
    from .synthcorpus import (frames_to_waveform, oracle_transcribe, prosody_embedding,
                              speaker_embedding)
    corpus = _load_corpus(_require(args.data, "data directory"))
    dub_dir = _require(args.dub, "dub run directory")
    listing = os.path.join(dub_dir, "dubbed.jsonl")
    _require(listing, "dub listing")
    lex = bundled_lexicon()
    by_id = corpus.by_id()
    records = []
    with open(listing, encoding="utf-8") as f:
        entries = [json.loads(line) for line in f if line.strip()]
    for e in entries:
        ref = by_id.get(e["id"])
        if ref is None:
            raise CommandError(f"{e['id']} is not in the corpus at {args.data}")
        with np.load(os.path.join(dub_dir, e["frames"])) as z:
            frames = z["frames"]
        hyp_wav = frames_to_waveform(frames, seed=cfg.decoding.seed)
        ref_wav = frames_to_waveform(ref.frames, seed=cfg.decoding.seed)
        records.append({
            "id": e["id"],
            "wer": _safe(M.wer, ref.transcript, oracle_transcribe(frames, lex)),
            "mcd": _safe(M.mcd, ref_wav, hyp_wav),
            "f0": _safe(M.f0_distance, ref_wav, hyp_wav),
            "energy": _safe(M.energy_distance, ref_wav, hyp_wav),
            "spk_sim": _safe(lambda: M.cosine_similarity(speaker_embedding(ref_wav),
                                                         speaker_embedding(hyp_wav))),
            "emo_sim": _safe(lambda: M.cosine_similarity(prosody_embedding(ref.frames),
                                                         prosody_embedding(frames))),
            "sync_distance": _safe(M.toy_sync_distance, frames, ref.features),
        })
    M.write_metric_records(records, run.path("metrics.csv"), run.path("metrics.jsonl"))
    log.info("evaluated %d clips", len(records))


def cmd_curate(args, cfg, run: Run) -> None:
    from .curation import make_synthetic_sources, oracle_providers, run_pipeline
    from .frontend import bundled_lexicon
    from .synthcorpus import write_manifest
    lex = bundled_lexicon()
    c = cfg.curation
    items = make_synthetic_sources(c.num_items, lex, seed=c.seed)
    result = run_pipeline(items, oracle_providers(lex), cfg.curation_config())
    write_manifest(result.manifest, run.path("manifest.jsonl"))
    result.write_drop_log(run.path("drop_log.jsonl"))
    _write_json(run.path("stage_log.json"), result.stage_log)
    _write_json(run.path("statistics.json"), result.statistics)


def aggregate(rows: tp.Sequence[tp.Mapping[str, tp.Any]], columns: tp.Sequence[str]
              ) -> tp.List[tp.Dict[str, tp.Any]]:
    """Mean and Student-t 95% confidence half-width per column over finite values."""
    out = []
    for col in columns:
        vals = np.array([r[col] for r in rows], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        n = len(vals)
        mean = float(vals.mean()) if n else math.nan
        half = math.nan
        if n >= 2:
            half = float(stats.t.ppf(0.975, n - 1) * vals.std(ddof=1) / math.sqrt(n))
        out.append({"metric": col, "n": n, "mean": mean, "ci95": half})
    return out


def cmd_report(args, cfg, run: Run) -> None:
    import csv
    from .metrics import METRIC_COLUMNS, read_metric_csv
    rows = read_metric_csv(_require(args.metrics, "metrics CSV"))
    table = aggregate(rows, METRIC_COLUMNS[1:])
    with open(run.path("report.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["metric", "n", "mean", "ci95"])
        w.writeheader()
        for row in table:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    print(f"{'metric':<14}{'n':>5}{'mean':>12}{'95% CI':>12}")
    for row in table:
        print(f"{row['metric']:<14}{row['n']:>5}{row['mean']:>12.4f}{row['ci95']:>12.4f}")


HANDLERS = {
    "gen-data": cmd_gen_data, "fit-codec": cmd_fit_codec, "train": cmd_train, "dub": cmd_dub,
    "v2s": cmd_v2s, "eval": cmd_eval, "curate": cmd_curate, "report": cmd_report,
}


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file layered over the preset")
    common.add_argument("--preset", default="toy", choices=sorted(config_mod.PRESETS))
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--out", help="root for run directories (default: paths.out_dir)")

    parser = argparse.ArgumentParser(prog="avdub", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic corpus")
    p = sub.add_parser("fit-codec", parents=[common], help="fit RVQ codebooks")
    p.add_argument("--data", required=True)
    p = sub.add_parser("train", parents=[common], help="train the dubbing model")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--steps", type=int, help="override training.steps")
    for name, help_ in (("dub", "dub held-out clips"), ("v2s", "video-to-speech on held-out clips")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--data", required=True)
        p.add_argument("--codec", required=True)
        p.add_argument("--checkpoint")
        p.add_argument("--split", default="test", choices=["test", "train"])
    p = sub.add_parser("eval", parents=[common], help="score a dub run")
    p.add_argument("--data", required=True)
    p.add_argument("--dub", required=True, help="dub or v2s run directory")
    sub.add_parser("curate", parents=[common], help="run the curation pipeline on synthetic items")
    p = sub.add_parser("report", parents=[common], help="aggregate a metrics CSV")
    p.add_argument("--metrics", required=True)
    return parser


_INPUT_KEYS = ("data", "codec", "checkpoint", "dub", "metrics", "split", "steps")


def main(argv: tp.Optional[tp.Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = list(args.set)
        if getattr(args, "steps", None) is not None:
            overrides.append(f"training.steps={args.steps}")
        cfg = config_mod.load(args.config, args.preset, overrides)
    except config_mod.ConfigError as exc:
        print(f"avdub: invalid config: {exc}", file=sys.stderr)
        return 2
    inputs = {k: (_abs(v) if k not in ("split", "steps") else v)
              for k, v in vars(args).items() if k in _INPUT_KEYS}
    run = Run(args.command, cfg, inputs, args.out)
    try:
        HANDLERS[args.command](args, cfg, run)
    except (CommandError, ValidationError, OSError) as exc:
        log.error("%s", exc)
        print(f"avdub {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        run.close()
    print(run.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
