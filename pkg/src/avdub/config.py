"""Run configuration: nested records, YAML I/O, presets and overrides."""
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import hashlib
import json
import typing as tp

import yaml

from .curation import CurationConfig
from .decoding import SELECTION_MODES
from .errors import ValidationError
from .frontend import PhonemeVocab
from .nclm import ModelConfig


class ConfigError(ValidationError):
    """Configuration is malformed, has unknown keys or invalid values."""


@dataclass
class CorpusSection:
    num_speakers: int = 50
    utterances_per_speaker: int = 10
    test_fraction: float = 0.2
    seed: int = 0


@dataclass
class CodecSection:
    num_codebooks: int = 4
    vocab_size: int = 64
    iterations: int = 25
    seed: int = 0


@dataclass
class ModelSection:
    num_layers: int = 4
    d_model: int = 256
    ffn_dim: int = 1024
    num_heads: int = 4
    alpha: tp.List[float] = field(default_factory=lambda: [3.0, 1.0, 1.0, 1.0])
    max_seq_len: int = 1024
    variant: str = "lip_face"
    d_lip: int = 24
    d_face: int = 8
    seed: int = 0


@dataclass
class TrainingSection:
    steps: int = 5000
    batch_frames: int = 300
    decoder_lr: float = 1e-3
    visual_lr: float = 3e-3
    weight_decay: float = 0.01
    warmup_steps: int = 200
    grad_clip: float = 1.0
    max_prompt_frames: tp.Optional[int] = 150
    eval_every: int = 500
    heldout_clips: int = 40
    seed: int = 0


@dataclass
class DecodingSection:
    top_p: float = 0.8
    temperature: float = 1.0
    num_candidates: int = 10
    selection_mode: str = "prose"
    wer_threshold: float = 0.05
    max_clips: int = 20
    seed: int = 0


@dataclass
class CurationSection:
    num_items: int = 100
    language: str = "en"
    pad_s: float = 0.1
    max_abs_deg: float = 25.0
    max_jump_deg: float = 15.0
    active_speaker_threshold: float = 0.5
    cluster_threshold: float = 0.5
    seed: int = 0


@dataclass
class PathsSection:
    out_dir: str = "runs"


@dataclass
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    codec: CodecSection = field(default_factory=CodecSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    decoding: DecodingSection = field(default_factory=DecodingSection)
    curation: CurationSection = field(default_factory=CurationSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> "RunConfig":
        try:
            self.model_config()
        except ValidationError as exc:
            raise ConfigError(f"model: {exc}") from exc
        d = self.decoding
        if not 0 < d.top_p <= 1 or d.temperature <= 0 or d.num_candidates < 1:
            raise ConfigError("decoding: need 0 < top_p <= 1, temperature > 0, num_candidates >= 1")
        if d.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"decoding.selection_mode must be one of {SELECTION_MODES}")
        if self.codec.vocab_size < 2 or self.codec.num_codebooks < 1:
            raise ConfigError("codec: need vocab_size >= 2 and num_codebooks >= 1")
        if self.corpus.num_speakers < 1 or self.corpus.utterances_per_speaker < 1:
            raise ConfigError("corpus: need at least one speaker and utterance")
        if self.training.steps < 0 or self.training.batch_frames < 1:
            raise ConfigError("training: steps >= 0 and batch_frames >= 1 required")
        return self

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            num_layers=m.num_layers, d_model=m.d_model, ffn_dim=m.ffn_dim, num_heads=m.num_heads,
            num_codebooks=self.codec.num_codebooks, vocab_size=self.codec.vocab_size,
            phoneme_vocab_size=len(PhonemeVocab()), alpha=tuple(m.alpha),
            max_seq_len=m.max_seq_len, variant=m.variant, d_lip=m.d_lip, d_face=m.d_face)

    def curation_config(self) -> CurationConfig:
        c = self.curation
        return CurationConfig(language=c.language, pad_s=c.pad_s, max_abs_deg=c.max_abs_deg,
                              max_jump_deg=c.max_jump_deg,
                              active_speaker_threshold=c.active_speaker_threshold,
                              cluster_threshold=c.cluster_threshold)

    def to_dict(self) -> tp.Dict[str, tp.Any]:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self, extra: tp.Optional[tp.Mapping[str, tp.Any]] = None) -> str:
        blob = json.dumps({"config": self.to_dict(), "extra": dict(extra or {})}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# --------------------------------------------------------------------------
# construction

def _build(cls, data: tp.Mapping[str, tp.Any], where: str):
    if not isinstance(data, tp.Mapping):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        else:
            if path in _NULLABLE and value is not None and not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer or null")
            kwargs[name] = _coerce(value, current, path)
    return replace(defaults, **kwargs)


_NULLABLE = {"training.max_prompt_frames"}


def _coerce(value, default, path):
    if value is None:
        if path not in _NULLABLE:
            raise ConfigError(f"{path}: a value is required")
        return None
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return [float(v) for v in value]
    return value


def _merge(base: tp.Dict[str, tp.Any], over: tp.Mapping[str, tp.Any]) -> tp.Dict[str, tp.Any]:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, tp.Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


PRESETS: tp.Dict[str, tp.Dict[str, tp.Any]] = {
    "toy": {},
    # full-scale values; 16 heads of width 128
    "full": {
        "codec": {"vocab_size": 2048},
        "model": {"num_layers": 16, "d_model": 2048, "ffn_dim": 8192, "num_heads": 16,
                  "max_seq_len": 4096},
        "training": {"steps": 100000, "batch_frames": 80000, "decoder_lr": 1e-5,
                     "visual_lr": 1e-2, "warmup_steps": 0, "max_prompt_frames": None},
    },
}


def from_dict(data: tp.Optional[tp.Mapping[str, tp.Any]] = None, preset: str = "toy") -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = _merge(PRESETS[preset], data or {})
    return _build(RunConfig, merged, "").validate()


def load(path: tp.Optional[str] = None, preset: str = "toy",
         overrides: tp.Sequence[str] = ()) -> RunConfig:
    """Load YAML (optional), layer it over a preset, then apply
    ``section.key=value`` overrides (values parsed as YAML scalars)."""
    data: tp.Dict[str, tp.Any] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} conflicts with a scalar")
        node[parts[-1]] = yaml.safe_load(raw)
    return from_dict(data, preset)
