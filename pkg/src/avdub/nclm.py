"""GPT-style codec language model with audio-visual fusion.

Sequence layout fed to the decoder::

    [text phonemes | SEP | source tokens | SEP | fused target tokens]

Text positions run 0..T_text-1 and source positions 0..T_src-1; the fused
target stream continues the source positions from T_src. Separators carry
no positional encoding. Logits for target column i come from the position
just before fused target i (the source SEP for i = 0). Input at column i can
therefore only influence logits for columns > i.

Codec tokens use the delayed layout: codebook k is shifted down by k rows and
the gaps are filled with EMPTY (id V).
"""
from dataclasses import asdict, dataclass, field
import logging
import math
import typing as tp

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import CapacityError, TrainingError, ValidationError
from .io import load_container, save_container
from .visual import AVFusion, Adapter, FeatureStreams, adapt, fuse_sequence, upsample_2x

logger = logging.getLogger(__name__)

VARIANTS = ("lip_only", "lip_face")


@dataclass
class ModelConfig:
    num_layers: int = 4
    d_model: int = 256
    ffn_dim: int = 1024
    num_heads: int = 4
    num_codebooks: int = 4
    vocab_size: int = 64
    phoneme_vocab_size: int = 42
    alpha: tp.Tuple[float, ...] = (3.0, 1.0, 1.0, 1.0)
    max_seq_len: int = 1024
    variant: str = "lip_face"
    d_lip: int = 24
    d_face: int = 8
    zero_init_lip_fuse: bool = False
    zero_init_face_fuse: bool = True

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if len(self.alpha) != self.num_codebooks:
            raise ValidationError(f"alpha has {len(self.alpha)} weights for K={self.num_codebooks}")
        if any(self.alpha[0] < a for a in self.alpha[1:]):
            raise ValidationError("alpha[0] must be the largest weight")
        if self.d_model % self.num_heads:
            raise ValidationError("d_model must be divisible by num_heads")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")

    @property
    def empty_id(self) -> int:
        return self.vocab_size

    @property
    def use_face(self) -> bool:
        return self.variant == "lip_face"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        return d


# --------------------------------------------------------------------------
# delayed layout

def delay(grid: np.ndarray, empty_id: int) -> np.ndarray:
    """``[T, K] -> [T + K - 1, K]`` with codebook k shifted down by k rows."""
    g = np.asarray(grid, dtype=np.int64)
    if g.ndim != 2:
        raise ValidationError(f"grid must be [T, K], got shape {g.shape}")
    if np.any(g == empty_id):
        raise ValidationError("delay() expects a canonical grid without EMPTY")
    t, k = g.shape
    out = np.full((t + k - 1, k), empty_id, dtype=np.int64)
    for j in range(k):
        out[j:j + t, j] = g[:, j]
    return out


def undelay(grid: np.ndarray, empty_id: int) -> np.ndarray:
    """Exact inverse of :func:`delay`; rejects anything but the EMPTY staircase."""
    g = np.asarray(grid, dtype=np.int64)
    if g.ndim != 2:
        raise ValidationError(f"grid must be [S, K], got shape {g.shape}")
    s, k = g.shape
    t = s - k + 1
    if t < 0:
        raise ValidationError(f"delayed grid too short: {s} rows for K={k}")
    expected_empty = np.ones_like(g, dtype=bool)
    for j in range(k):
        expected_empty[j:j + t, j] = False
    if not np.array_equal(g == empty_id, expected_empty):
        raise ValidationError("grid does not have the delayed EMPTY staircase")
    if np.any(g[~expected_empty] < 0) or np.any(g[~expected_empty] > empty_id):
        raise ValidationError("token out of range")
    return np.stack([g[j:j + t, j] for j in range(k)], axis=1) if k else g[:t]


def empty_mandated(step: int, k: int, length: int) -> bool:
    """Whether delayed row ``step`` holds EMPTY for codebook ``k`` given
    canonical length ``length``."""
    return not 0 <= step - k < length


def sinusoidal_encoding(positions: torch.Tensor, d_model: int, dtype=torch.float32) -> torch.Tensor:
    """Transformer sinusoids; negative positions map to a zero vector."""
    pos = positions.to(torch.float64).unsqueeze(-1)
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    pe = torch.zeros(positions.shape[0], d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)[:, : d_model // 2]
    pe[positions < 0] = 0.0
    return pe.to(dtype)


# --------------------------------------------------------------------------
# model

class DecoderBlock(nn.Module):
    def __init__(self, d_model: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # [L, D] -> [H, L, dh]
        return x.view(x.shape[0], self.num_heads, self.head_dim).transpose(0, 1)

    def forward(self, x: torch.Tensor, cache: tp.Optional["KVCache"] = None,
                layer: int = 0) -> torch.Tensor:
        n = x.shape[0]
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        if cache is None:
            offset = 0
        else:
            offset = cache.length
            k, v = cache.append(layer, k, v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        total = k.shape[1]
        qpos = torch.arange(offset, offset + n).unsqueeze(1)
        mask = torch.arange(total).unsqueeze(0) > qpos
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1) @ v
        x = x + self.proj(attn.transpose(0, 1).reshape(n, -1))
        x = x + self.ff2(F.gelu(self.ff1(self.norm2(x))))
        return x


class KVCache:
    """Preallocated key/value buffers for incremental decoding."""

    def __init__(self, num_layers: int, num_heads: int, head_dim: int, capacity: int, dtype):
        self.k = torch.zeros(num_layers, num_heads, capacity, head_dim, dtype=dtype)
        self.v = torch.zeros_like(self.k)
        self.capacity = capacity
        self.length = 0
        self._pending = 0

    def append(self, layer: int, k: torch.Tensor, v: torch.Tensor):
        n = k.shape[1]
        end = self.length + n
        if end > self.capacity:
            raise CapacityError(f"KV cache capacity {self.capacity} exceeded")
        self.k[layer, :, self.length:end] = k
        self.v[layer, :, self.length:end] = v
        self._pending = n
        return self.k[layer, :, :end], self.v[layer, :, :end]

    def commit(self) -> None:
        self.length += self._pending
        self._pending = 0

    def clone(self) -> "KVCache":
        other = KVCache.__new__(KVCache)
        other.k, other.v = self.k.clone(), self.v.clone()
        other.capacity, other.length, other._pending = self.capacity, self.length, 0
        return other


class Head(nn.Module):
    def __init__(self, d_model: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class DubbingLM(nn.Module):
    """All trainable state: embeddings, separators, decoder, K heads,
    visual adapters and fusion layers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.phoneme_emb = nn.Embedding(config.phoneme_vocab_size, d)
        self.code_emb = nn.ModuleList(nn.Embedding(config.vocab_size + 1, d)
                                      for _ in range(config.num_codebooks))
        # after-text, after-source, target-segment offset
        self.separators = nn.Parameter(torch.randn(3, d) * 0.02)
        self.blocks = nn.ModuleList(DecoderBlock(d, config.num_heads, config.ffn_dim)
                                    for _ in range(config.num_layers))
        self.final_norm = nn.LayerNorm(d)
        self.heads = nn.ModuleList(Head(d, config.vocab_size + 1) for _ in range(config.num_codebooks))
        self.lip_adapter = Adapter(config.d_lip, d)
        self.face_adapter = Adapter(config.d_face, d) if config.use_face else None
        self.fusion = AVFusion(d, use_face=config.use_face,
                               zero_init_lip=config.zero_init_lip_fuse,
                               zero_init_face=config.zero_init_face_fuse)
        for emb in [self.phoneme_emb, *self.code_emb]:
            nn.init.normal_(emb.weight, std=0.02)

    @property
    def dtype(self) -> torch.dtype:
        return self.separators.dtype

    def visual_parameters(self) -> tp.List[nn.Parameter]:
        mods = [self.lip_adapter, self.fusion] + ([self.face_adapter] if self.face_adapter else [])
        return [p for m in mods for p in m.parameters()]

    def decoder_parameters(self) -> tp.List[nn.Parameter]:
        visual = {id(p) for p in self.visual_parameters()}
        return [p for p in self.parameters() if id(p) not in visual]

    def parameter_groups(self) -> tp.Dict[str, tp.List[nn.Parameter]]:
        groups = {
            "phoneme_emb": list(self.phoneme_emb.parameters()),
            "code_emb": list(self.code_emb.parameters()),
            "separators": [self.separators],
            "blocks": list(self.blocks.parameters()) + list(self.final_norm.parameters()),
            "heads": list(self.heads.parameters()),
            "lip_adapter": list(self.lip_adapter.parameters()),
            "lip_fuse": list(self.fusion.lip_fuse.parameters()),
        }
        if self.face_adapter is not None:
            groups["face_adapter"] = list(self.face_adapter.parameters())
            groups["face_fuse"] = list(self.fusion.face_fuse.parameters())
        return groups

    # ---- embeddings ------------------------------------------------------

    def embed_columns(self, tokens: torch.Tensor) -> torch.Tensor:
        """``[N, K]`` ids -> ``[N, D]``, summing the K codebook embeddings."""
        if tokens.ndim != 2 or tokens.shape[1] != self.config.num_codebooks:
            raise ValidationError(f"token columns must be [N, {self.config.num_codebooks}]")
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) > self.config.vocab_size):
            raise ValidationError(f"token ids must lie in [0, {self.config.vocab_size}]")
        out = self.code_emb[0](tokens[:, 0])
        for k in range(1, self.config.num_codebooks):
            out = out + self.code_emb[k](tokens[:, k])
        return out

    def visual_tokens(self, features: FeatureStreams
                      ) -> tp.Tuple[torch.Tensor, tp.Optional[torch.Tensor]]:
        """Adapted and 2x-upsampled lip (and face) tokens, ``[2M, D]`` each."""
        lip = upsample_2x(adapt(torch.as_tensor(features.lip, dtype=self.dtype), self.lip_adapter))
        face = None
        if self.face_adapter is not None:
            face = upsample_2x(adapt(torch.as_tensor(features.face, dtype=self.dtype),
                                     self.face_adapter))
        return lip, face

    def target_input(self, fused: torch.Tensor, src_len: int, start: int = 0) -> torch.Tensor:
        """Positional encoding + segment offset for fused targets ``start..``."""
        pos = torch.arange(src_len + start, src_len + start + fused.shape[0])
        return fused + sinusoidal_encoding(pos, self.config.d_model, self.dtype) + self.separators[2]

    # ---- decoder -----------------------------------------------------------

    def decode(self, x: torch.Tensor, cache: tp.Optional[KVCache] = None) -> torch.Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, cache, i)
        if cache is not None:
            cache.commit()
        return self.final_norm(x)

    def head_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        """``[N, D] -> [N, K, V+1]``."""
        return torch.stack([head(hidden) for head in self.heads], dim=1)

    def new_cache(self, capacity: int) -> KVCache:
        c = self.config
        return KVCache(c.num_layers, c.num_heads, c.d_model // c.num_heads, capacity, self.dtype)


def embed_token_column(tokens: tp.Sequence[int], model: DubbingLM) -> torch.Tensor:
    """Sum over codebooks of each codebook's embedding row."""
    col = torch.as_tensor(np.asarray(tokens, dtype=np.int64)).view(1, -1)
    return model.embed_columns(col)[0]


@dataclass
class AssembledInput:
    embedded: torch.Tensor       # [L, D]
    positions: torch.Tensor      # [L], -1 for separators
    text_end: int                # index of the text separator
    src_end: int                 # index of the source separator

    @property
    def num_targets(self) -> int:
        return self.embedded.shape[0] - self.src_end - 1


def assemble(text_ids: tp.Sequence[int], src_grid: np.ndarray, fused_targets: torch.Tensor,
             model: DubbingLM) -> AssembledInput:
    """Build the decoder input; ``src_grid`` may be canonical or delayed."""
    cfg = model.config
    text = torch.as_tensor(np.asarray(text_ids, dtype=np.int64))
    src = torch.as_tensor(np.asarray(src_grid, dtype=np.int64)).view(-1, cfg.num_codebooks)
    t_text, t_src, t_tgt = text.shape[0], src.shape[0], fused_targets.shape[0]
    total = t_text + 1 + t_src + 1 + t_tgt
    if total > cfg.max_seq_len:
        raise CapacityError(f"sequence length {total} exceeds max_seq_len {cfg.max_seq_len}")
    if t_text and (int(text.min()) < 0 or int(text.max()) >= cfg.phoneme_vocab_size):
        raise ValidationError("phoneme id out of range")
    d, dtype = cfg.d_model, model.dtype
    text_pos = torch.arange(t_text)
    src_pos = torch.arange(t_src)
    tgt_pos = torch.arange(t_src, t_src + t_tgt)
    parts = [
        model.phoneme_emb(text) + sinusoidal_encoding(text_pos, d, dtype),
        model.separators[0:1],
        model.embed_columns(src) + sinusoidal_encoding(src_pos, d, dtype),
        model.separators[1:2],
    ]
    if t_tgt:
        parts.append(model.target_input(fused_targets.to(dtype), t_src))
    embedded = torch.cat(parts, dim=0)
    sep = torch.tensor([-1])
    positions = torch.cat([text_pos, sep, src_pos, sep, tgt_pos])
    return AssembledInput(embedded, positions, t_text, t_text + 1 + t_src)


def forward(inp: AssembledInput, model: DubbingLM) -> torch.Tensor:
    """Causal pass; returns ``[T_t, K, V+1]`` logits, row i scoring target column i."""
    n_tgt = inp.num_targets
    hidden = model.decode(inp.embedded)
    rows = hidden[inp.src_end: inp.src_end + n_tgt]
    return model.head_logits(rows)


def loss(logits: torch.Tensor, delayed_target: tp.Union[np.ndarray, torch.Tensor],
         alpha: tp.Sequence[float], empty_id: tp.Optional[int] = None) -> torch.Tensor:
    """Alpha-weighted sum over codebooks of the mean NLL over non-EMPTY positions."""
    target = torch.as_tensor(np.asarray(delayed_target, dtype=np.int64))
    if logits.ndim != 3 or tuple(logits.shape[:2]) != tuple(target.shape):
        raise ValidationError(f"logits {tuple(logits.shape)} do not match target {tuple(target.shape)}")
    k = target.shape[1]
    if len(alpha) != k:
        raise ValidationError(f"alpha has {len(alpha)} weights for K={k}")
    if empty_id is None:
        empty_id = logits.shape[2] - 1
    counted = target != empty_id
    safe = torch.where(counted, target, torch.zeros_like(target))
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, safe.unsqueeze(-1)).squeeze(-1) * counted
    per_k = nll.sum(0) / counted.sum(0).clamp(min=1)
    w = torch.as_tensor(list(alpha), dtype=logits.dtype)
    return (w * per_k).sum()


# --------------------------------------------------------------------------
# training

@dataclass
class Example:
    """One teacher-forcing example; grids are canonical ``[T, K]``."""
    text_ids: np.ndarray
    src_grid: np.ndarray
    tgt_grid: np.ndarray
    features: FeatureStreams
    utt_id: str = ""

    def __post_init__(self):
        if self.features.num_tokens != self.tgt_grid.shape[0]:
            raise ValidationError(
                f"target has {self.tgt_grid.shape[0]} rows but video implies {self.features.num_tokens}")


def teacher_forced_logits(example: Example, model: DubbingLM
                          ) -> tp.Tuple[torch.Tensor, np.ndarray]:
    empty = model.config.empty_id
    d_src = delay(example.src_grid, empty)
    d_tgt = delay(example.tgt_grid, empty)
    lip, face = model.visual_tokens(example.features)
    h_tgt = model.embed_columns(torch.as_tensor(d_tgt))
    fused = fuse_sequence(h_tgt, lip, face, model.fusion)
    logits = forward(assemble(example.text_ids, d_src, fused, model), model)
    return logits, d_tgt


def batch_loss(batch: tp.Sequence[Example], model: DubbingLM) -> torch.Tensor:
    """Loss pooled over the batch: per-codebook means run over every counted
    position of every example."""
    logits, targets = zip(*(teacher_forced_logits(ex, model) for ex in batch))
    return loss(torch.cat(logits), np.concatenate(targets), model.config.alpha,
                model.config.empty_id)


def make_optimizer(model: DubbingLM, decoder_lr: float, visual_lr: float,
                   weight_decay: float = 0.01, betas=(0.9, 0.95)) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        [{"params": model.decoder_parameters(), "lr": decoder_lr, "name": "decoder"},
         {"params": model.visual_parameters(), "lr": visual_lr, "name": "visual"}],
        betas=betas, weight_decay=weight_decay)


def train_step(model: DubbingLM, batch: tp.Sequence[Example], optimizer: torch.optim.Optimizer,
               grad_clip: tp.Optional[float] = 1.0) -> tp.Dict[str, float]:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    value = batch_loss(batch, model)
    if not torch.isfinite(value):
        raise TrainingError(f"non-finite loss {value.item()} on batch "
                            f"{[ex.utt_id for ex in batch]}")
    value.backward()
    grad_norm = float("nan")
    if grad_clip is not None:
        grad_norm = float(torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip))
    optimizer.step()
    return {"loss": float(value.detach()), "grad_norm": grad_norm}


@torch.no_grad()
def evaluate_loss(model: DubbingLM, examples: tp.Sequence[Example]) -> float:
    model.eval()
    return float(batch_loss(examples, model))


# --------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    model: DubbingLM
    optimizer_state: tp.Optional[dict] = None
    step: int = 0
    seeds: tp.Dict[str, int] = field(default_factory=dict)
    extra: tp.Dict[str, tp.Any] = field(default_factory=dict)


def save_checkpoint(path, model: DubbingLM, optimizer: tp.Optional[torch.optim.Optimizer] = None,
                    step: int = 0, seeds: tp.Optional[tp.Mapping[str, int]] = None,
                    extra: tp.Optional[tp.Mapping[str, tp.Any]] = None) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    optim_meta = None
    if optimizer is not None:
        state = optimizer.state_dict()
        for pid, pstate in state["state"].items():
            for key, val in pstate.items():
                arrays[f"optim/{pid}/{key}"] = torch.as_tensor(val).cpu().numpy()
        optim_meta = state["param_groups"]
    meta = {
        "config": model.config.to_dict(),
        "dtype": str(model.dtype).replace("torch.", ""),
        "step": int(step),
        "seeds": dict(seeds or {}),
        "optimizer_param_groups": optim_meta,
        "extra": dict(extra or {}),
    }
    save_container(path, "checkpoint", arrays, meta)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = load_container(path, "checkpoint")
    config = ModelConfig(**meta["config"])
    model = DubbingLM(config).to(getattr(torch, meta.get("dtype", "float32")))
    state = {k[len("param/"):]: torch.from_numpy(np.array(v)) for k, v in arrays.items()
             if k.startswith("param/")}
    model.load_state_dict(state)
    optimizer_state = None
    if meta.get("optimizer_param_groups") is not None:
        per_param: tp.Dict[int, dict] = {}
        for k, v in arrays.items():
            if k.startswith("optim/"):
                _, pid, key = k.split("/", 2)
                per_param.setdefault(int(pid), {})[key] = torch.from_numpy(np.array(v))
        optimizer_state = {"state": per_param, "param_groups": meta["optimizer_param_groups"]}
    return Checkpoint(model, optimizer_state, meta["step"], meta["seeds"], meta.get("extra", {}))
