"""Visual feature adapters and residual audio-visual fusion.

Lip and face features arrive at 25 fps. Adapters map them into the model
token space; each row is then repeated twice to reach the 50 Hz token rate.
At target step ``t`` the fusion layers look one step ahead, at row
``min(t + 1, T - 1)``, and add their outputs to the speech token as residuals.
"""
from dataclasses import dataclass
import typing as tp

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ValidationError

VIDEO_FPS = 25


@dataclass(frozen=True)
class FeatureStreams:
    lip: np.ndarray    # [M, d_lip]
    face: np.ndarray   # [M, d_face]
    fps: int = VIDEO_FPS

    def __post_init__(self):
        lip = np.asarray(self.lip, dtype=np.float64)
        face = np.asarray(self.face, dtype=np.float64)
        if lip.ndim != 2 or face.ndim != 2:
            raise ValidationError("lip and face streams must be 2-D [M, d]")
        if lip.shape[0] != face.shape[0]:
            raise ValidationError(f"lip and face lengths differ: {lip.shape[0]} vs {face.shape[0]}")
        if not (np.all(np.isfinite(lip)) and np.all(np.isfinite(face))):
            raise ValidationError("feature streams contain non-finite values")
        if self.fps != VIDEO_FPS:
            raise ValidationError(f"feature streams are fixed at {VIDEO_FPS} fps")
        object.__setattr__(self, "lip", lip)
        object.__setattr__(self, "face", face)

    @property
    def num_frames(self) -> int:
        return self.lip.shape[0]

    @property
    def num_tokens(self) -> int:
        """Target length at the 50 Hz token rate."""
        return 2 * self.num_frames

    def slice(self, start: int, stop: tp.Optional[int] = None) -> "FeatureStreams":
        return FeatureStreams(self.lip[start:stop], self.face[start:stop])


class Adapter(nn.Module):
    """Two-layer MLP (affine, GELU, affine) into the token space."""

    def __init__(self, in_dim: int, d_model: int, hidden: tp.Optional[int] = None):
        super().__init__()
        hidden = hidden or d_model
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def adapt(features: torch.Tensor, adapter: Adapter) -> torch.Tensor:
    """``[M, d] -> [M, D_model]``."""
    if features.ndim != 2 or features.shape[-1] != adapter.in_dim:
        raise ValidationError(
            f"features must be [M, {adapter.in_dim}], got {tuple(features.shape)}")
    return adapter(features)


def upsample_2x(tokens: torch.Tensor) -> torch.Tensor:
    """Repeat every row twice: ``[x, y] -> [x, x, y, y]``."""
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValidationError("upsample_2x needs a non-empty [M, D] input")
    return tokens.repeat_interleave(2, dim=0)


def lookahead_index(t: int, length: int) -> int:
    return min(t + 1, length - 1)


class AVFusion(nn.Module):
    """Linear fusion maps ``[2D -> D]`` for the lip and (optionally) face streams."""

    def __init__(self, d_model: int, use_face: bool = True, zero_init_lip: bool = False,
                 zero_init_face: bool = True):
        super().__init__()
        self.lip_fuse = nn.Linear(2 * d_model, d_model)
        self.face_fuse = nn.Linear(2 * d_model, d_model) if use_face else None
        if zero_init_lip:
            _zero_(self.lip_fuse)
        if self.face_fuse is not None and zero_init_face:
            _zero_(self.face_fuse)

    def residuals(self, h: torch.Tensor, lip: torch.Tensor,
                  face: tp.Optional[torch.Tensor]) -> torch.Tensor:
        out = h + self.lip_fuse(torch.cat([h, lip], dim=-1))
        if self.face_fuse is not None and face is not None:
            out = out + self.face_fuse(torch.cat([h, face], dim=-1))
        return out


def _zero_(layer: nn.Linear) -> None:
    with torch.no_grad():
        layer.weight.zero_()
        layer.bias.zero_()


def fuse_step(h_t: torch.Tensor, lip_tokens: torch.Tensor, face_tokens: tp.Optional[torch.Tensor],
              t: int, fusion: AVFusion) -> torch.Tensor:
    """Fuse one target token with the visual tokens one step ahead."""
    length = lip_tokens.shape[0]
    if not 0 <= t < length:
        raise ValidationError(f"timestep {t} outside [0, {length})")
    j = lookahead_index(t, length)
    face = face_tokens[j] if face_tokens is not None else None
    return fusion.residuals(h_t, lip_tokens[j], face)


def fuse_sequence(h: torch.Tensor, lip_tokens: torch.Tensor, face_tokens: tp.Optional[torch.Tensor],
                  fusion: AVFusion) -> torch.Tensor:
    """Vectorised :func:`fuse_step` over rows of ``h``; row i uses visual row
    ``min(i + 1, T - 1)``, so rows past the video end see the last frame."""
    length = lip_tokens.shape[0]
    idx = torch.clamp(torch.arange(h.shape[0]) + 1, max=length - 1)
    face = face_tokens[idx] if face_tokens is not None else None
    return fusion.residuals(h, lip_tokens[idx], face)
