"""Toy residual-vector-quantisation codec.

Frames are real vectors at 50 Hz; a fitted :class:`Codebooks` turns a
``[T, F]`` frame matrix into a ``[T, K]`` token grid and back.
"""
from dataclasses import dataclass
import logging
import typing as tp

import numpy as np

from . import kernels
from .errors import InsufficientDataError, ValidationError
from .io import load_container, save_container

logger = logging.getLogger(__name__)

FRAME_RATE_HZ = 50
KMEANS_ITERATIONS = 25


@dataclass(frozen=True)
class CodecConfig:
    num_codebooks: int = 4
    vocab_size: int = 64
    frame_dim: int = 50
    frame_rate_hz: int = FRAME_RATE_HZ

    def __post_init__(self):
        if self.num_codebooks < 1:
            raise ValidationError("num_codebooks must be >= 1")
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be >= 2")
        if self.frame_dim < 1:
            raise ValidationError("frame_dim must be >= 1")
        if self.frame_rate_hz != FRAME_RATE_HZ:
            raise ValidationError(f"codec frame rate is fixed at {FRAME_RATE_HZ} Hz")

    @property
    def empty_id(self) -> int:
        return self.vocab_size


@dataclass(frozen=True)
class Codebooks:
    """K centroid tables, ``tables[k]`` has shape ``[V, F]``; table k
    quantises what is left after tables ``0..k-1``."""
    tables: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=np.float64)
        if t.ndim != 3:
            raise ValidationError(f"tables must be [K, V, F], got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValidationError("codebook centroids must be finite")
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        object.__setattr__(self, "tables", t)

    @property
    def num_codebooks(self) -> int:
        return self.tables.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.tables.shape[1]

    @property
    def frame_dim(self) -> int:
        return self.tables.shape[2]

    @property
    def empty_id(self) -> int:
        return self.vocab_size

    def truncated(self, num_codebooks: int) -> "Codebooks":
        return Codebooks(self.tables[:num_codebooks])

    def save(self, path) -> None:
        save_container(path, "codebooks", {"tables": self.tables},
                       {"K": self.num_codebooks, "V": self.vocab_size, "F": self.frame_dim,
                        "frame_rate_hz": FRAME_RATE_HZ})

    @classmethod
    def load(cls, path) -> "Codebooks":
        arrays, meta = load_container(path, "codebooks")
        books = cls(arrays["tables"])
        if (books.num_codebooks, books.vocab_size, books.frame_dim) != (meta["K"], meta["V"], meta["F"]):
            raise ValidationError(f"{path}: header does not match stored tables")
        return books


def _check_frames(frames: np.ndarray) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"frames must be 2-D [N, F], got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("frames contain non-finite values")
    return np.ascontiguousarray(x)


def _init_centroids(x: np.ndarray, v: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding over distinct rows: each new centroid is the
    best of a few D^2-weighted draws by total squared distance."""
    uniq, first = np.unique(x, axis=0, return_index=True)
    pool = x[np.sort(first)] if len(uniq) >= v else x
    tries = 2 + int(np.log(v))
    picks = [int(rng.integers(len(pool)))]
    d2 = ((pool - pool[picks[0]]) ** 2).sum(1)
    for _ in range(v - 1):
        total = d2.sum()
        if total > 0:
            cand = np.searchsorted(np.cumsum(d2), rng.random(tries) * total, side="right")
            cand = np.minimum(cand, len(pool) - 1)
        else:
            rest = np.setdiff1d(np.arange(len(pool)), picks)
            cand = rng.choice(rest, size=1)
        best = None
        for i in cand:
            new = np.minimum(d2, ((pool - pool[i]) ** 2).sum(1))
            if best is None or new.sum() < best[1].sum():
                best = (int(i), new)
        picks.append(best[0])
        d2 = best[1]
    return pool[picks].copy()


def kmeans(x: np.ndarray, v: int, rng: np.random.Generator,
           iterations: int = KMEANS_ITERATIONS, pin_zero: bool = False) -> np.ndarray:
    """Lloyd iterations with empty clusters reseeded at the farthest points.

    With ``pin_zero`` centroid 0 is held at the origin and only the other
    ``v - 1`` move.
    """
    if pin_zero:
        free = _init_centroids(x, v - 1, rng)
        centroids = np.vstack([np.zeros((1, x.shape[1])), free])
    else:
        centroids = _init_centroids(x, v, rng)
    for _ in range(iterations):
        labels, dist = kernels.nearest_centroid(x, centroids)
        sums, counts = kernels.accumulate_means(x, labels, v)
        if pin_zero:
            counts[0] = -1          # neither updated nor reseeded
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if len(empty):
            # farthest points first; stable order keeps ties deterministic
            order = np.argsort(-dist, kind="stable")
            for slot, row in zip(empty, order):
                centroids[slot] = x[row]
    return centroids


def fit_codebooks(frames: np.ndarray, config: CodecConfig, seed: int = 0,
                  iterations: int = KMEANS_ITERATIONS) -> Codebooks:
    """Fit K tables sequentially, each by k-means on the residual left by
    the tables before it.

    Codeword 0 of every table after the first is the zero vector, so greedy
    encoding can always leave a residual unchanged and per-frame error never
    grows as tables are added.
    """
    x = _check_frames(frames)
    n, f = x.shape
    if f != config.frame_dim:
        raise ValidationError(f"frame dim {f} != config.frame_dim {config.frame_dim}")
    if n < config.vocab_size:
        raise InsufficientDataError(f"need at least V={config.vocab_size} frames, got {n}")
    rng = np.random.default_rng(seed)
    resid = x.copy()
    tables = []
    for k in range(config.num_codebooks):
        c = kmeans(resid, config.vocab_size, rng, iterations, pin_zero=k > 0)
        labels, _ = kernels.nearest_centroid(resid, c)
        resid = resid - c[labels]
        tables.append(c)
        logger.debug("codebook %d fitted, residual mse %.6f", k, float(np.mean(resid ** 2)))
    return Codebooks(np.stack(tables))


def rvq_encode(frames: np.ndarray, books: Codebooks) -> np.ndarray:
    """Greedy residual quantisation, ``[T, F] -> [T, K]`` int64 tokens."""
    x = _check_frames(frames)
    if x.shape[1] != books.frame_dim:
        raise ValidationError(f"frame dim {x.shape[1]} != codebook dim {books.frame_dim}")
    return kernels.rvq_encode(x, books.tables)


def rvq_decode(grid: np.ndarray, books: Codebooks) -> np.ndarray:
    """Sum of the selected centroid of every table, ``[T, K] -> [T, F]``."""
    g = np.asarray(grid)
    if g.ndim != 2 or g.shape[1] != books.num_codebooks:
        raise ValidationError(f"grid must be [T, {books.num_codebooks}], got shape {g.shape}")
    if g.size and (g.min() < 0 or g.max() >= books.vocab_size):
        raise ValidationError("grid contains EMPTY or out-of-range tokens")
    out = np.zeros((g.shape[0], books.frame_dim), dtype=np.float64)
    for k in range(books.num_codebooks):
        out += books.tables[k][g[:, k]]
    return out


def greedy_separable(books: Codebooks) -> bool:
    """True when every table's centroids sit further apart than twice the
    largest possible contribution of the tables after it.

    Under that condition greedy encoding recovers any grid from its decoded
    frames. Fitted books usually do not satisfy it.
    """
    t = books.tables
    norms = np.linalg.norm(t, axis=2).max(axis=1)
    for k in range(books.num_codebooks):
        d = np.linalg.norm(t[k][:, None] - t[k][None], axis=2)
        np.fill_diagonal(d, np.inf)
        if not norms[k + 1:].sum() < 0.5 * d.min():
            return False
    return True


def quantization_mse(frames: np.ndarray, books: Codebooks) -> tp.List[float]:
    """Mean squared residual after each prefix of tables (length K)."""
    x = _check_frames(frames)
    grid = rvq_encode(x, books)
    resid = x.copy()
    out = []
    for k in range(books.num_codebooks):
        resid = resid - books.tables[k][grid[:, k]]
        out.append(float(np.mean(resid ** 2)))
    return out
