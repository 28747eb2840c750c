"""Self-describing array container used for codebooks, checkpoints and
per-utterance arrays.

A container is an ``.npz`` archive holding named arrays plus one JSON
document under ``__meta__`` with a ``format`` tag and ``version``.
"""
import json
import os
import typing as tp

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_container(path: tp.Union[str, os.PathLike], kind: str,
                   arrays: tp.Mapping[str, np.ndarray],
                   meta: tp.Optional[tp.Mapping[str, tp.Any]] = None) -> None:
    record = {"format": kind, "version": FORMAT_VERSION, **(meta or {})}
    if _META_KEY in arrays:
        raise ValidationError(f"array name {_META_KEY!r} is reserved")
    payload = {name: np.asarray(a) for name, a in arrays.items()}
    payload[_META_KEY] = np.frombuffer(json.dumps(record, sort_keys=True).encode("utf-8"),
                                       dtype=np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_container(path: tp.Union[str, os.PathLike], kind: tp.Optional[str] = None
                   ) -> tp.Tuple[tp.Dict[str, np.ndarray], tp.Dict[str, tp.Any]]:
    with np.load(path, allow_pickle=False) as data:
        if _META_KEY not in data:
            raise ValidationError(f"{path}: not an avdub container (missing metadata)")
        meta = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
        arrays = {k: data[k] for k in data.files if k != _META_KEY}
    if meta.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported container version {meta.get('version')}")
    if kind is not None and meta.get("format") != kind:
        raise ValidationError(f"{path}: expected a {kind!r} container, found {meta.get('format')!r}")
    return arrays, meta
