"""Self-describing checkpoint container shared by the denoiser and the predictors.

A checkpoint is a ``torch.save`` dict holding only primitives and tensors,
so it loads with ``weights_only=True``::

    {"format": "framediff", "version": 1, "kind": "denoiser" | "duration" | "energy",
     "config": {...}, "state_dict": {...}, "meta": {...}, ...}
"""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
from pathlib import Path

import torch

from .errors import InputError

FORMAT = "framediff"
VERSION = 1


@contextlib.contextmanager
def _locked(path: Path):
    lock = path.with_name(path.name + ".lock")
    with open(lock, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
    with contextlib.suppress(OSError):
        lock.unlink()


def save_checkpoint(path, kind: str, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"format": FORMAT, "version": VERSION, "kind": kind, **payload}
    tmp = path.with_name(path.name + ".tmp")
    with _locked(path):
        torch.save(data, tmp)
        os.replace(tmp, path)
    return path


def load_checkpoint(path, kind: str | tuple | None = None) -> dict:
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise InputError(f"{path}: no such checkpoint") from None
    except Exception as exc:  # torch raises a zoo of types for corrupt files
        raise InputError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise InputError(f"{path}: not a {FORMAT} checkpoint")
    if kind is not None:
        kinds = (kind,) if isinstance(kind, str) else tuple(kind)
        if data["kind"] not in kinds:
            raise InputError(f"{path}: checkpoint kind {data['kind']!r}, expected {' or '.join(kinds)}")
    return data


def file_id(path) -> str:
    """Short content hash identifying a checkpoint file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]
