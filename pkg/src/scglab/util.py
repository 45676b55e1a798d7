"""Shared plumbing: canonical JSON, content digests, seeded RNG chains."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np


def canonical_json(obj: Any) -> str:
    """Serialize to the canonical text form used for all on-disk documents.

    Sorted keys, compact separators, no ASCII escaping. Matches what the
    browser client produces, so byte-level comparison of documents works.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_json(obj: Any) -> str:
    return digest_bytes(canonical_bytes(obj))


def digest_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str | Path, obj: Any) -> str:
    """Write a canonical JSON document, return its digest."""
    data = canonical_bytes(obj)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return digest_bytes(data)


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def rng_for(seed: int, *tags: object) -> np.random.Generator:
    """Deterministic child RNG for (seed, tags).

    Tags are hashed so independent pipeline stages get independent,
    reproducible streams without coordinating offsets.
    """
    h = hashlib.sha256(repr((int(seed),) + tuple(str(t) for t in tags)).encode())
    entropy = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")
