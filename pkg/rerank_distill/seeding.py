"""Seed derivation so every random choice traces back to the run seed."""

from __future__ import annotations

import hashlib
import json
import random


def derive_seed(seed: int, *parts: object) -> int:
    """Return a stable 64-bit seed for ``parts`` under the run ``seed``."""
    payload = json.dumps([seed, *parts], ensure_ascii=False, separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:8], "big")


def derived_rng(seed: int, *parts: object) -> random.Random:
    """Return a private generator seeded from ``derive_seed``."""
    return random.Random(derive_seed(seed, *parts))  # noqa: S311
