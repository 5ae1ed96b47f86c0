from __future__ import annotations
import hashlib
import re
from typing import Iterable, List

import numpy as np

from .exceptions import ValidationError

MODEL_NAMES = ("rf", "gbt", "cnn")
_MODEL_TOKEN = re.compile(r"[,\s]+")


def normalize_models(raw: Iterable[str]) -> List[str]:
    """
    Normalize user-provided model names:
    - Accept comma separated or repeated values ("rf,gbt" or "rf" "gbt")
    - Lowercase and trim whitespace
    - Preserve order and uniqueness
    """
    seen = set()
    result: List[str] = []
    for chunk in raw:
        for s in _MODEL_TOKEN.split(chunk.strip().lower()):
            if not s:
                continue
            if s not in MODEL_NAMES:
                raise ValidationError(f"Unknown model '{s}' (expected one of {', '.join(MODEL_NAMES)}).")
            if s not in seen:
                seen.add(s)
                result.append(s)
    return result


def round_half_up(values) -> np.ndarray:
    """floor(v + 0.5), elementwise."""
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def derive_seed(seed: int, purpose: str) -> int:
    """Sub-seed for one randomized component: first 8 bytes of BLAKE2b("<seed>:<purpose>")."""
    digest = hashlib.blake2b(f"{int(seed)}:{purpose}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def volume_stem(name: str) -> str:
    """'sub-01.nii' -> 'sub-01'."""
    return name[:-4] if name.lower().endswith(".nii") else name
