"""Hashed character 3-gram features for raw text."""
from __future__ import annotations

import hashlib

import numpy as np

NGRAM = 3


class EmptyTextError(ValueError):
    """Text carries no characters to featurize."""


def _bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def featurize_text(text: str, dim: int = 256) -> np.ndarray:
    """L2-normalized term frequencies of case-folded character 3-grams, hashed into ``dim`` buckets.

    Texts shorter than three characters count as a single gram.
    """
    if dim < 2:
        raise ValueError(f"featurize_text: dim must be >= 2, got {dim}")
    if not text:
        raise EmptyTextError("featurize_text: empty text has no features")
    folded = text.casefold()
    grams = [folded[i:i + NGRAM] for i in range(len(folded) - NGRAM + 1)] or [folded]
    vec = np.zeros(dim)
    for gram in grams:
        vec[_bucket(gram, dim)] += 1.0
    return vec / np.linalg.norm(vec)
