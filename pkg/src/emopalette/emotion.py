"""Emotion vectors over Russell's circumplex octants and cross-modal matching.

Both music clips and palettes are described by 8 similarity scores against
the octant labels (fixed order below). Alignment uses cosine similarity;
distribution-level agreement uses Jensen-Shannon divergence with natural
logarithms, so values are bounded by ln 2.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .colorlab import Palette
from .errors import DataError, UsageError

log = logging.getLogger(__name__)

EMOTION_LABELS = (
    "excited",
    "happy",
    "content",
    "calm",
    "depressed",
    "sad",
    "afraid",
    "angry",
)

# Octant directions on the valence(x)-arousal(y) plane, degrees, matching
# EMOTION_LABELS. Standard circumplex layout: happy sits at pure positive
# valence (0 deg), excited at 45, angry at 90, afraid at 135, sad at 180,
# depressed at 225, calm at 270 (pure low arousal), content at 315.
OCTANT_ANGLES_DEG = (45.0, 0.0, 315.0, 270.0, 225.0, 180.0, 135.0, 90.0)

# Shift added to every octant score so heuristic vectors are never all-zero.
HEURISTIC_SCORE_SHIFT = 1e-3


@dataclass(frozen=True)
class MatchCandidate:
    music_id: str
    palette_id: str
    similarity: float


def as_emotion_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (8,):
        raise UsageError(f"emotion vector must have 8 entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise UsageError("emotion vector contains non-finite values")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two emotion vectors, in [-1, 1]."""
    a, b = as_emotion_vector(a), as_emotion_vector(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UsageError("cosine similarity undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def to_distribution(e) -> np.ndarray:
    """Clamp negatives to zero and L1-normalize; all-zero falls back to uniform."""
    v = np.clip(as_emotion_vector(e), 0.0, None)
    total = v.sum()
    if total <= 0.0:
        return np.full(8, 0.125)
    return v / total


def _validate_distribution(p) -> np.ndarray:
    p = as_emotion_vector(p)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise UsageError("not a probability distribution over the 8 octants")
    return np.clip(p, 0.0, None)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence with natural log; 0 <= JS <= ln 2."""
    p, q = _validate_distribution(p), _validate_distribution(q)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0.0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def match_pairs(music, palettes, top_k: int):
    """Rank palettes for each music item by emotion-vector cosine similarity.

    ``music`` and ``palettes`` are sequences of (id, vector). Returns a dict
    music_id -> list of MatchCandidate, best first, ties broken by ascending
    palette id. Zero-norm vectors are skipped with a warning.
    """
    if top_k < 1:
        raise UsageError("top_k must be >= 1")

    kept_palettes = []
    for pid, vec in palettes:
        v = as_emotion_vector(vec)
        if np.linalg.norm(v) == 0.0:
            log.warning("skipping palette %r: zero-norm emotion vector", pid)
            continue
        kept_palettes.append((str(pid), v / np.linalg.norm(v)))
    if not kept_palettes:
        raise DataError("no usable palette emotion vectors")

    results = {}
    for mid, vec in music:
        v = as_emotion_vector(vec)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            log.warning("skipping music %r: zero-norm emotion vector", mid)
            continue
        v = v / norm
        scored = [
            MatchCandidate(str(mid), pid, float(np.dot(v, pv)))
            for pid, pv in kept_palettes
        ]
        scored.sort(key=lambda m: (-m.similarity, m.palette_id))
        results[str(mid)] = scored[:top_k]
    return results


def heuristic_palette_emotion(p: Palette) -> np.ndarray:
    """Deterministic palette -> emotion vector stand-in provider.

    The mapping (normative; the tests recompute it from this description):

    * valence  v = mean(L)/50 - 1 + 0.3 * mean(cos(h) * C/150)
    * arousal  a = mean(C)/75 - 1

    where the means run over the palette's colors and hue is in radians for
    the cosine. Octant k has the unit direction d_k at OCTANT_ANGLES_DEG[k]
    on the valence-arousal plane, and

    * score_k = max(0, v*cos(angle_k) + a*sin(angle_k)) + 1e-3

    The constant shift keeps the vector away from zero norm so cosine
    similarity is always defined. Uses means only, hence permutation
    invariant over the palette's colors.
    """
    l = np.array([c.l for c in p.colors])
    c = np.array([c.c for c in p.colors])
    h = np.radians([col.h for col in p.colors])
    v = float(np.mean(l) / 50.0 - 1.0 + 0.3 * np.mean(np.cos(h) * c / 150.0))
    a = float(np.mean(c) / 75.0 - 1.0)
    angles = np.radians(OCTANT_ANGLES_DEG)
    scores = np.maximum(0.0, v * np.cos(angles) + a * np.sin(angles))
    return scores + HEURISTIC_SCORE_SHIFT


def load_emotion_vectors(path) -> dict:
    """Load a JSON file mapping id -> [8 floats] into validated vectors."""

    def reject_duplicates(pairs):
        seen = set()
        out = {}
        for key, value in pairs:
            if key in seen:
                raise DataError(f"duplicate id {key!r} in emotion vector file")
            seen.add(key)
            out[key] = value
        return out

    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh, object_pairs_hook=reject_duplicates)
    except OSError as exc:
        raise DataError(f"cannot read emotion vector file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from exc

    if not isinstance(raw, dict):
        raise DataError(f"{path}: expected a JSON object of id -> [8 floats]")
    vectors = {}
    for key, value in raw.items():
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (8,):
            raise DataError(f"{path}: entry {key!r} must have 8 values, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{path}: entry {key!r} contains non-finite values")
        vectors[key] = arr
    return vectors


def save_emotion_vectors(path, vectors: dict):
    payload = {key: [float(x) for x in as_emotion_vector(vec)] for key, vec in vectors.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def write_match_jsonl(path, matches: dict):
    """One ``{"music_id","palette_id","similarity","rank"}`` object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for music_id in matches:
            for rank, cand in enumerate(matches[music_id], start=1):
                fh.write(
                    json.dumps(
                        {
                            "music_id": cand.music_id,
                            "palette_id": cand.palette_id,
                            "similarity": cand.similarity,
                            "rank": rank,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )
