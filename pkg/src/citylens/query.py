"""Text prompts to per-point score fields.

A prompt's raw similarity at a point is the max over observed levels of
``exp(cos(phi_prompt, phi_point_level))``; stored means are renormalized
before the dot product.  The final score divides the positive prompt's raw
similarity by the sum over the positive and all negative prompts, giving a
value in (0, 1] that equals 1 when no negatives are supplied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureStore, ScoreField

LevelMode = str | int  # "max" or a concrete level index


def _check_level_mode(mode: LevelMode, level_count: int) -> None:
    if mode == "max":
        return
    if isinstance(mode, bool) or not isinstance(mode, int):
        raise ValueError(f"level_mode must be 'max' or an integer, got {mode!r}")
    if not (0 <= mode < level_count):
        raise ValueError(f"level {mode} outside [0, {level_count})")


@dataclass(frozen=True)
class QuerySpec:
    positive: str
    negatives: tuple[str, ...] = ()
    level_mode: LevelMode = "max"

    def __post_init__(self) -> None:
        if not self.positive.strip():
            raise ValueError("positive prompt must be non-empty")
        object.__setattr__(self, "negatives", tuple(self.negatives))

    @classmethod
    def from_dict(cls, payload: dict) -> "QuerySpec":
        return cls(
            positive=payload["positive"],
            negatives=tuple(payload.get("negatives", ())),
            level_mode=payload.get("level_mode", "max"),
        )

    def to_dict(self) -> dict:
        return {"positive": self.positive, "negatives": list(self.negatives), "level_mode": self.level_mode}


@dataclass(frozen=True)
class QueryEmbeddings:
    phi_q: np.ndarray
    phi_n: np.ndarray  # (k, d), possibly k = 0


def embed_query(spec: QuerySpec, provider) -> QueryEmbeddings:
    phi_q = provider.embed_text(spec.positive)
    phi_n = (
        np.stack([provider.embed_text(n) for n in spec.negatives])
        if spec.negatives
        else np.zeros((0, phi_q.shape[0]), dtype=np.float32)
    )
    return QueryEmbeddings(phi_q, phi_n)


def _level_cosines(store: FeatureStore, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosines of `phi` against renormalized stored means.

    Returns (cos (L, n), usable (L, n)); a level is usable at a point when it
    was observed and its mean has non-negligible norm.
    """
    feats = store.features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=2)
    usable = (store.obs_count > 0) & (norms > 1e-12)
    safe = np.where(usable, norms, 1.0)
    cos = np.einsum("lnd,d->ln", feats, phi.astype(np.float64)) / safe
    cos[~usable] = 0.0
    return cos, usable


def raw_similarity_field(store: FeatureStore, phi: np.ndarray, level_mode: LevelMode = "max"):
    """Vectorized raw similarity; returns (values (n,), observed (n,))."""
    _check_level_mode(level_mode, store.level_count)
    cos, usable = _level_cosines(store, phi)
    if level_mode != "max":
        cos, usable = cos[level_mode : level_mode + 1], usable[level_mode : level_mode + 1]
    sims = np.where(usable, np.exp(cos), -np.inf)
    observed = usable.any(axis=0)
    values = np.where(observed, sims.max(axis=0), 1.0)
    return values, observed


def raw_similarity(store: FeatureStore, p: int, phi: np.ndarray, level_mode: LevelMode = "max") -> tuple[float, bool]:
    """Raw similarity at one point; unobserved points return (1.0, False)."""
    if not (0 <= p < store.point_count):
        raise IndexError(f"point index {p} outside [0, {store.point_count})")
    if phi.shape != (store.dim,):
        raise ValueError(f"expected a {store.dim}-vector, got shape {phi.shape}")
    values, observed = raw_similarity_field(store, phi, level_mode)
    return float(values[p]), bool(observed[p])


def normalized_score(s_q: float, s_negs) -> float:
    """s_q / (s_q + sum of negatives); negatives are summed in sorted order
    so the result is bit-invariant under permutation of the list."""
    s_negs = np.asarray(s_negs, dtype=np.float64)
    if s_q <= 0 or (s_negs.size and s_negs.min() <= 0):
        raise ValueError("raw similarities must be positive")
    return float(s_q / (s_q + np.sort(s_negs).sum()))


def score_field(store: FeatureStore, spec: QuerySpec, provider) -> ScoreField:
    """Normalized per-point scores for one query; unobserved points marked missing."""
    emb = embed_query(spec, provider)
    s_q, observed = raw_similarity_field(store, emb.phi_q, spec.level_mode)
    if emb.phi_n.shape[0]:
        neg = np.stack([raw_similarity_field(store, phi, spec.level_mode)[0] for phi in emb.phi_n], axis=1)
        neg_sum = np.sort(neg, axis=1).sum(axis=1)
    else:
        neg_sum = np.zeros_like(s_q)
    values = np.where(observed, s_q / (s_q + neg_sum), np.nan)
    return ScoreField(store.points, values, observed)


def score_ranking(values: np.ndarray) -> np.ndarray:
    """Point indices ordered by descending score; stable, so ties keep index order."""
    values = np.asarray(values, dtype=np.float64)
    return np.argsort(-values, kind="stable")
