"""Embedding backends behind the protocol.

The built-in backend is pure and deterministic: image vectors come from
coarse color statistics, text vectors from a seeded hash draw.  It exists so
the protocol and the downstream engine can be driven hermetically; swap in a
real checkpoint via ``st:<model>`` when one is available.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .config import BridgeConfig


def _unit(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        vec = np.zeros_like(vec)
        vec[0] = 1.0
        return vec.astype(np.float32)
    return (vec / norm).astype(np.float32)


class BuiltinEmbedder:
    """Deterministic reference embedder; no model downloads, no state."""

    def __init__(self, dim: int = 16):
        if dim < 8:
            raise ValueError("builtin embedder needs dim >= 8")
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(text.strip().lower().encode("utf-8"), digest_size=8).digest()
        g = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        return _unit(g.standard_normal(self.dim))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64).reshape(-1, 3)
        feats = [img.mean(axis=0)]
        bins = max(1, (self.dim - 3) // 3)
        for c in range(3):
            hist, _ = np.histogram(img[:, c], bins=bins, range=(0.0, 1.0))
            feats.append(hist / img.shape[0])
        vec = np.concatenate(feats)
        if vec.size < self.dim:
            vec = np.concatenate([vec, np.zeros(self.dim - vec.size)])
        return _unit(vec[: self.dim])

    def score_image(self, image: np.ndarray, prompt: str) -> float:
        cos = float(self.embed_image(image).astype(np.float64) @ self.embed_text(prompt).astype(np.float64))
        return float(np.clip(5.0 * (1.0 + cos), 0.0, 10.0))


class SentenceTransformerEmbedder:
    """Optional neural backend; requires sentence-transformers at runtime."""

    def __init__(self, model_name: str, device: str = "cpu"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name, device=device)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed_text(self, text: str) -> np.ndarray:
        return _unit(self._model.encode([text], show_progress_bar=False)[0])

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        from PIL import Image

        pil = Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8))
        return _unit(self._model.encode([pil], show_progress_bar=False)[0])

    def score_image(self, image: np.ndarray, prompt: str) -> float:
        cos = float(self.embed_image(image).astype(np.float64) @ self.embed_text(prompt).astype(np.float64))
        return float(np.clip(5.0 * (1.0 + cos), 0.0, 10.0))


def build_embedder(config: BridgeConfig):
    spec = config.embedder
    if spec.startswith("builtin:"):
        return BuiltinEmbedder(int(spec.split(":", 1)[1]))
    if spec == "builtin":
        return BuiltinEmbedder()
    if spec.startswith("st:"):
        return SentenceTransformerEmbedder(spec.split(":", 1)[1], device=config.device)
    raise ValueError(f"unknown embedder spec {spec!r}")
