from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    """Model identifiers and runtime hints.

    `embedder` selects the embedding backend: ``builtin:<dim>`` for the
    deterministic reference embedder, or ``st:<model-name>`` for a
    sentence-transformers checkpoint (loaded lazily, optional dependency).
    `segmenter` currently supports ``felzenszwalb``.
    """

    embedder: str = "builtin:16"
    segmenter: str = "felzenszwalb"
    device: str = "cpu"
    batch_size: int = 8

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
