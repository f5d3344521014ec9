"""Embedding/score providers.

All neural inference lives outside the engine behind a line-delimited JSON
protocol: requests ``{"op": "embed_text", "text": ...}``,
``{"op": "embed_image", "path": ...}``, ``{"op": "score_image", "path": ...,
"prompt": ...}`` and an initial ``{"op": "handshake"}``; replies
``{"embedding": [...]}``, ``{"score": x}``, ``{"dim": d}`` or
``{"error": ...}``.  One request is outstanding at a time.

The built-in stub provider is pure and deterministic, so the whole pipeline
can be exercised hermetically.  Its published rules:

* image embedding: concat(mean R, mean G, mean B, per-channel 4-bin
  histogram over [0, 1]) padded to 16 dims, then unit-normalized;
* text embedding: for color words, the image embedding of a uniform image
  of that color; otherwise a unit-normalized 16-dim PCG64 normal draw
  seeded with blake2b-64 of the lowercase prompt;
* image score: 5 * (1 + cos(embed_image(img), embed_text(prompt))),
  clamped to [0, 10].
"""

from __future__ import annotations

import hashlib
import json
import select
import subprocess
import tempfile
import threading
from pathlib import Path

import numpy as np

STUB_DIM = 16

COLOR_LEXICON: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "gray": (0.5, 0.5, 0.5),
    "grey": (0.5, 0.5, 0.5),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "brown": (0.45, 0.3, 0.15),
}


class ProviderError(RuntimeError):
    """External provider failure; carries the raw payload when available."""

    def __init__(self, message: str, payload: str | None = None):
        super().__init__(message if payload is None else f"{message}: {payload!r}")
        self.payload = payload


def _unit(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float32)
    norm = float(np.linalg.norm(vec.astype(np.float64)))
    if not np.isfinite(norm) or norm == 0.0:
        raise ProviderError("embedding has zero or non-finite norm")
    return (vec / norm).astype(np.float32)


def _image_features(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64).reshape(-1, 3)
    mean_rgb = img.mean(axis=0)
    feats = [mean_rgb]
    for c in range(3):
        hist, _ = np.histogram(img[:, c], bins=4, range=(0.0, 1.0))
        feats.append(hist / img.shape[0])
    vec = np.concatenate(feats)
    return np.concatenate([vec, np.zeros(STUB_DIM - vec.size)])


class StubProvider:
    """Deterministic in-process provider with a small color-word lexicon."""

    kind = "stub"
    dim = STUB_DIM

    def embed_text(self, text: str) -> np.ndarray:
        prompt = text.strip().lower()
        if prompt in COLOR_LEXICON:
            rgb = COLOR_LEXICON[prompt]
            swatch = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (2, 2, 3))
            return _unit(_image_features(swatch))
        digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "little")
        g = np.random.Generator(np.random.PCG64(seed))
        return _unit(g.standard_normal(STUB_DIM))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return _unit(_image_features(image))

    def score_image(self, image: np.ndarray, prompt: str) -> float:
        cos = float(
            self.embed_image(image).astype(np.float64) @ self.embed_text(prompt).astype(np.float64)
        )
        return float(np.clip(5.0 * (1.0 + cos), 0.0, 10.0))


class ExternalProvider:
    """Client for an external provider process speaking the line protocol.

    Requests are serialized through a lock; at most one is outstanding.  Any
    process death, timeout, or malformed reply raises :class:`ProviderError`
    with the raw payload attached.
    """

    kind = "external"

    def __init__(self, argv: list[str], timeout: float = 60.0):
        self._timeout = timeout
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._buffer = b""
        self._tmpdir = tempfile.TemporaryDirectory(prefix="citylens-provider-")
        self._img_counter = 0
        reply = self._request({"op": "handshake"})
        self.dim = int(reply.get("dim", 0))
        if self.dim <= 0:
            raise ProviderError("handshake did not report a positive dim", json.dumps(reply))

    def _read_line(self) -> bytes:
        assert self._proc.stdout is not None
        while b"\n" not in self._buffer:
            if self._proc.poll() is not None:
                raise ProviderError(f"provider process exited with code {self._proc.returncode}")
            ready, _, _ = select.select([self._proc.stdout], [], [], self._timeout)
            if not ready:
                raise ProviderError(f"provider timed out after {self._timeout}s")
            chunk = self._proc.stdout.read1(65536)
            if not chunk:
                raise ProviderError("provider closed stdout")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line

    def _request(self, obj: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise ProviderError(f"provider process exited with code {self._proc.returncode}")
            assert self._proc.stdin is not None
            self._proc.stdin.write((json.dumps(obj) + "\n").encode("utf-8"))
            self._proc.stdin.flush()
            raw = self._read_line()
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProviderError(f"malformed provider reply ({e})", raw.decode("utf-8", "replace"))
        if not isinstance(reply, dict):
            raise ProviderError("provider reply is not an object", raw.decode("utf-8", "replace"))
        if "error" in reply:
            raise ProviderError("provider returned an error", str(reply["error"]))
        return reply

    def _image_to_path(self, image: np.ndarray) -> str:
        from PIL import Image

        self._img_counter += 1
        path = Path(self._tmpdir.name) / f"img_{self._img_counter:06d}.png"
        arr = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
        Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)
        return str(path)

    def embed_text(self, text: str) -> np.ndarray:
        reply = self._request({"op": "embed_text", "text": text})
        return self._parse_embedding(reply)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        reply = self._request({"op": "embed_image", "path": self._image_to_path(image)})
        return self._parse_embedding(reply)

    def score_image(self, image: np.ndarray, prompt: str) -> float:
        reply = self._request({"op": "score_image", "path": self._image_to_path(image), "prompt": prompt})
        if "score" not in reply:
            raise ProviderError("reply missing 'score'", json.dumps(reply))
        return float(np.clip(float(reply["score"]), 0.0, 10.0))

    def _parse_embedding(self, reply: dict) -> np.ndarray:
        if "embedding" not in reply:
            raise ProviderError("reply missing 'embedding'", json.dumps(reply))
        vec = np.asarray(reply["embedding"], dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ProviderError(f"embedding has shape {vec.shape}, expected ({self.dim},)", json.dumps(reply))
        return _unit(vec)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._tmpdir.cleanup()

    def __enter__(self) -> "ExternalProvider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def make_provider(spec: str):
    """Build a provider from a CLI spec: ``stub`` or ``cmd:<argv...>``."""
    if spec == "stub":
        return StubProvider()
    if spec.startswith("cmd:"):
        import shlex

        argv = shlex.split(spec[len("cmd:") :])
        if not argv:
            raise ValueError("empty provider command")
        return ExternalProvider(argv)
    raise ValueError(f"unknown provider spec {spec!r} (expected 'stub' or 'cmd:<argv>')")
