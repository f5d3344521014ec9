"""Single-threaded request loop for the line-delimited JSON protocol.

Requests (one JSON object per line):
    {"op": "handshake"}
    {"op": "embed_text", "text": "..."}
    {"op": "embed_image", "path": "..."}
    {"op": "score_image", "path": "...", "prompt": "..."}

Replies: {"dim": d, "name": ...} | {"embedding": [...]} | {"score": x} |
{"error": "..."}.  Malformed input produces an error reply, never an exit;
exactly one reply per input line, in order.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from .config import BridgeConfig
from .embedders import build_embedder


def _load_image(path: str, cache: dict) -> np.ndarray:
    if path in cache:
        return cache[path]
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    if len(cache) > 64:
        cache.clear()
    cache[path] = arr
    return arr


def handle_request(request: dict, embedder, image_cache: dict) -> dict:
    op = request.get("op")
    if op == "handshake":
        return {"dim": embedder.dim, "name": type(embedder).__name__}
    if op == "embed_text":
        text = request.get("text")
        if not isinstance(text, str):
            return {"error": "embed_text needs a string 'text'"}
        return {"embedding": [float(v) for v in embedder.embed_text(text)]}
    if op == "embed_image":
        path = request.get("path")
        if not isinstance(path, str):
            return {"error": "embed_image needs a string 'path'"}
        try:
            image = _load_image(path, image_cache)
        except OSError as e:
            return {"error": f"cannot read image: {e}"}
        return {"embedding": [float(v) for v in embedder.embed_image(image)]}
    if op == "score_image":
        path = request.get("path")
        prompt = request.get("prompt")
        if not isinstance(path, str) or not isinstance(prompt, str):
            return {"error": "score_image needs string 'path' and 'prompt'"}
        try:
            image = _load_image(path, image_cache)
        except OSError as e:
            return {"error": f"cannot read image: {e}"}
        return {"score": embedder.score_image(image, prompt)}
    return {"error": f"unknown op {op!r}"}


def serve_protocol(config: BridgeConfig | None = None, stdin=None, stdout=None) -> None:
    """Answer requests until stdin closes; one outstanding request at a time."""
    config = config or BridgeConfig()
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    embedder = build_embedder(config)
    image_cache: dict = {}
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                reply = {"error": "request must be a JSON object"}
            else:
                reply = handle_request(request, embedder, image_cache)
        except json.JSONDecodeError as e:
            reply = {"error": f"malformed JSON: {e}"}
        except Exception as e:  # never die on a request
            reply = {"error": f"{type(e).__name__}: {e}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
