"""Reference external provider for the line-delimited embedding protocol.

Speaks JSON lines on stdin/stdout: ``handshake``, ``embed_text``,
``embed_image``, ``score_image``.  Ships a deterministic built-in embedder
so the protocol can be exercised without any neural runtime; real models
plug in through :class:`BridgeConfig` identifiers.
"""

from .config import BridgeConfig
from .protocol import serve_protocol

__version__ = "0.1.0"
__all__ = ["BridgeConfig", "serve_protocol", "__version__"]
