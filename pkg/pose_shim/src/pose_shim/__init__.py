"""HTTP shim exposing generation and pose backends on the posecraft wire.

The service speaks the same three-role protocol the posecraft pipeline
consumes (/v1/interpolate, /v1/nvs, /v1/pose, plus /v1/health) but lives
in its own process and its own package: nothing here imports posecraft.
Real checkpoints plug in behind the role interface; the bundled --mock
mode answers every request deterministically so protocol conformance is
testable on any machine.
"""

from .service import ShimConfig, ShimStartupError, make_shim_server, serve

__all__ = ["ShimConfig", "ShimStartupError", "make_shim_server", "serve"]
