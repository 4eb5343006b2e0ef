"""Shim configuration and the HTTP service itself.

One engine call runs per role at a time (real checkpoints share a GPU);
concurrent requests for the same role queue on the role's lock instead
of failing. Schema problems answer 400, unknown paths 404, engine
crashes 500, always as {"error": ...} JSON.
"""

import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional, Tuple

from . import wire
from .mock import POSE_STEP_DEG, POSE_STEP_TRANSLATION, MockEngine

DEFAULT_PORT = 8421


class ShimStartupError(RuntimeError):
    """The service cannot come up with this configuration."""


@dataclass(frozen=True)
class ShimConfig:
    roles: Tuple[str, ...] = wire.ROLES
    checkpoints: Mapping[str, str] = field(default_factory=dict)
    device: str = "cpu"
    mock: bool = False
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    pose_step_deg: float = POSE_STEP_DEG
    pose_step_translation: Tuple[float, float, float] = POSE_STEP_TRANSLATION

    def __post_init__(self):
        roles = tuple(self.roles)
        object.__setattr__(self, "roles", roles)
        unknown = [r for r in roles if r not in wire.ROLES]
        if unknown:
            raise ValueError(f"unknown roles {unknown}; valid: {list(wire.ROLES)}")
        if not roles:
            raise ValueError("at least one role must be enabled")
        if len(set(roles)) != len(roles):
            raise ValueError("duplicate role in configuration")
        if self.mock and self.checkpoints:
            raise ValueError("mock mode takes no checkpoints")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")


def _load_engine(cfg: ShimConfig):
    """Resolve the engine serving every enabled role, or fail at startup."""
    if cfg.mock:
        return MockEngine(cfg.pose_step_deg, cfg.pose_step_translation)
    for role in cfg.roles:
        path = cfg.checkpoints.get(role)
        if not path:
            raise ShimStartupError(f"role '{role}' enabled but no checkpoint given")
        if not Path(path).exists():
            raise ShimStartupError(f"checkpoint for '{role}' not found: {path}")
    # checkpoint loading needs the corresponding inference stacks, which
    # are deliberately not dependencies of this package
    raise ShimStartupError(
        "no inference engine is bundled with this build; point the shim at "
        "an environment that provides one, or run with mock=True")


class _ShimHandler(BaseHTTPRequestHandler):
    engine = None
    config: Optional[ShimConfig] = None
    locks: Mapping[str, threading.Lock] = {}

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status: int, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _reply_error(self, status: int, message: str):
        self._reply(status, wire.dumps_canonical({"error": message}))

    def do_GET(self):
        if self.path == "/v1/health":
            self._reply(200, wire.dumps_canonical({"status": "ok"}))
        else:
            self._reply_error(404, f"unknown path {self.path}")

    def do_POST(self):
        role = self.path.rsplit("/", 1)[-1]
        if self.path != f"/v1/{role}" or role not in self.config.roles:
            self._reply_error(404, f"unknown path {self.path}")
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            payload = self._answer(role, body)
        except (wire.SchemaError, ValueError) as exc:
            self._reply_error(400, str(exc))
            return
        except Exception as exc:  # engine failure, not the caller's fault
            self._reply_error(500, f"inference failed: {exc}")
            return
        self._reply(200, wire.dumps_canonical(payload))

    def _answer(self, role: str, body: bytes) -> dict:
        obj = wire.parse_body(body, f"{role} request")
        with self.locks[role]:
            if role == "interpolate":
                start, end, count, prompt = wire.parse_interpolate(obj)
                frames = self.engine.interpolate(start, end, count, prompt)
                return wire.frames_wire(frames)
            if role == "nvs":
                images, poses, trajectory = wire.parse_nvs(obj)
                frames = self.engine.nvs(images, poses, trajectory)
                return wire.frames_wire(frames)
            images = wire.parse_pose(obj)
            poses, confidences = self.engine.pose(images)
            return wire.poses_wire(poses, confidences)


def make_shim_server(cfg: ShimConfig) -> ThreadingHTTPServer:
    """Bound but not yet serving; call serve_forever() when ready."""
    engine = _load_engine(cfg)
    handler = type("BoundShimHandler", (_ShimHandler,), {
        "engine": engine,
        "config": cfg,
        "locks": {role: threading.Lock() for role in cfg.roles},
    })
    return ThreadingHTTPServer((cfg.host, cfg.port), handler)


def serve(cfg: ShimConfig) -> None:
    """Run the service until interrupted."""
    server = make_shim_server(cfg)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
