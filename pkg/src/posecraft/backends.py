"""Model-role backends: wire protocol, HTTP client, and synthetic oracle.

The pipeline talks to three external model roles, each behind the same
JSON-over-HTTP shape:

    POST /v1/interpolate   frame interpolation between two input images
    POST /v1/nvs           novel-view synthesis along a camera trajectory
    POST /v1/pose          per-frame camera pose estimation

Wire schema (canonical JSON: fixed field order, no whitespace, images as
standard base64 PNG with padding):

    interpolate request   {"start_image", "end_image", "frame_count", "prompt"}
    interpolate response  {"frames": [...]}
    nvs request           {"relay_images", "relay_poses", "trajectory"}
    nvs response          {"frames": [...]}
    pose request          {"images": [...]}
    pose response         {"poses": [...], "confidences": [...]}
    camera pose object    {"rotation": [w, x, y, z], "translation": [x, y, z]}

Poses are world-to-camera; pose responses are gauged so the first frame
is the identity.  Trajectory poses in an nvs request are expressed in
the gauge of the first relay frame.

Besides the HTTP client this module ships two in-process backends: a
deterministic mock (pixel blends and scripted poses, used for protocol
golden files) and a synthetic projective scene with ground-truth
geometry that implements all three roles well enough to run the whole
pipeline against a known answer.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import json
import math
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests
from PIL import Image

from .features import Frame, Provenance
from .geometry import CameraPose, Rotation, Trajectory, rotation_geodesic_deg, slerp

DEFAULT_TIMEOUT = 300.0  # diffusion backends take minutes per clip
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = (0.5, 2.0)

DEFAULT_FRAME_COUNT = 16

ENV_URLS = {
    "interpolate": "POSECRAFT_INTERPOLATE_URL",
    "nvs": "POSECRAFT_NVS_URL",
    "pose": "POSECRAFT_POSE_URL",
}
ENV_TIMEOUT = "POSECRAFT_TIMEOUT"

SCENE_WIDTH = 512
SCENE_HEIGHT = 320
SCENE_FOCAL = 400.0
SCENE_ORBIT_RADIUS = 10.0
SCENE_BALL_RADIUS = 2.5
MIN_SCENE_POINTS = 200
MIN_VISIBLE = 50

_PATCH = 13                # texels per patch side
_PATCH_STEP = 0.044        # world units between texels
_BACKGROUND = 96

# smooth-textured wall behind the point ball: descriptor bits that fall
# outside a patch then sample world-stable content instead of a flat
# field that pixel noise would turn into coin flips
_WALL_DISTANCE = 14.0
_WALL_LATTICE = 96         # lattice cells per side
_WALL_SPACING = 2.0        # world units per cell

# generated-frame quality falls off mid-sequence; these scale how hard
_DC_DEGRADATION = 0.6
_NVS_DEGRADATION = 0.3


class Transport(RuntimeError):
    """Endpoint unreachable or persistently failing after retries."""


class Timeout(RuntimeError):
    """A single request exceeded the configured deadline."""


class ProtocolViolation(RuntimeError):
    """Response (or request) does not satisfy the wire contract."""


class InsufficientVisibility(RuntimeError):
    """Too few scene points project into the frame at this pose."""


class UnknownFrame(KeyError):
    """Image was not produced by this scene's renderer."""


# ----------------------------------------------------------------- PNG codec
# Own encoder so identical pixels always produce identical bytes: filter
# type 0 on every row, one zlib stream at level 6.  Decoding accepts any
# valid PNG via Pillow.

def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return (struct.pack(">I", len(data)) + tag + data
            + struct.pack(">I", zlib.crc32(tag + data)))


def encode_png_gray(pixels: np.ndarray) -> bytes:
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    if px.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {px.shape}")
    h, w = px.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = np.zeros((h, w + 1), dtype=np.uint8)
    raw[:, 1:] = px
    idat = zlib.compress(raw.tobytes(), 6)
    return (b"\x89PNG\r\n\x1a\n" + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", idat) + _png_chunk(b"IEND", b""))


def decode_png_gray(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ValueError(f"not a decodable image: {exc}") from None
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def frame_to_png(frame: Frame) -> bytes:
    return encode_png_gray(frame.pixels)


def png_to_frame(data: bytes, index: int = 0,
                 provenance: Provenance = Provenance.DC_INTERPOLATED) -> Frame:
    return Frame.from_array(decode_png_gray(data), index=index,
                            provenance=provenance)


# ----------------------------------------------------------------- wire JSON

def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text, what: str) -> bytes:
    if not isinstance(text, str):
        raise ProtocolViolation(f"{what} must be a base64 string")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ProtocolViolation(f"{what} is not valid base64: {exc}") from None


def _need(obj: dict, key: str, what: str):
    if key not in obj:
        raise ProtocolViolation(f"{what} is missing field '{key}'")
    return obj[key]


def _need_list(obj: dict, key: str, what: str) -> list:
    val = _need(obj, key, what)
    if not isinstance(val, list):
        raise ProtocolViolation(f"{what} field '{key}' must be a list")
    return val


def _as_dict(obj, what: str) -> dict:
    if not isinstance(obj, dict):
        raise ProtocolViolation(f"{what} must be a JSON object")
    return obj


def _wire_floats(vals, n: int, what: str) -> Tuple[float, ...]:
    if not isinstance(vals, list) or len(vals) != n:
        raise ProtocolViolation(f"{what} must be a list of {n} numbers")
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ProtocolViolation(f"{what} must contain only numbers")
        out.append(float(v))
    return tuple(out)


def pose_to_wire(pose: CameraPose) -> dict:
    w, x, y, z = (float(v) for v in pose.rotation.as_quat())
    tx, ty, tz = (float(v) for v in pose.translation)
    return {"rotation": [w, x, y, z], "translation": [tx, ty, tz]}


def pose_from_wire(obj) -> CameraPose:
    obj = _as_dict(obj, "pose")
    quat = _wire_floats(_need(obj, "rotation", "pose"), 4, "pose rotation")
    trans = _wire_floats(_need(obj, "translation", "pose"), 3, "pose translation")
    if abs(math.sqrt(sum(q * q for q in quat)) - 1.0) > 1e-6:
        raise ProtocolViolation("pose rotation quaternion is not unit length")
    return CameraPose(Rotation.from_quat(quat), np.array(trans))


def dumps_canonical(obj) -> bytes:
    """Canonical JSON bytes: insertion-ordered keys, no whitespace."""
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def loads_wire(data: bytes, what: str) -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"{what} is not valid JSON: {exc}") from None
    return _as_dict(obj, what)


# ----------------------------------------------------------- message types

def _identity_gauge(pose: CameraPose, tol: float = 1e-9) -> bool:
    w = abs(float(pose.rotation.as_quat()[0]))
    vec = float(np.max(np.abs(pose.rotation.as_quat()[1:])))
    return (abs(w - 1.0) <= tol and vec <= tol
            and float(np.max(np.abs(pose.translation))) <= tol)


@dataclass(frozen=True)
class InterpolateRequest:
    start_image: bytes
    end_image: bytes
    frame_count: int = DEFAULT_FRAME_COUNT
    prompt: Optional[str] = None

    def __post_init__(self):
        if not self.start_image or not self.end_image:
            raise ValueError("input images cannot be empty")
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")

    def to_wire(self) -> dict:
        return {"start_image": _b64(self.start_image),
                "end_image": _b64(self.end_image),
                "frame_count": self.frame_count,
                "prompt": self.prompt}

    @classmethod
    def from_wire(cls, obj: dict) -> "InterpolateRequest":
        obj = _as_dict(obj, "interpolate request")
        count = _need(obj, "frame_count", "interpolate request")
        if isinstance(count, bool) or not isinstance(count, int) or count < 2:
            raise ProtocolViolation("frame_count must be an integer >= 2")
        prompt = obj.get("prompt")
        if prompt is not None and not isinstance(prompt, str):
            raise ProtocolViolation("prompt must be a string or null")
        return cls(start_image=_unb64(_need(obj, "start_image", "interpolate request"), "start_image"),
                   end_image=_unb64(_need(obj, "end_image", "interpolate request"), "end_image"),
                   frame_count=count, prompt=prompt)


@dataclass(frozen=True)
class InterpolateResponse:
    frames: Tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def to_wire(self) -> dict:
        return {"frames": [_b64(f) for f in self.frames]}

    @classmethod
    def from_wire(cls, obj: dict) -> "InterpolateResponse":
        obj = _as_dict(obj, "interpolate response")
        frames = _need_list(obj, "frames", "interpolate response")
        return cls(frames=tuple(_unb64(f, f"frames[{i}]")
                                for i, f in enumerate(frames)))

    def validate_against(self, request: InterpolateRequest):
        if len(self.frames) != request.frame_count:
            raise ProtocolViolation(
                f"expected {request.frame_count} frames, got {len(self.frames)}")
        if self.frames[0] != request.start_image:
            raise ProtocolViolation("first frame does not echo the start image")
        if self.frames[-1] != request.end_image:
            raise ProtocolViolation("last frame does not echo the end image")


@dataclass(frozen=True)
class NvsRequest:
    relay_images: Tuple[bytes, ...]
    relay_poses: Tuple[CameraPose, ...]
    trajectory: Trajectory

    def __post_init__(self):
        object.__setattr__(self, "relay_images", tuple(self.relay_images))
        object.__setattr__(self, "relay_poses", tuple(self.relay_poses))
        if len(self.relay_images) < 2:
            raise ValueError("need at least two relay frames")
        if len(self.relay_images) != len(self.relay_poses):
            raise ValueError("relay images and poses must align")

    def to_wire(self) -> dict:
        return {"relay_images": [_b64(f) for f in self.relay_images],
                "relay_poses": [pose_to_wire(p) for p in self.relay_poses],
                "trajectory": [pose_to_wire(p) for p in self.trajectory]}

    @classmethod
    def from_wire(cls, obj: dict) -> "NvsRequest":
        obj = _as_dict(obj, "nvs request")
        images = tuple(_unb64(f, f"relay_images[{i}]") for i, f in
                       enumerate(_need_list(obj, "relay_images", "nvs request")))
        poses = tuple(pose_from_wire(p) for p in
                      _need_list(obj, "relay_poses", "nvs request"))
        traj = [pose_from_wire(p) for p in
                _need_list(obj, "trajectory", "nvs request")]
        if len(traj) < 2:
            raise ProtocolViolation("trajectory must hold at least two poses")
        try:
            return cls(relay_images=images, relay_poses=poses,
                       trajectory=Trajectory(tuple(traj)))
        except ValueError as exc:
            raise ProtocolViolation(str(exc)) from None


@dataclass(frozen=True)
class NvsResponse:
    frames: Tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def to_wire(self) -> dict:
        return {"frames": [_b64(f) for f in self.frames]}

    @classmethod
    def from_wire(cls, obj: dict) -> "NvsResponse":
        obj = _as_dict(obj, "nvs response")
        frames = _need_list(obj, "frames", "nvs response")
        return cls(frames=tuple(_unb64(f, f"frames[{i}]")
                                for i, f in enumerate(frames)))

    def validate_against(self, request: NvsRequest):
        if len(self.frames) != len(request.trajectory):
            raise ProtocolViolation(
                f"expected {len(request.trajectory)} frames, got {len(self.frames)}")


@dataclass(frozen=True)
class PoseRequest:
    images: Tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if len(self.images) < 2:
            raise ValueError("pose estimation needs at least two frames")

    def to_wire(self) -> dict:
        return {"images": [_b64(f) for f in self.images]}

    @classmethod
    def from_wire(cls, obj: dict) -> "PoseRequest":
        obj = _as_dict(obj, "pose request")
        images = _need_list(obj, "images", "pose request")
        if len(images) < 2:
            raise ProtocolViolation("pose request must hold at least two images")
        return cls(images=tuple(_unb64(f, f"images[{i}]")
                                for i, f in enumerate(images)))


@dataclass(frozen=True)
class PoseResponse:
    poses: Tuple[CameraPose, ...]
    confidences: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "confidences",
                           tuple(float(c) for c in self.confidences))

    def to_wire(self) -> dict:
        return {"poses": [pose_to_wire(p) for p in self.poses],
                "confidences": list(self.confidences)}

    @classmethod
    def from_wire(cls, obj: dict) -> "PoseResponse":
        obj = _as_dict(obj, "pose response")
        poses = tuple(pose_from_wire(p) for p in
                      _need_list(obj, "poses", "pose response"))
        confs = _need_list(obj, "confidences", "pose response")
        for c in confs:
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise ProtocolViolation("confidences must be numbers")
        return cls(poses=poses, confidences=tuple(float(c) for c in confs))

    def validate_against(self, request: PoseRequest):
        if len(self.poses) != len(request.images):
            raise ProtocolViolation(
                f"expected {len(request.images)} poses, got {len(self.poses)}")
        if len(self.confidences) != len(self.poses):
            raise ProtocolViolation("confidences do not align with poses")
        if not self.poses or not _identity_gauge(self.poses[0]):
            raise ProtocolViolation("first pose must be the identity gauge")
        for i, c in enumerate(self.confidences):
            if not 0.0 <= c <= 1.0 or not math.isfinite(c):
                raise ProtocolViolation(f"confidence[{i}]={c} outside [0, 1]")


_ROLES = {
    "interpolate": (InterpolateRequest, InterpolateResponse),
    "nvs": (NvsRequest, NvsResponse),
    "pose": (PoseRequest, PoseResponse),
}


# ------------------------------------------------------------- HTTP client

@dataclass(frozen=True)
class BackendConfig:
    interpolate_url: Optional[str] = None
    nvs_url: Optional[str] = None
    pose_url: Optional[str] = None
    timeout: float = DEFAULT_TIMEOUT
    retries: int = DEFAULT_RETRIES
    backoff: Tuple[float, float] = DEFAULT_BACKOFF

    def url_for(self, role: str) -> str:
        url = getattr(self, f"{role}_url", None)
        if role not in _ROLES:
            raise ValueError(f"unknown role '{role}'")
        if not url:
            raise ValueError(f"no endpoint configured for role '{role}'")
        return url

    @classmethod
    def from_file(cls, path) -> "BackendConfig":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            import tomli
            data = tomli.loads(text.decode("utf-8"))
        else:
            data = json.loads(text.decode("utf-8"))
        endpoints = data.get("endpoints", {})
        client = data.get("client", {})
        return cls(interpolate_url=endpoints.get("interpolate"),
                   nvs_url=endpoints.get("nvs"),
                   pose_url=endpoints.get("pose"),
                   timeout=float(client.get("timeout", DEFAULT_TIMEOUT)),
                   retries=int(client.get("retries", DEFAULT_RETRIES)))

    def with_env_overrides(self, environ=None) -> "BackendConfig":
        environ = os.environ if environ is None else environ
        fields = {}
        for role, var in ENV_URLS.items():
            if environ.get(var):
                fields[f"{role}_url"] = environ[var]
        if environ.get(ENV_TIMEOUT):
            fields["timeout"] = float(environ[ENV_TIMEOUT])
        if not fields:
            return self
        merged = {**self.__dict__, **fields}
        return BackendConfig(**merged)

    @classmethod
    def resolve(cls, path=None, environ=None) -> "BackendConfig":
        base = cls.from_file(path) if path else cls()
        return base.with_env_overrides(environ)


def http_call(role: str, request, config: BackendConfig):
    """POST a request to the configured endpoint for the role.

    Transport failures (connection errors, HTTP >= 400) are retried with
    exponential backoff; a malformed or invariant-breaking response is
    never retried.  The response is fully validated before it is
    returned, so no partially-valid message reaches the pipeline.
    """
    req_type, resp_type = _ROLES[role]
    if not isinstance(request, req_type):
        raise TypeError(f"role '{role}' takes {req_type.__name__}")
    url = config.url_for(role)
    payload = dumps_canonical(request.to_wire())

    last_error: Optional[Exception] = None
    for attempt in range(config.retries + 1):
        if attempt:
            time.sleep(config.backoff[min(attempt - 1, len(config.backoff) - 1)])
        try:
            http = requests.post(url, data=payload, timeout=config.timeout,
                                 headers={"Content-Type": "application/json"})
        except requests.exceptions.ConnectTimeout as exc:
            last_error = Transport(f"connect timeout for {url}: {exc}")
            continue
        except requests.exceptions.Timeout as exc:
            raise Timeout(f"{role} exceeded {config.timeout}s: {exc}") from None
        except requests.exceptions.RequestException as exc:
            last_error = Transport(f"cannot reach {url}: {exc}")
            continue
        if http.status_code != 200:
            last_error = Transport(f"{url} returned HTTP {http.status_code}")
            continue
        response = resp_type.from_wire(loads_wire(http.content, f"{role} response"))
        response.validate_against(request)
        return response
    raise last_error if last_error is not None else Transport(f"no attempt made for {url}")


class HttpBackend:
    """All three model roles over HTTP.  Safe for concurrent use."""

    def __init__(self, config: BackendConfig):
        self.config = config

    def interpolate(self, request: InterpolateRequest) -> InterpolateResponse:
        return http_call("interpolate", request, self.config)

    def nvs(self, request: NvsRequest) -> NvsResponse:
        return http_call("nvs", request, self.config)

    def pose(self, request: PoseRequest) -> PoseResponse:
        return http_call("pose", request, self.config)


# ----------------------------------------------------------- mock backend

class MockBackend:
    """Scripted backend with no geometry behind it.

    Interpolation blends pixels linearly, nvs resamples the relay frames
    along the trajectory, and poses follow a fixed per-index rule.  Every
    output is a pure function of the request, which makes this the
    reference implementation for protocol golden files.
    """

    def interpolate(self, request: InterpolateRequest) -> InterpolateResponse:
        a = decode_png_gray(request.start_image).astype(np.float64)
        b = decode_png_gray(request.end_image).astype(np.float64)
        if a.shape != b.shape:
            raise ValueError(f"input shapes differ: {a.shape} vs {b.shape}")
        n = request.frame_count
        frames: List[bytes] = [request.start_image]
        for i in range(1, n - 1):
            u = i / (n - 1)
            mid = np.rint(a * (1.0 - u) + b * u).astype(np.uint8)
            frames.append(encode_png_gray(mid))
        frames.append(request.end_image)
        return InterpolateResponse(frames=tuple(frames))

    def nvs(self, request: NvsRequest) -> NvsResponse:
        n_relay = len(request.relay_images)
        n_out = len(request.trajectory)
        frames = []
        for t in range(n_out):
            src = round(t * (n_relay - 1) / (n_out - 1)) if n_out > 1 else 0
            frames.append(request.relay_images[src])
        return NvsResponse(frames=tuple(frames))

    def pose(self, request: PoseRequest) -> PoseResponse:
        poses = [CameraPose.identity()]
        for i in range(1, len(request.images)):
            rot = Rotation.from_axis_angle((0.0, 1.0, 0.0), 4.0 * i)
            poses.append(CameraPose(rot, np.array([0.05 * i, 0.0, 0.01 * i])))
        confs = tuple(1.0 for _ in request.images)
        return PoseResponse(poses=tuple(poses), confidences=confs)


# -------------------------------------------------------- synthetic scene

def orbit_pose(yaw_deg: float, radius: float = SCENE_ORBIT_RADIUS,
               height: float = 0.0) -> CameraPose:
    """World-to-camera pose on a horizontal orbit, looking at the origin.

    Two orbit poses differ by a pure rotation about the camera's y axis,
    so their geodesic distance equals the yaw gap exactly.
    """
    yaw = math.radians(yaw_deg)
    center = np.array([radius * math.sin(yaw), height, -radius * math.cos(yaw)])
    fwd = -center / np.linalg.norm(center)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rows = np.stack([right, down, fwd])
    rot = Rotation.from_matrix(rows)
    return CameraPose(rot, -rows @ center)


def _scene_intrinsics() -> np.ndarray:
    return np.array([[SCENE_FOCAL, 0.0, SCENE_WIDTH / 2.0],
                     [0.0, SCENE_FOCAL, SCENE_HEIGHT / 2.0],
                     [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class SyntheticScene:
    """Textured point cloud on a camera orbit, with exact geometry.

    Each point carries a seeded 9x9 high-contrast patch painted on a
    fixed tangent plane, so the same point looks the same (up to
    perspective) from every view and feature matching has something to
    bite on.
    """

    points: np.ndarray        # (N, 3) world coordinates
    patch_seeds: np.ndarray   # (N,) per-point texture seeds
    textures: np.ndarray      # (N, 9, 9) uint8 patches
    tangents: np.ndarray      # (N, 2, 3) patch plane basis
    wall_values: np.ndarray   # (L, L) backdrop texture lattice
    wall_frame: np.ndarray    # (3, 3) rows: normal, e1, e2 of the backdrop
    K: np.ndarray
    trajectory: Trajectory    # ground-truth camera arc
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("points", "patch_seeds", "textures", "tangents",
                     "wall_values", "wall_frame", "K"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.points.shape[0]
        if n < MIN_SCENE_POINTS:
            raise ValueError(f"scene needs >= {MIN_SCENE_POINTS} points, got {n}")
        if self.points.shape != (n, 3) or self.patch_seeds.shape != (n,):
            raise ValueError("points and patch seeds must align")
        if self.textures.shape != (n, _PATCH, _PATCH):
            raise ValueError("one 9x9 texture per point required")
        if self.wall_values.shape != (_WALL_LATTICE, _WALL_LATTICE):
            raise ValueError("backdrop lattice has a fixed size")
        if self.wall_frame.shape != (3, 3):
            raise ValueError("backdrop frame must be 3x3")
        if self.K.shape != (3, 3):
            raise ValueError("K must be 3x3")
        if self.sigma < 0:
            raise ValueError("sigma cannot be negative")
        for pose in self.trajectory:
            depths = self.points @ pose.rotation.as_matrix().T + pose.translation
            if not np.all(depths[:, 2] > 0):
                raise ValueError("every point must sit in front of every "
                                 "trajectory camera")

    def gt_pose(self, u: float) -> CameraPose:
        """Ground-truth pose at fractional arc position u in [0, 1]."""
        n = len(self.trajectory)
        pos = u * (n - 1)
        lo = min(int(math.floor(pos)), n - 2)
        frac = pos - lo
        a, b = self.trajectory[lo], self.trajectory[lo + 1]
        rot = slerp(a.rotation, b.rotation, frac)
        trans = (1.0 - frac) * a.translation + frac * b.translation
        return CameraPose(rot, trans)


def make_scene(seed: int = 0, yaw_start_deg: float = 0.0,
               yaw_end_deg: float = 60.0, n_points: int = 300,
               sigma: float = 0.0, trajectory_len: int = 25) -> SyntheticScene:
    """Build a scene: point ball at the origin, cameras on an orbit arc."""
    rng = np.random.default_rng(seed)
    # uniform in a ball: direction * r^(1/3) scaling
    direc = rng.normal(size=(n_points, 3))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    radii = SCENE_BALL_RADIUS * rng.random(n_points) ** (1.0 / 3.0)
    points = direc * radii[:, None]

    patch_seeds = rng.integers(0, 2 ** 62, size=n_points)
    # patches roughly face the middle of the camera arc (with a seeded
    # tilt) so they stay matchable across the whole orbit span
    yaw_mid = math.radians((yaw_start_deg + yaw_end_deg) / 2.0)
    mid_dir = np.array([math.sin(yaw_mid), 0.0, -math.cos(yaw_mid)])
    textures = np.empty((n_points, _PATCH, _PATCH), dtype=np.uint8)
    tangents = np.empty((n_points, 2, 3))
    for i in range(n_points):
        prng = np.random.default_rng(int(patch_seeds[i]))
        # bimodal values: strong light/dark structure for corner detection
        base = prng.integers(0, 2, size=(_PATCH, _PATCH)) * 170 + 40
        textures[i] = (base + prng.integers(0, 41, size=(_PATCH, _PATCH))).astype(np.uint8)
        normal = mid_dir + 0.25 * prng.normal(size=3)
        normal /= np.linalg.norm(normal)
        u = np.cross(normal, np.array([0.0, 1.0, 0.0]))
        u /= np.linalg.norm(u)
        v = np.cross(normal, u)
        phi = prng.uniform(0.0, 2.0 * math.pi)
        tangents[i, 0] = math.cos(phi) * u + math.sin(phi) * v
        tangents[i, 1] = -math.sin(phi) * u + math.cos(phi) * v

    # backdrop: smooth value-noise wall on the far side of the ball,
    # facing the middle of the camera arc
    wall_values = rng.uniform(40.0, 150.0, size=(_WALL_LATTICE, _WALL_LATTICE))
    wall_normal = -mid_dir  # plane x . n = +distance sits opposite the arc
    e1 = np.cross(np.array([0.0, 1.0, 0.0]), wall_normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(wall_normal, e1)
    wall_frame = np.stack([wall_normal, e1, e2])

    yaws = np.linspace(yaw_start_deg, yaw_end_deg, trajectory_len)
    poses = tuple(orbit_pose(float(y)) for y in yaws)
    return SyntheticScene(points=points, patch_seeds=patch_seeds,
                          textures=textures, tangents=tangents,
                          wall_values=wall_values, wall_frame=wall_frame,
                          K=_scene_intrinsics(), trajectory=Trajectory(poses),
                          sigma=sigma, seed=seed)


def _render_seed(scene_seed: int, pose: CameraPose, degradation: float) -> int:
    # poses are quantized well below any visible scale before hashing, so
    # a pose that went through a relative/compose round trip still seeds
    # the same noise (and hits the same cache slot) as the original
    quat = np.round(np.asarray(pose.rotation.as_quat(), dtype=np.float64),
                    12) + 0.0
    if quat[0] < 0 or (quat[0] == 0 and quat[np.nonzero(quat)[0][0]] < 0):
        quat = -quat
    trans = np.round(np.asarray(pose.translation, dtype=np.float64), 12) + 0.0
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", scene_seed))
    h.update(quat.tobytes())
    h.update(trans.tobytes())
    h.update(struct.pack("<d", degradation))
    return int.from_bytes(h.digest(), "little")


# screen-space window scanned around each projected patch center; wide
# enough to cover a patch diagonal at the scene's nearest depth
_WIN_RADIUS = 16
_WIN_DU, _WIN_DV = (g.ravel() for g in
                    np.meshgrid(np.arange(-_WIN_RADIUS, _WIN_RADIUS + 1),
                                np.arange(-_WIN_RADIUS, _WIN_RADIUS + 1),
                                indexing="ij"))
_HALF_EXTENT = (_PATCH - 1) / 2.0  # patch spans +-4 texels

# one camera ray per pixel (intrinsics are fixed for the scene oracle)
_PIX_V_GRID, _PIX_U_GRID = np.mgrid[0:SCENE_HEIGHT, 0:SCENE_WIDTH]
_PIX_DIRS = np.stack(
    [(_PIX_U_GRID.ravel() - SCENE_WIDTH / 2.0) / SCENE_FOCAL,
     (_PIX_V_GRID.ravel() - SCENE_HEIGHT / 2.0) / SCENE_FOCAL,
     np.ones(SCENE_HEIGHT * SCENE_WIDTH)], axis=-1)


def _render_backdrop(scene: SyntheticScene, R: np.ndarray,
                     cam_center: np.ndarray) -> np.ndarray:
    """Wall pixels for every ray: bilinear sample of the scene lattice."""
    normal, e1, e2 = scene.wall_frame
    # hit . e = cam_center . e + s * (ray . e); projecting the wall frame
    # through R first keeps everything a scalar field over the rays
    denom = _PIX_DIRS @ (R @ normal)
    d1 = _PIX_DIRS @ (R @ e1)
    d2 = _PIX_DIRS @ (R @ e2)
    offset = _WALL_DISTANCE - cam_center @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        s = offset / denom
        a = (cam_center @ e1 + s * d1) / _WALL_SPACING + _WALL_LATTICE / 2.0
        b = (cam_center @ e2 + s * d2) / _WALL_SPACING + _WALL_LATTICE / 2.0
    a = np.clip(np.nan_to_num(a), 0.0, _WALL_LATTICE - 1.0)
    b = np.clip(np.nan_to_num(b), 0.0, _WALL_LATTICE - 1.0)
    ia = np.minimum(a.astype(np.intp), _WALL_LATTICE - 2)
    ib = np.minimum(b.astype(np.intp), _WALL_LATTICE - 2)
    fa, fb = a - ia, b - ib
    w = scene.wall_values
    vals = (w[ia, ib] * (1 - fa) * (1 - fb) + w[ia + 1, ib] * fa * (1 - fb)
            + w[ia, ib + 1] * (1 - fa) * fb + w[ia + 1, ib + 1] * fa * fb)
    return np.where((denom > 1e-9) & (s > 0.0), vals, float(_BACKGROUND))


def synthetic_render(scene: SyntheticScene, pose: CameraPose,
                     degradation: float = 0.0, index: int = 0,
                     provenance: Provenance = Provenance.SYNTHETIC) -> Frame:
    """Render the scene at a pose by ray-casting each patch.

    Every pixel near a projected point is intersected with that point's
    tangent plane and the 9x9 texture is sampled bilinearly, so patch
    appearance is perspective-correct and feature positions track the
    true geometry.  Deterministic: noise (and, when degradation > 0,
    patch displacement) is seeded from the scene seed and the pose, so
    rendering the same pose twice is bit-identical at any sigma.
    Degradation in [0, 1] shifts patches off their true 3D positions and
    adds extra pixel noise, which is what makes weakly generated frames
    lose epipolar support downstream.
    """
    R = pose.rotation.as_matrix()
    t = pose.translation
    cam_center = pose.center()
    fx, fy = scene.K[0, 0], scene.K[1, 1]
    cx, cy = scene.K[0, 2], scene.K[1, 2]

    cam_pts = scene.points @ R.T + t
    z = cam_pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * cam_pts[:, 0] / z + cx
        v = fy * cam_pts[:, 1] / z + cy
    visible = (z > 0.1) & (u >= 0) & (u < SCENE_WIDTH) & (v >= 0) & (v < SCENE_HEIGHT)
    if int(visible.sum()) < MIN_VISIBLE:
        raise InsufficientVisibility(
            f"only {int(visible.sum())} points visible, need {MIN_VISIBLE}")

    rng = np.random.default_rng(_render_seed(scene.seed, pose, degradation))

    pts = scene.points[visible]
    if degradation > 0.0:
        pts = pts + rng.normal(0.0, degradation * 0.30, size=pts.shape)
    tu = scene.tangents[visible, 0]
    tv = scene.tangents[visible, 1]
    tex = scene.textures[visible].astype(np.float64)
    normal = np.cross(tu, tv)

    # pixel windows around the (possibly displaced) projected centers
    cam_d = pts @ R.T + t
    pu = fx * cam_d[:, 0] / cam_d[:, 2] + cx
    pv = fy * cam_d[:, 1] / cam_d[:, 2] + cy
    win_u = np.rint(pu).astype(np.int64)[:, None] + _WIN_DU[None, :]
    win_v = np.rint(pv).astype(np.int64)[:, None] + _WIN_DV[None, :]

    # ray through each window pixel, intersected with the patch plane;
    # ray . x for x in {normal, tu, tv} reduces to u' Rx[0] + v' Rx[1]
    # + Rx[2] per point, so no (points, window, 3) tensor is ever built
    Rn = R @ normal.T
    Rtu = R @ tu.T
    Rtv = R @ tv.T
    up = (win_u - cx) / fx
    vp = (win_v - cy) / fy
    denom = up * Rn[0][:, None] + vp * Rn[1][:, None] + Rn[2][:, None]
    offset = np.einsum("nj,nj->n", pts - cam_center, normal)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = offset[:, None] / denom
    cu = np.einsum("nj,nj->n", cam_center[None, :] - pts, tu)
    cv = np.einsum("nj,nj->n", cam_center[None, :] - pts, tv)
    a = (cu[:, None] + depth * (up * Rtu[0][:, None] + vp * Rtu[1][:, None]
                                + Rtu[2][:, None])) / _PATCH_STEP
    b = (cv[:, None] + depth * (up * Rtv[0][:, None] + vp * Rtv[1][:, None]
                                + Rtv[2][:, None])) / _PATCH_STEP

    ok = (np.abs(denom) > 1e-9) & (depth > 0.1) \
        & (np.abs(a) <= _HALF_EXTENT) & (np.abs(b) <= _HALF_EXTENT) \
        & (win_u >= 0) & (win_u < SCENE_WIDTH) \
        & (win_v >= 0) & (win_v < SCENE_HEIGHT)
    oy, ox = np.nonzero(ok)

    # bilinear texture sample, only at pixels that actually hit a patch
    af = np.clip(a[oy, ox] + _HALF_EXTENT, 0.0, _PATCH - 1.0)
    bf = np.clip(b[oy, ox] + _HALF_EXTENT, 0.0, _PATCH - 1.0)
    ia = np.minimum(af.astype(np.intp), _PATCH - 2)
    ib = np.minimum(bf.astype(np.intp), _PATCH - 2)
    fa = af - ia
    fb = bf - ib
    flat_vals = (tex[oy, ia, ib] * (1 - fa) * (1 - fb)
                 + tex[oy, ia + 1, ib] * fa * (1 - fb)
                 + tex[oy, ia, ib + 1] * (1 - fa) * fb
                 + tex[oy, ia + 1, ib + 1] * fa * fb)

    flat_idx = win_v[oy, ox] * SCENE_WIDTH + win_u[oy, ox]
    flat_depth = depth[oy, ox]
    # painter's order: write far hits first so the nearest survives
    order = np.argsort(-flat_depth, kind="stable")

    img = _render_backdrop(scene, R, cam_center)
    img[flat_idx[order]] = flat_vals[order]
    if scene.sigma > 0.0 or degradation > 0.0:
        noise_sigma = scene.sigma + 6.0 * degradation
        img += rng.normal(0.0, noise_sigma, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Frame.from_array(img.reshape(SCENE_HEIGHT, SCENE_WIDTH),
                            index=index, provenance=provenance)


def _pixel_digest(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<II", pixels.shape[1], pixels.shape[0]))
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()


def _degradation_scale(sigma: float) -> float:
    return min(sigma / 4.0, 1.0)


# weight of the batch-mean degradation in the pose jitter model; a joint
# solve over a set polluted by low-quality views degrades every returned
# pose, and that shared penalty outweighs per-frame isolation
_JITTER_BATCH_WEIGHT = 3.0


# cached (frame, png) pairs per backend; a full pipeline pass over one
# scene touches ~40 distinct poses, so this never evicts in practice
_RENDER_CACHE_CAP = 128


class SyntheticBackend:
    """All three model roles served from one synthetic scene.

    Every rendered frame is remembered by pixel digest, so the backend
    can recover the exact world pose of any image it produced.  With
    sigma 0 and jitter 0 the whole loop is exact: interpolation renders
    the true arc, nvs renders exactly the requested poses, and the pose
    role returns ground truth.

    With sigma > 0, mid-sequence generated frames are rendered with
    scattered patches (quality dips far from the conditioning frames)
    and the pose role, when jitter_deg > 0, perturbs each returned
    rotation by an angle scaled with that frame's isolation and
    degradation.  That reproduces the failure mode the selection stage
    exists to fix, without any model in the loop.
    """

    def __init__(self, scene: SyntheticScene, pose_jitter_deg: float = 0.0,
                 jitter_seed: int = 0):
        if pose_jitter_deg < 0:
            raise ValueError("jitter cannot be negative")
        self.scene = scene
        self.pose_jitter_deg = float(pose_jitter_deg)
        self.jitter_seed = int(jitter_seed)
        self._registry: Dict[str, Tuple[CameraPose, float]] = {}
        self._cache: Dict[int, Tuple[Frame, bytes]] = {}
        self._lock = threading.Lock()

    # -- rendering & registry

    def render(self, pose: CameraPose, degradation: float = 0.0,
               index: int = 0,
               provenance: Provenance = Provenance.SYNTHETIC) -> Frame:
        frame, _ = self._rendered(pose, degradation)
        if frame.index != index or frame.provenance != provenance:
            frame = Frame(frame.width, frame.height, frame.gray,
                          index=index, provenance=provenance)
        return frame

    def render_png(self, pose: CameraPose, degradation: float = 0.0) -> bytes:
        return self._rendered(pose, degradation)[1]

    def _rendered(self, pose: CameraPose,
                  degradation: float) -> Tuple[Frame, bytes]:
        """Render once per (pose, degradation); repeat requests are O(1).

        Rendering is a pure function of the render seed for a fixed
        scene, so the seed doubles as the cache key.  Frames are
        immutable; sharing cached instances is safe.
        """
        key = _render_seed(self.scene.seed, pose, degradation)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        frame = synthetic_render(self.scene, pose, degradation=degradation)
        png = frame_to_png(frame)
        with self._lock:
            # keep the first pose seen for a digest: a re-render of the
            # same image from a round-tripped pose must not nudge what
            # lookup() reports for frames already handed out
            self._registry.setdefault(_pixel_digest(frame.pixels),
                                      (pose, degradation))
            self._cache[key] = (frame, png)
            while len(self._cache) > _RENDER_CACHE_CAP:
                self._cache.pop(next(iter(self._cache)))
        return frame, png

    def lookup(self, image: bytes) -> Tuple[CameraPose, float]:
        digest = _pixel_digest(decode_png_gray(image))
        with self._lock:
            entry = self._registry.get(digest)
        if entry is None:
            raise UnknownFrame("image was not rendered from this scene")
        return entry

    # -- the three roles

    def interpolate(self, request: InterpolateRequest) -> InterpolateResponse:
        start_pose, _ = self.lookup(request.start_image)
        end_pose, _ = self.lookup(request.end_image)
        n = request.frame_count
        scale = _degradation_scale(self.scene.sigma)
        frames: List[bytes] = [request.start_image]
        for i in range(1, n - 1):
            u = i / (n - 1)
            pose = CameraPose(
                slerp(start_pose.rotation, end_pose.rotation, u),
                (1.0 - u) * start_pose.translation + u * end_pose.translation)
            d = _DC_DEGRADATION * math.sin(math.pi * u) * scale
            frames.append(self.render_png(pose, degradation=d))
        frames.append(request.end_image)
        return InterpolateResponse(frames=tuple(frames))

    def nvs(self, request: NvsRequest) -> NvsResponse:
        base_pose, _ = self.lookup(request.relay_images[0])
        n = len(request.trajectory)
        scale = _degradation_scale(self.scene.sigma)
        frames = []
        for t, gauge in enumerate(request.trajectory):
            world = gauge.compose(base_pose)
            u = t / (n - 1) if n > 1 else 0.0
            d = _NVS_DEGRADATION * math.sin(math.pi * u) * scale
            frames.append(self.render_png(world, degradation=d))
        return NvsResponse(frames=tuple(frames))

    def pose(self, request: PoseRequest) -> PoseResponse:
        entries = [self.lookup(img) for img in request.images]
        world = [p for p, _ in entries]
        degradations = [d for _, d in entries]
        base = world[0]
        gauge = [CameraPose.identity()]
        gauge += [w.relative_to(base) for w in world[1:]]

        if self.pose_jitter_deg > 0.0:
            gauge = self._jitter_poses(request, world, gauge, degradations)

        confs = [self._confidence(world[i], gauge[i], base)
                 for i in range(len(gauge))]
        return PoseResponse(poses=tuple(gauge), confidences=tuple(confs))

    # -- jitter model

    def _jitter_poses(self, request, world, gauge, degradations):
        n = len(world)
        mean_d = float(np.mean(degradations))
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<qq", self.scene.seed, self.jitter_seed))
        for img in request.images:
            h.update(hashlib.sha256(img).digest())
        rng = np.random.default_rng(int.from_bytes(h.digest(), "little"))

        out = [gauge[0]]
        for i in range(1, n):
            # a duplicate view adds no constraint, so only genuinely
            # distinct neighbors count toward a frame's isolation
            gaps = [g for j in range(n) if j != i
                    for g in [rotation_geodesic_deg(world[i].rotation,
                                                    world[j].rotation)]
                    if g > 1e-9]
            nearest = min(gaps) if gaps else 0.0
            sigma_i = self.pose_jitter_deg * (
                nearest / 60.0 + degradations[i]
                + _JITTER_BATCH_WEIGHT * mean_d)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = abs(rng.standard_normal()) * sigma_i
            wobble = Rotation.from_axis_angle(axis, angle)
            out.append(CameraPose(wobble * gauge[i].rotation,
                                  gauge[i].translation))
        return out

    def _confidence(self, true_world: CameraPose, gauge: CameraPose,
                    base: CameraPose) -> float:
        est_world = gauge.compose(base)
        pts = self.scene.points
        K = self.scene.K

        def project(pose):
            cam = pts @ pose.rotation.as_matrix().T + pose.translation
            return (K[0, 0] * cam[:, 0] / cam[:, 2] + K[0, 2],
                    K[1, 1] * cam[:, 1] / cam[:, 2] + K[1, 2])

        ut, vt = project(true_world)
        ue, ve = project(est_world)
        reproj = float(np.mean(np.hypot(ut - ue, vt - ve)))
        return math.exp(-reproj)


def synthetic_backend(scene: SyntheticScene, pose_jitter_deg: float = 0.0,
                      jitter_seed: int = 0) -> SyntheticBackend:
    return SyntheticBackend(scene, pose_jitter_deg=pose_jitter_deg,
                            jitter_seed=jitter_seed)


# -------------------------------------------------------------- scene banks

@dataclass(frozen=True)
class SceneSpec:
    """Recipe for rebuilding one synthetic scene deterministically."""

    seed: int = 0
    yaw_start_deg: float = 0.0
    yaw_end_deg: float = 60.0
    n_points: int = 300
    sigma: float = 0.0
    trajectory_len: int = 25

    def build(self) -> SyntheticScene:
        return make_scene(seed=self.seed, yaw_start_deg=self.yaw_start_deg,
                          yaw_end_deg=self.yaw_end_deg,
                          n_points=self.n_points, sigma=self.sigma,
                          trajectory_len=self.trajectory_len)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "yaw_start_deg": self.yaw_start_deg,
                "yaw_end_deg": self.yaw_end_deg, "n_points": self.n_points,
                "sigma": self.sigma, "trajectory_len": self.trajectory_len}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(seed=int(d.get("seed", 0)),
                   yaw_start_deg=float(d.get("yaw_start_deg", 0.0)),
                   yaw_end_deg=float(d.get("yaw_end_deg", 60.0)),
                   n_points=int(d.get("n_points", 300)),
                   sigma=float(d.get("sigma", 0.0)),
                   trajectory_len=int(d.get("trajectory_len", 25)))


class SceneBank:
    """Several synthetic scenes behind one backend interface.

    A request is routed to the scene that rendered its first image; all
    images within one request must come from the same scene, which holds
    for any batch whose pairs each live in their own scene.
    """

    def __init__(self, backends: Sequence[SyntheticBackend]):
        if not backends:
            raise ValueError("a scene bank needs at least one scene")
        self.children = list(backends)

    @classmethod
    def from_specs(cls, specs: Sequence[SceneSpec],
                   pose_jitter_deg: float = 0.0, jitter_seed: int = 0,
                   register_endpoints: bool = True) -> "SceneBank":
        children = [SyntheticBackend(spec.build(),
                                     pose_jitter_deg=pose_jitter_deg,
                                     jitter_seed=jitter_seed)
                    for spec in specs]
        bank = cls(children)
        if register_endpoints:
            for child in children:
                child.render(child.scene.trajectory[0])
                child.render(child.scene.trajectory[-1])
        return bank

    @classmethod
    def from_spec_file(cls, path, pose_jitter_deg: Optional[float] = None,
                       jitter_seed: int = 0,
                       register_endpoints: bool = True) -> "SceneBank":
        payload = json.loads(Path(path).read_text())
        specs = [SceneSpec.from_dict(d) for d in payload["scenes"]]
        jitter = payload.get("pose_jitter_deg", 0.0) \
            if pose_jitter_deg is None else pose_jitter_deg
        return cls.from_specs(specs, pose_jitter_deg=float(jitter),
                              jitter_seed=jitter_seed,
                              register_endpoints=register_endpoints)

    def _owner(self, image: bytes) -> SyntheticBackend:
        digest = _pixel_digest(decode_png_gray(image))
        for child in self.children:
            with child._lock:
                known = digest in child._registry
            if known:
                return child
        raise UnknownFrame("image was not rendered by any scene in the bank")

    def interpolate(self, request: InterpolateRequest) -> InterpolateResponse:
        return self._owner(request.start_image).interpolate(request)

    def nvs(self, request: NvsRequest) -> NvsResponse:
        return self._owner(request.relay_images[0]).nvs(request)

    def pose(self, request: PoseRequest) -> PoseResponse:
        return self._owner(request.images[0]).pose(request)


def write_bank_spec(path, specs: Sequence[SceneSpec],
                    pose_jitter_deg: float = 0.0) -> None:
    payload = {"pose_jitter_deg": pose_jitter_deg,
               "scenes": [s.to_dict() for s in specs]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def make_synthetic_dataset(out_dir, n_scenes: int = 20, seed: int = 0,
                           yaw_lo: float = 50.0, yaw_hi: float = 90.0,
                           sigma: float = 0.0, pose_jitter_deg: float = 0.0,
                           jitter_seed: int = 0):
    """Render endpoint pairs for n scenes and describe them as records.

    Each scene gets its own seed and a relative rotation drawn uniformly
    from [yaw_lo, yaw_hi).  Returns (bank, records, specs); the PNG pair
    per scene is written under out_dir, and records are manifest-shaped
    dicts with full ground truth.  A bank spec JSON is saved alongside so
    a later process can rebuild the serving backend.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gaps = yaw_lo + (yaw_hi - yaw_lo) * rng.random(n_scenes)
    specs = [SceneSpec(seed=seed * 1000 + i, yaw_end_deg=float(gaps[i]),
                       sigma=sigma) for i in range(n_scenes)]
    bank = SceneBank.from_specs(specs, pose_jitter_deg=pose_jitter_deg,
                                jitter_seed=jitter_seed,
                                register_endpoints=False)

    records = []
    for i, child in enumerate(bank.children):
        scene = child.scene
        start_pose = scene.trajectory[0]
        end_pose = scene.trajectory[-1]
        start_png = child.render_png(start_pose)
        end_png = child.render_png(end_pose)
        start_path = out / f"scene{i:03d}_start.png"
        end_path = out / f"scene{i:03d}_end.png"
        start_path.write_bytes(start_png)
        end_path.write_bytes(end_png)
        records.append({
            "id": f"scene{i:03d}",
            "start_path": str(start_path),
            "end_path": str(end_path),
            "gt_rotation_quat_start":
                [float(v) for v in start_pose.rotation.as_quat()],
            "gt_rotation_quat_end":
                [float(v) for v in end_pose.rotation.as_quat()],
            "gt_translation_start": [float(v) for v in start_pose.translation],
            "gt_translation_end": [float(v) for v in end_pose.translation],
            "dataset_tag": "synthetic-orbit",
            "yaw_deg": float(gaps[i]),
        })
    write_bank_spec(out / "bank.json", specs, pose_jitter_deg=pose_jitter_deg)
    return bank, records, specs


# ------------------------------------------------------------- mock server

class _BackendHandler(BaseHTTPRequestHandler):
    backend = None  # set by make_server

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status: int, payload: dict):
        body = dumps_canonical(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/health":
            self._reply(200, {"status": "ok"})
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        role = self.path.rsplit("/", 1)[-1]
        if self.path != f"/v1/{role}" or role not in _ROLES:
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        req_type, _ = _ROLES[role]
        try:
            request = req_type.from_wire(loads_wire(body, f"{role} request"))
            response = getattr(self.backend, role)(request)
        except (ProtocolViolation, ValueError) as exc:
            self._reply(400, {"error": str(exc)})
            return
        except UnknownFrame as exc:
            self._reply(422, {"error": str(exc)})
            return
        except InsufficientVisibility as exc:
            self._reply(422, {"error": str(exc)})
            return
        self._reply(200, response.to_wire())


def make_server(backend, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    """HTTP server exposing a backend object on /v1/{role} plus /v1/health."""
    handler = type("BoundHandler", (_BackendHandler,), {"backend": backend})
    return ThreadingHTTPServer((host, port), handler)
