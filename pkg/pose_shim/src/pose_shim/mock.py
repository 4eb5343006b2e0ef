"""Deterministic placeholder inference for protocol testing.

Every answer is a pure function of the request: interpolation blends
pixels linearly and echoes the endpoints byte-for-byte, view synthesis
resamples the relay frames along the trajectory without touching their
bytes, and poses follow the identity-plus-fixed-offset rule. Consumers
freeze these responses as golden files, so the math here must never
drift.
"""

import io
import math
import struct
import zlib

import numpy as np
from PIL import Image

# per-frame offset of the scripted pose answer: frame i sits 4*i degrees
# around the vertical axis with a small sideways-and-forward drift
POSE_STEP_DEG = 4.0
POSE_STEP_TRANSLATION = (0.05, 0.0, 0.01)


def encode_png_gray(pixels: np.ndarray) -> bytes:
    """Canonical grayscale PNG: filter 0 rows, one zlib stream at level 6.

    The protocol's byte-equality guarantees rest on identical pixels
    producing identical files, so the encoder is fixed rather than
    delegated to an image library whose defaults may move.
    """
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    if px.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {px.shape}")
    h, w = px.shape

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data)))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = np.zeros((h, w + 1), dtype=np.uint8)
    raw[:, 1:] = px
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw.tobytes(), 6))
            + chunk(b"IEND", b""))


def decode_png_gray(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ValueError(f"not a decodable image: {exc}") from None
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


class MockEngine:
    """Scripted answers for all three roles."""

    def __init__(self, pose_step_deg: float = POSE_STEP_DEG,
                 pose_step_translation=POSE_STEP_TRANSLATION):
        self.pose_step_deg = float(pose_step_deg)
        self.pose_step_translation = tuple(float(v)
                                           for v in pose_step_translation)

    def interpolate(self, start: bytes, end: bytes, frame_count: int,
                    prompt) -> list:
        a = decode_png_gray(start).astype(np.float64)
        b = decode_png_gray(end).astype(np.float64)
        if a.shape != b.shape:
            raise ValueError(f"input shapes differ: {a.shape} vs {b.shape}")
        frames = [start]
        for i in range(1, frame_count - 1):
            u = i / (frame_count - 1)
            mid = np.rint(a * (1.0 - u) + b * u).astype(np.uint8)
            frames.append(encode_png_gray(mid))
        frames.append(end)
        return frames

    def nvs(self, relay_images: list, relay_poses: list,
            trajectory: list) -> list:
        n_relay = len(relay_images)
        n_out = len(trajectory)
        out = []
        for t in range(n_out):
            src = round(t * (n_relay - 1) / (n_out - 1)) if n_out > 1 else 0
            out.append(relay_images[src])
        return out

    def pose(self, images: list):
        """-> (wire pose dicts, confidences), frame 0 pinned to identity."""
        poses = [{"rotation": [1.0, 0.0, 0.0, 0.0],
                  "translation": [0.0, 0.0, 0.0]}]
        sx, sy, sz = self.pose_step_translation
        for i in range(1, len(images)):
            half = math.radians(self.pose_step_deg * i) / 2.0
            # quaternions travel unit-normalized on the wire; the division
            # moves last-ulp bits, so it is part of the frozen contract
            q = np.array([math.cos(half), 0.0, math.sin(half), 0.0])
            q /= np.linalg.norm(q)
            poses.append({"rotation": [float(v) for v in q],
                          "translation": [sx * i, sy * i, sz * i]})
        return poses, [1.0 for _ in images]
