"""Schema layer for the three-role wire protocol.

The protocol is canonical JSON (insertion-ordered keys, no whitespace,
UTF-8) with images as base64 PNG strings and poses as scalar-first unit
quaternions plus a translation triple. This module knows nothing about
inference; it only turns request bytes into checked Python values and
response values back into canonical bytes.
"""

import base64
import binascii
import json
import math

ROLES = ("interpolate", "nvs", "pose")


class SchemaError(ValueError):
    """Request violates the wire schema; maps to HTTP 400."""


def dumps_canonical(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def parse_body(data: bytes, what: str) -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{what} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{what} must be a JSON object")
    return obj


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text, what: str) -> bytes:
    if not isinstance(text, str):
        raise SchemaError(f"{what} must be a base64 string")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise SchemaError(f"{what} is not valid base64: {exc}") from None


def _need(obj: dict, key: str, what: str):
    if key not in obj:
        raise SchemaError(f"{what} is missing field '{key}'")
    return obj[key]


def _need_list(obj: dict, key: str, what: str) -> list:
    val = _need(obj, key, what)
    if not isinstance(val, list):
        raise SchemaError(f"{what} field '{key}' must be a list")
    return val


def _floats(vals, n: int, what: str) -> list:
    if not isinstance(vals, list) or len(vals) != n:
        raise SchemaError(f"{what} must be a list of {n} numbers")
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{what} must contain only numbers")
        out.append(float(v))
    return out


def check_pose(obj, what: str) -> dict:
    """Validate one wire pose; returns {'rotation': [...], 'translation': [...]}."""
    if not isinstance(obj, dict):
        raise SchemaError(f"{what} must be a JSON object")
    quat = _floats(_need(obj, "rotation", what), 4, f"{what} rotation")
    trans = _floats(_need(obj, "translation", what), 3, f"{what} translation")
    if abs(math.sqrt(sum(q * q for q in quat)) - 1.0) > 1e-6:
        raise SchemaError(f"{what} rotation quaternion is not unit length")
    return {"rotation": quat, "translation": trans}


def parse_interpolate(obj: dict):
    """-> (start_png, end_png, frame_count, prompt)."""
    what = "interpolate request"
    count = _need(obj, "frame_count", what)
    if isinstance(count, bool) or not isinstance(count, int) or count < 2:
        raise SchemaError("frame_count must be an integer >= 2")
    prompt = obj.get("prompt")
    if prompt is not None and not isinstance(prompt, str):
        raise SchemaError("prompt must be a string or null")
    start = unb64(_need(obj, "start_image", what), "start_image")
    end = unb64(_need(obj, "end_image", what), "end_image")
    if not start or not end:
        raise SchemaError("input images cannot be empty")
    return start, end, count, prompt


def parse_nvs(obj: dict):
    """-> (relay_images, relay_poses, trajectory)."""
    what = "nvs request"
    images = [unb64(f, f"relay_images[{i}]") for i, f in
              enumerate(_need_list(obj, "relay_images", what))]
    poses = [check_pose(p, f"relay_poses[{i}]") for i, p in
             enumerate(_need_list(obj, "relay_poses", what))]
    trajectory = [check_pose(p, f"trajectory[{i}]") for i, p in
                  enumerate(_need_list(obj, "trajectory", what))]
    if len(images) < 2:
        raise SchemaError("need at least two relay frames")
    if len(images) != len(poses):
        raise SchemaError("relay images and poses must align")
    if len(trajectory) < 2:
        raise SchemaError("trajectory must hold at least two poses")
    return images, poses, trajectory


def parse_pose(obj: dict) -> list:
    """-> list of image byte strings."""
    what = "pose request"
    images = _need_list(obj, "images", what)
    if len(images) < 2:
        raise SchemaError("pose request must hold at least two images")
    return [unb64(f, f"images[{i}]") for i, f in enumerate(images)]


def frames_wire(frames) -> dict:
    return {"frames": [b64(f) for f in frames]}


def poses_wire(poses, confidences) -> dict:
    return {"poses": list(poses), "confidences": [float(c) for c in confidences]}
