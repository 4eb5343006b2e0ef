"""Rotation and camera-pose algebra.

Conventions used throughout the package:

* Quaternions are stored scalar-first ``(w, x, y, z)`` and kept unit-norm.
  ``q`` and ``-q`` describe the same rotation; every distance and
  interpolation here is invariant under a sign flip of either argument.
* Camera poses are world-to-camera: ``x_cam = R @ x_world + t``.
* Yaw is extracted in the Z-Y-X intrinsic Euler convention.
* Translation comparisons are direction-only (monocular scale ambiguity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class ZeroTranslation(ValueError):
    """Translation too small to carry a direction (degenerate pair)."""


class DomainError(ValueError):
    """Interpolation parameter outside [0, 1]."""


class MissingEndpoint(ValueError):
    """Keypose list does not cover index 0 or index T."""


class DuplicateIndex(ValueError):
    """Two keyposes share the same frame index."""


class Rotation:
    """A rotation in SO(3), backed by a unit quaternion.

    The constructor normalizes, so ``Rotation(2, 0, 0, 0)`` is the
    identity.  Arithmetic never mutates; every operation returns a new
    instance, which makes the type safe to share across threads.
    """

    __slots__ = ("_q",)

    def __init__(self, w: float, x: float, y: float, z: float):
        q = np.array([w, x, y, z], dtype=np.float64)
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero quaternion does not define a rotation")
        q /= n
        q.flags.writeable = False
        self._q = q

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_quat(cls, q: Sequence[float]) -> "Rotation":
        """Build from a (w, x, y, z) sequence."""
        w, x, y, z = (float(v) for v in q)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle_deg: float) -> "Rotation":
        """Rotation of ``angle_deg`` degrees about ``axis`` (any nonzero length)."""
        a = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        half = math.radians(angle_deg) / 2.0
        s = math.sin(half) / n
        return cls(math.cos(half), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Rotation":
        """Convert a 3x3 rotation matrix.

        Uses Shepperd's method: branch on the largest of the four squared
        quaternion components so the division below is always well
        conditioned, including at 180-degree rotations where the naive
        trace formula loses all precision.
        """
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"expected 3x3 matrix, got {m.shape}")
        t = m[0, 0] + m[1, 1] + m[2, 2]
        choices = [t, m[0, 0], m[1, 1], m[2, 2]]
        i = int(np.argmax(choices))
        if i == 0:
            r = math.sqrt(1.0 + t)
            s = 0.5 / r
            return cls(0.5 * r, (m[2, 1] - m[1, 2]) * s,
                       (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s)
        if i == 1:
            r = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            s = 0.5 / r
            return cls((m[2, 1] - m[1, 2]) * s, 0.5 * r,
                       (m[0, 1] + m[1, 0]) * s, (m[0, 2] + m[2, 0]) * s)
        if i == 2:
            r = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            s = 0.5 / r
            return cls((m[0, 2] - m[2, 0]) * s, (m[0, 1] + m[1, 0]) * s,
                       0.5 * r, (m[1, 2] + m[2, 1]) * s)
        r = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
        s = 0.5 / r
        return cls((m[1, 0] - m[0, 1]) * s, (m[0, 2] + m[2, 0]) * s,
                   (m[1, 2] + m[2, 1]) * s, 0.5 * r)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Uniform random rotation (normalized 4-dimensional Gaussian)."""
        w, x, y, z = rng.standard_normal(4)
        return cls(w, x, y, z)

    def as_quat(self) -> np.ndarray:
        """Unit quaternion as a read-only (w, x, y, z) array."""
        return self._q

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self._q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation(w, -x, -y, -z)

    def __mul__(self, other: "Rotation") -> "Rotation":
        """Composition: ``(a * b).as_matrix() == a.as_matrix() @ b.as_matrix()``."""
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        return Rotation(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate one vector (3,) or a stack (N, 3)."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.as_matrix().T

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"Rotation(w={w:.6f}, x={x:.6f}, y={y:.6f}, z={z:.6f})"


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera pose: ``x_cam = rotation @ x_world + translation``."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(Rotation.identity(), np.zeros(3))

    def compose(self, base: "CameraPose") -> "CameraPose":
        """Apply ``base`` first, then this pose: world -> base frame -> here."""
        r = self.rotation * base.rotation
        t = self.rotation.apply(base.translation) + self.translation
        return CameraPose(r, t)

    def relative_to(self, base: "CameraPose") -> "CameraPose":
        """Pose of this camera expressed in ``base``'s camera frame."""
        r = self.rotation * base.rotation.inverse()
        t = self.translation - r.apply(base.translation)
        return CameraPose(r, t)

    def inverse(self) -> "CameraPose":
        rinv = self.rotation.inverse()
        return CameraPose(rinv, -rinv.apply(self.translation))

    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R.T @ t``."""
        return -self.rotation.inverse().apply(self.translation)


def relative_pose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Relative pose taking camera-``a`` coordinates to camera-``b`` coordinates.

    ``relative_pose(a, b).compose(a)`` recovers ``b``;
    ``relative_pose(p, p)`` is the identity pose.
    """
    return b.relative_to(a)


@dataclass(frozen=True)
class Trajectory:
    """Dense, ordered camera path; index t runs 0..T inclusive."""

    poses: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 2:
            raise ValueError("a trajectory needs at least two poses")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, t: int) -> CameraPose:
        return self.poses[t]

    def __iter__(self) -> Iterator[CameraPose]:
        return iter(self.poses)


def rotation_geodesic_deg(a: Rotation, b: Rotation) -> float:
    """Geodesic distance on SO(3) in degrees, in [0, 180].

    Equal to ``2*acos(|<a, b>|)`` but evaluated through atan2 of the
    relative quaternion so precision holds at both ends of the range.
    """
    r = (a.inverse() * b).as_quat()
    return math.degrees(2.0 * math.atan2(np.linalg.norm(r[1:]), abs(r[0])))


def translation_angular_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two translation directions in degrees, in [0, 180].

    Scale-invariant.  Raises ZeroTranslation when either vector has norm
    below 1e-12: a near-zero baseline carries no direction and the caller
    must mark the sample degenerate rather than score it.
    """
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroTranslation("translation norm below 1e-12; direction undefined")
    u = a / na
    v = b / nb
    return math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v))))


def slerp(a: Rotation, b: Rotation, u: float) -> Rotation:
    """Spherical linear interpolation from ``a`` (u=0) to ``b`` (u=1).

    Follows the shorter arc: the sign of ``b`` is flipped when the
    quaternion dot product is negative.  Nearly parallel inputs
    (dot > 1 - 1e-8) fall back to normalized linear interpolation, where
    the spherical weights would divide by ~0.

    Raises:
        DomainError: if ``u`` lies outside [0, 1].
    """
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"interpolation parameter {u!r} outside [0, 1]")
    qa = a.as_quat()
    qb = b.as_quat().copy()
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-8:
        q = (1.0 - u) * qa + u * qb
        return Rotation(*q)
    omega = math.acos(min(dot, 1.0))
    s = math.sin(omega)
    q = (math.sin((1.0 - u) * omega) / s) * qa + (math.sin(u * omega) / s) * qb
    return Rotation(*q)


def interpolate_trajectory(keyposes: Iterable, T: int) -> Trajectory:
    """Fill a dense T+1 pose trajectory from sparse keyposes.

    Args:
        keyposes: iterable of ``(index, CameraPose)`` with distinct indices
            covering 0 and T.
        T: last frame index; the result has T+1 poses.

    Between consecutive keyposes the rotation is slerped and the
    translation lerped; at a key index the key pose object is returned
    untouched, so endpoints compare bitwise.

    Raises:
        MissingEndpoint: no keypose at 0 or at T.
        DuplicateIndex: two keyposes share an index.
    """
    if T < 1:
        raise ValueError(f"frame count T must be >= 1, got {T}")
    keys = sorted(keyposes, key=lambda kp: kp[0])
    indices = [int(idx) for idx, _ in keys]
    for i1, i2 in zip(indices, indices[1:]):
        if i1 == i2:
            raise DuplicateIndex(f"keypose index {i1} appears twice")
    if any(idx < 0 or idx > T for idx in indices):
        raise ValueError(f"keypose indices {indices} outside [0, {T}]")
    if not indices or indices[0] != 0 or indices[-1] != T:
        raise MissingEndpoint(f"keyposes must include 0 and {T}, got {indices}")

    poses = []
    seg = 0
    for t in range(T + 1):
        while indices[seg + 1] < t:
            seg += 1
        t1, p1 = keys[seg]
        t2, p2 = keys[seg + 1]
        if t == t1:
            poses.append(p1)
            continue
        if t == t2:
            poses.append(p2)
            continue
        u = (t - t1) / (t2 - t1)
        r = slerp(p1.rotation, p2.rotation, u)
        trans = (1.0 - u) * p1.translation + u * p2.translation
        poses.append(CameraPose(r, trans))
    return Trajectory(tuple(poses))


def relative_yaw_deg(a: Rotation, b: Rotation) -> float:
    """Yaw magnitude of the relative rotation ``b * a.inverse()``, in [0, 180].

    Z-Y-X intrinsic convention: yaw = atan2(R[1,0], R[0,0]).  At gimbal
    lock (pitch = +-90 degrees) this is the standard atan2 branch value.
    """
    m = (b * a.inverse()).as_matrix()
    return abs(math.degrees(math.atan2(m[1, 0], m[0, 0])))
