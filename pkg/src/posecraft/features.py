"""Corner detection, binary description, and descriptor matching.

The detector is FAST-9 over a small scale pyramid with Harris ranking;
descriptors are 256-bit steered binary intensity comparisons from the
fixed pattern in ``_brief_pattern``.  Everything here is deterministic:
the same frame always yields a bit-identical feature set, which the
frame selector relies on when it compares inlier counts across frames.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.ndimage
from PIL import Image

from ._brief_pattern import PATCH_HALF, PATTERN

PYRAMID_LEVELS = 4
PYRAMID_FACTOR = 1.2
FAST_THRESHOLD = 20
FAST_THRESHOLD_FLOOR = 5
DEFAULT_BUDGET = 2000
DEFAULT_MAX_DISTANCE = 64

# margin keeps the orientation patch and the unrotated sampling pattern
# inside the image; rotated pattern points that poke past it are clamped
_BORDER = PATCH_HALF

# 16-point Bresenham circle of radius 3, clockwise from 12 o'clock
_CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
], dtype=np.int64)


def _build_arc9_lut() -> np.ndarray:
    """For every 16-bit ring mask: does it contain 9 contiguous set bits
    (circularly)?  Lets the FAST test run as one table lookup per pixel."""
    codes = np.arange(65536, dtype=np.uint16)
    bits = np.unpackbits(codes.view(np.uint8).reshape(-1, 2)[:, ::-1], axis=1,
                         bitorder="big").astype(bool)
    dbl = np.concatenate([bits, bits[:, :8]], axis=1)
    hit = np.zeros(65536, dtype=bool)
    for s in range(16):
        hit |= dbl[:, s:s + 9].all(axis=1)
    return hit


_ARC9 = _build_arc9_lut()
_RING_WEIGHTS = (1 << np.arange(16, dtype=np.uint32))[:, None]
# compass points at 12/3/6/9 o'clock; any 9-contiguous arc covers >= 2
_COMPASS = tuple(tuple(p) for p in _CIRCLE[[0, 4, 8, 12]])


class EmptyFrame(ValueError):
    """No corner cleared the detector threshold (untextured input)."""


class TooSmall(ValueError):
    """Input image below the 32x32 minimum."""


class Provenance(enum.Enum):
    INPUT = "input"
    DC_INTERPOLATED = "dc_interpolated"
    VC_REFINED = "vc_refined"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Frame:
    """One 8-bit grayscale raster with its position in the sequence."""

    width: int
    height: int
    gray: np.ndarray
    index: int = 0
    provenance: Provenance = Provenance.INPUT

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.gray, dtype=np.uint8).reshape(-1))
        if self.width < 32 or self.height < 32:
            raise ValueError(f"frame must be at least 32x32, got {self.width}x{self.height}")
        if g.size != self.width * self.height:
            raise ValueError(
                f"buffer length {g.size} != width*height {self.width * self.height}")
        g.flags.writeable = False
        object.__setattr__(self, "gray", g)

    @property
    def pixels(self) -> np.ndarray:
        """Read-only (height, width) view of the intensity buffer."""
        return self.gray.reshape(self.height, self.width)

    @classmethod
    def from_array(cls, a: np.ndarray, index: int = 0,
                   provenance: Provenance = Provenance.INPUT) -> "Frame":
        a = np.asarray(a, dtype=np.uint8)
        if a.ndim != 2:
            raise ValueError(f"expected a 2D grayscale array, got shape {a.shape}")
        return cls(a.shape[1], a.shape[0], a.reshape(-1), index, provenance)


@dataclass(frozen=True)
class Keypoint:
    """Corner location in full-resolution pixel coordinates."""

    x: float
    y: float
    response: float
    angle: float  # radians
    octave: int


@dataclass(frozen=True)
class FeatureSet:
    """Keypoints plus packed 256-bit descriptors, aligned one to one."""

    keypoints: Tuple[Keypoint, ...]
    descriptors: np.ndarray  # (N, 32) uint8, 256 bits per row

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        d = np.ascontiguousarray(np.asarray(self.descriptors, dtype=np.uint8))
        if d.shape != (len(self.keypoints), 32):
            raise ValueError(
                f"descriptor array {d.shape} does not align with "
                f"{len(self.keypoints)} keypoints")
        d.flags.writeable = False
        object.__setattr__(self, "descriptors", d)

    def __len__(self) -> int:
        return len(self.keypoints)

    def points(self) -> np.ndarray:
        """Keypoint coordinates as an (N, 2) float array."""
        return np.array([(k.x, k.y) for k in self.keypoints], dtype=np.float64).reshape(-1, 2)


@dataclass
class MatchResult:
    """Mutual-best correspondences; the robust stage fills the inlier mask."""

    pairs: List[Tuple[int, int, int]]  # (index in A, index in B, Hamming distance)
    inlier_mask: np.ndarray = field(default=None)
    inlier_count: int = 0

    def __post_init__(self):
        if self.inlier_mask is None:
            self.inlier_mask = np.zeros(len(self.pairs), dtype=bool)
        self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool)
        if self.inlier_mask.shape != (len(self.pairs),):
            raise ValueError("inlier mask length does not match pair count")
        if self.inlier_count != int(self.inlier_mask.sum()):
            raise ValueError("inlier_count disagrees with inlier_mask")

    def __len__(self) -> int:
        return len(self.pairs)


def _pyramid(img: np.ndarray) -> List[Tuple[np.ndarray, float]]:
    """(image, scale) per level; scale maps level coords back to level 0."""
    h, w = img.shape
    levels = [(img, 1.0)]
    pil = Image.fromarray(img)
    for i in range(1, PYRAMID_LEVELS):
        s = PYRAMID_FACTOR ** i
        lw, lh = max(32, round(w / s)), max(32, round(h / s))
        if lw < 2 * _BORDER + 2 or lh < 2 * _BORDER + 2:
            break
        small = np.asarray(pil.resize((lw, lh), Image.BILINEAR))
        levels.append((small, s))
    return levels


def _fast_corners(img: np.ndarray, threshold: int):
    """FAST-9 corner positions and SAD scores for one pyramid level.

    A pixel is a corner when at least 9 contiguous circle pixels are all
    brighter than center+threshold or all darker than center-threshold;
    the contiguity test is a 64K lookup on the packed ring mask.
    Returns (ys, xs, scores) for corners surviving a 3x3 score NMS.
    """
    h, w = img.shape
    i16 = img.astype(np.int16)
    c = i16[3:h - 3, 3:w - 3]
    hi = c + threshold
    lo = c - threshold

    # cheap necessary test first: count bright/dark compass pixels and
    # only run the 16-point ring on pixels with at least 2 of either
    nb = np.zeros(c.shape, dtype=np.uint8)
    nd = np.zeros(c.shape, dtype=np.uint8)
    for dx, dy in _COMPASS:
        p = i16[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
        nb += p > hi
        nd += p < lo
    cand_y, cand_x = np.nonzero((nb >= 2) | (nd >= 2))
    if cand_y.size == 0:
        empty = np.array([], dtype=np.int64)
        return empty, empty, np.array([])

    cc = c[cand_y, cand_x]
    ring = np.stack([i16[cand_y + 3 + dy, cand_x + 3 + dx]
                     for dx, dy in _CIRCLE])
    code_b = ((ring > cc + threshold).astype(np.uint32) * _RING_WEIGHTS).sum(axis=0)
    code_d = ((ring < cc - threshold).astype(np.uint32) * _RING_WEIGHTS).sum(axis=0)
    corner = _ARC9[code_b] | _ARC9[code_d]
    if not corner.any():
        empty = np.array([], dtype=np.int64)
        return empty, empty, np.array([])

    cys = cand_y[corner]
    cxs = cand_x[corner]
    diff = np.abs(ring[:, corner] - cc[corner])
    score = np.where(diff > threshold, diff, 0).sum(axis=0)

    # 3x3 non-maximum suppression on the score map
    full = np.zeros((h, w), dtype=np.int64)
    full[cys + 3, cxs + 3] = score
    local_max = scipy.ndimage.maximum_filter(full, size=3)
    keep = (full == local_max) & (full > 0)
    keep[:_BORDER] = keep[-_BORDER:] = False
    keep[:, :_BORDER] = keep[:, -_BORDER:] = False
    ys, xs = np.nonzero(keep)
    return ys, xs, full[ys, xs]


def _harris_response(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Harris corner measure at the given pixels (block 7, k = 0.04)."""
    f = img.astype(np.float64)
    ix = scipy.ndimage.sobel(f, axis=1, mode="nearest")
    iy = scipy.ndimage.sobel(f, axis=0, mode="nearest")
    kw = {"size": 7, "mode": "nearest"}
    sxx = scipy.ndimage.uniform_filter(ix * ix, **kw)
    syy = scipy.ndimage.uniform_filter(iy * iy, **kw)
    sxy = scipy.ndimage.uniform_filter(ix * iy, **kw)
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    r = det - 0.04 * tr * tr
    return r[ys, xs]


_ORIENT_DY, _ORIENT_DX = np.mgrid[-PATCH_HALF:PATCH_HALF + 1,
                                  -PATCH_HALF:PATCH_HALF + 1]
_ORIENT_MASK = (_ORIENT_DX ** 2 + _ORIENT_DY ** 2) <= PATCH_HALF ** 2
_CENTROID_X = (_ORIENT_DX * _ORIENT_MASK).astype(np.float64)
_CENTROID_Y = (_ORIENT_DY * _ORIENT_MASK).astype(np.float64)


def _orientations(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Intensity-centroid angle per keypoint, radians."""
    patches = img[ys[:, None, None] + _ORIENT_DY[None],
                  xs[:, None, None] + _ORIENT_DX[None]].astype(np.float64)
    m10 = (patches * _CENTROID_X[None]).sum(axis=(1, 2))
    m01 = (patches * _CENTROID_Y[None]).sum(axis=(1, 2))
    return np.arctan2(m01, m10)


def _describe(img: np.ndarray, ys: np.ndarray, xs: np.ndarray,
              angles: np.ndarray) -> np.ndarray:
    """Steered binary descriptors, packed to (N, 32) uint8."""
    h, w = img.shape
    cos = np.cos(angles).astype(np.float32)[:, None]
    sin = np.sin(angles).astype(np.float32)[:, None]
    # both endpoints of all 256 comparisons in one gather: columns 0:256
    # are the first points, 256:512 the second
    px = np.concatenate([PATTERN[:, 0], PATTERN[:, 2]]).astype(np.float32)[None, :]
    py = np.concatenate([PATTERN[:, 1], PATTERN[:, 3]]).astype(np.float32)[None, :]
    sx = np.rint(xs[:, None].astype(np.float32) + px * cos - py * sin).astype(np.int32)
    sy = np.rint(ys[:, None].astype(np.float32) + px * sin + py * cos).astype(np.int32)
    np.clip(sx, 0, w - 1, out=sx)
    np.clip(sy, 0, h - 1, out=sy)
    vals = img.ravel()[sy.astype(np.int64) * w + sx]
    bits = vals[:, :256] < vals[:, 256:]
    return np.packbits(bits, axis=1)


def detect_and_describe(frame: Frame, budget: int = DEFAULT_BUDGET,
                        fast_threshold: int = FAST_THRESHOLD) -> FeatureSet:
    """Detect corners across the pyramid and describe the strongest ones.

    Corners come from FAST-9 at each of the 4 pyramid levels (scale step
    1.2).  If the whole pyramid yields fewer than budget/4 corners the
    threshold is halved, down to a floor of 5, so low-contrast synthetic
    frames still produce features.  Survivors are ranked by Harris
    response and the top ``budget`` are kept.

    Raises:
        EmptyFrame: no corner at any level even at the floor threshold.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    img = frame.pixels
    levels = _pyramid(img)

    threshold = fast_threshold
    per_level = []
    while True:
        per_level = []
        total = 0
        for li, (lvl, scale) in enumerate(levels):
            ys, xs, scores = _fast_corners(lvl, threshold)
            per_level.append((li, lvl, scale, ys, xs))
            total += len(ys)
        if total >= max(1, budget // 4) or threshold <= FAST_THRESHOLD_FLOOR:
            break
        threshold = max(FAST_THRESHOLD_FLOOR, threshold // 2)
    if sum(len(ys) for _, _, _, ys, _ in per_level) == 0:
        raise EmptyFrame("no corner exceeded the detector threshold")

    # rank everything by Harris response before paying for orientation and
    # description; ties broken by (octave, y, x) so the budget cut is
    # deterministic even when responses repeat on synthetic textures
    candidates = []
    for li, lvl, scale, ys, xs in per_level:
        if len(ys) == 0:
            continue
        harris = _harris_response(lvl, ys, xs)
        candidates.extend(
            (-float(r), li, int(y), int(x)) for r, y, x in zip(harris, ys, xs))
    candidates.sort()
    candidates = candidates[:budget]

    kps: List[Keypoint] = []
    descs: List[np.ndarray] = []
    for li, lvl, scale, _, _ in per_level:
        sel = [(y, x, -negr) for negr, lj, y, x in candidates if lj == li]
        if not sel:
            continue
        ys = np.array([s[0] for s in sel], dtype=np.int64)
        xs = np.array([s[1] for s in sel], dtype=np.int64)
        angles = _orientations(lvl, ys, xs)
        descs.append(_describe(lvl, ys, xs, angles))
        for (y, x, resp), ang in zip(sel, angles):
            kps.append(Keypoint(x=float(x) * scale, y=float(y) * scale,
                                response=float(resp), angle=float(ang), octave=li))
    return FeatureSet(tuple(kps), np.concatenate(descs, axis=0))


def _unpack(d: np.ndarray) -> np.ndarray:
    return np.unpackbits(d, axis=1).astype(np.float32)


def _distance_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(Na, Nb) Hamming distances as float32; values are exact integers.

    popcount(x ^ y) = popcount(x) + popcount(y) - 2 * dot(x, y) over the
    unpacked bits, so one float32 matrix product covers the whole table.
    Far faster than XOR+popcount per pair and exact (the counts are
    integers below 2^24).
    """
    ua, ub = _unpack(a), _unpack(b)
    return ua.sum(axis=1)[:, None] + ub.sum(axis=1)[None, :] - 2.0 * (ua @ ub.T)


def hamming_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full (Na, Nb) Hamming distance table between packed descriptor sets."""
    return _distance_table(a, b).astype(np.int64)


def match(a: FeatureSet, b: FeatureSet,
          max_distance: int = DEFAULT_MAX_DISTANCE) -> MatchResult:
    """Mutual-nearest-neighbor Hamming matching.

    A pair (i, j) survives when j is i's nearest descriptor in B, i is
    j's nearest in A, and the distance is within ``max_distance``.  Ties
    resolve to the lowest index, which keeps the pair set identical when
    the arguments are swapped.  Zero matches is a valid outcome.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("match requires two non-empty feature sets")
    d = _distance_table(a.descriptors, b.descriptors)
    best_b = d.argmin(axis=1)
    best_a = d.argmin(axis=0)
    ia = np.arange(len(a))
    mutual = best_a[best_b[ia]] == ia
    dist = d[ia, best_b]
    keep = mutual & (dist <= max_distance)
    pairs = [(int(i), int(best_b[i]), int(dist[i])) for i in np.nonzero(keep)[0]]
    return MatchResult(pairs=pairs)


def match_points(a: FeatureSet, b: FeatureSet,
                 result: MatchResult) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of matched pairs, as two (N, 2) arrays."""
    if not result.pairs:
        return np.zeros((0, 2)), np.zeros((0, 2))
    pa = a.points()
    pb = b.points()
    idx = np.array([(i, j) for i, j, _ in result.pairs], dtype=np.int64)
    return pa[idx[:, 0]], pb[idx[:, 1]]


def preprocess(image, target: Tuple[int, int] = (512, 320)) -> Frame:
    """Scale-and-crop an RGB raster to the working resolution, grayscale.

    The image is scaled so it covers the target (the smaller relative
    dimension fits exactly), center-cropped to ``target``, and converted
    with ITU-R BT.601 luma weights.  A same-size grayscale input passes
    through bit-identical.

    Args:
        image: (H, W, 3) or (H, W) uint8 array, or a PIL image.
        target: (width, height), default (512, 320).

    Raises:
        TooSmall: input narrower or shorter than 32 pixels.
    """
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    image = np.asarray(image)
    if image.ndim == 2:
        rgb = np.repeat(image[:, :, None], 3, axis=2).astype(np.uint8)
        gray_in = image.astype(np.uint8)
    elif image.ndim == 3 and image.shape[2] == 3:
        rgb = image.astype(np.uint8)
        gray_in = None
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) raster, got {image.shape}")

    h, w = rgb.shape[:2]
    tw, th = target
    if w < 32 or h < 32:
        raise TooSmall(f"input {w}x{h} below the 32x32 minimum")

    s = max(tw / w, th / h)
    nw, nh = max(tw, round(w * s)), max(th, round(h * s))
    if (nw, nh) != (w, h):
        rgb = np.asarray(Image.fromarray(rgb).resize((nw, nh), Image.BILINEAR))
        gray_in = None
    left = (nw - tw) // 2
    top = (nh - th) // 2
    crop = rgb[top:top + th, left:left + tw]

    if gray_in is not None:
        # grayscale input, no resize: keep the original bytes
        gray = gray_in[top:top + th, left:left + tw]
    else:
        lum = (0.299 * crop[:, :, 0].astype(np.float64)
               + 0.587 * crop[:, :, 1]
               + 0.114 * crop[:, :, 2])
        gray = np.rint(lum).astype(np.uint8)
    return Frame(tw, th, gray.reshape(-1))


def load_frame(path, index: int = 0,
               provenance: Provenance = Provenance.INPUT,
               target: Optional[Tuple[int, int]] = (512, 320)) -> Frame:
    """Read a PNG or PGM file and preprocess it to a working frame.

    With ``target=None`` the image is converted to grayscale at its
    native size instead of being scaled and cropped.
    """
    with Image.open(path) as im:
        if target is not None:
            f = preprocess(np.asarray(im.convert("RGB")), target)
            return Frame(f.width, f.height, f.gray, index, provenance)
        g = np.asarray(im.convert("L"))
        return Frame(g.shape[1], g.shape[0], g.reshape(-1), index, provenance)


class OrbMatcher:
    """The built-in describe-and-match implementation.

    Any object with the same two methods can replace it in the selector,
    which is how alternative or learned matchers slot in.
    """

    def __init__(self, budget: int = DEFAULT_BUDGET,
                 max_distance: int = DEFAULT_MAX_DISTANCE,
                 fast_threshold: int = FAST_THRESHOLD):
        self.budget = budget
        self.max_distance = max_distance
        self.fast_threshold = fast_threshold

    def describe(self, frame: Frame) -> FeatureSet:
        return detect_and_describe(frame, self.budget, self.fast_threshold)

    def match_sets(self, a: FeatureSet, b: FeatureSet) -> MatchResult:
        return match(a, b, self.max_distance)
