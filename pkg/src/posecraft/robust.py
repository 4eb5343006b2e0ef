"""Robust two-view geometry: RANSAC fundamental-matrix fitting and
essential-matrix pose recovery.

The fitter is deliberately fixed-iteration (no adaptive early exit) and
fully seeded, so a given correspondence set always produces the same
inlier count — the frame selector compares those counts across frames
and must not see sampling noise.  All hypothesis work is batched through
numpy, one SVD call for every sample at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .geometry import CameraPose, Rotation

DEFAULT_ITERATIONS = 2000
DEFAULT_THRESHOLD = 1.5
DEFAULT_MIN_INLIERS = 15

# hypotheses processed per chunk when scoring, bounds peak memory at
# roughly chunk * n_corrs * 8 bytes per intermediate
_SCORE_CHUNK = 512


class TooFewCorrespondences(ValueError):
    """Fewer than the 8 correspondences the minimal solver needs."""


class CheiralityAmbiguous(ValueError):
    """No decomposition candidate puts a clear majority of points in
    front of both cameras (typically a near-zero baseline)."""


@dataclass(frozen=True)
class Correspondence:
    """A point p in frame A paired with a point q in frame B, pixels."""

    p: Tuple[float, float]
    q: Tuple[float, float]


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = DEFAULT_ITERATIONS
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    min_inliers: int = DEFAULT_MIN_INLIERS

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")


@dataclass(frozen=True)
class EpipolarModel:
    """Rank-2, Frobenius-normalized fundamental matrix."""

    F: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.F, dtype=np.float64).reshape(3, 3).copy()
        n = np.linalg.norm(f)
        if n < 1e-15:
            raise ValueError("zero fundamental matrix")
        f /= n
        f.flags.writeable = False
        object.__setattr__(self, "F", f)


def to_point_arrays(corrs: Sequence[Correspondence]) -> Tuple[np.ndarray, np.ndarray]:
    pa = np.array([c.p for c in corrs], dtype=np.float64).reshape(-1, 2)
    pb = np.array([c.q for c in corrs], dtype=np.float64).reshape(-1, 2)
    return pa, pb


def from_point_arrays(pa: np.ndarray, pb: np.ndarray) -> list:
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    if pa.shape != pb.shape:
        raise ValueError("point arrays must have matching shapes")
    return [Correspondence((float(p[0]), float(p[1])), (float(q[0]), float(q[1])))
            for p, q in zip(pa, pb)]


def _hartley_normalize(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batched similarity normalization: centroid to origin, mean distance
    sqrt(2).  pts is (..., N, 2); returns (normalized pts, (..., 3, 3) T)."""
    centroid = pts.mean(axis=-2, keepdims=True)
    shifted = pts - centroid
    dist = np.linalg.norm(shifted, axis=-1).mean(axis=-1)
    dist = np.maximum(dist, 1e-12)
    s = np.sqrt(2.0) / dist
    out = shifted * s[..., None, None]
    T = np.zeros(pts.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 2, 2] = 1.0
    T[..., 0, 2] = -s * centroid[..., 0, 0]
    T[..., 1, 2] = -s * centroid[..., 0, 1]
    return out, T


def _eight_point(pa: np.ndarray, pb: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batched normalized 8-point solve.

    pa, pb: (..., N, 2) with N >= 8.  Returns (..., 3, 3) rank-2
    fundamental matrices and the second-smallest singular value of the
    design matrix (near zero means the sample was degenerate).
    """
    na, Ta = _hartley_normalize(pa)
    nb, Tb = _hartley_normalize(pb)
    x1, y1 = na[..., 0], na[..., 1]
    x2, y2 = nb[..., 0], nb[..., 1]
    ones = np.ones_like(x1)
    A = np.stack([x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, ones],
                 axis=-1)
    _, S, Vt = np.linalg.svd(A)
    Fhat = Vt[..., -1, :].reshape(A.shape[:-2] + (3, 3))
    # enforce rank 2
    U, D, Vt2 = np.linalg.svd(Fhat)
    D = D.copy()
    D[..., 2] = 0.0
    Fhat = U @ (D[..., :, None] * Vt2)
    F = np.swapaxes(Tb, -1, -2) @ Fhat @ Ta
    # second-smallest singular value of A flags rank-deficient samples
    return F, S[..., -2]


def sampson_distance(F: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """First-order geometric error in pixels, sqrt of the Sampson form.

    F is (..., 3, 3); pa, pb are (N, 2).  Returns (..., N).
    """
    N = pa.shape[0]
    ha = np.concatenate([pa, np.ones((N, 1))], axis=1)  # (N, 3)
    hb = np.concatenate([pb, np.ones((N, 1))], axis=1)
    Fa = np.einsum("...ij,nj->...ni", F, ha)      # (..., N, 3)
    Ftb = np.einsum("...ji,nj->...ni", F, hb)
    num = np.einsum("ni,...ni->...n", hb, Fa)
    den = Fa[..., 0] ** 2 + Fa[..., 1] ** 2 + Ftb[..., 0] ** 2 + Ftb[..., 1] ** 2
    den = np.maximum(den, 1e-18)
    return np.abs(num) / np.sqrt(den)


def ransac_fundamental(corrs: Sequence[Correspondence],
                       cfg: RansacConfig) -> Tuple[EpipolarModel, np.ndarray, int]:
    """Seeded RANSAC over the normalized 8-point solver.

    Every iteration's sample is drawn up front from one generator, all
    hypotheses are solved in a single batched SVD, and the winner is the
    highest inlier count with ties going to the lowest hypothesis index,
    so results are reproducible bit for bit.  Degenerate samples (rank-
    deficient design matrix) are resampled a few times, then discarded.

    Returns (model refit on the winner's inliers, boolean inlier mask,
    inlier count).  The refit is kept only when it scores at least as
    well as the sample model.

    Raises:
        TooFewCorrespondences: fewer than 8 pairs.
    """
    pa, pb = to_point_arrays(corrs)
    n = pa.shape[0]
    if n < 8:
        raise TooFewCorrespondences(f"need at least 8 correspondences, got {n}")

    rng = np.random.default_rng(cfg.seed)
    iters = cfg.iterations
    kth = min(8, n - 1)  # argpartition needs kth < n; n == 8 has one draw
    samples = rng.random((iters, n)).argpartition(kth, axis=1)[:, :8]
    F, s2 = _eight_point(pa[samples], pb[samples])

    # resample rank-deficient draws; give up after a few rounds and mark
    # them invalid rather than looping forever on pathological inputs
    for _ in range(5):
        bad = np.nonzero(s2 < 1e-10)[0]
        if bad.size == 0:
            break
        redraw = rng.random((bad.size, n)).argpartition(kth, axis=1)[:, :8]
        F[bad], s2[bad] = _eight_point(pa[redraw], pb[redraw])
    valid = s2 >= 1e-10

    counts = np.zeros(iters, dtype=np.int64)
    masks = np.zeros((iters, n), dtype=bool)
    for lo in range(0, iters, _SCORE_CHUNK):
        hi = min(lo + _SCORE_CHUNK, iters)
        d = sampson_distance(F[lo:hi], pa, pb)
        m = d < cfg.threshold
        masks[lo:hi] = m
        counts[lo:hi] = m.sum(axis=1)
    counts[~valid] = -1

    best = int(np.argmax(counts))  # first index wins ties
    best_mask = masks[best]
    best_count = int(counts[best])
    if best_count <= 0:
        # no sample found any support (wholly degenerate input); return a
        # placeholder rank-2 model with an empty mask so the caller can
        # treat the score as zero
        fallback = F[best] if valid[best] else np.diag([1.0, 1.0, 0.0])
        return EpipolarModel(fallback), np.zeros(n, dtype=bool), 0

    if best_count < 8:
        # not enough support to re-solve; the sample model stands
        return EpipolarModel(F[best]), best_mask, best_count
    refit, s2r = _eight_point(pa[best_mask], pb[best_mask])
    if s2r >= 1e-10:
        d = sampson_distance(refit, pa, pb)
        refit_mask = d < cfg.threshold
        if int(refit_mask.sum()) >= best_count:
            return EpipolarModel(refit), refit_mask, int(refit_mask.sum())
    return EpipolarModel(F[best]), best_mask, best_count


def _triangulate(P1: np.ndarray, P2: np.ndarray,
                 pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Batched DLT triangulation; returns (N, 4) homogeneous points."""
    rows = np.stack([
        pa[:, 0, None] * P1[2] - P1[0],
        pa[:, 1, None] * P1[2] - P1[1],
        pb[:, 0, None] * P2[2] - P2[0],
        pb[:, 1, None] * P2[2] - P2[1],
    ], axis=1)  # (N, 4, 4)
    _, _, Vt = np.linalg.svd(rows)
    return Vt[:, -1, :]


def estimate_relative_pose(corrs: Sequence[Correspondence], intrinsics: np.ndarray,
                           cfg: RansacConfig) -> CameraPose:
    """Recover the relative pose (R, unit t) with x_b = R @ x_a + t.

    RANSAC gives the fundamental matrix; E = K'FK is decomposed into the
    four (R, t) candidates and the one placing the most triangulated
    inliers in front of both cameras wins.

    Raises:
        TooFewCorrespondences: fewer than 8 pairs.
        CheiralityAmbiguous: no candidate clears 50% positive depth.
    """
    K = np.asarray(intrinsics, dtype=np.float64).reshape(3, 3)
    model, mask, count = ransac_fundamental(corrs, cfg)
    pa, pb = to_point_arrays(corrs)
    if count < max(8, cfg.min_inliers):
        raise CheiralityAmbiguous(
            f"only {count} inliers support the epipolar model "
            f"(need {max(8, cfg.min_inliers)})")
    pa = pa[mask]
    pb = pb[mask]

    E = K.T @ model.F @ K
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R_candidates = [U @ W @ Vt, U @ W.T @ Vt]
    t_candidates = [U[:, 2], -U[:, 2]]

    best_frac = -1.0
    best_pose = None
    P1 = K @ np.hstack([np.eye(3), np.zeros((3, 1))])
    for R in R_candidates:
        for t in t_candidates:
            P2 = K @ np.hstack([R, t[:, None]])
            X = _triangulate(P1, P2, pa, pb)
            w = X[:, 3]
            # avoid dividing by tiny homogeneous weights; sign logic only
            z1 = X[:, 2] * w
            z2 = (X @ P2[2]) * w
            frac = float(((z1 > 0) & (z2 > 0)).mean())
            if frac > best_frac:
                best_frac = frac
                best_pose = CameraPose(Rotation.from_matrix(R), t / np.linalg.norm(t))
    if best_frac <= 0.5:
        raise CheiralityAmbiguous(
            f"best decomposition has only {best_frac:.0%} points in front")
    return best_pose
