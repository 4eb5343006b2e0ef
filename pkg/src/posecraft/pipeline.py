"""Pair-to-pose orchestration.

A run walks a fixed stage chain: preprocess the input pair, synthesize an
interpolated clip between the two views, keep the relay frames, estimate
their poses, densify the camera path, refine it into a longer clip with
the view-synthesis backend, score the refined frames against both inputs,
and hand the survivors plus the original pair to the pose backend.  Each
stage only consumes earlier outputs, so partial results are well defined
whenever a stage fails.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import evaluation
from .backends import (
    BackendConfig,
    HttpBackend,
    InterpolateRequest,
    NvsRequest,
    PoseRequest,
    dumps_canonical,
    frame_to_png,
    png_to_frame,
)
from .evaluation import EvalReport, SampleError
from .features import Frame, OrbMatcher, Provenance, load_frame, preprocess
from .geometry import (
    CameraPose,
    Rotation,
    ZeroTranslation,
    interpolate_trajectory,
    rotation_geodesic_deg,
    translation_angular_deg,
)
from .robust import RansacConfig
from .selector import (
    FrameScore,
    SelectionConfig,
    fms_score_all,
    relay_pattern,
    select_by_confidence,
    select_relay,
    select_top_k,
)

MODES = ("full", "pair_only", "no_fms", "relay_ablation")
SELECTORS = ("fms", "confidence")
STAGES = ("preprocess", "interpolate", "relay_pose", "nvs", "select",
          "final_pose")

DEFAULT_DC_FRAMES = 16
DEFAULT_VC_FRAMES = 25


class ManifestParse(ValueError):
    """A manifest line is not a usable pair record."""


class StageFailure(RuntimeError):
    """A pipeline stage failed; carries whatever was computed before it."""

    def __init__(self, stage: str, cause: Exception, partial=None):
        super().__init__(f"stage {stage!r} failed: {cause!r}")
        self.stage = stage
        self.cause = cause
        self.partial = partial


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs except the backend transport itself."""

    mode: str = "full"
    relay_count: Optional[int] = None     # relay_ablation only; even, >= 2
    dc_frame_count: int = DEFAULT_DC_FRAMES
    vc_frame_count: int = DEFAULT_VC_FRAMES
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    fms_ransac: RansacConfig = field(
        default_factory=lambda: RansacConfig(iterations=300, seed=0))
    feature_budget: int = 2000
    selector: str = "fms"
    confidence_percentile: float = 0.2
    prompt: str = ""
    fms_workers: int = 8
    backend: Optional[BackendConfig] = None
    keep_frames: bool = False  # retain generated PNGs on the result

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.selector not in SELECTORS:
            raise ValueError(
                f"unknown selector {self.selector!r}; expected one of {SELECTORS}")
        if self.mode == "relay_ablation":
            if self.relay_count is None:
                raise ValueError("relay_ablation mode needs relay_count")
            relay_pattern(self.relay_count)  # validates even and >= 2
        elif self.relay_count is not None:
            raise ValueError("relay_count only applies to relay_ablation mode")
        if self.dc_frame_count < 2:
            raise ValueError("dc_frame_count must be at least 2")
        if not 0.0 < self.confidence_percentile <= 1.0:
            raise ValueError("confidence_percentile must lie in (0, 1]")
        if self.vc_frame_count < len(self.relay_offsets()):
            raise ValueError("vc_frame_count smaller than the relay pattern")

    def relay_offsets(self) -> Tuple[int, ...]:
        if self.mode == "relay_ablation":
            return relay_pattern(self.relay_count)
        return self.selection.relay_offsets

    def fingerprint(self) -> str:
        payload = {
            "mode": self.mode,
            "relay_count": self.relay_count,
            "dc": self.dc_frame_count,
            "vc": self.vc_frame_count,
            "k": self.selection.k,
            "score_threshold": self.selection.score_threshold,
            "relay_offsets": list(self.selection.relay_offsets),
            "ransac": [self.fms_ransac.iterations, self.fms_ransac.threshold,
                       self.fms_ransac.seed],
            "budget": self.feature_budget,
            "selector": self.selector,
            "percentile": self.confidence_percentile,
        }
        blob = dumps_canonical(payload)
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class PipelineResult:
    """Outcome of one pair; ``pose`` is present exactly when no stage failed."""

    pose: Optional[CameraPose]
    selected: Tuple[int, ...] = ()
    scores: Tuple[FrameScore, ...] = ()
    timings: Mapping[str, float] = field(default_factory=dict)
    relay_poses: Tuple[CameraPose, ...] = ()
    relay_indices: Tuple[int, ...] = ()
    confidences: Tuple[float, ...] = ()
    fms_fallback: bool = False
    failure_stage: Optional[str] = None
    failure_reason: str = ""
    # generated PNGs by stage, kept only when cfg.keep_frames; never part
    # of the JSON form
    frames: Mapping[str, Tuple[bytes, ...]] = field(default_factory=dict,
                                                    repr=False, compare=False)

    def __post_init__(self):
        if (self.pose is None) == (self.failure_stage is None):
            raise ValueError("pose must be present exactly when no stage failed")

    @property
    def ok(self) -> bool:
        return self.failure_stage is None

    def to_json(self, include_timings: bool = True) -> str:
        payload = {
            "ok": self.ok,
            "pose": None,
            "selected": list(self.selected),
            "scores": [[s.t, s.n0, s.nT] for s in self.scores],
            "relay_indices": list(self.relay_indices),
            "confidences": list(self.confidences),
            "fms_fallback": self.fms_fallback,
            "failure_stage": self.failure_stage,
            "failure_reason": self.failure_reason,
        }
        if include_timings:
            payload["timings"] = {k: round(v, 6)
                                  for k, v in self.timings.items()}
        if self.pose is not None:
            payload["pose"] = {
                "rotation": [float(v) for v in self.pose.rotation.as_quat()],
                "translation": [float(v) for v in self.pose.translation],
            }
        return json.dumps(payload, indent=2) + "\n"


def _prepare_input(image, index: int) -> Frame:
    """Accept a Frame, PNG bytes, or a path; return a working-size frame."""
    if isinstance(image, (bytes, bytearray)):
        image = png_to_frame(bytes(image), index=index,
                             provenance=Provenance.INPUT)
    if isinstance(image, Frame):
        f = preprocess(image.pixels)
        return Frame(f.width, f.height, f.gray, index, Provenance.INPUT)
    return load_frame(image, index=index)


def _scale_indices(dc_indices: Sequence[int], dc_last: int,
                   vc_last: int) -> List[int]:
    """Map interpolation-clip frame indices onto the refined-clip range.

    Proportional scaling with collision nudging; endpoints stay pinned to
    0 and ``vc_last`` so endpoint identity survives the mapping.
    """
    raw = [round(i * vc_last / dc_last) for i in dc_indices]
    for j in range(1, len(raw)):
        raw[j] = max(raw[j], raw[j - 1] + 1)
    raw[-1] = vc_last
    for j in range(len(raw) - 2, -1, -1):
        raw[j] = min(raw[j], raw[j + 1] - 1)
    if raw[0] < 0:
        raise ValueError("relay pattern too dense for the refined clip")
    return raw


class _Runner:
    """Single-pair execution; collects partials so failures stay inspectable."""

    def __init__(self, cfg: PipelineConfig, backend):
        self.cfg = cfg
        self.backend = backend
        self.timings = {}
        self.relay_poses = ()
        self.relay_indices = ()
        self.scores = ()
        self.selected = ()
        self.confidences = ()
        self.fms_fallback = False

    def _stage(self, name: str, fn, *args):
        begin = time.perf_counter()
        try:
            out = fn(*args)
        except Exception as exc:  # noqa: BLE001 - stage boundary
            raise StageFailure(name, exc, partial=self._result_for_failure(
                name, exc)) from exc
        self.timings[name] = time.perf_counter() - begin
        return out

    def _result_for_failure(self, stage: str, cause: Exception) -> "PipelineResult":
        return PipelineResult(
            pose=None,
            selected=self.selected,
            scores=self.scores,
            timings=dict(self.timings),
            relay_poses=self.relay_poses,
            relay_indices=self.relay_indices,
            confidences=self.confidences,
            fms_fallback=self.fms_fallback,
            failure_stage=stage,
            failure_reason=repr(cause),
        )

    def run(self, start, end) -> PipelineResult:
        cfg = self.cfg
        start_frame, end_frame = self._stage("preprocess", self._preprocess,
                                             start, end)
        start_png = frame_to_png(start_frame)
        end_png = frame_to_png(end_frame)

        middle_pngs: List[bytes] = []
        kept = {}
        if cfg.mode != "pair_only":
            clip, clip_blobs = self._stage("interpolate", self._interpolate,
                                           start_png, end_png)
            relays = self._stage("relay_pose", self._relay_poses,
                                 clip, clip_blobs)
            relay_frames, relay_pngs = relays
            candidates, cand_blobs = self._stage("nvs", self._refine,
                                                 relay_frames, relay_pngs)
            middle_pngs = self._stage("select", self._select, candidates,
                                      cand_blobs, start_frame, end_frame,
                                      relay_pngs, start_png, end_png)
            if cfg.keep_frames:
                kept = {"interpolated": tuple(clip_blobs),
                        "refined": tuple(cand_blobs),
                        "selected": tuple(middle_pngs)}

        final = self._stage("final_pose", self._final_pose,
                            [start_png] + middle_pngs + [end_png])
        return PipelineResult(
            pose=final,
            selected=self.selected,
            scores=self.scores,
            timings=dict(self.timings),
            relay_poses=self.relay_poses,
            relay_indices=self.relay_indices,
            confidences=self.confidences,
            fms_fallback=self.fms_fallback,
            frames=kept,
        )

    # stage bodies -----------------------------------------------------

    def _preprocess(self, start, end):
        return _prepare_input(start, 0), _prepare_input(end, 1)

    def _interpolate(self, start_png: bytes, end_png: bytes):
        req = InterpolateRequest(start_image=start_png, end_image=end_png,
                                 frame_count=self.cfg.dc_frame_count,
                                 prompt=self.cfg.prompt)
        resp = self.backend.interpolate(req)
        resp.validate_against(req)
        frames = [png_to_frame(blob, index=i,
                               provenance=Provenance.DC_INTERPOLATED)
                  for i, blob in enumerate(resp.frames)]
        return frames, list(resp.frames)

    def _relay_poses(self, clip: List[Frame], clip_blobs: List[bytes]):
        relay_frames = select_relay(clip, self.cfg.relay_offsets())
        self.relay_indices = tuple(f.index for f in relay_frames)
        relay_pngs = [clip_blobs[f.index] for f in relay_frames]
        req = PoseRequest(images=tuple(relay_pngs))
        resp = self.backend.pose(req)
        resp.validate_against(req)
        self.relay_poses = tuple(resp.poses)
        return relay_frames, relay_pngs

    def _refine(self, relay_frames: List[Frame], relay_pngs: List[bytes]):
        cfg = self.cfg
        vc_last = cfg.vc_frame_count - 1
        scaled = _scale_indices(self.relay_indices, cfg.dc_frame_count - 1,
                                vc_last)
        trajectory = interpolate_trajectory(
            list(zip(scaled, self.relay_poses)), vc_last)
        req = NvsRequest(relay_images=tuple(relay_pngs),
                         relay_poses=self.relay_poses,
                         trajectory=trajectory)
        resp = self.backend.nvs(req)
        resp.validate_against(req)
        frames = [png_to_frame(blob, index=t, provenance=Provenance.VC_REFINED)
                  for t, blob in enumerate(resp.frames)]
        return frames, list(resp.frames)

    def _select(self, candidates: List[Frame], cand_blobs: List[bytes],
                start_frame: Frame, end_frame: Frame,
                relay_pngs: List[bytes],
                start_png: bytes, end_png: bytes) -> List[bytes]:
        cfg = self.cfg
        if cfg.mode == "no_fms":
            self.selected = tuple(f.index for f in candidates)
            return list(cand_blobs)

        # the first and last refined frames re-render the input pair, which
        # is re-added after selection anyway; score only the new views
        interior = candidates[1:-1]
        interior_blobs = cand_blobs[1:-1]
        if cfg.selector == "confidence":
            return self._select_by_confidence(interior, interior_blobs,
                                              start_png, end_png)

        matcher = OrbMatcher(budget=cfg.feature_budget)
        workers = min(cfg.fms_workers, os.cpu_count() or 1)
        self.scores = tuple(fms_score_all(
            interior, start_frame, end_frame, matcher,
            ransac_cfg=cfg.fms_ransac, workers=workers))
        chosen = select_top_k(self.scores, cfg.selection)
        if not chosen:
            # relay endpoints echo the input pair, which is re-added below;
            # the fallback only needs the genuinely new relay views
            self.fms_fallback = True
            self.selected = ()
            last = cfg.dc_frame_count - 1
            return [png for idx, png in zip(self.relay_indices, relay_pngs)
                    if 0 < idx < last]
        self.selected = tuple(chosen)
        by_index = {f.index: blob
                    for f, blob in zip(interior, interior_blobs)}
        return [by_index[t] for t in chosen]

    def _select_by_confidence(self, interior: List[Frame],
                              interior_blobs: List[bytes],
                              start_png: bytes, end_png: bytes) -> List[bytes]:
        req = PoseRequest(
            images=tuple([start_png] + interior_blobs + [end_png]))
        resp = self.backend.pose(req)
        resp.validate_against(req)
        middle_conf = list(resp.confidences[1:-1])
        keep = select_by_confidence(interior, middle_conf,
                                    self.cfg.confidence_percentile)
        self.selected = tuple(interior[i].index for i in keep)
        return [interior_blobs[i] for i in keep]

    def _final_pose(self, images: List[bytes]) -> CameraPose:
        req = PoseRequest(images=tuple(images))
        resp = self.backend.pose(req)
        resp.validate_against(req)
        self.confidences = tuple(resp.confidences)
        return resp.poses[-1].relative_to(resp.poses[0])


def _resolve_backend(cfg: PipelineConfig, backend):
    if backend is not None:
        return backend
    return HttpBackend(cfg.backend if cfg.backend is not None
                       else BackendConfig.resolve())


def run_pair(start, end, cfg: PipelineConfig = PipelineConfig(),
             backend=None, raise_on_failure: bool = False) -> PipelineResult:
    """Estimate the relative pose from the start view to the end view.

    Accepts frames, PNG bytes, or paths.  On a stage failure the result
    records the stage and whatever partial outputs exist; pass
    ``raise_on_failure=True`` to get the StageFailure exception instead.
    """
    runner = _Runner(cfg, _resolve_backend(cfg, backend))
    try:
        return runner.run(start, end)
    except StageFailure as failure:
        if raise_on_failure:
            raise
        return failure.partial


# ------------------------------------------------------------------ manifest

_QUAT_KEYS = ("gt_rotation_quat_start", "gt_rotation_quat_end")
_TRANS_KEYS = ("gt_translation_start", "gt_translation_end")


@dataclass(frozen=True)
class PairRecord:
    """One manifest line: an image pair plus optional ground truth."""

    pair_id: str
    start_path: str
    end_path: str
    gt_rotation_start: Optional[Rotation] = None
    gt_rotation_end: Optional[Rotation] = None
    gt_translation_start: Optional[np.ndarray] = None
    gt_translation_end: Optional[np.ndarray] = None
    dataset_tag: str = ""
    yaw_deg: Optional[float] = None

    @classmethod
    def from_dict(cls, d: dict) -> "PairRecord":
        try:
            pair_id = str(d["id"])
            start_path = str(d["start_path"])
            end_path = str(d["end_path"])
        except KeyError as missing:
            raise ManifestParse(f"record missing key {missing}") from None
        quats = []
        for key in _QUAT_KEYS:
            value = d.get(key)
            try:
                quats.append(None if value is None else Rotation.from_quat(value))
            except (TypeError, ValueError) as bad:
                raise ManifestParse(f"bad {key}: {bad}") from None
        trans = []
        for key in _TRANS_KEYS:
            value = d.get(key)
            if value is None:
                trans.append(None)
                continue
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != (3,):
                raise ManifestParse(f"bad {key}: expected 3 values")
            trans.append(arr)
        yaw = d.get("yaw_deg")
        return cls(pair_id=pair_id, start_path=start_path, end_path=end_path,
                   gt_rotation_start=quats[0], gt_rotation_end=quats[1],
                   gt_translation_start=trans[0], gt_translation_end=trans[1],
                   dataset_tag=str(d.get("dataset_tag", "")),
                   yaw_deg=None if yaw is None else float(yaw))

    def to_dict(self) -> dict:
        out = {"id": self.pair_id, "start_path": self.start_path,
               "end_path": self.end_path}
        for key, rot in zip(_QUAT_KEYS,
                            (self.gt_rotation_start, self.gt_rotation_end)):
            if rot is not None:
                out[key] = [float(v) for v in rot.as_quat()]
        for key, t in zip(_TRANS_KEYS,
                          (self.gt_translation_start, self.gt_translation_end)):
            if t is not None:
                out[key] = [float(v) for v in t]
        if self.dataset_tag:
            out["dataset_tag"] = self.dataset_tag
        if self.yaw_deg is not None:
            out["yaw_deg"] = self.yaw_deg
        return out

    def gt_relative(self) -> Optional[CameraPose]:
        """Ground-truth end pose in the start camera frame, if recorded."""
        if self.gt_rotation_start is None or self.gt_rotation_end is None:
            return None
        t_start = self.gt_translation_start
        t_end = self.gt_translation_end
        start = CameraPose(self.gt_rotation_start,
                           np.zeros(3) if t_start is None else t_start)
        end = CameraPose(self.gt_rotation_end,
                         np.zeros(3) if t_end is None else t_end)
        return end.relative_to(start)

    def has_gt_translation(self) -> bool:
        return (self.gt_translation_start is not None
                and self.gt_translation_end is not None)


def load_manifest(path) -> List[PairRecord]:
    records = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as bad:
            raise ManifestParse(f"line {lineno}: invalid JSON ({bad.msg})") \
                from None
        if not isinstance(payload, dict):
            raise ManifestParse(f"line {lineno}: record must be an object")
        records.append(PairRecord.from_dict(payload))
    return records


def write_manifest(records: Sequence, path) -> None:
    lines = []
    for rec in records:
        payload = rec.to_dict() if isinstance(rec, PairRecord) else dict(rec)
        lines.append(json.dumps(payload, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# --------------------------------------------------------------------- batch

@dataclass(frozen=True)
class BatchResult:
    results: Tuple[PipelineResult, ...]
    samples: Tuple[SampleError, ...]
    report: EvalReport


def _score_result(record: PairRecord, result: PipelineResult) -> SampleError:
    if not result.ok:
        return SampleError(pair_id=record.pair_id, valid=False)
    truth = record.gt_relative()
    if truth is None:
        return SampleError(pair_id=record.pair_id, valid=False)
    rot_err = rotation_geodesic_deg(result.pose.rotation, truth.rotation)
    trans_err = None
    if record.has_gt_translation():
        try:
            trans_err = translation_angular_deg(result.pose.translation,
                                                truth.translation)
        except ZeroTranslation:
            trans_err = None
    return SampleError(pair_id=record.pair_id, rotation_deg=rot_err,
                       translation_deg=trans_err)


def run_batch(records: Sequence[PairRecord], cfg: PipelineConfig = PipelineConfig(),
              backend=None, workers: int = 4) -> BatchResult:
    """Run every manifest record and aggregate errors into a report.

    Pairs run with bounded parallelism but results keep manifest order.
    Failed pairs are excluded from the metrics and counted as failures.
    """
    resolved = _resolve_backend(cfg, backend)

    def one(record: PairRecord) -> PipelineResult:
        return run_pair(record.start_path, record.end_path, cfg,
                        backend=resolved)

    records = list(records)
    if not records:
        return BatchResult(results=(), samples=(),
                           report=evaluation.empty_report(
                               fingerprint=cfg.fingerprint()))
    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]

    samples = tuple(_score_result(rec, res)
                    for rec, res in zip(records, results))
    failures = sum(1 for s in samples if not s.valid)
    scored = [s for s in samples if s.valid]
    if scored:
        report = evaluation.build_report(samples, failure_count=failures,
                                         fingerprint=cfg.fingerprint())
    else:
        report = evaluation.empty_report(failure_count=failures,
                                         fingerprint=cfg.fingerprint())
    return BatchResult(results=tuple(results), samples=samples, report=report)
