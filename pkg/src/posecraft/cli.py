"""Operator entry point.

Subcommands cover the whole workflow: ``run`` one pair, ``eval`` a
manifest, ``ablate`` a sweep axis, ``sample-pairs`` from a posed image
catalog, ``serve-mock`` for wire-protocol integration tests, and
``make-dataset`` to produce a synthetic pair set with ground truth.

Settings resolve as CLI flag > environment (POSECRAFT_*) > config file
(TOML or JSON via --config) > built-in default.  Exit codes are stable:
0 success, 1 pipeline failure, 2 usage or input error.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .backends import (
    DEFAULT_RETRIES,
    DEFAULT_TIMEOUT,
    BackendConfig,
    MockBackend,
    SceneBank,
    make_server,
    make_synthetic_dataset,
)
from .evaluation import (
    NoPairsInRange,
    errors_csv,
    report_json,
    report_text,
    sample_pairs,
)
from .pipeline import (
    MODES,
    SELECTORS,
    ManifestParse,
    PipelineConfig,
    load_manifest,
    run_batch,
    run_pair,
    write_manifest,
)
from .robust import RansacConfig
from .selector import SelectionConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

RELAY_SWEEP = (2, 4, 6, 8, 16)
K_SWEEP = (4, 6, 8)
CONFIDENCE_SWEEP = (0.2, 0.4, 0.6, 0.8)


class CliError(Exception):
    """Bad usage or unusable input; maps to exit code 2."""


class UnknownSweepAxis(CliError):
    pass


# ------------------------------------------------------------ configuration

def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    text = p.read_bytes().decode("utf-8")
    try:
        if p.suffix == ".toml":
            import tomli
            return tomli.loads(text)
        return json.loads(text)
    except ValueError as exc:  # covers both parsers
        raise CliError(f"cannot parse {p}: {exc}") from None


def _setting(flag, env_var: str, file_val, default, cast):
    """One resolved setting: flag > environment > config file > default."""
    if flag is not None:
        return flag
    env = os.environ.get(env_var, "")
    if env:
        try:
            return cast(env)
        except ValueError:
            raise CliError(f"bad {env_var}={env!r}") from None
    if file_val is not None:
        try:
            return cast(file_val)
        except (TypeError, ValueError):
            raise CliError(f"bad config value for {env_var.lower()}: "
                           f"{file_val!r}") from None
    return default


def _pipeline_config(args, file_cfg: dict,
                     backend_cfg=None) -> PipelineConfig:
    pl = file_cfg.get("pipeline", {})

    def pick(attr, env_var, default, cast):
        return _setting(getattr(args, attr, None), env_var,
                        pl.get(attr), default, cast)

    seed = pick("seed", "POSECRAFT_SEED", 0, int)
    try:
        return PipelineConfig(
            mode=pick("mode", "POSECRAFT_MODE", "full", str),
            relay_count=getattr(args, "relay_count", None),
            selection=SelectionConfig(
                k=pick("k", "POSECRAFT_K", 6, int),
                score_threshold=pick("score_threshold",
                                     "POSECRAFT_SCORE_THRESHOLD", 30, int)),
            fms_ransac=RansacConfig(iterations=300, seed=seed),
            selector=pick("selector", "POSECRAFT_SELECTOR", "fms", str),
            confidence_percentile=pick("percentile", "POSECRAFT_PERCENTILE",
                                       0.2, float),
            keep_frames=bool(getattr(args, "dump_frames", False)),
            backend=backend_cfg,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _backend_config(args, file_cfg: dict) -> BackendConfig:
    """Endpoint settings for the HTTP backend, fully resolved."""
    endpoints = file_cfg.get("endpoints", {})
    client = file_cfg.get("client", {})
    base = BackendConfig(
        interpolate_url=endpoints.get("interpolate"),
        nvs_url=endpoints.get("nvs"),
        pose_url=endpoints.get("pose"),
        timeout=float(client.get("timeout", DEFAULT_TIMEOUT)),
        retries=int(client.get("retries", DEFAULT_RETRIES)),
    ).with_env_overrides()
    fields = {}
    for role in ("interpolate", "nvs", "pose"):
        flag = getattr(args, f"{role}_url", None)
        if flag:
            fields[f"{role}_url"] = flag
    if getattr(args, "timeout", None) is not None:
        fields["timeout"] = float(args.timeout)
    if not fields:
        return base
    return BackendConfig(**{**base.__dict__, **fields})


def _make_backend(args, file_cfg: dict, anchors):
    """Returns (backend object or None, BackendConfig or None).

    The synthetic backend needs its scene bank; without --scene-bank the
    bank.json beside the first existing anchor path is used, matching
    where make-dataset writes it.
    """
    pl = file_cfg.get("pipeline", {})
    kind = _setting(getattr(args, "backend", None), "POSECRAFT_BACKEND",
                    pl.get("backend"), "synthetic", str)
    if kind == "http":
        return None, _backend_config(args, file_cfg)
    if kind != "synthetic":
        raise CliError(f"unknown backend {kind!r}; expected synthetic or http")

    bank_path = getattr(args, "scene_bank", None)
    if bank_path is None:
        for anchor in anchors:
            sibling = Path(anchor).resolve().parent / "bank.json"
            if sibling.exists():
                bank_path = sibling
                break
    if bank_path is None:
        raise CliError("synthetic backend needs --scene-bank "
                       "(no bank.json found beside the inputs)")
    if not Path(bank_path).exists():
        raise CliError(f"scene bank not found: {bank_path}")
    return SceneBank.from_spec_file(bank_path), None


# ------------------------------------------------------------- subcommands

def _dump_frames(dirpath: Path, frames) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    for stage, blobs in frames.items():
        for i, blob in enumerate(blobs):
            (dirpath / f"{stage}_{i:02d}.png").write_bytes(blob)


def cmd_run(args) -> int:
    file_cfg = _load_config(args.config)
    if args.dump_frames and not args.out:
        raise CliError("--dump-frames needs --out")
    for p in (args.start, args.end):
        if not Path(p).exists():
            raise CliError(f"input image not found: {p}")

    backend, http_cfg = _make_backend(args, file_cfg, (args.start, args.end))
    cfg = _pipeline_config(args, file_cfg, backend_cfg=http_cfg)
    result = run_pair(args.start, args.end, cfg, backend=backend)

    text = result.to_json(include_timings=args.timings)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(text)
        if args.dump_frames:
            _dump_frames(out / "frames", result.frames)
        print(out / "result.json")
    else:
        sys.stdout.write(text)

    if not result.ok:
        print(f"posecraft: run failed at stage {result.failure_stage!r}: "
              f"{result.failure_reason}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _eval_workers(args, file_cfg: dict) -> int:
    pl = file_cfg.get("pipeline", {})
    return _setting(getattr(args, "workers", None), "POSECRAFT_WORKERS",
                    pl.get("workers"), os.cpu_count() or 1, int)


def cmd_eval(args) -> int:
    file_cfg = _load_config(args.config)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CliError(f"manifest not found: {manifest}")
    records = load_manifest(manifest)

    backend, http_cfg = (None, None)
    if records:
        backend, http_cfg = _make_backend(args, file_cfg, (manifest,))
    cfg = _pipeline_config(args, file_cfg, backend_cfg=http_cfg)
    batch = run_batch(records, cfg, backend=backend,
                      workers=_eval_workers(args, file_cfg))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(batch.report))
    (out / "report.txt").write_text(report_text(batch.report))
    (out / "errors.csv").write_text(errors_csv(batch.samples))
    sys.stdout.write(report_text(batch.report))
    return EXIT_OK


def ablation_sweep(axis: str, base: PipelineConfig):
    """(label, config) rows for one sweep axis."""
    if axis == "relay":
        return [(f"relay={n}",
                 replace(base, mode="relay_ablation", relay_count=n))
                for n in RELAY_SWEEP]
    if axis == "k":
        return [(f"k={k}",
                 replace(base, mode="full", relay_count=None,
                         selection=replace(base.selection, k=k)))
                for k in K_SWEEP]
    if axis == "selector":
        rows = [("fms", replace(base, mode="full", relay_count=None,
                                selector="fms"))]
        rows += [(f"conf{int(p * 100)}",
                  replace(base, mode="full", relay_count=None,
                          selector="confidence", confidence_percentile=p))
                 for p in CONFIDENCE_SWEEP]
        rows.append(("none", replace(base, mode="no_fms", relay_count=None)))
        return rows
    raise UnknownSweepAxis(f"unknown sweep axis {axis!r}; "
                           "expected relay, k, or selector")


def _fmt_cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def _ablation_text(rows) -> str:
    headers = ["variant", "MRE", "MTE", "R@5", "R@15", "R@30", "AUC30",
               "N", "fail"]
    table = [headers]
    for label, rep in rows:
        rr = rep.rotation_recall
        table.append([label, _fmt_cell(rep.mre), _fmt_cell(rep.mte),
                      _fmt_cell(rr.get(5.0)), _fmt_cell(rr.get(15.0)),
                      _fmt_cell(rr.get(30.0)), _fmt_cell(rep.auc30),
                      str(rep.sample_count), str(rep.failure_count)])
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = []
    for row in table:
        cells = [row[0].ljust(widths[0])]
        cells += [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    file_cfg = _load_config(args.config)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CliError(f"manifest not found: {manifest}")
    records = load_manifest(manifest)
    if not records:
        raise CliError(f"manifest is empty: {manifest}")

    backend, http_cfg = _make_backend(args, file_cfg, (manifest,))
    base = _pipeline_config(args, file_cfg, backend_cfg=http_cfg)
    workers = _eval_workers(args, file_cfg)

    rows = []
    for label, cfg in ablation_sweep(args.axis, base):
        batch = run_batch(records, cfg, backend=backend, workers=workers)
        rows.append((label, batch.report))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = [{"variant": label, **json.loads(report_json(rep))}
               for label, rep in rows]
    (out / f"ablate_{args.axis}.json").write_text(
        json.dumps(payload, indent=2) + "\n")
    text = _ablation_text(rows)
    (out / f"ablate_{args.axis}.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sample_pairs(args) -> int:
    path = Path(args.catalog)
    if not path.exists():
        raise CliError(f"catalog not found: {path}")
    try:
        data = json.loads(path.read_text())
    except ValueError as exc:
        raise CliError(f"cannot parse {path}: {exc}") from None
    entries = data.get("images") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise CliError(f"{path} must hold a list of posed images "
                       "(or an object with an 'images' list)")

    seed = _setting(args.seed, "POSECRAFT_SEED", None, 0, int)
    try:
        records = sample_pairs(entries, args.yaw_lo, args.yaw_hi,
                               max_pairs=args.max_pairs, seed=seed)
    except KeyError as exc:
        raise CliError(f"catalog entry missing key {exc}") from None

    if args.out:
        write_manifest(records, args.out)
        print(f"{len(records)} pairs -> {args.out}")
    else:
        for rec in records:
            sys.stdout.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    seed = _setting(args.seed, "POSECRAFT_SEED", None, 0, int)
    if args.scene_bank:
        if not Path(args.scene_bank).exists():
            raise CliError(f"scene bank not found: {args.scene_bank}")
        backend = SceneBank.from_spec_file(args.scene_bank, jitter_seed=seed)
    else:
        backend = MockBackend()
    server = make_server(backend, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    seed = _setting(args.seed, "POSECRAFT_SEED", None, 0, int)
    if not args.yaw_lo < args.yaw_hi:
        raise CliError(f"need yaw-lo < yaw-hi, got [{args.yaw_lo}, "
                       f"{args.yaw_hi})")
    out = Path(args.out_dir)
    _, records, _ = make_synthetic_dataset(
        out, n_scenes=args.scenes, seed=seed, yaw_lo=args.yaw_lo,
        yaw_hi=args.yaw_hi, sigma=args.sigma, pose_jitter_deg=args.jitter)
    write_manifest(records, out / "manifest.jsonl")
    print(f"{len(records)} scenes -> {out} (manifest.jsonl, bank.json)")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_common(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="TOML or JSON settings file")
    p.add_argument("--backend", choices=("synthetic", "http"),
                   help="model backend (default synthetic)")
    p.add_argument("--scene-bank", metavar="PATH",
                   help="scene bank JSON for the synthetic backend")
    p.add_argument("--seed", type=int, help="seed for all randomized steps")
    p.add_argument("--k", type=int, help="frames kept by the selector")
    p.add_argument("--score-threshold", type=int,
                   help="minimum match score for a frame to qualify")
    p.add_argument("--interpolate-url", metavar="URL")
    p.add_argument("--nvs-url", metavar="URL")
    p.add_argument("--pose-url", metavar="URL")
    p.add_argument("--timeout", type=float, help="HTTP timeout in seconds")
    if with_mode:
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--selector", choices=SELECTORS)
        p.add_argument("--percentile", type=float,
                       help="confidence selector keep fraction")
        p.add_argument("--relay-count", type=int,
                       help="relay frames (relay_ablation mode only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posecraft",
        description="Extreme-rotation relative pose estimation via "
                    "generated in-between views.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run_p = sub.add_parser("run", help="estimate the pose of one image pair")
    run_p.add_argument("start", help="start view (PNG or PGM)")
    run_p.add_argument("end", help="end view (PNG or PGM)")
    _add_common(run_p)
    run_p.add_argument("--out", metavar="DIR",
                       help="write result.json here instead of stdout")
    run_p.add_argument("--dump-frames", action="store_true",
                       help="also write generated frame PNGs (needs --out)")
    run_p.add_argument("--timings", action="store_true",
                       help="include wall-clock timings (not byte-stable)")
    run_p.set_defaults(func=cmd_run)

    eval_p = sub.add_parser("eval", help="run a manifest and report metrics")
    eval_p.add_argument("manifest", help="JSONL pair manifest")
    _add_common(eval_p)
    eval_p.add_argument("--workers", type=int,
                        help="parallel pairs (default: logical cores)")
    eval_p.add_argument("--out", metavar="DIR", default=".",
                        help="directory for report.json/.txt and errors.csv")
    eval_p.set_defaults(func=cmd_eval)

    abl_p = sub.add_parser("ablate", help="sweep one axis over a manifest")
    abl_p.add_argument("manifest", help="JSONL pair manifest")
    abl_p.add_argument("--axis", required=True,
                       choices=("relay", "k", "selector"))
    _add_common(abl_p, with_mode=False)
    abl_p.add_argument("--workers", type=int,
                       help="parallel pairs (default: logical cores)")
    abl_p.add_argument("--out", metavar="DIR", default=".",
                       help="directory for the sweep table files")
    abl_p.set_defaults(func=cmd_ablate)

    sp_p = sub.add_parser("sample-pairs",
                          help="build a manifest from a posed image catalog")
    sp_p.add_argument("catalog", help="JSON list of posed images")
    sp_p.add_argument("--yaw-lo", type=float, default=50.0,
                      help="relative yaw lower bound, inclusive")
    sp_p.add_argument("--yaw-hi", type=float, default=90.0,
                      help="relative yaw upper bound, exclusive")
    sp_p.add_argument("--max-pairs", type=int,
                      help="seeded uniform subsample cap")
    sp_p.add_argument("--seed", type=int, help="subsample seed")
    sp_p.add_argument("--out", metavar="PATH",
                      help="manifest file (default: JSONL to stdout)")
    sp_p.set_defaults(func=cmd_sample_pairs)

    serve_p = sub.add_parser("serve-mock",
                             help="serve a backend over HTTP for protocol "
                                  "integration tests")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8420,
                         help="0 picks a free port (printed on stdout)")
    serve_p.add_argument("--scene-bank", metavar="PATH",
                         help="serve these synthetic scenes instead of the "
                              "scripted mock")
    serve_p.add_argument("--seed", type=int,
                         help="pose jitter seed for a scene bank")
    serve_p.set_defaults(func=cmd_serve_mock)

    mk_p = sub.add_parser("make-dataset",
                          help="render synthetic pairs with ground truth")
    mk_p.add_argument("out_dir")
    mk_p.add_argument("--scenes", type=int, default=20)
    mk_p.add_argument("--seed", type=int)
    mk_p.add_argument("--yaw-lo", type=float, default=50.0)
    mk_p.add_argument("--yaw-hi", type=float, default=90.0)
    mk_p.add_argument("--sigma", type=float, default=0.0,
                      help="generation degradation strength")
    mk_p.add_argument("--jitter", type=float, default=0.0,
                      help="pose estimate jitter in degrees")
    mk_p.set_defaults(func=cmd_make_dataset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"posecraft: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestParse, NoPairsInRange) as exc:
        print(f"posecraft: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
