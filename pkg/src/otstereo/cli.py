"""Command-line runner: ``match``, ``eval``, ``gen-weights`` and ``gen-scenes``.

Exit codes: 0 success, 1 configuration or argument error, 2 input/output
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from otstereo.config import parse_key_values
from otstereo.errors import ConvergenceError, FormatError
from otstereo.imageio import read_image, write_pfm, write_png_visualization
from otstereo.metrics import BAD_THRESHOLDS, REGIONS, disparity_metrics
from otstereo.mrt import generate_weights, save_weights
from otstereo.pipeline import (PipelineConfig, PipelineResult, default_threads, finish,
                               loss_report, match_stage, scene_reports)
from otstereo.scenes import SuiteSpec, generate_scene

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the configuration code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_config(path: Optional[str], overrides: List[str], threads: Optional[int]) -> PipelineConfig:
    """Defaults, then the config file, then ``--set`` pairs, then ``--threads``.

    The thread count falls back to the environment variable when neither the
    file nor the flags name it.
    """
    text = ""
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise CliError(EXIT_CONFIG, f"--set expects KEY=VALUE, got {item!r}")
        text += "\n" + item
    try:
        keys = {k for k, _ in parse_key_values(text)}
        cfg = PipelineConfig.from_text(text)
        if threads is not None:
            cfg = cfg.replace(threads=threads)
        elif "threads" not in keys:
            cfg = cfg.replace(threads=default_threads())
        if cfg.threads < 1:
            raise ValueError("threads must be >= 1")
        # surface invalid values before any work starts
        cfg.descriptor, cfg.sinkhorn, cfg.refine
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from exc
    return cfg


def _read(path: str, what: str) -> np.ndarray:
    try:
        return read_image(path)
    except (OSError, FormatError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot read {what} {path}: {exc}") from exc


def _run(left, right, cfg: PipelineConfig, iterations=None) -> List[PipelineResult]:
    """One result per refinement count, sharing the global matching stage."""
    try:
        timings: dict = {}
        stage = match_stage(left, right, cfg, timings=timings)
        counts = [cfg.refine_iterations] if iterations is None else iterations
        results = []
        for it in counts:
            res = finish(stage, cfg.replace(refine_iterations=it), dict(timings))
            results.append(res)
        return results
    except ConvergenceError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    except FloatingPointError as exc:
        raise CliError(EXIT_NUMERIC, f"numerical failure: {exc}") from exc
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"invalid input: {exc}") from exc


def cmd_match(args) -> int:
    cfg = load_config(args.config, args.set, args.threads)
    left = _read(args.left, "left image")
    right = _read(args.right, "right image")
    (result,) = _run(left, right, cfg)
    plans = result.match.plans
    if args.dump_row is not None and not 0 <= args.dump_row < plans.shape[0]:
        raise CliError(EXIT_CONFIG, f"--dump-row must lie in [0, {plans.shape[0]})")

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        full = result.full
        write_pfm(full.disparity, out / "disp.pfm")
        write_pfm(full.occlusion, out / "occ.pfm")
        write_pfm(full.confidence, out / "conf.pfm")
        vmax = max(float(full.disparity.max()), 1.0)
        write_png_visualization(full.disparity, out / "disp.png", "turbo", 0.0, vmax)
        write_png_visualization(full.occlusion, out / "occ.png", "gray", 0.0, 1.0)
        write_png_visualization(full.confidence, out / "conf.png", "gray", 0.0, 1.0)
        if args.dump_row is not None:
            write_pfm(plans[args.dump_row].astype(np.float32),
                      out / f"plan_row{args.dump_row}.pfm")
        (out / "config.cfg").write_text(cfg.to_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc}") from exc

    for stage, seconds in result.timings.items():
        print(f"{stage:<12} {seconds:8.3f} s")
    print(f"{'residual':<12} {result.match.residual:8.2e}")
    return EXIT_OK


def _table(rows) -> str:
    """Aggregate metrics: one line per label, non-occluded then all-pixel columns."""
    cols = ["EPE", "RMS"] + [f"Bad-{p:g}" for p in BAD_THRESHOLDS]
    head = f"{'':<12}" + "".join(f"{c + '/' + r[:3]:>12}" for r in ("noc", "all") for c in cols)
    lines = [head]
    for label, reports in rows:
        cells = []
        for region in REGIONS:
            sel = [r for r in reports if r.region == region]
            cells += [np.mean([r.epe for r in sel]), np.mean([r.rms for r in sel])]
            cells += [np.mean([r.bad[p] for r in sel]) for p in BAD_THRESHOLDS]
        lines.append(f"{label:<12}" + "".join(f"{v:12.4f}" for v in cells))
    return "\n".join(lines)


def _parse_iterations(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        counts = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"--iterations expects integers, got {text!r}") from exc
    if not counts or any(c < 0 for c in counts):
        raise CliError(EXIT_CONFIG, "--iterations needs non-negative counts")
    return counts


def cmd_eval(args) -> int:
    iterations = _parse_iterations(args.iterations)
    if args.generate:
        return _eval_suite(args, iterations)
    if iterations is not None or args.loss:
        raise CliError(EXIT_CONFIG, "--iterations and --loss need --generate")
    if not (args.pred and args.gt):
        raise CliError(EXIT_CONFIG, "eval needs --pred and --gt, or --generate")
    pred = _read(args.pred, "prediction")
    gt = _read(args.gt, "ground truth")
    occ = _read(args.gt_occ, "ground-truth occlusion") if args.gt_occ else np.ones_like(gt)
    reports = []
    try:
        for region in REGIONS:
            rep = disparity_metrics(pred, gt, occ, region)
            rep.scene = Path(args.pred).stem
            reports.append(rep)
    except ValueError as exc:
        raise CliError(EXIT_IO, f"cannot evaluate: {exc}") from exc
    for rep in reports:
        print(rep.to_json())
    print(_table([("pred", reports)]))
    return EXIT_OK


def _eval_suite(args, iterations) -> int:
    cfg = load_config(args.config, args.set, args.threads)
    try:
        suite = SuiteSpec.from_text(Path(args.generate).read_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read suite {args.generate}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid suite: {exc}") from exc
    counts = iterations if iterations is not None else [cfg.refine_iterations]
    by_count = {c: [] for c in counts}
    t0 = time.perf_counter()
    for spec in suite.build():
        pair = generate_scene(spec)
        for count, res in zip(counts, _run(pair.left, pair.right, cfg, counts)):
            reps = scene_reports(res, pair.gt_disparity, pair.gt_occlusion,
                                 spec.name, iterations=count)
            if args.loss:
                loss = loss_report(res, pair.gt_disparity, pair.gt_occlusion, cfg)
                for rep in reps:
                    rep.extra.update(loss.to_record())
            for rep in reps:
                print(rep.to_json())
            by_count[count] += reps
    print(_table([(f"iter={c}", reps) for c, reps in by_count.items()]))
    print(f"scenes: {suite.scenes}  time: {time.perf_counter() - t0:.2f} s")
    return EXIT_OK


def cmd_gen_weights(args) -> int:
    cfg = load_config(args.config, args.set, None)
    dim = args.dim if args.dim is not None else cfg.feature_dim
    blocks = args.blocks if args.blocks is not None else cfg.mrt_blocks
    seed = args.seed if args.seed is not None else cfg.mrt_seed
    try:
        weights = generate_weights(dim=dim, blocks=blocks, seed=seed, scale=cfg.mrt_scale,
                                   gate_bias=cfg.mrt_gate_bias,
                                   projection_rows=args.projection_rows)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid weight settings: {exc}") from exc
    try:
        save_weights(weights, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}: dim={dim} blocks={blocks} seed={seed}")
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    try:
        suite = SuiteSpec.from_text(Path(args.suite).read_text()) if args.suite else SuiteSpec()
        specs = suite.build()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read suite {args.suite}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid suite: {exc}") from exc
    out = Path(args.out)
    try:
        for spec in specs:
            pair = generate_scene(spec)
            d = out / spec.name
            d.mkdir(parents=True, exist_ok=True)
            write_pfm(pair.left, d / "left.pfm")
            write_pfm(pair.right, d / "right.pfm")
            write_pfm(pair.gt_disparity, d / "gt_disp.pfm")
            write_pfm(pair.gt_occlusion, d / "gt_occ.pfm")
            (d / "scene.cfg").write_text(spec.to_text())
        (out / "suite.cfg").write_text(suite.to_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write scenes to {out}: {exc}") from exc
    print(f"wrote {len(specs)} scenes to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otstereo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if threads:
            p.add_argument("--threads", type=int,
                           help="worker threads (default: config, then $OTSTEREO_THREADS)")

    p = sub.add_parser("match", help="match one stereo pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-row", type=int, metavar="N",
                   help="also write the transport plan of quarter-res row N")
    common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="score predictions or a generated suite")
    p.add_argument("--pred", help="predicted disparity PFM")
    p.add_argument("--gt", help="ground-truth disparity PFM")
    p.add_argument("--gt-occ", help="ground-truth visibility PFM (1 = visible)")
    p.add_argument("--generate", metavar="SUITE", help="suite config to generate and match")
    p.add_argument("--iterations", help="comma-separated refinement counts, e.g. 0,1,2,3")
    p.add_argument("--loss", action="store_true", help="append loss fields to each report")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-weights", help="write a seeded random transformer weight file")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--projection-rows", type=int, default=0,
                   help="raw descriptor size of an optional projection (0 = none)")
    common(p, threads=False)
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("gen-scenes", help="write a synthetic scene suite")
    p.add_argument("--suite", help="suite config (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"otstereo: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
