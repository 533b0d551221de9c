"""Command line: `python3 -m rcme {estimate,bench,synth}`."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, engine, synth
from .core import Intrinsics

EXIT_OK, EXIT_DETECT_FAIL, EXIT_INPUT = 0, 1, 2


def _engine_flags(p):
    p.add_argument("--variant", choices=[v.value for v in engine.Variant])
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sigma", type=float, help="override the noise level of the input")
    p.add_argument("--early-term", dest="early_term", type=float)
    p.add_argument("--out", help="output path (default: stdout)")


def _apply_flags(cfg, args):
    updates = {"variant": args.variant, "rng_seed": args.seed, "max_iters": args.iters,
               "alpha": args.alpha, "mu": args.mu, "lam": args.lam,
               "early_term_entropy": args.early_term}
    return replace(cfg, **{k: v for k, v in updates.items() if v is not None})


def build_parser():
    ap = argparse.ArgumentParser(prog="rcme", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("estimate", help="estimate motion from a correspondence file")
    p.add_argument("path")
    p.add_argument("--no-refine", action="store_true")
    _engine_flags(p)

    p = sub.add_parser("bench", help="run a benchmark suite (JSON config)")
    p.add_argument("suite")
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", help="include wall-clock ms in the JSON")
    _engine_flags(p)

    p = sub.add_parser("synth", help="write a synthetic scene as a correspondence file")
    p.add_argument("--config", help="JSON with SceneConfig fields")
    p.add_argument("--n-points", type=int)
    p.add_argument("--outlier-ratio", type=float)
    p.add_argument("--distribution", choices=["uniform", "clustered"])
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out")
    return ap


def _write(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_estimate(args):
    X, K, noise = bench.load_correspondences(args.path)
    if args.sigma is not None:
        noise = replace(noise, sigma=args.sigma)
    cfg = _apply_flags(engine.EngineConfig(), args)
    res = engine.run(X, K, noise, cfg)
    if not res.ok:
        doc = {"outcome": "DetectFail", "reason": res.outcome.reason.value}
        _write(json.dumps(doc, indent=2) + "\n", args.out)
        return EXIT_DETECT_FAIL
    out = res.outcome
    doc = {"outcome": "Success", "variant": cfg.variant.value,
           "n_inliers": int(len(out.inlier_indices)),
           "candidate_count": out.candidate_count,
           "ransac": {"q": out.motion.q.tolist(), "t": out.motion.t.tolist()}}
    if out.selected is not None:
        doc["psi"] = out.selected.psi
        doc["z"] = out.selected.z
    if not args.no_refine and len(out.inlier_indices) >= engine.MINIMAL_SAMPLE:
        n_pre, n_post, failed, post = bench.assess(res, X, K, noise, cfg.alpha)
        doc["refined"] = {"q": post.q.tolist(), "t": post.t.tolist()}
        doc["failure_metric"] = {"n_I": n_pre, "n_star": n_post, "failed": failed}
    doc["inlier_indices"] = [int(i) for i in out.inlier_indices]
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_bench(args):
    try:
        suite = bench.load_suite(args.suite)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise bench.CorrespondenceFormatError(f"{args.suite}: {exc}") from None
    suite = replace(suite, engine=_apply_flags(suite.engine, args))
    if args.variant:
        suite = replace(suite, variants=(args.variant,))
    if args.seed is not None:
        suite = replace(suite, master_seed=args.seed)
    if args.workers:
        suite = replace(suite, workers=args.workers)
    if args.sigma is not None:
        suite = replace(suite, entries=tuple(
            replace(e, scene=replace(e.scene, sigma=args.sigma)) for e in suite.entries))
    report = bench.run_benchmark(suite)
    if args.out:
        base = Path(args.out)
        base.with_suffix(".json").write_text(report.to_json(args.timing), encoding="utf-8")
        base.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    else:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_synth(args):
    d = {}
    if args.config:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "K" in d:
            d["K"] = Intrinsics(*d["K"])
        for key in ("depth_range", "image_size"):
            if key in d:
                d[key] = tuple(d[key])
    flags = {"n_points": args.n_points, "outlier_ratio": args.outlier_ratio,
             "distribution": args.distribution, "rng_seed": args.seed, "sigma": args.sigma}
    d.update({k: v for k, v in flags.items() if v is not None})
    scene = synth.generate(synth.SceneConfig(**d))
    m = scene.motion
    comment = (f"synthetic scene seed={d.get('rng_seed', 0)} outliers={int((~scene.inlier).sum())}\n"
               f"truth q={m.q.tolist()} t={m.t.tolist()}")
    _write(bench.format_correspondences(scene.X, scene.K, scene.sigma or None, comment),
           args.out)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"estimate": cmd_estimate, "bench": cmd_bench, "synth": cmd_synth}[args.cmd]
    try:
        return handler(args)
    except (bench.CorrespondenceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
