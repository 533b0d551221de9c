"""Correspondence files, paired-seed benchmark trials and report assembly."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine, refine, synth
from .core import Intrinsics, NoiseModel, as_array, direction_angle, rotation_angle

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.5
VARIANTS = ("standard", "prcme", "rcme")


class CorrespondenceFormatError(ValueError):
    pass


# ------------------------------------------------------------------ files --

def parse_correspondences(text, source="<string>"):
    """Parse correspondence-file text into (X, Intrinsics, NoiseModel)."""
    K = None
    sigma = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{source}:{lineno}"
        if parts[0] == "K":
            if K is not None:
                raise CorrespondenceFormatError(f"{where}: duplicate K header")
            if rows:
                raise CorrespondenceFormatError(f"{where}: K header after data lines")
            vals = _floats(parts[1:], where, 5, "K fx fy cx cy skew")
            try:
                K = Intrinsics(vals[0], vals[1], vals[2], vals[3], vals[4])
            except ValueError as exc:
                raise CorrespondenceFormatError(f"{where}: {exc}") from None
        elif parts[0] == "sigma":
            if sigma is not None:
                raise CorrespondenceFormatError(f"{where}: duplicate sigma header")
            if rows:
                raise CorrespondenceFormatError(f"{where}: sigma header after data lines")
            (sigma,) = _floats(parts[1:], where, 1, "sigma <value>")
            if not sigma > 0:
                raise CorrespondenceFormatError(f"{where}: sigma must be positive")
        else:
            if K is None:
                raise CorrespondenceFormatError(f"{where}: data line before K header")
            rows.append(_floats(parts, where, 4, "x y xp yp"))
    if K is None:
        raise CorrespondenceFormatError(f"{source}: missing K header")
    if len(rows) < engine.MINIMAL_SAMPLE:
        raise CorrespondenceFormatError(
            f"{source}: need at least {engine.MINIMAL_SAMPLE} correspondences, got {len(rows)}")
    if sigma is None:
        log.info("%s: no sigma header, using default %.3g px", source, DEFAULT_SIGMA)
        sigma = DEFAULT_SIGMA
    return np.array(rows, dtype=float), K, NoiseModel(sigma)


def _floats(tokens, where, count, form):
    if len(tokens) != count:
        raise CorrespondenceFormatError(f"{where}: expected '{form}', got {len(tokens)} fields")
    try:
        vals = [float(tok) for tok in tokens]
    except ValueError:
        raise CorrespondenceFormatError(f"{where}: non-numeric field in '{' '.join(tokens)}'") \
            from None
    if not all(math.isfinite(v) for v in vals):
        raise CorrespondenceFormatError(f"{where}: non-finite value")
    return vals


def load_correspondences(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CorrespondenceFormatError(f"{path}: {exc.strerror}") from None
    return parse_correspondences(text, str(path))


def format_correspondences(X, K, sigma=None, comment=None):
    X = as_array(X)
    out = []
    if comment:
        out.extend(f"# {c}" for c in comment.splitlines())
    out.append("K " + " ".join(repr(float(v)) for v in (K.fx, K.fy, K.cx, K.cy, K.skew)))
    if sigma is not None:
        out.append(f"sigma {float(sigma)!r}")
    out.extend(" ".join(repr(float(v)) for v in row) for row in X)
    return "\n".join(out) + "\n"


def save_correspondences(path, X, K, sigma=None, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_correspondences(X, K, sigma, comment))


# ------------------------------------------------------------------ suite --

@dataclass(frozen=True)
class SuiteEntry:
    name: str
    scene: synth.SceneConfig
    trials: int = 100
    random_motion: bool = True


@dataclass(frozen=True)
class SuiteConfig:
    entries: tuple = ()
    variants: tuple = VARIANTS
    master_seed: int = 0
    engine: engine.EngineConfig = field(default_factory=engine.EngineConfig)
    kappa: float = 0.5
    workers: int = 1

    @classmethod
    def from_dict(cls, d):
        eng = dict(d.get("engine", {}))
        entries = []
        for i, e in enumerate(d.get("configs", [])):
            e = dict(e)
            name = e.pop("name", f"config{i}")
            trials = int(e.pop("trials", 100))
            rand = bool(e.pop("random_motion", True))
            if "K" in e:
                e["K"] = Intrinsics(*e["K"])
            for key in ("depth_range", "image_size"):
                if key in e:
                    e[key] = tuple(e[key])
            entries.append(SuiteEntry(name, synth.SceneConfig(**e), trials, rand))
        return cls(tuple(entries), tuple(d.get("variants", VARIANTS)),
                   int(d.get("master_seed", 0)), engine.EngineConfig(**eng),
                   float(d.get("kappa", 0.5)), int(d.get("workers", 1)))


def load_suite(path):
    with open(path, encoding="utf-8") as fh:
        return SuiteConfig.from_dict(json.load(fh))


def trial_seed(master_seed, entry_index, trial):
    """64-bit seed for one trial, derived from the master seed."""
    ss = np.random.SeedSequence([master_seed, entry_index, trial])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class TrialReport:
    config: str
    trial: int
    variant: str
    seed: int
    outcome: str
    detect_fail: bool
    failure: bool
    n_I: int = 0
    n_star: int = 0
    rot_err: float | None = None
    trans_err: float | None = None
    n_inliers: int = 0
    candidate_count: int = 0
    wall_ms: float = 0.0

    def as_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            del d["wall_ms"]
        return d


def make_scene(entry, seed):
    rng = np.random.default_rng([seed, 1])
    cfg = entry.scene
    if entry.random_motion:
        cfg = replace(cfg, motion_truth=synth.random_motion(rng))
    return synth.generate(replace(cfg, rng_seed=seed))


def assess(result, X, K, noise, alpha=0.05, kappa=0.5, truth=None):
    """Refinement and failure flag for one engine result.

    Returns (n_I, n*_I, failed, refined_motion). A detect-fail is never
    counted as a failure.
    """
    if not result.ok:
        return 0, 0, False, None
    out = result.outcome
    Xi = X[out.inlier_indices]
    post = out.motion
    if len(Xi) >= engine.MINIMAL_SAMPLE:
        try:
            post = refine.mle_refine(out.motion, Xi, K).motion
        except ValueError:
            pass
    n_pre, n_post, failed = refine.failure_metric(out.motion, post, Xi, K, noise, alpha, kappa)
    return n_pre, n_post, failed, post


def run_trial(suite, entry_index, trial):
    entry = suite.entries[entry_index]
    seed = trial_seed(suite.master_seed, entry_index, trial)
    scene = make_scene(entry, seed)
    noise = NoiseModel(scene.sigma if scene.sigma > 0 else DEFAULT_SIGMA)
    configs = [replace(suite.engine, variant=v, rng_seed=seed) for v in suite.variants]
    t0 = time.perf_counter()
    results = engine.run_many(scene.X, scene.K, noise, configs)
    reports = []
    for cfg, res in zip(configs, results):
        n_pre, n_post, failed, post = assess(res, scene.X, scene.K, noise,
                                             cfg.alpha, suite.kappa)
        rot = trans = None
        if post is not None:
            rot = rotation_angle(post.R, scene.motion.R)
            trans = direction_angle(post.t, scene.motion.t)
        reports.append(TrialReport(
            entry.name, trial, cfg.variant.value, seed,
            "Success" if res.ok else "DetectFail",
            detect_fail=not res.ok, failure=bool(res.ok and failed),
            n_I=n_pre, n_star=n_post, rot_err=rot, trans_err=trans,
            n_inliers=len(res.outcome.inlier_indices) if res.ok else 0,
            candidate_count=res.outcome.candidate_count if res.ok else 0))
    wall = (time.perf_counter() - t0) * 1e3
    for r in reports:
        r.wall_ms = wall / len(reports)
    return reports


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(suite):
    """All trial reports, ordered by (config index, trial, variant)."""
    jobs = [(suite, i, k) for i, e in enumerate(suite.entries) for k in range(e.trials)]
    if suite.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(suite.workers) as pool:
            chunks = list(pool.map(_run_trial_args, jobs, chunksize=4))
    else:
        chunks = [run_trial(*job) for job in jobs]
    return [r for chunk in chunks for r in chunk]


def aggregate(reports, suite):
    """One row per suite entry with Detect-fail % and Failure % per variant."""
    rows = []
    for entry in suite.entries:
        row = {"config": entry.name, "trials": entry.trials}
        for v in suite.variants:
            sel = [r for r in reports if r.config == entry.name and r.variant == v]
            n = len(sel)
            df = sum(r.detect_fail for r in sel)
            fl = sum(r.failure for r in sel)
            row[f"{v}_detect_fail"] = df
            row[f"{v}_failure"] = fl
            row[f"{v}_detect_fail_pct"] = df / n * 100.0 if n else 0.0
            row[f"{v}_failure_pct"] = fl / n * 100.0 if n else 0.0
        rows.append(row)
    return rows


@dataclass
class BenchmarkReport:
    rows: list
    trials: list
    master_seed: int

    def to_json(self, timing=False):
        doc = {"master_seed": self.master_seed, "rows": self.rows,
               "trials": [t.as_dict(timing) for t in self.trials]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        if self.rows:
            w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v)
                            for k, v in row.items()})
        return buf.getvalue()


def run_benchmark(suite):
    reports = run_trials(suite)
    return BenchmarkReport(aggregate(reports, suite), reports, suite.master_seed)
