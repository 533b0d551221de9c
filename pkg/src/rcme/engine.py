"""Robust camera-motion estimators: Standard RANSAC, pRCME and RCME.

All three share one iteration skeleton and draw the minimal sample of
iteration j from an RNG stream seeded by (seed, j), so runs of different
variants with the same seed see the same samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np

from . import batch
from . import fmatrix as fm
from .core import CameraMotion, NoiseModel, as_array, rot_to_quat
from .stats import (SignificanceConfig, chi2_inv_cdf, gaussian_diff_entropies,
                    quality_z)

MINIMAL_SAMPLE = 8


class Variant(str, Enum):
    STANDARD = "standard"
    PRCME = "prcme"
    RCME = "rcme"


class FailReason(str, Enum):
    EMPTY_CANDIDATE_SET = "EmptyCandidateSet"
    TOO_FEW_CORRESPONDENCES = "TooFewCorrespondences"


class TooFewCorrespondences(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    variant: Variant = Variant.RCME
    max_iters: int = 200
    alpha: float = 0.05
    mu: float = -3.53
    lam: float = 0.7
    omega_prior: float = 0.5
    early_term_entropy: float | None = None
    rng_seed: int = 0
    chi2_dof: int = 3
    z_sign: int = 1
    # hypotheses evaluated per vectorized batch; affects speed, not results
    batch_size: int = 50

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.5 <= self.lam <= 1.0):
            raise ValueError("lam must lie in [0.5, 1]")
        if not (0.0 < self.omega_prior <= 1.0):
            raise ValueError("omega_prior must lie in (0, 1]")
        SignificanceConfig(self.alpha, self.z_sign)

    @cached_property
    def significance(self):
        return SignificanceConfig(self.alpha, self.z_sign)

    @cached_property
    def inlier_thresh(self):
        return chi2_inv_cdf(self.chi2_dof, 1 - self.alpha)


@dataclass(frozen=True, eq=False)
class CandidateModel:
    motion: CameraMotion
    inlier_indices: np.ndarray
    scores: np.ndarray
    psi: float
    s: float
    z: float
    iteration: int


@dataclass
class IterationRecord:
    iteration: int
    sample: tuple
    status: str = "ok"
    consistence: bool | None = None
    n_inliers: int = 0
    psi: float = math.nan
    s: float = math.nan
    z: float = math.nan
    z_pass: bool | None = None
    size_pass: bool | None = None
    omega: float = math.nan
    candidate: bool = False

    def as_dict(self):
        return {
            "iteration": self.iteration,
            "sample": list(self.sample),
            "status": self.status,
            "consistence": self.consistence,
            "n_inliers": self.n_inliers,
            "psi": _json_float(self.psi),
            "s": _json_float(self.s),
            "z": _json_float(self.z),
            "z_pass": self.z_pass,
            "size_pass": self.size_pass,
            "omega": _json_float(self.omega),
            "candidate": self.candidate,
        }


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


@dataclass(frozen=True, eq=False)
class Success:
    motion: CameraMotion
    inlier_indices: np.ndarray
    candidate_count: int
    selected: CandidateModel | None = None
    ok = True


@dataclass(frozen=True)
class DetectFail:
    reason: FailReason
    ok = False


@dataclass(eq=False)
class RunResult:
    outcome: Success | DetectFail
    records: list = field(default_factory=list)
    candidates: list = field(default_factory=list)

    @property
    def ok(self):
        return self.outcome.ok


def iteration_rng(seed, j):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, j])


def sample_minimal(n, rng, m=MINIMAL_SAMPLE):
    """m distinct indices drawn uniformly from range(n)."""
    if n < m:
        raise TooFewCorrespondences(f"need at least {m} correspondences, got {n}")
    return rng.choice(n, size=m, replace=False)


def sample_consistence_test(samples, motion, cov_p, K, noise, config):
    """True when every instantiating sample agrees with the motion."""
    _, _, mahal, valid = fm.sampson_residuals(samples, motion.q, motion.t, cov_p, K, noise)
    return bool(np.all(valid) and np.all(mahal <= config.inlier_thresh))


def find_and_score_inliers(X, motion, cov_p, K, noise, config):
    """Inlier indices under the chi-square test and their entropy scores."""
    _, cov, mahal, valid = fm.sampson_residuals(X, motion.q, motion.t, cov_p, K, noise)
    idx = np.flatnonzero(valid & (mahal <= config.inlier_thresh))
    if idx.size == 0:
        return idx, np.zeros(0)
    return idx, gaussian_diff_entropies(cov[idx])


def inlier_quality_test(scores, n, omega, config):
    """(passed, z_pass, size_pass, psi, s, z) for one inlier set."""
    nj = len(scores)
    if nj < 2:
        return False, False, False, math.nan, math.nan, math.nan
    psi, s, z = quality_z(scores, config.mu)
    z_pass = bool(z <= config.significance.z_thresh)
    size_pass = bool(nj / n >= config.lam * omega)
    return z_pass and size_pass, z_pass, size_pass, psi, s, z


def sampson_distance_sq(F, X):
    eps, _, gg = fm.sampson_terms(F, X)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = eps**2 / gg
    return np.where(gg > 0, d, np.inf)


def run(correspondences, K, noise, config):
    """Run one estimator; returns a RunResult with outcome and per-iteration records."""
    X = as_array(correspondences)
    noise = noise if isinstance(noise, NoiseModel) else NoiseModel(float(noise))
    n = X.shape[0]
    if n < MINIMAL_SAMPLE:
        return RunResult(DetectFail(FailReason.TOO_FEW_CORRESPONDENCES))
    if config.variant is Variant.STANDARD:
        return _run_standard(X, K, noise, config)
    return _run_rcme(X, K, noise, config)


def _sample_rows(n, config, js):
    return np.stack([sample_minimal(n, iteration_rng(config.rng_seed, j)) for j in js])


@dataclass(eq=False)
class _Evaluation:
    # everything about iteration j that does not depend on the variant
    status: str
    sample: tuple
    consistence: bool | None = None
    motion: CameraMotion | None = None
    inliers: np.ndarray | None = None
    scores: np.ndarray | None = None


def _evaluate_batch(X, K, noise, config, js):
    idx = _sample_rows(X.shape[0], config, js)
    H = batch.evaluate(X, idx, K, noise.sigma, config.inlier_thresh)
    out = []
    for b, row in enumerate(idx):
        sample = tuple(int(i) for i in row)
        if H.status[b] != batch.OK:
            out.append(_Evaluation(batch.STATUS_NAMES[H.status[b]], sample))
            continue
        motion = CameraMotion._unchecked(H.q[b], H.t[b], H.cov_p[b])
        out.append(_Evaluation("ok", sample, bool(H.consistence[b]), motion,
                               H.inliers[b], H.scores[b]))
    return out


class _Evaluator:
    """Evaluates iterations lazily, batch_size at a time, and memoizes them."""

    def __init__(self, X, K, noise, config):
        self.X, self.K, self.noise, self.config = X, K, noise, config
        self.cache = {}

    def __call__(self, j, stop):
        if j not in self.cache:
            js = range(j, min(j + self.config.batch_size, stop))
            self.cache.update(zip(js, _evaluate_batch(self.X, self.K, self.noise,
                                                      self.config, js)))
        return self.cache[j]


def _select(evaluate, n, config):
    """Apply the variant's tests to a stream of iteration evaluations."""
    check_samples = config.variant is Variant.RCME
    records, candidates = [], []
    omega = config.omega_prior
    for j in range(config.max_iters):
        ev = evaluate(j)
        rec = IterationRecord(j, ev.sample, ev.status)
        records.append(rec)
        if ev.status != "ok":
            continue
        nj = len(ev.inliers)
        rec.n_inliers = nj
        # running inlier-ratio estimate over every instantiated model so far,
        # so both model-quality variants share one trajectory
        omega = max(omega, nj / n)
        rec.omega = omega
        rec.consistence = ev.consistence
        if check_samples and not ev.consistence:
            continue
        passed, rec.z_pass, rec.size_pass, rec.psi, rec.s, rec.z = \
            inlier_quality_test(ev.scores, n, omega, config)
        if not passed:
            continue
        rec.candidate = True
        candidates.append(CandidateModel(ev.motion, ev.inliers, ev.scores,
                                         rec.psi, rec.s, rec.z, j))
        if config.early_term_entropy is not None and rec.psi < config.early_term_entropy:
            break
    if not candidates:
        return RunResult(DetectFail(FailReason.EMPTY_CANDIDATE_SET), records, candidates)
    best = min(candidates, key=lambda c: (c.psi, c.iteration))
    return RunResult(Success(best.motion, best.inlier_indices, len(candidates), best),
                     records, candidates)


def _run_rcme(X, K, noise, config):
    ev = _Evaluator(X, K, noise, config)
    return _select(lambda j: ev(j, config.max_iters), X.shape[0], config)


def run_many(correspondences, K, noise, configs):
    """Run several configurations that differ only in variant, sharing work.

    pRCME and RCME with the same seed instantiate and score identical
    models, so each iteration is evaluated once and cached. Results equal
    those of separate `run` calls.
    """
    X = as_array(correspondences)
    noise = noise if isinstance(noise, NoiseModel) else NoiseModel(float(noise))
    if X.shape[0] < MINIMAL_SAMPLE:
        return [RunResult(DetectFail(FailReason.TOO_FEW_CORRESPONDENCES)) for _ in configs]
    shared = {}
    out = []
    for cfg in configs:
        if cfg.variant is Variant.STANDARD:
            out.append(_run_standard(X, K, noise, cfg))
            continue
        key = (cfg.rng_seed, cfg.alpha, cfg.chi2_dof, cfg.batch_size)
        ev = shared.setdefault(key, _Evaluator(X, K, noise, cfg))
        out.append(_select(lambda j, ev=ev, c=cfg: ev(j, c.max_iters), X.shape[0], cfg))
    return out


def _run_standard(X, K, noise, config):
    n = X.shape[0]
    thresh = noise.sigma**2 * chi2_inv_cdf(1, 1 - config.alpha)
    idx = _sample_rows(n, config, range(config.max_iters))
    f, ok = batch.eight_point(X[idx])
    records = [IterationRecord(j, tuple(int(i) for i in row)) for j, row in enumerate(idx)]
    live = np.flatnonzero(ok)
    for j in np.flatnonzero(~ok):
        records[j].status = "degenerate"
    if live.size:
        counts, masks = batch.inlier_counts(X, f[live], thresh)
        for j, c in zip(live, counts):
            records[j].n_inliers = int(c)
        # first iteration reaching the largest consensus
        k = int(np.argmax(counts))
        best = (f[live[k]], np.flatnonzero(masks[k]), int(live[k]))
    else:
        # every sample degenerate: fall back to the full set
        best = (fm.estimate_f_8point(X), np.arange(n), -1)
    f, inliers, j = best
    support = inliers if len(inliers) >= MINIMAL_SAMPLE else np.arange(n)
    q, t = _decompose_on_support(f, K, X[support])
    if j >= 0:
        records[j].candidate = True
    return RunResult(Success(CameraMotion(q, t), inliers, 1), records, [])


def _decompose_on_support(f, K, Xs):
    try:
        q, t, _ = fm.decompose_to_motion(f, K, Xs)
        return q, t
    except fm.CheiralityTie:
        # a tie on the full support still needs an answer: take the first maximum
        Km = K.K
        E = fm.project_essential(Km.T @ f.reshape(3, 3) @ Km)
        Ki = np.linalg.inv(Km)
        y1 = np.c_[Xs[:, :2], np.ones(len(Xs))] @ Ki.T
        y2 = np.c_[Xs[:, 2:], np.ones(len(Xs))] @ Ki.T
        cands = fm.essential_candidates(E)
        votes = [fm.cheirality_votes(R, t, y1[:, :2] / y1[:, 2:], y2[:, :2] / y2[:, 2:])
                 for R, t in cands]
        R, t = cands[int(np.argmax(votes))]
        return rot_to_quat(R), t / np.linalg.norm(t)
