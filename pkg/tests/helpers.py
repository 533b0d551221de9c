"""Shared oracles for the test suite."""

import numpy as np

from rcme import synth


def central_fd(fun, x, h=1e-6, relative=False):
    """Central differences; `relative` scales each step by its entry's magnitude."""
    x = np.asarray(x, dtype=float)
    floor = 1e-3 * np.abs(x).max()
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h * max(abs(x.flat[k]), floor) if relative else h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))).ravel() / (2 * e.flat[k]))
    return np.stack(cols, axis=-1)


def rel_err(J, Jfd):
    return float(np.abs(J - Jfd).max() / max(np.abs(Jfd).max(), 1e-300))


def random_config(seed, n=20, sigma=0.5):
    """Random motion, scene and consistent f (from the true motion)."""
    rng = np.random.default_rng(seed)
    motion = synth.random_motion(rng)
    scene = synth.generate(synth.SceneConfig(n_points=n, sigma=sigma, motion_truth=motion,
                                             rng_seed=seed))
    f = motion.fundamental(scene.K).ravel()
    return scene, motion, f
