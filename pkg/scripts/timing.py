"""Wall time of one RANSAC loop and one refinement against the number of points.

    python3 scripts/timing.py
"""

import time

import numpy as np

from rcme import engine, refine, synth
from rcme.core import NoiseModel
from rcme.engine import EngineConfig, Variant


def best_of(fn, reps=3):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    noise = NoiseModel(0.5)
    print(f"{'n':>6}{'rcme loop ms':>14}{'standard ms':>13}{'refine ms':>11}")
    for n in (250, 500, 1000, 2000):
        sc = synth.generate(synth.SceneConfig(n_points=n, outlier_ratio=0.3, rng_seed=n))
        cfg = EngineConfig(max_iters=40)
        t_r = best_of(lambda: engine.run(sc.X, sc.K, noise, cfg))
        t_s = best_of(lambda: engine.run(sc.X, sc.K, noise,
                                         EngineConfig(variant=Variant.STANDARD, max_iters=40)))
        inl = np.flatnonzero(sc.inlier)
        t_b = best_of(lambda: refine.mle_refine(sc.motion, sc.X[inl], sc.K,
                                                refine.LMConfig(max_iters=5)))
        print(f"{n:>6}{t_r * 1e3:>14.1f}{t_s * 1e3:>13.1f}{t_b * 1e3:>11.1f}")


if __name__ == "__main__":
    main()
