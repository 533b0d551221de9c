import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcme import bench, cli, synth
from rcme.core import Intrinsics

K_LINE = "K 500 500 320 240 0"


def _pairs(k, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 400, (k, 4))


def _text(X, header=K_LINE, sigma=None):
    lines = [header] + ([f"sigma {sigma}"] if sigma is not None else [])
    lines += [" ".join(repr(float(v)) for v in row) for row in X]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- parsing --

def test_parse_basic_with_comments():
    X = _pairs(10)
    text = "# a comment\n\n" + _text(X, sigma=0.8).replace("\n", "  # trailing\n", 3)
    Y, K, noise = bench.parse_correspondences(text)
    assert np.array_equal(X, Y)
    assert (K.fx, K.fy, K.cx, K.cy, K.skew) == (500, 500, 320, 240, 0)
    assert noise.sigma == 0.8


def test_seven_pairs_too_few():
    with pytest.raises(bench.CorrespondenceFormatError, match="at least 8"):
        bench.parse_correspondences(_text(_pairs(7)))


def test_sigma_default_logged(caplog):
    with caplog.at_level(logging.INFO, logger="rcme.bench"):
        _, _, noise = bench.parse_correspondences(_text(_pairs(8)), "f.txt")
    assert noise.sigma == 0.5
    assert any("default" in r.message for r in caplog.records)


@pytest.mark.parametrize("text,lineno", [
    ("K 500 500 320\n", 1),
    ("K 500 500 320 240 zero\n", 1),
    ("# c\n1 2 3 4\n", 2),
    (K_LINE + "\n1 2 3\n", 2),
    (K_LINE + "\n1 2 3 4\n1 2 x 4\n", 3),
    (K_LINE + "\nsigma -1\n", 2),
    (K_LINE + "\n" + K_LINE + "\n", 2),
    (K_LINE + "\n1 2 3 4\nsigma 1\n", 3),
    (K_LINE + "\n1 2 nan 4\n", 2),
])
def test_errors_carry_line_numbers(text, lineno):
    with pytest.raises(bench.CorrespondenceFormatError, match=f"src:{lineno}:"):
        bench.parse_correspondences(text, "src")


def test_missing_header():
    with pytest.raises(bench.CorrespondenceFormatError, match="missing K"):
        bench.parse_correspondences("# nothing\n", "src")


def test_missing_file_has_path(tmp_path):
    p = tmp_path / "nope.txt"
    with pytest.raises(bench.CorrespondenceFormatError, match="nope.txt"):
        bench.load_correspondences(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 40), st.integers(0, 2**32 - 1),
       st.floats(0.01, 5.0, allow_nan=False))
def test_round_trip_exact(n, seed, sigma):
    rng = np.random.default_rng(seed)
    X = rng.normal(300, 150, (n, 4))
    K = Intrinsics(*rng.uniform(100, 900, 4), 0.0)
    Y, K2, noise = bench.parse_correspondences(bench.format_correspondences(X, K, sigma, "x"))
    assert np.array_equal(X, Y)
    assert K2 == K and noise.sigma == sigma


def test_synth_round_trip(tmp_path):
    sc = synth.generate(synth.SceneConfig(n_points=30, outlier_ratio=0.2, rng_seed=1))
    p = tmp_path / "s.txt"
    bench.save_correspondences(p, sc.X, sc.K, sc.sigma)
    X, K, noise = bench.load_correspondences(p)
    assert np.array_equal(X, sc.X) and K == sc.K and noise.sigma == sc.sigma


# ----------------------------------------------------------------- suites --

def _suite(trials=2, **kw):
    d = {"configs": [{"name": "a", "n_points": 60, "outlier_ratio": 0.2, "trials": trials}],
         "engine": {"max_iters": 30}, "master_seed": 3}
    d.update(kw)
    return bench.SuiteConfig.from_dict(d)


def test_empty_suite_empty_table():
    rep = bench.run_benchmark(bench.SuiteConfig.from_dict({}))
    assert rep.rows == [] and rep.trials == []
    assert rep.to_csv() == ""
    assert json.loads(rep.to_json())["rows"] == []


def test_trial_seeds_distinct_and_stable():
    seeds = {bench.trial_seed(0, i, k) for i in range(3) for k in range(50)}
    assert len(seeds) == 150
    assert bench.trial_seed(5, 1, 2) == bench.trial_seed(5, 1, 2)


def test_paired_variants_share_scene_and_seed():
    reps = bench.run_trial(_suite(), 0, 0)
    assert [r.variant for r in reps] == ["standard", "prcme", "rcme"]
    assert len({r.seed for r in reps}) == 1


def test_detect_fail_and_failure_exclusive():
    suite = _suite(trials=6, configs=[{"name": "hard", "n_points": 60, "outlier_ratio": 0.6,
                                       "distribution": "clustered", "trials": 6}])
    for r in bench.run_trials(suite):
        assert not (r.detect_fail and r.failure)
        assert r.detect_fail == (r.outcome == "DetectFail")


def test_aggregate_percentages_exact():
    suite = _suite(trials=7)
    rng = np.random.default_rng(0)
    reps = []
    for k in range(7):
        for v in suite.variants:
            df = bool(rng.random() < 0.3)
            reps.append(bench.TrialReport("a", k, v, 0, "DetectFail" if df else "Success",
                                          df, (not df) and bool(rng.random() < 0.4)))
    row = bench.aggregate(reps, suite)[0]
    for v in suite.variants:
        sel = [r for r in reps if r.variant == v]
        assert row[f"{v}_detect_fail_pct"] == sum(r.detect_fail for r in sel) / 7 * 100
        assert row[f"{v}_failure_pct"] == sum(r.failure for r in sel) / 7 * 100


def test_json_byte_identical():
    a = bench.run_benchmark(_suite()).to_json()
    b = bench.run_benchmark(_suite()).to_json()
    assert a == b
    assert "wall_ms" not in a
    assert "wall_ms" in bench.run_benchmark(_suite(trials=1)).to_json(timing=True)


def test_workers_do_not_change_report():
    assert bench.run_benchmark(_suite(trials=3)).to_json() == \
        bench.run_benchmark(_suite(trials=3, workers=2)).to_json()


def test_clean_suite_no_failures():
    # noiseless scenes without outliers: nothing to detect, nothing to fail
    suite = bench.SuiteConfig.from_dict({"configs": [
        {"name": "clean", "n_points": 200, "outlier_ratio": 0.0, "sigma": 0.0, "trials": 30}],
        "master_seed": 7})
    row = bench.run_benchmark(suite).rows[0]
    for v in suite.variants:
        assert row[f"{v}_failure_pct"] == 0.0 and row[f"{v}_detect_fail_pct"] == 0.0


# -------------------------------------------------------------------- cli --

def _write_scene(path, **kw):
    sc = synth.generate(synth.SceneConfig(**kw))
    bench.save_correspondences(path, sc.X, sc.K, sc.sigma or None)
    return sc


def test_cli_estimate_success(tmp_path, capsys):
    p = tmp_path / "s.txt"
    _write_scene(p, n_points=120, outlier_ratio=0.2, rng_seed=2)
    assert cli.main(["estimate", str(p), "--variant", "standard", "--iters", "50"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["outcome"] == "Success" and "refined" in doc


def test_cli_estimate_detect_fail(tmp_path, capsys):
    p = tmp_path / "o.txt"
    _write_scene(p, n_points=80, outlier_ratio=1.0, rng_seed=4)
    code = cli.main(["estimate", str(p), "--iters", "60", "--seed", "1"])
    doc = json.loads(capsys.readouterr().out)
    assert code == 1 and doc == {"outcome": "DetectFail", "reason": "EmptyCandidateSet"}


def test_cli_input_errors(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text(_text(_pairs(7)))
    assert cli.main(["estimate", str(p)]) == 2
    assert cli.main(["estimate", str(tmp_path / "missing.txt")]) == 2
    assert cli.main(["bench", str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err
    assert "bad.txt" in err and "missing.txt" in err


def test_cli_synth_then_estimate(tmp_path, capsys):
    p = tmp_path / "s.txt"
    assert cli.main(["synth", "--n-points", "100", "--outlier-ratio", "0.1", "--seed", "5",
                     "--out", str(p)]) == 0
    X, K, noise = bench.load_correspondences(p)
    assert X.shape == (100, 4) and noise.sigma == 0.5
    out = tmp_path / "m.json"
    assert cli.main(["estimate", str(p), "--variant", "prcme", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["outcome"] == "Success"


def test_cli_bench_writes_csv_and_json(tmp_path):
    cfg = tmp_path / "suite.json"
    cfg.write_text(json.dumps({"configs": [{"name": "a", "n_points": 50, "trials": 2}],
                               "engine": {"max_iters": 20}}))
    base = tmp_path / "rep"
    assert cli.main(["bench", str(cfg), "--seed", "9", "--out", str(base)]) == 0
    doc = json.loads(base.with_suffix(".json").read_text())
    assert doc["master_seed"] == 9 and len(doc["trials"]) == 6
    assert base.with_suffix(".csv").read_text().startswith("config,trials,")
