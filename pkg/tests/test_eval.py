from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtransfer.collect import CollectConfig
from simtransfer.scoring import ScoreCurve, normalized_score, sample_complexity
from simtransfer.sweep import CSV_HEADER, MethodConfig, SweepSpec, perturb, read_sweep_csv, run_sweep, source_params


def _curve(points):
    c = ScoreCurve()
    for n, s in points:
        c.append(n, s)
    return c


def _brute_sample_complexity(samples, scores, thr=0.75):
    def med3(i):
        win = sorted(scores[max(0, i - 1) : i + 2])
        return win[len(win) // 2] if len(win) % 2 else 0.5 * (win[0] + win[1])

    for i in range(len(scores)):
        if scores[i] >= thr and all(med3(j) >= thr for j in range(i, len(scores))):
            return samples[i]
    return None


def test_normalized_score_examples():
    assert normalized_score(-2.0, -2.0, -10.0) == 1.0
    assert normalized_score(-10.0, -2.0, -10.0) == 0.0
    assert normalized_score(-6.0, -2.0, -10.0) == 0.5
    assert normalized_score(100.0, -2.0, -10.0) == 1.5
    assert normalized_score(-100.0, -2.0, -10.0) == -0.5
    with pytest.raises(ValueError):
        normalized_score(0.0, -3.0, -3.0)


@settings(max_examples=100, deadline=None)
@given(
    r=st.floats(-100, 100), e=st.floats(-50, 50), gap=st.floats(0.1, 50),
    scale=st.floats(0.01, 100), shift=st.floats(-100, 100),
)
def test_normalized_score_affine_invariant(r, e, gap, scale, shift):
    z = e - gap
    a = normalized_score(r, e, z, clip=False)
    b = normalized_score(scale * r + shift, scale * e + shift, scale * z + shift, clip=False)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_sample_complexity_examples():
    assert sample_complexity(_curve([(5000, 0.5), (10000, 0.8), (15000, 0.85)])) == 10000
    assert sample_complexity(_curve([(5000, 0.5), (10000, 0.6)])) is None
    assert sample_complexity(ScoreCurve()) is None
    # a single dip after the crossing is absorbed by the moving median
    assert sample_complexity(_curve([(1, 0.8), (2, 0.9), (3, 0.5), (4, 0.9), (5, 0.9)])) == 1
    # two dips in a row are not, so the crossing moves past them
    assert sample_complexity(_curve([(1, 0.8), (2, 0.9), (3, 0.5), (4, 0.5), (5, 0.9), (6, 0.9)])) == 5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.2), min_size=1, max_size=12))
def test_sample_complexity_matches_brute_scan(scores):
    samples = [5000 * (i + 1) for i in range(len(scores))]
    assert sample_complexity(_curve(zip(samples, scores))) == _brute_sample_complexity(samples, scores)


def test_curve_requires_increasing_samples():
    c = _curve([(5000, 0.1)])
    with pytest.raises(ValueError):
        c.append(5000, 0.2)


def test_spec_validation_and_perturb():
    with pytest.raises(ValueError):
        SweepSpec("bouncer1d", "expert", "tilt").validate()
    with pytest.raises(ValueError):
        SweepSpec("reacher2", "magic", "tilt").validate()
    spec = SweepSpec("reacher2", "expert", "gravity_scale")
    assert spec.values == [0.8, 0.9, 1.0, 1.1, 1.2]
    assert source_params(spec).plane_tilt == pytest.approx(math.pi / 2)
    assert perturb(source_params(spec), "tilt", 90.0).plane_tilt == pytest.approx(math.pi / 2)
    noisy = perturb(source_params(SweepSpec("bouncer1d", "expert", "noise")), "noise", (1.0, 0.9))
    assert (noisy.noise.sigma, noisy.noise.rho) == (1.0, 0.9)


FAST = MethodConfig(collect=CollectConfig(eval_episodes=2))


@pytest.fixture(scope="module")
def tilt_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    spec = SweepSpec("reacher2", "expert", "tilt", [0.0, 15.0, 30.0, 45.0, 60.0, 75.0], seeds=10)
    return run_sweep(spec, FAST, out), out


def test_sweep_bookkeeping(tilt_sweep):
    rows, out = tilt_sweep
    assert len(rows) == 60
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 61
    back = read_sweep_csv(out / "sweep.csv")
    assert {r["samples_to_75"] for r in back} == {"NA"}
    assert [float(r["score"]) for r in back] == [r["score"] for r in rows]


def test_expert_on_identity_perturbation(tilt_sweep):
    rows, _ = tilt_sweep
    at_zero = [r["score"] for r in rows if r["value"] == "0.0"]
    assert np.median(at_zero) >= 0.95


def test_sweep_deterministic(tmp_path):
    spec = SweepSpec("bouncer1d", "expert", "gravity_scale", [0.9, 1.1], seeds=2)
    run_sweep(spec, FAST, tmp_path / "a")
    run_sweep(spec, FAST, tmp_path / "b")
    for name in ("sweep.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
