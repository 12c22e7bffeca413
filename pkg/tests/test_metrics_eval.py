import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mostdsa.errors import UsageError
from mostdsa.metrics_eval import (
    EvalReport,
    SequenceRecord,
    aggregate,
    bench_table,
    benchmark,
    evaluate,
    frame_average,
    psnr,
    quantize,
    sequence_record,
    ssim,
)

import oracles

C1, C2 = 0.01 ** 2, 0.03 ** 2


def pair(seed, size=24):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (size, size)), rng.uniform(0, 1, (size, size))


# -- SSIM ---------------------------------------------------------------------------

def test_ssim_identity():
    a, _ = pair(0)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_black_vs_white_closed_form():
    expected = (C1 * C2) / ((1 + C1) * C2)  # means 0 and 1, no variance
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(expected, rel=1e-9)
    assert expected < 1e-3


def test_ssim_symmetric():
    a, b = pair(1)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_rejects_small_images():
    with pytest.raises(UsageError):
        ssim(np.zeros((10, 12)), np.zeros((10, 12)))


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_window_loop_oracle(seed):
    a, b = pair(seed, 20)
    b = 0.5 * a + 0.5 * b  # correlated, so the covariance term matters
    assert ssim(a, b) == pytest.approx(oracles.ssim_loops(a, b), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), amp=st.floats(1e-3, 0.5))
def test_ssim_below_one_for_distinct_images(seed, amp):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (16, 16))
    b = np.clip(a + amp * rng.standard_normal(a.shape), 0, 1)
    if np.array_equal(a, b):
        return
    value = ssim(a, b)
    assert -1 <= value < 1 - 1e-9


# -- PSNR ---------------------------------------------------------------------------

def test_psnr_closed_form():
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_cap():
    a, _ = pair(2)
    assert psnr(a, a) == 100.0


def test_psnr_matches_scalar_oracle():
    a, b = pair(3)
    assert psnr(a, b) == pytest.approx(oracles.psnr_loops(a, b), abs=1e-9)


def test_psnr_strictly_decreases_with_noise():
    a, _ = pair(4)
    noise = np.random.default_rng(5).standard_normal(a.shape)
    values = [psnr(a, a + amp * noise) for amp in (0.001, 0.01, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(values, values[1:]))


# -- aggregation ------------------------------------------------------------------------

def test_aggregate_examples():
    assert aggregate([0.7]) == (0.7, 0.0)
    assert aggregate([0.0, 2.0]) == (1.0, 1.0)
    with pytest.raises(UsageError):
        aggregate([])


def test_aggregate_matches_two_pass_oracle():
    values = list(np.random.default_rng(6).normal(3, 2, 1000))
    mean, std = aggregate(values)
    want_mean, want_std = oracles.mean_std_two_pass(values)
    assert abs(mean - want_mean) < 1e-9 and abs(std - want_std) < 1e-9


def test_sequence_record_averages_positions_first():
    rec = sequence_record("s", [[(0.8, 30.0), (0.9, 32.0)], [(0.7, 28.0), (0.7, 28.0)]])
    assert rec.frames == 4
    assert rec.ssim_mean == pytest.approx(0.775)  # groups average to 0.85 and 0.7
    assert rec.ssim_std == pytest.approx(0.075)
    assert rec.psnr_mean == pytest.approx(29.5)


def test_report_formats():
    report = EvalReport([SequenceRecord("a", 2, 0.9, 0.01, 30.0, 1.0), SequenceRecord("b", 2, 0.8, 0.02, 28.0, 2.0)], label="demo")
    lines = report.to_jsonl().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert list(rec) == ["id", "frames", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std", "seconds", "peak_bytes"]
    table = report.to_table()
    assert table.splitlines()[0] == "demo"
    assert table.splitlines()[-1].split()[:3] == ["ALL", "4", "0.850000"]
    assert report.ssim == pytest.approx((0.85, 0.05))


def sequences(n=3, frames=6, size=16):
    rng = np.random.default_rng(7)
    return [(f"seq{i}", rng.uniform(0, 1, (frames, size, size))) for i in range(n)]


def test_ground_truth_predictions_score_perfectly():
    seqs = [(name, quantize(s)) for name, s in sequences()]

    def ground_truth(I0, I1, times):
        for _, s in seqs:
            for i in range(len(s) - len(times) - 1):
                if np.array_equal(I0, s[i]) and np.array_equal(I1, s[i + len(times) + 1]):
                    return [s[i + k + 1] for k in range(len(times))]
        raise AssertionError("unknown pair")

    for n in (1, 2, 3):
        report = evaluate(ground_truth, seqs, n)
        assert len(report.records) == len(seqs)
        assert report.ssim[0] == pytest.approx(1.0, abs=1e-12)
        assert report.psnr == (100.0, 0.0)
        groups = sum(len(s) - n - 1 for _, s in seqs)
        assert len(report.per_frame_ssim) == groups * n


def test_frame_average_is_time_weighted():
    a, b = np.zeros((2, 2)), np.ones((2, 2))
    out = frame_average(a, b, (0.25, 0.5))
    assert out[0][0, 0] == 0.25 and out[1][0, 0] == 0.5


def test_quantize_round_trips_eight_bit_values():
    levels = np.arange(256) / 255.0
    np.testing.assert_array_equal(quantize(levels), levels)
    assert quantize(np.array([0.5 / 255 - 1e-9, 1.7]))[1] == 1.0


# -- benchmark harness ----------------------------------------------------------------------

def test_benchmark_repeats_and_warmup():
    calls = []

    def run(I0, I1, sched):
        calls.append(len(sched))
        return [I0 for _ in sched]

    pairs = [(np.zeros((4, 4)), np.zeros((4, 4)))] * 2
    rows = benchmark(run, pairs, [(0.5,), (0.25, 0.5, 0.75)], repeats=1, warmup=1)
    assert [len(r.timings) for r in rows] == [1, 1]
    assert rows[0].seconds == rows[0].timings[0]
    assert calls == [1, 1, 1, 3, 3, 3]  # one warm-up, then one timed pass over both pairs
    table = bench_table(rows, (4, 4))
    assert len(table.splitlines()) == 2 + 1 + 2


def test_benchmark_median_of_repeats():
    rows = benchmark(lambda a, b, s: a, [(np.zeros(1), np.zeros(1))], [(0.5,)], repeats=5)
    assert rows[0].seconds == float(np.median(rows[0].timings))
    with pytest.raises(UsageError):
        benchmark(lambda a, b, s: a, [(np.zeros(1), np.zeros(1))], [(0.5,)], repeats=0)
