import numpy as np
import pytest

from mostdsa.config import Config
from mostdsa.errors import UsageError
from mostdsa.flow_decoder import decode_schedule, estimate_flow_mask, map_motion
from mostdsa.tensor_ops import Tensor, no_grad
from mostdsa.warp_refine import extract_features, init_model

SMALL = dict(channels=(4, 8, 8), dim=8, heads=2, fme_width=8, refiner_widths=(4, 8, 8), pos_freqs=2, r=3)


@pytest.fixture(scope="module")
def model():
    return init_model(Config(**SMALL), seed=0)


def pair(size=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (size, size)).astype(np.float32), rng.uniform(0, 1, (size, size)).astype(np.float32)


@pytest.fixture(scope="module")
def features(model):
    with no_grad():
        return extract_features(*pair(), model, r=3)


def test_map_motion_small_t_vanishes(features):
    m0t, m1t = map_motion(features.ms, 1e-9)
    assert np.abs(m0t.data).max() < 1e-6 * max(1.0, np.abs(features.ms.M0.data).max())
    np.testing.assert_allclose(m1t.data, features.ms.M1.data, rtol=1e-6)


def test_map_motion_half(features):
    m0t, m1t = map_motion(features.ms, 0.5)
    np.testing.assert_array_equal(m0t.data, 0.5 * features.ms.M0.data)
    np.testing.assert_array_equal(m1t.data, 0.5 * features.ms.M1.data)


def test_map_motion_linear_in_t(features):
    a, _ = map_motion(features.ms, 0.2)
    b, _ = map_motion(features.ms, 0.3)
    c, _ = map_motion(features.ms, 0.5)
    np.testing.assert_allclose(a.data + b.data, c.data, atol=1e-6)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_map_motion_rejects_t_outside_unit_interval(features, t):
    with pytest.raises(UsageError):
        map_motion(features.ms, t)


def test_zero_head_gives_zero_flow_and_half_mask(model, features):
    with no_grad():
        fm = estimate_flow_mask(features.ms, 0.5, features.I0, features.I1, model)
    assert not fm.flow.data.any()
    np.testing.assert_array_equal(fm.mask.data, 0.5)
    assert fm.flow.shape == (1, 4, 32, 32) and fm.mask.shape == (1, 1, 32, 32)


@pytest.mark.parametrize("size", [64, 320])
def test_flow_mask_resolution(size):
    cfg = Config(**SMALL)
    params = init_model(cfg, seed=1)
    rng = np.random.default_rng(size)
    params.set("fme.head.w", rng.normal(0, 0.1, params["fme.head.w"].shape))
    with no_grad():
        feat = extract_features(*pair(size), params, r=3)
        fm = estimate_flow_mask(feat.ms, 0.3, feat.I0, feat.I1, params)
    assert fm.flow.shape[-2:] == (size, size) and fm.mask.shape[-2:] == (size, size)
    mask = fm.mask.data
    assert np.all((mask > 0) & (mask < 1)) and np.all(np.isfinite(fm.flow.data))


def test_decode_schedule_counts_and_reuse(model, features):
    with no_grad():
        single = decode_schedule(features.ms, [0.5], features.I0, features.I1, model)
        triple = decode_schedule(features.ms, [0.25, 0.5, 0.75], features.I0, features.I1, model)
    assert len(single) == 1 and len(triple) == 3
    assert np.array_equal(single[0].flow.data, triple[1].flow.data)
    assert np.array_equal(single[0].mask.data, triple[1].mask.data)


@pytest.mark.parametrize("sched", [[], [0.5, 0.5], [0.7, 0.3], [0.0, 0.5]])
def test_decode_schedule_rejects_bad_schedules(model, features, sched):
    with pytest.raises(UsageError):
        decode_schedule(features.ms, sched, features.I0, features.I1, model)
