import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mostdsa.config import Config
from mostdsa.errors import ConfigError, UsageError
from mostdsa.flow_decoder import FlowMask
from mostdsa.losses import PerceptualExtractor
from mostdsa.tensor_ops import Tensor, grad_check, no_grad
from mostdsa.train import batch_loss
from mostdsa.warp_refine import (
    assemble_ot,
    backwarp,
    blend,
    blend_warped,
    extract_features,
    feature_passes,
    init_model,
    interpolate,
    synthesize,
)

import oracles

SMALL = dict(channels=(4, 8, 8), dim=8, heads=2, fme_width=8, refiner_widths=(4, 8, 8), pos_freqs=2, r=3)


def img(*shape, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def flowmask(flow0, flow1, mask):
    flow = np.concatenate([flow0, flow1], axis=1)
    return FlowMask(Tensor(flow), Tensor(mask), 0.5)


# -- backwarp -------------------------------------------------------------------

def test_backwarp_zero_flow_identity():
    src = img(1, 2, 7, 9)
    np.testing.assert_array_equal(backwarp(Tensor(src), Tensor(np.zeros((1, 2, 7, 9)))).data, src)


def test_backwarp_unit_shift_on_ramp():
    ramp = np.tile(np.arange(10.0), (6, 1))[None, None]
    flow = np.zeros((1, 2, 6, 10))
    flow[:, 0] = 1.0
    out = backwarp(Tensor(ramp), Tensor(flow)).data[0, 0]
    np.testing.assert_array_equal(out[:, :-1], ramp[0, 0, :, 1:])
    assert not out[:, -1].any()  # sampled past the right edge


def test_backwarp_flow_outside_reads_zero():
    flow = np.full((1, 2, 5, 5), 50.0)
    assert not backwarp(Tensor(img(1, 1, 5, 5)), Tensor(flow)).data.any()


def test_backwarp_integer_flow_exact_in_interior():
    rng = np.random.default_rng(1)
    src = img(1, 1, 12, 12)
    flow = rng.integers(-2, 3, (1, 2, 12, 12)).astype(np.float64)
    out = backwarp(Tensor(src), Tensor(flow)).data[0, 0]
    for y in range(2, 10):
        for x in range(2, 10):
            assert out[y, x] == src[0, 0, y + int(flow[0, 1, y, x]), x + int(flow[0, 0, y, x])]


def test_backwarp_matches_bilinear_oracle():
    rng = np.random.default_rng(2)
    src = img(1, 1, 9, 11, seed=3)
    flow = rng.uniform(-3, 3, (1, 2, 9, 11))
    out = backwarp(Tensor(src), Tensor(flow)).data[0, 0]
    np.testing.assert_allclose(out, oracles.backwarp_loops(src[0, 0], flow[0, 0], flow[0, 1]), atol=1e-12)


# -- blend ------------------------------------------------------------------------

def test_blend_mask_one_is_frame_zero_warp():
    I0, I1 = img(1, 1, 6, 6, seed=1), img(1, 1, 6, 6, seed=2)
    f0 = np.random.default_rng(3).uniform(-1, 1, (1, 2, 6, 6))
    fm = flowmask(f0, np.zeros((1, 2, 6, 6)), np.ones((1, 1, 6, 6)))
    np.testing.assert_array_equal(blend(Tensor(I0), Tensor(I1), fm).data, backwarp(Tensor(I0), Tensor(f0)).data)


def test_blend_mask_zero_is_frame_one_warp():
    I0, I1 = img(1, 1, 6, 6, seed=1), img(1, 1, 6, 6, seed=2)
    f1 = np.random.default_rng(4).uniform(-1, 1, (1, 2, 6, 6))
    fm = flowmask(np.zeros((1, 2, 6, 6)), f1, np.zeros((1, 1, 6, 6)))
    np.testing.assert_array_equal(blend(Tensor(I0), Tensor(I1), fm).data, backwarp(Tensor(I1), Tensor(f1)).data)


def test_blend_half_mask_identical_frames():
    I0 = img(1, 1, 6, 6)
    fm = flowmask(np.zeros((1, 2, 6, 6)), np.zeros((1, 2, 6, 6)), np.full((1, 1, 6, 6), 0.5))
    np.testing.assert_array_equal(blend(Tensor(I0), Tensor(I0.copy()), fm).data, I0)


def test_blend_matches_scalar_oracle():
    w0, w1, mask = img(1, 1, 8, 8, seed=5), img(1, 1, 8, 8, seed=6), img(1, 1, 8, 8, seed=7)
    out = blend_warped(Tensor(w0), Tensor(w1), Tensor(mask)).data
    np.testing.assert_allclose(out, oracles.blend_loops(w0, w1, mask), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_blend_is_convex(seed):
    rng = np.random.default_rng(seed)
    w0, w1, mask = rng.uniform(0, 1, (1, 1, 5, 5)), rng.uniform(0, 1, (1, 1, 5, 5)), rng.uniform(0, 1, (1, 1, 5, 5))
    out = blend_warped(Tensor(w0), Tensor(w1), Tensor(mask)).data
    assert np.all(out >= np.minimum(w0, w1) - 1e-12) and np.all(out <= np.maximum(w0, w1) + 1e-12)


# -- O_t -----------------------------------------------------------------------------

def ot_inputs():
    parts = [Tensor(img(1, 1, 6, 6, seed=s)) for s in range(4)]
    fm = flowmask(img(1, 2, 6, 6, seed=5), img(1, 2, 6, 6, seed=6), img(1, 1, 6, 6, seed=7))
    return parts, fm


def test_ot_channels_and_order():
    (I0, I1, w0, w1), fm = ot_inputs()
    ot = assemble_ot(I0, I1, w0, w1, fm)
    assert ot.shape == (1, 9, 6, 6)
    np.testing.assert_array_equal(ot.data[:, 0:1], I0.data)
    np.testing.assert_array_equal(ot.data[:, 4:8], fm.flow.data)
    np.testing.assert_array_equal(ot.data[:, 8:9], fm.mask.data)


def test_ot_order_guard():
    (I0, I1, w0, w1), fm = ot_inputs()
    a = assemble_ot(I0, I1, w0, w1, fm).data
    b = assemble_ot(I1, I0, w0, w1, fm).data
    assert not np.array_equal(a, b)


def test_ot_shape_mismatch():
    (I0, I1, w0, w1), fm = ot_inputs()
    with pytest.raises(ConfigError):
        assemble_ot(I0, Tensor(np.zeros((1, 1, 5, 6))), w0, w1, fm)


# -- refiner and end-to-end ---------------------------------------------------------

@pytest.fixture(scope="module")
def model():
    return init_model(Config(**SMALL), seed=0)


def test_zero_output_layer_leaves_blend(model):
    I0, I1 = img(32, 32, seed=1).astype(np.float32), img(32, 32, seed=2).astype(np.float32)
    with no_grad():
        s = interpolate(I0, I1, [0.4], model, r=3, details=True)[0]
    assert not s.residual.data.any()
    np.testing.assert_array_equal(s.frame.data, np.clip(s.blend.data, 0, 1))


@pytest.mark.parametrize("size", [(64, 64), (320, 320), (30, 34)])
def test_output_shape_matches_input(model, size):
    I0 = img(*size, seed=1).astype(np.float32)
    with no_grad():
        out = interpolate(I0, I0, [0.5], model, r=3)
    assert out[0].shape == (1, 1) + size


def test_static_scene_with_zero_heads(model):
    I0 = img(32, 32, seed=3).astype(np.float32)
    with no_grad():
        outs = interpolate(I0, I0.copy(), [0.25, 0.5, 0.75], model, r=3)
    for o in outs:
        assert np.abs(o.data[0, 0] - I0).max() < 1e-3


def test_two_time_schedule_gives_two_frames(model):
    I0, I1 = img(16, 16, seed=1).astype(np.float32), img(16, 16, seed=2).astype(np.float32)
    with no_grad():
        assert len(interpolate(I0, I1, [0.33, 0.67], model, r=3)) == 2


def trained_like(seed=0, dtype=np.float32):
    """Small model with non-zero heads so every branch contributes."""
    params = init_model(Config(**SMALL), seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed)
    params.set("fme.head.w", rng.normal(0, 0.3, params["fme.head.w"].shape))
    params.set("ref.out.w", rng.normal(0, 0.1, params["ref.out.w"].shape))
    return params


def test_sub_schedule_outputs_bit_identical():
    params = trained_like()
    I0, I1 = img(32, 32, seed=4).astype(np.float32), img(32, 32, seed=5).astype(np.float32)
    with no_grad():
        full = interpolate(I0, I1, [0.25, 0.5, 0.75], params, r=3)
        for i, t in enumerate((0.25, 0.5, 0.75)):
            alone = interpolate(I0, I1, [t], params, r=3)[0]
            assert np.array_equal(alone.data, full[i].data)
        pair = interpolate(I0, I1, [0.25, 0.75], params, r=3)
        assert np.array_equal(pair[1].data, full[2].data)


def test_feature_extraction_runs_once_per_pair():
    params = trained_like()
    I0, I1 = img(16, 16, seed=4).astype(np.float32), img(16, 16, seed=5).astype(np.float32)
    for sched in ([0.5], [0.33, 0.67], [0.25, 0.5, 0.75], [0.1, 0.2, 0.3, 0.4, 0.6]):
        feature_passes.reset()
        with no_grad():
            interpolate(I0, I1, sched, params, r=3)
        assert feature_passes.count == 1


def test_interpolate_rejects_bad_input(model):
    I0 = img(16, 16).astype(np.float32)
    with pytest.raises(ConfigError):
        interpolate(I0, img(16, 20).astype(np.float32), [0.5], model, r=3)
    with pytest.raises(UsageError):
        interpolate(I0, I0, [], model, r=3)


def test_end_to_end_gradient_32x32():
    cfg = Config(**SMALL, loss="l1")
    params = trained_like(seed=2, dtype=np.float64)
    rng = np.random.default_rng(7)
    batch = rng.uniform(0, 1, (1, 3, 32, 32))
    px = PerceptualExtractor()

    def loss(p):
        return batch_loss(p, batch, cfg, 0, px)[0]

    names = [n for n, _ in params.items()]
    picked = rng.choice(len(names), size=10, replace=False)
    for i in picked:
        name = names[int(i)]
        report = grad_check(loss, params, name, tolerance=1e-3, h=1e-4, max_entries=1, seed=int(i), shrink=4)
        assert report.passed, str(report)
