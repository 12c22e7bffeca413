import numpy as np
import pytest

from mostdsa.encoder import (
    branch_count,
    encode,
    extract_pyramid,
    fuse_frame,
    fuse_level,
    init_encoder,
    pad_to_multiple,
)
from mostdsa.errors import ConfigError
from mostdsa.tensor_ops import ParamStore, Tensor

# Level norms of the seed-0 encoder on the seed-0 uniform 64x64 frame, recorded
# once from this implementation and frozen as a regression guard.
GOLDEN_LEVEL_NORMS = (30.18185795210616, 1.2120060308337086, 0.06222930021456407)


@pytest.fixture(scope="module")
def params():
    p = ParamStore(seed=0)
    init_encoder(p)
    return p


def frame(seed=0, size=64):
    return np.random.default_rng(seed).uniform(0, 1, (1, 1, size, size)).astype(np.float32)


def test_pyramid_sizes_and_channels(params):
    pyr = extract_pyramid(Tensor(frame()), params)
    assert [lvl.shape for lvl in pyr] == [(1, 16, 64, 64), (1, 32, 32, 32), (1, 64, 16, 16)]


def test_zero_image_gives_zero_pyramid(params):
    pyr = extract_pyramid(Tensor(np.zeros((1, 1, 32, 32), np.float32)), params)
    for lvl in pyr:
        assert not lvl.data.any()


def test_pyramid_golden_norms(params):
    pyr = extract_pyramid(Tensor(frame()), params)
    norms = [float(np.linalg.norm(lvl.data.astype(np.float64))) for lvl in pyr]
    np.testing.assert_allclose(norms, GOLDEN_LEVEL_NORMS, rtol=1e-5)


def test_pyramid_rejects_unpadded_input(params):
    with pytest.raises(ConfigError):
        extract_pyramid(Tensor(np.zeros((1, 1, 30, 32), np.float32)), params)


def test_pad_to_multiple():
    img, size = pad_to_multiple(np.ones((1, 1, 30, 33)))
    assert img.shape == (1, 1, 32, 36) and size == (30, 33)
    assert img[..., 30:, :].sum() == 0 and img[..., :, 33:].sum() == 0


def test_branch_counts():
    assert [branch_count(i) for i in range(3)] == [1, 1, 2]


def test_fuse_level_zero_keeps_spatial_size(params):
    pyr = extract_pyramid(Tensor(frame()), params)
    out = fuse_level(pyr[2], 0, params)
    assert out.shape[-2:] == pyr[2].shape[-2:]


def test_fuse_level_two_branches_share_dims(params):
    from mostdsa.tensor_ops import kernels as K

    pyr = extract_pyramid(Tensor(frame()), params)
    shapes = []
    for nb in (1, 2):
        name = f"enc.fuse2.a{nb}"
        shapes.append(K.conv2d(pyr[0], params[f"{name}.w"], params[f"{name}.b"], stride=4, padding=nb, dilation=nb).shape)
    assert shapes[0] == shapes[1] == (1, 16, 16, 16)


def test_all_fused_levels_land_at_quarter_resolution(params):
    pyr = extract_pyramid(Tensor(frame(size=48)), params)
    for i in range(3):
        assert fuse_level(pyr[2 - i], i, params).shape[-2:] == (12, 12)


@pytest.mark.parametrize("channels", [(4, 6, 10), (3, 5, 7), (8, 8, 8)])
def test_fused_channel_count_is_sum_of_branches(channels):
    p = ParamStore(seed=1)
    init_encoder(p, channels=channels, dim=12)
    pyr = extract_pyramid(Tensor(frame(size=16)), p)
    total = 0
    for i in range(3):
        c = channels[2 - i]
        out = fuse_level(pyr[2 - i], i, p)
        assert out.shape[1] == c * branch_count(i)
        total += out.shape[1]
    assert p["enc.proj.w"].shape == (12, total, 1, 1)


def test_token_shape(params):
    _, tok = encode(Tensor(frame()), params)
    assert tok.tokens.shape == (1, 256, 64) and tok.grid == (16, 16)


def test_tokens_are_standardized(params):
    _, tok = encode(Tensor(frame()), params)
    rows = tok.tokens.data.astype(np.float64)
    assert np.abs(rows.mean(axis=-1)).max() < 1e-5
    assert np.abs(rows.var(axis=-1) - 1).max() < 1e-4


def test_brightness_changes_activations_not_token_statistics(params):
    f = frame(3)
    _, a = encode(Tensor(f), params)
    _, b = encode(Tensor(2 * f), params)
    assert not np.allclose(a.std, b.std)
    rows = b.tokens.data.astype(np.float64)
    assert np.abs(rows.var(axis=-1) - 1).max() < 1e-4


def test_translation_by_four_pixels_shifts_coarse_level_by_one_token(params):
    big = np.random.default_rng(5).uniform(0, 1, (1, 1, 100, 96)).astype(np.float32)
    a = extract_pyramid(Tensor(big[..., 0:96, :]), params)[2].data
    b = extract_pyramid(Tensor(big[..., 4:100, :]), params)[2].data
    margin = 5  # receptive-field border in tokens
    inner = np.s_[..., margin:24 - margin, margin:24 - margin]
    shifted = a[..., 1:, :][inner]
    np.testing.assert_allclose(shifted, b[..., :-1, :][inner], atol=1e-5)


def test_tokens_finite_for_extreme_input(params):
    _, tok = encode(Tensor(np.full((1, 1, 16, 16), 1e4, np.float32)), params)
    assert np.all(np.isfinite(tok.tokens.data))
