import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from mostdsa.errors import UsageError
from mostdsa.synth_dsa import (
    REGIMES,
    analytic_midframe,
    generate_dataset,
    generate_sequence,
    group_times,
    list_sequences,
    make_groups,
    make_scene,
    occlusion_flips,
    read_manifest,
    read_sequence,
    render_sequence,
)


def test_structure_regime_is_static():
    seq = generate_sequence(3, n_frames=6, regime="structure")
    for frame in seq[1:]:
        assert np.array_equal(frame, seq[0])
    assert seq[0].max() > 0.3  # the tree is actually drawn


def test_requested_frame_count_and_resolution():
    seq = generate_sequence(0, n_frames=5, res=(32, 48))
    assert seq.shape == (5, 32, 48) and seq.dtype == np.float32


@pytest.mark.parametrize("regime", REGIMES)
def test_intensity_range_and_black_background(regime):
    seq = generate_sequence(1, n_frames=4, regime=regime)
    assert seq.min() >= 0 and seq.max() < 1
    assert (seq == 0).mean() > 0.3


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_diffusion_total_intensity_non_decreasing(seed):
    totals = generate_sequence(seed, n_frames=8, regime="diffusion").sum(axis=(1, 2), dtype=np.float64)
    assert np.all(np.diff(totals) >= 0), totals


@pytest.mark.parametrize("regime", REGIMES)
def test_same_seed_same_bytes(regime):
    a = generate_sequence(11, n_frames=4, regime=regime)
    b = generate_sequence(11, n_frames=4, regime=regime)
    assert a.tobytes() == b.tobytes()
    assert generate_sequence(12, n_frames=4, regime=regime).tobytes() != a.tobytes()


@pytest.mark.parametrize("res", [(63, 63), (64, 62), (4, 4)])
def test_invalid_resolution(res):
    with pytest.raises(UsageError, match="resolution"):
        generate_sequence(0, n_frames=4, res=res)


def test_invalid_frame_count_and_regime():
    with pytest.raises(UsageError):
        generate_sequence(0, n_frames=2)
    with pytest.raises(UsageError, match="regime"):
        generate_sequence(0, regime="swirl")


# -- grouping -------------------------------------------------------------------------

def test_group_counts():
    assert len(make_groups(range(152), 1)) == 150
    assert make_groups(range(5), 3) == [(0, 1, 2, 3, 4)]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_adjacent_groups_overlap(n):
    groups = make_groups(range(16), n)
    for a, b in zip(groups, groups[1:]):
        assert len(set(a) & set(b)) == n + 1
        assert b[0] == a[0] + 1


def test_short_sequence_rejected():
    with pytest.raises(UsageError):
        make_groups(range(4), 3)


def test_group_times():
    assert group_times(1) == (0.5,)
    assert group_times(3) == (0.25, 0.5, 0.75)


# -- analytic ground truth ---------------------------------------------------------------

@pytest.mark.parametrize("regime", REGIMES)
def test_integer_times_reproduce_frames(regime):
    scene = make_scene(5, 5, regime=regime)
    seq = render_sequence(scene)
    for i in range(5):
        assert np.array_equal(analytic_midframe(scene, i), seq[i])


def test_midframe_of_static_scene():
    scene = make_scene(6, 4, regime="structure")
    assert np.array_equal(analytic_midframe(scene, 1.5), render_sequence(scene)[1])


def test_diffusion_midframe_between_neighbours():
    scene = make_scene(7, 8, regime="diffusion")
    seq = render_sequence(scene).astype(np.float64)
    for i in range(7):
        mid = analytic_midframe(scene, i + 0.5).astype(np.float64)
        assert seq[i].sum() <= mid.sum() <= seq[i + 1].sum()
        # the front only ever adds contrast, so this holds pixel by pixel too
        assert np.all(seq[i] <= mid) and np.all(mid <= seq[i + 1])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rotation_produces_occlusion_flips(seed):
    scene = make_scene(seed, 16, regime="rotation")
    assert occlusion_flips(scene) > 0


def test_static_scene_has_no_flips():
    assert occlusion_flips(make_scene(0, 6, regime="structure")) == 0


# -- on-disk format ----------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    dirs = generate_dataset(tmp_path, scenes=4, frames=3, res=(16, 20), regime="all", seed=9)
    assert list_sequences(tmp_path) == dirs
    assert [read_manifest(d)["regime"] for d in dirs] == list(REGIMES)
    man = read_manifest(dirs[1])
    assert man["resolution"] == "16x20" and man["frames"] == "3"
    files = sorted(p.name for p in dirs[1].glob("*.png"))
    assert files == ["frame_0000.png", "frame_0001.png", "frame_0002.png"]
    with Image.open(dirs[1] / "frame_0000.png") as im:
        assert im.mode == "L" and im.size == (20, 16)

    scene = make_scene(int(man["seed"]), 3, (16, 20), man["regime"])
    stored = read_sequence(dirs[1])
    expected = np.clip(np.rint(render_sequence(scene) * 255), 0, 255) / 255
    np.testing.assert_allclose(stored, expected, atol=1e-7)


def test_dataset_bytes_are_deterministic(tmp_path):
    a = generate_dataset(tmp_path / "a", 2, 3, (16, 16), "mixed", 1)
    b = generate_dataset(tmp_path / "b", 2, 3, (16, 16), "mixed", 1)
    for da, db in zip(a, b):
        for fa, fb in zip(sorted(da.iterdir()), sorted(db.iterdir())):
            assert fa.read_bytes() == fb.read_bytes()


def test_missing_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        list_sequences(tmp_path / "nope")
    with pytest.raises(FileNotFoundError):
        list_sequences(tmp_path)
    with pytest.raises(FileNotFoundError):
        read_sequence(tmp_path)
