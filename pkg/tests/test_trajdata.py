import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image
from scipy import ndimage

from lfinet.trajdata import (
    AUGMENT_OPS,
    RasterSpec,
    SamplePair,
    TrajectoryFormatError,
    TrajectoryLog,
    augment,
    augment_array,
    augment_dataset,
    default_spec,
    generate_scene,
    load_dataset,
    load_png,
    rasterize,
    rasterize_counts,
    read_trajectory_csv,
    save_png,
    split_dataset,
    synth_scene,
    to_uint8,
    write_dataset,
    write_trajectory_csv,
)

SPEC16 = RasterSpec((0.0, 0.0, 1.0, 1.0), (16, 16))


def log_of(lonlat, mid="m"):
    lonlat = np.asarray(lonlat, float).reshape(-1, 2)
    n = len(lonlat)
    pts = np.column_stack([np.arange(n), lonlat, np.zeros(n), np.zeros(n)])
    return TrajectoryLog(pts, mid)


# ------------------------------------------------------------ rasterize


def test_centre_point_lands_on_middle_pixel():
    img = rasterize(log_of([0.5, 0.5]), SPEC16)
    assert np.count_nonzero(img) == 1 and img[8, 8] == 1.0


def test_points_outside_bounds_are_dropped_and_counted():
    with pytest.warns(UserWarning, match="3 trajectory points"):
        img = rasterize(log_of([[2, 2], [-1, 0.5], [0.5, 1.5]]), SPEC16)
    assert not img.any()
    _, outside = rasterize_counts(log_of([[2, 2], [0.5, 0.5]]), SPEC16)
    assert outside == 1


def test_log_encoding_of_counts():
    img = rasterize(log_of([[0.1, 0.1], [0.9, 0.9], [0.9, 0.9]]), SPEC16)
    values = sorted(img[img > 0])
    assert values[0] == pytest.approx(math.log(2) / math.log(3), abs=1e-15) and values[1] == 1.0


@given(st.integers(0, 2**32 - 1))
def test_rasterize_ignores_point_order(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.2, 1.2, (30, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = rasterize(log_of(pts), SPEC16)
        b = rasterize(log_of(pts[rng.permutation(30)]), SPEC16)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and (a.max() == 1.0 or not a.any())


def test_edge_points_are_inside():
    counts, outside = rasterize_counts(log_of([[1.0, 0.0], [0.0, 1.0]]), SPEC16)
    assert outside == 0 and counts[15, 15] == 1 and counts[0, 0] == 1


def test_empty_log_rejected():
    with pytest.raises(ValueError, match="empty trajectory"):
        rasterize_counts([], SPEC16)


def test_raster_spec_validation():
    with pytest.raises(ValueError):
        RasterSpec((0, 0, 1, 1), (12, 16))
    with pytest.raises(ValueError):
        RasterSpec((1, 0, 0, 1))


def test_trajectory_log_validation():
    with pytest.raises(ValueError):
        TrajectoryLog(np.array([[0, 200.0, 0, 0, 0]]))
    with pytest.raises(ValueError):
        TrajectoryLog(np.array([[1, 0, 0, 0, 0], [0, 0, 0, 0, 0]]))  # timestamps go backwards


# ------------------------------------------------------------------ CSV


def test_csv_round_trip(tmp_path):
    logs = [log_of([[0.1, 0.2], [0.3, 0.4]], "a"), log_of([[0.5, 0.6]], "b")]
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, logs)
    back = read_trajectory_csv(path)
    assert [l.machine_id for l in back] == ["a", "b"]
    np.testing.assert_array_equal(back[0].points[:, :3], logs[0].points[:, :3])


def test_csv_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("timestamp,lon,lat,speed,heading,machine_id\n0,1,1,0,0,a\n1,x,1,0,0,a\n")
    with pytest.raises(TrajectoryFormatError, match=":3:"):
        read_trajectory_csv(path)
    path.write_text("timestamp,lon,lat,speed,heading,machine_id\n")
    with pytest.raises(TrajectoryFormatError, match="empty trajectory"):
        read_trajectory_csv(path)


# ------------------------------------------------------------ synthesis


def test_scene_is_deterministic():
    a, b = synth_scene(17), synth_scene(17)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    assert not np.array_equal(a.mask, synth_scene(18).mask)


def test_mask_fraction_over_many_seeds():
    fractions = np.array([synth_scene(s).mask.mean() for s in range(1000)])
    assert fractions.min() >= 0.02 and fractions.max() <= 0.25


@pytest.mark.parametrize("seed", range(20))
def test_segments_are_eight_connected_and_masked(seed):
    scene = generate_scene(seed)
    assert set(np.unique(scene.pair.mask)) <= {0, 1}
    for sk in scene.skeletons:
        grid = np.zeros(scene.pair.mask.shape, bool)
        grid[sk[:, 0], sk[:, 1]] = True
        _, n = ndimage.label(grid, structure=np.ones((3, 3)))
        assert n == 1
        assert scene.pair.mask[sk[:, 0], sk[:, 1]].all()


def test_scene_image_is_a_rasterized_log():
    scene = generate_scene(4)
    np.testing.assert_array_equal(scene.pair.image, rasterize(scene.log, default_spec()))


# --------------------------------------------------------- augmentation


@given(arrays(np.int64, (5, 5), elements=st.integers(0, 9)))
def test_rotation_and_flip_identities(a):
    x = a
    for _ in range(4):
        x = augment_array(x, "rot90")
    np.testing.assert_array_equal(x, a)
    np.testing.assert_array_equal(augment_array(augment_array(a, "flip_h"), "flip_h"), a)
    np.testing.assert_array_equal(augment_array(augment_array(a, "flip_v"), "flip_v"), a)


def test_rot90_is_counterclockwise():
    a = np.zeros((4, 4))
    a[0, 0] = 1
    assert augment_array(a, "rot90")[3, 0] == 1


def test_augment_keeps_pairs_aligned():
    p = synth_scene(2)
    out = augment_dataset([p])
    assert len(out) == 1 + len(AUGMENT_OPS)
    for q, op in zip(out[1:], AUGMENT_OPS):
        np.testing.assert_array_equal(q.mask, augment_array(p.mask, op))
        np.testing.assert_array_equal(q.image, augment_array(p.image, op))


@pytest.mark.parametrize("op", AUGMENT_OPS)
def test_augment_preserves_mask_pixels(op):
    p = synth_scene(9)
    q = augment(p, op)
    assert set(np.unique(q.mask)) <= {0, 1} and q.mask.sum() == p.mask.sum()


def test_split_is_deterministic_partition():
    pairs = [synth_scene(s, default_spec(16)) for s in range(10)]
    train, val = split_dataset(pairs, 0.3, seed=1)
    assert len(val) == 3 and len(train) == 7
    assert sorted(p.id for p in train + val) == sorted(p.id for p in pairs)
    again = split_dataset(pairs, 0.3, seed=1)
    assert [p.id for p in again[1]] == [p.id for p in val]
    with pytest.raises(ValueError):
        split_dataset(pairs, 1.0, seed=0)


def test_rotation_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        augment(SamplePair(np.zeros((4, 6)), np.zeros((4, 6), np.uint8)), "rot90")


# ------------------------------------------------------------------- I/O


def test_round_half_up():
    assert to_uint8(np.array([0.5]))[0] == 128
    assert to_uint8(np.array([0.0, 1.0, 2.0, -1.0])).tolist() == [0, 255, 255, 0]


@given(arrays(np.uint8, (8, 12)))
def test_png_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("png") / "x.png"
    save_png(path, a)
    np.testing.assert_array_equal(to_uint8(load_png(path)), a)


def test_png_rejects_colour(tmp_path):
    path = tmp_path / "rgb.png"
    Image.new("RGB", (8, 8)).save(path)
    with pytest.raises(ValueError, match=str(path)):
        load_png(path)


def test_dataset_round_trip(tmp_path):
    pairs = [synth_scene(s, default_spec(16)) for s in range(3)]
    manifest = write_dataset(pairs, tmp_path)
    back = load_dataset(manifest)
    for p, q in zip(pairs, back):
        assert p.id == q.id
        np.testing.assert_array_equal(p.mask, q.mask)
        np.testing.assert_array_equal(to_uint8(p.image), to_uint8(q.image))


def test_manifest_with_missing_mask_names_path(tmp_path):
    save_png(tmp_path / "a.png", np.zeros((16, 16)))
    (tmp_path / "m.json").write_text(json.dumps([{"image": "a.png", "mask": "gone.png"}]))
    with pytest.raises(FileNotFoundError, match="gone.png"):
        load_dataset(tmp_path / "m.json")


def test_manifest_size_mismatch_names_path(tmp_path):
    save_png(tmp_path / "a.png", np.zeros((16, 16)))
    save_png(tmp_path / "b.png", np.zeros((8, 16), np.uint8))
    (tmp_path / "m.json").write_text(json.dumps([{"image": "a.png", "mask": "b.png"}]))
    with pytest.raises(ValueError, match="b.png"):
        load_dataset(tmp_path / "m.json")
