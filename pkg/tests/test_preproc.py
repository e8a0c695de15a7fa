import numpy as np
import pytest

from lip2tongue.errors import BoundsError, ConfigError
from lip2tongue.preproc import (
    Recording, RoiSpec, assemble_clip, clip_to_tensor, crop_roi, list_frames, read_frame, read_manifest,
    resize_bilinear, tensor_to_frames, write_frame, write_manifest,
)


def test_crop_full_frame_is_identity():
    f = np.random.default_rng(0).random((10, 12))
    assert np.array_equal(crop_roi(f, RoiSpec(0, 0, 12, 10)), f)


def test_crop_single_pixel():
    f = np.random.default_rng(1).random((8, 8))
    assert crop_roi(f, RoiSpec(2, 3, 1, 1)).tolist() == [[f[3, 2]]]


def test_crop_matches_indexing():
    rng = np.random.default_rng(2)
    f = rng.random((40, 50))
    for _ in range(20):
        x, y = rng.integers(0, 40), rng.integers(0, 30)
        w, h = rng.integers(1, 50 - x + 1), rng.integers(1, 40 - y + 1)
        out = crop_roi(f, RoiSpec(x, y, w, h))
        assert out.shape == (h, w)
        assert all(out[i, j] == f[y + i, x + j] for i in range(h) for j in range(w))


@pytest.mark.parametrize("roi,edge", [
    (RoiSpec(-1, 0, 4, 4), "left"), (RoiSpec(0, -2, 4, 4), "top"),
    (RoiSpec(7, 0, 4, 4), "right"), (RoiSpec(0, 7, 4, 4), "bottom"),
])
def test_crop_out_of_bounds_names_edge(roi, edge):
    with pytest.raises(BoundsError, match=edge):
        crop_roi(np.zeros((10, 10)), roi)


def test_resize_same_size_and_constant():
    f = np.random.default_rng(3).random((6, 7)).astype(np.float32)
    assert np.array_equal(resize_bilinear(f, 7, 6), f)
    c = resize_bilinear(np.full((5, 9), 0.3), 13, 4)
    assert c.shape == (4, 13) and np.allclose(c, 0.3)


def test_resize_corner_aligned_oracle():
    out = resize_bilinear(np.array([[0.0, 1.0], [1.0, 0.0]]), 4, 4)
    t = np.array([0, 1 / 3, 2 / 3, 1])
    # f(y, x) = x + y - 2xy on the unit square
    ref = t[None, :] + t[:, None] - 2 * t[:, None] * t[None, :]
    assert np.max(np.abs(out - ref)) < 1e-6


def test_resize_zero_dim():
    with pytest.raises(ConfigError):
        resize_bilinear(np.zeros((4, 4)), 0, 3)


def test_assemble_clip_cases():
    frames = [np.full((3, 3), i, dtype=np.float32) for i in range(7)]
    assert assemble_clip(frames, 4, 1).frames.shape == (1, 3, 3)
    clip = assemble_clip(frames, 3, 7)
    assert [f[0, 0] for f in clip.frames] == list(range(7))
    with pytest.raises(BoundsError):
        assemble_clip(frames, 2, 7)


def test_clip_tensor_shape_and_roundtrip():
    frames = [np.random.default_rng(i).random((96, 96)) for i in range(7)]
    t = clip_to_tensor(assemble_clip(frames, 3, 7))
    assert t.shape == (7, 96, 96)
    assert np.array_equal(np.stack(tensor_to_frames(t)), t)
    c = clip_to_tensor(assemble_clip([np.full((4, 4), 0.5)], 0, 1))
    assert np.all(c == 0.5)


def test_frame_png_roundtrip(tmp_path):
    f = np.round(np.random.default_rng(4).random((9, 11)) * 255) / 255
    write_frame(tmp_path / "frame_000000.png", f)
    assert np.allclose(read_frame(tmp_path / "frame_000000.png"), f, atol=1e-6)
    assert [p.name for p in list_frames(tmp_path)] == ["frame_000000.png"]


def test_manifest_roundtrip(tmp_path):
    recs = [Recording(tmp_path / "a" / "lip", tmp_path / "a" / "us", RoiSpec(1, 2, 3, 4))]
    write_manifest(tmp_path / "manifest.txt", recs)
    assert "a/lip a/us 1 2 3 4" in (tmp_path / "manifest.txt").read_text()
    assert read_manifest(tmp_path) == recs


def test_manifest_errors(tmp_path):
    (tmp_path / "manifest.txt").write_text("# nothing\n")
    with pytest.raises(ConfigError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.txt").write_text("lip us 1 2 3\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_manifest(tmp_path)
