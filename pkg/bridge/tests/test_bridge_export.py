import os

import numpy as np
import pytest

from prior_bridge.container import read_container, write_container
from prior_bridge.export import export_priors, main, read_video_frames


@pytest.fixture()
def toy_clip(tmp_path):
    video = tmp_path / "clip"
    os.makedirs(video / "frames")
    rng = np.random.default_rng(3)
    for t in range(2):
        write_container(video / "frames" / f"frame_{t:04d}.m4dc",
                        [("image", rng.random((4, 5, 3)))])
    return video


def test_export_writes_the_dataset_layout(toy_clip, tmp_path):
    out = tmp_path / "out"
    mask = np.zeros((4, 5), dtype=np.int32)
    mask[1:3, 1:4] = 1
    write_container(tmp_path / "m.m4dc", [("mask", mask)])
    export_priors(str(toy_clip), str(out), offsets=(1, -1),
                  mask_path=str(tmp_path / "m.m4dc"))

    assert sorted(os.listdir(out)) == ["cameras.m4dc", "frames", "priors"]
    cams = read_container(out / "cameras.m4dc")
    assert cams["intr"].shape == (2, 4)
    assert cams["quat"].shape == (2, 4)
    assert cams["trans"].shape == (2, 3)
    assert cams["size"].tolist() == [[5, 4], [5, 4]]

    p0 = read_container(out / "priors" / "prior_0000.m4dc")
    # frame 0 of 2: only +1 stays inside the clip
    assert p0["offsets"].tolist() == [1]
    assert p0["num_objects"].tolist() == [1]
    np.testing.assert_array_equal(p0["mask"], mask)
    assert p0["depth"].shape == (4, 5)
    assert p0["depth_valid"].all()
    assert p0["track_p1"].shape == (4, 5, 2)
    # identity tracks: pixel (x, y) maps to itself
    np.testing.assert_array_equal(p0["track_p1"][2, 3], [3.0, 2.0])

    p1 = read_container(out / "priors" / "prior_0001.m4dc")
    assert p1["offsets"].tolist() == [-1]
    assert "track_m1" in p1

    f0 = read_container(out / "frames" / "frame_0000.m4dc")
    assert f0["image"].shape == (4, 5, 3)


def test_re_export_is_byte_identical(toy_clip, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    export_priors(str(toy_clip), str(a))
    export_priors(str(toy_clip), str(b))
    for rel in ["cameras.m4dc", "priors/prior_0000.m4dc",
                "priors/prior_0001.m4dc", "frames/frame_0000.m4dc"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_empty_video_dir_is_an_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError, match="no frame containers"):
        read_video_frames(str(empty))
    rc = main(["--video", str(empty), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_mask_shape_mismatch_is_an_error(toy_clip, tmp_path):
    write_container(tmp_path / "m.m4dc",
                    [("mask", np.zeros((2, 2), dtype=np.int32))])
    with pytest.raises(ValueError, match="does not match"):
        export_priors(str(toy_clip), str(tmp_path / "o"),
                      mask_path=str(tmp_path / "m.m4dc"))
