"""Frame loading and PFM/PNG round-trips."""

import numpy as np
import pytest
from PIL import Image

from lfsai.errors import FormatError, FrameError
from lfsai.io import (
    DisparityRaster,
    LightFieldFrame,
    load_frame,
    read_disparity_pfm,
    read_image_gray,
    write_disparity_pfm,
    write_image_gray,
    write_image_u8,
)


def _write_dataset_frame(directory, rig, value=128):
    directory.mkdir(parents=True, exist_ok=True)
    w, h = rig.image_size
    for k in range(len(rig)):
        write_image_u8(np.full((h, w), value + k, dtype=np.uint8), directory / f"cam_{k}.png")
        write_image_u8(np.zeros((h, w), dtype=np.uint8), directory / f"mask_{k}.png")


class TestLoadFrame:
    def test_missing_mask_named(self, small_rig, tmp_path):
        _write_dataset_frame(tmp_path / "0", small_rig)
        (tmp_path / "0" / "mask_3.png").unlink()
        with pytest.raises(FrameError, match="mask_3.png"):
            load_frame(tmp_path / "0", small_rig)

    def test_mask_endpoints(self, small_rig, tmp_path):
        frame_dir = tmp_path / "0"
        _write_dataset_frame(frame_dir, small_rig)
        w, h = small_rig.image_size
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[0, 0] = 255
        mask[0, 1] = 0
        write_image_u8(mask, frame_dir / "mask_2.png")
        frame = load_frame(frame_dir, small_rig)
        assert frame.prob_masks[2][0, 0] == 1.0
        assert frame.prob_masks[2][0, 1] == 0.0

    def test_dimension_mismatch_reported(self, small_rig, tmp_path):
        frame_dir = tmp_path / "0"
        _write_dataset_frame(frame_dir, small_rig)
        write_image_u8(np.zeros((10, 10), dtype=np.uint8), frame_dir / "cam_1.png")
        with pytest.raises(FrameError, match="expected 64x48, found 10x10"):
            load_frame(frame_dir, small_rig)

    def test_png_round_trip_8bit(self, small_rig, tmp_path):
        rng = np.random.default_rng(3)
        w, h = small_rig.image_size
        raw = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        write_image_u8(raw, tmp_path / "x.png")
        gray, rgb = read_image_gray(tmp_path / "x.png")
        assert rgb is None
        np.testing.assert_array_equal(np.round(gray * 255).astype(np.uint8), raw)
        # write_image_gray on the normalized values restores the bytes
        write_image_gray(gray, tmp_path / "y.png")
        again, _ = read_image_gray(tmp_path / "y.png")
        np.testing.assert_array_equal(again, gray)

    def test_rgb_converted_with_luma_weights(self, small_rig, tmp_path):
        w, h = small_rig.image_size
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        rgb[..., 0] = 100
        rgb[..., 1] = 50
        rgb[..., 2] = 200
        Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
        gray, color = read_image_gray(tmp_path / "c.png")
        expected = (0.299 * 100 + 0.587 * 50 + 0.114 * 200) / 255.0
        np.testing.assert_allclose(gray, expected)
        assert color.shape == (h, w, 3)

    def test_masks_always_in_unit_interval(self, small_rig, tmp_path):
        # Property: random 8-bit inputs never produce probabilities outside [0, 1].
        rng = np.random.default_rng(4)
        w, h = small_rig.image_size
        for trial in range(100):
            frame_dir = tmp_path / str(trial)
            frame_dir.mkdir()
            for k in range(len(small_rig)):
                write_image_u8(
                    rng.integers(0, 256, size=(h, w), dtype=np.uint8),
                    frame_dir / f"cam_{k}.png",
                )
                write_image_u8(
                    rng.integers(0, 256, size=(h, w), dtype=np.uint8),
                    frame_dir / f"mask_{k}.png",
                )
            frame = load_frame(frame_dir, small_rig)
            for mask in frame.prob_masks:
                assert mask.min() >= 0.0 and mask.max() <= 1.0

    def test_frame_validation_rejects_bad_mask(self, small_rig):
        w, h = small_rig.image_size
        imgs = tuple(np.zeros((h, w)) for _ in range(5))
        masks = list(imgs)
        masks[1] = np.full((h, w), 1.5)
        with pytest.raises(FrameError, match=r"\[0, 1\]"):
            LightFieldFrame(images=imgs, prob_masks=tuple(masks), rig=small_rig)


class TestPfm:
    def test_round_trip_with_invalid_pixel(self, tmp_path):
        values = np.array([[1.5, 2.5], [3.5, 0.0]], dtype=np.float32)
        valid = np.array([[True, True], [True, False]])
        raster = DisparityRaster.from_values(values, valid)
        write_disparity_pfm(raster, tmp_path / "d.pfm")
        back = read_disparity_pfm(tmp_path / "d.pfm")
        np.testing.assert_array_equal(back.valid, valid)
        np.testing.assert_array_equal(back.values[valid], values[valid])
        assert np.all(np.isneginf(back.values[~valid]))

    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(5)
        for trial in range(100):
            h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
            values = rng.uniform(0, 60, size=(h, w)).astype(np.float32)
            valid = rng.uniform(size=(h, w)) > 0.3
            raster = DisparityRaster.from_values(values, valid)
            path = tmp_path / f"{trial}.pfm"
            write_disparity_pfm(raster, path)
            back = read_disparity_pfm(path)
            np.testing.assert_array_equal(back.valid, raster.valid)
            np.testing.assert_array_equal(back.values, raster.values)

    def test_big_endian_rejected(self, tmp_path):
        path = tmp_path / "be.pfm"
        data = np.ones((2, 2), dtype=">f4")
        with open(path, "wb") as f:
            f.write(b"Pf\n2 2\n1.0\n")
            f.write(data.tobytes())
        with pytest.raises(FormatError, match="big-endian"):
            read_disparity_pfm(path)

    def test_all_invalid_raster(self, tmp_path):
        raster = DisparityRaster.full_invalid((3, 4))
        write_disparity_pfm(raster, tmp_path / "inv.pfm")
        with open(tmp_path / "inv.pfm", "rb") as f:
            f.readline(), f.readline(), f.readline()
            payload = np.frombuffer(f.read(), dtype="<f4")
        np.testing.assert_array_equal(payload, np.full(12, -1.0, dtype=np.float32))
        back = read_disparity_pfm(tmp_path / "inv.pfm")
        assert not back.valid.any()

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "nan.pfm"
        data = np.array([[np.nan]], dtype="<f4")
        with open(path, "wb") as f:
            f.write(b"Pf\n1 1\n-1.0\n")
            f.write(data.tobytes())
        with pytest.raises(FormatError, match="NaN"):
            read_disparity_pfm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"PF\n1 1\n-1.0\n" + b"\x00" * 12)
        with pytest.raises(FormatError, match="magic"):
            read_disparity_pfm(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "short.pfm"
        path.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 7)
        with pytest.raises(FormatError, match="truncated"):
            read_disparity_pfm(path)
