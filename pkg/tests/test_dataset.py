import numpy as np
import pytest

from dsvo.dataset import (
    Calibration,
    Dataset,
    DatasetError,
    load_calibration,
    save_synthetic,
)
from dsvo.geometry import Pinhole, StereoRig
from dsvo.synth import Scene, make_sequence, motion_path

CAM = Pinhole(210.0, 210.0, 159.5, 119.5, 320, 240)
RIG = StereoRig(CAM, 0.1)


class TestCalibration:
    def test_round_trip(self, tmp_path):
        calib = Calibration(
            420.0, 421.0, 319.5, 239.5, baseline=0.12, size=(640, 480),
            depth_scale=0.002,
        )
        p = tmp_path / "calib.txt"
        calib.write(str(p))
        back = load_calibration(str(p))
        assert back == calib

    def test_minimal_file(self, tmp_path):
        p = tmp_path / "calib.txt"
        p.write_text("420 420 319.5 239.5\n")
        calib = load_calibration(str(p))
        assert calib.baseline is None
        assert calib.depth_scale == 0.001

    def test_error_names_file_and_line(self, tmp_path):
        p = tmp_path / "calib.txt"
        p.write_text("420 420 319.5 239.5\nbaseline\n")
        with pytest.raises(DatasetError, match=r"calib\.txt:2"):
            load_calibration(str(p))

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "calib.txt"
        p.write_text("# nothing here\n")
        with pytest.raises(DatasetError, match="empty"):
            load_calibration(str(p))

    def test_rig_requires_baseline(self, tmp_path):
        calib = Calibration(420.0, 420.0, 319.5, 239.5, size=(640, 480))
        with pytest.raises(DatasetError, match="baseline"):
            calib.rig()


def write_dataset(tmp_path, n=3, with_depth=True):
    frames = make_sequence(
        Scene.make("plane", depth=2.0),
        motion_path("translate:0.02,0,0", n),
        RIG,
        num_levels=1,
        with_depth=with_depth,
    )
    poses = motion_path("translate:0.02,0,0", n)
    save_synthetic(str(tmp_path), frames, RIG, poses, [f.timestamp for f in frames])
    return frames


class TestDataset:
    def test_synthetic_round_trip(self, tmp_path):
        frames = write_dataset(tmp_path)
        ds = Dataset(
            left_dir=str(tmp_path / "left"),
            calib_path=str(tmp_path / "calib.txt"),
            right_dir=str(tmp_path / "right"),
            depth_dir=str(tmp_path / "depth"),
            timestamps_path=str(tmp_path / "times.txt"),
            num_levels=1,
        )
        assert len(ds) == 3
        assert ds.calib.size == (320, 240)
        fr = ds.frame(1)
        # 16-bit quantization: 1/256 of a gray level
        assert np.abs(
            fr.left[0].intensity - frames[1].left[0].intensity
        ).max() < 0.005
        assert np.abs(fr.depth - 2.0).max() < 0.002
        assert fr.timestamp == pytest.approx(0.05)

    def test_mono_fallback(self, tmp_path):
        write_dataset(tmp_path)
        ds = Dataset(
            left_dir=str(tmp_path / "left"),
            calib_path=str(tmp_path / "calib.txt"),
            num_levels=1,
        )
        fr = ds.frame(0)
        assert fr.right is None and fr.depth is None

    def test_stereo_count_mismatch_fatal(self, tmp_path):
        write_dataset(tmp_path)
        extra = tmp_path / "right" / "zzz_extra.png"
        extra.write_bytes((tmp_path / "right" / "000000.png").read_bytes())
        with pytest.raises(DatasetError, match="mismatch"):
            Dataset(
                left_dir=str(tmp_path / "left"),
                calib_path=str(tmp_path / "calib.txt"),
                right_dir=str(tmp_path / "right"),
            )

    def test_iteration_order_sorted(self, tmp_path):
        write_dataset(tmp_path)
        ds = Dataset(
            left_dir=str(tmp_path / "left"),
            calib_path=str(tmp_path / "calib.txt"),
            num_levels=1,
        )
        stamps = [fr.timestamp for fr in ds]
        assert stamps == sorted(stamps)

    def test_missing_images_rejected(self, tmp_path):
        (tmp_path / "left").mkdir()
        calib = Calibration(210.0, 210.0, 159.5, 119.5)
        calib.write(str(tmp_path / "calib.txt"))
        with pytest.raises(DatasetError, match="no images"):
            Dataset(
                left_dir=str(tmp_path / "left"),
                calib_path=str(tmp_path / "calib.txt"),
            )

    def test_groundtruth_written(self, tmp_path):
        write_dataset(tmp_path)
        from dsvo.trajectory import Trajectory

        gt = Trajectory.read(str(tmp_path / "groundtruth.txt"))
        assert len(gt) == 3
        assert np.allclose(gt.positions[2], [0.04, 0, 0])
