import json
import math
import os
import shutil
import tempfile
import unittest
from types import SimpleNamespace

import numpy as np
import torch

from evaluation import (
    NOT_REACHED, SER_CAP_DB, EvalReport, EvaluationError, compare_runs, evaluate_reconstruction, final_ser,
    latent_motion_correlation, magnitude_ser, per_frame_ser, read_latent_data, read_plot_data,
    read_time_profile, regularization_trend, ser, time_profile, write_latent_data, write_plot_data,
    write_time_profile, write_timing_table, zero_filled
)
from forward_model import FrameMeasurement, MeasurementSet, SamplingPattern, apply_forward, unit_coils
from phantom import PhantomSpec, make_phantom
from trainer import HistoryRecord, TrainHistory


def record(stage, epoch, wall_seconds, ser_mag_db=None, total=1.0):
    return HistoryRecord(stage=stage, epoch=epoch, global_epoch=epoch, step=epoch, wall_seconds=wall_seconds,
                         num_frames=4, data=total, network=0.0, temporal=0.0, total=total,
                         ser_db=ser_mag_db, ser_mag_db=ser_mag_db)


def history_of(values, stage=0):
    """History with one record per epoch and one second per epoch."""
    return TrainHistory([record(stage, i, float(i), v) for i, v in enumerate(values)])


def motion(num_frames=150, cardiac_period=9.7, resp_period=41.3):
    t = np.arange(num_frames)
    return SimpleNamespace(cardiac_phase=np.mod(2 * math.pi * t / cardiac_period + 0.4, 2 * math.pi),
                           resp_phase=np.mod(2 * math.pi * t / resp_period + 1.3, 2 * math.pi))


class TestSER(unittest.TestCase):
    """Test cases for the signal-to-error ratio."""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.x = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))

    def test_exact_reconstruction_is_capped(self):
        self.assertEqual(ser(self.x, self.x), SER_CAP_DB)

    def test_zero_reconstruction(self):
        self.assertAlmostEqual(ser(np.zeros_like(self.x), self.x), 0.0, places=12)

    def test_ten_percent_error(self):
        self.assertAlmostEqual(ser(0.9 * self.x, self.x), 20.0, places=10)

    def test_global_phase(self):
        rotated = self.x * np.exp(0.7j)
        self.assertGreater(magnitude_ser(rotated, self.x), 250.0)
        self.assertLess(ser(rotated, self.x), 10.0)

    def test_accepts_tensors(self):
        self.assertAlmostEqual(ser(torch.from_numpy(0.9 * self.x), self.x), 20.0, places=10)

    def test_per_frame(self):
        recon = self.x.copy()
        recon[1] *= 0.9
        values = per_frame_ser(recon, self.x)
        self.assertEqual(values.shape, (3,))
        self.assertEqual(values[0], SER_CAP_DB)
        self.assertAlmostEqual(values[1], 20.0, places=10)

    def test_invalid_inputs(self):
        with self.assertRaises(EvaluationError):
            ser(self.x, np.zeros_like(self.x))
        with self.assertRaises(EvaluationError):
            ser(self.x[:2], self.x)


class TestLatentCorrelation(unittest.TestCase):
    """Test cases for latent / motion correlation."""

    def setUp(self):
        self.truth = motion()

    def test_oracle_latents(self):
        z = np.stack([np.sin(self.truth.cardiac_phase), np.cos(self.truth.resp_phase)], axis=1)
        result = latent_motion_correlation(z, self.truth)
        self.assertEqual(result.assignment, {0: "cardiac", 1: "respiratory"})
        self.assertAlmostEqual(result.corr[0, 0], 1.0, places=10)
        self.assertAlmostEqual(result.corr[1, 1], 1.0, places=10)
        self.assertAlmostEqual(result.min_assigned(), 1.0, places=10)

    def test_swapped_channels(self):
        z = np.stack([np.cos(self.truth.resp_phase), np.sin(self.truth.cardiac_phase)], axis=1)
        result = latent_motion_correlation(torch.from_numpy(z), self.truth)
        self.assertEqual(result.assignment, {0: "respiratory", 1: "cardiac"})

    def test_white_noise(self):
        """Independent noise stays below 0.3 in at least 99% of draws."""
        rng = np.random.default_rng(11)
        scores = np.concatenate([latent_motion_correlation(rng.standard_normal((150, 2)), self.truth).corr.ravel()
                                 for _ in range(200)])
        self.assertGreaterEqual(np.mean(scores < 0.3), 0.99)

    def test_constant_channel(self):
        z = np.stack([np.zeros(150), np.sin(self.truth.cardiac_phase)], axis=1)
        result = latent_motion_correlation(z, self.truth)
        np.testing.assert_array_equal(result.corr[0], [0.0, 0.0])

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((150, 2))
        base = latent_motion_correlation(z, self.truth).corr
        scaled = latent_motion_correlation(-3.0 * z + 5.0, self.truth).corr
        np.testing.assert_allclose(scaled, base, atol=1e-12)

    def test_length_mismatch(self):
        with self.assertRaises(EvaluationError):
            latent_motion_correlation(np.zeros((10, 2)), self.truth)


class TestRunComparison(unittest.TestCase):
    """Test cases for time-to-threshold and SER trends."""

    def test_threshold_crossing(self):
        rows = compare_runs({"fast": history_of([1.0, 5.0, 10.0]), "slow": history_of([1.0, 2.0, 3.0])}, 5.0)
        by_run = {row.run: row for row in rows}
        self.assertEqual(by_run["fast"].wall_seconds, 1.0)
        self.assertTrue(by_run["fast"].reached)
        self.assertIsNone(by_run["slow"].wall_seconds)
        self.assertEqual(by_run["slow"].to_dict()["wall_seconds"], NOT_REACHED)
        self.assertEqual(by_run["slow"].final_ser_db, 3.0)

    def test_unnamed_histories(self):
        rows = compare_runs([history_of([4.0]), history_of([6.0])], 5.0)
        self.assertEqual([row.run for row in rows], ["run_0", "run_1"])

    def test_records_without_ser_are_skipped(self):
        history = history_of([None, 7.0, None])
        self.assertEqual(final_ser(history), 7.0)
        self.assertEqual(compare_runs({"a": history}, 7.0)[0].wall_seconds, 1.0)

    def test_regularization_trend(self):
        history = TrainHistory([record(0, 0, 0.0, 50.0)] + history_of([1.0, 4.0, 9.0, 8.0, 6.0], stage=1).records)
        trend = regularization_trend(history)
        self.assertEqual(trend["final"], 6.0)
        self.assertEqual(trend["halfway"], 9.0)
        self.assertEqual(trend["running_max"], 9.0)
        self.assertEqual(trend["max_minus_final"], 3.0)
        self.assertEqual(trend["final_minus_halfway"], -3.0)

    def test_trend_needs_ser(self):
        with self.assertRaises(EvaluationError):
            regularization_trend(history_of([None, None]))
        with self.assertRaises(EvaluationError):
            regularization_trend(TrainHistory())


class TestFiles(unittest.TestCase):
    """Test cases for report and plot-data files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_plot_data_round_trip(self):
        histories = {"a": history_of([1.5, None, 2.25]), "b": history_of([3.0])}
        path = os.path.join(self.test_dir, "plot_data.csv")
        write_plot_data(histories, path)
        runs = read_plot_data(path)
        self.assertEqual(sorted(runs), ["a", "b"])
        self.assertEqual([row["ser_mag_db"] for row in runs["a"]], [1.5, None, 2.25])
        self.assertEqual(runs["b"][0]["wall_seconds"], 0.0)

    def test_read_missing_plot_data(self):
        with self.assertRaises(FileNotFoundError):
            read_plot_data(os.path.join(self.test_dir, "missing.csv"))

    def test_latent_data(self):
        z = np.random.default_rng(1).standard_normal((5, 2))
        path = os.path.join(self.test_dir, "latents.csv")
        write_latent_data(z, path)
        np.testing.assert_array_equal(read_latent_data(path), z)

    def test_time_profile(self):
        images = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4) * np.exp(0.7j)
        profile = time_profile(images, 1)
        np.testing.assert_allclose(profile, [[4.0, 5.0, 6.0, 7.0], [16.0, 17.0, 18.0, 19.0]], atol=1e-12)
        path = os.path.join(self.test_dir, "profile.csv")
        write_time_profile(profile, path)
        np.testing.assert_array_equal(read_time_profile(path), profile)
        with self.assertRaises(EvaluationError):
            time_profile(images, 3)
        with self.assertRaises(FileNotFoundError):
            read_time_profile(os.path.join(self.test_dir, "missing.csv"))

    def test_timing_table(self):
        rows = compare_runs({"a": history_of([1.0, 2.0])}, 5.0)
        path = os.path.join(self.test_dir, "timing.json")
        write_timing_table(rows, 5.0, path)
        with open(path) as f:
            table = json.load(f)
        self.assertEqual(table["threshold_ser_db"], 5.0)
        self.assertEqual(table["runs"][0]["wall_seconds"], NOT_REACHED)

    def test_report_round_trip(self):
        report = EvalReport(ser_db=12.5, ser_mag_db=14.0, per_frame_ser_db=[12.0, 13.0],
                            assignment={"0": "cardiac"}, extra={"note": "x"})
        path = os.path.join(self.test_dir, "report.json")
        report.save(path)
        self.assertEqual(EvalReport.load(path), report)


class TestBaselineAndReport(unittest.TestCase):
    """Test cases for the zero-filled baseline and the full report."""

    def setUp(self):
        self.truth = make_phantom(PhantomSpec(grid_shape=(16, 16), num_frames=4, cardiac_period=3.3,
                                              resp_period=7.1, noise_sigma=0.0))

    def test_zero_filled_full_sampling_is_exact(self):
        coils = unit_coils((16, 16))
        frames = []
        for i, image in enumerate(self.truth.images):
            pattern = SamplingPattern(frame_index=i, mask=torch.ones((16, 16), dtype=torch.bool))
            frames.append(FrameMeasurement(pattern=pattern, samples=apply_forward(image, pattern, coils)))
        mset = MeasurementSet(frames=frames, coils=coils)
        self.assertGreater(ser(zero_filled(mset), self.truth.images), 200.0)

    def test_evaluate_reconstruction(self):
        images = self.truth.images * 0.9
        latents = np.stack([np.sin(self.truth.cardiac_phase), np.cos(self.truth.resp_phase)], axis=1)
        history = history_of([3.0, 5.0, 4.0])
        report = evaluate_reconstruction(images, self.truth, latents=latents, history=history)
        self.assertAlmostEqual(report.ser_db, 20.0, places=10)
        self.assertEqual(len(report.per_frame_ser_db), 4)
        self.assertEqual(set(report.assignment.values()), {"cardiac", "respiratory"})
        self.assertEqual(report.regularization["final"], 4.0)
        self.assertIsNone(report.zero_filled_ser_mag_db)


if __name__ == '__main__':
    unittest.main()
