import math
import unittest

import numpy as np
import torch

from forward_model import (
    GOLDEN_ANGLE, ForwardModelError, FrameMeasurement, MeasurementSet, SamplingPattern,
    apply_adjoint, apply_adjoint_frame, apply_forward, apply_forward_batch, bin_measurements,
    coverage_fraction, lines_to_mask, make_gaussian_coils, make_golden_angle_patterns,
    rasterize_line, sampling_fraction, unit_coils
)


def random_image(rng, shape):
    return torch.from_numpy(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def full_pattern(shape):
    return SamplingPattern(frame_index=0, mask=torch.ones(shape, dtype=torch.bool))


def inner(a, b):
    return complex(torch.vdot(a.flatten(), b.flatten()))


def make_mset(num_frames, lines_per_frame=6, shape=(16, 16), seed=0):
    rng = np.random.default_rng(seed)
    patterns = make_golden_angle_patterns(shape, num_frames, lines_per_frame)
    coils = unit_coils(shape)
    frames = [FrameMeasurement(pattern=p, samples=apply_forward(random_image(rng, shape), p, coils))
              for p in patterns]
    return MeasurementSet(frames=frames, coils=coils)


class TestSamplingPatterns(unittest.TestCase):
    """Test cases for golden-angle pattern generation."""

    def test_frame_angles(self):
        """Frame k uses lines (k*L + j) * golden angle mod pi."""
        patterns = make_golden_angle_patterns((64, 64), 3, 6)
        for k, pattern in enumerate(patterns):
            expected = [((k * 6 + j) * GOLDEN_ANGLE) % math.pi for j in range(6)]
            self.assertEqual(pattern.lines, expected)
            self.assertEqual(pattern.frame_index, k)

    def test_consecutive_frames_differ(self):
        first, second = make_golden_angle_patterns((64, 64), 2, 6)
        self.assertFalse(torch.equal(first.mask, second.mask))
        self.assertEqual(len(first.lines), 6)
        self.assertEqual(len(second.lines), 6)

    def test_deterministic(self):
        a = make_golden_angle_patterns((32, 32), 5, 4, seed=1)
        b = make_golden_angle_patterns((32, 32), 5, 4, seed=1)
        for pa, pb in zip(a, b):
            self.assertTrue(torch.equal(pa.mask, pb.mask))

    def test_dense_limit(self):
        """Enough lines in one frame cover nearly the whole grid."""
        pattern = make_golden_angle_patterns((64, 64), 1, 4 * 64)[0]
        self.assertGreaterEqual(sampling_fraction(pattern), 0.95)

    def test_union_coverage(self):
        """The union over many consecutive frames covers the grid."""
        patterns = make_golden_angle_patterns((32, 32), 52, 4)
        self.assertGreaterEqual(coverage_fraction(patterns), 0.95)

    def test_sampling_fraction_range(self):
        patterns = make_golden_angle_patterns((64, 64), 150, 6)
        for pattern in patterns:
            self.assertGreaterEqual(sampling_fraction(pattern), 0.05)
            self.assertLessEqual(sampling_fraction(pattern), 0.35)

    def test_sampling_count_matches_independent_raster(self):
        """Mask size equals the number of distinct points of the drawn lines."""
        H = W = 64
        pattern = make_golden_angle_patterns((H, W), 1, 6)[0]
        points = set()
        for angle in pattern.lines:
            c, s = math.cos(angle), math.sin(angle)
            for t in range(-32, 33):
                if abs(c) >= abs(s):
                    x, y = t, t * (s / c)
                    y = math.copysign(math.ceil(abs(y) - 0.5), y)
                else:
                    x, y = t * (c / s), t
                    x = math.copysign(math.ceil(abs(x) - 0.5), x)
                if -H // 2 <= y < H // 2 and -W // 2 <= x < W // 2:
                    points.add((int(y) % H, int(x) % W))
        self.assertEqual(pattern.num_samples, len(points))

    def test_line_passes_through_dc(self):
        rows, cols = rasterize_line((16, 16), 0.3)
        self.assertIn((0, 0), set(zip(rows.tolist(), cols.tolist())))

    def test_mask_entries_lie_on_lines(self):
        pattern = make_golden_angle_patterns((32, 32), 1, 3)[0]
        rebuilt = lines_to_mask((32, 32), pattern.lines)
        self.assertTrue(np.array_equal(rebuilt, pattern.mask.numpy()))

    def test_invalid_grid(self):
        with self.assertRaises(ForwardModelError):
            make_golden_angle_patterns((15, 16), 1, 6)
        with self.assertRaises(ForwardModelError):
            make_golden_angle_patterns((6, 6), 1, 6)
        with self.assertRaises(ForwardModelError):
            make_golden_angle_patterns((16, 16), 1, 0)
        with self.assertRaises(ForwardModelError):
            make_golden_angle_patterns((16, 16), 0, 6)


class TestOperators(unittest.TestCase):
    """Test cases for the forward operator and its adjoint."""

    def setUp(self):
        self.rng = np.random.default_rng(1234)
        self.shape = (16, 16)

    def test_zero_image(self):
        pattern = make_golden_angle_patterns(self.shape, 1, 6)[0]
        samples = apply_forward(torch.zeros(self.shape, dtype=torch.complex128), pattern)
        self.assertTrue(bool((samples == 0).all()))
        image = apply_adjoint(torch.zeros_like(samples), pattern)
        self.assertTrue(bool((image == 0).all()))

    def test_impulse_spectrum_is_flat(self):
        H, W = self.shape
        image = torch.zeros(self.shape, dtype=torch.complex128)
        image[H // 2, W // 2] = 1.0
        samples = apply_forward(image, full_pattern(self.shape), unit_coils(self.shape))
        np.testing.assert_allclose(samples.abs().numpy(), 1.0 / math.sqrt(H * W), atol=1e-14)

    def test_matches_full_transform_then_gather(self):
        pattern = make_golden_angle_patterns(self.shape, 1, 6)[0]
        image = random_image(self.rng, self.shape)
        expected = torch.fft.fft2(image, norm="ortho")[pattern.mask]
        samples = apply_forward(image, pattern)
        self.assertLess(float((samples[0] - expected).abs().max()), 1e-10)

    def test_adjoint_identity(self):
        """<A x, y> = <x, A^H y> over random draws with multi-coil maps."""
        for trial in range(20):
            patterns = make_golden_angle_patterns(self.shape, trial + 1, 1 + trial % 5)
            pattern = patterns[-1]
            coils = make_gaussian_coils(self.shape, num_coils=1 + trial % 4, seed=trial)
            x = random_image(self.rng, self.shape)
            y = random_image(self.rng, (coils.num_coils, pattern.num_samples))
            lhs = inner(apply_forward(x, pattern, coils), y)
            rhs = inner(x, apply_adjoint(y, pattern, coils))
            scale = float(torch.linalg.norm(x) * torch.linalg.norm(y))
            self.assertLess(abs(lhs - rhs) / scale, 1e-10)

    def test_unitary_round_trip(self):
        x = random_image(self.rng, self.shape)
        pattern = full_pattern(self.shape)
        recovered = apply_adjoint(apply_forward(x, pattern, unit_coils(self.shape)), pattern, unit_coils(self.shape))
        self.assertLess(float((recovered - x).abs().max()), 1e-10)

    def test_linearity(self):
        pattern = make_golden_angle_patterns(self.shape, 1, 6)[0]
        coils = make_gaussian_coils(self.shape, 4)
        x, y = random_image(self.rng, self.shape), random_image(self.rng, self.shape)
        alpha, beta = 0.7 - 0.2j, -1.3 + 0.5j
        lhs = apply_forward(alpha * x + beta * y, pattern, coils)
        rhs = alpha * apply_forward(x, pattern, coils) + beta * apply_forward(y, pattern, coils)
        self.assertLess(float((lhs - rhs).abs().max()), 1e-10)

    def test_shape_mismatch(self):
        pattern = make_golden_angle_patterns(self.shape, 1, 6)[0]
        with self.assertRaises(ForwardModelError):
            apply_forward(torch.zeros((8, 8), dtype=torch.complex128), pattern)
        with self.assertRaises(ForwardModelError):
            apply_adjoint(torch.zeros((1, pattern.num_samples + 1), dtype=torch.complex128), pattern)

    def test_adjoint_frame_matches_adjoint(self):
        coils = make_gaussian_coils(self.shape, 2)
        pattern = make_golden_angle_patterns(self.shape, 1, 6)[0]
        samples = apply_forward(random_image(self.rng, self.shape), pattern, coils)
        frame = FrameMeasurement(pattern=pattern, samples=samples)
        expected = apply_adjoint(samples, pattern, coils)
        self.assertLess(float((apply_adjoint_frame(frame, coils) - expected).abs().max()), 1e-12)

    def test_batch_matches_per_frame(self):
        mset = make_mset(4, shape=self.shape)
        images = torch.stack([random_image(self.rng, self.shape) for _ in range(4)])
        batch = apply_forward_batch(images, mset.frames, mset.coils)
        for image, frame, predicted in zip(images, mset.frames, batch):
            expected = apply_forward(image, frame.pattern, mset.coils)
            self.assertLess(float((predicted - expected).abs().max()), 1e-12)


class TestBinning(unittest.TestCase):
    """Test cases for temporal binning."""

    def test_group_size_one(self):
        mset = make_mset(5)
        binned = bin_measurements(mset, 1)
        self.assertEqual(binned.num_frames, 5)
        for a, b in zip(mset.frames, binned.frames):
            self.assertTrue(torch.equal(a.samples, b.samples))
            self.assertTrue(torch.equal(a.pattern.mask, b.pattern.mask))

    def test_group_size_all(self):
        mset = make_mset(6)
        binned = bin_measurements(mset, 6)
        self.assertEqual(binned.num_frames, 1)
        union = torch.zeros_like(mset.frames[0].pattern.mask)
        for frame in mset.frames:
            union |= frame.pattern.mask
        self.assertTrue(torch.equal(binned.frames[0].pattern.mask, union))

    def test_uneven_groups(self):
        mset = make_mset(10)
        binned = bin_measurements(mset, 3)
        self.assertEqual(binned.num_frames, 4)
        self.assertEqual(binned.total_samples(), mset.total_samples())
        sizes = [len(frame.pattern.lines) // 6 for frame in binned.frames]
        self.assertEqual(sizes, [3, 3, 3, 1])

    def test_binned_adjoint_accumulates(self):
        """The adjoint of a binned frame is the sum of its members' adjoints."""
        mset = make_mset(3)
        binned = bin_measurements(mset, 3)
        expected = sum(apply_adjoint_frame(frame, mset.coils) for frame in mset.frames)
        result = apply_adjoint_frame(binned.frames[0], mset.coils)
        self.assertLess(float((result - expected).abs().max()), 1e-12)

    def test_invalid_group_size(self):
        with self.assertRaises(ForwardModelError):
            bin_measurements(make_mset(2), 0)


class TestMeasurementSet(unittest.TestCase):

    def test_sample_count_must_match_mask(self):
        pattern = make_golden_angle_patterns((16, 16), 1, 2)[0]
        with self.assertRaises(ForwardModelError):
            FrameMeasurement(pattern=pattern, samples=torch.zeros((1, pattern.num_samples - 1)))

    def test_empty_set_rejected(self):
        with self.assertRaises(ForwardModelError):
            MeasurementSet(frames=[], coils=unit_coils((16, 16)))

    def test_empty_mask_rejected(self):
        with self.assertRaises(ForwardModelError):
            SamplingPattern(frame_index=0, mask=torch.zeros((16, 16), dtype=torch.bool))

    def test_coil_count_must_match(self):
        pattern = make_golden_angle_patterns((16, 16), 1, 2)[0]
        frame = FrameMeasurement(pattern=pattern, samples=torch.zeros((1, pattern.num_samples)))
        with self.assertRaises(ForwardModelError):
            MeasurementSet(frames=[frame], coils=make_gaussian_coils((16, 16), 2))


if __name__ == '__main__':
    unittest.main()
