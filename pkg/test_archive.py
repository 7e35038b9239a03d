import os
import shutil
import tempfile
import unittest

import numpy as np
import torch

import archive
from archive import ArchiveError, archive_info, read_archive, write_archive
from forward_model import apply_adjoint_frame, bin_measurements
from generator import GeneratorConfig, generate, init_generator
from objective import LatentSequence
from phantom import PhantomSpec, make_phantom, simulate_acquisition


def tiny_truth():
    return make_phantom(PhantomSpec(grid_shape=(16, 16), num_frames=4, cardiac_period=3.3, resp_period=7.1))


class TestArchiveFormat(unittest.TestCase):
    """Test cases for the raw archive container."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, "blocks.dra")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_block_types(self):
        blocks = {
            "complex": np.array([[1.0 - 2.0j, -0.0 + 3.5j]]),
            "real": np.linspace(0.0, 1.0, 7),
            "ints": np.array([3, -1, 2**40]),
            "flags": np.array([[True, False], [False, True]]),
        }
        write_archive(self.path, "test", {"note": "x"}, blocks)
        header, loaded = read_archive(self.path, "test")
        self.assertEqual(header["meta"], {"note": "x"})
        self.assertEqual([entry["name"] for entry in header["blocks"]], list(blocks))
        for name, array in blocks.items():
            self.assertEqual(loaded[name].dtype, array.dtype)
            self.assertEqual(loaded[name].tobytes(), array.tobytes())

    def test_byte_deterministic(self):
        blocks = {"a": np.arange(5.0), "b": np.ones((2, 2), dtype=np.complex128)}
        other = os.path.join(self.test_dir, "again.dra")
        write_archive(self.path, "test", {"z": 1, "a": [1, 2]}, blocks)
        write_archive(other, "test", {"a": [1, 2], "z": 1}, blocks)
        with open(self.path, "rb") as f, open(other, "rb") as g:
            self.assertEqual(f.read(), g.read())

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_archive(os.path.join(self.test_dir, "missing.dra"))

    def test_bad_magic(self):
        with open(self.path, "wb") as f:
            f.write(b"not an archive at all")
        with self.assertRaises(ArchiveError):
            read_archive(self.path)

    def test_wrong_kind(self):
        write_archive(self.path, "image_series", {}, {"images": np.zeros((1, 2, 2))})
        with self.assertRaises(ArchiveError):
            archive.load_latents(self.path)

    def test_truncated(self):
        write_archive(self.path, "test", {}, {"a": np.arange(100.0)})
        with open(self.path, "rb") as f:
            content = f.read()
        with open(self.path, "wb") as f:
            f.write(content[:-16])
        with self.assertRaises(ArchiveError):
            read_archive(self.path)

    def test_unserializable_meta(self):
        with self.assertRaises(ArchiveError):
            write_archive(self.path, "test", {"bad": object()}, {})

    def test_archive_info(self):
        write_archive(self.path, "test", {}, {"a": np.zeros(3), "b": np.zeros(2)})
        info = archive_info(self.path)
        self.assertEqual(info["kind"], "test")
        self.assertEqual(info["blocks"], ["a", "b"])
        self.assertEqual(info["file_size_bytes"], os.path.getsize(self.path))
        missing = archive_info(os.path.join(self.test_dir, "missing.dra"))
        self.assertFalse(missing["exists"])
        self.assertIn("error", missing)


class TestTypedArchives(unittest.TestCase):
    """Test cases for the typed save/load pairs."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.truth = tiny_truth()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def path(self, name):
        return os.path.join(self.test_dir, name + ".dra")

    def test_phantom_truth(self):
        archive.save_phantom_truth(self.truth, self.path("truth"))
        loaded = archive.load_phantom_truth(self.path("truth"))
        self.assertEqual(loaded.spec, self.truth.spec)
        self.assertEqual(loaded.images.tobytes(), self.truth.images.tobytes())
        self.assertEqual(loaded.cardiac_phase.tobytes(), self.truth.cardiac_phase.tobytes())
        self.assertEqual(loaded.resp_phase.tobytes(), self.truth.resp_phase.tobytes())

    def test_measurement_set(self):
        mset = simulate_acquisition(self.truth, lines_per_frame=3, num_coils=2, noise_sigma=0.05, seed=4)
        archive.save_measurement_set(mset, self.path("measurements"))
        loaded = archive.load_measurement_set(self.path("measurements"))
        self.assertEqual(loaded.noise_sigma, 0.05)
        self.assertTrue(torch.equal(loaded.coils.maps, mset.coils.maps))
        for a, b in zip(mset.frames, loaded.frames):
            self.assertEqual(a.pattern.frame_index, b.pattern.frame_index)
            self.assertEqual(a.pattern.lines, b.pattern.lines)
            self.assertTrue(torch.equal(a.pattern.mask, b.pattern.mask))
            self.assertTrue(torch.equal(a.positions, b.positions))
            self.assertEqual(a.samples.numpy().tobytes(), b.samples.numpy().tobytes())

    def test_binned_measurement_set(self):
        """Repeated positions of binned frames survive the round trip."""
        binned = bin_measurements(simulate_acquisition(self.truth, lines_per_frame=3), 2)
        archive.save_measurement_set(binned, self.path("binned"))
        loaded = archive.load_measurement_set(self.path("binned"))
        for a, b in zip(binned.frames, loaded.frames):
            self.assertTrue(torch.equal(a.positions, b.positions))
            self.assertTrue(torch.equal(apply_adjoint_frame(a, binned.coils), apply_adjoint_frame(b, loaded.coils)))

    def test_image_series(self):
        images = torch.from_numpy(self.truth.images)
        archive.save_image_series(images, self.path("images"), meta={"run": "a"})
        self.assertEqual(archive.load_image_series(self.path("images")).tobytes(), self.truth.images.tobytes())

    def test_latents(self):
        latents = LatentSequence(torch.randn(5, 2, dtype=torch.float64), frame_times=[0.0, 1.0, 2.5, 3.0, 4.0])
        archive.save_latents(latents, self.path("latents"))
        loaded = archive.load_latents(self.path("latents"))
        self.assertTrue(torch.equal(loaded.z, latents.z))
        np.testing.assert_array_equal(loaded.frame_times, latents.frame_times)

    def test_generator(self):
        state = init_generator(GeneratorConfig(output_shape=(16, 16), base_channels=8, seed=6))
        archive.save_generator(state, self.path("generator"))
        loaded = archive.load_generator(self.path("generator"))
        self.assertEqual(loaded.config, state.config)
        z = torch.tensor([[0.1, -0.3], [0.4, 0.2]], dtype=torch.float64)
        with torch.no_grad():
            self.assertTrue(torch.equal(generate(loaded, z), generate(state, z)))


if __name__ == '__main__':
    unittest.main()
