import os
import shutil
import tempfile
import unittest

import numpy as np

from wgsr.dataset import BatchPrefetcher, SRDataset, crop_pair, load_dataset, make_pair
from wgsr.errors import EmptyDatasetError, ImageTooSmallError, ShapeError
from wgsr.imaging import ImageTensor, bicubic_resize, save_png


class TestPairs(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(8)

    def test_hr_trimmed_and_lr_generated(self):
        pair = make_pair("x", ImageTensor(self.rng.random((18, 23, 3))))
        self.assertEqual((pair.hr.height, pair.hr.width), (16, 20))
        self.assertEqual((pair.lr.height, pair.lr.width), (4, 5))

    def test_mismatched_lr(self):
        with self.assertRaises(ShapeError):
            make_pair("x", ImageTensor(np.zeros((16, 16, 3))), ImageTensor(np.zeros((5, 4, 3))))

    def test_crop_alignment(self):
        """The HR crop sits at exactly four times the LR offset."""
        hr = ImageTensor(self.rng.random((32, 32, 3)))
        lr = bicubic_resize(hr, 0.25)
        rng = np.random.default_rng(0)
        lr_crop, hr_crop = crop_pair(lr, hr, 4, rng)
        self.assertEqual(lr_crop.data.shape, (4, 4, 3))
        self.assertEqual(hr_crop.data.shape, (16, 16, 3))
        replay = np.random.default_rng(0)
        top, left = int(replay.integers(0, 5)), int(replay.integers(0, 5))
        np.testing.assert_array_equal(hr_crop.data, hr.data[4 * top:4 * top + 16, 4 * left:4 * left + 16])
        np.testing.assert_array_equal(lr_crop.data, lr.data[top:top + 4, left:left + 4])

    def test_patch_larger_than_image(self):
        hr = ImageTensor(np.zeros((16, 16, 3)))
        with self.assertRaises(ImageTooSmallError):
            crop_pair(bicubic_resize(hr, 0.25), hr, 8, np.random.default_rng(0))


class TestLoading(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.rng = np.random.default_rng(2)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_generated_lr(self):
        for name in ("b.png", "a.png"):
            save_png(ImageTensor(self.rng.random((32, 32, 3))), os.path.join(self.test_dir, "HR", name))
        dataset = load_dataset(self.test_dir, workers=2)
        self.assertEqual(len(dataset), 2)
        self.assertEqual([p.name for p in dataset.pairs], ["a.png", "b.png"])
        self.assertEqual(dataset[0].lr.data.shape, (8, 8, 3))

    def test_lr_from_disk(self):
        save_png(ImageTensor(self.rng.random((32, 32, 3))), os.path.join(self.test_dir, "HR", "a.png"))
        save_png(ImageTensor(np.zeros((8, 8, 3))), os.path.join(self.test_dir, "LR", "a.png"))
        dataset = load_dataset(self.test_dir)
        np.testing.assert_array_equal(dataset[0].lr.data, 0.0)

    def test_empty(self):
        with self.assertRaises(EmptyDatasetError):
            load_dataset(self.test_dir)


class TestPrefetcher(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.dataset = SRDataset.from_images([ImageTensor(rng.random((32, 32, 3))) for _ in range(3)])

    def _take(self, workers, n=6):
        with BatchPrefetcher(self.dataset, 2, 4, seed=11, workers=workers, depth=3) as batches:
            return [next(batches) for _ in range(n)]

    def test_batch_shapes(self):
        lr, hr = self._take(0, 1)[0]
        self.assertEqual(lr.shape, (2, 3, 4, 4))
        self.assertEqual(hr.shape, (2, 3, 16, 16))
        self.assertEqual(lr.dtype, np.float32)

    def test_order_independent_of_workers(self):
        """Threaded prefetching yields the same batches as the serial path."""
        serial = self._take(0)
        threaded = self._take(3)
        for (lr_a, hr_a), (lr_b, hr_b) in zip(serial, threaded):
            np.testing.assert_array_equal(lr_a, lr_b)
            np.testing.assert_array_equal(hr_a, hr_b)

    def test_rejects_small_images_and_empty_sets(self):
        with self.assertRaises(ImageTooSmallError):
            BatchPrefetcher(self.dataset, 2, 16, seed=0)
        with self.assertRaises(EmptyDatasetError):
            BatchPrefetcher(SRDataset([]), 2, 4, seed=0)


if __name__ == '__main__':
    unittest.main()
