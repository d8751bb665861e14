import os
import shutil
import tempfile
import unittest

import numpy as np

from wgsr.errors import ImageTooSmallError, LevelError, SubbandMismatchError, UnknownWaveletError
from wgsr.wavelets import (
    LEVEL1_LABELS,
    LEVEL2_LABELS,
    PR_TOLERANCE,
    SubbandSet,
    check_perfect_reconstruction,
    dump_subbands,
    labels_for,
    make_filter,
    supported_families,
    swt2_forward,
    swt2_inverse,
    upsample_taps,
)


def brute_force_circular(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[i, j] = sum_{a, b} kernel[a, b] * plane[(i - a) mod H, (j - b) mod W]."""
    height, width = plane.shape
    out = np.zeros_like(plane)
    for i in range(height):
        for j in range(width):
            acc = 0.0
            for a in range(kernel.shape[0]):
                for b in range(kernel.shape[1]):
                    acc += kernel[a, b] * plane[(i - a) % height, (j - b) % width]
            out[i, j] = acc
    return out


class TestFilters(unittest.TestCase):
    def test_supported_families_are_ordered(self):
        """The family list matches the documented set and order."""
        self.assertEqual(
            supported_families(),
            ["haar", "db2", "db7", "db19", "sym7", "sym19", "bior2.6", "bior4.4"],
        )

    def test_unknown_family(self):
        """Unknown identifiers raise and name the supported set."""
        with self.assertRaises(UnknownWaveletError) as ctx:
            make_filter("coif3")
        self.assertIn("sym7", str(ctx.exception))
        self.assertEqual(ctx.exception.family, "coif3")

    def test_haar_closed_form(self):
        """haar taps are 1/sqrt(2) with the alternating-sign high-pass."""
        filt = make_filter("haar")
        r = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(filt.dec_lo, [r, r])
        np.testing.assert_allclose(filt.dec_hi, [r, -r])
        np.testing.assert_allclose(filt.rec_lo, [r, r])

    def test_orthogonal_families_satisfy_qmf(self):
        """Orthogonal filters have unit norm, sqrt(2) DC gain and the QMF high-pass."""
        for family in ("haar", "db2", "db7", "db19", "sym7", "sym19"):
            filt = make_filter(family)
            length = filt.length
            self.assertTrue(filt.orthogonal)
            self.assertAlmostEqual(float(np.sum(filt.dec_lo ** 2)), 1.0, places=10)
            self.assertAlmostEqual(float(np.sum(filt.dec_lo)), np.sqrt(2.0), places=10)
            expected_hi = np.array([(-1) ** k * filt.dec_lo[length - 1 - k] for k in range(length)])
            np.testing.assert_allclose(filt.dec_hi, expected_hi, atol=1e-15)
            np.testing.assert_allclose(filt.rec_lo, filt.dec_lo[::-1])
            np.testing.assert_allclose(filt.rec_hi, filt.dec_hi[::-1])

    def test_filter_lengths(self):
        """Tap counts follow the family orders."""
        self.assertEqual(make_filter("haar").length, 2)
        self.assertEqual(make_filter("db2").length, 4)
        self.assertEqual(make_filter("db7").length, 14)
        self.assertEqual(make_filter("sym19").length, 38)

    def test_every_family_passes_reconstruction_check(self):
        """Every family, biorthogonal included, meets the PR transfer condition."""
        for family in supported_families():
            filt = make_filter(family)
            self.assertLessEqual(check_perfect_reconstruction(filt), PR_TOLERANCE, family)
            self.assertEqual(filt.length % 2, 0, family)

    def test_upsample_taps(self):
        """A trous upsampling inserts step - 1 zeros between taps."""
        np.testing.assert_array_equal(upsample_taps(np.array([1.0, 2.0, 3.0]), 2), [1.0, 0.0, 2.0, 0.0, 3.0])
        np.testing.assert_array_equal(upsample_taps(np.array([1.0, 2.0]), 1), [1.0, 2.0])


class TestSwt(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_labels(self):
        """Level 1 has four subbands and level 2 seven, in canonical order."""
        self.assertEqual(labels_for(1), ("LL", "LH", "HL", "HH"))
        self.assertEqual(labels_for(2), ("L-LL", "L-LH", "L-HL", "L-HH", "LH", "HL", "HH"))
        with self.assertRaises(LevelError):
            labels_for(3)

    def test_subbands_keep_resolution(self):
        """Every subband has the input's shape."""
        plane = self.rng.random((20, 27))
        result = swt2_forward(plane, make_filter("db2"), levels=2)
        self.assertEqual(tuple(result.labels), LEVEL2_LABELS)
        for label in result.labels:
            self.assertEqual(result[label].shape, (20, 27))
        self.assertEqual((result.height, result.width), (20, 27))

    def test_perfect_reconstruction_all_families(self):
        """Round trip is exact to 1e-9 for random sizes, both parities, every family and level."""
        families = supported_families()
        for trial in range(50):
            family = families[trial % len(families)]
            filt = make_filter(family)
            low = max(16, filt.length)
            height = int(self.rng.integers(low, 65))
            width = int(self.rng.integers(low, 65))
            plane = self.rng.random((height, width))
            for levels in (1, 2):
                restored = swt2_inverse(swt2_forward(plane, filt, levels), filt)
                err = float(np.max(np.abs(restored - plane)))
                self.assertLessEqual(err, 1e-9, f"{family} L{levels} {height}x{width}: {err}")

    def test_shift_equivariance_is_exact(self):
        """Subbands of a circularly shifted image equal the shifted subbands bitwise."""
        families = supported_families()
        for trial in range(20):
            filt = make_filter(families[trial % len(families)])
            size = max(16, filt.length) + int(self.rng.integers(0, 8))
            plane = self.rng.random((size, size + 3))
            dy, dx = int(self.rng.integers(-size, size)), int(self.rng.integers(-size, size))
            levels = 1 + trial % 2
            shifted = swt2_forward(np.roll(plane, (dy, dx), axis=(0, 1)), filt, levels)
            base = swt2_forward(plane, filt, levels)
            for label in base.labels:
                np.testing.assert_array_equal(shifted[label], np.roll(base[label], (dy, dx), axis=(0, 1)))

    def test_matches_brute_force_convolution(self):
        """Level-1 subbands equal 2-D circular convolution with the outer-product kernels."""
        filt = make_filter("db2")
        kernels = {
            "LL": np.outer(filt.dec_lo, filt.dec_lo),
            "LH": np.outer(filt.dec_hi, filt.dec_lo),
            "HL": np.outer(filt.dec_lo, filt.dec_hi),
            "HH": np.outer(filt.dec_hi, filt.dec_hi),
        }
        for _ in range(10):
            plane = self.rng.random((16, 16))
            result = swt2_forward(plane, filt, 1)
            for label, kernel in kernels.items():
                np.testing.assert_allclose(result[label], brute_force_circular(plane, kernel), atol=1e-10)

    def test_orthogonal_energy_is_preserved(self):
        """The undecimated transform is a tight frame: subband energy is four times the image energy."""
        for family in supported_families():
            filt = make_filter(family)
            if not filt.orthogonal:
                continue
            size = max(16, filt.length) + 5
            plane = self.rng.standard_normal((size, size + 2))
            bands = swt2_forward(plane, filt, 1)
            energy = sum(float(np.sum(bands[label] ** 2)) for label in bands.labels) / 4.0
            self.assertAlmostEqual(energy / float(np.sum(plane ** 2)), 1.0, delta=1e-6, msg=family)

    def test_level_two_details_equal_level_one(self):
        for family in ("haar", "db2", "sym7", "bior2.6"):
            filt = make_filter(family)
            plane = self.rng.random((32, 30))
            one = swt2_forward(plane, filt, 1)
            two = swt2_forward(plane, filt, 2)
            for label in ("LH", "HL", "HH"):
                np.testing.assert_array_equal(two[label], one[label])

    def test_haar_detail_of_constant_is_zero(self):
        """A constant image has no detail energy and LL = 2 * value for haar."""
        plane = np.full((16, 16), 0.25)
        result = swt2_forward(plane, make_filter("haar"), 1)
        np.testing.assert_allclose(result["LL"], 0.5)
        for label in ("LH", "HL", "HH"):
            np.testing.assert_allclose(result[label], 0.0, atol=1e-15)

    def test_linearity(self):
        """Subbands of a sum are the sum of subbands."""
        filt = make_filter("sym7")
        a, b = self.rng.random((24, 24)), self.rng.random((24, 24))
        combined = swt2_forward(a, filt, 1) + swt2_forward(b, filt, 1)
        direct = swt2_forward(a + b, filt, 1)
        for label in LEVEL1_LABELS:
            np.testing.assert_allclose(combined[label], direct[label], atol=1e-12)

    def test_image_smaller_than_filter(self):
        """Images smaller than the filter support are rejected."""
        with self.assertRaises(ImageTooSmallError):
            swt2_forward(np.zeros((8, 40)), make_filter("db7"), 1)

    def test_bad_level(self):
        """Only levels 1 and 2 are accepted."""
        with self.assertRaises(LevelError):
            swt2_forward(np.zeros((16, 16)), make_filter("haar"), 3)

    def test_inverse_rejects_mismatched_labels(self):
        """The inverse refuses a set whose labels do not match its level."""
        bands = swt2_forward(self.rng.random((16, 16)), make_filter("haar"), 1).subbands
        with self.assertRaises(SubbandMismatchError):
            swt2_inverse(SubbandSet(levels=2, subbands=bands), make_filter("haar"))
        partial = {k: v for k, v in bands.items() if k != "HH"}
        with self.assertRaises(SubbandMismatchError):
            swt2_inverse(SubbandSet(levels=1, subbands=partial), make_filter("haar"))

    def test_add_mismatched_sets(self):
        a = swt2_forward(self.rng.random((16, 16)), make_filter("haar"), 1)
        b = swt2_forward(self.rng.random((16, 16)), make_filter("haar"), 2)
        with self.assertRaises(SubbandMismatchError):
            a + b

    def test_dump_subbands(self):
        """Each subband is written as a PNG with its range in the sidecar."""
        result = swt2_forward(self.rng.random((16, 16)), make_filter("haar"), 1)
        sidecar = dump_subbands(result, os.path.join(self.test_dir, "bands"))
        for label in LEVEL1_LABELS:
            self.assertTrue(os.path.exists(os.path.join(self.test_dir, "bands", f"{label}.png")))
        with open(sidecar) as f:
            lines = f.read().splitlines()
        self.assertEqual([line.split()[0] for line in lines], list(LEVEL1_LABELS))
        lo, hi = map(float, lines[0].split()[1:])
        self.assertAlmostEqual(lo, float(result["LL"].min()))
        self.assertAlmostEqual(hi, float(result["LL"].max()))


if __name__ == '__main__':
    unittest.main()
