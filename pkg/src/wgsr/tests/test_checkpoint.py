import os
import shutil
import struct
import tempfile
import unittest

import numpy as np

from wgsr.checkpoint import MAGIC, decode, encode, load_checkpoint, save_checkpoint
from wgsr.errors import CheckpointFormatError


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.tensors = {
            "conv.weight": np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2),
            "conv.bias": np.array([0.5, -0.25], dtype=np.float64),
        }
        self.meta = {"seed": 7, "step": 100, "kind": "generator", "config_hash": "abc"}

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_save_and_load(self):
        path = save_checkpoint(os.path.join(self.test_dir, "nested", "g.wgsr"), self.tensors, self.meta)
        tensors, meta = load_checkpoint(path)
        self.assertEqual(meta, self.meta)
        self.assertEqual(list(tensors), ["conv.weight", "conv.bias"])
        self.assertEqual(tensors["conv.weight"].dtype, np.float32)
        self.assertEqual(tensors["conv.bias"].dtype, np.float64)
        np.testing.assert_array_equal(tensors["conv.weight"], self.tensors["conv.weight"])

    def test_header_layout(self):
        """Magic, version 1, tensor count, then the metadata length."""
        blob = encode(self.tensors, self.meta)
        self.assertEqual(blob[:4], MAGIC)
        version, count = struct.unpack("<HI", blob[4:10])
        self.assertEqual((version, count), (1, 2))
        (meta_len,) = struct.unpack("<I", blob[10:14])
        self.assertIn(b'"seed": 7', blob[14:14 + meta_len])

    def test_encoding_is_deterministic(self):
        self.assertEqual(encode(self.tensors, self.meta), encode(dict(self.tensors), dict(self.meta)))

    def test_bad_magic(self):
        blob = b"XXXX" + encode(self.tensors, self.meta)[4:]
        with self.assertRaises(CheckpointFormatError):
            decode(blob)

    def test_truncated(self):
        blob = encode(self.tensors, self.meta)
        with self.assertRaises(CheckpointFormatError):
            decode(blob[:-3])

    def test_trailing_bytes(self):
        with self.assertRaises(CheckpointFormatError):
            decode(encode(self.tensors, self.meta) + b"\x00")

    def test_unsupported_dtype(self):
        with self.assertRaises(CheckpointFormatError):
            encode({"ids": np.arange(3)}, {})

    def test_missing_file(self):
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(os.path.join(self.test_dir, "nope.wgsr"))


if __name__ == '__main__':
    unittest.main()
