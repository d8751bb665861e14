import csv
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

from wgsr import trainer as trainer_module
from wgsr.autodiff import DiffTensor, ParameterSet, Tape, backward, mul, sub, sum_all
from wgsr.checkpoint import load_checkpoint
from wgsr.dataset import SRDataset
from wgsr.errors import MissingGradientError
from wgsr.imaging import ImageTensor, bicubic_resize, load_png, save_png, to_batch
from wgsr.losses import default_weights
from wgsr.metrics import lr_psnr
from wgsr.models import DiscriminatorConfig, Domain, GeneratorConfig, LossWeights, TrainConfig
from wgsr.networks import build_generator
from wgsr.trainer import RUN_COLUMNS, AdamState, Trainer, adam_step, load_generator_checkpoint, lr_at, upscale

SLOW = os.environ.get("WGSR_SLOW_TESTS") == "1"


def smooth_image(size: int, seed: int = 0, factor: int = 8) -> ImageTensor:
    rng = np.random.default_rng(seed)
    coarse = rng.random((size // factor, size // factor, 3))
    return bicubic_resize(ImageTensor(coarse), factor)


def blob_image(size: int) -> ImageTensor:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    blob = np.exp(-((yy - centre) ** 2 + (xx - centre) ** 2) / (2.0 * (size / 4.0) ** 2))
    return ImageTensor(np.stack([0.3 + 0.3 * blob, 0.4 + 0.2 * blob, 0.5 - 0.2 * blob], axis=2))


def tiny_config(**overrides) -> TrainConfig:
    values = dict(
        patch_size=4,
        batch_size=2,
        lr=1e-3,
        iterations=4,
        pretrain_iters=4,
        wavelet="haar",
        log_every=2,
        prefetch_workers=0,
        seed=3,
        generator=GeneratorConfig(num_blocks=1, features=8, growth=4),
        discriminator=DiscriminatorConfig(conv_layers=3, base_features=4, max_features=8, hidden=8),
    )
    values.update(overrides)
    return TrainConfig(**values)


def read_log(path):
    with open(path) as f:
        return list(csv.DictReader(f))


class TestOptimizer(unittest.TestCase):
    def test_lr_halves_once(self):
        cfg = TrainConfig(lr=2e-4, lr_halving_step=10)
        self.assertEqual(lr_at(0, cfg), 2e-4)
        self.assertEqual(lr_at(9, cfg), 2e-4)
        self.assertEqual(lr_at(10, cfg), 1e-4)
        self.assertEqual(lr_at(10_000, cfg), 1e-4)

    def test_first_step_moves_by_lr(self):
        """With bias correction the first update is lr * g / (|g| + eps)."""
        params = ParameterSet({"w": DiffTensor(np.array([1.0, -1.0]), requires_grad=True)})
        adam_step(params, {"w": np.array([0.5, -2.0])}, AdamState(), lr=0.1)
        np.testing.assert_allclose(params["w"].values, [0.9, -0.9], atol=1e-6)

    def test_missing_gradient(self):
        params = ParameterSet({"w": DiffTensor(np.ones(2), requires_grad=True)})
        with self.assertRaises(MissingGradientError):
            adam_step(params, None, AdamState(), lr=0.1)

    def test_minimises_quadratic(self):
        w = DiffTensor(np.array([0.0]), requires_grad=True)
        params = ParameterSet({"w": w})
        state = AdamState()
        for _ in range(400):
            params.zero_grad()
            with Tape() as tape:
                diff = sub(w, 3.0)
                loss = sum_all(mul(diff, diff))
            backward(tape, loss)
            adam_step(params, None, state, lr=0.05)
        self.assertAlmostEqual(float(w.values[0]), 3.0, places=2)
        self.assertEqual(state.step, 400)


class TestTrainer(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.dataset = SRDataset.from_images([smooth_image(32, 0), smooth_image(32, 1)])

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _out(self, name):
        return os.path.join(self.test_dir, name)

    def test_pretrain_writes_checkpoint_and_log(self):
        trainer = Trainer(tiny_config(), self._out("pre"))
        result = trainer.run_pretrain(self.dataset)
        self.assertTrue(result.success, result.message)
        tensors, meta = load_checkpoint(result.output_path)
        self.assertEqual(meta["kind"], "generator-pretrain")
        self.assertEqual(meta["seed"], 3)
        self.assertEqual(meta["config_hash"], trainer.cfg.config_hash())
        self.assertEqual(set(tensors), set(trainer.generator.params))
        rows = read_log(self._out("pre/pretrain_log.csv"))
        self.assertEqual(len(rows), 4)
        self.assertEqual(list(rows[0]), ["iter", "L_pix", "lr", "seed", "config_hash"])

    def test_train_writes_outputs(self):
        trainer = Trainer(tiny_config(), self._out("gan"))
        result = trainer.run_train(self.dataset)
        self.assertTrue(result.success, result.message)
        self.assertTrue(os.path.exists(self._out("gan/generator.wgsr")))
        self.assertTrue(os.path.exists(self._out("gan/discriminator.wgsr")))
        rows = read_log(self._out("gan/train_log.csv"))
        self.assertEqual(len(rows), 4)
        for row in rows:
            for key in ("L_SWT", "L_adv_G_SWT", "L_D_SWT", "L_perc", "L_G"):
                self.assertTrue(np.isfinite(float(row[key])), key)
        self.assertIn("L_G", result.metrics)

    def test_loss_columns_follow_domains(self):
        """Every fidelity/adversarial domain combination runs and names its columns."""
        for fidelity in (Domain.RGB, Domain.SWT):
            for adv in (Domain.RGB, Domain.SWT):
                out = self._out(f"{fidelity.value}_{adv.value}")
                trainer = Trainer(tiny_config(fidelity_domain=fidelity, adv_domain=adv, iterations=2), out)
                result = trainer.run_train(self.dataset)
                self.assertTrue(result.success, result.message)
                header = list(read_log(os.path.join(out, "train_log.csv"))[0])
                fid_col = "L_SWT" if fidelity == Domain.SWT else "L_l1_RGB"
                self.assertEqual(
                    header,
                    ["iter", fid_col, f"L_adv_G_{adv.value}", f"L_D_{adv.value}", "L_perc", "L_G", "lr"] + RUN_COLUMNS,
                )

    def test_variants_run(self):
        """Level-2 weights, relativistic losses, raw-sum l1 and extra D steps all train."""
        cfg = tiny_config(
            swt_levels=2, relativistic=True, l1_raw_sum=True, d_steps_per_g=2, perc_kind="off", iterations=2,
        )
        self.assertEqual(cfg.weights, default_weights(2))
        result = Trainer(cfg, self._out("variants")).run_train(self.dataset)
        self.assertTrue(result.success, result.message)
        rows = read_log(self._out("variants/train_log.csv"))
        self.assertEqual(float(rows[0]["L_perc"]), 0.0)

    def test_runs_are_deterministic(self):
        """Same seed and config give byte-identical checkpoints and logs, threaded prefetch included."""
        blobs = []
        for run in ("a", "b"):
            cfg = tiny_config(
                prefetch_workers=2,
                discriminator=DiscriminatorConfig(conv_layers=3, base_features=4, max_features=8, hidden=8,
                                                  batch_norm=False),
            )
            Trainer(cfg, self._out(run)).run_train(self.dataset)
            with open(self._out(f"{run}/generator.wgsr"), "rb") as f:
                generator = f.read()
            with open(self._out(f"{run}/discriminator.wgsr"), "rb") as f:
                discriminator = f.read()
            with open(self._out(f"{run}/train_log.csv"), "rb") as f:
                log = f.read()
            blobs.append((generator, discriminator, log))
        self.assertEqual(blobs[0], blobs[1])

    def test_zero_adversarial_weight_decouples_generator(self):
        """With lambda_adv = 0 the generator trajectory does not depend on the discriminator."""
        states = []
        for train_d in (True, False):
            cfg = tiny_config(train_discriminator=train_d)
            cfg.weights = cfg.weights.model_copy(update={"adv": 0.0})
            trainer = Trainer(cfg, self._out(f"adv0_{train_d}"))
            self.assertTrue(trainer.run_train(self.dataset).success)
            states.append(trainer.generator.params.state())
        for name in states[0]:
            np.testing.assert_array_equal(states[0][name], states[1][name])

    def test_init_checkpoint_is_loaded(self):
        pre = Trainer(tiny_config(), self._out("pre"))
        path = pre.run_pretrain(self.dataset).output_path
        gan = Trainer(tiny_config(iterations=0), self._out("gan"))
        self.assertTrue(gan.run_train(self.dataset, init_checkpoint=path).success)
        for name, tensor in pre.generator.params.items():
            np.testing.assert_array_equal(gan.generator.params[name].values, tensor.values)

    def test_non_finite_loss_stops_with_last_good(self):
        def broken_l1(x, y, reduction="mean"):
            return DiffTensor(np.array(np.nan, dtype=np.float32))

        trainer = Trainer(tiny_config(), self._out("nan"))
        with patch.object(trainer_module, "l1", broken_l1):
            result = trainer.run_pretrain(self.dataset)
        self.assertFalse(result.success)
        self.assertIn("L_pix", result.message)
        self.assertIn("iteration 0", result.message)
        self.assertTrue(os.path.exists(self._out("nan/generator.last_good.wgsr")))

    def test_empty_dataset(self):
        result = Trainer(tiny_config(), self._out("empty")).run_pretrain(SRDataset([]))
        self.assertFalse(result.success)
        self.assertTrue(result.errors)

    def test_upscale_folder(self):
        trainer = Trainer(tiny_config(), self._out("model"))
        path = trainer.save_generator(self._out("model/generator.wgsr"), step=0)
        generator = load_generator_checkpoint(path)
        for name, tensor in trainer.generator.params.items():
            np.testing.assert_array_equal(generator.params[name].values, tensor.values)

        save_png(smooth_image(8), self._out("lr/a.png"))
        written = upscale(generator, self._out("lr"), self._out("sr"))
        self.assertEqual(len(written), 1)
        self.assertEqual(load_png(written[0]).data.shape, (32, 32, 3))

    def test_logs_record_seed_and_config_hash(self):
        trainer = Trainer(tiny_config(iterations=2, pretrain_iters=2), self._out("run"))
        self.assertTrue(trainer.run_pretrain(self.dataset).success)
        self.assertTrue(trainer.run_train(self.dataset).success)
        for name in ("pretrain_log.csv", "train_log.csv"):
            for row in read_log(self._out(f"run/{name}")):
                self.assertEqual(row["seed"], "3")
                self.assertEqual(row["config_hash"], trainer.cfg.config_hash())

    def test_all_zero_weights_still_train(self):
        """With every loss term weighted zero the run completes and the generator stays put."""
        weights = LossWeights(subband={"LL": 0.0, "LH": 0.0, "HL": 0.0, "HH": 0.0}, adv=0.0, perc=0.0)
        trainer = Trainer(tiny_config(weights=weights, perc_kind="off"), self._out("zero"))
        before = trainer.generator.params.state()
        result = trainer.run_train(self.dataset)
        self.assertTrue(result.success, result.message)
        rows = read_log(self._out("zero/train_log.csv"))
        self.assertEqual([float(r["L_G"]) for r in rows], [0.0] * 4)
        for name, values in trainer.generator.params.state().items():
            np.testing.assert_array_equal(values, before[name])

    def test_pretrain_checkpoints_are_byte_identical(self):
        blobs = []
        for run in ("a", "b"):
            path = Trainer(tiny_config(), self._out(run)).run_pretrain(self.dataset).output_path
            with open(path, "rb") as f:
                blobs.append(f.read())
        self.assertEqual(blobs[0], blobs[1])

    def test_zero_iterations_saves_the_initialisation(self):
        cfg = tiny_config(iterations=0)
        result = Trainer(cfg, self._out("init")).run_train(self.dataset)
        self.assertTrue(result.success, result.message)
        tensors, meta = load_checkpoint(result.output_path)
        self.assertEqual(meta["step"], 0)
        expected = build_generator(cfg.generator, cfg.seed).params.state()
        self.assertEqual(list(tensors), list(expected))
        for name in expected:
            np.testing.assert_array_equal(tensors[name], expected[name])

    def test_untrained_generator_starts_lr_consistent(self):
        """With the image skip and a zeroed output conv, SR is the bicubic upscale of LR."""
        cfg = GeneratorConfig(num_blocks=1, features=8, growth=4, output_init_scale=0.0)
        lr = blob_image(16)
        sr = trainer_module.super_resolve(build_generator(cfg, 0), lr)
        np.testing.assert_allclose(sr.data, bicubic_resize(lr, 4).data, atol=1e-6)
        self.assertGreaterEqual(lr_psnr(sr, lr), 45.0)


@unittest.skipUnless(SLOW, "set WGSR_SLOW_TESTS=1 to run the training smoke test")
class TestDeskScaleTraining(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.hr = smooth_image(64, 5, factor=16)
        self.dataset = SRDataset.from_images([self.hr])

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_overfit_single_image(self):
        cfg = TrainConfig(patch_size=16, batch_size=2, pretrain_iters=500, iterations=1000, wavelet="sym7",
                          swt_levels=1, seed=0, prefetch_workers=2)
        trainer = Trainer(cfg, self.test_dir)

        self.assertTrue(trainer.run_pretrain(self.dataset).success)
        pixel = [row["L_pix"] for row in trainer.history]
        self.assertLessEqual(np.mean(pixel[-20:]), 0.5 * np.mean(pixel[:20]))

        result = trainer.run_train(self.dataset)
        self.assertTrue(result.success, result.message)
        fidelity = np.array([row["L_SWT"] for row in trainer.history])
        for row in trainer.history:
            self.assertTrue(all(np.isfinite(v) for v in row.values()))
        self.assertLess(fidelity[-100:].mean(), fidelity[:100].mean())

        lr = self.dataset[0].lr
        sr = trainer_module.super_resolve(trainer.generator, lr)
        self.assertGreaterEqual(lr_psnr(sr, lr), 45.0)

    def test_full_sizes_construct(self):
        cfg = TrainConfig.full()
        trainer = Trainer(cfg, self.test_dir)
        sr = trainer.generator(to_batch([self.dataset[0].lr])[:, :, :8, :8])
        self.assertEqual(sr.shape, (1, 3, 32, 32))


if __name__ == '__main__':
    unittest.main()
