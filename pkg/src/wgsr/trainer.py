import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from .autodiff import (
    DiffTensor,
    ParameterSet,
    Tape,
    backward,
    channel_combine,
    l1,
    swt_forward_diff,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import BatchPrefetcher, SRDataset
from .errors import (
    CheckpointFormatError,
    EmptyDatasetError,
    MissingGradientError,
    NonFiniteLossError,
    WgsrError,
)
from .imaging import ImageTensor, from_batch, load_png, luma_coefficients, save_png, to_batch
from .losses import (
    FrozenConvExtractor,
    adversarial_generator_loss,
    discriminator_loss,
    perceptual_loss,
    swt_fidelity_loss,
    total_generator_loss,
)
from .models import Domain, GeneratorConfig, PerceptualKind, RunResult, TrainConfig
from .networks import Generator, build_generator, build_swt_discriminator, detail_concat
from .wavelets import make_filter

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RUN_COLUMNS = ["seed", "config_hash"]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: ParameterSet,
    grads: Optional[Mapping[str, np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """
    Bias-corrected Adam update, in place on ``params``.

    Gradients come from ``grads`` when given, otherwise from each tensor's
    grad slot. Moments are kept in float64.
    """
    resolved = {}
    for name, tensor in params.items():
        g = grads[name] if grads is not None and name in grads else tensor.grad
        if g is None:
            raise MissingGradientError(f"No gradient for parameter '{name}'")
        resolved[name] = np.asarray(g, dtype=np.float64)

    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, tensor in params.items():
        g = resolved[name]
        if name not in state.m:
            state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + eps)
        tensor.values = (tensor.values.astype(np.float64) - update).astype(tensor.dtype)
    return state


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Single halving: cfg.lr before ``lr_halving_step`` iterations, half of it from then on."""
    return cfg.lr if step < cfg.lr_halving_step else cfg.lr * 0.5


class Trainer:
    """Pixel pretraining and wavelet-guided adversarial training of the generator."""

    def __init__(self, cfg: TrainConfig, out_dir: PathLike):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.filter = make_filter(cfg.wavelet)
        self.generator = build_generator(cfg.generator, cfg.seed)
        self.discriminator = None
        if cfg.train_discriminator:
            self.discriminator = build_swt_discriminator(cfg.discriminator, cfg.seed + 1)
        self.extractor = None
        if cfg.perc_kind == PerceptualKind.FEATURE:
            self.extractor = FrozenConvExtractor(seed=cfg.perceptual_seed)
        self.g_state = AdamState()
        self.d_state = AdamState()
        self.history: List[Dict[str, float]] = []
        self._luma_weights, self._luma_offset = luma_coefficients()

    @property
    def columns(self) -> List[str]:
        fidelity = "L_SWT" if self.cfg.fidelity_domain == Domain.SWT else "L_l1_RGB"
        adv = self.cfg.adv_domain.value
        return ["iter", fidelity, f"L_adv_G_{adv}", f"L_D_{adv}", "L_perc", "L_G", "lr"]

    def _meta(self, kind: str, step: int) -> Dict[str, object]:
        return {
            "kind": kind,
            "seed": self.cfg.seed,
            "config_hash": self.cfg.config_hash(),
            "step": step,
            "generator": self.cfg.generator.model_dump(),
        }

    def save_generator(self, path: PathLike, step: int, kind: str = "generator") -> Path:
        return save_checkpoint(path, self.generator.params.state(), self._meta(kind, step))

    def load_generator(self, path: PathLike) -> None:
        tensors, meta = load_checkpoint(path)
        self.generator.params.load_state(tensors)
        logger.info("Loaded generator from %s (seed %s, step %s)", path, meta.get("seed"), meta.get("step"))

    def _save_last_good(self, step: int) -> None:
        self.save_generator(self.out_dir / "generator.last_good.wgsr", step)
        if self.discriminator is not None:
            save_checkpoint(
                self.out_dir / "discriminator.last_good.wgsr",
                self.discriminator.params.state(),
                self._meta("discriminator", step),
            )

    def _batches(self, dataset: SRDataset) -> BatchPrefetcher:
        if len(dataset) == 0:
            raise EmptyDatasetError("Training needs at least one image")
        return BatchPrefetcher(
            dataset,
            self.cfg.batch_size,
            self.cfg.patch_size,
            seed=self.cfg.seed,
            workers=self.cfg.prefetch_workers,
            depth=self.cfg.prefetch_depth,
        )

    def _step_optimizer(self, params: ParameterSet, state: AdamState, step: int) -> None:
        adam_step(params, None, state, lr_at(step, self.cfg), self.cfg.beta1, self.cfg.beta2, self.cfg.eps)

    def _write_log(self, path: Path, columns: List[str], rows: List[Dict[str, float]]) -> Path:
        """Loss rows plus the seed and config hash of the run on every line."""
        os.makedirs(path.parent, exist_ok=True)
        run = {"seed": self.cfg.seed, "config_hash": self.cfg.config_hash()}
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns + RUN_COLUMNS)
            writer.writeheader()
            for row in rows:
                values = {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
                writer.writerow({**values, **run})
        return path

    def pretrain_pixel(self, dataset: SRDataset) -> Path:
        """Minimise the RGB l1 between G(x) and y; stands in for loading pretrained RRDB weights."""
        rows: List[Dict[str, float]] = []
        params = self.generator.params
        with self._batches(dataset) as batches:
            for it in range(self.cfg.pretrain_iters):
                lr_batch, hr_batch = next(batches)
                params.zero_grad()
                with Tape() as tape:
                    loss = l1(self.generator(lr_batch), hr_batch)
                value = loss.item()
                if not math.isfinite(value):
                    self._save_last_good(it)
                    raise NonFiniteLossError("L_pix", value, it)
                backward(tape, loss)
                self._step_optimizer(params, self.g_state, it)
                rows.append({"iter": it + 1, "L_pix": value, "lr": lr_at(it, self.cfg)})
                if (it + 1) % self.cfg.log_every == 0:
                    logger.info("pretrain %d/%d L_pix=%.5f", it + 1, self.cfg.pretrain_iters, value)

        self.history = rows
        self._write_log(self.out_dir / "pretrain_log.csv", ["iter", "L_pix", "lr"], rows)
        return self.save_generator(self.out_dir / "pretrain.wgsr", self.cfg.pretrain_iters, "generator-pretrain")

    def _luma_batch(self, rgb: np.ndarray) -> np.ndarray:
        w = self._luma_weights.reshape(1, 3, 1, 1)
        return ((rgb.astype(np.float64) * w).sum(axis=1, keepdims=True) + self._luma_offset).astype(rgb.dtype)

    def _d_input(self, rgb: DiffTensor) -> DiffTensor:
        """What the discriminator sees: [LH, HL, HH] of the Y plane, or the RGB image itself."""
        if self.cfg.adv_domain == Domain.RGB:
            return rgb
        y = channel_combine(rgb, self._luma_weights, self._luma_offset)
        return detail_concat(swt_forward_diff(y, self.filter, 1))

    def _fidelity(self, sr: DiffTensor, hr_batch: np.ndarray) -> DiffTensor:
        if self.cfg.fidelity_domain == Domain.RGB:
            return l1(sr, hr_batch)
        sr_y = channel_combine(sr, self._luma_weights, self._luma_offset)
        return swt_fidelity_loss(
            sr_y, self._luma_batch(hr_batch), self.filter, self.cfg.swt_levels, self.cfg.weights,
            raw_sum=self.cfg.l1_raw_sum,
        )

    def _discriminator_step(self, sr_values: np.ndarray, hr_batch: np.ndarray, step: int) -> float:
        d = self.discriminator
        d.params.zero_grad()
        with Tape() as tape:
            real = d(self._d_input(DiffTensor(hr_batch)))
            fake = d(self._d_input(DiffTensor(sr_values)))
            loss = discriminator_loss(real, fake, relativistic=self.cfg.relativistic)
        value = loss.item()
        if not math.isfinite(value):
            self._save_last_good(step)
            raise NonFiniteLossError(self.columns[3], value, step)
        backward(tape, loss)
        self._step_optimizer(d.params, self.d_state, step)
        return value

    def train_gan(self, dataset: SRDataset) -> Path:
        """
        Alternate discriminator (L_D) and generator (L_G) updates.

        Each iteration draws one batch, runs G once, performs
        ``d_steps_per_g`` discriminator updates on the detached SR output and
        then one generator update against the freshly updated discriminator.
        """
        cfg = self.cfg
        columns = self.columns
        rows: List[Dict[str, float]] = []
        g_params = self.generator.params
        with self._batches(dataset) as batches:
            for it in range(cfg.iterations):
                lr_batch, hr_batch = next(batches)
                g_params.zero_grad()
                tape = Tape()
                with tape:
                    sr = self.generator(lr_batch)

                l_d = 0.0
                if self.discriminator is not None:
                    for _ in range(cfg.d_steps_per_g):
                        l_d = self._discriminator_step(sr.values.copy(), hr_batch, it)

                try:
                    with tape:
                        l_fid = self._fidelity(sr, hr_batch)
                        l_adv: Union[DiffTensor, float] = 0.0
                        if self.discriminator is not None and cfg.weights.adv > 0:
                            real = self.discriminator(self._d_input(DiffTensor(hr_batch)))
                            fake = self.discriminator(self._d_input(sr))
                            l_adv = adversarial_generator_loss(real, fake, relativistic=cfg.relativistic)
                        l_perc: Union[DiffTensor, float] = 0.0
                        if self.extractor is not None and cfg.weights.perc > 0:
                            l_perc = perceptual_loss(sr, hr_batch, self.extractor)
                        l_g = total_generator_loss(l_fid, l_adv, l_perc, cfg.weights)
                except NonFiniteLossError as e:
                    self._save_last_good(it)
                    raise NonFiniteLossError(e.channel, e.value, it) from e
                if not math.isfinite(l_g.item()):
                    self._save_last_good(it)
                    raise NonFiniteLossError("L_G", l_g.item(), it)

                backward(tape, l_g)
                self._step_optimizer(g_params, self.g_state, it)

                row = dict(zip(columns, [
                    it + 1,
                    l_fid.item(),
                    l_adv.item() if isinstance(l_adv, DiffTensor) else float(l_adv),
                    float(l_d),
                    l_perc.item() if isinstance(l_perc, DiffTensor) else float(l_perc),
                    l_g.item(),
                    lr_at(it, cfg),
                ]))
                rows.append(row)
                if (it + 1) % cfg.log_every == 0:
                    logger.info(
                        "train %d/%d %s", it + 1, cfg.iterations,
                        " ".join(f"{k}={row[k]:.5g}" for k in columns[1:]),
                    )

        self.history = rows
        self._write_log(self.out_dir / "train_log.csv", columns, rows)
        if self.discriminator is not None:
            save_checkpoint(
                self.out_dir / "discriminator.wgsr",
                self.discriminator.params.state(),
                self._meta("discriminator", cfg.iterations),
            )
        return self.save_generator(self.out_dir / "generator.wgsr", cfg.iterations)

    def run_pretrain(self, dataset: SRDataset) -> RunResult:
        try:
            path = self.pretrain_pixel(dataset)
        except WgsrError as e:
            return RunResult(success=False, message=f"Pretraining failed: {e}", errors=[str(e)])
        metrics = {"L_pix": self.history[-1]["L_pix"]} if self.history else None
        return RunResult(success=True, message="Pretraining finished", output_path=str(path), metrics=metrics)

    def run_train(self, dataset: SRDataset, init_checkpoint: Optional[PathLike] = None) -> RunResult:
        try:
            if init_checkpoint is not None:
                self.load_generator(init_checkpoint)
            path = self.train_gan(dataset)
        except WgsrError as e:
            return RunResult(success=False, message=f"Training failed: {e}", errors=[str(e)])
        metrics = {k: v for k, v in self.history[-1].items() if k != "iter"} if self.history else None
        return RunResult(success=True, message="Training finished", output_path=str(path), metrics=metrics)


def load_generator_checkpoint(path: PathLike) -> Generator:
    """Rebuild a generator from a checkpoint, using the architecture recorded in its metadata."""
    tensors, meta = load_checkpoint(path)
    if "generator" not in meta:
        raise CheckpointFormatError(f"{path}: no generator architecture in checkpoint metadata")
    generator = build_generator(GeneratorConfig(**meta["generator"]), meta.get("seed", 0))
    generator.params.load_state(tensors)
    return generator


def super_resolve(generator: Generator, lr: ImageTensor) -> ImageTensor:
    """Run the generator on one RGB image; no clamping."""
    sr = generator(to_batch([lr]))
    return from_batch(sr.values)[0]


def upscale(generator: Generator, input_dir: PathLike, output_dir: PathLike) -> List[Path]:
    """Super-resolve every PNG in ``input_dir`` into ``output_dir`` (clamped 8-bit)."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    paths = sorted(input_dir.glob("*.png"))
    if not paths:
        raise EmptyDatasetError(f"No PNG images found in {input_dir}")
    written = []
    for path in paths:
        lr = load_png(path)
        if lr.channels != 3:
            lr = ImageTensor(np.repeat(lr.data, 3, axis=2))
        out = output_dir / path.name
        save_png(super_resolve(generator, lr), out)
        written.append(out)
    logger.info("Upscaled %d images into %s", len(written), output_dir)
    return written
