import logging
import math
import sys
from pathlib import Path

import click

from .config import load_config
from .dataset import load_dataset
from .errors import ConfigError, WgsrError
from .imaging import extract_y, load_png
from .metrics import evaluate_pairs, psnr, shave, ssim, write_eval_csv
from .models import RunResult
from .trainer import Trainer, load_generator_checkpoint, upscale
from .wavelets import dump_subbands, make_filter, supported_families, swt2_forward


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _report(result: RunResult) -> None:
    if result.success:
        click.echo(click.style(result.message, fg='green'))
        if result.output_path:
            click.echo(f"Output written to: {result.output_path}")
        for key, value in (result.metrics or {}).items():
            click.echo(f"  {key}: {value:.6g}")
    else:
        click.echo(click.style(result.message, fg='red'))
        if result.errors:
            for error in result.errors:
                click.echo(f"- {error}")
        sys.exit(1)


def _fail(error: WgsrError) -> None:
    click.echo(click.style(f"Error: {error}", fg='red'))
    if isinstance(error, ConfigError):
        for message in error.errors:
            click.echo(f"- {message}")
    sys.exit(1)


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Log at DEBUG level')
def cli(verbose):
    """Wavelet-guided GAN super-resolution toolkit."""
    _setup_logging(verbose)


def _train_options(fn):
    fn = click.option('--set', 'overrides', multiple=True, help='Override a config value (key=value)')(fn)
    fn = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                      help='Flat key=value config file')(fn)
    fn = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='runs',
                      help='Directory for checkpoints and logs')(fn)
    fn = click.option('--data', 'data_dir', type=click.Path(exists=True, file_okay=False), required=True,
                      help='Dataset root holding HR/ and optionally LR/')(fn)
    fn = click.option('--seed', type=int, required=True, help='Seed for initialization and batch sampling')(fn)
    return fn


def _prepare(config_path, overrides, seed, data_dir, out_dir):
    try:
        cfg = load_config(config_path, overrides, seed=seed)
        dataset = load_dataset(data_dir, workers=max(1, cfg.prefetch_workers))
    except WgsrError as e:
        _fail(e)
    click.echo(f"Config hash: {cfg.config_hash()[:12]}")
    return Trainer(cfg, out_dir), dataset


@cli.command()
@_train_options
def pretrain(seed, data_dir, out_dir, config_path, overrides):
    """Pixel-wise l1 pretraining of the generator."""
    trainer, dataset = _prepare(config_path, overrides, seed, data_dir, out_dir)
    _report(trainer.run_pretrain(dataset))


@cli.command()
@_train_options
@click.option('--init', 'init_checkpoint', type=click.Path(exists=True, dir_okay=False),
              help='Generator checkpoint to start from (e.g. the output of pretrain)')
def train(seed, data_dir, out_dir, config_path, overrides, init_checkpoint):
    """Adversarial training with the SWT fidelity loss and SWT-domain discriminator."""
    trainer, dataset = _prepare(config_path, overrides, seed, data_dir, out_dir)
    if init_checkpoint is None:
        click.echo(click.style("No --init checkpoint given; training from random initialization", fg='yellow'))
    _report(trainer.run_train(dataset, init_checkpoint))


@cli.command()
@click.option('--sr', 'sr_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--hr', 'hr_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--lr', 'lr_dir', type=click.Path(exists=True, file_okay=False),
              help='LR inputs; enables the LR-PSNR consistency check')
@click.option('--shave', 'shave_border', type=int, default=0, show_default=True, help='Border pixels to ignore')
@click.option('--workers', type=int, default=1, show_default=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), default='eval.csv', show_default=True)
def evaluate(sr_dir, hr_dir, lr_dir, shave_border, workers, out_path):
    """Score SR images against HR references and write a CSV."""
    try:
        records = evaluate_pairs(sr_dir, hr_dir, lr_dir, shave_border, workers)
        path, summary = write_eval_csv(records, out_path)
    except WgsrError as e:
        _fail(e)
    _report(RunResult(
        success=True,
        message=f"Evaluated {len(records)} images",
        output_path=str(path),
        metrics=summary,
    ))


@cli.command()
@click.argument('image', type=click.Path(exists=True, dir_okay=False))
@click.option('--wavelet', default='sym7', show_default=True, type=click.Choice(supported_families()))
@click.option('--levels', default=1, show_default=True, type=click.IntRange(1, 2))
@click.option('--dump-subbands', 'dump_dir', type=click.Path(file_okay=False),
              help='Write each subband as a 16-bit PNG into this directory')
def decompose(image, wavelet, levels, dump_dir):
    """SWT-decompose the Y channel of an image and print subband statistics."""
    try:
        plane = extract_y(load_png(image)).plane()
        subbands = swt2_forward(plane, make_filter(wavelet), levels)
        if dump_dir:
            dump_subbands(subbands, dump_dir)
    except WgsrError as e:
        _fail(e)
    for label in subbands.labels:
        band = subbands[label]
        click.echo(f"{label:5s} min={band.min():+.5f} max={band.max():+.5f} mean|x|={abs(band).mean():.5f}")
    if dump_dir:
        click.echo(click.style(f"Subbands written to {dump_dir}", fg='green'))


@cli.command(name='psnr')
@click.argument('a', type=click.Path(exists=True, dir_okay=False))
@click.argument('b', type=click.Path(exists=True, dir_okay=False))
@click.option('--shave', 'shave_border', type=int, default=0, show_default=True)
def psnr_command(a, b, shave_border):
    """PSNR and SSIM on the Y channel of two images."""
    try:
        ya = shave(extract_y(load_png(a)).plane(), shave_border)
        yb = shave(extract_y(load_png(b)).plane(), shave_border)
        value = psnr(ya, yb)
        similarity = ssim(ya, yb)
    except WgsrError as e:
        _fail(e)
    click.echo(f"PSNR-Y: {'inf' if math.isinf(value) else f'{value:.4f}'} dB")
    click.echo(f"SSIM-Y: {similarity:.6f}")


@cli.command(name='upscale')
@click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--input', 'input_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
def upscale_command(checkpoint, input_dir, out_dir):
    """Super-resolve every PNG in a directory with a trained generator."""
    try:
        written = upscale(load_generator_checkpoint(checkpoint), input_dir, out_dir)
    except WgsrError as e:
        _fail(e)
    _report(RunResult(success=True, message=f"Upscaled {len(written)} images", output_path=str(Path(out_dir))))


@cli.command()
def families():
    """List the supported wavelet families."""
    for name in supported_families():
        click.echo(name)


def main():
    """Entry point for the CLI."""
    cli()
