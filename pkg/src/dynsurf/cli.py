"""Command line entry points.

BLAS thread caps are pinned before numpy loads so a default run is
single-threaded and reproducible; --threads only raises the numba thread
count, since BLAS pools cannot be resized after library load.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import sys
from pathlib import Path

import click

from .checkpoint import CheckpointError
from .geometry.mesh import MeshError
from .tensor import NumericError, ShapeError

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

_VALIDATION_ERRORS = (CheckpointError, MeshError, ShapeError, ValueError,
                      FileNotFoundError, OSError)


def _apply_threads(threads):
    if threads is None or threads <= 1:
        return
    try:
        import numba
        numba.set_num_threads(threads)
    except ImportError:
        pass


def _load(config, seed, out, threads):
    from .pipeline.config import load_config, validate_config
    cfg = load_config(config)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    if threads is not None:
        cfg.threads = threads
    validate_config(cfg)
    _apply_threads(cfg.threads)
    return cfg


def _run(fn):
    """Map error families onto the documented exit codes."""
    try:
        fn()
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except NumericError as exc:
        click.echo(f"numeric error: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


def _common(fn):
    fn = click.option("--config", type=click.Path(), default=None,
                      help="YAML config; defaults apply when omitted.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override config seed.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Override output directory.")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="numba thread count (BLAS stays single-threaded).")(fn)
    return fn


@click.group()
def main():
    """Deforming-surface reconstruction pipeline."""


@main.command()
@_common
def synth(config, seed, out, threads):
    """Generate the synthetic deforming-sequence dataset."""
    def body():
        from .pipeline.config import load_config, validate_config
        from .pipeline.synth import make_default_specs, synth_dataset
        cfg = load_config(config)
        if seed is not None:
            cfg.seed = seed
        validate_config(cfg)
        _apply_threads(threads if threads is not None else cfg.threads)
        target = out if out is not None else cfg.dataset_dir
        specs = make_default_specs(cfg.seed, cfg.frames, cfg.train_per_family)
        manifest = synth_dataset(specs, target)
        click.echo(f"wrote {len(manifest['sequences'])} sequences to {target}")
    _run(body)


def _train_command(name, fn_name):
    @main.command(name=name, help=f"Run the {name.replace('-', ' ')} training loop.")
    @_common
    @click.option("--resume", is_flag=True, help="Continue from the saved train state.")
    def cmd(config, seed, out, threads, resume):
        def body():
            from .pipeline import training
            cfg = _load(config, seed, out, threads)
            result = getattr(training, fn_name)(cfg, resume=resume)
            click.echo(" ".join(f"{k}={v}" for k, v in result.items()))
        _run(body)
    return cmd


_train_command("train-shape-vae", "train_shape_vae")
_train_command("train-deform-vae", "train_deform_vae")
_train_command("train-shape-diff", "train_shape_diffusion")
_train_command("train-deform-diff", "train_deform_diffusion")


@main.command()
@_common
@click.option("--sequence", required=True, help="Sequence name from the manifest.")
def reconstruct(config, seed, out, threads, sequence):
    """Reconstruct one sequence from its corrupted observations."""
    def body():
        from .pipeline import reconstruct as rec
        from .pipeline.data import build_sequence_bank
        from .pipeline.synth import load_manifest, load_sequence_meshes
        from .pipeline.training import bank_seed
        cfg = _load(config, seed, out, threads)
        manifest = load_manifest(cfg.dataset_dir)
        matches = [r for r in manifest["sequences"] if r["name"] == sequence]
        if not matches:
            raise ValueError(f"sequence {sequence!r} not in manifest")
        record = matches[0]
        meshes = load_sequence_meshes(cfg.dataset_dir, record)
        models = rec.load_models(cfg)
        s0 = bank_seed(cfg, record)
        bank = build_sequence_bank(record, meshes, cfg, s0, with_queries=False)
        try:
            pred = rec.reconstruct_sequence(bank.observations, models, cfg, s0 + 999)
        except rec.ReconstructionError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        paths = rec.save_reconstruction(cfg.out_dir, sequence, pred)
        click.echo(f"wrote {len(paths)} frames under {Path(cfg.out_dir) / 'recon' / sequence}")
    _run(body)


@main.command(name="eval")
@_common
@click.option("--split", default="all",
              type=click.Choice(["train", "unseen-motion", "unseen-identity", "all"]))
def eval_cmd(config, seed, out, threads, split):
    """Evaluate reconstructions against ground truth; writes metric CSVs."""
    def body():
        from .pipeline import reconstruct as rec
        cfg = _load(config, seed, out, threads)
        try:
            summary = rec.evaluate_split(cfg, split)
        except rec.ReconstructionError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        click.echo(f"split={summary['split']} sequences={len(summary['sequences'])} "
                   f"beat_baseline={summary['beat_baseline_fraction']:.2f}")
        click.echo(f"metrics: {summary['csv']}")
    _run(body)


if __name__ == "__main__":
    main()
