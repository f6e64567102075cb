"""CLI for allweather."""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import click

from allweather import __version__
from allweather.config import (
    ABLATIONS,
    Config,
    ConfigError,
    dump_config,
    generate_template,
    load_config,
)
from allweather.errors import AllWeatherError
from allweather.logs import setup_logging

logger = logging.getLogger("allweather.cli")


def _handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Report runtime failures as one line on stderr and exit 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (AllWeatherError, ConfigError, OSError) as e:
            logger.error("%s failed: %s", func.__name__, e, exc_info=True, extra={"file_only": True})
            click.echo(f"Error: {e}", err=True)
            sys.exit(1)

    return wrapper


def _config(ctx: click.Context, *extra: str) -> Config:
    """Load the effective configuration and set up logging from it."""
    opts = ctx.obj
    overrides = list(opts["overrides"])
    if opts["seed"] is not None:
        overrides += [f"training.seed={opts['seed']}", f"data.seed={opts['seed']}"]
    overrides += [item for item in extra if item]
    config = load_config(opts["config"], overrides)
    setup_logging(config.logging, verbose=opts["verbose"])
    return config


def _network(config: Config, checkpoint: Path | None, ablation: str | None):
    from allweather.nn import RestorationNet
    from allweather.training import load_checkpoint

    cfg = config.network.ablation(ablation) if ablation else config.network
    net = RestorationNet(cfg, seed=config.training.seed)
    if checkpoint is not None:
        ckpt = load_checkpoint(checkpoint)
        net.store.load_state(ckpt.params)
        logger.info("Loaded %s (step %d)", checkpoint, ckpt.step)
    return net


ablation_option = click.option(
    "--ablation",
    type=click.Choice(ABLATIONS),
    help="Network preset: base, he (hierarchical encoder), he_intra, full",
)


@click.group()
@click.version_option(version=__version__, prog_name="awr")
@click.option(
    "--config", "-c", "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="YAML config file (default: ./allweather.yaml if present)",
)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Seed for data generation and training")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging on stderr")
@click.option(
    "--set", "overrides",
    multiple=True,
    metavar="SECTION.KEY=VALUE",
    help="Override one config key (repeatable), e.g. --set network.intra_pt=off",
)
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    verbose: bool,
    overrides: tuple[str, ...],
) -> None:
    """All-weather image restoration.

    Generates synthetic rain, raindrop and snow pairs, trains a single
    transformer that removes all of them, and inspects what it learned.
    """
    ctx.obj = {"config": config_path, "seed": seed, "verbose": verbose, "overrides": overrides}


@main.command()
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--count", "-n", type=click.IntRange(min=1), help="Number of pairs (data.count)")
@click.option("--mix", type=str, help="uniform | paper | snow=W,raindrop=W,rain_fog=W (data.mix)")
@click.option("--size", type=click.IntRange(min=1), help="Square image size (data.size)")
@click.option("--workers", type=click.IntRange(min=1), help="Generation threads (data.workers)")
@click.pass_context
@_handle_errors
def gen(ctx: click.Context, out_dir: Path, count: int | None, mix: str | None, size: int | None,
        workers: int | None) -> None:
    """Generate a synthetic paired dataset.

    \b
    Examples:
      awr --seed 7 gen --count 6 --mix uniform --out data/
      awr gen --count 300 --mix paper --out data/
    """
    from allweather.weather import gen_dataset

    config = _config(ctx)
    data = config.data
    manifest = gen_dataset(
        count=count or data.count,
        mix=mix if mix is not None else data.mix,
        seed=data.seed,
        out_dir=out_dir,
        size=size or data.size,
        intensity=tuple(data.intensity),
        workers=workers or data.workers,
    )
    counts = {kind: len(manifest.get(kind)) for kind in manifest.kinds()}
    click.echo(f"Wrote {len(manifest)} pairs to {out_dir}")
    for kind, n in counts.items():
        click.echo(f"{kind}\t{n}")


@main.command()
@click.option("--data", "-d", "data_dir", required=True, type=click.Path(path_type=Path),
              help="Dataset directory or manifest.tsv")
@click.option("--out", "-o", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Checkpoint to write")
@click.option("--log", "log_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Training log (default: <out>.log.tsv)")
@click.option("--resume", type=click.Path(dir_okay=False, path_type=Path),
              help="Checkpoint to resume from")
@click.option("--max-steps", type=click.IntRange(min=1),
              help="Stop after this many steps (training.max_steps)")
@ablation_option
@click.pass_context
@_handle_errors
def train(ctx: click.Context, data_dir: Path, out_path: Path, log_path: Path | None, resume: Path | None,
          max_steps: int | None, ablation: str | None) -> None:
    """Train the restoration network on a generated dataset."""
    import dataclasses

    from allweather.training import Trainer
    from allweather.weather import Manifest

    config = _config(ctx, f"training.max_steps={max_steps}" if max_steps is not None else "")
    if ablation:
        config = dataclasses.replace(config, network=config.network.ablation(ablation))
    trainer = Trainer(config, Manifest.load(data_dir))
    if resume is not None:
        trainer.resume(resume)
    log_path = log_path or out_path.with_name(out_path.name + ".log.tsv")
    records = trainer.fit(out_checkpoint=out_path, log_path=log_path)

    click.echo(f"Checkpoint: {out_path} (step {trainer.step})")
    click.echo(f"Log: {log_path}")
    if records:
        click.echo(records[-1].to_line())


@main.command()
@click.argument("input_path", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("output_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--checkpoint", "-k", required=True, type=click.Path(dir_okay=False, path_type=Path))
@ablation_option
@click.pass_context
@_handle_errors
def restore(ctx: click.Context, input_path: Path, output_path: Path, checkpoint: Path,
            ablation: str | None) -> None:
    """Restore one degraded image (.twimg or .png) into OUTPUT_PATH."""
    from allweather.nn import restore_image
    from allweather.weather import read_image, write_image

    config = _config(ctx)
    net = _network(config, checkpoint, ablation)
    image = read_image(input_path)
    net.validate(image.shape[1], image.shape[2])
    write_image(output_path, restore_image(net, image))
    click.echo(f"Restored {input_path} -> {output_path}")


@main.command("eval")
@click.option("--data", "-d", "data_dir", required=True, type=click.Path(path_type=Path),
              help="Dataset directory or manifest.tsv")
@click.option("--checkpoint", "-k", type=click.Path(dir_okay=False, path_type=Path),
              help="Also score restored images from this checkpoint")
@ablation_option
@click.pass_context
@_handle_errors
def eval_cmd(ctx: click.Context, data_dir: Path, checkpoint: Path | None, ablation: str | None) -> None:
    """Print PSNR/SSIM per degradation kind and overall as name<TAB>value lines."""
    from allweather.metrics import format_metrics
    from allweather.tracing import Tracer
    from allweather.training import evaluate
    from allweather.weather import Manifest

    config = _config(ctx)
    manifest = Manifest.load(data_dir)
    net = _network(config, checkpoint, ablation) if checkpoint is not None else None
    tracer = Tracer(config.tracing)
    with tracer.trace("eval", metadata={"pairs": len(manifest), "checkpoint": str(checkpoint)}):
        results = evaluate(manifest, net)
        overall = results.get("overall", {})
        tracer.record_metrics(
            {key: overall[key] for key in ("psnr_restored", "ssim_restored") if key in overall}
        )
    click.echo(format_metrics(
        (f"{group}/{metric}", value)
        for group, metrics in results.items()
        for metric, value in metrics.items()
    ))


@main.command()
@click.option("--probe", "-p", "probes", multiple=True, help="Run only these probes (repeatable)")
@click.option("--list", "list_only", is_flag=True, help="List registered probes and exit")
@click.pass_context
@_handle_errors
def gradcheck(ctx: click.Context, probes: tuple[str, ...], list_only: bool) -> None:
    """Compare every backward rule against central finite differences.

    Prints ``name, max relative error, tolerance, coordinates, status`` per
    probe; exits 1 if any probe exceeds its tolerance.
    """
    from allweather.gradcheck import PROBES, run_probes

    config = _config(ctx)
    if list_only:
        for name, cls in PROBES.items():
            click.echo(f"{name}\t{cls.tolerance:g}")
        return
    results = run_probes(probes or None, seed=config.training.seed)
    click.echo("probe\tmax_rel_error\ttolerance\tcoords\tstatus")
    for result in results:
        click.echo(result.to_line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"{len(failed)} probe(s) failed: {', '.join(failed)}", err=True)
        sys.exit(1)
    click.echo(f"all {len(results)} probes passed")


@main.command("attn-dump")
@click.argument("image_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--checkpoint", "-k", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out", "-o", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--query", "-q", "queries", multiple=True, type=click.IntRange(min=0),
              help="Query index to dump (repeatable; default all)")
@ablation_option
@click.pass_context
@_handle_errors
def attn_dump(ctx: click.Context, image_path: Path, checkpoint: Path, out_dir: Path,
              queries: tuple[int, ...], ablation: str | None) -> None:
    """Write per-query decoder attention maps for IMAGE_PATH as grayscale PNGs."""
    from allweather.attnmap import dump_attention
    from allweather.weather import read_image

    config = _config(ctx)
    net = _network(config, checkpoint, ablation)
    written = dump_attention(net, read_image(image_path), out_dir, list(queries) or None)
    for path in written:
        click.echo(str(path))


@main.group()
def config() -> None:
    """Configuration management commands."""
    pass


@config.command("show")
@click.pass_context
@_handle_errors
def config_show(ctx: click.Context) -> None:
    """Show the effective configuration (file + --set overrides) as YAML."""
    click.echo(dump_config(_config(ctx)), nl=False)


@config.command("template")
def config_template() -> None:
    """Print configuration template to stdout."""
    click.echo(generate_template())


if __name__ == "__main__":
    main()
