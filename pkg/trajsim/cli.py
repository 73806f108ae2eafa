"""Trajsim CLI - learned trajectory similarity search."""

import logging
import sys
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
from rich.table import Table

from trajsim import __version__
from trajsim.core.matrix import DistanceMatrix, build_matrix, check_ids, load_matrix, save_matrix
from trajsim.core.synthetic import random_walk_clusters
from trajsim.core.trajectory import (
    SPLIT_NAMES,
    DatasetSplit,
    Trajectory,
    load_trajectories,
    preprocess as preprocess_trajectories,
    split_dataset,
    write_trajectories,
)
from trajsim.errors import ConfigError, DataError
from trajsim.eval.retrieval import evaluate_suite, rank_candidates, split_metric_name, write_report
from trajsim.model.checkpoint import load_model, read_checkpoint, save_model
from trajsim.model.features import featurize
from trajsim.model.losses import mean_off_diagonal
from trajsim.model.sam import SamModel
from trajsim.model.training import (
    EpochRecord,
    TrainResult,
    finetune_data,
    finetune as run_finetune,
    pretrain as run_pretrain,
)
from trajsim.utils import config as config_module
from trajsim.utils.config import RunConfig
from trajsim.utils.console import console, setup_logging
from trajsim.utils.output import (
    atomic_write,
    create_progress_bar,
    display_metrics,
    display_summary,
    sibling,
    write_csv,
    write_json,
)

logger = logging.getLogger("trajsim.cli")

HISTORY_METRICS = ("HR@1", "HR@5", "HR@20", "R5@20")


class Settings:
    """Global options collected by the root group; the run config is built on first use."""

    def __init__(self, config_path, seed, threads, planar, overrides):
        self.config_path = config_path
        self.seed = seed
        self.threads = threads
        self.planar = planar
        self.overrides = overrides
        self._run: Optional[RunConfig] = None

    @property
    def run(self) -> RunConfig:
        if self._run is None:
            self._run = self.build()
        return self._run

    def build(self, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
        """Run config from the global options, with ``extra`` keys layered on top."""
        values: Dict[str, Any] = {}
        if self.seed is not None:
            values["seed"] = self.seed
        if self.threads is not None:
            values["threads"] = self.threads
        if self.planar:
            values["distance.planar"] = True
        values.update(config_module.parse_overrides(self.overrides))
        values.update(extra or {})
        return RunConfig.build(config_module.get_config_path(self.config_path), values)


pass_settings = click.make_pass_decorator(Settings)


def _load_split(run: RunConfig, csv_path: str) -> Tuple[List[Trajectory], DatasetSplit]:
    trajs = load_trajectories(csv_path)
    if not trajs:
        raise DataError(f"{csv_path}: no trajectories")
    return trajs, split_dataset([t.id for t in trajs], seed=run["split.seed"])


def _select(trajs: Sequence[Trajectory], ids: Sequence[str]) -> List[Trajectory]:
    by_id = {t.id: t for t in trajs}
    return [by_id[i] for i in ids]


def _cell(value) -> str:
    if value is None:
        return ""
    return str(value) if isinstance(value, int) else repr(float(value))


def _start_model(run: RunConfig, init_ckpt: Optional[str], strict: bool = True) -> SamModel:
    """Fresh encoder, or one warm-started from ``init_ckpt``.

    With ``strict`` off only the parameter shapes must agree, so keys such as
    ``model.epsilon`` can differ from the checkpoint's config.
    """
    if not init_ckpt:
        return SamModel(run.sam_config(), seed=run.seed)
    if strict:
        model, _ = load_model(init_ckpt, expected=run.sam_config())
        return model
    model = SamModel(run.sam_config(), seed=run.seed)
    model.params.load_state(read_checkpoint(init_ckpt))
    return model


def _finetune_model(run: RunConfig, trajs: Sequence[Trajectory], split: DatasetSplit, matrix: DistanceMatrix,
                    model: SamModel, warm: bool, on_epoch=None) -> Tuple[TrainResult, float]:
    grid = run.grid()
    train = finetune_data(_select(trajs, split.train), grid, matrix)
    eval_data = finetune_data(_select(trajs, split.eval), grid, matrix) if split.eval else None
    if run["loss.tau_mode"] == "mean_distance":
        tau = mean_off_diagonal(train.matrix.values)
    else:
        tau = run["loss.tau_value"]
    logger.info("Fine-tuning on %d trajectories (tau=%.6g, %s start)", len(train.ids), tau,
                "warm" if warm else "cold")
    return run_finetune(model, train, eval_data, tau, run.finetune_settings(), on_epoch=on_epoch), tau


def _score_split(run: RunConfig, model: SamModel, trajs: Sequence[Trajectory], split: DatasetSplit,
                 matrix: DistanceMatrix, split_name: str) -> Tuple[Dict[str, float], int, float]:
    """Retrieval metrics for one split plus encoding throughput in trajectories per second."""
    ids = split.subset(split_name)
    if len(ids) < 2:
        raise DataError(f"The {split_name} split has {len(ids)} trajectories; need at least 2")
    grid = run.grid()
    features = [featurize(t, grid) for t in _select(trajs, ids)]
    started = time.perf_counter()
    embs = model.embed(features)
    elapsed = max(time.perf_counter() - started, 1e-9)
    rate = len(ids) / elapsed
    logger.info("Encoded %d trajectories in %.3fs (%.1f trajectories/s)", len(ids), elapsed, rate)
    return evaluate_suite(embs, ids, matrix.submatrix(ids)), len(ids), rate


def _epoch_progress(description: str, total: int):
    progress = create_progress_bar()
    task = progress.add_task(description, total=total)

    def advance(record: EpochRecord) -> None:
        progress.update(task, advance=1, description=f"{description} (eval loss {record.eval_loss:.4f})")

    return progress, advance


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Config file (key = value lines or YAML)")
@click.option("--seed", type=click.IntRange(min=0), help="Training seed (overrides 'seed')")
@click.option("--threads", type=click.IntRange(min=0), help="Worker threads, 0 = all cores")
@click.option("--planar", is_flag=True, help="Measure distances on raw coordinates instead of meters")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key (repeatable)")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.version_option(version=__version__, prog_name="trajsim")
@click.pass_context
def cli(ctx, config_path, seed, threads, planar, overrides, verbose):
    """Trajsim - learned trajectory similarity.

    \b
    Typical workflow:
      trajsim generate corpus.csv
      trajsim preprocess corpus.csv clean.csv
      trajsim distmatrix clean.csv sspd.tsdm --metric sspd
      trajsim pretrain clean.csv bridge.tsps
      trajsim finetune clean.csv sspd.tsdm model.tsps --init bridge.tsps
      trajsim evaluate clean.csv sspd.tsdm model.tsps --out report
      trajsim query model.tsps clean.csv c00-00003 -k 10
    """
    config_module.load_env()
    setup_logging(verbose)
    ctx.obj = Settings(config_path, seed, threads, planar, overrides)


@cli.group()
def config():
    """Inspect the effective configuration."""


@config.command()
@pass_settings
def show(settings: Settings):
    """Show the effective configuration."""
    run = settings.run
    console.print(f"Configuration file path: [bold]{run.path or '(defaults)'}[/bold]\n")
    table = Table(title="Current Configuration")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    for key, value in run.items():
        marker = "" if value == config_module.DEFAULTS.get(key) else " *"
        table.add_row(key, f"{value}{marker}")
    console.print(table)


@config.command()
@pass_settings
def path(settings: Settings):
    """Print the resolved configuration file path."""
    resolved = config_module.get_config_path(settings.config_path)
    console.print(f"Configuration file path: [bold]{resolved or '(none, using defaults)'}[/bold]")


@cli.command()
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--count", default=300, show_default=True, type=click.IntRange(min=1))
@click.option("--clusters", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--min-len", default=20, show_default=True, type=click.IntRange(min=2))
@click.option("--max-len", default=80, show_default=True, type=click.IntRange(min=2))
@click.option("--step", default=60.0, show_default=True, help="Base walk step in meters")
@click.option("--jitter", default=15.0, show_default=True, help="Per-point noise in meters")
@pass_settings
def generate(settings: Settings, out_csv, count, clusters, min_len, max_len, step, jitter):
    """Write a synthetic corpus of clustered random walks inside the configured bbox."""
    run = settings.run
    trajs = random_walk_clusters(run.bbox(), count=count, clusters=clusters, min_len=min_len,
                                 max_len=max_len, step=step, jitter=jitter, seed=run.seed)
    with atomic_write(out_csv) as f:
        rows = write_trajectories(trajs, f)
    display_summary("Generated Corpus", {"Trajectories": len(trajs), "Points": rows, "Output": out_csv})


@cli.command()
@click.argument("in_csv", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
@pass_settings
def preprocess(settings: Settings, in_csv, out_csv):
    """Filter trajectories by bbox and length, then write the split manifest."""
    run = settings.run
    trajs = load_trajectories(in_csv)
    kept = preprocess_trajectories(trajs, run.bbox(), run["filter.min_len"], run["filter.max_len"])
    if not kept:
        raise DataError(f"{in_csv}: no trajectories survive preprocessing")
    split = split_dataset([t.id for t in kept], seed=run["split.seed"])
    with atomic_write(out_csv) as f:
        write_trajectories(kept, f)
    write_json(sibling(out_csv, ".split.json"), {"seed": run["split.seed"], **split.to_dict()})
    train, eval_count, test = split.sizes()
    display_summary("Preprocessing Summary", {
        "Input": len(trajs), "Kept": len(kept), "Removed": len(trajs) - len(kept),
        "Train": train, "Eval": eval_count, "Test": test,
    })


@cli.command()
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--metric", type=click.Choice(["sspd", "hausdorff", "frechet"]), required=True)
@pass_settings
def distmatrix(settings: Settings, csv_path, out, metric):
    """Compute the all-pairs ground-truth distance matrix."""
    run = settings.run
    trajs = load_trajectories(csv_path)
    projection = None if run.planar else run.grid().projection
    n = len(trajs)
    with create_progress_bar() as progress:
        task = progress.add_task(f"{metric} matrix", total=max(n * (n - 1) // 2, 1))
        matrix = build_matrix(trajs, metric, projection=projection, threads=run.threads,
                              progress=lambda done: progress.update(task, advance=done))
    save_matrix(matrix, out)
    off = matrix.values[~np.eye(n, dtype=bool)]
    display_summary("Distance Matrix", {
        "Metric": metric, "Trajectories": n, "Mean distance": float(off.mean()),
        "Max distance": float(off.max()), "Output": out,
    })


@cli.command()
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_ckpt", type=click.Path(dir_okay=False))
@pass_settings
def pretrain(settings: Settings, csv_path, out_ckpt):
    """Pretrain the encoder on diffusion bridges between training trajectories."""
    run = settings.run
    trajs, split = _load_split(run, csv_path)
    model = SamModel(run.sam_config(), seed=run.seed)
    pre = run.pretrain_settings()
    progress, advance = _epoch_progress("Pretraining", pre.epochs)
    with progress:
        result = run_pretrain(model, _select(trajs, split.train), _select(trajs, split.eval),
                              run.grid(), run.schedule(), pre, on_epoch=advance)
    save_model(model, out_ckpt, stage="pretrain", best_epoch=result.best_epoch,
               best_eval_loss=float(result.best_eval_loss), seed=run.seed)
    write_csv(sibling(out_ckpt, ".loss.csv"), ("epoch", "train_loss", "eval_loss"),
              [(r.epoch, repr(r.train_loss), repr(r.eval_loss)) for r in result.history])
    display_summary("Pretraining", {
        "Epochs run": len(result.history), "Best epoch": result.best_epoch,
        "Best eval loss": float(result.best_eval_loss), "Checkpoint": out_ckpt,
    })


@cli.command()
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("matrix_path", metavar="MATRIX", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_ckpt", type=click.Path(dir_okay=False))
@click.option("--init", "init_ckpt", type=click.Path(exists=True, dir_okay=False),
              help="Start from a checkpoint (omit for a cold start)")
@pass_settings
def finetune(settings: Settings, csv_path, matrix_path, out_ckpt, init_ckpt):
    """Fine-tune the encoder with the MSE and list-wise ranking losses."""
    run = settings.run
    trajs, split = _load_split(run, csv_path)
    matrix = load_matrix(matrix_path)
    check_ids(matrix, [t.id for t in trajs], source=csv_path)
    model = _start_model(run, init_ckpt)

    fine = run.finetune_settings()
    progress, advance = _epoch_progress("Fine-tuning", fine.epochs)
    with progress:
        result, tau = _finetune_model(run, trajs, split, matrix, model, bool(init_ckpt), on_epoch=advance)
    save_model(model, out_ckpt, stage="finetune", best_epoch=result.best_epoch,
               best_eval_loss=float(result.best_eval_loss), seed=run.seed, tau=float(tau),
               metric=matrix.metric_tag, init=str(init_ckpt) if init_ckpt else None)

    header = ("epoch", "train_loss", "eval_loss", "mse", "listnet", "rd_listnet") + HISTORY_METRICS
    rows = [tuple(_cell(record.row().get(col)) for col in header) for record in result.history]
    write_csv(sibling(out_ckpt, ".history.csv"), header, rows)
    display_summary("Fine-tuning", {
        "Epochs run": len(result.history), "Best epoch": result.best_epoch,
        "Best eval loss": float(result.best_eval_loss), "tau": float(tau), "Checkpoint": out_ckpt,
    })


@cli.command()
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("matrix_path", metavar="MATRIX", type=click.Path(exists=True, dir_okay=False))
@click.argument("ckpt", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "report", type=click.Path(dir_okay=False), help="Write REPORT.csv and REPORT.json")
@click.option("--split", "split_name", type=click.Choice(list(SPLIT_NAMES) + ["all"]), default="test", show_default=True)
@pass_settings
def evaluate(settings: Settings, csv_path, matrix_path, ckpt, report, split_name):
    """Score top-k retrieval of a checkpoint against the ground-truth matrix."""
    run = settings.run
    trajs, split = _load_split(run, csv_path)
    matrix = load_matrix(matrix_path)
    check_ids(matrix, [t.id for t in trajs], source=csv_path)
    model, meta = load_model(ckpt, expected=run.sam_config())

    metrics, n_queries, rate = _score_split(run, model, trajs, split, matrix, split_name)
    display_metrics(metrics, title=f"Retrieval Metrics ({split_name}, {matrix.metric_tag}, N={n_queries})")
    console.print(f"Encoding throughput: [bold]{rate:.1f}[/bold] trajectories/s")
    if report:
        csv_out, json_out = write_report(metrics, report, extra={
            "split": split_name, "n_queries": n_queries, "metric": matrix.metric_tag,
            "checkpoint": str(ckpt), "stage": meta.get("stage"), "encode_trajectories_per_sec": rate,
        })
        console.print(f"Report written to [bold]{csv_out}[/bold] and [bold]{json_out}[/bold]")


@cli.command()
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("matrix_path", metavar="MATRIX", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--param", required=True, help="Config key to vary, e.g. loss.gamma1")
@click.option("--values", "raw_values", required=True, help="Comma-separated values, e.g. 0,0.1,1")
@click.option("--init", "init_ckpt", type=click.Path(exists=True, dir_okay=False),
              help="Warm-start every run from this checkpoint (parameter shapes must match)")
@click.option("--split", "split_name", type=click.Choice(list(SPLIT_NAMES) + ["all"]), default="test", show_default=True)
@pass_settings
def sweep(settings: Settings, csv_path, matrix_path, out_csv, param, raw_values, init_ckpt, split_name):
    """Fine-tune and evaluate once per value of one config key; writes param,value,metric,k,score."""
    values = [v.strip() for v in raw_values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    runs = [(raw, settings.build({param: config_module.parse_value(raw)})) for raw in values]
    trajs = load_trajectories(csv_path)
    if not trajs:
        raise DataError(f"{csv_path}: no trajectories")
    matrix = load_matrix(matrix_path)
    check_ids(matrix, [t.id for t in trajs], source=csv_path)

    rows, results = [], {}
    with create_progress_bar() as progress:
        task = progress.add_task(f"Sweeping {param}", total=len(runs))
        for raw, run in runs:
            split = split_dataset([t.id for t in trajs], seed=run["split.seed"])
            model = _start_model(run, init_ckpt, strict=False)
            _finetune_model(run, trajs, split, matrix, model, bool(init_ckpt))
            metrics, _, rate = _score_split(run, model, trajs, split, matrix, split_name)
            results[raw] = metrics
            for name, score in metrics.items():
                kind, k = split_metric_name(name)
                rows.append((param, raw, kind, k, repr(float(score))))
            logger.info("%s=%s: %s (%.1f trajectories/s)", param, raw, metrics, rate)
            progress.update(task, advance=1)
    write_csv(out_csv, ("param", "value", "metric", "k", "score"), rows)

    names = list(next(iter(results.values())))
    table = Table(title=f"Sweep over {param} ({split_name}, {matrix.metric_tag})")
    table.add_column(param, style="cyan")
    for name in names:
        table.add_column(name, style="green", justify="right")
    for raw, metrics in results.items():
        table.add_row(raw, *(f"{metrics.get(name, float('nan')):.4f}" for name in names))
    console.print(table)
    console.print(f"Sweep series written to [bold]{out_csv}[/bold]")


@cli.command()
@click.argument("ckpt", type=click.Path(exists=True, dir_okay=False))
@click.argument("csv_path", metavar="CSV", type=click.Path(exists=True, dir_okay=False))
@click.argument("query_id")
@click.option("-k", "k", default=10, show_default=True, type=click.IntRange(min=1))
@pass_settings
def query(settings: Settings, ckpt, csv_path, query_id, k):
    """List the k trajectories most similar to QUERY_ID."""
    run = settings.run
    trajs = load_trajectories(csv_path)
    ids = [t.id for t in trajs]
    if query_id not in ids:
        raise DataError(f"Unknown trajectory id {query_id!r} in {csv_path}")
    if len(ids) < 2:
        raise DataError(f"{csv_path} holds no candidates besides {query_id!r}")
    if k > len(ids) - 1:
        logger.warning("k=%d exceeds the %d candidates; showing all of them", k, len(ids) - 1)
        k = len(ids) - 1

    model, _ = load_model(ckpt, expected=run.sam_config())
    grid = run.grid()
    embs = model.embed([featurize(t, grid) for t in trajs])
    q = ids.index(query_id)
    ranking = rank_candidates(embs[q], embs, ids, query_id, exclude=q)

    table = Table(title=f"Top {k} for {query_id}")
    table.add_column("Rank", justify="right")
    table.add_column("Trajectory", style="cyan")
    table.add_column("Distance", justify="right")
    table.add_column("Similarity", style="green", justify="right")
    for rank, (tid, dist) in enumerate(zip(ranking.ids[:k], ranking.distances[:k]), start=1):
        table.add_row(str(rank), tid, f"{dist:.6f}", f"{float(np.exp(-dist)):.6f}")
    console.print(table)


def main():
    """Main entry point for the CLI."""
    try:
        cli()
    except Exception as e:
        console.print(f"[red]Error: {str(e)}[/red]")
        sys.exit(1)


if __name__ == "__main__":
    main()
