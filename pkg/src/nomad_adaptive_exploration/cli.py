from __future__ import annotations

import fnmatch
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import click
import numpy as np
import pandas as pd
import structlog

from nomad_adaptive_exploration import benchmarks, harness, metrics
from nomad_adaptive_exploration.config import (
    BanditKind,
    ExperimentConfig,
    dump_config,
    load_config,
)
from nomad_adaptive_exploration.errors import ExplorationError, MetricsError

logger = structlog.get_logger(__name__)

SUMMARY_COLUMNS = ['variant', 'metric', 'mean', 'stderr', 'seeds']


def configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def experiment_options(f):
    options = [
        click.option(
            '--config',
            'config_path',
            type=click.Path(exists=True, dir_okay=False),
            help='YAML experiment config.',
        ),
        click.option('--seed', type=int, default=None, help='Seed of the first run.'),
        click.option(
            '--seeds', type=click.IntRange(min=1), default=None, help='Number of seeds.'
        ),
        click.option(
            '--bandit',
            type=click.Choice([k.value for k in BanditKind]),
            default=None,
            help='Arm selector.',
        ),
        click.option(
            '--modulation-set',
            default=None,
            help="'curated', 'extended', 'lavaworld', '<set>:<dims>' or a YAML path.",
        ),
        click.option(
            '--out',
            type=click.Path(file_okay=False),
            default='results',
            show_default=True,
            help='Output directory.',
        ),
        click.option(
            '--actors', type=click.IntRange(min=1), default=None, help='Actors per run.'
        ),
        click.option(
            '--episodes',
            type=click.IntRange(min=1),
            default=None,
            help='Episodes per run.',
        ),
        click.option(
            '--deterministic', is_flag=True, help='Single-threaded, reproducible runs.'
        ),
        click.option(
            '--workers',
            type=click.IntRange(min=1),
            default=1,
            show_default=True,
            help='Processes for independent seeds.',
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def base_config(
    config_path: str | None = None,
    seed: int | None = None,
    bandit: str | None = None,
    modulation_set: str | None = None,
    actors: int | None = None,
    episodes: int | None = None,
    deterministic: bool = False,
) -> ExperimentConfig:
    config = load_config(config_path) if config_path else ExperimentConfig()
    return config.updated(
        seed=seed,
        bandit=bandit,
        modulation_set=modulation_set,
        actors=actors,
        episodes=episodes,
        deterministic=deterministic or None,
    )


def seed_list(config: ExperimentConfig, seeds: int | None, default: int) -> list[int]:
    return [config.seed + i for i in range(seeds or default)]


def write_runs(
    out: Path, logs: Sequence[harness.RunLog], config: ExperimentConfig
) -> None:
    for log in logs:
        run_dir = out / 'runs' / log.variant / str(log.seed)
        metrics.emit_csv(log, run_dir / 'log.csv')
        run_config = config.updated(seed=log.seed, variant=log.variant)
        dump_config(run_config, run_dir / 'config.yaml')


def read_runs(root: Path) -> dict[str, list[harness.RunLog]]:
    runs: dict[str, list[harness.RunLog]] = {}
    for path in sorted((root / 'runs').glob('*/*/log.csv')):
        log = metrics.read_runlog_csv(path)
        runs.setdefault(log.variant, []).append(log)
    if not runs:
        raise MetricsError(f'{root}: no runs/<variant>/<seed>/log.csv files')
    return runs


def write_summary(out: Path, rows: list[tuple]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    metrics.emit_csv(frame, out / 'summary.csv')
    return frame


def echo_summary(frame: pd.DataFrame) -> None:
    for rec in frame.itertuples(index=False):
        click.echo(f'{rec.variant} {rec.metric}={rec.mean:.4f} +/- {rec.stderr:.4f}')


def run_variants(
    variants: dict[str, ExperimentConfig], seeds: list[int], workers: int
) -> dict[str, list[harness.RunLog]]:
    return {
        name: harness.run_seeds(config, seeds, workers) for name, config in variants.items()
    }


def select_variants(
    variants: dict[str, ExperimentConfig], patterns: Sequence[str]
) -> dict[str, ExperimentConfig]:
    if not patterns:
        return variants
    return {
        k: v for k, v in variants.items() if any(fnmatch.fnmatch(k, p) for p in patterns)
    }


@click.group()
@click.option('-v', '--verbose', count=True, help='-v for info, -vv for debug logs.')
def main(verbose: int) -> None:
    """Bandit-adapted behaviour modulation for tabular reinforcement learning."""
    configure_logging(verbose)


@main.command('lavaworld-stationary')
@experiment_options
@click.option('--variant', 'only', multiple=True, help='Run only these variants.')
def lavaworld_stationary(
    seeds: int | None, out: str, workers: int, only: tuple[str, ...], **overrides
) -> None:
    """Optimal values, modulations chosen by bandits with exact or proxy fitness."""
    base = base_config(**overrides)
    variants = select_variants(harness.stationary_variants(base), only)
    out = Path(out)
    runs = run_variants(variants, seed_list(base, seeds, 10), workers)

    curves, bands, rows = {}, {}, []
    for name, logs in runs.items():
        write_runs(out, logs, variants[name])
        per_seed = metrics.success_curves(logs)
        curves[name] = per_seed.mean(axis=0)
        bands[name] = (
            per_seed.std(axis=0, ddof=1) / np.sqrt(len(logs))
            if len(logs) > 1
            else np.zeros(per_seed.shape[1])
        )
        mean, stderr = metrics.mean_stderr(per_seed[:, -1])
        rows.append((name, 'final_cumulative_success', mean, stderr, len(logs)))
    if 'best-fixed' in curves:
        half = 0.5 * curves['best-fixed'][-1]
        for name, curve in curves.items():
            reached = float(metrics.episodes_to_reach(curve, half))
            rows.append((name, 'episodes_to_half_best', reached, 0.0, len(runs[name])))

    metrics.emit_svg_lineplot(
        curves,
        out / 'figures' / 'cumulative_success.svg',
        ylabel='cumulative success probability',
        title='LavaWorld, stationary',
        bands=bands,
    )
    echo_summary(write_summary(out, rows))


@main.command('lavaworld-nonstationary')
@experiment_options
@click.option('--variant', 'only', multiple=True, help='Run only these variants.')
def lavaworld_nonstationary(
    seeds: int | None, out: str, workers: int, only: tuple[str, ...], **overrides
) -> None:
    """Values learned by lava suppression; modulations chosen by bandits."""
    base = base_config(**overrides)
    variants = select_variants(harness.nonstationary_variants(base), only)
    out = Path(out)
    runs = run_variants(variants, seed_list(base, seeds, 10), workers)

    finals, curves, rows = {}, {}, []
    for name, logs in runs.items():
        write_runs(out, logs, variants[name])
        outcomes = [metrics.final_outcome(log) for log in logs]
        finals[name] = metrics.mean_stderr(outcomes)
        rows.append((name, 'final_success', *finals[name], len(logs)))
        curves[name] = np.mean([log.column('eval_return')[1:] for log in logs], axis=0)
    fixed = {k: v for k, v in finals.items() if k.startswith('fixed-')}
    if fixed:
        best = max(fixed, key=lambda k: fixed[k][0])
        rows.append(('best-fixed', 'final_success', *fixed[best], len(runs[best])))
        logger.info('best_fixed_arm', variant=best, final=fixed[best][0])

    shown = {k: v for k, v in curves.items() if not k.startswith('fixed-')}
    if fixed:
        shown['best-fixed'] = curves[best]
    metrics.emit_svg_lineplot(
        shown,
        out / 'figures' / 'greedy_success.svg',
        ylabel='greedy success probability',
        title='LavaWorld, non-stationary',
    )
    echo_summary(write_summary(out, rows))


@main.command('train')
@experiment_options
def train(seeds: int | None, out: str, workers: int, **overrides) -> None:
    """Tabular quantile learner plus bandit on any ASCII map."""
    config = base_config(**overrides)
    out = Path(out)
    logs = harness.run_seeds(config, seed_list(config, seeds, 1), workers)
    write_runs(out, logs, config)
    finals = [metrics.final_outcome(log) for log in logs]
    earlies = [metrics.early_outcome(log) for log in logs]
    variant = config.variant_label
    rows = [
        (variant, 'final_return', *metrics.mean_stderr(finals), len(logs)),
        (variant, 'early_return', *metrics.mean_stderr(earlies), len(logs)),
    ]
    metrics.emit_svg_lineplot(
        {variant: np.mean([log.column('eval_return')[1:] for log in logs], axis=0)},
        out / 'figures' / 'eval_return.svg',
        ylabel='greedy return',
        title=config.environment,
    )
    echo_summary(write_summary(out, rows))


def collect_outcomes(paths: Sequence[Path], fraction: float) -> list[metrics.Outcome]:
    outcomes = []
    for path in paths:
        if path.is_dir() and (path / 'runs').is_dir():
            for variant, logs in read_runs(path).items():
                outcomes.extend(
                    metrics.Outcome(
                        path.name, log.seed, variant, metrics.final_outcome(log, fraction)
                    )
                    for log in logs
                )
        elif path.is_dir():
            for csv in sorted(path.glob('*.csv')):
                outcomes.extend(metrics.read_outcomes_csv(csv))
        else:
            outcomes.extend(metrics.read_outcomes_csv(path))
    return outcomes


def fraction_option(name: str, help: str):
    return click.option(
        name,
        type=click.FloatRange(0, 1, min_open=True),
        default=0.1,
        show_default=True,
        help=help,
    )


@main.command('rank')
@click.argument(
    'paths', nargs=-1, required=True, type=click.Path(exists=True, path_type=Path)
)
@fraction_option('--final-fraction', 'Share of final episodes averaged into G.')
@click.option(
    '--out', type=click.Path(file_okay=False), default=None, help='Write summary.csv here.'
)
def rank(paths, final_fraction, out):
    """Relative rank of variants over outcome CSVs or run directories (one per game)."""
    report = metrics.relative_rank(collect_outcomes(paths, final_fraction))
    for variant, value in report.per_variant.items():
        click.echo(f'{variant}={value:.4f}')
    if out:
        rows = [(v, 'relative_rank', r, 0.0, 0) for v, r in report.per_variant.items()]
        write_summary(Path(out), rows)


@main.command('drop')
@click.argument('run_dir', type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    '--variants',
    'pattern',
    default='fixed-*',
    show_default=True,
    help='Glob of candidate variants.',
)
@fraction_option('--early-fraction', 'Share of first episodes used to pick a variant.')
@fraction_option('--final-fraction', 'Share of final episodes averaged into G.')
def drop(run_dir, pattern, early_fraction, final_fraction):
    """Cost of committing to the variant that looked best early on."""
    runs = {k: v for k, v in read_runs(run_dir).items() if fnmatch.fnmatch(k, pattern)}
    if len(runs) < 2:
        raise MetricsError(f'{run_dir}: fewer than two variants match {pattern!r}')
    early = {
        k: float(np.mean([metrics.early_outcome(log, early_fraction) for log in logs]))
        for k, logs in runs.items()
    }
    final = {
        k: float(np.mean([metrics.final_outcome(log, final_fraction) for log in logs]))
        for k, logs in runs.items()
    }
    chosen = max(sorted(early), key=early.__getitem__)
    score = metrics.performance_drop(chosen, final)
    click.echo(f'early_best={chosen}')
    click.echo(f'score={score:.4f}')
    click.echo(f'drop={1.0 - score:.4f}')


@main.command('bench')
@click.option(
    '--problem',
    type=click.Choice(sorted(benchmarks.PROBLEMS)),
    default='flipping-bernoulli',
    show_default=True,
)
@click.option(
    '--bandit',
    'kinds',
    multiple=True,
    type=click.Choice([k.value for k in benchmarks.BENCHMARK_KINDS]),
    help='Bandits to compare (default: all).',
)
@click.option('--steps', type=click.IntRange(min=1), default=3000, show_default=True)
@click.option('--seeds', type=click.IntRange(min=1), default=50, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option(
    '--out', type=click.Path(file_okay=False), default=None, help='Write summary.csv here.'
)
def bench(problem, kinds, steps, seeds, seed, out):
    """Bandits against synthetic non-stationary payoffs."""
    selected = [BanditKind(k) for k in kinds] or list(benchmarks.BENCHMARK_KINDS)
    results = benchmarks.run_bandit_benchmark(
        benchmarks.PROBLEMS[problem](), selected, steps=steps, seeds=seeds, seed=seed
    )
    rows = [(r.kind, 'average_reward', r.mean, r.stderr, r.runs) for r in results]
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    if out:
        write_summary(Path(out), rows)
    echo_summary(frame)


def cli_main(argv: Sequence[str] | None = None) -> int:
    """Runs the CLI and returns its exit code: 2 usage, 1 failure, 0 success."""
    try:
        result = main.main(
            args=list(argv) if argv is not None else None,
            prog_name='adaptive-exploration',
            standalone_mode=False,
        )
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except (ExplorationError, OSError) as e:
        logger.error('error', error=str(e), kind=type(e).__name__)
        click.echo(f'error: {e}', err=True)
        return 1
    return result if isinstance(result, int) else 0


def run() -> None:
    sys.exit(cli_main())
