"""Run-level metrics and the CSV/SVG files they are written to."""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import structlog  # noqa: E402
from scipy.stats import rankdata  # noqa: E402

from nomad_adaptive_exploration.errors import MetricsError  # noqa: E402
from nomad_adaptive_exploration.harness import RUNLOG_COLUMNS, RunLog  # noqa: E402

logger = structlog.get_logger(__name__)

OUTCOME_COLUMNS = ('game', 'seed', 'variant', 'G')
SVG_HASH_SALT = 'nomad-adaptive-exploration'


@dataclass(frozen=True)
class Outcome:
    game: str
    seed: int
    variant: str
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise MetricsError(f'{self.game}/{self.variant}/{self.seed}: G must be finite')


@dataclass(frozen=True)
class RankReport:
    per_variant: dict[str, float]
    per_game: dict[str, dict[str, float]]


def relative_rank(outcomes: Iterable[Outcome]) -> RankReport:
    """Normalized relative rank per variant, averaged over games.

    Within a game all outcomes are ranked jointly (ties get their average
    rank) and each variant's mean rank is scaled so that a variant holding
    the top ``N`` positions scores 1 and one holding the bottom ``N`` scores 0.
    """
    by_game: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for o in outcomes:
        by_game[o.game][o.variant].append(o.value)
    if not by_game:
        raise MetricsError('no outcomes to rank')

    variants = sorted({v for game in by_game.values() for v in game})
    if len(variants) < 2:
        raise MetricsError('relative rank needs at least two variants')
    per_game: dict[str, dict[str, float]] = {}
    for game, table in sorted(by_game.items()):
        if sorted(table) != variants:
            raise MetricsError(f'{game}: every game needs the same variants')
        counts = {len(vals) for vals in table.values()}
        if len(counts) != 1:
            raise MetricsError(f'{game}: variants have different seed counts')
        (n,) = counts
        m = n * len(variants)
        values = np.concatenate([table[v] for v in variants])
        ranks = rankdata(values, method='average').reshape(len(variants), n)
        low, spread = (n + 1) / 2, m - n
        per_game[game] = {
            v: float((r.mean() - low) / spread) for v, r in zip(variants, ranks)
        }

    per_variant = {
        v: float(np.mean([scores[v] for scores in per_game.values()])) for v in variants
    }
    return RankReport(per_variant=per_variant, per_game=per_game)


def performance_drop(early_best: str, final_means: Mapping[str, float]) -> float:
    """Final score of the early pick, scaled so the best final is 1 and the worst 0."""
    if len(final_means) < 2:
        raise MetricsError('performance drop needs at least two variants')
    if early_best not in final_means:
        raise MetricsError(f'unknown variant {early_best!r}')
    best, worst = max(final_means.values()), min(final_means.values())
    if best == worst:
        raise MetricsError('all variants tie; performance drop is undefined')
    return (final_means[early_best] - worst) / (best - worst)


def cumulative_success_curve(probabilities: Sequence[float]) -> np.ndarray:
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise MetricsError('success probabilities must lie in [0, 1]')
    return 1.0 - np.cumprod(1.0 - p)


def episodes_to_reach(curve: Sequence[float], level: float) -> int:
    """First 1-based episode at which ``curve`` reaches ``level``; one past the end if never."""
    hits = np.flatnonzero(np.asarray(curve, dtype=float) >= level)
    return int(hits[0]) + 1 if hits.size else len(curve) + 1


def _episode_rows(log: RunLog) -> pd.DataFrame:
    frame = log.to_frame()
    return frame[frame['episode'] >= 1]


def _fraction_count(total: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise MetricsError(f'fraction must lie in (0, 1], got {fraction}')
    if total == 0:
        raise MetricsError('run log has no episodes')
    return max(1, math.ceil(fraction * total))


def window_mean(values: Sequence[float], fraction: float, *, final: bool = True) -> float:
    """Mean of the last (or first) ``ceil(fraction * len(values))`` values."""
    v = np.asarray(values, dtype=float)
    k = _fraction_count(v.size, fraction)
    return float(v[-k:].mean() if final else v[:k].mean())


def final_outcome(log: RunLog, fraction: float = 0.1) -> float:
    """G: mean evaluation return over the final ``fraction`` of episodes."""
    return window_mean(_episode_rows(log)['eval_return'], fraction)


def early_outcome(log: RunLog, fraction: float = 0.1) -> float:
    return window_mean(_episode_rows(log)['eval_return'], fraction, final=False)


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if not v.size:
        raise MetricsError('no values')
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def success_curves(logs: Sequence[RunLog]) -> np.ndarray:
    """Per-seed cumulative success curves from per-episode success probabilities."""
    return np.array(
        [cumulative_success_curve(_episode_rows(log)['eval_return'].to_numpy()) for log in logs]
    )


def emit_csv(data: RunLog | pd.DataFrame, path: str | Path) -> None:
    frame = data.to_frame() if isinstance(data, RunLog) else data
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, na_rep='', lineterminator='\n')
    except OSError as e:
        raise MetricsError(f'{path}: cannot write CSV: {e}') from e


def read_runlog_csv(path: str | Path) -> RunLog:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MetricsError(f'{path}: cannot read run log: {e}') from e
    if tuple(frame.columns[: len(RUNLOG_COLUMNS)]) != RUNLOG_COLUMNS:
        raise MetricsError(f'{path}: not a run log (columns {list(frame.columns)})')
    frame['variant'] = frame['variant'].astype(str)
    return RunLog.from_frame(frame)


def read_outcomes_csv(path: str | Path) -> list[Outcome]:
    """Reads ``game,seed,variant,G`` rows; rows with a non-finite G are skipped."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MetricsError(f'{path}: cannot read outcomes: {e}') from e
    missing = set(OUTCOME_COLUMNS) - set(frame.columns)
    if missing:
        raise MetricsError(f'{path}: missing columns {sorted(missing)}')
    outcomes = []
    for rec in frame.itertuples(index=False):
        value = float(rec.G)
        if not math.isfinite(value):
            logger.warning('outcome_skipped', path=str(path), game=rec.game, variant=rec.variant)
            continue
        outcomes.append(Outcome(str(rec.game), int(rec.seed), str(rec.variant), value))
    return outcomes


def outcomes_frame(outcomes: Iterable[Outcome]) -> pd.DataFrame:
    rows = sorted(outcomes, key=lambda o: (o.game, o.seed, o.variant))
    return pd.DataFrame(
        [(o.game, o.seed, o.variant, o.value) for o in rows], columns=list(OUTCOME_COLUMNS)
    )


def emit_svg_lineplot(
    series: Mapping[str, Sequence[float]],
    path: str | Path,
    *,
    xlabel: str = 'episode',
    ylabel: str = '',
    title: str = '',
    bands: Mapping[str, Sequence[float]] | None = None,
) -> None:
    """One line per series, tagged ``series-<name>`` in the SVG.

    ``bands`` optionally gives a half-width per point (e.g. the standard
    error) drawn as a shaded band around the matching series.
    """
    path = Path(path)
    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT, 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            for name, values in series.items():
                y = np.asarray(values, dtype=float)
                x = np.arange(1, y.size + 1)
                (line,) = ax.plot(x, y, label=name, gid=f'series-{name}')
                if bands and name in bands:
                    half = np.asarray(bands[name], dtype=float)
                    ax.fill_between(x, y - half, y + half, alpha=0.2, color=line.get_color())
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            if series:
                ax.legend(loc='best')
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, format='svg', metadata={'Date': None})
        except OSError as e:
            raise MetricsError(f'{path}: cannot write SVG: {e}') from e
        finally:
            plt.close(fig)
