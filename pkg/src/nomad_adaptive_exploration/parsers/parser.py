from pathlib import Path
from typing import (
    TYPE_CHECKING,
)

if TYPE_CHECKING:
    from nomad.datamodel.datamodel import (
        EntryArchive,
    )
    from structlog.stdlib import (
        BoundLogger,
    )

from nomad.config import config
from nomad.parsing.parser import MatchingParser

from nomad_adaptive_exploration.config import ExperimentConfig, load_config
from nomad_adaptive_exploration.errors import ConfigError
from nomad_adaptive_exploration.harness import RunLog
from nomad_adaptive_exploration.metrics import read_runlog_csv
from nomad_adaptive_exploration.schema_packages.schema_package import (
    ArmProbabilityTrace,
    ExplorationRun,
)

configuration = config.get_plugin_entry_point(
    'nomad_adaptive_exploration.parsers:run_log_parser'
)


def _run_config(mainfile: Path, logger: 'BoundLogger') -> ExperimentConfig | None:
    path = mainfile.with_name('config.yaml')
    if not configuration.read_config or not path.is_file():
        return None
    try:
        return load_config(path)
    except ConfigError as e:
        logger.warning('run_config_unreadable', path=str(path), error=str(e))
        return None


def exploration_run(log: RunLog, run_config: ExperimentConfig | None) -> ExplorationRun:
    """Maps a run log, and the config that produced it if known, onto the schema."""
    run = ExplorationRun(
        variant=log.variant,
        seed=log.seed,
        episode=log.column('episode').astype(int),
        env_steps=log.column('env_steps').astype(int),
        fitness=log.column('fitness'),
        eval_return=log.column('eval_return'),
        horizon=log.column('horizon'),
        tags=[log.variant],
    )
    for i, label in enumerate(log.arm_labels):
        run.arm_traces.append(
            ArmProbabilityTrace(
                label=label,
                probabilities=[row.arm_probabilities[i] for row in log.rows],
            )
        )
    if run_config is not None:
        run.environment = run_config.environment
        run.modulation_set = run_config.modulation_set
        run.bandit_kind = run_config.bandit.value
        run.fitness_kind = run_config.fitness.value
        run.learning_mode = run_config.learning.value
    return run


class RunLogParser(MatchingParser):
    def parse(
        self,
        mainfile: str,
        archive: 'EntryArchive',
        logger: 'BoundLogger',
        child_archives: dict[str, 'EntryArchive'] = None,
    ) -> None:
        log = read_runlog_csv(mainfile)
        run_config = _run_config(Path(mainfile), logger)
        logger.info(
            'RunLogParser.parse',
            variant=log.variant,
            seed=log.seed,
            rows=len(log.rows),
            with_config=run_config is not None,
        )
        archive.data = exploration_run(log, run_config)
