from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from nomad.datamodel.datamodel import EntryArchive
    from structlog.stdlib import BoundLogger

from nomad.config import config
from nomad.datamodel.results import ELN, Results
from nomad.normalizing import Normalizer

from nomad_adaptive_exploration.schema_packages.schema_package import ExplorationRun

configuration = config.get_plugin_entry_point(
    'nomad_adaptive_exploration.normalizers:exploration_run_normalizer'
)


def run_tags(run: ExplorationRun) -> list[str]:
    """Search tags for a run: variant, selector, fitness and modulation set."""
    tags = list(run.tags or [])
    if run.variant:
        tags.append(run.variant)
    for prefix, value in (
        ('bandit', run.bandit_kind),
        ('fitness', run.fitness_kind),
        ('learning', run.learning_mode),
    ):
        if value and value != 'unknown':
            tags.append(f'{prefix}:{value}')
    if run.modulation_set:
        tags.append(f'modulations:{run.modulation_set}')
    if run.environment:
        tags.append(f'env:{run.environment}')

    out: list[str] = []
    for t in tags:
        t = str(t).strip()
        if t and t not in out:
            out.append(t)
    return out


class ExplorationRunNormalizer(Normalizer):
    def normalize(self, archive: 'EntryArchive', logger: 'BoundLogger') -> None:
        super().normalize(archive, logger)

        data = archive.data
        if not isinstance(data, ExplorationRun):
            return
        if not configuration.publish_tags:
            return

        data.tags = run_tags(data)
        if not archive.results:
            archive.results = Results(eln=ELN())
        if not archive.results.eln:
            archive.results.eln = ELN()
        existing = list(archive.results.eln.tags or [])
        existing.extend(t for t in data.tags if t not in existing)
        archive.results.eln.tags = existing
        logger.info('ExplorationRunNormalizer.normalize', tags=len(data.tags))
