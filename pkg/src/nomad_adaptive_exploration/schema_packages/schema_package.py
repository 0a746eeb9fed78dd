from __future__ import annotations

import math
from collections.abc import Iterable
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from nomad.datamodel.datamodel import EntryArchive
    from structlog.stdlib import BoundLogger

from nomad.config import config
from nomad.datamodel.data import ArchiveSection, Schema
from nomad.datamodel.metainfo.annotations import ELNAnnotation, ELNComponentEnum
from nomad.datamodel.results import ELN, Results
from nomad.metainfo import MEnum, Quantity, SchemaPackage, Section, SubSection

from nomad_adaptive_exploration.config import BanditKind, FitnessKind, LearningMode
from nomad_adaptive_exploration.errors import MetricsError
from nomad_adaptive_exploration.metrics import window_mean

configuration = config.get_plugin_entry_point(
    'nomad_adaptive_exploration.schema_packages:exploration_run_schema'
)

m_package = SchemaPackage()

BANDIT_KINDS = [k.value for k in BanditKind] + ['unknown']
FITNESS_KINDS = [k.value for k in FitnessKind] + ['unknown']
LEARNING_MODES = [k.value for k in LearningMode] + ['unknown']


def _unique_clean(values: Iterable[str] | None) -> list[str]:
    out: list[str] = []
    for v in values or []:
        if v is None:
            continue
        if isinstance(v, str):
            v = v.strip()
        if not v:
            continue
        if v not in out:
            out.append(v)
    return out


def _finite(values) -> np.ndarray:
    if values is None:
        return np.empty(0)
    v = np.asarray(values, dtype=float)
    return v[np.isfinite(v)]


class ArmProbabilityTrace(ArchiveSection):
    m_def = Section(
        description='Selection probability of one arm after every logged episode.'
    )

    label = Quantity(
        type=str,
        description='Arm label, e.g. "T=0.1" or a composed modulation.',
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    probabilities = Quantity(
        type=np.float64,
        shape=['*'],
        description='Probability per logged episode, starting with episode 0.',
    )
    final_probability = Quantity(
        type=np.float64,
        description='Probability after the last logged episode.',
    )

    def normalize(self, archive: EntryArchive, logger: BoundLogger) -> None:
        super().normalize(archive, logger)
        if self.probabilities is not None and len(self.probabilities):
            self.final_probability = float(self.probabilities[-1])


class ExplorationRun(Schema):
    m_def = Section(
        label='Exploration Run',
        description=(
            'One seed of one experiment variant: the per-episode run log of a '
            'bandit-adapted exploration run and the outcomes derived from it.'
        ),
        a_eln={'hide': ['tags_terms']},
    )

    entry_name = Quantity(
        type=str,
        description='Name of the entry, defaults to "<variant> seed <seed>".',
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    variant = Quantity(
        type=str,
        description='Variant label, e.g. "bandit", "uniform" or "fixed-3".',
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    seed = Quantity(
        type=int,
        description='Master seed of the run.',
        a_eln=ELNAnnotation(component=ELNComponentEnum.NumberEditQuantity),
    )
    environment = Quantity(
        type=str,
        description="'lavaworld' or the map file the run used.",
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    modulation_set = Quantity(
        type=str,
        description='Name of the modulation set the arms were drawn from.',
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    bandit_kind = Quantity(
        type=MEnum(BANDIT_KINDS),
        default='unknown',
        a_eln=ELNAnnotation(component=ELNComponentEnum.EnumEditQuantity),
    )
    fitness_kind = Quantity(
        type=MEnum(FITNESS_KINDS),
        default='unknown',
        a_eln=ELNAnnotation(component=ELNComponentEnum.EnumEditQuantity),
    )
    learning_mode = Quantity(
        type=MEnum(LEARNING_MODES),
        default='unknown',
        a_eln=ELNAnnotation(component=ELNComponentEnum.EnumEditQuantity),
    )

    episode = Quantity(type=np.int64, shape=['*'])
    env_steps = Quantity(type=np.int64, shape=['*'])
    fitness = Quantity(
        type=np.float64,
        shape=['*'],
        description='Fitness reported to the bandit, NaN for episode 0.',
    )
    eval_return = Quantity(
        type=np.float64,
        shape=['*'],
        description='Latest exact evaluation of the learner at each episode.',
    )
    horizon = Quantity(
        type=np.float64,
        shape=['*'],
        description='Effective bandit horizon, NaN for selectors without one.',
    )
    arm_traces = SubSection(section_def=ArmProbabilityTrace, repeats=True)

    episodes = Quantity(type=int, description='Number of episodes played.')
    total_env_steps = Quantity(type=int)
    outcome = Quantity(
        type=np.float64,
        description='Mean evaluation over the final fraction of episodes.',
    )
    early_outcome = Quantity(
        type=np.float64,
        description='Mean evaluation over the first fraction of episodes.',
    )
    final_horizon = Quantity(type=np.float64)
    favourite_arm = Quantity(
        type=str,
        description='Arm with the highest final selection probability.',
    )

    tags = Quantity(
        type=str,
        shape=['*'],
        a_eln=ELNAnnotation(component=ELNComponentEnum.StringEditQuantity),
    )
    message = Quantity(type=str)

    def _sync_entry_name(self, archive: EntryArchive) -> None:
        if not self.entry_name and self.variant:
            self.entry_name = f'{self.variant} seed {self.seed}'
        if self.entry_name and archive.metadata is not None:
            archive.metadata.entry_name = self.entry_name

    def _episode_evaluations(self) -> np.ndarray:
        if self.eval_return is None:
            return np.empty(0)
        values = np.asarray(self.eval_return, dtype=float)
        if self.episode is not None and len(self.episode) == len(values):
            values = values[np.asarray(self.episode) >= 1]
        return _finite(values)

    def _derive_outcomes(self, logger: BoundLogger) -> None:
        evaluations = self._episode_evaluations()
        try:
            self.outcome = window_mean(evaluations, configuration.final_fraction)
            self.early_outcome = window_mean(
                evaluations, configuration.early_fraction, final=False
            )
        except MetricsError as e:
            logger.warning('outcome_not_derived', error=str(e))
            self.message = f'No outcome: {e}'
            return
        self.message = (
            f'G = {self.outcome:.4g} over the final '
            f'{configuration.final_fraction:.0%} of {evaluations.size} evaluations.'
        )

    def _publish_tags(self, archive: EntryArchive) -> None:
        self.tags = _unique_clean(getattr(self, 'tags', None))
        if not self.tags:
            return
        if not archive.results:
            archive.results = Results(eln=ELN())
        if not archive.results.eln:
            archive.results.eln = ELN()
        existing = _unique_clean(getattr(archive.results.eln, 'tags', None))
        for t in self.tags:
            if t not in existing:
                existing.append(t)
        archive.results.eln.tags = existing

    def normalize(self, archive: EntryArchive, logger: BoundLogger) -> None:
        super().normalize(archive, logger)

        self._sync_entry_name(archive)

        if self.episode is not None and len(self.episode):
            self.episodes = int(np.max(self.episode))
        if self.env_steps is not None and len(self.env_steps):
            self.total_env_steps = int(self.env_steps[-1])
        horizons = _finite(self.horizon)
        if horizons.size:
            self.final_horizon = float(horizons[-1])

        self._derive_outcomes(logger)

        best, best_p = None, -math.inf
        for trace in self.arm_traces or []:
            try:
                trace.normalize(archive, logger)
            except Exception as e:
                logger.warning('arm_trace_normalize_failed', error=str(e))
                continue
            if trace.final_probability is not None and trace.final_probability > best_p:
                best, best_p = trace.label, trace.final_probability
        self.favourite_arm = best

        self._publish_tags(archive)


m_package.__init_metainfo__()
