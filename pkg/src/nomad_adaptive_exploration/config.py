from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from nomad_adaptive_exploration.errors import ConfigError


class BanditKind(str, Enum):
    ADAPTIVE = 'adaptive'
    FACTORED_ADAPTIVE = 'factored-adaptive'
    UNIFORM = 'uniform'
    UCB = 'ucb'
    THOMPSON = 'thompson'
    FIXED_ARM = 'fixed-arm'


class FitnessKind(str, Enum):
    RETURN = 'return'
    ORACLE = 'oracle'
    BINARY_PROXY = 'binary-proxy'
    NONE = 'none'


class LearningMode(str, Enum):
    QUANTILE = 'quantile'
    LAVA_SUPPRESSION = 'lava-suppression'
    FROZEN_OPTIMAL = 'frozen-optimal'


class BanditSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    eta: float = Field(0.02, gt=0, lt=1, description='Horizon shrink rate per step.')
    history_cap: PositiveInt = Field(
        100_000, description='Hard cap on retained fitness records.'
    )
    history_multiple: PositiveInt = Field(
        10, description='Records retained as a multiple of the largest horizon.'
    )
    ucb_c: float = Field(1.0, ge=0, description='UCB exploration coefficient.')
    thompson_prior_mean: float = Field(0.0, description='Thompson prior mean.')
    thompson_prior_variance: PositiveFloat = Field(
        1.0, description='Thompson prior variance.'
    )
    thompson_variance_floor: PositiveFloat = Field(
        1e-6, description='Lower bound on the estimated observation variance.'
    )


class LearnerSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    n_quantiles: PositiveInt = Field(11, description='Quantiles per (state, action).')
    n_step: PositiveInt = Field(3, description='n for n-step targets.')
    learning_rate: PositiveFloat = Field(0.05, description='Tabular step size.')
    huber_kappa: PositiveFloat = Field(1.0, description='Huber loss parameter.')
    alpha: float = Field(0.6, ge=0, description='Prioritization exponent.')
    beta: float = Field(0.3, ge=0, description='Importance sampling exponent.')
    replay_capacity: PositiveInt = Field(100_000, description='Replay size.')
    batch_size: PositiveInt = Field(64, description='Transitions per learner batch.')
    min_replay: PositiveInt = Field(
        64, description='Transitions required before learning starts.'
    )
    target_sync_period: PositiveInt = Field(
        250, description='Learner batches between target table syncs.'
    )
    priority_floor: PositiveFloat = Field(1e-6, description='Smallest priority.')


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    environment: str = Field(
        'lavaworld', description="'lavaworld' or a path to an ASCII map."
    )
    modulation_set: str = Field(
        'lavaworld',
        description="'curated', 'extended', 'lavaworld', 'curated:<dims>' or a YAML path.",
    )
    bandit: BanditKind = Field(BanditKind.ADAPTIVE, description='Arm selector.')
    fixed_arm: NonNegativeInt | None = Field(
        None, description="Flat arm index for the 'fixed-arm' bandit."
    )
    fitness: FitnessKind = Field(FitnessKind.RETURN, description='Fitness signal.')
    learning: LearningMode = Field(LearningMode.QUANTILE, description='Value learning.')
    variant: str | None = Field(None, description='Label used in logs and paths.')
    actors: PositiveInt = Field(4, description='Concurrent actors.')
    episodes: PositiveInt = Field(2000, description='Episodes per run.')
    max_env_steps: PositiveInt | None = Field(
        None, description='Optional budget of environment steps.'
    )
    samples_to_insertion_ratio: PositiveFloat = Field(
        8.0, description='Replay samples consumed per inserted transition.'
    )
    evaluation_period: PositiveInt = Field(
        50, description='Episodes between greedy evaluations.'
    )
    seed: int = Field(0, description='Master seed.')
    deterministic: bool = Field(
        False, description='Single-threaded interleaved loop regardless of actors.'
    )
    gamma: float = Field(0.99, gt=0, le=1, description='Continuation probability.')
    max_episode_steps: PositiveInt = Field(10_000, description='Hard episode cap.')
    dedup_probe_count: PositiveInt = Field(
        100, description='Probes used to deduplicate flat modulations.'
    )
    bandit_settings: BanditSettings = Field(default_factory=BanditSettings)
    learner: LearnerSettings = Field(default_factory=LearnerSettings)

    @model_validator(mode='after')
    def _check_fixed_arm(self) -> ExperimentConfig:
        if self.bandit is BanditKind.FIXED_ARM and self.fixed_arm is None:
            raise ValueError("bandit 'fixed-arm' needs fixed_arm")
        if self.bandit is not BanditKind.FIXED_ARM and self.fixed_arm is not None:
            raise ValueError("fixed_arm is only valid with bandit 'fixed-arm'")
        return self

    @property
    def variant_label(self) -> str:
        if self.variant:
            return self.variant
        if self.bandit is BanditKind.FIXED_ARM:
            return f'fixed-{self.fixed_arm}'
        return f'{self.bandit.value}-{self.fitness.value}'

    def updated(self, **overrides: Any) -> ExperimentConfig:
        """A validated copy with ``overrides`` applied (``None`` values skipped)."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        if BanditKind(data['bandit']) is not BanditKind.FIXED_ARM:
            data['fixed_arm'] = None
        return parse_config(data)


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f'{path}: cannot read config: {e}') from e
    if not isinstance(data, dict):
        raise ConfigError(f'{path}: expected a mapping at the top level')
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f'{path}: {e}') from e


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            yaml.safe_dump(config.model_dump(mode='json'), sort_keys=False)
        )
    except OSError as e:
        raise ConfigError(f'{path}: cannot write config: {e}') from e
