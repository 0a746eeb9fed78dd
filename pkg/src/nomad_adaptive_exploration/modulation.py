"""Behaviour modulations and the discrete sets the bandits choose from.

A modulation ``z = (T, epsilon, b, rho, omega)`` turns one learned value
table into a distinct behaviour policy (see :mod:`.policy`). Each dimension
has a curated and an extended set of arms; combinations of dimensions form a
:class:`ModulationSpace` that is either sampled per dimension (factored) or
enumerated flat with behavioural duplicates removed.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import structlog
import yaml

from nomad_adaptive_exploration import policy
from nomad_adaptive_exploration.errors import ConfigError, ModulationError

logger = structlog.get_logger(__name__)

ArmValue = float | tuple[float, ...]

TIE_BREAK_TEMPERATURE = 0.00001
REFERENCE_EPSILON = 0.01

DEDUP_TOLERANCE = 1e-12
PROBE_QUANTILES = 3


class Dimension(str, Enum):
    TEMPERATURE = 'temperature'
    EPSILON = 'epsilon'
    REPEAT = 'repeat'
    OPTIMISM = 'optimism'
    BIAS = 'bias'

    @classmethod
    def parse(cls, name: str | Dimension) -> Dimension:
        try:
            return cls(name)
        except ValueError:
            known = ', '.join(d.value for d in cls)
            raise ModulationError(
                f'unknown modulation dimension {name!r} (expected one of {known})'
            ) from None


_FIELDS = {
    Dimension.TEMPERATURE: 'temperature',
    Dimension.EPSILON: 'epsilon',
    Dimension.REPEAT: 'repeat_prob',
    Dimension.OPTIMISM: 'optimism',
    Dimension.BIAS: 'biases',
}

CURATED_SETS: dict[Dimension, tuple[float, ...]] = {
    Dimension.TEMPERATURE: (0.0001, 0.001, 0.01),
    Dimension.EPSILON: (0.0, 0.001, 0.01, 0.1),
    Dimension.REPEAT: (0.0, 0.25, 0.5),
    Dimension.OPTIMISM: (-1.0, 0.0, 1.0, 2.0, 10.0),
    Dimension.BIAS: (0.0,),
}

EXTENDED_SETS: dict[Dimension, tuple[float, ...]] = {
    Dimension.TEMPERATURE: (0.00001, 0.0001, 0.001, 0.01, 0.1, 1.0, 10.0),
    Dimension.EPSILON: (0.0, 0.001, 0.01, 0.1, 0.2, 0.5, 1.0),
    Dimension.REPEAT: (0.0, 0.25, 0.5, 0.66, 0.75, 0.8, 0.9),
    Dimension.OPTIMISM: (-10.0, -2.0, -1.0, 0.0, 1.0, 2.0, 10.0),
    Dimension.BIAS: (-1.0, 0.0, 0.01, 0.1),
}

LAVAWORLD_SETS: dict[Dimension, tuple[float, ...]] = {
    Dimension.EPSILON: (0.01, 0.1, 1.0),
    Dimension.TEMPERATURE: (0.01, 0.1, 1.0),
    Dimension.BIAS: (0.0, 0.1),
}

# Bias strongly impoverishes behaviour in large combinations, so the extended
# combination leaves it out.
EXTENDED_COMBINATION = (
    Dimension.EPSILON,
    Dimension.TEMPERATURE,
    Dimension.REPEAT,
    Dimension.OPTIMISM,
)


@dataclass(frozen=True)
class Modulation:
    temperature: float
    epsilon: float
    biases: tuple[float, ...]
    repeat_prob: float
    optimism: float

    def __post_init__(self) -> None:
        object.__setattr__(self, 'biases', tuple(float(b) for b in self.biases))
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ModulationError(f'temperature must be > 0, got {self.temperature}')
        if not 0.0 <= self.epsilon <= 1.0:
            raise ModulationError(f'epsilon must lie in [0, 1], got {self.epsilon}')
        if not 0.0 <= self.repeat_prob < 1.0:
            raise ModulationError(
                f'repeat probability must lie in [0, 1), got {self.repeat_prob}'
            )
        if not math.isfinite(self.optimism):
            raise ModulationError(f'optimism must be finite, got {self.optimism}')
        if not self.biases:
            raise ModulationError('biases need one entry per action')
        if not all(math.isfinite(b) for b in self.biases):
            raise ModulationError(f'biases must be finite, got {self.biases}')

    @property
    def num_actions(self) -> int:
        return len(self.biases)

    def value(self, dimension: Dimension | str) -> ArmValue:
        return getattr(self, _FIELDS[Dimension.parse(dimension)])

    def with_values(self, overrides: Mapping[Dimension, ArmValue]) -> Modulation:
        return replace(self, **{_FIELDS[d]: v for d, v in overrides.items()})

    def label(self) -> str:
        return ' '.join(format_arm(d, self.value(d)) for d in Dimension)


def format_arm(dimension: Dimension, value: ArmValue) -> str:
    if dimension is Dimension.BIAS:
        hot = [(i, b) for i, b in enumerate(value) if b != 0.0]
        if not hot:
            return 'bias=0'
        return 'bias=' + ','.join(f'{b:+g}@{i}' for i, b in hot)
    return f'{dimension.value}={value:g}'


def reference_modulation(num_actions: int) -> Modulation:
    """The default behaviour: near-greedy with 1% uniform exploration."""
    if num_actions < 1:
        raise ModulationError(f'num_actions must be >= 1, got {num_actions}')
    return Modulation(
        temperature=TIE_BREAK_TEMPERATURE,
        epsilon=REFERENCE_EPSILON,
        biases=(0.0,) * num_actions,
        repeat_prob=0.0,
        optimism=0.0,
    )


def compose(reference: Modulation, overrides: Mapping[Dimension, ArmValue]) -> Modulation:
    return reference.with_values(overrides)


def expand_bias(values: Iterable[float], num_actions: int) -> tuple[tuple[float, ...], ...]:
    """A scalar bias ``v`` stands for ``v`` added to exactly one action's logit.

    Zero expands to the single zero vector; any other value to one vector per
    action.
    """
    if num_actions < 1:
        raise ModulationError(f'num_actions must be >= 1, got {num_actions}')
    vectors: list[tuple[float, ...]] = []
    for v in values:
        v = float(v)
        if v == 0.0:
            candidates = [(0.0,) * num_actions]
        else:
            candidates = [
                tuple(v if i == a else 0.0 for i in range(num_actions))
                for a in range(num_actions)
            ]
        for c in candidates:
            if c not in vectors:
                vectors.append(c)
    return tuple(vectors)


@dataclass(frozen=True)
class ModulationClass:
    dimension: Dimension
    arms: tuple[ArmValue, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, 'dimension', Dimension.parse(self.dimension))
        if not self.arms:
            raise ModulationError(f'{self.dimension.value}: arm list is empty')
        if self.dimension is Dimension.BIAS:
            arms = tuple(tuple(float(b) for b in arm) for arm in self.arms)
        else:
            arms = tuple(float(a) for a in self.arms)
        if len(set(arms)) != len(arms):
            raise ModulationError(f'{self.dimension.value}: arms are not distinct')
        object.__setattr__(self, 'arms', arms)

    def __len__(self) -> int:
        return len(self.arms)

    def labels(self) -> list[str]:
        return [format_arm(self.dimension, arm) for arm in self.arms]

    @classmethod
    def from_values(
        cls, dimension: Dimension | str, values: Sequence[float], num_actions: int = 1
    ) -> ModulationClass:
        dimension = Dimension.parse(dimension)
        if dimension is Dimension.BIAS:
            return cls(dimension, expand_bias(values, num_actions))
        if dimension is Dimension.TEMPERATURE:
            # a zero temperature means greedy with tie-breaking
            values = [TIE_BREAK_TEMPERATURE if v == 0 else v for v in values]
        return cls(dimension, tuple(values))


def curated_set(dimension: Dimension | str, *, num_actions: int = 1) -> ModulationClass:
    dimension = Dimension.parse(dimension)
    return ModulationClass.from_values(dimension, CURATED_SETS[dimension], num_actions)


def extended_set(dimension: Dimension | str, *, num_actions: int = 1) -> ModulationClass:
    dimension = Dimension.parse(dimension)
    return ModulationClass.from_values(dimension, EXTENDED_SETS[dimension], num_actions)


@dataclass(frozen=True)
class ModulationSpace:
    classes: tuple[ModulationClass, ...]
    reference: Modulation
    flat: tuple[Modulation, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        dims = [c.dimension for c in self.classes]
        if len(set(dims)) != len(dims):
            raise ModulationError(f'duplicate modulation dimensions: {dims}')
        for c in self.classes:
            if c.dimension is Dimension.BIAS:
                for arm in c.arms:
                    if len(arm) != self.num_actions:
                        raise ModulationError(
                            f'bias arm {arm} does not match {self.num_actions} actions'
                        )
            else:
                # validates the arm values against the Modulation invariants
                for arm in c.arms:
                    compose(self.reference, {c.dimension: arm})

    @property
    def num_actions(self) -> int:
        return self.reference.num_actions

    @property
    def dimensions(self) -> tuple[Dimension, ...]:
        return tuple(c.dimension for c in self.classes)

    @property
    def factored_arm_count(self) -> int:
        return sum(len(c) for c in self.classes)

    @property
    def product_size(self) -> int:
        return math.prod(len(c) for c in self.classes)

    def compose(self, arms: Sequence[int]) -> Modulation:
        if len(arms) != len(self.classes):
            raise ModulationError(
                f'expected {len(self.classes)} arm indices, got {len(arms)}'
            )
        return compose(
            self.reference,
            {c.dimension: c.arms[i] for c, i in zip(self.classes, arms)},
        )

    def product(self) -> list[Modulation]:
        ranges = [range(len(c)) for c in self.classes]
        return [self.compose(arms) for arms in itertools.product(*ranges)]

    def flattened(self, dedup_probe_count: int, rng: np.random.Generator) -> ModulationSpace:
        return replace(self, flat=tuple(enumerate_flat(self, dedup_probe_count, rng)))


def enumerate_flat(
    space: ModulationSpace, dedup_probe_count: int, rng: np.random.Generator
) -> list[Modulation]:
    """Cartesian product of the space with behavioural duplicates removed.

    Two modulations are duplicates when their action distributions agree to
    within ``DEDUP_TOLERANCE`` on every probe. A probe is a random quantile
    table plus a random previous action; each probe is evaluated both as a
    first step and as a later step.
    """
    if dedup_probe_count < 1:
        raise ModulationError(f'dedup_probe_count must be >= 1, got {dedup_probe_count}')
    for c in space.classes:
        if not c.arms:
            raise ModulationError(f'{c.dimension.value}: arm list is empty')

    num_actions = space.num_actions
    probes = [
        (
            rng.normal(size=(num_actions, PROBE_QUANTILES)),
            int(rng.integers(num_actions)),
        )
        for _ in range(dedup_probe_count)
    ]

    kept: list[Modulation] = []
    kept_signatures: list[np.ndarray] = []
    candidates = space.product()
    for z in candidates:
        signature = np.concatenate(
            [
                np.concatenate(
                    [
                        policy.action_distribution(q, z, None),
                        policy.action_distribution(q, z, prev),
                    ]
                )
                for q, prev in probes
            ]
        )
        if any(
            np.max(np.abs(signature - other)) <= DEDUP_TOLERANCE
            for other in kept_signatures
        ):
            continue
        kept.append(z)
        kept_signatures.append(signature)

    logger.debug(
        'modulations_enumerated',
        raw=len(candidates),
        unique=len(kept),
        probes=dedup_probe_count,
    )
    return kept


def build_space(
    sets: Mapping[Dimension | str, Sequence[float]], num_actions: int
) -> ModulationSpace:
    classes = tuple(
        ModulationClass.from_values(d, values, num_actions) for d, values in sets.items()
    )
    return ModulationSpace(classes=classes, reference=reference_modulation(num_actions))


def lavaworld_space(num_actions: int = 4) -> ModulationSpace:
    return build_space(LAVAWORLD_SETS, num_actions)


def named_space(name: str, num_actions: int) -> ModulationSpace:
    """``curated``, ``extended``, ``lavaworld`` or ``curated:epsilon,repeat``."""
    base, _, subset = name.partition(':')
    if base == 'lavaworld' and not subset:
        return lavaworld_space(num_actions)
    if base == 'curated':
        table, default = CURATED_SETS, tuple(Dimension)
    elif base == 'extended':
        table, default = EXTENDED_SETS, EXTENDED_COMBINATION
    else:
        raise ModulationError(f'unknown modulation set {name!r}')
    dims = [Dimension.parse(d.strip()) for d in subset.split(',')] if subset else default
    return build_space({d: table[d] for d in dims}, num_actions)


def load_modulation_space(path: str | Path, num_actions: int) -> ModulationSpace:
    """Reads a YAML mapping ``dimension -> list of numbers``."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f'{path}: cannot read modulation set: {e}') from e
    if not isinstance(raw, dict) or not raw:
        raise ConfigError(f'{path}: expected a mapping of dimension -> list of numbers')
    sets: dict[Dimension, list[float]] = {}
    for key, values in raw.items():
        dimension = Dimension.parse(key)
        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise ConfigError(f'{path}: {key} must be a list of numbers')
        sets[dimension] = [float(v) for v in values]
    return build_space(sets, num_actions)


def resolve_modulation_space(name: str, num_actions: int) -> ModulationSpace:
    if Path(name).suffix in {'.yaml', '.yml'} or Path(name).is_file():
        return load_modulation_space(name, num_actions)
    return named_space(name, num_actions)
