"""Arm selectors over modulations.

:class:`NonStationaryBandit` samples an arm in proportion to how often it
recently produced fitness at or above the window mean, with a window length
(the horizon) that adapts online to how well a shorter window would have
predicted the newest fitness. :class:`FactoredBandit` runs one such bandit
per modulation dimension. UCB, Thompson sampling, uniform and fixed-arm
selectors are the stationary baselines.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple, Protocol

import numpy as np
import structlog
from pydantic import BaseModel, ValidationError

from nomad_adaptive_exploration.config import BanditKind, BanditSettings
from nomad_adaptive_exploration.errors import BanditError
from nomad_adaptive_exploration.policy import draw

if TYPE_CHECKING:
    from nomad_adaptive_exploration.modulation import Modulation, ModulationSpace

logger = structlog.get_logger(__name__)

PRIOR_PREFERENCE = 0.5
THOMPSON_PROBE_DRAWS = 2000


class FitnessRecord(NamedTuple):
    time: int
    arm: int
    fitness: float


class ArmSelector(Protocol):
    num_arms: int

    @property
    def horizon(self) -> float | None: ...

    def sample(self, rng: np.random.Generator) -> int: ...

    def update(self, arm: int, fitness: float) -> None: ...

    def probabilities(self) -> np.ndarray: ...


def _check_arm(arm: int, num_arms: int) -> None:
    if not 0 <= arm < num_arms:
        raise BanditError(f'arm {arm} out of range for {num_arms} arms')


def _check_fitness(fitness: float) -> float:
    fitness = float(fitness)
    if not math.isfinite(fitness):
        raise BanditError(f'fitness must be finite, got {fitness}')
    return fitness


class BanditSnapshot(BaseModel):
    num_arms: int
    horizon: float
    max_horizon: float
    eta: float
    history_cap: int
    history_multiple: int
    time: int
    history: list[tuple[int, int, float]]


class NonStationaryBandit:
    def __init__(
        self,
        num_arms: int,
        eta: float = 0.02,
        history_cap: int = 100_000,
        history_multiple: int = 10,
    ) -> None:
        if num_arms < 1:
            raise BanditError(f'need at least one arm, got {num_arms}')
        self.num_arms = num_arms
        self.eta = eta
        self.history_cap = history_cap
        self.history_multiple = history_multiple
        self.min_horizon = 2 * num_arms
        self._horizon = float(self.min_horizon)
        self._max_horizon = self._horizon
        self._time = 0
        self._times: list[int] = []
        self._arms: list[int] = []
        self._fitness: list[float] = []

    @classmethod
    def from_settings(cls, num_arms: int, settings: BanditSettings) -> NonStationaryBandit:
        return cls(
            num_arms,
            eta=settings.eta,
            history_cap=settings.history_cap,
            history_multiple=settings.history_multiple,
        )

    @property
    def horizon(self) -> float:
        return self._horizon

    @horizon.setter
    def horizon(self, value: float) -> None:
        self._horizon = float(value)
        self._max_horizon = max(self._max_horizon, self._horizon)

    @property
    def history(self) -> list[FitnessRecord]:
        return [
            FitnessRecord(t, a, f)
            for t, a, f in zip(self._times, self._arms, self._fitness)
        ]

    @property
    def capacity(self) -> int:
        h = math.ceil(self._horizon)
        return max(h, min(self.history_cap, self.history_multiple * math.ceil(self._max_horizon)))

    def _window(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        size = min(int(h), len(self._arms))
        if size <= 0:
            return np.empty(0, dtype=int), np.empty(0)
        return (
            np.asarray(self._arms[-size:], dtype=int),
            np.asarray(self._fitness[-size:], dtype=float),
        )

    def window_mean(self) -> float:
        """Mean fitness over the current window; 0 when there is no history."""
        _, fitness = self._window(self._horizon)
        return float(fitness.mean()) if fitness.size else 0.0

    def preferences(self) -> np.ndarray:
        arms, fitness = self._window(self._horizon)
        if not fitness.size:
            return np.full(self.num_arms, PRIOR_PREFERENCE)
        success = fitness >= fitness.mean()
        pulls = np.bincount(arms, minlength=self.num_arms)
        wins = np.bincount(arms, weights=success, minlength=self.num_arms)
        return (PRIOR_PREFERENCE + wins) / (1.0 + pulls)

    def preference(self, arm: int) -> float:
        _check_arm(arm, self.num_arms)
        return float(self.preferences()[arm])

    def probabilities(self) -> np.ndarray:
        mu = self.preferences()
        return mu / mu.sum()

    def sample(self, rng: np.random.Generator) -> int:
        return draw(self.probabilities(), rng.random())

    def shrink_candidate(self) -> float:
        return max(float(self.min_horizon), (1.0 - self.eta) * self._horizon)

    def regression_loss(self, h_candidate: float, arm: int, fitness: float) -> float:
        """Squared error of the window-smoothed estimate of ``arm``'s fitness.

        The window holds the most recent ``h_candidate`` records, not counting
        the new one.
        """
        if h_candidate < 1:
            raise BanditError(f'candidate horizon must be >= 1, got {h_candidate}')
        arms, window = self._window(h_candidate)
        m = window.mean() if window.size else 0.0
        mine = arms == arm
        estimate = (m + window[mine].sum()) / (1.0 + mine.sum())
        return 0.5 * (fitness - estimate) ** 2

    def update(self, arm: int, fitness: float) -> None:
        _check_arm(arm, self.num_arms)
        fitness = _check_fitness(fitness)

        h = self._horizon
        h_short = self.shrink_candidate()
        loss = self.regression_loss(h, arm, fitness)
        loss_short = self.regression_loss(h_short, arm, fitness)
        if loss > loss_short:
            reduction = (loss - loss_short) / loss
            self.horizon = max(float(self.min_horizon), (1.0 - self.eta * reduction) * h)
            logger.debug('horizon_shrunk', before=h, after=self._horizon, loss=loss)
        else:
            self.horizon = h + 1.0

        self._times.append(self._time)
        self._arms.append(arm)
        self._fitness.append(fitness)
        self._time += 1
        self._trim()

    def _trim(self) -> None:
        capacity = self.capacity
        # trim in chunks so appends stay amortized O(1)
        if len(self._arms) > capacity + max(1, capacity // 4):
            excess = len(self._arms) - capacity
            del self._times[:excess]
            del self._arms[:excess]
            del self._fitness[:excess]

    def snapshot(self) -> str:
        return BanditSnapshot(
            num_arms=self.num_arms,
            horizon=self._horizon,
            max_horizon=self._max_horizon,
            eta=self.eta,
            history_cap=self.history_cap,
            history_multiple=self.history_multiple,
            time=self._time,
            history=[tuple(r) for r in self.history],
        ).model_dump_json(indent=2)

    @classmethod
    def from_snapshot(cls, text: str) -> NonStationaryBandit:
        try:
            snap = BanditSnapshot.model_validate_json(text)
        except ValidationError as e:
            raise BanditError(f'invalid bandit snapshot: {e}') from e
        bandit = cls(
            snap.num_arms,
            eta=snap.eta,
            history_cap=snap.history_cap,
            history_multiple=snap.history_multiple,
        )
        bandit._horizon = snap.horizon
        bandit._max_horizon = snap.max_horizon
        bandit._time = snap.time
        for t, a, f in snap.history:
            _check_arm(a, bandit.num_arms)
            bandit._times.append(t)
            bandit._arms.append(a)
            bandit._fitness.append(f)
        return bandit


class UniformBandit:
    horizon = None

    def __init__(self, num_arms: int) -> None:
        if num_arms < 1:
            raise BanditError(f'need at least one arm, got {num_arms}')
        self.num_arms = num_arms

    def probabilities(self) -> np.ndarray:
        return np.full(self.num_arms, 1.0 / self.num_arms)

    def sample(self, rng: np.random.Generator) -> int:
        return draw(self.probabilities(), rng.random())

    def update(self, arm: int, fitness: float) -> None:
        _check_arm(arm, self.num_arms)
        _check_fitness(fitness)


class FixedArmBandit:
    horizon = None

    def __init__(self, num_arms: int, arm: int) -> None:
        _check_arm(arm, num_arms)
        self.num_arms = num_arms
        self.arm = arm

    def probabilities(self) -> np.ndarray:
        p = np.zeros(self.num_arms)
        p[self.arm] = 1.0
        return p

    def sample(self, rng: np.random.Generator) -> int:
        return self.arm

    def update(self, arm: int, fitness: float) -> None:
        _check_fitness(fitness)


class UCBBandit:
    """UCB1 with a configurable exploration coefficient ``c``."""

    horizon = None

    def __init__(self, num_arms: int, c: float = 1.0) -> None:
        if num_arms < 1:
            raise BanditError(f'need at least one arm, got {num_arms}')
        self.num_arms = num_arms
        self.c = c
        self.counts = np.zeros(num_arms, dtype=int)
        self.sums = np.zeros(num_arms)

    @property
    def t(self) -> int:
        return int(self.counts.sum())

    def scores(self) -> np.ndarray:
        if np.any(self.counts == 0):
            return np.where(self.counts == 0, np.inf, -np.inf)
        means = self.sums / self.counts
        return means + self.c * np.sqrt(math.log(self.t) / self.counts)

    def sample(self, rng: np.random.Generator) -> int:
        return int(np.argmax(self.scores()))

    def probabilities(self) -> np.ndarray:
        p = np.zeros(self.num_arms)
        p[int(np.argmax(self.scores()))] = 1.0
        return p

    def update(self, arm: int, fitness: float) -> None:
        _check_arm(arm, self.num_arms)
        self.counts[arm] += 1
        self.sums[arm] += _check_fitness(fitness)


class ThompsonBandit:
    """Gaussian Thompson sampling with a known-variance model.

    The observation variance is the running variance of all fitness values
    seen so far (Welford), floored; until two values are seen the prior
    variance stands in.
    """

    horizon = None

    def __init__(
        self,
        num_arms: int,
        prior_mean: float = 0.0,
        prior_variance: float = 1.0,
        variance_floor: float = 1e-6,
        probe_seed: int = 0,
    ) -> None:
        if num_arms < 1:
            raise BanditError(f'need at least one arm, got {num_arms}')
        self.num_arms = num_arms
        self.prior_mean = prior_mean
        self.prior_variance = prior_variance
        self.variance_floor = variance_floor
        self.probe_seed = probe_seed
        self.counts = np.zeros(num_arms, dtype=int)
        self.sums = np.zeros(num_arms)
        self._n = 0
        self._mean = 0.0
        self._m2 = 0.0

    @property
    def observation_variance(self) -> float:
        if self._n < 2:
            return self.prior_variance
        return max(self.variance_floor, self._m2 / (self._n - 1))

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-arm posterior mean and standard deviation."""
        var = self.observation_variance
        precision = 1.0 / self.prior_variance + self.counts / var
        mean = (self.prior_mean / self.prior_variance + self.sums / var) / precision
        return mean, 1.0 / np.sqrt(precision)

    def sample(self, rng: np.random.Generator) -> int:
        mean, std = self.posterior()
        return int(np.argmax(rng.normal(mean, std)))

    def probabilities(self) -> np.ndarray:
        mean, std = self.posterior()
        probe = np.random.default_rng(self.probe_seed)
        draws = probe.normal(mean, std, size=(THOMPSON_PROBE_DRAWS, self.num_arms))
        wins = np.bincount(np.argmax(draws, axis=1), minlength=self.num_arms)
        return wins / THOMPSON_PROBE_DRAWS

    def update(self, arm: int, fitness: float) -> None:
        _check_arm(arm, self.num_arms)
        fitness = _check_fitness(fitness)
        self.counts[arm] += 1
        self.sums[arm] += fitness
        self._n += 1
        delta = fitness - self._mean
        self._mean += delta / self._n
        self._m2 += delta * (fitness - self._mean)


def make_bandit(
    kind: BanditKind,
    num_arms: int,
    settings: BanditSettings | None = None,
    fixed_arm: int | None = None,
) -> ArmSelector:
    settings = settings or BanditSettings()
    if kind in (BanditKind.ADAPTIVE, BanditKind.FACTORED_ADAPTIVE):
        return NonStationaryBandit.from_settings(num_arms, settings)
    if kind is BanditKind.UNIFORM:
        return UniformBandit(num_arms)
    if kind is BanditKind.UCB:
        return UCBBandit(num_arms, c=settings.ucb_c)
    if kind is BanditKind.THOMPSON:
        return ThompsonBandit(
            num_arms,
            prior_mean=settings.thompson_prior_mean,
            prior_variance=settings.thompson_prior_variance,
            variance_floor=settings.thompson_variance_floor,
        )
    if kind is BanditKind.FIXED_ARM:
        if fixed_arm is None:
            raise BanditError("bandit 'fixed-arm' needs an arm index")
        return FixedArmBandit(num_arms, fixed_arm)
    raise BanditError(f'unknown bandit kind {kind!r}')


@dataclass(frozen=True)
class Selection:
    """A sampled modulation and the arm indices that produced it.

    Flat selectors use a single index into their modulation list; factored
    selectors use one index per dimension.
    """

    modulation: Modulation
    arms: tuple[int, ...]


class FlatSelector:
    def __init__(self, modulations: Sequence[Modulation], bandit: ArmSelector) -> None:
        if len(modulations) != bandit.num_arms:
            raise BanditError(
                f'{len(modulations)} modulations for a {bandit.num_arms}-armed bandit'
            )
        self.modulations = tuple(modulations)
        self.bandit = bandit

    @property
    def arm_labels(self) -> list[str]:
        return [z.label() for z in self.modulations]

    @property
    def horizon(self) -> float | None:
        return self.bandit.horizon

    def select(self, rng: np.random.Generator) -> Selection:
        arm = self.bandit.sample(rng)
        return Selection(self.modulations[arm], (arm,))

    def report(self, selection: Selection, fitness: float) -> None:
        (arm,) = selection.arms
        self.bandit.update(arm, fitness)

    def arm_probabilities(self) -> np.ndarray:
        return self.bandit.probabilities()


class FactoredBandit:
    """One sub-bandit per modulation dimension, each with its own horizon."""

    def __init__(
        self,
        space: ModulationSpace,
        sub_bandits: Sequence[ArmSelector] | None = None,
        settings: BanditSettings | None = None,
    ) -> None:
        settings = settings or BanditSettings()
        if sub_bandits is None:
            sub_bandits = [
                NonStationaryBandit.from_settings(len(c), settings) for c in space.classes
            ]
        if len(sub_bandits) != len(space.classes):
            raise BanditError(
                f'{len(sub_bandits)} sub-bandits for {len(space.classes)} dimensions'
            )
        for bandit, cls in zip(sub_bandits, space.classes):
            if bandit.num_arms != len(cls):
                raise BanditError(
                    f'{cls.dimension.value}: sub-bandit has {bandit.num_arms} arms, '
                    f'class has {len(cls)}'
                )
        self.space = space
        self.sub_bandits = tuple(sub_bandits)

    @property
    def num_modeled_arms(self) -> int:
        return sum(b.num_arms for b in self.sub_bandits)

    @property
    def arm_labels(self) -> list[str]:
        return [label for cls in self.space.classes for label in cls.labels()]

    @property
    def horizons(self) -> list[float | None]:
        return [b.horizon for b in self.sub_bandits]

    @property
    def horizon(self) -> float | None:
        values = [h for h in self.horizons if h is not None]
        return float(np.mean(values)) if values else None

    def sample_arms(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(b.sample(rng) for b in self.sub_bandits)

    def sample(self, rng: np.random.Generator) -> Modulation:
        return self.space.compose(self.sample_arms(rng))

    def select(self, rng: np.random.Generator) -> Selection:
        arms = self.sample_arms(rng)
        return Selection(self.space.compose(arms), arms)

    def update(self, arms: Sequence[int], fitness: float) -> None:
        """Every sub-bandit receives the same scalar fitness."""
        if len(arms) != len(self.sub_bandits):
            raise BanditError(
                f'expected {len(self.sub_bandits)} arm indices, got {len(arms)}'
            )
        for bandit, arm in zip(self.sub_bandits, arms):
            bandit.update(arm, fitness)

    def report(self, selection: Selection, fitness: float) -> None:
        self.update(selection.arms, fitness)

    def arm_probabilities(self) -> np.ndarray:
        return np.concatenate([b.probabilities() for b in self.sub_bandits])
