"""Bandits against synthetic non-stationary payoffs."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
import structlog

from nomad_adaptive_exploration.bandit import ArmSelector, make_bandit
from nomad_adaptive_exploration.config import BanditKind, BanditSettings
from nomad_adaptive_exploration.errors import BanditError
from nomad_adaptive_exploration.metrics import mean_stderr

logger = structlog.get_logger(__name__)

BENCHMARK_KINDS = (BanditKind.ADAPTIVE, BanditKind.UCB, BanditKind.THOMPSON, BanditKind.UNIFORM)


class PayoffProblem(Protocol):
    name: str
    num_arms: int

    def means(self, steps: int, rng: np.random.Generator) -> np.ndarray: ...

    def reward(self, mean: float, rng: np.random.Generator) -> float: ...


@dataclass(frozen=True)
class FlippingBernoulli:
    """Two Bernoulli arms that swap success probabilities every ``flip_every`` steps.

    A success pays ``payoff``, so rewards come in episodic-return units rather
    than on the unit scale that UCB's bonus and Thompson's prior are tuned to.
    """

    probabilities: tuple[float, float] = (0.9, 0.1)
    flip_every: int = 300
    payoff: float = 100.0
    name: str = 'flipping-bernoulli'

    def __post_init__(self) -> None:
        if self.payoff <= 0:
            raise BanditError(f'payoff must be positive, got {self.payoff}')

    @property
    def num_arms(self) -> int:
        return len(self.probabilities)

    def means(self, steps: int, rng: np.random.Generator) -> np.ndarray:
        p = self.payoff * np.asarray(self.probabilities)
        phase = (np.arange(steps) // self.flip_every) % 2
        return np.where(phase[:, None] == 0, p, p[::-1])

    def reward(self, mean: float, rng: np.random.Generator) -> float:
        return self.payoff * float(rng.random() < mean / self.payoff)


@dataclass(frozen=True)
class DriftingGaussian:
    """Arm means follow independent Gaussian random walks; rewards add noise."""

    num_arms: int = 5
    drift: float = 0.05
    noise: float = 0.5
    name: str = 'drifting-gaussian'

    def means(self, steps: int, rng: np.random.Generator) -> np.ndarray:
        start = rng.normal(size=self.num_arms)
        walk = rng.normal(scale=self.drift, size=(steps, self.num_arms))
        return start + np.cumsum(walk, axis=0)

    def reward(self, mean: float, rng: np.random.Generator) -> float:
        return float(rng.normal(mean, self.noise))


class BenchmarkResult(NamedTuple):
    kind: str
    mean: float
    stderr: float
    runs: int


def play(
    bandit: ArmSelector,
    problem: PayoffProblem,
    steps: int,
    problem_rng: np.random.Generator,
    bandit_rng: np.random.Generator,
) -> float:
    """Average reward collected by ``bandit`` over ``steps`` pulls."""
    if bandit.num_arms != problem.num_arms:
        raise BanditError(
            f'bandit has {bandit.num_arms} arms, problem has {problem.num_arms}'
        )
    means = problem.means(steps, problem_rng)
    total = 0.0
    for t in range(steps):
        arm = bandit.sample(bandit_rng)
        reward = problem.reward(means[t, arm], problem_rng)
        bandit.update(arm, reward)
        total += reward
    return total / steps


def run_bandit_benchmark(
    problem: PayoffProblem,
    kinds: Iterable[BanditKind] = BENCHMARK_KINDS,
    steps: int = 3000,
    seeds: int = 50,
    settings: BanditSettings | None = None,
    seed: int = 0,
) -> list[BenchmarkResult]:
    """Mean and standard error of the average reward per bandit kind.

    Every kind faces the same payoff sequences: run ``i`` draws the problem
    from a stream seeded by ``(seed, i)``.
    """
    results = []
    for kind in kinds:
        scores = []
        for i in range(seeds):
            bandit = make_bandit(kind, problem.num_arms, settings)
            problem_rng = np.random.default_rng([seed, i, 0])
            bandit_rng = np.random.default_rng([seed, i, 1])
            scores.append(play(bandit, problem, steps, problem_rng, bandit_rng))
        mean, stderr = mean_stderr(scores)
        results.append(BenchmarkResult(kind.value, mean, stderr, seeds))
        logger.info(
            'benchmark_finished',
            problem=problem.name,
            kind=kind.value,
            mean=mean,
            stderr=stderr,
        )
    return results


PROBLEMS = {
    'flipping-bernoulli': FlippingBernoulli,
    'drifting-gaussian': DriftingGaussian,
}
