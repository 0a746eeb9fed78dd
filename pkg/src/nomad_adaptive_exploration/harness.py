"""Actors, a bandit and a learner wired together.

Every episode an actor asks the coordinator for a modulation and the latest
value snapshot, rolls out one episode with that modulation held fixed, and
submits the result. The coordinator owns the bandit, the learner and the
replay: it reports the episode's fitness to the bandit, then hands the
transitions to the learner and runs as many learner batches as the
samples-to-insertion ratio allows.

With one actor, or with ``deterministic`` set, the loop is single-threaded
and actors take turns; otherwise actors are asyncio tasks whose rollouts run
in worker threads and talk to the coordinator through a queue.
"""

from __future__ import annotations

import asyncio
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
import structlog

from nomad_adaptive_exploration.bandit import (
    FactoredBandit,
    FlatSelector,
    Selection,
    make_bandit,
)
from nomad_adaptive_exploration.config import (
    BanditKind,
    ExperimentConfig,
    FitnessKind,
    LearningMode,
)
from nomad_adaptive_exploration.env import (
    GridWorld,
    NonStationaryLPOracle,
    QTable,
    StepRecord,
    TabularMDP,
    TerminationCause,
    binary_lp_proxy,
    exact_lp_oracle,
    expected_return,
    greedy_success,
    lava_suppression_update,
    modulated_policy,
    optimal_q,
    resolve_environment,
    step,
)
from nomad_adaptive_exploration.errors import ConfigError
from nomad_adaptive_exploration.learner import (
    NStepAccumulator,
    QuantileLearner,
    Transition,
)
from nomad_adaptive_exploration.modulation import (
    Modulation,
    ModulationSpace,
    resolve_modulation_space,
)
from nomad_adaptive_exploration.policy import draw, greedy_policy_table, with_repeat

logger = structlog.get_logger(__name__)

# flat arm lists must not depend on the run seed, so fixed-arm indices stay stable
DEDUP_SEED = 20_240_601

RUNLOG_COLUMNS = (
    'episode',
    'env_steps',
    'variant',
    'seed',
    'fitness',
    'eval_return',
    'horizon',
)


class Rollout(NamedTuple):
    steps: list[StepRecord]
    episode_return: float
    length: int
    cause: TerminationCause
    final_state: int


def rollout(
    mdp: TabularMDP,
    values: np.ndarray,
    z: Modulation,
    rng: np.random.Generator,
    max_steps: int = 10_000,
) -> Rollout:
    """One episode under ``z``; the first step has no previous action."""
    base = modulated_policy(values, z)
    state, prev = mdp.start, None
    steps: list[StepRecord] = []
    total = 0.0
    for length in range(1, max_steps + 1):
        action = draw(with_repeat(base[state], z, prev), rng.random())
        result = step(mdp, state, action, rng)
        if result.cause is TerminationCause.LAVA:
            steps.append(StepRecord(state, action, 0.0, state, True))
            return Rollout(steps, total, length, TerminationCause.LAVA, state)
        if result.cause is TerminationCause.TIMEOUT:
            return Rollout(steps, total, length, TerminationCause.TIMEOUT, state)
        steps.append(StepRecord(state, action, result.reward, result.next_state, False))
        total += result.reward
        state, prev = result.next_state, action
        if state == mdp.goal:
            return Rollout(steps, total, length, TerminationCause.GOAL, state)
    return Rollout(steps, total, max_steps, TerminationCause.CAP, state)


def episode_transitions(episode: Rollout, n_step: int) -> list[Transition]:
    """n-step transitions; timeouts and the step cap truncate without a terminal."""
    acc = NStepAccumulator(n_step)
    out = []
    for k, rec in enumerate(episode.steps):
        last = k == len(episode.steps) - 1
        terminated = rec.lava or (last and episode.cause is TerminationCause.GOAL)
        out.extend(acc.push(rec.state, rec.action, rec.reward, rec.next_state, terminated))
    out.extend(acc.flush(episode.final_state, terminal=False))
    return out


@dataclass(frozen=True)
class EpisodeReport:
    episode: int
    actor: int
    modulation: Modulation
    arms: tuple[int, ...]
    episode_return: float
    fitness: float
    length: int
    cause: TerminationCause
    env_steps: int


class RunLogRow(NamedTuple):
    episode: int
    env_steps: int
    fitness: float
    eval_return: float
    horizon: float
    arm_probabilities: tuple[float, ...]


@dataclass
class RunLog:
    variant: str
    seed: int
    arm_labels: list[str]
    rows: list[RunLogRow] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return [*RUNLOG_COLUMNS, *self.arm_labels]

    def column(self, name: str) -> np.ndarray:
        return self.to_frame()[name].to_numpy(dtype=float)

    def to_frame(self) -> pd.DataFrame:
        records = [
            (r.episode, r.env_steps, self.variant, self.seed, r.fitness, r.eval_return,
             r.horizon, *r.arm_probabilities)
            for r in self.rows
        ]
        return pd.DataFrame.from_records(records, columns=self.columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> RunLog:
        labels = list(frame.columns[len(RUNLOG_COLUMNS):])
        variant = str(frame['variant'].iloc[0]) if len(frame) else ''
        seed = int(frame['seed'].iloc[0]) if len(frame) else 0
        rows = [
            RunLogRow(
                int(rec.episode),
                int(rec.env_steps),
                float(rec.fitness),
                float(rec.eval_return),
                float(rec.horizon),
                tuple(float(v) for v in rec[len(RUNLOG_COLUMNS):]),
            )
            for rec in frame.itertuples(index=False)
        ]
        return cls(variant=variant, seed=seed, arm_labels=labels, rows=rows)


def build_selector(
    config: ExperimentConfig, space: ModulationSpace
) -> FlatSelector | FactoredBandit:
    if config.bandit is BanditKind.FACTORED_ADAPTIVE:
        return FactoredBandit(space, settings=config.bandit_settings)
    if space.flat is None:
        space = space.flattened(config.dedup_probe_count, np.random.default_rng(DEDUP_SEED))
    bandit = make_bandit(
        config.bandit, len(space.flat), config.bandit_settings, config.fixed_arm
    )
    return FlatSelector(space.flat, bandit)


class ModulationRequest(NamedTuple):
    actor: int
    reply: asyncio.Future


class EpisodeSubmission(NamedTuple):
    actor: int
    selection: Selection
    values: np.ndarray
    episode: Rollout


class Experiment:
    """The coordinator: owns the bandit, the learner and the run log."""

    def __init__(
        self,
        config: ExperimentConfig,
        world: GridWorld | None = None,
        space: ModulationSpace | None = None,
    ) -> None:
        self.config = config
        self.world = world or resolve_environment(config.environment, config.gamma)
        self.mdp = self.world.mdp
        self.space = space or resolve_modulation_space(
            config.modulation_set, self.mdp.num_actions
        )
        if config.fitness is FitnessKind.BINARY_PROXY and (
            config.learning is not LearningMode.LAVA_SUPPRESSION
        ):
            raise ConfigError("fitness 'binary-proxy' needs learning 'lava-suppression'")
        self.selector = build_selector(config, self.space)

        seeds = np.random.SeedSequence(config.seed).spawn(config.actors + 1)
        self.learner_rng = np.random.default_rng(seeds[0])
        self.actor_rngs = [np.random.default_rng(s) for s in seeds[1:]]

        S, A = self.mdp.num_states, self.mdp.num_actions
        self.learner: QuantileLearner | None = None
        self.q_table: QTable | None = None
        self.lp_oracle: NonStationaryLPOracle | None = None
        self.frozen: np.ndarray | None = None
        if config.learning is LearningMode.QUANTILE:
            self.learner = QuantileLearner(S, A, config.learner, gamma=config.gamma)
        elif config.learning is LearningMode.LAVA_SUPPRESSION:
            self.q_table = QTable.zeros(S, A)
            self.lp_oracle = NonStationaryLPOracle(self.mdp)
        else:
            self.frozen = optimal_q(self.mdp)
        self._oracle_cache: dict[Modulation, float] = {}

        self.episodes_done = 0
        self.episodes_issued = 0
        self.env_steps = 0
        self.insertions = 0
        self.ready_insertions: int | None = None
        self.last_eval = math.nan
        self.reports: list[EpisodeReport] = []
        self.log = RunLog(
            variant=config.variant_label,
            seed=config.seed,
            arm_labels=self.selector.arm_labels,
        )

    @property
    def finished(self) -> bool:
        budget = self.config.max_env_steps
        return self.episodes_issued >= self.config.episodes or (
            budget is not None and self.env_steps >= budget
        )

    def values(self) -> np.ndarray:
        """The value snapshot actors act on."""
        if self.learner is not None:
            return self.learner.snapshot()
        if self.q_table is not None:
            return self.q_table.values
        return self.frozen

    def quota(self, actor: int) -> int:
        """Episodes assigned to ``actor``: every ``actors``-th episode."""
        return len(range(actor, self.config.episodes, self.config.actors))

    def learner_batches_owed(self) -> int:
        """Batches due for the insertions made since the replay first became ready."""
        if self.learner is None or self.ready_insertions is None:
            return 0
        ratio = self.config.samples_to_insertion_ratio
        since_ready = self.insertions - self.ready_insertions
        return math.floor(ratio * since_ready / self.config.learner.batch_size)

    def insert(self, transitions: Sequence[Transition]) -> None:
        """Adds transitions one at a time, running every learner batch that falls due."""
        for transition in transitions:
            self.learner.add([transition])
            self.insertions += 1
            if self.ready_insertions is None and self.learner.ready:
                self.ready_insertions = self.insertions
            while self.learner.batches < self.learner_batches_owed():
                self.learner.step(self.learner_rng)

    def select(self, actor: int) -> Selection:
        self.episodes_issued += 1
        return self.selector.select(self.actor_rngs[actor])

    def play(self, actor: int, selection: Selection, values: np.ndarray) -> Rollout:
        return rollout(
            self.mdp,
            values,
            selection.modulation,
            self.actor_rngs[actor],
            self.config.max_episode_steps,
        )

    def _exact_success(self, values: np.ndarray, z: Modulation) -> float:
        if self.frozen is not None:
            if z not in self._oracle_cache:
                self._oracle_cache[z] = exact_lp_oracle(self.mdp, self.frozen, z)
            return self._oracle_cache[z]
        return exact_lp_oracle(self.mdp, values, z)

    def fitness(
        self, selection: Selection, values: np.ndarray, episode: Rollout
    ) -> tuple[float, bool]:
        """Fitness for the bandit, and whether the episode found new lava."""
        new_lava = False
        if self.q_table is not None:
            self.q_table, new_lava = lava_suppression_update(self.q_table, episode.steps)
        kind = self.config.fitness
        if kind is FitnessKind.RETURN:
            return episode.episode_return, new_lava
        if kind is FitnessKind.NONE:
            return 0.0, new_lava
        if kind is FitnessKind.BINARY_PROXY:
            return binary_lp_proxy(new_lava), new_lava
        if self.lp_oracle is not None:
            return self.lp_oracle.value(QTable(values), selection.modulation), new_lava
        return self._exact_success(values, selection.modulation), new_lava

    def evaluate(self, selection: Selection | None = None) -> float:
        """Exact evaluation of the current greedy policy.

        With frozen optimal values the greedy policy never changes, so the
        executed behaviour policy is evaluated instead.
        """
        if self.frozen is not None:
            if selection is None:
                return math.nan
            return self._exact_success(self.frozen, selection.modulation)
        if self.q_table is not None:
            return greedy_success(self.mdp, self.q_table)
        greedy = greedy_policy_table(self.learner.table, ties='lowest')
        return expected_return(self.mdp, greedy)

    def record_initial(self) -> None:
        self.last_eval = self.evaluate()
        self.log.rows.append(
            RunLogRow(
                0,
                0,
                math.nan,
                self.last_eval,
                self._horizon(),
                tuple(self.selector.arm_probabilities().tolist()),
            )
        )
        logger.info(
            'experiment_started',
            variant=self.log.variant,
            seed=self.config.seed,
            arms=len(self.log.arm_labels),
            initial_eval=self.last_eval,
        )

    def _horizon(self) -> float:
        h = self.selector.horizon
        return math.nan if h is None else float(h)

    def complete(self, submission: EpisodeSubmission) -> EpisodeReport:
        selection, episode = submission.selection, submission.episode
        fitness, new_lava = self.fitness(selection, submission.values, episode)
        self.selector.report(selection, fitness)

        if self.learner is not None:
            self.insert(episode_transitions(episode, self.config.learner.n_step))

        self.episodes_done += 1
        self.env_steps += episode.length
        t = self.episodes_done
        if self.frozen is not None:
            self.last_eval = self.evaluate(selection)
        elif t % self.config.evaluation_period == 0:
            self.last_eval = self.evaluate()
            logger.debug('evaluation', episode=t, eval_return=self.last_eval)

        report = EpisodeReport(
            episode=t,
            actor=submission.actor,
            modulation=selection.modulation,
            arms=selection.arms,
            episode_return=episode.episode_return,
            fitness=fitness,
            length=episode.length,
            cause=episode.cause,
            env_steps=self.env_steps,
        )
        self.reports.append(report)
        self.log.rows.append(
            RunLogRow(
                t,
                self.env_steps,
                fitness,
                self.last_eval,
                self._horizon(),
                tuple(self.selector.arm_probabilities().tolist()),
            )
        )
        logger.debug(
            'episode_reported',
            episode=t,
            actor=submission.actor,
            arms=selection.arms,
            fitness=fitness,
            cause=episode.cause.value,
            new_lava=new_lava,
        )
        return report

    def run_episode(self, actor: int = 0) -> EpisodeReport:
        selection = self.select(actor)
        values = self.values()
        return self.complete(
            EpisodeSubmission(actor, selection, values, self.play(actor, selection, values))
        )

    def _finish(self) -> RunLog:
        logger.info(
            'experiment_finished',
            variant=self.log.variant,
            seed=self.config.seed,
            episodes=self.episodes_done,
            env_steps=self.env_steps,
            learner_batches=self.learner.batches if self.learner else 0,
            final_eval=self.last_eval,
        )
        return self.log

    def run_serial(self) -> RunLog:
        self.record_initial()
        actor = 0
        while not self.finished:
            self.run_episode(actor)
            actor = (actor + 1) % self.config.actors
        return self._finish()

    async def run_concurrent(self) -> RunLog:
        self.record_initial()
        queue: asyncio.Queue = asyncio.Queue()
        loop = asyncio.get_running_loop()

        async def actor_task(actor: int) -> None:
            for _ in range(self.quota(actor)):
                reply = loop.create_future()
                await queue.put(ModulationRequest(actor, reply))
                granted = await reply
                if granted is None:
                    break
                selection, values = granted
                episode = await asyncio.to_thread(self.play, actor, selection, values)
                await queue.put(EpisodeSubmission(actor, selection, values, episode))
            await queue.put(None)

        async def coordinator() -> None:
            running = self.config.actors
            while running:
                message = await queue.get()
                if message is None:
                    running -= 1
                elif isinstance(message, ModulationRequest):
                    if self.finished:
                        message.reply.set_result(None)
                    else:
                        message.reply.set_result(
                            (self.select(message.actor), self.values())
                        )
                else:
                    self.complete(message)

        await asyncio.gather(
            coordinator(), *(actor_task(i) for i in range(self.config.actors))
        )
        return self._finish()


def run_experiment(
    config: ExperimentConfig,
    world: GridWorld | None = None,
    space: ModulationSpace | None = None,
) -> RunLog:
    experiment = Experiment(config, world, space)
    if config.actors == 1 or config.deterministic:
        return experiment.run_serial()
    return asyncio.run(experiment.run_concurrent())


async def run_experiment_async(
    config: ExperimentConfig,
    world: GridWorld | None = None,
    space: ModulationSpace | None = None,
) -> RunLog:
    experiment = Experiment(config, world, space)
    if config.actors == 1 or config.deterministic:
        return experiment.run_serial()
    return await experiment.run_concurrent()


def run_lavaworld_stationary(config: ExperimentConfig) -> RunLog:
    """Optimal values held fixed; only the behaviour modulation varies."""
    return run_experiment(
        config.updated(environment='lavaworld', learning=LearningMode.FROZEN_OPTIMAL)
    )


def run_lavaworld_nonstationary(config: ExperimentConfig) -> RunLog:
    """Values start at zero and learn by lava suppression after every episode."""
    return run_experiment(
        config.updated(
            environment='lavaworld',
            learning=LearningMode.LAVA_SUPPRESSION,
            evaluation_period=1,
        )
    )


def flat_modulations(config: ExperimentConfig) -> tuple[Modulation, ...]:
    world = resolve_environment(config.environment, config.gamma)
    space = resolve_modulation_space(config.modulation_set, world.mdp.num_actions)
    return space.flattened(config.dedup_probe_count, np.random.default_rng(DEDUP_SEED)).flat


def best_fixed_arm(config: ExperimentConfig) -> int:
    """The flat arm whose behaviour policy succeeds most often under optimal values."""
    world = resolve_environment(config.environment, config.gamma)
    q_star = optimal_q(world.mdp)
    scores = [exact_lp_oracle(world.mdp, q_star, z) for z in flat_modulations(config)]
    return int(np.argmax(scores))


def fixed_arm_variant(base: ExperimentConfig, arm: int) -> ExperimentConfig:
    return base.updated(
        bandit=BanditKind.FIXED_ARM,
        fixed_arm=arm,
        fitness=FitnessKind.NONE,
        variant=f'fixed-{arm}',
    )


def _proxy_bandit(base: ExperimentConfig) -> BanditKind:
    if base.bandit is BanditKind.FIXED_ARM:
        return BanditKind.ADAPTIVE
    return base.bandit


def stationary_variants(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """LavaWorld presets with optimal values; ``base.bandit`` drives the proxy variants."""
    proxy_bandit = _proxy_bandit(base)
    base = base.updated(
        environment='lavaworld',
        modulation_set='lavaworld',
        learning=LearningMode.FROZEN_OPTIMAL,
    )
    best = best_fixed_arm(base)
    return {
        'best-fixed': fixed_arm_variant(base, best).updated(variant='best-fixed'),
        'oracle': base.updated(
            bandit=BanditKind.ADAPTIVE, fitness=FitnessKind.ORACLE, variant='oracle'
        ),
        'oracle-factored': base.updated(
            bandit=BanditKind.FACTORED_ADAPTIVE,
            fitness=FitnessKind.ORACLE,
            variant='oracle-factored',
        ),
        'bandit': base.updated(
            bandit=proxy_bandit, fitness=FitnessKind.RETURN, variant='bandit'
        ),
        'no-proxy': base.updated(
            bandit=proxy_bandit, fitness=FitnessKind.NONE, variant='no-proxy'
        ),
        'uniform': base.updated(
            bandit=BanditKind.UNIFORM, fitness=FitnessKind.NONE, variant='uniform'
        ),
    }


def nonstationary_variants(
    base: ExperimentConfig, fixed_arms: Sequence[int] | None = None
) -> dict[str, ExperimentConfig]:
    """Adaptive variants plus one fixed-arm variant per flat arm.

    The best fixed arm is chosen in hindsight from the fixed-arm results.
    """
    base = base.updated(
        environment='lavaworld',
        modulation_set='lavaworld',
        learning=LearningMode.LAVA_SUPPRESSION,
        evaluation_period=1,
    )
    if fixed_arms is None:
        fixed_arms = range(len(flat_modulations(base)))
    variants = {
        'oracle': base.updated(
            bandit=BanditKind.ADAPTIVE, fitness=FitnessKind.ORACLE, variant='oracle'
        ),
        'bandit': base.updated(
            bandit=_proxy_bandit(base),
            fitness=FitnessKind.BINARY_PROXY,
            variant='bandit',
        ),
        'uniform': base.updated(
            bandit=BanditKind.UNIFORM, fitness=FitnessKind.NONE, variant='uniform'
        ),
    }
    for arm in fixed_arms:
        variants[f'fixed-{arm}'] = fixed_arm_variant(base, arm)
    return variants


def _run_one(config: ExperimentConfig) -> RunLog:
    return run_experiment(config)


def run_seeds(
    config: ExperimentConfig,
    seeds: Sequence[int],
    workers: int = 1,
    runner: Callable[[ExperimentConfig], RunLog] = _run_one,
) -> list[RunLog]:
    """Runs one experiment per seed; results come back in seed order."""
    configs = [config.updated(seed=s) for s in seeds]
    if workers <= 1 or config.deterministic or len(configs) < 2:
        logs = [runner(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(runner, configs))
    return sorted(logs, key=lambda log: (log.seed, log.variant))
