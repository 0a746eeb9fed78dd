"""Tabular quantile-regression Q-learning with n-step double-Q targets.

The online table has shape ``(S, A, n)``; its quantiles sit at the midpoints
``nu_j = (2j + 1) / 2n``. Transitions are replayed with proportional
prioritization on the absolute TD error.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import structlog
from pydantic import BaseModel, ValidationError

from nomad_adaptive_exploration.config import LearnerSettings
from nomad_adaptive_exploration.errors import LearnerError
from nomad_adaptive_exploration.policy import quantile_midpoints

logger = structlog.get_logger(__name__)


class Transition(NamedTuple):
    state: int
    action: int
    rewards: tuple[float, ...]
    bootstrap_state: int
    terminal: bool


class NStepAccumulator:
    """Turns an episode's step stream into n-step transitions."""

    def __init__(self, n: int) -> None:
        if n < 1:
            raise LearnerError(f'n-step parameter must be >= 1, got {n}')
        self.n = n
        self._pending: deque[tuple[int, int, float]] = deque()

    def __len__(self) -> int:
        return len(self._pending)

    def push(
        self, state: int, action: int, reward: float, next_state: int, terminated: bool
    ) -> list[Transition]:
        self._pending.append((state, action, float(reward)))
        if terminated:
            return self.flush(next_state, terminal=True)
        if len(self._pending) == self.n:
            return [self._pop(next_state, terminal=False)]
        return []

    def flush(self, bootstrap_state: int, terminal: bool = False) -> list[Transition]:
        """Emits every pending transition, bootstrapping from ``bootstrap_state``.

        A non-terminal flush is a truncation: the tail still bootstraps.
        """
        out = []
        while self._pending:
            out.append(self._pop(bootstrap_state, terminal))
        return out

    def _pop(self, bootstrap_state: int, terminal: bool) -> Transition:
        rewards = tuple(r for _, _, r in self._pending)
        state, action, _ = self._pending.popleft()
        return Transition(state, action, rewards, bootstrap_state, terminal)


def discounted_sum(rewards: Sequence[float], gamma: float) -> float:
    return float(sum(r * gamma**i for i, r in enumerate(rewards)))


def td_target(
    online: np.ndarray,
    transition: Transition,
    gamma: float,
    target: np.ndarray | None = None,
) -> np.ndarray:
    """n target values: the n-step reward sum plus the bootstrapped quantiles.

    The bootstrap action is greedy under ``online`` and evaluated under
    ``target`` (double Q); terminal transitions use the reward sum only.
    """
    n = online.shape[-1]
    if len(transition.rewards) < 1:
        raise LearnerError('transition carries no rewards')
    ret = discounted_sum(transition.rewards, gamma)
    if transition.terminal:
        return np.full(n, ret)
    target = online if target is None else target
    s = transition.bootstrap_state
    best = int(np.argmax(online[s].mean(axis=-1)))
    return ret + gamma ** len(transition.rewards) * target[s, best]


def _huber(u: np.ndarray, kappa: float) -> np.ndarray:
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u**2, kappa * (a - 0.5 * kappa))


def _check(q: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if q.ndim != 1 or targets.ndim != 1 or not q.size or not targets.size:
        raise LearnerError('quantiles and targets must be non-empty vectors')
    if not np.all(np.isfinite(targets)):
        raise LearnerError('targets must be finite')
    return q, targets


def quantile_huber_loss(q, targets, kappa: float = 1.0) -> float:
    """(1/m) sum_j sum_k |nu_j - 1{T_k < q_j}| Huber(T_k - q_j)."""
    q, targets = _check(q, targets)
    u = targets[None, :] - q[:, None]
    nu = quantile_midpoints(q.size)[:, None]
    weight = np.abs(nu - (u < 0))
    return float(np.sum(weight * _huber(u, kappa)) / targets.size)


def quantile_huber_gradient(q, targets, kappa: float = 1.0) -> np.ndarray:
    q, targets = _check(q, targets)
    u = targets[None, :] - q[:, None]
    nu = quantile_midpoints(q.size)[:, None]
    weight = np.abs(nu - (u < 0))
    return -np.sum(weight * np.clip(u, -kappa, kappa), axis=1) / targets.size


def quantile_huber_update(
    q, targets, learning_rate: float, kappa: float = 1.0, weight: float = 1.0
) -> tuple[np.ndarray, float]:
    """One gradient step on the quantile Huber loss.

    Returns the updated quantiles and the mean absolute TD error measured
    before the step.
    """
    q, targets = _check(q, targets)
    grad = quantile_huber_gradient(q, targets, kappa)
    td_error = float(np.mean(np.abs(targets[None, :] - q[:, None])))
    return q - learning_rate * weight * grad, td_error


class ReplayBatch(NamedTuple):
    indices: np.ndarray
    transitions: list[Transition]
    weights: np.ndarray


class PrioritizedReplay:
    """Ring buffer with proportional prioritization.

    Priorities are stored raw; sampling probabilities are ``prio ** alpha``
    normalized, and importance weights ``(N p) ** -beta`` are normalized by
    the batch maximum.
    """

    def __init__(
        self,
        capacity: int,
        alpha: float = 0.6,
        beta: float = 0.3,
        priority_floor: float = 1e-6,
    ) -> None:
        if capacity < 1:
            raise LearnerError(f'replay capacity must be >= 1, got {capacity}')
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.priority_floor = priority_floor
        self._data: list[Transition | None] = [None] * capacity
        self._priorities = np.zeros(capacity)
        self._next = 0
        self._size = 0
        self.max_priority = 1.0
        self.insertions = 0

    def __len__(self) -> int:
        return self._size

    @property
    def priorities(self) -> np.ndarray:
        return self._priorities[: self._size].copy()

    def add(self, transition: Transition, priority: float | None = None) -> None:
        if priority is None:
            priority = self.max_priority if self._size else 1.0
        if not priority > 0:
            raise LearnerError(f'priority must be > 0, got {priority}')
        self._data[self._next] = transition
        self._priorities[self._next] = priority
        self.max_priority = max(self.max_priority, priority)
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.insertions += 1

    def probabilities(self) -> np.ndarray:
        if not self._size:
            raise LearnerError('replay is empty')
        scaled = self._priorities[: self._size] ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        p = self.probabilities()
        indices = rng.choice(self._size, size=batch_size, p=p)
        weights = (self._size * p[indices]) ** -self.beta
        weights = weights / weights.max()
        return ReplayBatch(indices, [self._data[i] for i in indices], weights)

    def update_priorities(self, indices: Sequence[int], priorities: Sequence[float]) -> None:
        for i, prio in zip(indices, priorities):
            prio = max(float(prio), self.priority_floor)
            self._priorities[i] = prio
            self.max_priority = max(self.max_priority, prio)


class LearnerCheckpoint(BaseModel):
    num_states: int
    num_actions: int
    n_quantiles: int
    batches: int
    table: list[list[list[float]]]
    target: list[list[list[float]]]
    priorities: list[float]
    max_priority: float


class QuantileLearner:
    def __init__(
        self,
        num_states: int,
        num_actions: int,
        settings: LearnerSettings | None = None,
        gamma: float = 0.99,
    ) -> None:
        self.settings = settings or LearnerSettings()
        self.gamma = gamma
        shape = (num_states, num_actions, self.settings.n_quantiles)
        self.table = np.zeros(shape)
        self.target = np.zeros(shape)
        self.replay = PrioritizedReplay(
            self.settings.replay_capacity,
            alpha=self.settings.alpha,
            beta=self.settings.beta,
            priority_floor=self.settings.priority_floor,
        )
        self.batches = 0

    @property
    def ready(self) -> bool:
        return len(self.replay) >= self.settings.min_replay

    def snapshot(self) -> np.ndarray:
        """A read-only copy of the online table for actors."""
        view = self.table.copy()
        view.setflags(write=False)
        return view

    def add(self, transitions: Sequence[Transition]) -> None:
        for transition in transitions:
            self.replay.add(transition)

    def td_target(self, transition: Transition) -> np.ndarray:
        return td_target(self.table, transition, self.gamma, self.target)

    def step(self, rng: np.random.Generator) -> float:
        """One learner batch; returns the batch's mean TD error."""
        if not len(self.replay):
            raise LearnerError('cannot learn from an empty replay')
        s = self.settings
        batch = self.replay.sample(s.batch_size, rng)
        errors = np.empty(len(batch.transitions))
        for k, (tr, w) in enumerate(zip(batch.transitions, batch.weights)):
            targets = self.td_target(tr)
            updated, errors[k] = quantile_huber_update(
                self.table[tr.state, tr.action], targets, s.learning_rate, s.huber_kappa, w
            )
            self.table[tr.state, tr.action] = updated
        self.replay.update_priorities(batch.indices, errors + s.priority_floor)
        self.batches += 1
        if self.batches % s.target_sync_period == 0:
            self.target = self.table.copy()
            logger.debug('target_synced', batches=self.batches)
        return float(errors.mean())

    def checkpoint(self) -> str:
        S, A, n = self.table.shape
        return LearnerCheckpoint(
            num_states=S,
            num_actions=A,
            n_quantiles=n,
            batches=self.batches,
            table=self.table.tolist(),
            target=self.target.tolist(),
            priorities=self.replay.priorities.tolist(),
            max_priority=self.replay.max_priority,
        ).model_dump_json()

    def restore(self, text: str) -> None:
        """Loads tables from a checkpoint; replayed transitions are not restored."""
        try:
            ckpt = LearnerCheckpoint.model_validate_json(text)
        except ValidationError as e:
            raise LearnerError(f'invalid learner checkpoint: {e}') from e
        shape = (ckpt.num_states, ckpt.num_actions, ckpt.n_quantiles)
        table = np.asarray(ckpt.table, dtype=float)
        target = np.asarray(ckpt.target, dtype=float)
        if table.shape != shape or target.shape != shape or shape != self.table.shape:
            raise LearnerError(f'checkpoint shape {shape} does not match {self.table.shape}')
        self.table = table
        self.target = target
        self.batches = ckpt.batches
        self.replay.max_priority = ckpt.max_priority
