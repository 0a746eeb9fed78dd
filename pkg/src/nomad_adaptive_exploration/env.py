"""Tabular MDPs with stochastic continuation, LavaWorld and exact evaluation.

Dynamics of one step from state ``s`` with action ``a``:

1. if ``(s, a)`` leads into lava the episode ends with reward 0,
2. otherwise the episode continues with probability ``gamma`` (else it ends
   by timeout without moving),
3. the agent moves to ``next_state[s, a]`` and collects ``reward[s, a]``.

The goal is absorbing; episodes end as soon as it is entered. All exact
quantities below are solutions of linear systems over this chain, computed
the way committors and first-passage times are (``scipy.linalg.solve`` with
one boundary row per absorbing state).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import structlog
from scipy import linalg

from nomad_adaptive_exploration.errors import LayoutError, MDPError
from nomad_adaptive_exploration.policy import (
    DISTRIBUTION_TOLERANCE,
    base_policy_table,
    greedy_policy_table,
)

if TYPE_CHECKING:
    from nomad_adaptive_exploration.modulation import Modulation

logger = structlog.get_logger(__name__)

LAVAWORLD_STATES = 96
SUPPRESSION_STEP = 0.1
RESIDUAL_TOLERANCE = 1e-10

LAVA = '#'
FLOOR = '.'
START = 'S'
GOAL = 'G'

# up, right, down, left
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


class TerminationCause(str, Enum):
    GOAL = 'goal'
    LAVA = 'lava'
    TIMEOUT = 'timeout'
    CAP = 'cap'


@dataclass(frozen=True, eq=False)
class TabularMDP:
    next_state: np.ndarray
    reward: np.ndarray
    lava: np.ndarray
    start: int
    goal: int
    gamma: float = 0.99

    def __post_init__(self) -> None:
        next_state = np.asarray(self.next_state, dtype=int)
        reward = np.asarray(self.reward, dtype=float)
        lava = np.asarray(self.lava, dtype=bool)
        if next_state.ndim != 2 or next_state.size == 0:
            raise MDPError(f'transitions must be a (states, actions) array, got {next_state.shape}')
        if reward.shape != next_state.shape or lava.shape != next_state.shape:
            raise MDPError('reward, lava and transition arrays must share one shape')
        num_states = next_state.shape[0]
        if np.any(next_state < 0) or np.any(next_state >= num_states):
            raise MDPError('transition leads outside the state space')
        if not np.all(np.isfinite(reward)):
            raise MDPError('rewards must be finite')
        for name, s in (('start', self.start), ('goal', self.goal)):
            if not 0 <= s < num_states:
                raise MDPError(f'{name} state {s} out of range')
        if np.any(next_state[self.goal] != self.goal) or np.any(lava[self.goal]):
            raise MDPError('goal state must be absorbing')
        if not 0 < self.gamma <= 1:
            raise MDPError(f'gamma must lie in (0, 1], got {self.gamma}')
        for arr in (next_state, reward, lava):
            arr.setflags(write=False)
        object.__setattr__(self, 'next_state', next_state)
        object.__setattr__(self, 'reward', reward)
        object.__setattr__(self, 'lava', lava)

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[1]

    def with_gamma(self, gamma: float) -> TabularMDP:
        return replace(self, gamma=gamma)

    def check(self, state: int, action: int) -> None:
        if not 0 <= state < self.num_states:
            raise MDPError(f'state {state} out of range for {self.num_states} states')
        if not 0 <= action < self.num_actions:
            raise MDPError(f'action {action} out of range for {self.num_actions} actions')


@dataclass(frozen=True, eq=False)
class GridWorld:
    """An ASCII grid and the MDP derived from it."""

    layout: tuple[str, ...]
    cells: tuple[tuple[int, int], ...]
    mdp: TabularMDP = field(repr=False)

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    def state_of(self, row: int, col: int) -> int:
        try:
            return self.cells.index((row, col))
        except ValueError:
            raise LayoutError(f'cell ({row}, {col}) is not a floor cell') from None


def parse_grid(text: str, gamma: float = 0.99) -> GridWorld:
    """Builds a grid MDP from a map using ``#``, ``.``, ``S`` and ``G``.

    Every non-lava cell is a state, numbered row-major. Moving into ``#`` or
    off the map is a lava transition.
    """
    layout = tuple(line.rstrip() for line in text.splitlines() if line.strip())
    if not layout:
        raise LayoutError('empty map')
    width = len(layout[0])
    if any(len(line) != width for line in layout):
        raise LayoutError('map rows must all have the same width')
    unknown = set(''.join(layout)) - {LAVA, FLOOR, START, GOAL}
    if unknown:
        raise LayoutError(f'unknown map characters: {"".join(sorted(unknown))}')
    text_cells = ''.join(layout)
    if text_cells.count(START) != 1 or text_cells.count(GOAL) != 1:
        raise LayoutError('map needs exactly one start and one goal')

    cells = tuple(
        (r, c) for r, line in enumerate(layout) for c, ch in enumerate(line) if ch != LAVA
    )
    index = {cell: i for i, cell in enumerate(cells)}
    num_states = len(cells)
    next_state = np.zeros((num_states, len(MOVES)), dtype=int)
    reward = np.zeros((num_states, len(MOVES)))
    lava = np.zeros((num_states, len(MOVES)), dtype=bool)
    start = goal = -1
    for s, (r, c) in enumerate(cells):
        if layout[r][c] == START:
            start = s
        if layout[r][c] == GOAL:
            goal = s
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(MOVES):
            if s == goal:
                next_state[s, a] = s
                continue
            target = index.get((r + dr, c + dc))
            if target is None:
                next_state[s, a] = s
                lava[s, a] = True
            else:
                next_state[s, a] = target
                reward[s, a] = 1.0 if target == goal else 0.0

    mdp = TabularMDP(next_state, reward, lava, start=start, goal=goal, gamma=gamma)
    return GridWorld(layout=layout, cells=cells, mdp=mdp)


def load_grid(path: str | Path, gamma: float = 0.99) -> GridWorld:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise LayoutError(f'{path}: cannot read map: {e}') from e
    return parse_grid(text, gamma=gamma)


def build_lavaworld(gamma: float = 0.99) -> GridWorld:
    text = (
        resources.files('nomad_adaptive_exploration') / 'data' / 'lavaworld.txt'
    ).read_text()
    world = parse_grid(text, gamma=gamma)
    if world.num_states != LAVAWORLD_STATES:
        raise LayoutError(
            f'lavaworld map has {world.num_states} states, expected {LAVAWORLD_STATES}'
        )
    return world


def resolve_environment(name: str, gamma: float = 0.99) -> GridWorld:
    if name == 'lavaworld':
        return build_lavaworld(gamma)
    return load_grid(name, gamma)


def render(world: GridWorld, values: Sequence[float] | np.ndarray | None = None) -> str:
    """The map, optionally with one value printed per floor cell."""
    if values is None:
        return '\n'.join(world.layout)
    values = np.asarray(values, dtype=float)
    if values.shape != (world.num_states,):
        raise MDPError(f'expected {world.num_states} values, got shape {values.shape}')
    index = {cell: s for s, cell in enumerate(world.cells)}
    lines = []
    for r, line in enumerate(world.layout):
        row = []
        for c, _ in enumerate(line):
            s = index.get((r, c))
            row.append('  ## ' if s is None else f'{values[s]:5.2f}')
        lines.append(' '.join(row))
    return '\n'.join(lines)


class StepResult(NamedTuple):
    next_state: int
    reward: float
    terminated: bool
    cause: TerminationCause | None


class StepRecord(NamedTuple):
    """One executed step of an episode."""

    state: int
    action: int
    reward: float
    next_state: int
    lava: bool


def step(mdp: TabularMDP, state: int, action: int, rng: np.random.Generator) -> StepResult:
    mdp.check(state, action)
    if mdp.lava[state, action]:
        return StepResult(state, 0.0, True, TerminationCause.LAVA)
    if rng.random() >= mdp.gamma:
        return StepResult(state, 0.0, True, TerminationCause.TIMEOUT)
    return StepResult(
        int(mdp.next_state[state, action]), float(mdp.reward[state, action]), False, None
    )


def _check_policy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise MDPError(
            f'policy must have shape {(mdp.num_states, mdp.num_actions)}, got {policy.shape}'
        )
    if np.any(policy < 0) or np.any(
        np.abs(policy.sum(axis=1) - 1.0) > DISTRIBUTION_TOLERANCE
    ):
        raise MDPError('policy rows must be probability distributions')
    return policy


@dataclass(frozen=True, eq=False)
class _Chain:
    """A policy's Markov chain, optionally over (state, previous action).

    ``dist[i]`` is the action distribution in chain state ``i``, ``origin[i]``
    its MDP state and ``successor[i, a]`` the chain state reached by ``a``.
    """

    dist: np.ndarray
    origin: np.ndarray
    successor: np.ndarray
    start: int
    goal_mask: np.ndarray


def _chain(mdp: TabularMDP, base: np.ndarray, repeat_prob: float = 0.0) -> _Chain:
    base = _check_policy(mdp, base)
    S, A = mdp.num_states, mdp.num_actions
    if repeat_prob == 0:
        return _Chain(
            dist=base,
            origin=np.arange(S),
            successor=mdp.next_state,
            start=mdp.start,
            goal_mask=np.arange(S) == mdp.goal,
        )
    # chain state s * (A + 1) + (prev + 1); prev = -1 on the first step
    width = A + 1
    origin = np.repeat(np.arange(S), width)
    dist = np.empty((S * width, A))
    for s in range(S):
        dist[s * width] = base[s]
        for prev in range(A):
            row = (1.0 - repeat_prob) * base[s]
            row[prev] += repeat_prob
            dist[s * width + prev + 1] = row
    successor = mdp.next_state[origin] * width + np.arange(A) + 1
    return _Chain(
        dist=dist,
        origin=origin,
        successor=successor,
        start=mdp.start * width,
        goal_mask=origin == mdp.goal,
    )


def _continuation_matrix(mdp: TabularMDP, chain: _Chain) -> np.ndarray:
    """Probability of moving between chain states without the episode ending."""
    n = chain.dist.shape[0]
    alive = chain.dist * ~mdp.lava[chain.origin] * mdp.gamma
    P = np.zeros((n, n))
    rows = np.repeat(np.arange(n), chain.dist.shape[1])
    np.add.at(P, (rows, chain.successor.ravel()), alive.ravel())
    P[chain.goal_mask] = 0.0
    return P


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = linalg.solve(A, b)
    except (linalg.LinAlgError, ValueError) as e:
        raise MDPError(f'singular evaluation system: {e}') from e
    residual = float(np.max(np.abs(A @ x - b))) if b.size else 0.0
    if not np.all(np.isfinite(x)) or residual > RESIDUAL_TOLERANCE:
        raise MDPError(f'evaluation system is ill-conditioned (residual {residual:.3g})')
    return x


def _success(mdp: TabularMDP, chain: _Chain) -> np.ndarray:
    P = _continuation_matrix(mdp, chain)
    A = np.eye(P.shape[0]) - P
    b = np.zeros(P.shape[0])
    A[chain.goal_mask] = 0.0
    A[chain.goal_mask, chain.goal_mask] = 1.0
    b[chain.goal_mask] = 1.0
    return np.clip(_solve(A, b), 0.0, 1.0)


def success_probabilities(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Per-state probability of reaching the goal before lava or timeout."""
    return _success(mdp, _chain(mdp, policy))


def success_probability(mdp: TabularMDP, policy: np.ndarray) -> float:
    return float(success_probabilities(mdp, policy)[mdp.start])


def modulated_success_probability(
    mdp: TabularMDP, base: np.ndarray, repeat_prob: float
) -> float:
    """Success probability of a policy that repeats its previous action.

    ``base`` holds the first-step distributions; later steps mix in
    ``repeat_prob`` on the previous action, so the chain runs over (state,
    previous action) pairs.
    """
    chain = _chain(mdp, base, repeat_prob)
    return float(_success(mdp, chain)[chain.start])


def expected_return(mdp: TabularMDP, policy: np.ndarray) -> float:
    """Expected undiscounted episode return under per-step continuation gamma."""
    chain = _chain(mdp, policy)
    P = _continuation_matrix(mdp, chain)
    r = mdp.gamma * np.sum(chain.dist * mdp.reward * ~mdp.lava, axis=1)
    r[chain.goal_mask] = 0.0
    return float(_solve(np.eye(P.shape[0]) - P, r)[mdp.start])


def policy_value(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """V = r_pi + gamma P_pi V with lava and the goal terminal."""
    policy = _check_policy(mdp, policy)
    S = mdp.num_states
    r = np.sum(policy * mdp.reward, axis=1)
    P = np.zeros((S, S))
    rows = np.repeat(np.arange(S), mdp.num_actions)
    np.add.at(P, (rows, mdp.next_state.ravel()), (policy * ~mdp.lava).ravel())
    P[mdp.goal] = 0.0
    r[mdp.goal] = 0.0
    return _solve(np.eye(S) - mdp.gamma * P, r)


def learning_progress(
    mdp: TabularMDP, policy_before: np.ndarray, policy_after: np.ndarray
) -> float:
    before = policy_value(mdp, policy_before)[mdp.start]
    after = policy_value(mdp, policy_after)[mdp.start]
    return float(after - before)


def optimal_q(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Value iteration for the optimal values under the step dynamics above."""
    safe = ~mdp.lava
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for i in range(max_iter):
        v = q.max(axis=1)
        v[mdp.goal] = 0.0
        updated = safe * mdp.gamma * (mdp.reward + v[mdp.next_state])
        updated[mdp.goal] = 0.0
        delta = float(np.max(np.abs(updated - q)))
        q = updated
        if delta < tol:
            logger.debug('value_iteration_converged', iterations=i + 1)
            return q
    raise MDPError(f'value iteration did not converge in {max_iter} iterations')


def modulated_policy(q_values: np.ndarray, z: Modulation) -> np.ndarray:
    """First-step distributions of ``z`` over a ``(S, A)`` or ``(S, A, n)`` table."""
    q = np.asarray(q_values, dtype=float)
    if q.ndim == 2:
        q = q[..., None]
    return base_policy_table(q, z)


def exact_lp_oracle(mdp: TabularMDP, q_values: np.ndarray, z: Modulation) -> float:
    """Stationary learning progress of ``z``: its per-episode success probability."""
    base = modulated_policy(q_values, z)
    if z.repeat_prob == 0:
        return success_probability(mdp, base)
    return modulated_success_probability(mdp, base, z.repeat_prob)


@dataclass(frozen=True, eq=False)
class QTable:
    """Point values per (state, action) plus the lava transitions already seen."""

    values: np.ndarray
    suppressed: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or not np.all(np.isfinite(values)):
            raise MDPError('Q values must be a finite (states, actions) array')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> QTable:
        return cls(np.zeros((num_states, num_actions)))

    @property
    def key(self) -> bytes:
        return self.values.tobytes()


def lava_suppression_update(
    q: QTable, trajectory: Iterable[StepRecord]
) -> tuple[QTable, bool]:
    """Lowers every into-lava (state, action) of the trajectory by 0.1, once each."""
    hits = {(rec.state, rec.action) for rec in trajectory if rec.lava}
    if not hits:
        return q, False
    values = q.values.copy()
    for s, a in hits:
        values[s, a] -= SUPPRESSION_STEP
    new_found = not hits <= q.suppressed
    return QTable(values, q.suppressed | hits), new_found


def binary_lp_proxy(new_lava_found: bool) -> float:
    return 1.0 if new_lava_found else 0.0


def greedy_success(mdp: TabularMDP, q: QTable) -> float:
    """Success probability of the greedy policy with ties split uniformly."""
    return success_probability(mdp, greedy_policy_table(q.values, ties='uniform'))


class NonStationaryLPOracle:
    """Exact expected learning progress of a modulation under lava suppression.

    LP(z) is the sum over lava transitions of the probability that a
    z-modulated episode ends on that transition times the change in greedy
    success probability that suppressing it would cause. Greedy success deltas
    depend only on the table and are cached per table.
    """

    def __init__(self, mdp: TabularMDP, cache_size: int = 8) -> None:
        self.mdp = mdp
        self.cache_size = cache_size
        self._lava_pairs = [tuple(map(int, p)) for p in np.argwhere(mdp.lava)]
        self._deltas: dict[bytes, np.ndarray] = {}

    def suppression_gains(self, q: QTable) -> np.ndarray:
        """(S, A) change in greedy success from suppressing each lava transition."""
        cached = self._deltas.get(q.key)
        if cached is not None:
            return cached
        before = greedy_success(self.mdp, q)
        gains = np.zeros_like(q.values)
        for s, a in self._lava_pairs:
            if s == self.mdp.goal:
                continue
            values = q.values.copy()
            values[s, a] -= SUPPRESSION_STEP
            gains[s, a] = greedy_success(self.mdp, QTable(values)) - before
        if len(self._deltas) >= self.cache_size:
            self._deltas.pop(next(iter(self._deltas)))
        self._deltas[q.key] = gains
        return gains

    def lava_hit_probabilities(self, q: QTable, z: Modulation) -> np.ndarray:
        """(S, A) probability that a z-modulated episode ends on each lava move."""
        chain = _chain(self.mdp, modulated_policy(q.values, z), z.repeat_prob)
        P = _continuation_matrix(self.mdp, chain)
        start = np.zeros(P.shape[0])
        start[chain.start] = 1.0
        # expected arrivals at each chain state, counting the initial one
        visits = _solve(np.eye(P.shape[0]) - P.T, start)
        visits[chain.goal_mask] = 0.0
        ends = visits[:, None] * chain.dist * self.mdp.lava[chain.origin]
        hits = np.zeros((self.mdp.num_states, self.mdp.num_actions))
        np.add.at(hits, chain.origin, ends)
        return hits

    def value(self, q: QTable, z: Modulation) -> float:
        return float(np.sum(self.lava_hit_probabilities(q, z) * self.suppression_gains(q)))


def estimate_success(
    mdp: TabularMDP,
    policy: np.ndarray,
    episodes: int,
    rng: np.random.Generator,
    max_steps: int = 10_000,
) -> float:
    """Monte Carlo estimate of :func:`success_probability`, vectorized over episodes."""
    policy = _check_policy(mdp, policy)
    cdf = np.cumsum(policy, axis=1)
    state = np.full(episodes, mdp.start)
    active = np.ones(episodes, dtype=bool)
    success = np.zeros(episodes, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if not idx.size:
            break
        s = state[idx]
        u = rng.random(idx.size) * cdf[s, -1]
        a = np.minimum((u[:, None] >= cdf[s]).sum(axis=1), mdp.num_actions - 1)
        dead = mdp.lava[s, a] | (rng.random(idx.size) >= mdp.gamma)
        moved = mdp.next_state[s, a]
        state[idx] = np.where(dead, s, moved)
        reached = ~dead & (moved == mdp.goal)
        success[idx[reached]] = True
        active[idx[dead | reached]] = False
    return float(success.mean())
