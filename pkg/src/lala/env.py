"""Cooperative navigation: N agents must occupy N targets, one agent each.

Agents pick a target index every step and move a fixed distance toward it.
Same-index choices are decision conflicts and are penalized; exclusively
occupying a target earns a small award; every step costs time. Deterministic
under a seed, positions confined to the [0, L] x [0, L] square.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int
    side_length: float = 15.0
    step_distance: float = 1.0
    max_steps: int = 30
    reach_radius: float = 0.5

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("need at least 2 agents")
        if self.side_length <= 0:
            raise ValueError("side_length must be positive")
        if not self.reach_radius < self.step_distance:
            raise ValueError("reach_radius must be smaller than step_distance")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def r_step(self) -> float:
        return -1.0 / self.side_length

    @property
    def r_conf(self) -> float:
        return -45.0 / self.side_length

    @property
    def r_coop(self) -> float:
        return 0.8 / self.side_length

    @property
    def obs_dim(self) -> int:
        # targets (2N) + others current (2(N-1)) + others previous (2(N-1)) + last-action one-hot (N)
        return 7 * self.n_agents - 4


@dataclass
class WorldState:
    agent_positions: np.ndarray            # (N, 2)
    previous_agent_positions: np.ndarray   # (N, 2)
    target_positions: np.ndarray           # (N, 2)
    last_actions: np.ndarray               # (N,) int, -1 before the first step
    timestep: int                          # 1-based; index of the next action


@dataclass
class StepResult:
    rewards: np.ndarray                    # (N,)
    done: bool
    success: bool
    conflicts: set = field(default_factory=set)  # {(i, j), i < j} same-index choices


def reset_state(config: EnvConfig, rng: np.random.Generator) -> WorldState:
    n, side = config.n_agents, config.side_length
    agents = rng.uniform(0.0, side, size=(n, 2))
    targets = rng.uniform(0.0, side, size=(n, 2))
    return WorldState(
        agent_positions=agents,
        previous_agent_positions=agents.copy(),
        target_positions=targets,
        last_actions=np.full(n, -1, dtype=np.int64),
        timestep=1,
    )


def _targets_covered(agent_pos: np.ndarray, target_pos: np.ndarray, radius: float) -> bool:
    """True iff every target can be assigned a distinct agent within radius."""
    d = np.linalg.norm(agent_pos[:, None, :] - target_pos[None, :, :], axis=2)
    within = d <= radius
    n = target_pos.shape[0]
    match = [-1] * n  # target -> agent

    def try_assign(agent: int, seen: list[bool]) -> bool:
        for t in range(n):
            if within[agent, t] and not seen[t]:
                seen[t] = True
                if match[t] == -1 or try_assign(match[t], seen):
                    match[t] = agent
                    return True
        return False

    matched = 0
    for a in range(agent_pos.shape[0]):
        if try_assign(a, [False] * n):
            matched += 1
    return matched == n


def step_state(state: WorldState, actions, config: EnvConfig) -> tuple[WorldState, StepResult]:
    """Advance one step; pure function of (state, joint action)."""
    n = config.n_agents
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (n,):
        raise ValueError(f"expected {n} actions, got shape {actions.shape}")
    if np.any(actions < 0) or np.any(actions >= n):
        raise ValueError("action index out of range")
    if state.timestep > config.max_steps:
        raise RuntimeError("step past the maximum episode length")

    pos = state.agent_positions
    chosen = state.target_positions[actions]
    delta = chosen - pos
    dist = np.linalg.norm(delta, axis=1)
    new_pos = np.where(
        (dist <= config.step_distance)[:, None],
        chosen,
        pos + config.step_distance * delta / np.maximum(dist, 1e-12)[:, None],
    )
    np.clip(new_pos, 0.0, config.side_length, out=new_pos)

    conflicts = {
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if actions[i] == actions[j]
    }
    in_conflict = np.zeros(n, dtype=bool)
    for i, j in conflicts:
        in_conflict[i] = True
        in_conflict[j] = True

    d_targets = np.linalg.norm(new_pos[:, None, :] - state.target_positions[None, :, :], axis=2)
    within = d_targets <= config.reach_radius
    occupants = within.sum(axis=0)  # per target
    exclusive = np.array([
        bool(np.any(within[i] & (occupants == 1))) for i in range(n)
    ])

    rewards = np.full(n, config.r_step)
    rewards[in_conflict] += config.r_conf
    rewards[exclusive] += config.r_coop

    success = _targets_covered(new_pos, state.target_positions, config.reach_radius)
    done = success or state.timestep >= config.max_steps

    next_state = WorldState(
        agent_positions=new_pos,
        previous_agent_positions=pos.copy(),
        target_positions=state.target_positions,
        last_actions=actions.copy(),
        timestep=state.timestep + 1,
    )
    return next_state, StepResult(rewards=rewards, done=done, success=success, conflicts=conflicts)


def observe(state: WorldState, agent: int, config: EnvConfig) -> np.ndarray:
    """Egocentric observation; layout is fixed and relative to own position."""
    n = config.n_agents
    own = state.agent_positions[agent]
    others = [j for j in range(n) if j != agent]
    rel_targets = (state.target_positions - own).ravel()
    rel_current = (state.agent_positions[others] - own).ravel()
    rel_previous = (state.previous_agent_positions[others] - own).ravel()
    onehot = np.zeros(n)
    if state.last_actions[agent] >= 0:
        onehot[state.last_actions[agent]] = 1.0
    return np.concatenate([rel_targets, rel_current, rel_previous, onehot])


def acting_pairs(state: WorldState, agent: int) -> np.ndarray:
    """(N-1, 4) rows of (previous, current) other-agent positions, own-relative."""
    own = state.agent_positions[agent]
    others = [j for j in range(state.agent_positions.shape[0]) if j != agent]
    prev = state.previous_agent_positions[others] - own
    cur = state.agent_positions[others] - own
    return np.concatenate([prev, cur], axis=1)


def transition_pairs(before: WorldState, after: WorldState, agent: int) -> np.ndarray:
    """(N-1, 4) rows of (current, next) other-agent positions, relative to own position before the move."""
    own = before.agent_positions[agent]
    others = [j for j in range(before.agent_positions.shape[0]) if j != agent]
    cur = before.agent_positions[others] - own
    nxt = after.agent_positions[others] - own
    return np.concatenate([cur, nxt], axis=1)


def navigation_time(success: bool, success_step: int | None, config: EnvConfig) -> float:
    """Normalized completion time; failed episodes score 1.0."""
    if not success:
        return 1.0
    return success_step / config.max_steps


class NavEnv:
    """Stateful wrapper around the pure step function; one episode at a time."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state: WorldState | None = None
        self.done = False
        self.success = False
        self.first_success_step: int | None = None

    def reset(self, seed: int | None = None, rng: np.random.Generator | None = None) -> WorldState:
        if rng is None:
            rng = np.random.default_rng(seed)
        self.state = reset_state(self.config, rng)
        self.done = False
        self.success = False
        self.first_success_step = None
        return self.state

    def step(self, actions) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset() before step()")
        if self.done:
            raise RuntimeError("episode already finished")
        acted_at = self.state.timestep
        self.state, result = step_state(self.state, actions, self.config)
        if result.success and self.first_success_step is None:
            self.first_success_step = acted_at
            self.success = True
        self.done = result.done
        return result

    def observe(self, agent: int) -> np.ndarray:
        return observe(self.state, agent, self.config)

    def acting_pairs(self, agent: int) -> np.ndarray:
        return acting_pairs(self.state, agent)

    def navigation_time(self) -> float:
        return navigation_time(self.success, self.first_success_step, self.config)


TRACE_COLUMNS = ["episode", "t", "agent", "x", "y", "action", "reward", "conflict_flag"]


def write_trace(path, rows):
    """Episode trace CSV (RFC 4180, UTF-8, LF); one row per (episode, t, agent)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow(row)


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header: {header}")
        for row in reader:
            yield (int(row[0]), int(row[1]), int(row[2]), float(row[3]),
                   float(row[4]), int(row[5]), float(row[6]), int(row[7]))
