"""Tabular two-agent cooperative domains and single-agent projections.

Every domain is a pure common-interest model: both agents receive the same
scalar team reward.  Tables are stored as dense numpy arrays with the axis
order ``(state, action_i, action_j, ...)``.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .policy import PolicyTree

ATOL = 1e-9

GRID_ACTIONS = ("MS", "MN", "ME", "MW", "ST")
GRID_OBSERVATIONS = ("RW", "LW", "NW")
# (row delta, column delta); row 0 is the northern edge
_GRID_MOVES = {"MS": (1, 0), "MN": (-1, 0), "ME": (0, 1), "MW": (0, -1), "ST": (0, 0)}


class DomainError(ValueError):
    """Raised for unknown domain names or malformed domain parameters."""


@dataclass(frozen=True, eq=False)
class DomainModel:
    name: str
    states: tuple[str, ...]
    actions_i: tuple[str, ...]
    actions_j: tuple[str, ...]
    observations_i: tuple[str, ...]
    observations_j: tuple[str, ...]
    transition: np.ndarray  # [s, a_i, a_j, s']
    observation_fn_i: np.ndarray  # [s', a_i, a_j, o_i]
    observation_fn_j: np.ndarray  # [s', a_i, a_j, o_j]
    reward: np.ndarray  # [s, a_i, a_j]
    initial_state_dist: np.ndarray
    discount: float = 1.0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.transition, self.observation_fn_i, self.observation_fn_j,
                    self.reward, self.initial_state_dist):
            arr.setflags(write=False)
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.states)

    def validate(self) -> None:
        S, Ai, Aj = len(self.states), len(self.actions_i), len(self.actions_j)
        Oi, Oj = len(self.observations_i), len(self.observations_j)
        shapes = {
            "transition": (self.transition, (S, Ai, Aj, S)),
            "observation_fn_i": (self.observation_fn_i, (S, Ai, Aj, Oi)),
            "observation_fn_j": (self.observation_fn_j, (S, Ai, Aj, Oj)),
            "reward": (self.reward, (S, Ai, Aj)),
            "initial_state_dist": (self.initial_state_dist, (S,)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
        for name in ("transition", "observation_fn_i", "observation_fn_j"):
            arr = getattr(self, name)
            if np.any(arr < 0) or np.any(arr > 1):
                raise DomainError(f"{name} has entries outside [0, 1]")
            if not np.allclose(arr.sum(axis=-1), 1.0, atol=ATOL):
                raise DomainError(f"{name} rows do not sum to 1")
        if not np.all(np.isfinite(self.reward)):
            raise DomainError("reward table is not finite")
        b = self.initial_state_dist
        if np.any(b < 0) or abs(b.sum() - 1.0) > ATOL:
            raise DomainError("initial_state_dist is not a distribution")
        if not 0.0 <= self.discount <= 1.0:
            raise DomainError("discount must lie in [0, 1]")

    def swap_agents(self) -> DomainModel:
        """The same domain with the roles of i and j exchanged."""
        return DomainModel(
            name=self.name,
            states=self.states,
            actions_i=self.actions_j,
            actions_j=self.actions_i,
            observations_i=self.observations_j,
            observations_j=self.observations_i,
            transition=self.transition.transpose(0, 2, 1, 3).copy(),
            observation_fn_i=self.observation_fn_j.transpose(0, 2, 1, 3).copy(),
            observation_fn_j=self.observation_fn_i.transpose(0, 2, 1, 3).copy(),
            reward=self.reward.transpose(0, 2, 1).copy(),
            initial_state_dist=self.initial_state_dist.copy(),
            discount=self.discount,
            params=dict(self.params, swapped=not self.params.get("swapped", False)),
        )

    def as_agent(self, agent: str) -> DomainModel:
        """View the domain with ``agent`` in the i slot."""
        if agent == "i":
            return self
        if agent == "j":
            return self.swap_agents()
        raise DomainError(f"unknown agent {agent!r}")

    def with_initial(self, dist) -> DomainModel:
        dist = np.asarray(dist, dtype=float)
        return DomainModel(self.name, self.states, self.actions_i, self.actions_j,
                           self.observations_i, self.observations_j, self.transition,
                           self.observation_fn_i, self.observation_fn_j, self.reward,
                           dist, self.discount, dict(self.params))


# --------------------------------------------------------------------------
# multi-access broadcast channel


def _mabc(params: dict) -> DomainModel:
    p_i = float(params.get("arrival_i", 0.9))
    p_j = float(params.get("arrival_j", 0.1))
    noise = float(params.get("observation_noise", 0.1))
    start = params.get("start", [1, 1])
    discount = float(params.get("discount", 1.0))
    if not (0 <= p_i <= 1 and 0 <= p_j <= 1 and 0 <= noise <= 1):
        raise DomainError("mabc probabilities must lie in [0, 1]")

    # state = 2 * buffer_i + buffer_j, 1 means the buffer holds a message
    states = tuple(f"i{'full' if bi else 'empty'}_j{'full' if bj else 'empty'}"
                   for bi in (0, 1) for bj in (0, 1))
    actions = ("send", "wait")
    observations = ("collision", "no-collision")
    S, A, O = 4, 2, 2
    T = np.zeros((S, A, A, S))
    R = np.zeros((S, A, A))
    Z = np.zeros((S, A, A, O))
    for s in range(S):
        bi, bj = divmod(s, 2)
        for ai in range(A):
            for aj in range(A):
                send_i, send_j = ai == 0, aj == 0
                collision = send_i and send_j
                ok_i = send_i and not send_j and bi == 1
                ok_j = send_j and not send_i and bj == 1
                R[s, ai, aj] = 1.0 if (ok_i or ok_j) else 0.0
                # an emptied or already empty buffer refills during the step
                fi = {1: 1.0} if (bi == 1 and not ok_i) else {1: p_i, 0: 1 - p_i}
                fj = {1: 1.0} if (bj == 1 and not ok_j) else {1: p_j, 0: 1 - p_j}
                for ni, pi_ in fi.items():
                    for nj, pj_ in fj.items():
                        T[s, ai, aj, 2 * ni + nj] += pi_ * pj_
                # collision observation is noisy and independent of s'
                Z[:, ai, aj, 0 if collision else 1] += 1 - noise
                Z[:, ai, aj, 1 if collision else 0] += noise
    Z = Z / Z.sum(axis=-1, keepdims=True)
    b0 = np.zeros(S)
    b0[2 * int(start[0]) + int(start[1])] = 1.0
    return DomainModel("mabc", states, actions, actions, observations, observations,
                       T, Z.copy(), Z.copy(), R, b0, discount,
                       {"family": "mabc", "arrival_i": p_i, "arrival_j": p_j,
                        "observation_noise": noise, "start": list(start),
                        "discount": discount})


# --------------------------------------------------------------------------
# grid meeting

ONE_SHOT_REWARDS = [
    [15, 2, 10],
    [0, 5, 2],
    [0, 0, 15],
]
ONE_SHOT_START_I = (0, 1)
ONE_SHOT_START_J = (1, 2)


def _grid(params: dict) -> DomainModel:
    n = int(params.get("size", 3))
    rewards = np.asarray(params.get("rewards", ONE_SHOT_REWARDS if n == 3 else np.zeros((n, n))),
                         dtype=float)
    if n < 2 or rewards.shape != (n, n):
        raise DomainError(f"grid rewards must be {n}x{n}")
    start_i = tuple(params.get("start_i", ONE_SHOT_START_I if n == 3 else (0, 0)))
    start_j = tuple(params.get("start_j", ONE_SHOT_START_J if n == 3 else (n - 1, n - 1)))
    move_success = float(params.get("move_success", 1.0))
    discount = float(params.get("discount", 1.0))
    for r, c in (start_i, start_j):
        if not (0 <= r < n and 0 <= c < n):
            raise DomainError("grid start position outside the grid")
    if not 0 <= move_success <= 1:
        raise DomainError("move_success must lie in [0, 1]")

    cells = [(r, c) for r in range(n) for c in range(n)]
    C = len(cells)

    def moved(cell, act):
        dr, dc = _GRID_MOVES[act]
        r, c = cell[0] + dr, cell[1] + dc
        return (r, c) if 0 <= r < n and 0 <= c < n else cell  # walls block

    def outcomes(cell, act):
        target = moved(cell, act)
        if target == cell or move_success == 1.0:
            return {cells.index(target): 1.0}
        return {cells.index(target): move_success, cells.index(cell): 1 - move_success}

    def wall_obs(cell):
        if cell[1] == n - 1:
            return 0  # RW
        if cell[1] == 0:
            return 1  # LW
        return 2

    def team_reward(ci, cj):
        ri, rj = rewards[cells[ci]], rewards[cells[cj]]
        return 2 * (ri + rj) if ci == cj else ri + rj

    S, A = C * C, len(GRID_ACTIONS)
    states = tuple(f"i{cells[ci]}_j{cells[cj]}" for ci in range(C) for cj in range(C))
    T = np.zeros((S, A, A, S))
    R = np.zeros((S, A, A))
    for ci in range(C):
        for cj in range(C):
            s = ci * C + cj
            for ai, act_i in enumerate(GRID_ACTIONS):
                oi = outcomes(cells[ci], act_i)
                for aj, act_j in enumerate(GRID_ACTIONS):
                    for ni, p1 in oi.items():
                        for nj, p2 in outcomes(cells[cj], act_j).items():
                            T[s, ai, aj, ni * C + nj] += p1 * p2
                            # reward collected in the cells occupied after moving
                            R[s, ai, aj] += p1 * p2 * team_reward(ni, nj)
    Zi = np.zeros((S, A, A, 3))
    Zj = np.zeros((S, A, A, 3))
    for ci in range(C):
        for cj in range(C):
            Zi[ci * C + cj, :, :, wall_obs(cells[ci])] = 1.0
            Zj[ci * C + cj, :, :, wall_obs(cells[cj])] = 1.0
    b0 = np.zeros(S)
    b0[cells.index(start_i) * C + cells.index(start_j)] = 1.0
    return DomainModel(f"grid{n}", states, GRID_ACTIONS, GRID_ACTIONS, GRID_OBSERVATIONS,
                       GRID_OBSERVATIONS, T, Zi, Zj, R, b0, discount,
                       {"family": "grid", "size": n, "rewards": rewards.tolist(),
                        "start_i": list(start_i), "start_j": list(start_j),
                        "move_success": move_success, "discount": discount})


def grid_swap_state(domain: DomainModel, s: int) -> int:
    """Index of the grid state with the two agents' cells exchanged."""
    C = int(domain.params["size"]) ** 2
    ci, cj = divmod(s, C)
    return cj * C + ci


def build_one_shot_grid() -> DomainModel:
    """3x3 meeting grid where greedy moves earn 30 and the coordinated meeting 40.

    Agent i starts at (0, 1) and agent j at (1, 2).  Moving west puts i on a
    15 cell, moving south puts j on a 15 cell; both moving onto the 10 cell at
    (0, 2) doubles the sum of the two individual rewards.
    """
    d = _grid({"size": 3, "rewards": ONE_SHOT_REWARDS, "start_i": ONE_SHOT_START_I,
               "start_j": ONE_SHOT_START_J})
    return DomainModel("grid1shot", d.states, d.actions_i, d.actions_j, d.observations_i,
                       d.observations_j, d.transition, d.observation_fn_i,
                       d.observation_fn_j, d.reward, d.initial_state_dist, d.discount,
                       dict(d.params, family="grid1shot"))


# --------------------------------------------------------------------------
# box pushing (reduced 50-state corridor)

BP_ACTIONS = ("left", "right", "push", "stay")
BP_OBSERVATIONS = ("empty", "wall", "agent", "small", "large")


def _box_pushing(params: dict) -> DomainModel:
    """Corridor of 5 columns below a row of boxes.

    State = (column_i, column_j, goal_flag): 5 * 5 * 2 = 50 states.  Small
    boxes sit above columns 0 and 4 and the large box spans columns 2-3.  A
    lone push on a small box scores; the large box only moves when both
    agents push it from below its two columns.  Once it reaches the goal the
    flag is raised and the next step resets the corridor.
    """
    width = 5
    small_cols = tuple(params.get("small_columns", (0, 4)))
    large_cols = tuple(params.get("large_columns", (2, 3)))
    move_success = float(params.get("move_success", 0.9))
    obs_noise = float(params.get("observation_noise", 0.0))
    r_large = float(params.get("large_reward", 100.0))
    r_small = float(params.get("small_reward", 10.0))
    step_cost = float(params.get("step_cost", 0.1))
    wall_penalty = float(params.get("wall_penalty", 5.0))
    start = tuple(params.get("start", (1, 4)))
    discount = float(params.get("discount", 1.0))
    if len(large_cols) != 2 or abs(large_cols[0] - large_cols[1]) != 1:
        raise DomainError("large box must span two adjacent columns")
    if not (0 <= move_success <= 1 and 0 <= obs_noise <= 1):
        raise DomainError("box-pushing probabilities must lie in [0, 1]")

    def idx(ci, cj, g):
        return (ci * width + cj) * 2 + g

    S, A, O = width * width * 2, 4, 5
    states = tuple(f"i{ci}_j{cj}_{'goal' if g else 'play'}"
                   for ci in range(width) for cj in range(width) for g in (0, 1))
    start_s = idx(start[0], start[1], 0)

    def move(c, a):
        """-> (list of (column, prob), bumped wall)"""
        if a == 0:
            target = c - 1
        elif a == 1:
            target = c + 1
        else:
            return [(c, 1.0)], False
        if not 0 <= target < width:
            return [(c, 1.0)], True
        return [(target, move_success), (c, 1 - move_success)], False

    def front(c):
        if c in large_cols:
            return 4
        if c in small_cols:
            return 3
        return 0

    T = np.zeros((S, A, A, S))
    R = np.zeros((S, A, A))
    Zi = np.zeros((S, A, A, O))
    Zj = np.zeros((S, A, A, O))
    for ci in range(width):
        for cj in range(width):
            for g in (0, 1):
                s = idx(ci, cj, g)
                for ai in range(A):
                    for aj in range(A):
                        if g == 1:
                            T[s, ai, aj, start_s] = 1.0
                            continue
                        r = -2 * step_cost
                        large = (ai == 2 and aj == 2 and {ci, cj} == set(large_cols))
                        if large:
                            r += r_large
                            T[s, ai, aj, idx(ci, cj, 1)] = 1.0
                        else:
                            if ai == 2 and ci in small_cols:
                                r += r_small
                            if aj == 2 and cj in small_cols:
                                r += r_small
                            mi, bump_i = move(ci, ai)
                            mj, bump_j = move(cj, aj)
                            r -= wall_penalty * (bump_i + bump_j)
                            for ni, p1 in mi:
                                for nj, p2 in mj:
                                    T[s, ai, aj, idx(ni, nj, 0)] += p1 * p2
                        R[s, ai, aj] = r
    for ci in range(width):
        for cj in range(width):
            for g in (0, 1):
                s2 = idx(ci, cj, g)
                for ai in range(A):
                    for aj in range(A):
                        for own, other, a, Z in ((ci, cj, ai, Zi), (cj, ci, aj, Zj)):
                            bumped = (a == 0 and own == 0) or (a == 1 and own == width - 1)
                            if bumped:
                                o = 1
                            elif own == other:
                                o = 2
                            else:
                                o = front(own)
                            Z[s2, ai, aj, :] = obs_noise / (O - 1)
                            Z[s2, ai, aj, o] = 1 - obs_noise
    b0 = np.zeros(S)
    b0[start_s] = 1.0
    return DomainModel("box_pushing", states, BP_ACTIONS, BP_ACTIONS, BP_OBSERVATIONS,
                       BP_OBSERVATIONS, T, Zi, Zj, R, b0, discount,
                       {"family": "box_pushing", "small_columns": list(small_cols),
                        "large_columns": list(large_cols), "move_success": move_success,
                        "observation_noise": obs_noise, "large_reward": r_large,
                        "small_reward": r_small, "step_cost": step_cost,
                        "wall_penalty": wall_penalty, "start": list(start),
                        "discount": discount})


# --------------------------------------------------------------------------


def _bandit(params: dict) -> DomainModel:
    """Single-state, single-step problem where only j's action matters."""
    rewards = np.asarray(params.get("rewards", [0.0, 5.0]), dtype=float)
    if rewards.ndim != 1 or len(rewards) < 1:
        raise DomainError("bandit rewards must be a nonempty list")
    A = len(rewards)
    T = np.ones((1, 1, A, 1))
    Z = np.ones((1, 1, A, 1))
    R = rewards[None, None, :].copy()
    return DomainModel("bandit", ("s",), ("noop",), tuple(f"a{k}" for k in range(A)),
                       ("o",), ("o",), T, Z.copy(), Z.copy(), R, np.ones(1), 1.0,
                       {"family": "bandit", "rewards": rewards.tolist()})


_FAMILIES = {"mabc": _mabc, "grid": _grid, "box_pushing": _box_pushing, "bandit": _bandit}


def build_domain(name: str, params: dict | None = None) -> DomainModel:
    """Build a domain by family name.

    ``name`` may be ``mabc``, ``box_pushing``, ``bandit``, ``grid1shot``,
    ``grid`` or ``grid<N>`` (e.g. ``grid3``).
    """
    params = dict(params or {})
    key = name.lower().replace("-", "_")
    if key == "grid1shot":
        if params:
            raise DomainError("grid1shot takes no parameters")
        return build_one_shot_grid()
    if key.startswith("grid") and key[4:].isdigit():
        params.setdefault("size", int(key[4:]))
        key = "grid"
    if key in ("bp", "boxpushing"):
        key = "box_pushing"
    if key not in _FAMILIES:
        raise DomainError(f"unknown domain {name!r}")
    try:
        return _FAMILIES[key](params)
    except (TypeError, KeyError, IndexError) as exc:
        raise DomainError(f"malformed parameters for {name!r}: {exc}") from exc


def load_domain_config(path: str | Path) -> DomainModel:
    """Build a domain from a JSON config with a ``family`` key."""
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise DomainError(f"{path}: config must be an object with a 'family' key")
    family = cfg.pop("family")
    return build_domain(family, cfg)


# --------------------------------------------------------------------------
# projection of a two-agent domain onto one learner


class PolicyExhausted(RuntimeError):
    pass


class ProjectedEnv:
    """Single-agent environment with the other agent folded into the dynamics.

    The folded agent acts from ``other_policy`` indexed by its own observation
    history.  ``perspective`` names the agent that learns (``'i'`` or ``'j'``).
    Sampling uses a caller-supplied ``numpy.random.Generator``.
    """

    def __init__(self, base: DomainModel, other_policy: PolicyTree, perspective: str = "j"):
        self.base = base
        self.perspective = perspective
        self.other_policy = other_policy
        self.domain = base.as_agent(perspective)  # learner sits in the i slot
        self.horizon = other_policy.horizon
        self.n_actions = len(self.domain.actions_i)
        self.n_obs = len(self.domain.observations_i)
        # nested lists: bisect on plain lists is much faster than numpy per draw
        self._cum_t = np.cumsum(self.domain.transition, axis=-1).tolist()
        self._cum_oi = np.cumsum(self.domain.observation_fn_i, axis=-1).tolist()
        self._cum_oj = np.cumsum(self.domain.observation_fn_j, axis=-1).tolist()
        self._cum_b0 = np.cumsum(self.domain.initial_state_dist).tolist()
        self._reward = self.domain.reward.tolist()
        self.state = None
        self.other_node = None
        self.t = 0

    @staticmethod
    def _draw(cum, rng) -> int:
        return min(bisect.bisect_right(cum, rng.random() * cum[-1]), len(cum) - 1)

    def reset(self, rng: np.random.Generator) -> int:
        self.state = self._draw(self._cum_b0, rng)
        self.other_node = self.other_policy
        self.t = 0
        return self.state

    def step(self, action: int, rng: np.random.Generator) -> tuple[int, float]:
        """Advance one step; returns (learner observation, team reward)."""
        if self.other_node is None:
            raise PolicyExhausted(f"other agent's policy exhausted at step {self.t}")
        s, a_o = self.state, self.other_node.action
        r = self._reward[s][action][a_o]
        s2 = self._draw(self._cum_t[s][action][a_o], rng)
        o = self._draw(self._cum_oi[s2][action][a_o], rng)
        o_other = self._draw(self._cum_oj[s2][action][a_o], rng)
        self.other_node = self.other_node.children[o_other] if self.other_node.children else None
        self.state = s2
        self.t += 1
        return o, r

    def exact_value(self, policy: PolicyTree) -> float:
        """Exact expected return of the learner's ``policy`` against the folded agent."""
        from .planning import joint_value

        if self.perspective == "i":
            return joint_value(self.base, policy, self.other_policy).value
        return joint_value(self.base, self.other_policy, policy).value


def project(base: DomainModel, other_policy: PolicyTree, perspective: str = "j") -> ProjectedEnv:
    return ProjectedEnv(base, other_policy, perspective)
