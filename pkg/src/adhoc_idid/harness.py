"""Ad hoc teamwork episodes against scripted teammates.

Agent i plans online with a receding horizon.  Its hidden state is the pair
(world state, teammate model node): each candidate model of j is a
behavior tree that restarts from its root every ``horizon`` steps, so the
interactive state space is stationary and small enough to filter exactly.
"""
from __future__ import annotations

import csv
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .domains import DomainModel
from .idid import LearnedPolicy, build_idid, solve_augmented_idid, solve_idid
from .planning import (
    PRUNE_EPS,
    TIE_TOL,
    InteractiveView,
    brute_force_oracle,
    solve_did,
)
from .policy import BehaviorNode, PolicyTree, behavior_from_tree

log = logging.getLogger(__name__)

TEAMMATE_KINDS = ("random", "predefined", "optimal", "switching", "true-model")


# --------------------------------------------------------------------------
# teammates


@dataclass(frozen=True)
class TeammateScript:
    """How the teammate behaves.  ``pattern`` holds 0-based action indices."""

    kind: str
    seed: int = 0
    pattern: tuple[int, ...] = ()
    repetition: int = 1
    switch_step: int | None = None
    policy: PolicyTree | BehaviorNode | None = None  # true-model teammates
    random_pattern: bool = False  # draw pattern and repetition per trial

    def __post_init__(self):
        if self.kind not in TEAMMATE_KINDS:
            raise ValueError(f"unknown teammate kind {self.kind!r}")
        needs = self.kind in ("predefined", "switching") and not self.random_pattern
        if needs and not self.pattern:
            raise ValueError("a predefined teammate needs a nonempty pattern")
        if self.repetition < 1:
            raise ValueError("repetition must be >= 1")
        if self.kind == "switching" and (self.switch_step is None or self.switch_step < 0):
            raise ValueError("a switching teammate needs switch_step >= 0")
        if self.kind == "true-model" and self.policy is None:
            raise ValueError("a true-model teammate needs a policy")


def parse_pattern(text: str) -> tuple[int, ...]:
    """``'1324'`` (1-based action labels) -> ``(0, 2, 1, 3)``."""
    if not text or not text.isdigit() or "0" in text:
        raise ValueError(f"pattern must be 1-based action digits, got {text!r}")
    return tuple(int(c) - 1 for c in text)


def expand_pattern(pattern: Sequence[int], repetition: int, length: int) -> list[int]:
    block = [a for a in pattern for _ in range(repetition)]
    return [block[t % len(block)] for t in range(length)]


class Teammate:
    """A running teammate: a fixed action sequence, then optionally a policy.

    The policy (a behavior tree) starts at step ``start`` and restarts from
    its root every ``horizon`` steps.
    """

    def __init__(self, sequence: Sequence[int] = (), policy: BehaviorNode | None = None,
                 start: int = 0):
        self.sequence = list(sequence)
        self.policy = policy
        self.start = start
        self.node = None

    def reset(self) -> None:
        self.node = None

    def act(self, t: int, rng: np.random.Generator) -> int:
        if self.policy is None or t < self.start:
            return self.sequence[t]
        if (t - self.start) % self.policy.horizon == 0 or self.node is None:
            self.node = self.policy
        probs = self.node.probs
        if len(probs) == 1:
            return probs[0][0]
        k = rng.choice(len(probs), p=[p for _, p in probs])
        return probs[int(k)][0]

    def observe(self, t: int, a: int, o: int) -> None:
        if self.node is not None:
            self.node = self.node.children.get((a, o))


def _as_behavior(policy) -> BehaviorNode:
    return behavior_from_tree(policy) if isinstance(policy, PolicyTree) else policy


def make_teammate(script: TeammateScript, domain: DomainModel, steps: int,
                  horizon: int = 3, trial: int = 0, oracle=None) -> Teammate:
    """Instantiate ``script`` for one trial.

    Random sequences depend only on ``(script.seed, trial)``, never on the
    planning agent.  ``optimal`` plays j's side of the joint optimum for
    ``horizon`` (``oracle`` may pass a precomputed ``(pi_i, pi_j)``).
    """
    n_aj = len(domain.actions_j)
    kind = script.kind
    if kind == "random":
        rng = np.random.default_rng([script.seed, trial])
        return Teammate(rng.integers(n_aj, size=steps).tolist())
    pattern, repetition = script.pattern, script.repetition
    if script.random_pattern:
        # a shuffled action order with a repetition count of 1-3, fixed per trial
        rng = np.random.default_rng([script.seed, trial])
        pattern = tuple(int(a) for a in rng.permutation(n_aj))
        repetition = int(rng.integers(1, 4))
    if any(a < 0 or a >= n_aj for a in pattern):
        raise ValueError(f"pattern actions must lie in 0..{n_aj - 1}")
    if kind == "predefined":
        return Teammate(expand_pattern(pattern, repetition, steps))
    if kind == "true-model":
        return Teammate(policy=_as_behavior(script.policy))
    pi_j = (oracle or brute_force_oracle(domain, horizon)[:2])[1]
    if kind == "optimal":
        return Teammate(policy=behavior_from_tree(pi_j))
    head = expand_pattern(pattern, repetition, min(script.switch_step, steps))
    return Teammate(head, behavior_from_tree(pi_j), start=script.switch_step)


# --------------------------------------------------------------------------
# cyclic model space


class CyclicView:
    """Stationary interactive view over (teammate model node, world state)."""

    def __init__(self, domain: DomainModel, behaviors: Sequence[BehaviorNode]):
        self.domain = domain
        probs, links, owner, depth, roots = [], [], [], [], []
        for k, root in enumerate(behaviors):
            index: dict[int, int] = {}
            order = [(root, 0)]
            index[id(root)] = len(probs)
            roots.append(len(probs))
            probs.append(root.probs)
            owner.append(k)
            depth.append(0)
            n = 0
            while n < len(order):
                node, d = order[n]
                n += 1
                for child in node.children.values():
                    if id(child) not in index:
                        index[id(child)] = len(probs)
                        probs.append(child.probs)
                        owner.append(k)
                        depth.append(d + 1)
                        order.append((child, d + 1))
            for node, _ in order:
                link = {}
                for aj, _p in node.probs:
                    for oj in range(len(domain.observations_j)):
                        child = node.children.get((aj, oj))
                        link[(aj, oj)] = roots[k] if child is None else index[id(child)]
                links.append(link)
        self.owner = np.array(owner)
        self.depth = np.array(depth)
        self.roots = roots
        self.n_models = len(behaviors)
        self.S = domain.n_states
        self._inner = InteractiveView(domain, [probs, probs], [links])
        self.n_actions = self._inner.n_actions
        self.n_obs = self._inner.n_obs

    @property
    def n_nodes(self) -> int:
        return len(self.owner)

    def n_states(self, t: int) -> int:
        return self._inner.n_states(0)

    def reward(self, t: int) -> np.ndarray:
        return self._inner.reward(0)

    def dynamics(self, t: int, a: int, o: int):
        return self._inner.dynamics(0, a, o)

    def prior(self, weights, world, depth: int = 0) -> np.ndarray:
        """Model weights spread over each model's nodes at ``depth``, times ``world``."""
        b = np.zeros((self.n_nodes, self.S))
        for k, w in enumerate(weights):
            nodes = np.flatnonzero((self.owner == k) & (self.depth == depth))
            if len(nodes) == 0:
                nodes = np.array([self.roots[k]])
            b[nodes] = w / len(nodes) * np.asarray(world)[None, :]
        return b.ravel()

    def model_marginal(self, b) -> np.ndarray:
        per_node = np.asarray(b).reshape(self.n_nodes, self.S).sum(axis=1)
        return np.bincount(self.owner, weights=per_node, minlength=self.n_models)

    def world_marginal(self, b) -> np.ndarray:
        return np.asarray(b).reshape(self.n_nodes, self.S).sum(axis=0)


def merge_equivalent(behaviors, weights, labels):
    """Merge behaviorally identical models, summing their weights."""
    seen: dict = {}
    out_b, out_w, out_l = [], [], []
    for b, w, lab in zip(behaviors, weights, labels):
        k = seen.get(b.key)
        if k is None:
            seen[b.key] = len(out_b)
            out_b.append(b)
            out_w.append(float(w))
            out_l.append(lab)
        else:
            out_w[k] += float(w)
    return out_b, np.array(out_w), out_l


# --------------------------------------------------------------------------
# agents


class FilteringAgent:
    """Agent i tracking a belief over (teammate model node, world state)."""

    name = "agent"

    def __init__(self, domain: DomainModel, behaviors, weights, labels=None):
        labels = list(labels) if labels is not None else [f"m{k}" for k in range(len(behaviors))]
        behaviors, weights, labels = merge_equivalent(behaviors, weights, labels)
        weights = weights / weights.sum()
        self.domain = domain
        self.labels = labels
        self.weights = weights
        self.behaviors = behaviors
        self.view = CyclicView(domain, behaviors)
        self.horizon = behaviors[0].horizon
        self.b = None
        self.t = 0
        self.resets: list[int] = []

    def reset(self) -> None:
        self.b = self.view.prior(self.weights, self.domain.initial_state_dist)
        self.t = 0
        self.resets = []

    def model_belief(self) -> np.ndarray:
        return self.view.model_marginal(self.b)

    def act(self, lookahead: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def observe(self, a: int, o: int) -> None:
        v = np.asarray(self.view.dynamics(0, a, o).T @ self.b).ravel()
        z = v.sum()
        self.t += 1
        if z > PRUNE_EPS:
            self.b = v / z
            return
        # impossible under every model: restart the model belief from the prior
        self.resets.append(self.t)
        log.info("%s: zero-likelihood observation at step %d, model belief reset", self.name, self.t)
        self.b = self.view.prior(self.weights, self._world_fallback(a, o), self.t % self.horizon)

    def _world_fallback(self, a: int, o: int) -> np.ndarray:
        d = self.domain
        bw = self.view.world_marginal(self.b)
        nxt = np.einsum("s,sjt,tj->t", bw, d.transition[:, a], d.observation_fn_i[:, a, :, o])
        z = nxt.sum()
        return nxt / z if z > 0 else np.asarray(d.initial_state_dist, dtype=float)


class IDIDAgent(FilteringAgent):
    """Receding-horizon I-DID agent over a fixed (possibly augmented) model space."""

    name = "aug-idid"

    def act(self, lookahead: int, rng: np.random.Generator) -> int:
        return solve_did(self.b, self.view, lookahead).action


@dataclass
class OptimalTeam:
    pi_i: PolicyTree
    pi_j: PolicyTree

    @classmethod
    def solve(cls, domain: DomainModel, horizon: int) -> OptimalTeam:
        pi_i, pi_j, _ = brute_force_oracle(domain, horizon)
        return cls(pi_i, pi_j)


def _draw(p, rng) -> int:
    c = np.cumsum(p)
    return min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(c) - 1)


def opat_po_step(belief, domain: DomainModel, lookahead: int, rollouts: int, seed,
                 team: OptimalTeam | None = None, nodes: Sequence[PolicyTree] | None = None
                 ) -> int:
    """Rollout best response assuming the teammate plays its optimal policy.

    ``belief`` is over world states (teammate at the root of its optimal
    tree) or, with ``nodes``, a ``[len(nodes), |S|]`` array over (teammate
    node, world state).  After the evaluated first action, i continues with
    its own optimal policy.  Every action is scored on the same random
    stream; ties go to the smallest action index.
    """
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    team = team or OptimalTeam.solve(domain, lookahead)
    b = np.asarray(belief, dtype=float)
    if nodes is None:
        nodes = [team.pi_j]
        b = b[None, :]
    S = domain.n_states
    flat = b.ravel() / b.sum()
    scores = np.zeros(len(domain.actions_i))
    for a in range(len(domain.actions_i)):
        rng = np.random.default_rng(seed)
        total = 0.0
        for _ in range(rollouts):
            g = _draw(flat, rng)
            j_node, s = nodes[g // S], g % S
            i_node = team.pi_i
            for step in range(lookahead):
                ai = a if step == 0 else i_node.action
                aj = j_node.action
                total += domain.reward[s, ai, aj]
                s = _draw(domain.transition[s, ai, aj], rng)
                oi = _draw(domain.observation_fn_i[s, ai, aj], rng)
                oj = _draw(domain.observation_fn_j[s, ai, aj], rng)
                i_node = i_node.children[oi] if i_node.children else team.pi_i
                j_node = j_node.children[oj] if j_node.children else team.pi_j
        scores[a] = total / rollouts
    best = scores.max()
    return int(np.flatnonzero(scores >= best - TIE_TOL)[0])


class OPATAgent(FilteringAgent):
    """OPAT-PO: plans assuming the teammate plays its optimal policy.

    The world-state belief is filtered with the optimal teammate's cyclic
    policy; each decision is a fresh stage game in which the teammate starts
    from the root of that policy.
    """

    name = "opat-po"

    def __init__(self, domain: DomainModel, team: OptimalTeam, rollouts: int = 50):
        super().__init__(domain, [behavior_from_tree(team.pi_j)], [1.0], ["optimal"])
        self.team = team
        self.rollouts = rollouts

    def act(self, lookahead: int, rng: np.random.Generator) -> int:
        seed = int(rng.integers(2 ** 32))
        return opat_po_step(self.view.world_marginal(self.b), self.domain, lookahead,
                            self.rollouts, seed, self.team)


# --------------------------------------------------------------------------
# agent construction


def build_idid_agent(domain: DomainModel, horizon: int, learned: Sequence[LearnedPolicy] = (),
                     *, level: int = 1, K: int = 32, weighting: str = "uniform",
                     augmented: bool = True, **prior) -> IDIDAgent:
    """Solve an I-DID offline and turn its level-0 model space into an online agent."""
    idid = build_idid(domain, level, horizon, weighting=weighting, K=K, **prior)
    if augmented:
        solve_augmented_idid(idid, list(learned))
    else:
        solve_idid(idid)
    bottom = idid
    while bottom.level > 1:
        bottom = bottom.models[0]
    if level > 1:
        behaviors, weights = [idid.models[0].behavior], [1.0]
        labels = ["level-%d" % (level - 1)]
    else:
        behaviors = [m.behavior for m in bottom.models]
        weights = bottom.weights if bottom.weights is not None else np.full(len(behaviors),
                                                                             1 / len(behaviors))
        labels = [_model_label(m, k) for k, m in enumerate(bottom.models)]
    agent = IDIDAgent(domain, behaviors, weights, labels)
    agent.name = "aug-idid" if augmented else "idid"
    agent.models = list(bottom.models)
    return agent


def _model_label(m, k: int) -> str:
    kind = "learned" if m.frame.__class__.__name__ == "LearningFrame" else "planned"
    return f"{kind}{k}"


def true_model_script(agent: FilteringAgent, index: int | None = None) -> TeammateScript:
    """A teammate playing one of the agent's models (default: the most probable)."""
    k = int(np.argmax(agent.weights)) if index is None else index
    return TeammateScript("true-model", policy=agent.behaviors[k])


# --------------------------------------------------------------------------
# episodes


@dataclass
class StepRecord:
    state: int
    a_i: int
    a_j: int
    o_i: int
    o_j: int
    reward: float


@dataclass
class EpisodeLog:
    records: list[StepRecord] = field(default_factory=list)
    model_beliefs: list[np.ndarray] = field(default_factory=list)
    model_labels: list[str] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)

    @property
    def cumulative(self) -> float:
        return float(sum(r.reward for r in self.records))

    def __len__(self):
        return len(self.records)


def run_episode(agent: FilteringAgent, teammate: Teammate, domain: DomainModel, steps: int,
                lookahead: int, seed) -> EpisodeLog:
    """Play ``steps`` steps; i replans every step from its filtered belief."""
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, agent_ss, mate_ss = ss.spawn(3)
    env_rng, agent_rng = np.random.default_rng(env_ss), np.random.default_rng(agent_ss)
    mate_rng = np.random.default_rng(mate_ss)
    agent.reset()
    teammate.reset()
    log_ = EpisodeLog(model_labels=list(agent.labels))
    s = _draw(domain.initial_state_dist, env_rng)
    for t in range(steps):
        ai = agent.act(lookahead, agent_rng)
        aj = teammate.act(t, mate_rng)
        r = float(domain.reward[s, ai, aj])
        s2 = _draw(domain.transition[s, ai, aj], env_rng)
        oi = _draw(domain.observation_fn_i[s2, ai, aj], env_rng)
        oj = _draw(domain.observation_fn_j[s2, ai, aj], env_rng)
        agent.observe(ai, oi)
        teammate.observe(t, aj, oj)
        log_.records.append(StepRecord(s, ai, aj, oi, oj, r))
        log_.model_beliefs.append(agent.model_belief())
        s = s2
    log_.resets = list(agent.resets)
    return log_


# --------------------------------------------------------------------------
# comparisons


@dataclass
class RunSummary:
    agent: str
    teammate: str
    rewards: list[float]
    baseline: str | None = None
    t_stat: float = float("nan")
    p_value: float = float("nan")

    @property
    def n(self) -> int:
        return len(self.rewards)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.rewards)

    @property
    def std(self) -> float:
        return statistics.stdev(self.rewards) if len(self.rewards) > 1 else 0.0


def significance(x: Sequence[float], y: Sequence[float], equal_var: bool = False
                 ) -> tuple[float, float]:
    """Two-sample t-test (Welch by default); identical constant samples give p = 1."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 and np.ptp(y) == 0:
        return (0.0, 1.0) if x[0] == y[0] else (math.copysign(math.inf, x[0] - y[0]), 0.0)
    res = stats.ttest_ind(x, y, equal_var=equal_var)
    return float(res.statistic), float(res.pvalue)


def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, trial])


def _run_cell(args):
    agent, script, domain, steps, lookahead, master, trial, horizon, oracle = args
    mate = make_teammate(script, domain, steps, horizon, trial, oracle)
    return run_episode(agent, mate, domain, steps, lookahead, trial_seed(master, trial))


def compare(agents: Sequence[FilteringAgent], teammates: Sequence[TeammateScript],
            domain: DomainModel, trials: int, steps: int, lookahead: int = 3, seed: int = 0,
            baseline: str | None = "opat-po", horizon: int = 3, workers: int = 1,
            equal_var: bool = False) -> tuple[list[RunSummary], dict]:
    """Every agent against every teammate kind; returns summaries and episode logs.

    Trial ``k`` uses the same random streams for every agent.  Results do
    not depend on ``workers``.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    oracle = None
    if any(s.kind in ("optimal", "switching") for s in teammates):
        oracle = brute_force_oracle(domain, horizon)[:2]
    jobs, keys = [], []
    for script in teammates:
        for agent in agents:
            for trial in range(trials):
                jobs.append((agent, script, domain, steps, lookahead, seed, trial, horizon, oracle))
                keys.append((script.kind, agent.name, trial))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    logs = dict(zip(keys, results))
    summaries = []
    for script in teammates:
        base = None
        if baseline is not None:
            base = [logs[(script.kind, baseline, k)].cumulative for k in range(trials)
                    if (script.kind, baseline, k) in logs]
        for agent in agents:
            rewards = [logs[(script.kind, agent.name, k)].cumulative for k in range(trials)]
            summ = RunSummary(agent.name, script.kind, rewards)
            if base and agent.name != baseline:
                summ.baseline = baseline
                summ.t_stat, summ.p_value = significance(rewards, base, equal_var)
            summaries.append(summ)
    return summaries, logs


# --------------------------------------------------------------------------
# output


def write_summary_csv(path, summaries: Sequence[RunSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["teammate", "agent", "trials", "mean", "std", "baseline", "t", "p_value"])
        for s in summaries:
            w.writerow([s.teammate, s.agent, s.n, f"{s.mean:.6f}", f"{s.std:.6f}",
                        s.baseline or "", _fmt(s.t_stat), _fmt(s.p_value)])


def write_episodes_csv(path, logs: dict, domain: DomainModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["teammate", "agent", "trial", "step", "state", "a_i", "a_j", "o_i", "o_j",
                    "reward", "cumulative"])
        for (mate, agent, trial), lg in sorted(logs.items()):
            cum = 0.0
            for t, r in enumerate(lg.records):
                cum += r.reward
                w.writerow([mate, agent, trial, t, domain.states[r.state],
                            domain.actions_i[r.a_i], domain.actions_j[r.a_j],
                            domain.observations_i[r.o_i], domain.observations_j[r.o_j],
                            f"{r.reward:.6g}", f"{cum:.6g}"])


def write_belief_csv(path, logs: dict) -> None:
    """Long-format model-belief traces: one row per (episode, step, model)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["teammate", "agent", "trial", "step", "model", "belief"])
        for (mate, agent, trial), lg in sorted(logs.items()):
            for t, row in enumerate(lg.model_beliefs):
                for label, p in zip(lg.model_labels, row):
                    w.writerow([mate, agent, trial, t + 1, label, f"{p:.10f}"])


def _fmt(x: float) -> str:
    return "" if x != x else f"{x:.6g}"
