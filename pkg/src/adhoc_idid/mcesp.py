"""Policy search over observation histories by Monte Carlo exploring starts.

The learner's Q table is keyed by ``(observation history, action)``.  Each
batch of ``n_saa`` sampled trajectories yields one sample-average return per
visited pair, blended into Q with learning rate ``alpha``.  A neighbouring
policy (one history's action changed) is tried after every batch and kept
when its Q value beats the incumbent's.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domains import DomainModel, ProjectedEnv, project
from .idid import LearnedPolicy, LearningFrame, Level0Model
from .planning import joint_value
from .policy import PolicyTree, all_histories, from_actions, history_index, random_tree

log = logging.getLogger(__name__)

History = tuple


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.9
    gamma: float = 1.0
    n_saa: int = 25
    max_iterations: int = 2000
    seed: int = 0
    patience: int = 10
    explore_start: float = 0.2

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.n_saa < 1:
            raise ValueError("n_saa must be >= 1")


@dataclass
class Trajectory:
    """``*, a0, r0, o1, a1, r1, ..., o_T``: actions, rewards and observations o1..o_T."""

    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    observations: list[int] = field(default_factory=list)

    def history(self, t: int) -> History:
        return tuple(self.observations[:t])


@dataclass
class QTable:
    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    fresh: dict = field(default_factory=dict)

    def get(self, h: History, a: int) -> float:
        return self.values.get((h, a), 0.0)

    def update(self, h: History, a: int, ret: float, alpha: float, n: int = 1) -> None:
        key = (h, a)
        self.values[key] = q_update(self.values.get(key, 0.0), alpha, ret)
        self.counts[key] = self.counts.get(key, 0) + n
        self.fresh[key] = self.fresh.get(key, 0) + n

    def reset_fresh(self) -> None:
        self.fresh.clear()


def q_update(q: float, alpha: float, ret: float) -> float:
    return (1 - alpha) * q + alpha * ret


def post_history_return(traj: Trajectory, history: History, gamma: float = 1.0) -> float | None:
    """Discounted reward from the first occurrence of ``history`` to the end.

    Exponents use absolute time.  Returns ``None`` when ``history`` does not
    occur in ``traj``.
    """
    t0 = len(history)
    if t0 >= len(traj.rewards) or tuple(traj.observations[:t0]) != tuple(history):
        return None
    return float(sum(gamma ** t * traj.rewards[t] for t in range(t0, len(traj.rewards))))


def terminate_saa(q: QTable, reachable, n_actions: int, n_saa: int,
                  changed_last: bool = False) -> bool:
    """True when every reachable (history, action) pair has ``n_saa`` fresh samples."""
    if changed_last:
        return False
    return all(q.fresh.get((h, a), 0) >= n_saa for h in reachable for a in range(n_actions))


def rollout(env: ProjectedEnv, actions: dict, horizon: int, n_obs: int,
            rng: np.random.Generator, explore: float = 0.0) -> Trajectory:
    traj = Trajectory()
    env.reset(rng)
    for t in range(horizon):
        h = traj.history(t)
        a = actions[h]
        if t == 0 and explore > 0 and rng.random() < explore:
            a = int(rng.integers(env.n_actions))
        o, r = env.step(a, rng)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.observations.append(o)
    return traj


def _run_batch(env, actions, horizon, n_obs, cfg, rng, q: QTable, seen: set) -> None:
    sums: dict = {}
    for _ in range(cfg.n_saa):
        traj = rollout(env, actions, horizon, n_obs, rng, cfg.explore_start)
        for t in range(horizon):
            h = traj.history(t)
            seen.add(h)
            ret = post_history_return(traj, h, cfg.gamma)
            key = (h, traj.actions[t])
            tot, n = sums.get(key, (0.0, 0))
            sums[key] = (tot + ret, n + 1)
    for (h, a), (tot, n) in sums.items():
        q.update(h, a, tot / n, cfg.alpha, n)


def learn_level0(model: Level0Model, env: ProjectedEnv, cfg: LearnerConfig,
                 rng: np.random.Generator, trace: list | None = None
                 ) -> tuple[PolicyTree, QTable]:
    """Learn the modeled agent's policy against the folded-in partner.

    Starts from the frame's seed policy.  ``trace`` (if given) receives one
    ``(iteration, history, action, accepted, exact value)`` row per tried
    perturbation.
    """
    frame = model.frame
    if not isinstance(frame, LearningFrame):
        raise TypeError("learn_level0 needs a model with a learning frame")
    horizon = model.horizon
    if frame.seed_policy.horizon != horizon or env.horizon < horizon:
        raise ValueError("seed policy and environment must cover the model horizon")
    n_obs, n_act = env.n_obs, env.n_actions
    hists = all_histories(n_obs, horizon)
    actions = {h: frame.seed_policy.act(h) for h in hists}
    q = QTable()
    seen: set = set()
    _run_batch(env, actions, horizon, n_obs, cfg, rng, q, seen)  # warm-up on the seed
    discards = 0
    for it in range(cfg.max_iterations):
        if terminate_saa(q, seen, n_act, cfg.n_saa) or discards >= cfg.patience:
            break
        # least-sampled alternative first, ties broken at random
        cands = [(h, a) for h in sorted(seen) for a in range(n_act) if a != actions[h]]
        if not cands:
            break
        fewest = min(q.fresh.get(c, 0) for c in cands)
        pool = [c for c in cands if q.fresh.get(c, 0) == fewest]
        h, a = pool[int(rng.integers(len(pool)))]
        trial = dict(actions)
        trial[h] = a
        _run_batch(env, trial, horizon, n_obs, cfg, rng, q, seen)
        switch = _greedy_switch(q, actions, trial, h, a, seen, n_act)
        accepted = switch is not None
        if accepted:
            actions = switch
            q.reset_fresh()
            seen = set()
            discards = 0
            _run_batch(env, actions, horizon, n_obs, cfg, rng, q, seen)
        else:
            discards += 1
        if trace is not None:
            value = env.exact_value(_tree(actions, n_obs, horizon))
            trace.append((it, h, a, accepted, value))
    return _tree(actions, n_obs, horizon), q


def _greedy_switch(q: QTable, actions: dict, trial: dict, h, a, seen, n_act) -> dict | None:
    """Policy after switching to a better-valued action, or None.

    The perturbed history is checked first; otherwise any history whose
    freshly sampled alternative (e.g. from an exploring start) beats the
    incumbent action switches.
    """
    if q.fresh.get((h, a), 0) > 0 and q.get(h, a) > q.get(h, actions[h]):
        return trial
    for g in sorted(seen, key=lambda x: (len(x), x)):
        cur = actions[g]
        if q.fresh.get((g, cur), 0) == 0:
            continue
        best = max((b for b in range(n_act) if q.fresh.get((g, b), 0) > 0),
                   key=lambda b: (q.get(g, b), -b))
        if best != cur and q.get(g, best) > q.get(g, cur):
            out = dict(actions)
            out[g] = best
            return out
    return None


def _tree(actions: dict, n_obs: int, horizon: int) -> PolicyTree:
    flat = [0] * len(actions)
    for h, a in actions.items():
        flat[history_index(h, n_obs)] = a
    return from_actions(flat, n_obs, horizon)


# --------------------------------------------------------------------------
# collaborative candidate generation


def _learn_against(domain, partner, seed, cfg, rng, trace=None):
    frame = LearningFrame(cfg.alpha, seed, partner)
    model = Level0Model(domain, domain.initial_state_dist, frame, seed.horizon, "j")
    env = project(domain, partner, "j")
    tree, _ = learn_level0(model, env, cfg, rng, trace)
    return tree


def _one_restart(domain: DomainModel, horizon: int, cfg: LearnerConfig,
                 seed_seq: np.random.SeedSequence, restart: int,
                 keep_trace: bool = False, max_rounds: int = 20
                 ) -> tuple[list[LearnedPolicy], list]:
    rng = np.random.default_rng(seed_seq)
    n_ai, n_oi = len(domain.actions_i), len(domain.observations_i)
    n_aj, n_oj = len(domain.actions_j), len(domain.observations_j)
    pi_i = random_tree(rng, n_ai, n_oi, horizon)
    seed = random_tree(rng, n_aj, n_oj, horizon)
    trace: list | None = [] if keep_trace else None
    pi_j = _learn_against(domain, pi_i, seed, cfg, rng, trace)
    found = [LearnedPolicy(pi_j, joint_value(domain, pi_i, pi_j).value, pi_i)]
    shared = (n_ai, n_oi) == (n_aj, n_oj)
    for _ in range(max_rounds if shared else 0):
        # the incumbent plays both roles; a better neighbour must raise team utility
        base = joint_value(domain, pi_j, pi_j).value
        nxt = _learn_against(domain, pi_j, pi_j, cfg, rng, trace)
        gain = joint_value(domain, pi_j, nxt).value
        if gain <= base + 1e-9:
            break
        found.append(LearnedPolicy(pi_j, base, pi_j))
        found.append(LearnedPolicy(nxt, gain, pi_j))
        pi_j = nxt
    rows = [(restart,) + row for row in trace or ()]
    return found, rows


def generate_collaborative_set(domain: DomainModel, horizon: int, restarts: int = 20,
                               cfg: LearnerConfig | None = None, workers: int = 1,
                               trace: list | None = None) -> list[LearnedPolicy]:
    """Candidate collaborative level-0 policies for j, deduplicated.

    Each restart learns against a random policy of i, then repeatedly learns
    against the incumbent itself while team utility improves.  Every
    candidate carries its exact team utility with the partner it was learned
    against; duplicates keep the highest utility.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    cfg = cfg or LearnerConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(restarts)
    args = [(domain, horizon, cfg, s, k, trace is not None) for k, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_restart_star, args))
    else:
        results = [_one_restart(*a) for a in args]
    best: dict = {}
    for found, rows in results:
        if trace is not None:
            trace.extend(rows)
        for cand in found:
            got = best.get(cand.policy)
            if got is None or cand.value > got.value + 1e-12:
                best[cand.policy] = cand
    out = list(best.values())
    log.info("collaborative set: %d candidates from %d restarts", len(out), restarts)
    return out


def _one_restart_star(args):
    return _one_restart(*args)


def write_trace(path, rows, obs_labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart", "iteration", "history", "action", "accepted", "exact_value"])
        for restart, it, h, a, acc, val in rows:
            w.writerow([restart, it, "/".join(obs_labels[o] for o in h) or "*", a, int(acc),
                        f"{val:.10g}"])
