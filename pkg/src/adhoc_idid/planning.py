"""Exact finite-horizon planning over reachable beliefs and joint policy evaluation.

A *view* is the single-agent planning problem handed to :func:`solve_did`.
It exposes, per time layer ``t``, a reward matrix ``[n_states(t), A]`` and
unnormalized update matrices ``M[t, a, o]`` of shape
``[n_states(t), n_states(t + 1)]`` with
``M[x, x'] = P(x', o | x, a)``.  Stationary views serve level-0 models;
:class:`InteractiveView` serves interactive states ``(world state, model)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .domains import DomainModel
from .policy import (
    BehaviorNode,
    PolicyTree,
    behavior_from_tree,
    constant_tree,
    count_trees,
    enumerate_action_arrays,
    from_actions,
    history_count,
)

PRUNE_EPS = 1e-12
TIE_TOL = 1e-9
MAX_TREES = 10 ** 5


class ImpossibleObservation(ValueError):
    """The observation has zero likelihood under the current belief."""


class OracleTooLarge(ValueError):
    def __init__(self, trees_per_agent: int, message: str):
        super().__init__(message)
        self.trees_per_agent = trees_per_agent


class HorizonMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# views


class StationaryView:
    def __init__(self, dynamics: np.ndarray, reward: np.ndarray):
        self._dyn = dynamics  # [A, O, S, S']
        self._reward = reward  # [S, A]
        self.n_actions, self.n_obs = dynamics.shape[:2]

    def n_states(self, t: int) -> int:
        return self._reward.shape[0]

    def reward(self, t: int) -> np.ndarray:
        return self._reward

    def dynamics(self, t: int, a: int, o: int) -> np.ndarray:
        return self._dyn[a, o]


def planning_view(domain: DomainModel, agent: str = "j", other_dist=None) -> StationaryView:
    """Level-0 view for ``agent``: the other agent's action is noise drawn from ``other_dist``.

    Without ``other_dist`` the other agent is assumed to act uniformly at random.
    """
    d = domain.as_agent(agent)
    n_other = len(d.actions_j)
    p = np.full(n_other, 1.0 / n_other) if other_dist is None else np.asarray(other_dist, float)
    # P(s', o | s, a) = sum_b p(b) T(s'|s,a,b) O(o|s',a,b)
    dyn = np.einsum("b,sabt,tabo->aost", p, d.transition, d.observation_fn_i)
    reward = np.einsum("b,sab->sa", p, d.reward)
    return StationaryView(dyn, reward)


class InteractiveView:
    """Interactive states ``(model, world state)`` laid out in time layers.

    ``layer_probs[t][k]`` is the action distribution predicted by model ``k``
    at layer ``t``; ``links[t][k][(a, o)]`` gives its successor index in
    layer ``t + 1``.  The subject agent occupies the i slot of ``domain``.
    State index within a layer is ``k * |S| + s``.
    """

    def __init__(self, domain: DomainModel, layer_probs, links):
        self.domain = domain
        self.layer_probs = layer_probs
        self.links = links
        self.S = domain.n_states
        self.n_actions = len(domain.actions_i)
        self.n_obs = len(domain.observations_i)
        self.n_other_obs = len(domain.observations_j)
        self._reward_cache: dict[int, np.ndarray] = {}
        self._dyn_cache: dict[tuple[int, int], list] = {}

    @property
    def n_layers(self) -> int:
        return len(self.layer_probs)

    def n_states(self, t: int) -> int:
        return self.S * len(self.layer_probs[t])

    def reward(self, t: int) -> np.ndarray:
        got = self._reward_cache.get(t)
        if got is None:
            R = self.domain.reward
            rows = []
            for probs in self.layer_probs[t]:
                r = np.zeros((self.S, self.n_actions))
                for aj, p in probs:
                    r += p * R[:, :, aj]
                rows.append(r)
            got = self._reward_cache[t] = np.vstack(rows)
        return got

    def dynamics(self, t: int, a: int, o: int):
        got = self._dyn_cache.get((t, a))
        if got is None:
            got = self._dyn_cache[(t, a)] = self._build(t, a)
        return got[o]

    def _build(self, t: int, a: int) -> list:
        d, S = self.domain, self.S
        n_next = len(self.layer_probs[t + 1])
        rows, cols, vals = [[] for _ in range(self.n_obs)], [[] for _ in range(self.n_obs)], \
            [[] for _ in range(self.n_obs)]
        base_r = np.repeat(np.arange(S), S)
        base_c = np.tile(np.arange(S), S)
        for k, probs in enumerate(self.layer_probs[t]):
            link = self.links[t][k]
            for aj, p in probs:
                trans = d.transition[:, a, aj, :]  # [s, s']
                for oj in range(self.n_other_obs):
                    kk = link[(aj, oj)]
                    zj = d.observation_fn_j[:, a, aj, oj]
                    for oi in range(self.n_obs):
                        block = p * trans * (d.observation_fn_i[:, a, aj, oi] * zj)[None, :]
                        flat = block.ravel()
                        nz = flat > 0
                        if not nz.any():
                            continue
                        rows[oi].append(k * S + base_r[nz])
                        cols[oi].append(kk * S + base_c[nz])
                        vals[oi].append(flat[nz])
        shape = (self.n_states(t), S * n_next)
        out = []
        for oi in range(self.n_obs):
            if rows[oi]:
                m = sp.coo_matrix((np.concatenate(vals[oi]),
                                   (np.concatenate(rows[oi]), np.concatenate(cols[oi]))),
                                  shape=shape).tocsr()
            else:
                m = sp.csr_matrix(shape)
            out.append(m)
        return out


def tree_layers(roots, horizon: int, dedupe: bool = True):
    """Layer a list of behavior roots into ``(layer_probs, links, layer_nodes)``.

    With ``dedupe`` behaviorally equivalent nodes share one index per layer.
    """
    layer_nodes = [list(roots)]
    if dedupe:
        layer_nodes[0] = list(dict.fromkeys(roots))
    links = []
    for t in range(horizon - 1):
        nxt: list = []
        index: dict = {}
        link_t = []
        for node in layer_nodes[t]:
            link = {}
            for ao, child in node.children.items():
                if dedupe:
                    if child not in index:
                        index[child] = len(nxt)
                        nxt.append(child)
                    link[ao] = index[child]
                else:
                    link[ao] = len(nxt)
                    nxt.append(child)
            link_t.append(link)
        links.append(link_t)
        layer_nodes.append(nxt)
    probs = [[n.probs for n in layer] for layer in layer_nodes]
    return probs, links, layer_nodes


def fold(domain: DomainModel, other_policy: PolicyTree, perspective: str = "j") -> InteractiveView:
    """Single-agent view for ``perspective`` with the other agent playing ``other_policy``."""
    d = domain.as_agent(perspective)
    probs, links, _ = tree_layers([behavior_from_tree(other_policy)], other_policy.horizon)
    return InteractiveView(d, probs, links)


# --------------------------------------------------------------------------
# belief update and exact DID solution


def _propagate(M, b: np.ndarray) -> np.ndarray:
    return np.asarray(M.T @ b).ravel()


def belief_update(b, a: int, o: int, view, t: int = 0) -> np.ndarray:
    """Bayes filter posterior after acting ``a`` and observing ``o`` at layer ``t``."""
    b = np.asarray(b, dtype=float)
    v = _propagate(view.dynamics(t, a, o), b)
    z = v.sum()
    if not z > 0:
        raise ImpossibleObservation(f"observation {o} has zero likelihood after action {a}")
    return v / z


def observation_likelihood(b, a: int, o: int, view, t: int = 0) -> float:
    return float(_propagate(view.dynamics(t, a, o), np.asarray(b, float)).sum())


class _Plan:
    __slots__ = ("value", "q", "best", "kids", "depth")

    def __init__(self, value, q, best, kids, depth):
        self.value, self.q, self.best, self.kids, self.depth = value, q, best, kids, depth


def _plan(view, b: np.ndarray, t: int, depth: int, discount: float) -> _Plan:
    q = b @ view.reward(t)
    q = np.array(q, dtype=float).ravel()
    kids: dict = {}
    if depth > 1:
        for a in range(view.n_actions):
            for o in range(view.n_obs):
                v = _propagate(view.dynamics(t, a, o), b)
                p = v.sum()
                if p > PRUNE_EPS:
                    sub = _plan(view, v / p, t + 1, depth - 1, discount)
                    q[a] += discount * p * sub.value
                    kids[(a, o)] = sub
    value = float(q.max())
    best = tuple(a for a in range(view.n_actions) if q[a] >= value - TIE_TOL)
    return _Plan(value, q, best, kids, depth)


def _to_tree(plan: _Plan, n_obs: int) -> PolicyTree:
    a = plan.best[0]  # lexicographic tie-break
    if plan.depth == 1:
        return PolicyTree(a, (), plan.value)
    children = []
    for o in range(n_obs):
        sub = plan.kids.get((a, o))
        children.append(_to_tree(sub, n_obs) if sub is not None
                        else constant_tree(0, n_obs, plan.depth - 1, reachable=False))
    return PolicyTree(a, tuple(children), plan.value)


def _to_behavior(plan: _Plan, n_obs: int) -> BehaviorNode:
    p = 1.0 / len(plan.best)
    kids = {}
    if plan.depth > 1:
        for a in plan.best:
            for o in range(n_obs):
                sub = plan.kids.get((a, o))
                kids[(a, o)] = (_to_behavior(sub, n_obs) if sub is not None else
                                behavior_from_tree(constant_tree(0, n_obs, plan.depth - 1, False)))
    return BehaviorNode(tuple((a, p) for a in plan.best), kids)


def solve_did(b0, view, horizon: int, t0: int = 0, discount: float = 1.0) -> PolicyTree:
    """Exact optimal depth-``horizon`` policy tree from belief ``b0``.

    Ties go to the smallest action index.  Observation branches that cannot
    occur get the default action 0 and are flagged unreachable.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    plan = _plan(view, np.asarray(b0, dtype=float), t0, horizon, discount)
    return _to_tree(plan, view.n_obs)


def solve_did_behavior(b0, view, horizon: int, t0: int = 0,
                       discount: float = 1.0) -> tuple[PolicyTree, BehaviorNode, np.ndarray]:
    """Like :func:`solve_did` but also returns the tie-aware behavior and root Q values."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    plan = _plan(view, np.asarray(b0, dtype=float), t0, horizon, discount)
    return _to_tree(plan, view.n_obs), _to_behavior(plan, view.n_obs), plan.q


def policy_value(b0, view, tree: PolicyTree, t0: int = 0, discount: float = 1.0) -> float:
    """Expected utility of following ``tree`` from ``b0`` in ``view``."""
    b = np.asarray(b0, dtype=float)
    total = float(b @ view.reward(t0)[:, tree.action])
    for o, child in enumerate(tree.children):
        v = _propagate(view.dynamics(t0, tree.action, o), b)
        p = v.sum()
        if p > PRUNE_EPS:
            total += discount * p * policy_value(v / p, view, child, t0 + 1, discount)
    return total


# --------------------------------------------------------------------------
# joint evaluation


@dataclass
class ValueReport:
    value: float
    per_step: list[float]


def joint_value(model: DomainModel, pi_i: PolicyTree, pi_j: PolicyTree,
                discount: float | None = None) -> ValueReport:
    """Exact expected team reward by forward enumeration of (state, node_i, node_j)."""
    if pi_i.horizon != pi_j.horizon:
        raise HorizonMismatch(f"policy depths differ: {pi_i.horizon} vs {pi_j.horizon}")
    gamma = model.discount if discount is None else discount
    T, Zi, Zj, R = model.transition, model.observation_fn_i, model.observation_fn_j, model.reward
    nodes = {id(pi_i): pi_i, id(pi_j): pi_j}
    dist = {(int(s), id(pi_i), id(pi_j)): float(p)
            for s, p in enumerate(model.initial_state_dist) if p > PRUNE_EPS}
    per_step = []
    for t in range(pi_i.horizon):
        r = 0.0
        nxt: dict = {}
        for (s, ki, kj), p in dist.items():
            ni, nj = nodes[ki], nodes[kj]
            ai, aj = ni.action, nj.action
            r += p * R[s, ai, aj]
            if not ni.children:
                continue
            for s2 in np.flatnonzero(T[s, ai, aj] > 0):
                pt = p * T[s, ai, aj, s2]
                for oi in np.flatnonzero(Zi[s2, ai, aj] > 0):
                    ci = ni.children[oi]
                    nodes[id(ci)] = ci
                    for oj in np.flatnonzero(Zj[s2, ai, aj] > 0):
                        q = pt * Zi[s2, ai, aj, oi] * Zj[s2, ai, aj, oj]
                        if q < PRUNE_EPS:
                            continue
                        cj = nj.children[oj]
                        nodes[id(cj)] = cj
                        key = (int(s2), id(ci), id(cj))
                        nxt[key] = nxt.get(key, 0.0) + q
        per_step.append(float(gamma ** t * r))
        dist = nxt
    return ValueReport(float(sum(per_step)), per_step)


def evaluate_batch(model: DomainModel, acts_i: np.ndarray, acts_j: np.ndarray, horizon: int,
                   discount: float | None = None) -> np.ndarray:
    """Values of one i policy against a batch of j policies (BFS action arrays).

    ``acts_i`` has shape ``[n_hist_i]``; ``acts_j`` has shape ``[K, n_hist_j]``.
    """
    gamma = model.discount if discount is None else discount
    T, Zi, Zj, R = model.transition, model.observation_fn_i, model.observation_fn_j, model.reward
    S = model.n_states
    Oi, Oj = Zi.shape[-1], Zj.shape[-1]
    acts_j = np.atleast_2d(acts_j)
    K = acts_j.shape[0]
    P = np.broadcast_to(model.initial_state_dist[None, :, None, None], (K, S, 1, 1)).copy()
    values = np.zeros(K)
    s_idx = np.arange(S)
    for t in range(horizon):
        ai = acts_i[history_count(Oi, t): history_count(Oi, t + 1)]
        aj = acts_j[:, history_count(Oj, t): history_count(Oj, t + 1)]
        Rg = R[s_idx[None, :, None, None], ai[None, None, :, None], aj[:, None, None, :]]
        values += gamma ** t * np.einsum("kshj,kshj->k", P, Rg)
        if t == horizon - 1:
            break
        Tg = T[s_idx[None, :, None, None], ai[None, None, :, None], aj[:, None, None, :]]
        X = np.einsum("kshj,kshjt->khjt", P, Tg)
        Zig = Zi[s_idx[None, None, None, :], ai[None, :, None, None], aj[:, None, :, None]]
        Zjg = Zj[s_idx[None, None, None, :], ai[None, :, None, None], aj[:, None, :, None]]
        P = np.einsum("khjt,khjtp,khjtq->kthpjq", X, Zig, Zjg)
        Hi, Hj = P.shape[2], P.shape[4]
        P = P.reshape(K, S, Hi * Oi, Hj * Oj)
    return values


def _guard(model: DomainModel, horizon: int) -> tuple[int, int]:
    n_i = count_trees(len(model.actions_i), len(model.observations_i), horizon)
    n_j = count_trees(len(model.actions_j), len(model.observations_j), horizon)
    worst = max(n_i, n_j)
    if worst > MAX_TREES:
        hi = history_count(len(model.observations_i), horizon)
        raise OracleTooLarge(worst, f"{model.name} horizon {horizon}: {len(model.actions_i)}^{hi}"
                                    f" = {worst} policy trees per agent exceeds {MAX_TREES}")
    return n_i, n_j


def value_matrix(model: DomainModel, horizon: int, chunk: int = 512) -> np.ndarray:
    """Exhaustive joint values ``V[i_tree, j_tree]`` in enumeration order."""
    _guard(model, horizon)
    Oi, Oj = len(model.observations_i), len(model.observations_j)
    all_i = enumerate_action_arrays(len(model.actions_i), Oi, horizon)
    all_j = enumerate_action_arrays(len(model.actions_j), Oj, horizon)
    V = np.empty((len(all_i), len(all_j)))
    for r, acts in enumerate(all_i):
        for c0 in range(0, len(all_j), chunk):
            V[r, c0:c0 + chunk] = evaluate_batch(model, acts, all_j[c0:c0 + chunk], horizon)
    return V


def brute_force_oracle(model: DomainModel, horizon: int
                       ) -> tuple[PolicyTree, PolicyTree, ValueReport]:
    """Jointly optimal policy pair by exhaustive enumeration.

    Stands in for a Dec-POMDP solver at desk scale.  Among joint optima the
    smallest enumeration index (i-major) wins.
    """
    V = value_matrix(model, horizon)
    best = V.max()
    flat = int(np.flatnonzero(V.ravel() >= best - TIE_TOL)[0])
    r, c = divmod(flat, V.shape[1])
    Oi, Oj = len(model.observations_i), len(model.observations_j)
    pi_i = from_actions(enumerate_action_arrays(len(model.actions_i), Oi, horizon)[r], Oi, horizon)
    pi_j = from_actions(enumerate_action_arrays(len(model.actions_j), Oj, horizon)[c], Oj, horizon)
    return pi_i, pi_j, joint_value(model, pi_i, pi_j)


def best_response(model: DomainModel, fixed: PolicyTree, responder: str = "j"
                  ) -> tuple[PolicyTree, float]:
    """Best response of ``responder`` to ``fixed`` by enumerating its policy trees."""
    d = model.as_agent("j" if responder == "i" else "i")  # fixed policy in the i slot
    horizon = fixed.horizon
    _guard(d, horizon)
    Oj = len(d.observations_j)
    all_j = enumerate_action_arrays(len(d.actions_j), Oj, horizon)
    acts = np.asarray(fixed.to_actions())
    vals = np.concatenate([evaluate_batch(d, acts, all_j[c:c + 512], horizon)
                           for c in range(0, len(all_j), 512)])
    k = int(np.flatnonzero(vals >= vals.max() - TIE_TOL)[0])
    return from_actions(all_j[k], Oj, horizon), float(vals[k])
