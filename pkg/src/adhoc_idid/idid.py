"""Level-l interactive dynamic influence diagrams.

Agent i's I-DID holds a weighted space of j's level-(l-1) models.  Solving
proceeds bottom-up: every lower model is solved, the model space is expanded
one time slice at a time (merging behaviorally equivalent models), and the
result is planned over exactly as a single-agent problem whose hidden state
is the pair (world state, j's current model).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domains import DomainModel
from .planning import (
    PRUNE_EPS,
    InteractiveView,
    fold,
    joint_value,
    planning_view,
    solve_did,
    solve_did_behavior,
)
from .policy import BehaviorNode, PolicyTree, behavior_from_tree

log = logging.getLogger(__name__)

DIVERSE_EPS = 1e-6


class UnsolvedModel(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanningFrame:
    """A DID frame: the other agent's action is treated as noise from ``other_action_dist``."""

    other_action_dist: tuple[float, ...] | None = None


@dataclass(frozen=True)
class LearningFrame:
    alpha: float
    seed_policy: PolicyTree
    other_policy: PolicyTree | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("learning rate must lie in (0, 1]")


@dataclass(eq=False)
class Level0Model:
    """``<belief, frame>`` for the modeled ``agent``, solved over ``horizon`` steps."""

    domain: DomainModel
    belief: np.ndarray
    frame: PlanningFrame | LearningFrame
    horizon: int
    agent: str = "j"
    policy: PolicyTree | None = None
    value: float | None = None
    behavior: BehaviorNode | None = None

    def __post_init__(self):
        self.belief = np.asarray(self.belief, dtype=float)
        if isinstance(self.frame, LearningFrame) and self.frame.seed_policy.horizon != self.horizon:
            raise ValueError("seed policy depth must equal the planning horizon")

    @property
    def solved(self) -> bool:
        return self.behavior is not None

    def view(self):
        if getattr(self, "_view", None) is None:
            self._view = self._make_view()
        return self._view

    def _make_view(self):
        f = self.frame
        if isinstance(f, LearningFrame) and f.other_policy is not None:
            return fold(self.domain, f.other_policy, self.agent)
        dist = f.other_action_dist if isinstance(f, PlanningFrame) else None
        return planning_view(self.domain, self.agent, dist)

    def solve(self, learner_cfg=None, rng=None) -> Level0Model:
        if self.solved:
            return self
        if isinstance(self.frame, PlanningFrame):
            tree, beh, _ = solve_did_behavior(self.belief, self.view(), self.horizon)
            self.policy, self.behavior, self.value = tree, beh, tree.value
            return self
        from .domains import project
        from .mcesp import LearnerConfig, learn_level0

        if self.frame.other_policy is None:
            raise UnsolvedModel("a learning model needs the other agent's candidate policy")
        cfg = learner_cfg or LearnerConfig(alpha=self.frame.alpha)
        env = project(self.domain, self.frame.other_policy, self.agent)
        tree, _ = learn_level0(self, env, cfg, rng if rng is not None else np.random.default_rng(0))
        return self.attach(tree)

    def attach(self, tree: PolicyTree, value: float | None = None) -> Level0Model:
        """Install a fixed policy (e.g. a learned one) as this model's solution."""
        if tree.horizon != self.horizon:
            raise ValueError("policy depth does not match the model horizon")
        if value is None:
            f = self.frame
            if isinstance(f, LearningFrame) and f.other_policy is not None:
                base = self.domain.with_initial(self.belief)
                pair = (f.other_policy, tree) if self.agent == "j" else (tree, f.other_policy)
                value = joint_value(base, *pair).value
        self.policy, self.value = tree, value
        self.behavior = behavior_from_tree(tree)
        return self


# --------------------------------------------------------------------------
# model spaces


@dataclass
class ModelEntry:
    node: BehaviorNode
    weight: float
    view: object = None
    belief: np.ndarray | None = None
    t: int = 0
    origin: int = 0  # index of the t=0 model this entry descends from
    parent: int | None = None
    ao: tuple[int, int] | None = None


@dataclass
class ModelSpace:
    entries: list[ModelEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    @classmethod
    def from_models(cls, models: Sequence, weights: Sequence[float]) -> ModelSpace:
        entries = []
        for k, (m, w) in enumerate(zip(models, weights)):
            if not m.solved:
                raise UnsolvedModel(f"model {k} is not solved")
            entries.append(ModelEntry(m.behavior, float(w), m.view(), _model_belief(m), 0, k))
        return cls(entries)


def _model_belief(m) -> np.ndarray:
    return m.view_belief() if isinstance(m, IDID) else m.belief


def expand_model_space(ms: ModelSpace) -> ModelSpace:
    """Successor models for every predicted action and every observation.

    Successor weight = parent weight * P(a | model) * P(o | belief, a).  An
    observation the model itself deems impossible still yields a successor
    (with weight 0), because the subject may see it happen.
    """
    out = []
    for k, e in enumerate(ms.entries):
        if e.node is None:
            raise UnsolvedModel(f"model {k} is not solved")
        if not e.node.children:
            raise ValueError("model horizon exhausted")
        for (a, o), child in sorted(e.node.children.items()):
            p_a = dict(e.node.probs)[a]
            belief, w = None, 0.0
            if e.belief is not None and e.view is not None:
                v = np.asarray(e.view.dynamics(e.t, a, o).T @ e.belief).ravel()
                po = v.sum()
                if po > PRUNE_EPS:
                    belief, w = v / po, e.weight * p_a * po
            out.append(ModelEntry(child, w, e.view if belief is not None else None, belief,
                                  e.t + 1, e.origin, k, (a, o)))
    return ModelSpace(out)


def prune_behavioral_eq(ms: ModelSpace) -> tuple[ModelSpace, list[int]]:
    """Merge models with identical predicted behavior.

    The member with the smallest index represents the group and receives the
    summed weight.  Returns the pruned space and the old-to-new index map.
    """
    rep: dict = {}
    kept: list[ModelEntry] = []
    remap = []
    for e in ms.entries:
        idx = rep.get(e.node)
        if idx is None:
            idx = rep[e.node] = len(kept)
            kept.append(ModelEntry(e.node, e.weight, e.view, e.belief, e.t, e.origin,
                                   e.parent, e.ao))
        else:
            kept[idx].weight += e.weight
        remap.append(idx)
    return ModelSpace(kept), remap


def assign_weights(values: Sequence[float], scheme: str = "uniform") -> np.ndarray:
    """Prior over candidate models from their expected utilities.

    ``diverse`` weights grow linearly with utility above the minimum.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no policies to weight")
    if scheme == "uniform":
        return np.full(v.size, 1.0 / v.size)
    if scheme == "diverse":
        w = v - v.min() + DIVERSE_EPS
        return w / w.sum()
    raise ValueError(f"unknown weighting scheme {scheme!r}")


# --------------------------------------------------------------------------
# the I-DID


@dataclass(eq=False)
class IDID:
    level: int
    horizon: int
    domain: DomainModel
    models: list
    weights: Sequence[float] | None = None
    weighting: str = "uniform"
    K: int = 32
    agent: str = "i"
    belief: np.ndarray | None = None  # subject's belief over world states
    prune: bool = True
    policy: PolicyTree | None = None
    value: float | None = None
    model_counts: list[int] = field(default_factory=list)
    _view: InteractiveView | None = None
    _b0: np.ndarray | None = None
    _behavior: BehaviorNode | None = None

    @property
    def solved(self) -> bool:
        return self.policy is not None

    @property
    def behavior(self) -> BehaviorNode | None:
        if self._behavior is None and self.policy is not None:
            self._behavior = behavior_from_tree(self.policy)
        return self._behavior

    def view(self) -> InteractiveView:
        return self._view

    def view_belief(self) -> np.ndarray:
        return self._b0

    def world_belief(self) -> np.ndarray:
        b = self.domain.initial_state_dist if self.belief is None else self.belief
        return np.asarray(b, dtype=float)

    def solve(self, learner_cfg=None, rng=None) -> IDID:
        if not self.solved:
            solve_idid(self)
        return self


def _check(idid: IDID):
    if idid.horizon < 1:
        raise ValueError("horizon must be >= 1")
    if idid.level < 1:
        raise ValueError("an I-DID has level >= 1")
    if not idid.models:
        raise ValueError("empty model space")
    for m in idid.models:
        if m.horizon != idid.horizon:
            raise ValueError("lower models must share the I-DID horizon")


def _solve_lower(idid: IDID):
    for m in idid.models:
        m.solve()


def _weights_for(idid: IDID) -> np.ndarray:
    if idid.weights is not None:
        w = np.asarray(idid.weights, dtype=float)
        if len(w) != len(idid.models) or abs(w.sum() - 1) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must be a distribution over the models")
        return w
    return assign_weights([m.value for m in idid.models], idid.weighting)


def solve_with_space(idid: IDID, ms: ModelSpace) -> tuple[PolicyTree, float]:
    """Expand ``ms`` over the horizon and solve the interactive planning problem."""
    layers = [ms]
    links = []
    if idid.prune:
        layers[0], _ = prune_behavioral_eq(ms)
    for _ in range(idid.horizon - 1):
        expanded = expand_model_space(layers[-1])
        nxt, remap = expanded, list(range(len(expanded)))
        if idid.prune:
            nxt, remap = prune_behavioral_eq(expanded)
        link_t = [dict() for _ in layers[-1].entries]
        for old, e in enumerate(expanded.entries):
            link_t[e.parent][e.ao] = remap[old]
        links.append(link_t)
        layers.append(nxt)
    idid.model_counts = [len(layer) for layer in layers]
    d = idid.domain.as_agent(idid.agent)
    view = InteractiveView(d, [[e.node.probs for e in layer.entries] for layer in layers], links)
    b_world = idid.world_belief()
    w0 = layers[0].weights
    b0 = np.concatenate([w * b_world for w in w0])
    tree = solve_did(b0, view, idid.horizon)
    idid.policy, idid.value, idid._view, idid._b0 = tree, tree.value, view, b0
    idid._behavior = None
    log.debug("solved level-%d I-DID: value %.6f, model counts %s", idid.level, tree.value,
              idid.model_counts)
    return tree, tree.value


def solve_idid(idid: IDID) -> tuple[PolicyTree, float]:
    """Solve a traditional level-l I-DID bottom-up; returns i's policy tree and value."""
    _check(idid)
    _solve_lower(idid)
    ms = ModelSpace.from_models(idid.models, _weights_for(idid))
    return solve_with_space(idid, ms)


@dataclass
class LearnedPolicy:
    """A level-0 policy discovered by learning, with its team utility and partner."""

    policy: PolicyTree
    value: float
    partner: PolicyTree | None = None


def learned_models(domain: DomainModel, learned, agent: str = "j",
                   alpha: float = 0.9) -> list[Level0Model]:
    out = []
    for item in learned:
        if not isinstance(item, LearnedPolicy):
            item = LearnedPolicy(*item)
        frame = LearningFrame(alpha, item.policy, item.partner)
        m = Level0Model(domain, domain.initial_state_dist, frame, item.policy.horizon, agent)
        out.append(m.attach(item.policy, item.value))
    return out


def top_k(models: list, k: int) -> list:
    """The ``k`` models of highest expected utility; earlier models win ties."""
    if k < 1:
        raise ValueError("K must be >= 1")
    order = sorted(range(len(models)), key=lambda n: (-models[n].value, n))
    return [models[n] for n in sorted(order[:k])]


def solve_augmented_idid(idid: IDID, learned) -> tuple[PolicyTree, float]:
    """Solve with level-0 models that learn added to the traditional ones.

    ``learned`` holds :class:`LearnedPolicy` items or ``(policy, utility)``
    pairs for the agent modeled at level 0.  The pooled level-0 space is
    cut to the top ``idid.K`` by expected utility and reweighted by
    ``idid.weighting`` before solving.
    """
    _check(idid)
    if idid.K < 1:
        raise ValueError("K must be >= 1")
    for item in learned:
        pol = item.policy if isinstance(item, LearnedPolicy) else item[0]
        if pol.horizon != idid.horizon:
            raise ValueError("learned policies must have the I-DID horizon")
    if idid.level > 1:
        for m in idid.models:
            solve_augmented_idid(m, learned)
        ms = ModelSpace.from_models(idid.models, _weights_for(idid))
        return solve_with_space(idid, ms)
    _solve_lower(idid)
    agent = "j" if idid.agent == "i" else "i"
    pool = list(idid.models) + learned_models(idid.domain, learned, agent)
    kept = top_k(pool, idid.K)
    weights = assign_weights([m.value for m in kept], idid.weighting)
    ms = ModelSpace.from_models(kept, weights)
    idid.models = kept
    idid.weights = list(weights)
    return solve_with_space(idid, ms)


# --------------------------------------------------------------------------
# documented level-0 priors


def simplex_grid(n: int, resolution: int) -> list[np.ndarray]:
    """All beliefs over ``n`` states with entries in multiples of 1/resolution."""
    out = []
    for cut in itertools.combinations(range(resolution + n - 1), n - 1):
        parts = np.diff((-1,) + cut + (resolution + n - 1,)) - 1
        out.append(parts / resolution)
    return out


def prior_beliefs(domain: DomainModel, agent: str = "j", resolution: int = 3,
                  limit: int = 100) -> list[np.ndarray]:
    """Deterministic grid of initial beliefs for traditional level-0 models.

    Small state spaces (<= 8 states) use a simplex grid; larger ones use the
    true initial distribution, the uniform belief and point masses on the
    states reachable in one step.  At most ``limit`` beliefs are returned,
    the true initial distribution first.
    """
    b0 = np.asarray(domain.initial_state_dist, dtype=float)
    S = domain.n_states
    if S <= 8:
        grid = simplex_grid(S, resolution)
    else:
        grid = [np.full(S, 1.0 / S)]
        nxt = np.einsum("s,sabt->t", b0, domain.transition)
        for s in np.flatnonzero(nxt > 0):
            e = np.zeros(S)
            e[s] = 1.0
            grid.append(e)
    out = [b0]
    for b in grid:
        if not any(np.allclose(b, c) for c in out):
            out.append(b)
    return out[:limit]


def traditional_models(domain: DomainModel, horizon: int, agent: str = "j",
                       resolution: int = 3, limit: int = 100) -> list[Level0Model]:
    return [Level0Model(domain, b, PlanningFrame(), horizon, agent)
            for b in prior_beliefs(domain, agent, resolution, limit)]


def build_idid(domain: DomainModel, level: int, horizon: int, *, models=None, weights=None,
               weighting: str = "uniform", K: int = 32, resolution: int = 3,
               limit: int = 100, agent: str = "i") -> IDID:
    """An I-DID for ``agent`` whose bottom level is the documented prior grid."""
    other = "j" if agent == "i" else "i"
    if models is None:
        if level == 1:
            models = traditional_models(domain, horizon, other, resolution, limit)
        else:
            models = [build_idid(domain, level - 1, horizon, weighting=weighting, K=K,
                                 resolution=resolution, limit=limit, agent=other)]
    return IDID(level, horizon, domain, list(models), weights, weighting, K, agent)
