"""Policy trees over observation histories and their behavioral counterparts."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class PolicyTree:
    """Deterministic depth-T policy: root action plus one subtree per observation.

    ``value`` is the expected utility at the belief the tree was planned for
    (``None`` if unknown).  ``reachable`` is False for branches that had zero
    probability during planning; those carry the default action 0.
    """

    action: int
    children: tuple[PolicyTree, ...] = ()
    value: float | None = None
    reachable: bool = True

    @cached_property
    def horizon(self) -> int:
        return 1 + (self.children[0].horizon if self.children else 0)

    @cached_property
    def key(self) -> tuple:
        return (self.action, tuple(c.key for c in self.children))

    def __eq__(self, other):
        return isinstance(other, PolicyTree) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"PolicyTree(horizon={self.horizon}, actions={self.to_actions()})"

    def act(self, history: Sequence[int]) -> int:
        return self.subtree(history).action

    def subtree(self, history: Sequence[int]) -> PolicyTree:
        node = self
        for o in history:
            node = node.children[o]
        return node

    def to_actions(self) -> tuple[int, ...]:
        """Actions in breadth-first order: histories sorted by length, then lexicographically."""
        out, frontier = [], [self]
        while frontier:
            out.extend(n.action for n in frontier)
            frontier = [c for n in frontier for c in n.children]
        return tuple(out)

    def node_count(self) -> int:
        return len(self.to_actions())

    def histories(self) -> Iterator[tuple[int, ...]]:
        stack = [((), self)]
        while stack:
            h, node = stack.pop()
            yield h
            for o, c in enumerate(node.children):
                stack.append((h + (o,), c))

    def is_complete(self, n_obs: int) -> bool:
        if not self.children:
            return True
        if len(self.children) != n_obs:
            return False
        h = self.children[0].horizon
        return all(c.horizon == h and c.is_complete(n_obs) for c in self.children)


def history_count(n_obs: int, horizon: int) -> int:
    """Number of observation histories of length 0..horizon-1."""
    return sum(n_obs ** t for t in range(horizon))


def history_index(history: Sequence[int], n_obs: int) -> int:
    offset = history_count(n_obs, len(history))
    pos = 0
    for o in history:
        pos = pos * n_obs + o
    return offset + pos


def all_histories(n_obs: int, horizon: int) -> list[tuple[int, ...]]:
    """Histories in the same order as :meth:`PolicyTree.to_actions`."""
    return [h for t in range(horizon) for h in itertools.product(range(n_obs), repeat=t)]


def from_actions(actions: Sequence[int], n_obs: int, horizon: int) -> PolicyTree:
    if len(actions) != history_count(n_obs, horizon):
        raise ValueError(f"expected {history_count(n_obs, horizon)} actions, got {len(actions)}")

    def build(h):
        a = int(actions[history_index(h, n_obs)])
        if len(h) == horizon - 1:
            return PolicyTree(a)
        return PolicyTree(a, tuple(build(h + (o,)) for o in range(n_obs)))

    return build(())


def constant_tree(action: int, n_obs: int, horizon: int, reachable: bool = True) -> PolicyTree:
    node = PolicyTree(action, (), None, reachable)
    for _ in range(horizon - 1):
        node = PolicyTree(action, (node,) * n_obs, None, reachable)
    return node


def count_trees(n_actions: int, n_obs: int, horizon: int) -> int:
    return n_actions ** history_count(n_obs, horizon)


def enumerate_action_arrays(n_actions: int, n_obs: int, horizon: int) -> np.ndarray:
    """Every deterministic policy as a row of BFS-ordered actions."""
    n = history_count(n_obs, horizon)
    grids = np.indices((n_actions,) * n).reshape(n, -1).T
    return grids.astype(np.int64)


def enumerate_trees(n_actions: int, n_obs: int, horizon: int) -> Iterator[PolicyTree]:
    for row in itertools.product(range(n_actions), repeat=history_count(n_obs, horizon)):
        yield from_actions(row, n_obs, horizon)


def random_tree(rng: np.random.Generator, n_actions: int, n_obs: int, horizon: int) -> PolicyTree:
    return from_actions(rng.integers(n_actions, size=history_count(n_obs, horizon)), n_obs, horizon)


# --------------------------------------------------------------------------
# serialization


def tree_to_dict(tree: PolicyTree, action_labels: Sequence[str],
                 obs_labels: Sequence[str]) -> dict:
    d = {"action": action_labels[tree.action]}
    if not tree.reachable:
        d["unreachable"] = True
    if tree.value is not None:
        d["value"] = tree.value
    if tree.children:
        d["children"] = {obs_labels[o]: tree_to_dict(c, action_labels, obs_labels)
                         for o, c in enumerate(tree.children)}
    return d


def tree_from_dict(d: dict, action_labels: Sequence[str],
                   obs_labels: Sequence[str]) -> PolicyTree:
    action = list(action_labels).index(d["action"])
    children = ()
    if "children" in d:
        kids = d["children"]
        if set(kids) != set(obs_labels):
            raise ValueError(f"children must be keyed by every observation {list(obs_labels)}")
        children = tuple(tree_from_dict(kids[o], action_labels, obs_labels) for o in obs_labels)
    return PolicyTree(action, children, d.get("value"), not d.get("unreachable", False))


def dumps_tree(tree: PolicyTree, action_labels, obs_labels) -> str:
    return json.dumps(tree_to_dict(tree, action_labels, obs_labels), indent=2, sort_keys=True)


def loads_tree(text: str, action_labels, obs_labels) -> PolicyTree:
    return tree_from_dict(json.loads(text), action_labels, obs_labels)


# --------------------------------------------------------------------------
# behavior: what a solved model predicts, possibly mixing tied actions


@dataclass(frozen=True, eq=False)
class BehaviorNode:
    """Stochastic behavioral prediction over the remaining horizon.

    ``probs`` lists ``(action, probability)`` pairs; ``children`` maps each
    ``(action, observation)`` with positive action probability to the
    successor prediction.  Two nodes with equal ``key`` are behaviorally
    equivalent.
    """

    probs: tuple[tuple[int, float], ...]
    children: dict = field(default_factory=dict)

    @cached_property
    def key(self) -> tuple:
        kids = tuple(sorted((ao, c.key) for ao, c in self.children.items()))
        return (tuple((a, round(p, 12)) for a, p in self.probs), kids)

    @cached_property
    def horizon(self) -> int:
        if not self.children:
            return 1
        return 1 + next(iter(self.children.values())).horizon

    def __eq__(self, other):
        return isinstance(other, BehaviorNode) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def child(self, action: int, obs: int) -> BehaviorNode:
        return self.children[(action, obs)]


def behavior_from_tree(tree: PolicyTree) -> BehaviorNode:
    memo: dict[int, BehaviorNode] = {}

    def conv(node):
        got = memo.get(id(node))
        if got is None:
            kids = {(node.action, o): conv(c) for o, c in enumerate(node.children)}
            got = memo[id(node)] = BehaviorNode(((node.action, 1.0),), kids)
        return got

    return conv(tree)
