import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhoc_idid.domains import (
    GRID_ACTIONS,
    GRID_OBSERVATIONS,
    DomainError,
    PolicyExhausted,
    build_domain,
    grid_swap_state,
    load_domain_config,
    project,
)
from adhoc_idid.planning import joint_value
from adhoc_idid.policy import constant_tree, random_tree


def _rows_ok(d):
    for arr in (d.transition, d.observation_fn_i, d.observation_fn_j):
        assert np.allclose(arr.sum(-1), 1.0, atol=1e-9)
        assert arr.min() >= 0 and arr.max() <= 1
    assert abs(d.initial_state_dist.sum() - 1) < 1e-9


@pytest.mark.parametrize("name", ["mabc", "grid3", "grid1shot", "box_pushing", "bandit"])
def test_tables_are_distributions(name):
    _rows_ok(build_domain(name))


def test_dimensions():
    m = build_domain("mabc")
    assert (m.n_states, len(m.actions_i), len(m.observations_i)) == (4, 2, 2)
    g = build_domain("grid3")
    assert g.actions_i == GRID_ACTIONS and g.observations_j == GRID_OBSERVATIONS
    assert g.n_states == 9 * 9  # 9 cells per agent
    bp = build_domain("box_pushing")
    assert (bp.n_states, len(bp.observations_i), len(bp.actions_j)) == (50, 5, 4)


def _one_step(grid, ai, aj):
    s0 = int(np.argmax(grid.initial_state_dist))
    return grid.reward[s0, GRID_ACTIONS.index(ai), GRID_ACTIONS.index(aj)]


def test_one_shot_grid_rewards(grid):
    assert _one_step(grid, "MW", "MS") == 30
    assert _one_step(grid, "ME", "MN") == 40
    s0 = int(np.argmax(grid.initial_state_dist))
    table = grid.reward[s0]
    # the coordinated meeting is the unique joint optimum
    assert np.unravel_index(np.argmax(table), table.shape) == (2, 1)
    assert np.sum(table == table.max()) == 1
    # MW is i's best reply to MS; MS is j's best move when i moves uniformly at random
    assert np.argmax(table[:, GRID_ACTIONS.index("MS")]) == GRID_ACTIONS.index("MW")
    assert np.argmax(table.mean(axis=0)) == GRID_ACTIONS.index("MS")


def test_same_cell_doubles_reward():
    g = build_domain("grid3")
    rewards = np.asarray(g.params["rewards"], float)
    # both stay on (2, 2): twice the sum of two 15s
    cell = 2 * 3 + 2
    s = cell * 9 + cell
    st_ = GRID_ACTIONS.index("ST")
    assert g.reward[s, st_, st_] == 2 * (rewards[2, 2] + rewards[2, 2])
    other = 0
    s2 = cell * 9 + other
    assert g.reward[s2, st_, st_] == rewards[2, 2] + rewards[0, 0]


def test_grid_agent_symmetry():
    g = build_domain("grid3")
    for s in range(g.n_states):
        w = grid_swap_state(g, s)
        assert np.array_equal(g.reward[s], g.reward[w].T)


def test_unknown_and_malformed():
    with pytest.raises(DomainError):
        build_domain("chess")
    with pytest.raises(DomainError):
        build_domain("grid", {"size": 3, "rewards": [[1, 2], [3, 4]]})
    with pytest.raises(DomainError):
        build_domain("mabc", {"arrival_i": 1.5})


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_mabc_rows_for_any_parameters(p_i, p_j, noise):
    d = build_domain("mabc", {"arrival_i": p_i, "arrival_j": p_j, "observation_noise": noise})
    _rows_ok(d)


def test_config_files_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs" / "domains"
    for path in sorted(root.glob("*.json")):
        _rows_ok(load_domain_config(path))


def test_swap_twice_is_identity(mabc):
    back = mabc.swap_agents().swap_agents()
    assert np.array_equal(back.transition, mabc.transition)
    assert np.array_equal(back.observation_fn_i, mabc.observation_fn_i)


# --------------------------------------------------------------------------
# projection


def test_projection_constant_policy_slices_transition(rng):
    g = build_domain("grid3")
    me = GRID_ACTIONS.index("ME")
    env = project(g, constant_tree(me, 3, 2), "j")
    s0 = env.reset(rng)
    ms = GRID_ACTIONS.index("MS")
    env.step(ms, rng)
    expected = int(np.argmax(g.transition[s0, me, ms]))
    assert env.state == expected
    env.step(ms, rng)
    with pytest.raises(PolicyExhausted):
        env.step(ms, rng)


def test_projection_matches_exact_value(mabc, rng):
    pi_i = random_tree(np.random.default_rng(3), 2, 2, 3)
    pi_j = random_tree(np.random.default_rng(4), 2, 2, 3)
    exact = joint_value(mabc, pi_i, pi_j).value
    env = project(mabc, pi_i, "j")
    n = 100_000
    totals = np.empty(n)
    for k in range(n):
        env.reset(rng)
        node, ret = pi_j, 0.0
        for _ in range(3):
            o, r = env.step(node.action, rng)
            ret += r
            node = node.children[o] if node.children else None
        totals[k] = ret
    se = totals.std(ddof=1) / np.sqrt(n)
    assert abs(totals.mean() - exact) <= 3 * se + 1e-12


def test_projection_perspective_i_matches(mabc):
    pi_j = random_tree(np.random.default_rng(5), 2, 2, 3)
    pi_i = random_tree(np.random.default_rng(6), 2, 2, 3)
    env = project(mabc, pi_j, "i")
    assert env.exact_value(pi_i) == pytest.approx(joint_value(mabc, pi_i, pi_j).value)


def test_every_grid_joint_action_enumerated(grid):
    s0 = int(np.argmax(grid.initial_state_dist))
    values = {(a, b): grid.reward[s0, a, b] for a, b in itertools.product(range(5), repeat=2)}
    assert len(values) == 25
    assert max(values.values()) == 40
