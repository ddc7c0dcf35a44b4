import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhoc_idid.domains import GRID_ACTIONS, build_domain, project
from adhoc_idid.idid import LearningFrame, Level0Model
from adhoc_idid.mcesp import (
    LearnerConfig,
    QTable,
    Trajectory,
    generate_collaborative_set,
    learn_level0,
    post_history_return,
    q_update,
    terminate_saa,
)
from adhoc_idid.planning import best_response
from adhoc_idid.policy import from_actions


def test_q_update_examples():
    assert q_update(0.0, 1.0, 7.0) == 7.0
    assert q_update(10.0, 0.0, 3.0) == 10.0
    assert q_update(10.0, 0.1, 2.0) == pytest.approx(9.2)


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(0.01, 1.0), st.floats(-100, 100))
def test_q_update_stays_between(q, alpha, ret):
    new = q_update(q, alpha, ret)
    assert min(q, ret) - 1e-9 <= new <= max(q, ret) + 1e-9


def test_post_history_return():
    traj = Trajectory([0, 1, 0], [1.0, 2.0, 3.0], [1, 0, 1])
    assert post_history_return(traj, ()) == 6.0
    assert post_history_return(traj, (1,)) == 5.0
    assert post_history_return(traj, (1, 0), gamma=0.5) == pytest.approx(0.75)
    assert post_history_return(traj, (0,)) is None


def test_terminate_saa():
    q = QTable()
    reach = {(), (0,)}
    assert not terminate_saa(q, reach, 2, 1)
    for h in reach:
        for a in range(2):
            q.update(h, a, 1.0, 0.5, n=3)
    assert terminate_saa(q, reach, 2, 3)
    assert not terminate_saa(q, reach, 2, 4)
    assert not terminate_saa(q, reach, 2, 3, changed_last=True)
    q.reset_fresh()
    assert not terminate_saa(q, reach, 2, 1)


def test_learning_frame_rejects_bad_alpha():
    seed = from_actions([0], 1, 1)
    with pytest.raises(ValueError):
        LearningFrame(0.0, seed)
    with pytest.raises(ValueError):
        LearnerConfig(alpha=1.5)


def _learn(domain, partner, seed, cfg):
    frame = LearningFrame(cfg.alpha, seed, partner)
    model = Level0Model(domain, domain.initial_state_dist, frame, seed.horizon, "j")
    tree, _ = learn_level0(model, project(domain, partner, "j"), cfg,
                           np.random.default_rng(cfg.seed))
    return tree


@pytest.mark.parametrize("seed", range(10))
def test_bandit_finds_best_arm(seed):
    d = build_domain("bandit", {"rewards": [0.0, 5.0]})
    noop = from_actions([0], 1, 1)
    tree = _learn(d, noop, from_actions([0], 1, 1), LearnerConfig(seed=seed))
    assert tree.action == 1


def test_grid_learner_answers_east_with_north(grid):
    me = from_actions([GRID_ACTIONS.index("ME")], 3, 1)
    tree = _learn(grid, me, from_actions([GRID_ACTIONS.index("MS")], 3, 1), LearnerConfig(seed=3))
    assert GRID_ACTIONS[tree.action] == "MN"


def test_mabc_learner_near_best_response(mabc, mabc_oracle):
    pi_i = mabc_oracle[0]
    _, best = best_response(mabc, pi_i, "j")
    env = project(mabc, pi_i, "j")
    tree = _learn(mabc, pi_i, from_actions([0] * 7, 2, 3), LearnerConfig(seed=1))
    assert env.exact_value(tree) >= best - 0.05 * abs(best)


def test_collaborative_set_is_deterministic(grid):
    a = generate_collaborative_set(grid, 1, restarts=5, cfg=LearnerConfig(seed=11))
    b = generate_collaborative_set(grid, 1, restarts=5, cfg=LearnerConfig(seed=11))
    assert [(c.policy, c.value) for c in a] == [(c.policy, c.value) for c in b]
    assert len({c.policy for c in a}) == len(a)


def test_grid_set_contains_north(grid):
    found = generate_collaborative_set(grid, 1, restarts=20, cfg=LearnerConfig(seed=0))
    best = {GRID_ACTIONS[c.policy.action]: c.value for c in found}
    assert best.get("MN") == 40


def test_mabc_set_policies_complete(mabc, mabc_learned):
    assert mabc_learned
    for c in mabc_learned:
        assert c.policy.horizon == 3 and c.policy.is_complete(2)
        assert c.partner is not None


def test_trace_rows(grid):
    rows = []
    generate_collaborative_set(grid, 1, restarts=2, cfg=LearnerConfig(seed=0), trace=rows)
    assert rows and all(len(r) == 6 for r in rows)
    assert {r[0] for r in rows} <= {0, 1}


def test_restarts_validated(grid):
    with pytest.raises(ValueError):
        generate_collaborative_set(grid, 1, restarts=0)
