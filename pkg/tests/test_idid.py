import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhoc_idid.domains import GRID_ACTIONS, build_domain
from adhoc_idid.idid import (
    IDID,
    LearnedPolicy,
    Level0Model,
    ModelSpace,
    PlanningFrame,
    UnsolvedModel,
    assign_weights,
    build_idid,
    expand_model_space,
    prune_behavioral_eq,
    solve_augmented_idid,
    solve_idid,
    top_k,
    traditional_models,
)
from adhoc_idid.planning import best_response
from adhoc_idid.policy import from_actions


def _solved(domain, beliefs, T=3):
    return [Level0Model(domain, b, PlanningFrame(), T).solve() for b in beliefs]


def _random_beliefs(seed, n, S=4):
    return list(np.random.default_rng(seed).dirichlet(np.ones(S), size=n))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_expansion_conserves_weight(seed, n):
    d = build_domain("mabc")
    models = _solved(d, _random_beliefs(seed, n))
    w = np.random.default_rng(seed).dirichlet(np.ones(n))
    ms = ModelSpace.from_models(models, w)
    nxt = expand_model_space(ms)
    assert nxt.weights.sum() == pytest.approx(1.0, abs=1e-9)
    # deterministic level-0 policies: one action, every observation
    assert len(nxt) <= len(ms) * len(d.actions_j) * len(d.observations_j)
    assert all(len(e.node.probs) == 1 for e in ms.entries)


def test_duplicates_merge():
    d = build_domain("mabc")
    m1, m2 = _solved(d, [d.initial_state_dist] * 2)
    ms, remap = prune_behavioral_eq(ModelSpace.from_models([m1, m2], [0.3, 0.7]))
    assert len(ms) == 1 and remap == [0, 0]
    assert ms.weights[0] == pytest.approx(1.0)


def test_unsolved_model_rejected():
    d = build_domain("mabc")
    with pytest.raises(UnsolvedModel):
        ModelSpace.from_models([Level0Model(d, d.initial_state_dist, PlanningFrame(), 3)], [1.0])


@pytest.mark.parametrize("seed", range(3))
def test_pruning_leaves_value_unchanged(seed):
    d = build_domain("mabc")
    beliefs = _random_beliefs(seed, 6)
    runs = {}
    for prune in (True, False):
        idid = IDID(1, 3, d, _solved(d, beliefs), prune=prune)
        solve_idid(idid)
        runs[prune] = idid
    assert runs[True].value == pytest.approx(runs[False].value, abs=1e-9)
    assert runs[True].policy.to_actions() == runs[False].policy.to_actions()
    pruned, full = runs[True].model_counts, runs[False].model_counts
    assert all(p <= f for p, f in zip(pruned, full))
    assert sum(pruned) < sum(full)
    # unpruned counts follow |M| * (|A_j| |Omega_j|)^t with deterministic models
    assert all(f <= 6 * 2 ** t for t, f in enumerate(full))


def test_single_model_is_best_response(mabc, mabc_oracle):
    pi_i, pi_j, _ = mabc_oracle
    m = Level0Model(mabc, mabc.initial_state_dist, PlanningFrame(), 3)
    m.attach(pi_j, 2.99)
    idid = IDID(1, 3, mabc, [m], weights=[1.0])
    _, value = solve_idid(idid)
    assert value == pytest.approx(best_response(mabc, pi_j, "i")[1], abs=1e-9)
    assert value == pytest.approx(2.99, abs=0.01)


def test_grid_level1_and_level2(grid):
    for level in (1, 2):
        idid = build_idid(grid, level, 1, limit=1)
        tree, value = solve_idid(idid)
        assert GRID_ACTIONS[tree.action] == "MW"
        assert value == pytest.approx(30)


def test_level1_level0_j_prefers_south(grid):
    (m,) = traditional_models(grid, 1, limit=1)
    m.solve()
    assert GRID_ACTIONS[m.policy.action] == "MS"


def test_augmented_grid_reaches_forty(grid):
    mn = from_actions([GRID_ACTIONS.index("MN")], 3, 1)
    me = from_actions([GRID_ACTIONS.index("ME")], 3, 1)
    idid = build_idid(grid, 1, 1, limit=1, K=1)
    tree, value = solve_augmented_idid(idid, [LearnedPolicy(mn, 40.0, me)])
    assert GRID_ACTIONS[tree.action] == "ME"
    assert value == pytest.approx(40)


def test_augmented_true_model_matches_oracle(mabc, mabc_oracle):
    pi_i, pi_j, rep = mabc_oracle
    idid = build_idid(mabc, 1, 3, K=1)
    _, value = solve_augmented_idid(idid, [LearnedPolicy(pi_j, rep.value, pi_i)])
    assert value == pytest.approx(2.99, abs=0.01)


def test_large_k_keeps_everything():
    class M:
        def __init__(self, v):
            self.value = v

    pool = [M(v) for v in (1, 5, 3)]
    assert top_k(pool, 10) == pool
    assert [m.value for m in top_k(pool, 2)] == [5, 3]


def test_top_k_ties_prefer_earlier():
    class M:
        def __init__(self, v):
            self.value = v

    pool = [M(2), M(2), M(2)]
    assert top_k(pool, 2) == pool[:2]
    with pytest.raises(ValueError):
        top_k(pool, 0)


def test_weighting_schemes():
    assert np.allclose(assign_weights([1, 2, 3]), 1 / 3)
    w = assign_weights([1, 2, 3], "diverse")
    assert w.sum() == pytest.approx(1) and w[0] < w[1] < w[2]
    assert np.allclose(assign_weights([4, 4], "diverse"), 0.5)
    with pytest.raises(ValueError):
        assign_weights([])
    with pytest.raises(ValueError):
        assign_weights([1], "bogus")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_diverse_weights_are_monotone(values):
    w = assign_weights(values, "diverse")
    assert w.sum() == pytest.approx(1) and (w > 0).all()
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-12)


def test_bad_weights_rejected(mabc):
    models = _solved(mabc, [mabc.initial_state_dist] * 2)
    with pytest.raises(ValueError):
        solve_idid(IDID(1, 3, mabc, models, weights=[0.5, 0.6]))
    with pytest.raises(ValueError):
        solve_idid(IDID(1, 3, mabc, []))


def test_horizon_mismatch_rejected(mabc, mabc_oracle):
    pi_i, pi_j, _ = mabc_oracle
    idid = build_idid(mabc, 1, 2)
    with pytest.raises(ValueError):
        solve_augmented_idid(idid, [LearnedPolicy(pi_j, 2.99, pi_i)])
