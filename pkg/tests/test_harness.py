import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adhoc_idid.harness import (
    IDIDAgent,
    OPATAgent,
    OptimalTeam,
    TeammateScript,
    build_idid_agent,
    compare,
    expand_pattern,
    make_teammate,
    opat_po_step,
    parse_pattern,
    run_episode,
    significance,
    write_belief_csv,
    write_episodes_csv,
    write_summary_csv,
)
from adhoc_idid.idid import LearnedPolicy, build_idid, solve_augmented_idid
from adhoc_idid.planning import solve_did


@pytest.fixture(scope="module")
def team(mabc_oracle):
    return OptimalTeam(*mabc_oracle[:2])


@pytest.fixture(scope="module")
def aug_agent(mabc, mabc_learned):
    return build_idid_agent(mabc, 3, mabc_learned, K=8)


def test_pattern_expansion():
    pat = parse_pattern("1324")
    assert pat == (0, 2, 1, 3)
    assert "".join(str(a + 1) for a in expand_pattern(pat, 2, 8)) == "11332244"
    assert expand_pattern((0, 1), 1, 5) == [0, 1, 0, 1, 0]
    for bad in ("", "10", "a1"):
        with pytest.raises(ValueError):
            parse_pattern(bad)


def test_script_validation():
    with pytest.raises(ValueError):
        TeammateScript("nobody")
    with pytest.raises(ValueError):
        TeammateScript("predefined")
    with pytest.raises(ValueError):
        TeammateScript("switching", pattern=(0,))
    with pytest.raises(ValueError):
        TeammateScript("true-model")


def test_random_teammate_depends_only_on_seed_and_trial(mabc):
    a = make_teammate(TeammateScript("random", seed=4), mabc, 20, trial=2)
    b = make_teammate(TeammateScript("random", seed=4), mabc, 20, trial=2)
    c = make_teammate(TeammateScript("random", seed=4), mabc, 20, trial=3)
    assert a.sequence == b.sequence != c.sequence


def test_switching_teammate(mabc, mabc_oracle):
    pi_j = mabc_oracle[1]
    script = TeammateScript("switching", pattern=(0, 1), repetition=2, switch_step=15)
    mate = make_teammate(script, mabc, 20, oracle=mabc_oracle[:2])
    rng = np.random.default_rng(0)
    acts = []
    for t in range(20):
        acts.append(mate.act(t, rng))
        mate.observe(t, acts[-1], 0)
    assert acts[:15] == expand_pattern((0, 1), 2, 15)
    assert acts[15] == pi_j.action
    assert acts[18] == pi_j.action  # restarted at the root after 3 steps


def test_random_patterns_vary_by_trial(mabc):
    script = TeammateScript("predefined", seed=1, random_pattern=True)
    seqs = {tuple(make_teammate(script, mabc, 12, trial=k).sequence) for k in range(6)}
    assert len(seqs) > 1


def test_zero_steps(mabc, aug_agent):
    mate = make_teammate(TeammateScript("random"), mabc, 0)
    log = run_episode(aug_agent, mate, mabc, 0, 3, 0)
    assert len(log) == 0 and log.cumulative == 0


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_episode_bookkeeping(seed):
    from adhoc_idid.domains import build_domain
    from adhoc_idid.planning import brute_force_oracle

    d = build_domain("mabc")
    pi_i, pi_j, _ = brute_force_oracle(d, 3)
    agent = OPATAgent(d, OptimalTeam(pi_i, pi_j), rollouts=5)
    mate = make_teammate(TeammateScript("random", seed=seed), d, 6)
    log = run_episode(agent, mate, d, 6, 2, seed)
    assert log.cumulative == pytest.approx(sum(r.reward for r in log.records))
    for b in log.model_beliefs:
        assert b.sum() == pytest.approx(1.0) and (b >= 0).all()


def test_belief_rows_normalised(mabc, aug_agent):
    mate = make_teammate(TeammateScript("random", seed=3), mabc, 8)
    log = run_episode(aug_agent, mate, mabc, 8, 3, 5)
    assert all(abs(b.sum() - 1) < 1e-9 for b in log.model_beliefs)


def test_opat_one_step_is_exact(mabc, team):
    aj = team.pi_j.action
    for s in range(mabc.n_states):
        b = np.zeros(mabc.n_states)
        b[s] = 1.0
        best = int(np.argmax(mabc.reward[s, :, aj]))
        assert opat_po_step(b, mabc, 1, 3, 0, team) == best


def test_opat_rejects_no_rollouts(mabc, team):
    with pytest.raises(ValueError):
        opat_po_step(mabc.initial_state_dist, mabc, 1, 0, 0, team)


def test_significance():
    x = [1.0, 2.0, 3.0, 4.0]
    assert significance(x, x)[1] == pytest.approx(1.0)
    assert significance([2.0] * 3, [2.0] * 3) == (0.0, 1.0)
    assert significance([1.0, 1.1, 0.9] * 5, [5.0, 5.1, 4.9] * 5)[1] < 0.01


def test_first_decision_matches_offline_solution(mabc, mabc_learned):
    # within one horizon the cyclic view is the offline interactive problem
    agent = build_idid_agent(mabc, 3, mabc_learned, K=8)
    idid = build_idid(mabc, 1, 3, K=8)
    tree, value = solve_augmented_idid(idid, mabc_learned)
    agent.reset()
    online = solve_did(agent.b, agent.view, 3)
    assert online.action == tree.action
    assert online.value == pytest.approx(value, abs=1e-9)


def test_true_model_with_single_model(mabc, mabc_oracle):
    pi_i, pi_j, rep = mabc_oracle
    agent = build_idid_agent(mabc, 3, [LearnedPolicy(pi_j, rep.value, pi_i)], K=1)
    assert len(agent.behaviors) == 1
    mate = make_teammate(TeammateScript("true-model", policy=pi_j), mabc, 6)
    log = run_episode(agent, mate, mabc, 6, 3, 0)
    assert all(b[0] == pytest.approx(1.0) for b in log.model_beliefs)


def test_compare_is_deterministic(mabc, team, tmp_path):
    agents = [OPATAgent(mabc, team, rollouts=5)]
    mates = [TeammateScript("random", seed=1), TeammateScript("predefined", pattern=(0, 1))]
    out = []
    for k in range(2):
        summ, logs = compare(agents, mates, mabc, trials=2, steps=4, lookahead=2, seed=9)
        d = tmp_path / str(k)
        d.mkdir()
        write_summary_csv(d / "summary.csv", summ)
        write_episodes_csv(d / "episodes.csv", logs, mabc)
        write_belief_csv(d / "beliefs.csv", logs)
        out.append([(d / f).read_bytes() for f in ("summary.csv", "episodes.csv", "beliefs.csv")])
    assert out[0] == out[1]
    with open(tmp_path / "0" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2


def test_compare_needs_two_trials(mabc, team):
    with pytest.raises(ValueError):
        compare([OPATAgent(mabc, team)], [TeammateScript("random")], mabc, trials=1, steps=2)


def test_idid_agent_type(aug_agent):
    assert isinstance(aug_agent, IDIDAgent) and aug_agent.name == "aug-idid"
    assert len(aug_agent.labels) == len(aug_agent.behaviors)
    assert aug_agent.weights.sum() == pytest.approx(1.0)
