from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from oopsynth.mdp import (
    GOAL_OBS,
    INFINITE,
    ConvergenceError,
    ImproperStateError,
    Mdp,
    ObservationFunction,
    PositionalStrategy,
    StrategyError,
    chain_expected_reward,
    greedy_strategy,
    induce_chain,
    meets_threshold,
    min_expected_reward,
    optimal_signatures,
    pomdp_reward_under_strategy,
    validate_mdp,
)
from oopsynth.worlds import gen_grid, gen_line, gen_random

from oracles import brute_force_optimum, exact_aggregate, exact_chain_values, strategy_rows

random_mdps = st.builds(
    gen_random,
    n_states=st.integers(2, 6),
    n_actions=st.integers(1, 3),
    seed=st.integers(0, 10**6),
)


def fig2_obs(m):
    return ObservationFunction.from_classes(m, [[0, 4], [1, 3]])


# ------------------------------------------------------------------ construction


def test_build_fills_self_loops_and_merges_duplicates():
    m = Mdp.build(3, [0], [2], ("a", "b"), {(0, "a"): [(1, Fraction(1, 2)), (1, Fraction(1, 2))], (1, 0): [(2, 1)]}, [1, 1, 0])
    assert m.transitions[0][0] == ((1, Fraction(1)),)
    assert m.transitions[0][1] == ((0, Fraction(1)),)
    assert m.transitions[2][0] == ((2, Fraction(1)),)
    assert validate_mdp(m) == []


def test_validate_reports_bad_row_sum():
    m = Mdp.build(3, [0], [2], ("a",), {(0, 0): [(1, Fraction(1, 2))], (1, 0): [(2, 1)]}, [1, 1, 0])
    assert "row (s0, a) sums to 0.5" in validate_mdp(m)


def test_validate_reports_non_absorbing_goal():
    m = Mdp.build(2, [0], [1], ("a",), {(0, 0): [(1, 1)], (1, 0): [(0, 1)]}, [1, 0])
    assert any(msg.startswith("goal set empty or non-absorbing") for msg in validate_mdp(m))


def test_validate_reports_initial_goal_overlap():
    m = Mdp.build(2, [0, 1], [1], ("a",), {(0, 0): [(1, 1)]}, [1, 0])
    assert any("intersect" in msg for msg in validate_mdp(m))


@given(random_mdps)
def test_generated_rows_are_distributions(m):
    assert validate_mdp(m) == []
    for s in range(m.n_states):
        for row in m.transitions[s]:
            assert sum(p for _, p in row) == 1


# ------------------------------------------------------------------ infinity and thresholds


def test_infinite_orders_above_every_number():
    assert INFINITE > 1e300
    assert not INFINITE < 5
    assert INFINITE == INFINITE
    assert float(INFINITE) == float("inf")
    assert str(INFINITE) == "inf"


def test_meets_threshold():
    assert meets_threshold(2.0, 2.0)
    assert not meets_threshold(2.0, 2.0, strict=True)
    assert meets_threshold(2.0 + 5e-7, 2.0, slack=1e-6)
    assert not meets_threshold(INFINITE, 1e9)


# ------------------------------------------------------------------ value iteration


def test_grid3_optimum_exact():
    v, _ = min_expected_reward(gen_grid(3))
    assert v.aggregate == pytest.approx(2.25, abs=1e-9)


@pytest.mark.parametrize("k", [3, 6, 20])
def test_grid_manhattan_identity(k):
    v, _ = min_expected_reward(gen_grid(k))
    assert v.aggregate == pytest.approx(k * k * (k - 1) / (k * k - 1), rel=1e-10)


@pytest.mark.parametrize("p,expected", [(Fraction(2, 3), Fraction(9, 4)), (Fraction(1, 2), Fraction(3))])
def test_line5_formula_matches_exact_solution(p, expected):
    # value follows from the uniform-initial formula; the exact oracle confirms it
    m = gen_line(5, p)
    v, _ = min_expected_reward(m)
    table = {s: {1 if s < 2 else 0: 1} for s in range(5) if s != 2}
    exact = exact_aggregate(exact_chain_values(strategy_rows(m, {s: s for s in range(5)}, table), m.goals, m.rewards), m.initial)
    assert exact == expected
    assert v.aggregate == pytest.approx(float(expected), abs=1e-9)


@given(random_mdps)
def test_value_iteration_matches_brute_force(m):
    v, _ = min_expected_reward(m)
    best = brute_force_optimum(m)
    if best is None:
        assert v.aggregate is INFINITE
    else:
        assert v.aggregate == pytest.approx(float(best), rel=1e-9, abs=1e-9)


@given(random_mdps)
def test_greedy_strategy_linear_solve_matches_value_iteration(m):
    v, Q = min_expected_reward(m)
    assume(v.aggregate is not INFINITE)
    sigs = optimal_signatures(m, v, Q)
    sigma = greedy_strategy(m, sigs)
    w = pomdp_reward_under_strategy(m, ObservationFunction.full(m), sigma)
    for s in range(m.n_states):
        if v[s] is INFINITE:
            continue
        assert w[s] == pytest.approx(v[s], rel=1e-8, abs=1e-8)


def test_value_iteration_reports_non_convergence():
    with pytest.raises(ConvergenceError) as exc:
        min_expected_reward(gen_line(41), max_sweeps=3)
    assert exc.value.residual > 0


def test_unreachable_goal_gives_infinite_aggregate():
    m = Mdp.build(3, [0, 1], [2], ("a", "b"), {(1, 0): [(2, 1)]}, [1, 1, 0])
    v, _ = min_expected_reward(m)
    assert v[0] is INFINITE and v[1] == pytest.approx(1.0)
    assert v.aggregate is INFINITE


def test_hopeless_non_initial_state_gets_full_signature():
    m = Mdp.build(3, [1], [2], ("a", "b"), {(1, 0): [(2, 1)]}, [1, 1, 0])
    v, Q = min_expected_reward(m)
    sigs = optimal_signatures(m, v, Q)
    assert sigs[0] == frozenset({0, 1})
    assert sigs[1] == frozenset({0})


def test_signatures_reject_infinite_aggregate_only_via_error():
    m = Mdp.build(2, [0], [1], ("a",), {}, [1, 0])
    v, Q = min_expected_reward(m)
    with pytest.raises(ImproperStateError):
        optimal_signatures(m, v, Q)


def test_grid3_signatures():
    m = gen_grid(3)
    v, Q = min_expected_reward(m)
    sigs = optimal_signatures(m, v, Q)
    right, down = m.action_index("right"), m.action_index("down")
    assert sigs[0] == frozenset({right, down})
    assert sigs[2] == frozenset({down})
    assert sigs[6] == frozenset({right})
    assert sigs[8] == frozenset(range(4))


# ------------------------------------------------------------------ observations and strategies


def test_location_observation_labels():
    m = gen_line(5)
    obs = ObservationFunction.location(m, [0, 1])
    assert obs.assignment == ("@s0", "@s1", GOAL_OBS, "⊥", "⊥")
    assert obs.sensors == (0, 1)
    assert obs.check(m) == []
    with pytest.raises(ValueError):
        ObservationFunction.location(m, [2])


def test_observation_must_be_total():
    with pytest.raises(ValueError, match="not total"):
        ObservationFunction.from_classes(gen_line(5), [[0, 1]])


def test_observation_json_round_trip():
    m = gen_line(5)
    obs = fig2_obs(m)
    assert ObservationFunction.from_json(obs.to_json()) == obs


def test_strategy_missing_row():
    sigma = PositionalStrategy.deterministic({"o1": 0})
    with pytest.raises(StrategyError):
        sigma.row("o2")


def test_strategy_check():
    assert PositionalStrategy.uniform(["o1"], 3).check() == []
    bad = PositionalStrategy.randomized({"o1": {0: Fraction(1, 2)}})
    assert bad.check() == ["row 'o1' sums to 0.5"]


def test_induced_chain_rows():
    m = gen_line(5, Fraction(1, 2))
    sigma = PositionalStrategy.uniform(["o1", "o2"], 2)
    c = induce_chain(m, fig2_obs(m), sigma)
    assert dict(c.transitions[1]) == {0: Fraction(1, 4), 1: Fraction(1, 2), 2: Fraction(1, 4)}
    assert c.transitions[2] == ((2, Fraction(1)),)


def test_fig2_uniform_strategy_exact():
    m = gen_line(5, Fraction(1, 2))
    obs = fig2_obs(m)
    table = {"o1": {0: Fraction(1, 2), 1: Fraction(1, 2)}, "o2": {0: Fraction(1, 2), 1: Fraction(1, 2)}}
    exact = exact_aggregate(exact_chain_values(strategy_rows(m, obs.assignment, table), m.goals, m.rewards), m.initial)
    assert exact == 10
    r = pomdp_reward_under_strategy(m, obs, PositionalStrategy.uniform(obs.labels, 2))
    assert r.aggregate == pytest.approx(10, abs=1e-9)


def test_fig2_uniform_strategy_monte_carlo():
    # random walk: move with probability 1/2, direction uniform
    rng = np.random.default_rng(20240611)
    n = 100_000
    pos = rng.choice([0, 1, 3, 4], size=n)
    steps = np.zeros(n)
    alive = pos != 2
    while alive.any():
        idx = np.flatnonzero(alive)
        steps[idx] += 1
        move = rng.random(len(idx)) < 0.5
        direction = np.where(rng.random(len(idx)) < 0.5, -1, 1)
        pos[idx] = np.clip(pos[idx] + move * direction, 0, 4)
        alive = pos != 2
    se = steps.std(ddof=1) / np.sqrt(n)
    assert abs(steps.mean() - 10) < 3 * se


@pytest.mark.parametrize("choice", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_fig2_deterministic_strategies_are_infinite(choice):
    m = gen_line(5, Fraction(1, 2))
    sigma = PositionalStrategy.deterministic({"o1": choice[0], "o2": choice[1]})
    assert pomdp_reward_under_strategy(m, fig2_obs(m), sigma).aggregate is INFINITE


@given(random_mdps, st.integers(0, 10**6))
def test_chain_solver_matches_exact(m, seed):
    rng = np.random.default_rng(seed)
    labels = [f"o{i}" for i in range(2)]
    assignment = [GOAL_OBS if s in m.goals else labels[rng.integers(2)] for s in range(m.n_states)]
    obs = ObservationFunction("general", tuple(assignment))
    table = {}
    for o in labels:
        w = rng.integers(0, 3, size=m.n_actions)
        if w.sum() == 0:
            w[0] = 1
        table[o] = {a: Fraction(int(x), int(w.sum())) for a, x in enumerate(w) if x}
    sigma = PositionalStrategy.randomized(table)
    got = chain_expected_reward(induce_chain(m, obs, sigma))
    exact = exact_chain_values(strategy_rows(m, assignment, table), m.goals, m.rewards)
    for s in range(m.n_states):
        if exact[s] is None:
            assert got[s] is INFINITE
        else:
            assert got[s] == pytest.approx(float(exact[s]), rel=1e-9, abs=1e-9)


def test_sparse_path_matches_dense():
    m = gen_line(101)
    sigma = PositionalStrategy.uniform(["o"], 2)
    obs = ObservationFunction.from_classes(m, [list(m.non_goal)], ["o"])
    c = induce_chain(m, obs, sigma)
    dense = chain_expected_reward(c)
    sparse = chain_expected_reward(c, direct_limit=10)
    np.testing.assert_allclose(dense.values, sparse.values, rtol=1e-9)
