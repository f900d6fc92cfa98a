from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from oopsynth.decomposition import atomic_groups
from oopsynth.mdp import min_expected_reward, validate_mdp
from oopsynth.worlds import (
    WorldSpec,
    from_json,
    gen_grid,
    gen_line,
    gen_maze,
    gen_random,
    load_mdp,
    parse_model,
    save_mdp,
    to_json,
    trap_mdp,
)


def test_line_dynamics():
    m = gen_line(5, Fraction(2, 3))
    assert m.goals == (2,)
    assert m.initial == (0, 1, 3, 4)
    l, r = m.action_index("l"), m.action_index("r")
    assert dict(m.transitions[1][r]) == {2: Fraction(2, 3), 1: Fraction(1, 3)}
    assert m.transitions[0][l] == ((0, Fraction(1)),)  # bumping the wall


def test_line_rejects_even_sizes():
    with pytest.raises(ValueError):
        gen_line(6)


def test_grid_layout():
    m = gen_grid(3)
    assert m.n_states == 9 and m.goals == (8,)
    assert m.transitions[0][m.action_index("right")] == ((1, Fraction(1)),)
    assert m.transitions[0][m.action_index("up")] == ((0, Fraction(1)),)
    assert gen_grid(7, "center").goals == (24,)


@pytest.mark.parametrize("k", [5, 7, 15, 39, 49])
def test_maze_state_count(k):
    rows = (k + 1) // 2
    m = gen_maze(k)
    assert m.n_states == k + 3 * (rows - 1)
    assert validate_mdp(m) == []


def test_maze5_structure():
    m = gen_maze(5)
    assert m.n_states == 11
    assert m.goals == (9,)
    down, up = m.action_index("down"), m.action_index("up")
    assert m.transitions[2][down] == ((6, Fraction(1)),)
    assert m.transitions[6][up] == ((2, Fraction(1)),)
    assert m.transitions[6][down] == ((9, Fraction(1)),)
    assert m.transitions[1][down] == ((1, Fraction(1)),)


def test_maze_rows_override():
    assert gen_maze(7, rows=3).n_states == 13


@pytest.mark.parametrize(
    "m,expected",
    [(gen_line(249), Fraction(125, 2)), (gen_grid(20), Fraction(7600, 399)), (gen_maze(39), Fraction(3116, 95)), (gen_maze(7), Fraction(84, 15))],
)
def test_table_threshold_optima(m, expected):
    v, _ = min_expected_reward(m)
    assert v.aggregate == pytest.approx(float(expected), rel=1e-10)


@pytest.mark.parametrize(
    "m,n_groups",
    [(gen_line(9), 2), (gen_line(61), 2), (gen_grid(3), 3), (gen_grid(20), 3), (gen_maze(7), 4), (gen_maze(39), 4)],
)
def test_atomic_group_counts(m, n_groups):
    assert len(atomic_groups(m)) == n_groups


@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 10**6))
def test_json_round_trip(n, na, seed):
    m = gen_random(n, na, seed)
    assert from_json(to_json(m)) == m


def test_file_round_trip(tmp_path):
    m = gen_maze(7)
    path = tmp_path / "m.json"
    save_mdp(m, path)
    assert load_mdp(path) == m


def test_load_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"states": 3,\n "initial": [0,,]}')
    with pytest.raises(ValueError, match="line 2, column"):
        load_mdp(path)


def test_load_rejects_unknown_action(tmp_path):
    data = to_json(gen_line(3))
    data["transitions"][0]["action"] = "jump"
    with pytest.raises(ValueError, match="unknown action"):
        from_json(data)


def test_state_action_rewards_must_be_zero():
    data = to_json(gen_line(3))
    data["action_rewards"] = ["0", "1"]
    with pytest.raises(ValueError, match="state-action rewards"):
        from_json(data)
    data["action_rewards"] = ["0", "0"]
    assert from_json(data) == gen_line(3)


def test_trap_fixture():
    m = trap_mdp()
    assert m.n_states == 6 and m.goals == (3,) and m.initial == (0, 1, 4, 5)
    assert validate_mdp(m) == []


@pytest.mark.parametrize(
    "text,spec",
    [
        ("line:249", WorldSpec("line", 249)),
        ("grid:7:goal=center", WorldSpec("grid", 7, goal="center")),
        ("maze:7:rows=3", WorldSpec("maze", 7, rows=3)),
        ("trap", WorldSpec("trap")),
        ("file:/tmp/x.json", WorldSpec("file", path="/tmp/x.json")),
    ],
)
def test_parse_model(text, spec):
    assert parse_model(text) == spec


@pytest.mark.parametrize("text", ["line", "ring:5", "grid:x", "grid:5:goal=top"])
def test_parse_model_errors(text):
    with pytest.raises(ValueError):
        parse_model(text)


def test_parse_model_probability():
    assert parse_model("line:5", "1/2").build() == gen_line(5, Fraction(1, 2))
