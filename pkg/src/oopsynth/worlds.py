"""Benchmark world generators (line, grid, maze) and the JSON MDP file format."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .mdp import Mdp
from .rational import format_rational, parse_rational

ONE = Fraction(1)


@dataclass(frozen=True)
class WorldSpec:
    """Descriptor of a generated (or file-backed) world."""

    family: str
    k: int = 0
    p: Fraction = ONE
    goal: str = "corner"
    rows: int | None = None
    path: str | None = None

    def build(self) -> Mdp:
        if self.family == "line":
            return gen_line(self.k, self.p)
        if self.family == "grid":
            return gen_grid(self.k, self.goal)
        if self.family == "maze":
            return gen_maze(self.k, self.rows)
        if self.family == "trap":
            return trap_mdp()
        if self.family == "file":
            return load_mdp(self.path)
        raise ValueError(f"unknown world family {self.family!r}")

    def describe(self) -> dict:
        out = {"family": self.family}
        if self.family in ("line", "grid", "maze"):
            out["k"] = self.k
        if self.family == "line":
            out["p"] = format_rational(self.p)
        if self.family == "grid":
            out["goal"] = self.goal
        if self.family == "maze" and self.rows is not None:
            out["rows"] = self.rows
        if self.family == "file":
            out["path"] = self.path
        return out


def parse_model(text: str, p=ONE) -> WorldSpec:
    """Parse ``family:k[:goal=center|corner][:rows=r]``, ``trap`` or ``file:PATH``."""
    if text == "trap":
        return WorldSpec("trap")
    if text.startswith("file:"):
        return WorldSpec("file", path=text[len("file:"):])
    parts = text.split(":")
    family = parts[0]
    if family not in ("line", "grid", "maze") or len(parts) < 2:
        raise ValueError(f"bad model shorthand {text!r}; expected family:k[:goal=..][:rows=..]")
    try:
        k = int(parts[1])
    except ValueError:
        raise ValueError(f"bad size in model shorthand {text!r}") from None
    goal, rows = "corner", None
    for opt in parts[2:]:
        key, _, value = opt.partition("=")
        if key == "goal" and value in ("center", "corner"):
            goal = value
        elif key == "rows" and value.isdigit():
            rows = int(value)
        else:
            raise ValueError(f"bad model option {opt!r} in {text!r}")
    return WorldSpec(family, k, parse_rational(p), goal, rows)


def _finish(n, goals, actions, transitions) -> Mdp:
    goals = set(goals)
    rewards = [0 if s in goals else 1 for s in range(n)]
    initial = [s for s in range(n) if s not in goals]
    return Mdp.build(n, initial, goals, actions, transitions, rewards)


def gen_line(k: int, p=ONE) -> Mdp:
    """A corridor of ``k`` states with the goal in the middle.

    Moves succeed with probability ``p`` and otherwise stay put; moving out of
    either end is a self-loop.
    """
    p = parse_rational(p)
    if k < 3 or k % 2 == 0:
        raise ValueError(f"line size must be odd and >= 3, got {k}")
    if not 0 < p <= 1:
        raise ValueError(f"success probability must lie in (0, 1], got {p}")
    goal = (k - 1) // 2
    trans = {}
    for s in range(k):
        if s == goal:
            continue
        for name, t in (("l", s - 1), ("r", s + 1)):
            if 0 <= t < k:
                trans[(s, name)] = [(t, p), (s, 1 - p)]
    return _finish(k, [goal], ("l", "r"), trans)


GRID_ACTIONS = ("left", "right", "up", "down")


def gen_grid(k: int, goal: str = "corner") -> Mdp:
    """Deterministic ``k x k`` grid, row-major, goal in the bottom-right corner or the center."""
    if k < 2:
        raise ValueError(f"grid size must be >= 2, got {k}")
    if goal == "corner":
        g = k * k - 1
    elif goal == "center":
        if k % 2 == 0:
            raise ValueError(f"center goal needs an odd grid size, got {k}")
        g = (k * k - 1) // 2
    else:
        raise ValueError(f"unknown goal placement {goal!r}")
    trans = {}
    for s in range(k * k):
        if s == g:
            continue
        r, c = divmod(s, k)
        moves = {"left": (r, c - 1), "right": (r, c + 1), "up": (r - 1, c), "down": (r + 1, c)}
        for name, (rr, cc) in moves.items():
            if 0 <= rr < k and 0 <= cc < k:
                trans[(s, name)] = [(rr * k + cc, ONE)]
    return _finish(k * k, [g], GRID_ACTIONS, trans)


def gen_maze(k: int, rows: int | None = None) -> Mdp:
    """Top row of ``k`` cells with three corridors hanging under the left, middle and right columns.

    States are numbered along the top row, then per corridor level left, middle,
    right. The goal is the bottom cell of the middle corridor.
    """
    if k < 5 or k % 2 == 0:
        raise ValueError(f"maze width must be odd and >= 5, got {k}")
    rows = (k + 1) // 2 if rows is None else rows
    if rows < 2:
        raise ValueError(f"maze needs at least 2 rows, got {rows}")
    cols = (0, (k - 1) // 2, k - 1)
    n = k + 3 * (rows - 1)

    def cell(level, j):  # level >= 1, corridor j in 0..2
        return k + 3 * (level - 1) + j

    goal = cell(rows - 1, 1)
    trans = {}
    for c in range(k):
        if c > 0:
            trans[(c, "left")] = [(c - 1, ONE)]
        if c < k - 1:
            trans[(c, "right")] = [(c + 1, ONE)]
        if c in cols:
            trans[(c, "down")] = [(cell(1, cols.index(c)), ONE)]
    for level in range(1, rows):
        for j in range(3):
            s = cell(level, j)
            if s == goal:
                continue
            trans[(s, "up")] = [(cols[j] if level == 1 else cell(level - 1, j), ONE)]
            if level < rows - 1:
                trans[(s, "down")] = [(cell(level + 1, j), ONE)]
    return _finish(n, [goal], GRID_ACTIONS, trans)


def gen_random(n_states: int, n_actions: int, seed: int, max_succ: int = 2, denominators=(2, 3, 4)) -> Mdp:
    """Small random MDP with one absorbing goal (the last state) for property tests.

    Each non-goal row picks up to ``max_succ`` successors with rational
    probabilities; rewards are 1 or 2.
    """
    rng = random.Random(seed)
    goal = n_states - 1
    trans = {}
    for s in range(goal):
        for a in range(n_actions):
            m = rng.randint(1, max_succ)
            succ = rng.sample(range(n_states), min(m, n_states))
            if len(succ) == 1:
                trans[(s, a)] = [(succ[0], ONE)]
                continue
            d = rng.choice(denominators)
            first = Fraction(rng.randint(1, d - 1), d)
            trans[(s, a)] = [(succ[0], first), (succ[1], 1 - first)]
    rewards = [rng.choice((1, 2)) for _ in range(goal)] + [0]
    actions = tuple(f"a{i}" for i in range(n_actions))
    return Mdp.build(n_states, range(goal), [goal], actions, trans, rewards)


# ---------------------------------------------------------------- file format


def to_json(m: Mdp) -> dict:
    rows = []
    for s in range(m.n_states):
        for a, name in enumerate(m.actions):
            row = m.transitions[s][a]
            if row == ((s, ONE),):
                continue
            rows.extend({"from": s, "action": name, "to": t, "p": format_rational(p)} for t, p in row)
    return {
        "states": m.n_states,
        "initial": list(m.initial),
        "goals": list(m.goals),
        "actions": list(m.actions),
        "rewards": [format_rational(r) for r in m.rewards],
        "transitions": rows,
    }


def from_json(data: dict) -> Mdp:
    for key in ("states", "initial", "goals", "actions", "rewards", "transitions"):
        if key not in data:
            raise ValueError(f"missing key {key!r}")
    n = int(data["states"])
    actions = tuple(data["actions"])
    trans: dict = {}
    for i, row in enumerate(data["transitions"]):
        try:
            key = (int(row["from"]), row["action"])
            entry = (int(row["to"]), parse_rational(row["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"transition {i}: {exc}") from None
        if key[1] not in actions:
            raise ValueError(f"transition {i}: unknown action {key[1]!r}")
        if not 0 <= key[0] < n:
            raise ValueError(f"transition {i}: state {key[0]} out of range")
        trans.setdefault(key, []).append(entry)
    if any(parse_rational(r) != 0 for r in data.get("action_rewards", [])):
        raise ValueError("nonzero state-action rewards are not supported")
    rewards = [parse_rational(r) for r in data["rewards"]]
    return Mdp.build(n, data["initial"], data["goals"], actions, trans, rewards)


def load_mdp(path) -> Mdp:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return from_json(data)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def save_mdp(m: Mdp, path) -> None:
    Path(path).write_text(json.dumps(to_json(m), indent=1) + "\n", encoding="utf-8")


def trap_mdp() -> Mdp:
    """Six-state MDP with an inescapable trap s2 and goal s3 (shipped fixture)."""
    text = resources.files("oopsynth").joinpath("data/trap.json").read_text(encoding="utf-8")
    return from_json(json.loads(text))
