"""Explicit MDPs and POMDPs, positional strategies, and their numerical solvers.

Probabilities and rewards are stored as exact ``Fraction`` values; the solvers
work on float64 sparse matrices built from them. Expected rewards follow the
total-reward-until-goal semantics: a state whose goal-reaching probability is
below one has the distinguished value ``INFINITE``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order

log = logging.getLogger(__name__)

GOAL_OBS = "✓"
BLIND_OBS = "⊥"

VI_MAX_SWEEPS = 10**6
DIRECT_SOLVE_LIMIT = 2000


class _Infinite:
    """Expected reward of a chain that misses the goal with positive probability."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __str__(self):
        return "inf"

    def __float__(self):
        return float("inf")

    def __eq__(self, other):
        return isinstance(other, _Infinite)

    def __hash__(self):
        return hash("INFINITE")

    def __gt__(self, other):
        return not isinstance(other, _Infinite)

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return isinstance(other, _Infinite)

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()


def meets_threshold(reward, tau, strict: bool = False, slack: float = 0.0) -> bool:
    """``reward <= tau`` (or ``<`` when strict); INFINITE never meets a threshold."""
    if reward is INFINITE:
        return False
    if strict:
        return reward < tau + slack
    return reward <= tau + slack


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SingularSystemError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ImproperStateError(ValueError):
    pass


class StrategyError(KeyError):
    pass


Row = tuple[tuple[int, Fraction], ...]


@dataclass(frozen=True)
class Mdp:
    """Finite MDP ``(S, I, G, Act, P, rew)`` with states ``0..n_states-1``.

    ``transitions[s][a]`` is the sparse successor distribution of action index
    ``a`` in state ``s`` as ``((t, p), ...)`` sorted by successor.
    """

    n_states: int
    initial: tuple[int, ...]
    goals: tuple[int, ...]
    actions: tuple[str, ...]
    transitions: tuple[tuple[Row, ...], ...]
    rewards: tuple[Fraction, ...]

    @classmethod
    def build(cls, n_states, initial, goals, actions, transitions: Mapping, rewards) -> "Mdp":
        """Assemble an MDP from a ``{(s, action): [(t, p), ...]}`` mapping.

        Actions may be given by name or index. Missing ``(s, a)`` rows become
        probability-one self-loops; duplicate successors are merged.
        """
        actions = tuple(actions)
        index = {name: i for i, name in enumerate(actions)}
        rows = [[((s, Fraction(1)),) for _ in actions] for s in range(n_states)]
        for (s, a), succ in transitions.items():
            a = index[a] if isinstance(a, str) else int(a)
            merged: dict[int, Fraction] = {}
            for t, p in succ:
                merged[int(t)] = merged.get(int(t), Fraction(0)) + Fraction(p)
            rows[s][a] = tuple(sorted((t, p) for t, p in merged.items() if p != 0))
        return cls(
            n_states=int(n_states),
            initial=tuple(sorted(set(initial))),
            goals=tuple(sorted(set(goals))),
            actions=actions,
            transitions=tuple(tuple(r) for r in rows),
            rewards=tuple(Fraction(r) for r in rewards),
        )

    @cached_property
    def goal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.goals)] = True
        return mask

    @cached_property
    def non_goal(self) -> tuple[int, ...]:
        goals = set(self.goals)
        return tuple(s for s in range(self.n_states) if s not in goals)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def action_index(self, name: str) -> int:
        return self.actions.index(name)

    @cached_property
    def reward_vector(self) -> np.ndarray:
        return np.array([float(r) for r in self.rewards])

    @cached_property
    def action_matrices(self) -> tuple[sp.csr_matrix, ...]:
        mats = []
        for a in range(self.n_actions):
            rows, cols, vals = [], [], []
            for s in range(self.n_states):
                for t, p in self.transitions[s][a]:
                    rows.append(s)
                    cols.append(t)
                    vals.append(float(p))
            mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(self.n_states, self.n_states)))
        return tuple(mats)

    @cached_property
    def stacked_matrix(self) -> sp.csr_matrix:
        """All action matrices stacked vertically: row ``a * n + s``."""
        return sp.vstack(self.action_matrices, format="csr")


def validate_mdp(m: Mdp) -> list[str]:
    """Return a list of invariant violations; empty means the MDP is valid."""
    report = []
    n = m.n_states
    if n < 1:
        return ["no states"]
    if not m.actions:
        report.append("action set empty")
    if len(set(m.actions)) != len(m.actions):
        report.append("duplicate action names")
    if not m.initial:
        report.append("initial set empty")
    if any(not 0 <= s < n for s in m.initial + m.goals):
        report.append("initial or goal state out of range")
    if set(m.initial) & set(m.goals):
        report.append(f"initial and goal sets intersect: {sorted(set(m.initial) & set(m.goals))}")
    if len(m.rewards) != n:
        report.append(f"expected {n} rewards, got {len(m.rewards)}")
    for s, r in enumerate(m.rewards):
        if r < 0:
            report.append(f"negative reward at s{s}")
    if len(m.transitions) != n:
        report.append(f"expected {n} transition rows, got {len(m.transitions)}")
        return report
    for s in range(n):
        if len(m.transitions[s]) != len(m.actions):
            report.append(f"state s{s} has {len(m.transitions[s])} action rows")
            continue
        for a, row in enumerate(m.transitions[s]):
            name = m.actions[a]
            total = Fraction(0)
            for t, p in row:
                if not 0 <= t < n:
                    report.append(f"row (s{s}, {name}) has successor {t} out of range")
                if not 0 <= p <= 1:
                    report.append(f"row (s{s}, {name}) has probability {p} outside [0, 1]")
                total += p
            if total != 1:
                report.append(f"row (s{s}, {name}) sums to {float(total):g}")
    if not m.goals:
        report.append("goal set empty or non-absorbing: no goal states")
    for g in m.goals:
        if 0 <= g < n and any(row != ((g, Fraction(1)),) for row in m.transitions[g]):
            report.append(f"goal set empty or non-absorbing: s{g} is not absorbing")
    return report


@dataclass(frozen=True)
class ValueVector:
    """Per-state expected rewards; ``infinite`` marks states with value INFINITE."""

    values: np.ndarray
    infinite: np.ndarray
    initial: tuple[int, ...]

    def __getitem__(self, s):
        return INFINITE if self.infinite[s] else float(self.values[s])

    def __len__(self):
        return len(self.values)

    @property
    def aggregate(self):
        if not self.initial:
            return 0.0
        if self.infinite[list(self.initial)].any():
            return INFINITE
        return float(np.mean(self.values[list(self.initial)]))

    @property
    def all_finite(self) -> bool:
        return not self.infinite.any()


def _backward_reach(adjacency: sp.csr_matrix, sources: np.ndarray) -> np.ndarray:
    """Mask of states with a path (along ``adjacency`` edges) into ``sources``."""
    n = adjacency.shape[0]
    reach = np.zeros(n, dtype=bool)
    if not sources.any():
        return reach
    # reversed graph plus a super-source wired to every source
    rev = adjacency.T.tocsr()
    src = np.flatnonzero(sources)
    extra = sp.csr_matrix((np.ones(len(src)), (np.full(len(src), n), src)), shape=(n + 1, n + 1))
    graph = sp.bmat([[rev, None], [None, sp.csr_matrix((1, 1))]], format="csr") + extra
    order = breadth_first_order(graph, n, directed=True, return_predecessors=False)
    reach[order[order < n]] = True
    return reach


def almost_sure_states(m: Mdp) -> tuple[np.ndarray, np.ndarray]:
    """States that can reach the goal with probability one under some strategy.

    Returns ``(mask, allowed)`` where ``allowed[s, a]`` says action ``a`` keeps
    every successor inside the almost-sure set.
    """
    n, na = m.n_states, m.n_actions
    inside = np.ones(n, dtype=bool)
    succ = [[np.array([t for t, _ in m.transitions[s][a]], dtype=int) for a in range(na)] for s in range(n)]
    while True:
        allowed = np.array([[inside[succ[s][a]].all() for a in range(na)] for s in range(n)], dtype=bool)
        allowed &= inside[:, None]
        rows, cols = [], []
        for s in range(n):
            for a in range(na):
                if allowed[s, a]:
                    rows.extend([s] * len(succ[s][a]))
                    cols.extend(succ[s][a].tolist())
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        new_inside = _backward_reach(adj, m.goal_mask) & inside
        if (new_inside == inside).all():
            return inside, allowed
        inside = new_inside


def min_expected_reward(m: Mdp, tol: float = 1e-12, max_sweeps: int = VI_MAX_SWEEPS):
    """Minimal expected total reward to the goal set, by value iteration.

    Returns ``(values, Q)`` where ``Q[s, a] = rew(s) + sum_t P(s,a)(t) v(t)`` and
    actions that risk leaving the almost-sure set get ``inf``. Iteration starts
    from zero, so it converges to the least fixpoint; that equals the optimum
    whenever non-goal rewards are strictly positive.
    """
    n, na = m.n_states, m.n_actions
    inside, allowed = almost_sure_states(m)
    allowed = allowed & ~m.goal_mask[:, None]
    rew = m.reward_vector
    stacked = m.stacked_matrix
    v = np.zeros(n)
    active = inside & ~m.goal_mask
    residual = np.inf
    scale = 1.0
    for _ in range(max_sweeps):
        q = rew[:, None] + (stacked @ v).reshape(na, n).T
        q[~allowed] = np.inf
        new = np.where(active, q.min(axis=1), 0.0)
        residual = float(np.max(np.abs(new - v))) if n else 0.0
        v = new
        scale = max(1.0, float(np.max(np.abs(v))) if n else 1.0)
        if residual < tol * scale:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_sweeps} sweeps", residual)
    q = rew[:, None] + (stacked @ v).reshape(na, n).T
    q[~allowed] = np.inf
    q[m.goal_mask] = 0.0
    return ValueVector(v, ~inside, m.initial), q


def optimal_signatures(m: Mdp, values: ValueVector, Q: np.ndarray, tie_tol: float = 1e-6) -> tuple[frozenset, ...]:
    """Per-state set of optimal action indices (the optimal signature).

    Goal states and states that cannot reach the goal almost surely get the full
    action set: every action is equally good (or equally hopeless) there.
    """
    if values.aggregate is INFINITE:
        bad = [s for s in m.initial if values.infinite[s]]
        raise ImproperStateError(f"improper state: initial states {bad} cannot reach the goal almost surely")
    everything = frozenset(range(m.n_actions))
    sigs = []
    for s in range(m.n_states):
        if m.goal_mask[s] or values.infinite[s]:
            sigs.append(everything)
            continue
        bound = values.values[s] * (1 + tie_tol) + tie_tol
        sigs.append(frozenset(int(a) for a in np.flatnonzero(Q[s] <= bound)))
    return tuple(sigs)


@dataclass(frozen=True)
class ObservationFunction:
    """Total map from states to observation labels.

    Goal states always carry ``GOAL_OBS``. In the ``location`` kind every
    non-goal state is either observed as ``@s<i>`` (its sensor is on) or as
    ``BLIND_OBS``.
    """

    kind: str
    assignment: tuple[str, ...]

    @classmethod
    def from_classes(cls, m: Mdp, classes: Sequence[Iterable[int]], labels: Sequence[str] | None = None):
        assignment = [None] * m.n_states
        for g in m.goals:
            assignment[g] = GOAL_OBS
        for i, block in enumerate(classes):
            label = labels[i] if labels else f"o{i + 1}"
            for s in block:
                if assignment[s] is not None:
                    raise ValueError(f"state s{s} assigned twice")
                assignment[s] = label
        missing = [s for s, o in enumerate(assignment) if o is None]
        if missing:
            raise ValueError(f"observation function not total: {missing}")
        return cls("general", tuple(assignment))

    @classmethod
    def location(cls, m: Mdp, sensors: Iterable[int]):
        sensors = set(sensors)
        if sensors & set(m.goals):
            raise ValueError("sensors cannot be placed on goal states")
        assignment = tuple(
            GOAL_OBS if m.goal_mask[s] else (f"@s{s}" if s in sensors else BLIND_OBS) for s in range(m.n_states)
        )
        return cls("location", assignment)

    @classmethod
    def full(cls, m: Mdp):
        return cls.from_classes(m, [[s] for s in m.non_goal], [f"@s{s}" for s in m.non_goal])

    @cached_property
    def classes(self) -> dict[str, tuple[int, ...]]:
        """Observation label -> states, ordered by smallest member; goal excluded."""
        out: dict[str, list[int]] = {}
        for s, o in enumerate(self.assignment):
            if o != GOAL_OBS:
                out.setdefault(o, []).append(s)
        return {o: tuple(states) for o, states in out.items()}

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.classes)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def sensors(self) -> tuple[int, ...]:
        return tuple(s for s, o in enumerate(self.assignment) if o.startswith("@"))

    def check(self, m: Mdp) -> list[str]:
        report = []
        if len(self.assignment) != m.n_states:
            return [f"assignment has {len(self.assignment)} entries for {m.n_states} states"]
        for s, o in enumerate(self.assignment):
            if (o == GOAL_OBS) != bool(m.goal_mask[s]):
                report.append(f"s{s}: goal marker must be used exactly on goal states")
            if self.kind == "location" and o not in (GOAL_OBS, BLIND_OBS, f"@s{s}"):
                report.append(f"s{s}: location observation {o!r} is not @s{s} or {BLIND_OBS}")
        return report

    def to_json(self) -> dict:
        return {"kind": self.kind, "assignment": list(self.assignment)}

    @classmethod
    def from_json(cls, data: Mapping):
        return cls(data["kind"], tuple(data["assignment"]))


@dataclass(frozen=True)
class PositionalStrategy:
    """Action distribution per observation label.

    ``table[label]`` maps action indices to probabilities (Fractions for exact
    strategies, floats for solver-extracted ones); deterministic rows are Dirac.
    """

    mode: str
    table: Mapping[str, Mapping[int, object]] = field(default_factory=dict)

    @classmethod
    def deterministic(cls, choices: Mapping[str, int]):
        return cls("deterministic", {o: {int(a): Fraction(1)} for o, a in choices.items()})

    @classmethod
    def randomized(cls, table: Mapping[str, Mapping[int, object]]):
        return cls("randomized", {o: {int(a): p for a, p in row.items() if p != 0} for o, row in table.items()})

    @classmethod
    def uniform(cls, labels: Iterable[str], n_actions: int):
        p = Fraction(1, n_actions)
        return cls("randomized", {o: {a: p for a in range(n_actions)} for o in labels})

    def row(self, label: str) -> Mapping[int, object]:
        try:
            return self.table[label]
        except KeyError:
            raise StrategyError(f"strategy has no row for observation class {label!r}") from None

    def check(self) -> list[str]:
        report = []
        for o, row in self.table.items():
            total = sum(row.values())
            exact = all(isinstance(p, (int, Fraction)) for p in row.values())
            if (exact and total != 1) or (not exact and abs(float(total) - 1) > 1e-9):
                report.append(f"row {o!r} sums to {float(total):g}")
            if any(p < 0 for p in row.values()):
                report.append(f"row {o!r} has a negative probability")
            if self.mode == "deterministic" and (len(row) != 1 or next(iter(row.values())) != 1):
                report.append(f"row {o!r} is not a Dirac distribution")
        return report

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "table": {o: {str(a): str(p) for a, p in sorted(row.items())} for o, row in self.table.items()},
        }


@dataclass(frozen=True)
class MarkovChain:
    n_states: int
    initial: tuple[int, ...]
    goals: tuple[int, ...]
    transitions: tuple[tuple[tuple[int, object], ...], ...]
    rewards: tuple[Fraction, ...]

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for s, row in enumerate(self.transitions):
            for t, p in row:
                rows.append(s)
                cols.append(t)
                vals.append(float(p))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_states, self.n_states))

    @cached_property
    def goal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.goals)] = True
        return mask


def induce_chain(m: Mdp, obs: ObservationFunction, sigma: PositionalStrategy) -> MarkovChain:
    """The Markov chain obtained by resolving each state's choice through ``sigma(obs(s))``."""
    rows = []
    for s in range(m.n_states):
        if m.goal_mask[s]:
            rows.append(((s, Fraction(1)),))
            continue
        acc: dict[int, object] = {}
        for a, q in sigma.row(obs.assignment[s]).items():
            if q == 0:
                continue
            for t, p in m.transitions[s][a]:
                acc[t] = acc.get(t, 0) + q * p
        rows.append(tuple(sorted((t, p) for t, p in acc.items() if p != 0)))
    return MarkovChain(m.n_states, m.initial, m.goals, tuple(rows), m.rewards)


def chain_expected_reward(c: MarkovChain, tol: float = 1e-9, direct_limit: int = DIRECT_SOLVE_LIMIT) -> ValueVector:
    """Expected total reward to the goal in a Markov chain.

    States that reach a goal-avoiding bottom component with positive
    probability are INFINITE; the rest solve ``(I - P_TT) v = rew_T``.
    """
    n = c.n_states
    P = c.matrix
    adj = (P > 0).astype(float).tocsr()
    can_reach_goal = _backward_reach(adj, c.goal_mask)
    can_reach_bad = _backward_reach(adj, ~can_reach_goal)
    infinite = can_reach_bad
    transient = ~infinite & ~c.goal_mask
    values = np.zeros(n)
    idx = np.flatnonzero(transient)
    if len(idx):
        rew = np.array([float(c.rewards[s]) for s in idx])
        A = sp.identity(len(idx), format="csc") - P[idx][:, idx].tocsc()
        values[idx] = _solve(A, rew, tol, direct_limit)
    return ValueVector(values, infinite, c.initial)


def _solve(A: sp.csc_matrix, b: np.ndarray, tol: float, direct_limit: int) -> np.ndarray:
    if A.shape[0] <= direct_limit:
        try:
            x = scipy.linalg.solve(A.toarray(), b)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SingularSystemError(f"chain system is singular: {exc}", float("inf")) from None
        residual = float(np.max(np.abs(A @ x - b)))
    else:
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularSystemError(f"chain system is singular: {exc}", float("inf")) from None
        x = lu.solve(b)
        residual = float(np.max(np.abs(A @ x - b)))
        for _ in range(20):
            if residual <= tol * max(1.0, float(np.max(np.abs(x)))):
                break
            x = x + lu.solve(b - A @ x)
            residual = float(np.max(np.abs(A @ x - b)))
    if not np.all(np.isfinite(x)) or residual > tol * max(1.0, float(np.max(np.abs(x)))):
        raise SingularSystemError("chain system solve did not reach tolerance", residual)
    return x


def pomdp_reward_under_strategy(m: Mdp, obs: ObservationFunction, sigma: PositionalStrategy, tol: float = 1e-9) -> ValueVector:
    return chain_expected_reward(induce_chain(m, obs, sigma), tol)


def greedy_strategy(m: Mdp, signatures: Sequence[frozenset], obs: ObservationFunction | None = None) -> PositionalStrategy:
    """Deterministic strategy picking the lowest-indexed optimal action.

    With ``obs`` given, picks per class the lowest action shared by all its
    states; raises ``ValueError`` when a class shares none.
    """
    obs = obs or ObservationFunction.full(m)
    choices = {}
    for o, states in obs.classes.items():
        shared = frozenset.intersection(*(signatures[s] for s in states))
        if not shared:
            raise ValueError(f"class {o!r} has no shared optimal action")
        choices[o] = min(shared)
    return PositionalStrategy.deterministic(choices)
