"""Independent reference computations used by the tests.

Nothing here imports the solvers under test: chains are solved exactly over
Fractions by Gaussian elimination, reachability is a plain graph search, and
optima come from enumerating every deterministic positional strategy.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

INF = float("inf")


def exact_chain_values(rows, goals, rewards):
    """Exact expected total reward per state; None marks an infinite value.

    ``rows[s]`` is a list of (successor, probability) pairs.
    """
    n = len(rows)
    goals = set(goals)
    # states that can reach the goal at all
    reach = set(goals)
    changed = True
    while changed:
        changed = False
        for s in range(n):
            if s not in reach and any(t in reach and p > 0 for t, p in rows[s]):
                reach.add(s)
                changed = True
    # states that can reach a state which cannot reach the goal
    bad = set(range(n)) - reach
    changed = True
    while changed:
        changed = False
        for s in range(n):
            if s not in bad and s not in goals and any(t in bad and p > 0 for t, p in rows[s]):
                bad.add(s)
                changed = True
    trans = [s for s in range(n) if s not in bad and s not in goals]
    pos = {s: i for i, s in enumerate(trans)}
    k = len(trans)
    A = [[Fraction(0)] * (k + 1) for _ in range(k)]
    for s in trans:
        i = pos[s]
        A[i][i] += 1
        A[i][k] = Fraction(rewards[s])
        for t, p in rows[s]:
            if t in pos:
                A[i][pos[t]] -= Fraction(p)
    for c in range(k):
        piv = next(r for r in range(c, k) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        inv = 1 / A[c][c]
        A[c] = [x * inv for x in A[c]]
        for r in range(k):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    out = [Fraction(0)] * n
    for s in bad:
        out[s] = None
    for s in trans:
        out[s] = A[pos[s]][k]
    return out


def exact_aggregate(values, initial):
    if any(values[s] is None for s in initial):
        return None
    return sum(values[s] for s in initial) / len(initial)


def strategy_rows(m, assignment, table):
    """Chain rows for ``m`` when state ``s`` plays ``table[assignment[s]]`` (a dict action -> prob)."""
    rows = []
    for s in range(m.n_states):
        if s in m.goals:
            rows.append([(s, Fraction(1))])
            continue
        acc = {}
        for a, q in table[assignment[s]].items():
            for t, p in m.transitions[s][a]:
                acc[t] = acc.get(t, 0) + Fraction(q) * p
        rows.append([(t, p) for t, p in acc.items() if p])
    return rows


def brute_force_optimum(m):
    """Minimum aggregate over all fully observable deterministic strategies, exactly."""
    states = [s for s in range(m.n_states) if s not in m.goals]
    best = None
    for choice in itertools.product(range(len(m.actions)), repeat=len(states)):
        assignment = {s: s for s in states}
        table = {s: {a: 1} for s, a in zip(states, choice)}
        vals = exact_chain_values(strategy_rows(m, assignment, table), m.goals, m.rewards)
        agg = exact_aggregate(vals, m.initial)
        if agg is not None and (best is None or agg < best):
            best = agg
    return best


def brute_force_pomdp_deterministic(m, assignment):
    """Minimum aggregate over deterministic strategies of an observation function given as a state -> label map."""
    labels = sorted({assignment[s] for s in range(m.n_states) if s not in m.goals})
    best = None
    for choice in itertools.product(range(len(m.actions)), repeat=len(labels)):
        table = {o: {a: 1} for o, a in zip(labels, choice)}
        vals = exact_chain_values(strategy_rows(m, assignment, table), m.goals, m.rewards)
        agg = exact_aggregate(vals, m.initial)
        if agg is not None and (best is None or agg < best):
            best = agg
    return best


def stirling_closed_form(n, k):
    from math import comb, factorial

    return sum((-1) ** j * comb(k, j) * (k - j) ** n for j in range(k + 1)) // factorial(k)
