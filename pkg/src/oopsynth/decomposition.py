"""Decomposition over atomic distinguishability groups.

States with identical optimal signatures form an atomic group. Candidate
observation functions merge whole groups into ``k`` blocks; candidates are
ranked by how many blocks still share an optimal action and by how many
strategy variables that fixes, then handed to the oracles in rank order.
"""
from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

from .mdp import (
    Mdp,
    ObservationFunction,
    ValueVector,
    min_expected_reward,
    optimal_signatures,
)
from .oracle import (
    OracleOptions,
    OracleResult,
    _class_rule,
    fast_path_check,
    infer_strategy_constraints,
    smt_direct,
    smt_oracle,
)
from .smt import SolverConfig

log = logging.getLogger(__name__)

MAX_CANDIDATES = 500_000


@dataclass(frozen=True)
class GroupPartition:
    """Non-goal states grouped by exact optimal signature, ordered by smallest member."""

    groups: tuple[tuple[tuple[int, ...], frozenset], ...]
    index: tuple[int, ...]  # group of each state, -1 for goals
    signatures: tuple[frozenset, ...]
    values: ValueVector

    @property
    def optimum(self):
        return self.values.aggregate

    def __len__(self):
        return len(self.groups)


def atomic_groups(m: Mdp, tie_tol: float = 1e-6, tol: float = 1e-12) -> GroupPartition:
    values, Q = min_expected_reward(m, tol)
    sigs = optimal_signatures(m, values, Q, tie_tol)
    order: dict[frozenset, list[int]] = {}
    for s in m.non_goal:
        order.setdefault(sigs[s], []).append(s)
    groups = tuple((tuple(states), sig) for sig, states in order.items())
    index = [-1] * m.n_states
    for g, (states, _) in enumerate(groups):
        for s in states:
            index[s] = g
    return GroupPartition(groups, tuple(index), sigs, values)


def weakly_equivalent(s: int, t: int, signatures: Sequence[frozenset]) -> bool:
    return bool(signatures[s] & signatures[t])


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def enumerate_partitions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All restricted-growth strings of length ``n`` with exactly ``k`` blocks, lexicographically."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    rgs = [0] * n

    def rec(i, used):
        if i == n:
            yield tuple(rgs)
            return
        for b in range(min(used + 1, k)):
            now = max(used, b + 1)
            if k - now > n - i - 1:
                continue  # too few positions left to open the missing blocks
            rgs[i] = b
            yield from rec(i + 1, now)

    yield from rec(1, 1)


@dataclass(frozen=True)
class CandidatePartition:
    rgs: tuple[int, ...]
    blocks: tuple[tuple[int, ...], ...]  # group indices per block
    shared: tuple[frozenset, ...]
    eq: int
    inferred: int

    def observation(self, gp: GroupPartition, m: Mdp) -> ObservationFunction:
        classes = [sorted(s for g in block for s in gp.groups[g][0]) for block in self.blocks]
        return ObservationFunction.from_classes(m, classes)


def _candidate(rgs, gp: GroupPartition, n_actions: int) -> CandidatePartition:
    k = max(rgs) + 1
    blocks = [[] for _ in range(k)]
    for g, b in enumerate(rgs):
        blocks[b].append(g)
    shared, eq, inferred = [], 0, 0
    for block in blocks:
        zeros, support, fixed = _class_rule([gp.groups[g][1] for g in block], n_actions)
        shared.append(support)
        eq += bool(support)
        inferred += fixed
    return CandidatePartition(tuple(rgs), tuple(tuple(b) for b in blocks), tuple(shared), eq, inferred)


def rank_candidates(gp: GroupPartition, k: int, m: Mdp, max_candidates: int = MAX_CANDIDATES) -> list[CandidatePartition]:
    """Candidates sorted by eq score, then inferred-constraint count (both descending), then RGS."""
    n = len(gp)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n} groups, got {k}")
    total = stirling2(n, k)
    if total > max_candidates:
        raise ValueError(f"S({n},{k}) = {total} candidates exceed the cap {max_candidates}")
    cands = [_candidate(r, gp, m.n_actions) for r in enumerate_partitions(n, k)]
    cands.sort(key=lambda c: (-c.eq, -c.inferred, c.rgs))
    return cands


def _all_consistent_exists(gp: GroupPartition, b: int) -> tuple[int, ...] | None:
    """Some ``b``-block partition where every block shares an optimal action (depth-first)."""
    n = len(gp)
    sigs = [sig for _, sig in gp.groups]
    rgs = [0] * n
    shared: list[frozenset] = []

    def rec(i):
        if i == n:
            return len(shared) == b
        if n - i < b - len(shared):
            return False
        for blk in range(len(shared)):
            inter = shared[blk] & sigs[i]
            if inter:
                old = shared[blk]
                shared[blk] = inter
                rgs[i] = blk
                if rec(i + 1):
                    return True
                shared[blk] = old
        if len(shared) < b:
            shared.append(sigs[i])
            rgs[i] = len(shared) - 1
            if rec(i + 1):
                return True
            shared.pop()
        return False

    return tuple(rgs) if rec(0) else None


def mpbp(m: Mdp, linear: bool = False, gp: GroupPartition | None = None):
    """Least number of observations whose best deterministic strategy matches the optimum.

    Returns ``(B*, witness)`` where the witness is the first-ranked candidate
    at ``B*``. Feasibility is monotone in ``b`` (split a block), so a binary
    search is used unless ``linear`` is set.
    """
    gp = gp or atomic_groups(m)
    hi = min(m.n_actions, len(gp))
    if linear:
        best = next(b for b in range(1, hi + 1) if _all_consistent_exists(gp, b) is not None)
    else:
        lo, best = 1, hi
        while lo <= hi:
            mid = (lo + hi) // 2
            if _all_consistent_exists(gp, mid) is not None:
                best, hi = mid, mid - 1
            else:
                lo = mid + 1
    witness = rank_candidates(gp, best, m)[0]
    return best, witness.observation(gp, m)


@dataclass
class SolveOutcome:
    status: str
    obs: ObservationFunction | None = None
    strategy: object = None
    reward: object = None
    stats: dict = field(default_factory=dict)


def a_g_solve(
    m: Mdp,
    B: int,
    tau,
    strict: bool = False,
    problem: str = "pop",
    mode: str = "randomized",
    fallback: bool = False,
    cfg: SolverConfig | None = None,
    options: OracleOptions | None = None,
    wall_budget: float | None = None,
) -> SolveOutcome:
    """Ranked enumeration of group merges, evaluated by the fast path and the SMT oracle."""
    start = time.monotonic()
    if problem == "pdoop":
        mode = "deterministic"
    elif problem != "pop":
        raise ValueError(f"decomposition handles pop and pdoop, not {problem!r}")
    gp = atomic_groups(m)
    b_star, _ = mpbp(m, gp=gp)
    k = min(B, len(gp))
    cands = rank_candidates(gp, k, m)
    stats = {
        "groups": len(gp),
        "k": k,
        "b_star": b_star,
        "candidates_ranked": len(cands),
        "oracle_calls": 0,
        "fast_path_hits": 0,
        "smt_calls": 0,
        "early_terminated": False,
        "fallback_used": False,
        "oracle_timeouts": 0,
    }
    optimum = gp.optimum

    def finish(status, res: OracleResult | None = None):
        stats["wall_time"] = time.monotonic() - start
        if res is None:
            return SolveOutcome(status, stats=stats)
        return SolveOutcome(status, res.obs, res.strategy, res.reward, stats)

    for rank, cand in enumerate(cands):
        if wall_budget is not None and time.monotonic() - start > wall_budget:
            return finish("timeout")
        obs = cand.observation(gp, m)
        stats["oracle_calls"] += 1
        res = None
        if cand.eq == k:
            res = fast_path_check(m, obs, gp.signatures, tau, strict, optimum)
            if res is not None:
                stats["fast_path_hits"] += 1
        if res is None:
            stats["smt_calls"] += 1
            constraints = infer_strategy_constraints(m, obs, gp.signatures)
            res = smt_oracle(m, obs, tau, strict, constraints, mode, cfg, options)
        if res.status in ("timeout", "unknown"):
            stats["oracle_timeouts"] += 1
        if res.status == "sat":
            stats["rank"] = rank
            return finish("sat", res)
        if rank == 0 and k >= b_star and res.status == "unsat":
            stats["early_terminated"] = True
            return finish("unsat")
    if fallback:
        stats["fallback_used"] = True
        res = smt_direct(m, problem, B, tau, strict, mode, cfg, options)
        return finish(res.status, res)
    return finish("unknown")


def ssp_initial_guess(m: Mdp, B: int, seed: int = 0, gp: GroupPartition | None = None) -> ObservationFunction:
    """Sensor selection seeded from the minimal-budget witness.

    Whole witness classes are switched on, smallest first, while they fit; the
    first class that does not fit contributes a seeded random sample of the
    remaining budget.
    """
    if not 0 <= B <= len(m.non_goal):
        raise ValueError(f"budget {B} exceeds the {len(m.non_goal)} non-goal states")
    _, witness = mpbp(m, gp=gp)
    classes = sorted(witness.classes.values(), key=len)
    rng = random.Random(seed)
    on: list[int] = []
    for states in classes:
        room = B - len(on)
        if room == 0:
            break
        if len(states) <= room:
            on.extend(states)
        else:
            on.extend(rng.sample(list(states), room))
            break
    return ObservationFunction.location(m, on)


def ssp_solve(
    m: Mdp,
    B: int,
    tau,
    strict: bool = False,
    mode: str = "randomized",
    seed: int = 0,
    fallback: bool = False,
    cfg: SolverConfig | None = None,
    options: OracleOptions | None = None,
) -> SolveOutcome:
    """Sensor selection: evaluate the initial guess with the oracle, optionally fall back to the full encoding."""
    start = time.monotonic()
    gp = atomic_groups(m)
    obs = ssp_initial_guess(m, B, seed, gp)
    stats = {"oracle_calls": 1, "fast_path_hits": 0, "fallback_used": False, "sensors": list(obs.sensors)}
    res = fast_path_check(m, obs, gp.signatures, tau, strict, gp.optimum)
    if res is not None:
        stats["fast_path_hits"] = 1
    else:
        res = smt_oracle(m, obs, tau, strict, infer_strategy_constraints(m, obs, gp.signatures), mode, cfg, options)
    if res.status != "sat" and fallback:
        stats["fallback_used"] = True
        res = smt_direct(m, "ssp", B, tau, strict, mode, cfg, options)
    status = res.status
    if status == "unsat" and res.source == "smt":
        status = "unknown"  # only this one sensor set was refuted
    stats["wall_time"] = time.monotonic() - start
    return SolveOutcome(status, res.obs, res.strategy, res.reward, stats)
