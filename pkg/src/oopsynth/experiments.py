"""Reusable experiment drivers (sensor placement sweeps, encoding comparisons, brute-force references)."""
from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass
from fractions import Fraction

from .mdp import INFINITE, Mdp, ObservationFunction, PositionalStrategy, min_expected_reward, pomdp_reward_under_strategy
from .oracle import OracleOptions, bisect_min_reward
from .smt import SolverConfig
from .worlds import gen_line, gen_random


@dataclass(frozen=True)
class PlacementResult:
    sensors: tuple[int, ...]
    mirror: tuple[int, ...]
    min_reward: float
    wall_time: float


def mirror_placements(k: int, n_sensors: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Sensor sets on the non-goal states of ``gen_line(k)``, one per mirror orbit."""
    goal = k // 2
    states = [s for s in range(k) if s != goal]
    seen, out = set(), []
    for combo in itertools.combinations(states, n_sensors):
        mirror = tuple(sorted(k - 1 - s for s in combo))
        if combo in seen or mirror in seen:
            continue
        seen.update((combo, mirror))
        out.append((combo, mirror))
    return out


def line_placement_minima(k: int = 7, n_sensors: int = 2, tol: float = 1e-3, cfg: SolverConfig | None = None, options: OracleOptions | None = None) -> list[PlacementResult]:
    """Bisected least expected reward for every non-symmetric placement, ascending."""
    m = gen_line(k)
    out = []
    for combo, mirror in mirror_placements(k, n_sensors):
        start = time.monotonic()
        obs = ObservationFunction.location(m, combo)
        value = bisect_min_reward(m, obs, tol=tol, cfg=cfg, options=options)
        out.append(PlacementResult(combo, mirror, value, time.monotonic() - start))
    out.sort(key=lambda r: (r.min_reward, r.sensors))
    return out


def two_class_observations(m: Mdp):
    """Every observation function with at most two classes, up to relabeling."""
    states = list(m.non_goal)
    first, rest = states[0], states[1:]
    for bits in itertools.product((0, 1), repeat=len(rest)):
        classes = [[first] + [s for s, b in zip(rest, bits) if b == 0], [s for s, b in zip(rest, bits) if b == 1]]
        yield ObservationFunction.from_classes(m, [c for c in classes if c])


def best_deterministic_reward(m: Mdp, obs: ObservationFunction):
    """Exhaustive minimum over deterministic positional strategies for ``obs``."""
    labels = obs.labels
    best = INFINITE
    for choice in itertools.product(range(m.n_actions), repeat=len(labels)):
        sigma = PositionalStrategy.deterministic(dict(zip(labels, choice)))
        r = pomdp_reward_under_strategy(m, obs, sigma).aggregate
        if r < best:
            best = r
    return best


@dataclass(frozen=True)
class AgreementCase:
    """One small random instance for comparing encodings."""

    n_states: int
    n_actions: int
    seed: int
    problem: str
    mode: str
    budget: int
    tau: Fraction
    strict: bool

    def mdp(self) -> Mdp:
        return gen_random(self.n_states, self.n_actions, self.seed)


AGREEMENT_KINDS = (("pop", "randomized"), ("pdoop", "deterministic"), ("ssp", "randomized"), ("ssp", "deterministic"))
AGREEMENT_SCALES = (Fraction(9, 10), Fraction(21, 20), Fraction(5, 4), Fraction(8, 5), Fraction(5, 2))


def agreement_suite(count: int = 50, seed: int = 2024, max_non_goal: int = 8, max_budget: int = 3) -> list[AgreementCase]:
    """Seeded instances with a proper optimum, cycling through problem kinds.

    Thresholds are the fully observable optimum scaled by a factor on either
    side of 1, so the suite mixes feasible and infeasible queries.
    """
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        n = rng.randint(3, max_non_goal + 1)
        na = rng.randint(2, 3)
        s = rng.randrange(10**6)
        m = gen_random(n, na, s)
        opt = min_expected_reward(m)[0].aggregate
        if opt is INFINITE:
            continue
        problem, mode = AGREEMENT_KINDS[len(out) % len(AGREEMENT_KINDS)]
        budget = rng.randint(1, min(max_budget, len(m.non_goal)))
        tau = (Fraction(opt).limit_denominator(10**4) * rng.choice(AGREEMENT_SCALES)).limit_denominator(10**4)
        out.append(AgreementCase(n, na, s, problem, mode, budget, tau, rng.random() < 0.3))
    return out
