"""Typed parametric Markov chains and their SMT-LIB constraint encodings.

A tpMC is stored in a structured form: every non-goal state carries a list of
branches ``(guard, row)``. The guard is a conjunction of literals over the
observation (or sensor) variables, and ``row`` names the strategy row
``x_{row, a}`` the state follows when the guard holds. The transition
polynomials are derived from this structure, and so are all encodings, which
keeps the real and Boolean renderings in lock step.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .mdp import BLIND_OBS, Mdp, ObservationFunction, almost_sure_states
from .rational import smt_real

ONE = Fraction(1)
ZERO = Fraction(0)


# ------------------------------------------------------------------ polynomials


class Polynomial:
    """Sum of monomials; a monomial is a sorted tuple of variable names."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[tuple, Fraction] | None = None):
        self.terms = {}
        for mono, c in (terms or {}).items():
            self._add(tuple(sorted(mono)), Fraction(c))

    def _add(self, mono, c):
        c = self.terms.get(mono, Fraction(0)) + c
        if c:
            self.terms[mono] = c
        else:
            self.terms.pop(mono, None)

    @classmethod
    def const(cls, c) -> "Polynomial":
        return cls({(): c})

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls({(name,): ONE})

    def __add__(self, other):
        out = Polynomial(self.terms)
        for mono, c in _poly(other).terms.items():
            out._add(mono, c)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + _poly(other) * -1

    def __rsub__(self, other):
        return _poly(other) - self

    def __mul__(self, other):
        other = _poly(other)
        out = Polynomial()
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                out._add(tuple(sorted(m1 + m2)), c1 * c2)
        return out

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, (Polynomial, int, Fraction)) and self.terms == _poly(other).terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __bool__(self):
        return bool(self.terms)

    @property
    def variables(self) -> frozenset:
        return frozenset(v for mono in self.terms for v in mono)

    def evaluate(self, assignment: Mapping[str, object]):
        total = 0
        for mono, c in self.terms.items():
            term = c
            for v in mono:
                term = term * assignment[v]
            total = total + term
        return total

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for mono, c in sorted(self.terms.items()):
            parts.append("·".join([str(c)] * (c != 1 or not mono) + list(mono)))
        return " + ".join(parts)


def _poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial.const(x)


# ------------------------------------------------------------------ tpMC


@dataclass(frozen=True)
class TypedVar:
    name: str
    role: str  # obs-assign | sensor-switch | strategy | value
    base: str  # boolean | real
    group: tuple | None = None  # (group id, target constant)


@dataclass(frozen=True)
class Branch:
    guard: tuple[tuple[str, bool], ...]
    row: str


_SAFE = re.compile(r"^[A-Za-z0-9_]+$")


def action_tags(m: Mdp) -> tuple[str, ...]:
    if all(_SAFE.match(a) for a in m.actions) and len(set(m.actions)) == len(m.actions):
        return m.actions
    return tuple(f"a{i}" for i in range(len(m.actions)))


def row_tag(label: str) -> str:
    """Symbol-safe strategy-row tag for an observation label."""
    if label == BLIND_OBS:
        return "bot"
    if label.startswith("@"):
        return label[1:]
    if _SAFE.match(label):
        return label
    raise ValueError(f"observation label {label!r} cannot be used as a row tag")


def x_name(row: str, tag: str) -> str:
    return f"x_{row}_{tag}"


def v_name(s: int) -> str:
    return f"v_s{s}"


@dataclass(frozen=True)
class TpMc:
    """Typed parametric Markov chain over the skeleton of ``mdp``.

    ``kind`` is ``observation`` (variables ``y_s<i>_o<j>``) or ``location``
    (variables ``y_s<i>``). After substitution ``substituted`` is set, the y
    variables are gone and ``labels`` maps every strategy row tag back to its
    observation label.
    """

    mdp: Mdp
    kind: str
    budget: int
    branches: tuple[tuple[Branch, ...], ...]
    rows: tuple[str, ...]
    y_vars: tuple[TypedVar, ...]
    substituted: bool = False
    labels: Mapping[str, str] = field(default_factory=dict)

    @cached_property
    def tags(self) -> tuple[str, ...]:
        return action_tags(self.mdp)

    @cached_property
    def x_vars(self) -> tuple[TypedVar, ...]:
        return tuple(
            TypedVar(x_name(r, t), "strategy", "real", (f"x_{r}", ONE)) for r in self.rows for t in self.tags
        )

    @cached_property
    def v_vars(self) -> tuple[TypedVar, ...]:
        return tuple(TypedVar(v_name(s), "value", "real") for s in range(self.mdp.n_states))

    @property
    def parameters(self) -> tuple[TypedVar, ...]:
        return self.y_vars + self.x_vars

    @property
    def variables(self) -> tuple[TypedVar, ...]:
        return self.y_vars + self.x_vars + self.v_vars

    def guard_poly(self, guard) -> Polynomial:
        out = Polynomial.const(1)
        for name, positive in guard:
            y = Polynomial.var(name)
            out = out * (y if positive else 1 - y)
        return out

    @cached_property
    def polynomials(self) -> dict[tuple[int, int], Polynomial]:
        """``(s, t) -> P(s, t)`` for every pair with a nonzero polynomial."""
        m = self.mdp
        out: dict[tuple[int, int], Polynomial] = {}
        for s in range(m.n_states):
            if m.goal_mask[s]:
                out[(s, s)] = Polynomial.const(1)
                continue
            for br in self.branches[s]:
                g = self.guard_poly(br.guard)
                for a, tag in enumerate(self.tags):
                    gx = g * Polynomial.var(x_name(br.row, tag))
                    for t, p in m.transitions[s][a]:
                        out[(s, t)] = out.get((s, t), Polynomial()) + gx * p
        return {k: v for k, v in out.items() if v}

    def instantiate(self, assignment: Mapping[str, object]) -> dict[tuple[int, int], object]:
        return {k: p.evaluate(assignment) for k, p in self.polynomials.items()}


def build_observation_tpmc(m: Mdp, B: int) -> TpMc:
    """Observation tpMC: each non-goal state picks one of ``B`` observations."""
    if B < 1:
        raise ValueError("budget must be >= 1")
    obs = [f"o{j + 1}" for j in range(B)]
    ys, branches = [], []
    for s in range(m.n_states):
        if m.goal_mask[s]:
            branches.append(())
            continue
        row = []
        for o in obs:
            name = f"y_s{s}_{o}"
            ys.append(TypedVar(name, "obs-assign", "boolean", (f"y_s{s}", ONE)))
            row.append(Branch(((name, True),), o))
        branches.append(tuple(row))
    return TpMc(m, "observation", B, tuple(branches), tuple(obs), tuple(ys))


def build_location_tpmc(m: Mdp, B: int) -> TpMc:
    """Location tpMC: sensor switch ``y_s`` selects between row ``s`` and the blind row."""
    if B < 1:
        raise ValueError("budget must be >= 1")
    ys, branches, rows = [], [], []
    for s in range(m.n_states):
        if m.goal_mask[s]:
            branches.append(())
            continue
        name = f"y_s{s}"
        ys.append(TypedVar(name, "sensor-switch", "boolean", ("budget", Fraction(B))))
        rows.append(f"s{s}")
        branches.append((Branch(((name, True),), f"s{s}"), Branch(((name, False),), "bot")))
    return TpMc(m, "location", B, tuple(branches), tuple(rows) + ("bot",), tuple(ys))


def substitute_observation(t: TpMc, obs: ObservationFunction) -> TpMc:
    """Eliminate all y variables by fixing them to the choice made by ``obs``.

    Only strategy rows referenced by some state survive; the row tags are the
    observation labels (``o1``…, ``s<i>`` for sensors, ``bot`` for blind).
    """
    m = t.mdp
    if t.substituted:
        raise ValueError("tpMC already substituted")
    problems = obs.check(m)
    if problems:
        raise ValueError("; ".join(problems))
    if t.kind == "observation":
        if obs.n_classes > t.budget:
            raise ValueError(f"observation function has {obs.n_classes} classes, tpMC budget is {t.budget}")
    elif obs.kind != "location":
        raise ValueError("location tpMC needs a location observation function")
    elif len(obs.sensors) > t.budget:
        raise ValueError(f"{len(obs.sensors)} sensors exceed the budget {t.budget}")
    labels = {}
    branches = []
    for s in range(m.n_states):
        if m.goal_mask[s]:
            branches.append(())
            continue
        label = obs.assignment[s]
        tag = row_tag(label)
        labels[tag] = label
        branches.append((Branch((), tag),))
    rows = tuple(sorted(labels, key=lambda r: min(s for s in range(m.n_states) if branches[s] and branches[s][0].row == r)))
    return TpMc(m, t.kind, t.budget, tuple(branches), rows, (), True, labels)


# ------------------------------------------------------------------ encoding


@dataclass(frozen=True)
class EncodeOptions:
    mode: str = "randomized"  # deterministic | randomized
    encoding: str = "real"  # real | boolean
    pb: bool = False
    bellman: str = "equality"  # equality | inequality
    budget: str = "exact"  # exact | at-most
    strict: bool = False
    threshold: Fraction = Fraction(0)

    def check(self):
        if self.mode not in ("deterministic", "randomized"):
            raise ValueError(f"unknown strategy mode {self.mode!r}")
        if self.encoding not in ("real", "boolean"):
            raise ValueError(f"unknown variable encoding {self.encoding!r}")
        if self.bellman not in ("equality", "inequality"):
            raise ValueError(f"unknown Bellman form {self.bellman!r}")
        if self.budget not in ("exact", "at-most"):
            raise ValueError(f"unknown budget form {self.budget!r}")


CATEGORIES = ("typing", "inferred", "bellman", "budget", "threshold")


def render_term(term) -> str:
    if isinstance(term, str):
        return term
    if isinstance(term, bool):
        return "true" if term else "false"
    if isinstance(term, int):
        return str(term) if term >= 0 else f"(- {-term})"
    if isinstance(term, Fraction):
        return smt_real(term)
    head, *args = term
    if isinstance(head, tuple):
        head = "(_ " + " ".join(str(h) for h in head) + ")"
    return "(" + head + " " + " ".join(render_term(a) for a in args) + ")"


def _sum(terms: list, zero=Fraction(0)):
    if not terms:
        return zero
    if len(terms) == 1:
        return terms[0]
    return ("+",) + tuple(terms)


def _and(terms):
    terms = list(terms)
    if not terms:
        return True
    return terms[0] if len(terms) == 1 else ("and",) + tuple(terms)


def _or(terms):
    terms = list(terms)
    if not terms:
        return False
    return terms[0] if len(terms) == 1 else ("or",) + tuple(terms)


def _mul(factors):
    factors = [f for f in factors if not (isinstance(f, Fraction) and f == 1)]
    if not factors:
        return ONE
    return factors[0] if len(factors) == 1 else ("*",) + tuple(factors)


@dataclass(frozen=True)
class ConstraintScript:
    """Declarations plus category-tagged assertions in canonical order."""

    declarations: tuple[tuple[str, str], ...]
    assertions: tuple[tuple[str, object], ...]

    def terms(self, category: str | None = None) -> list:
        return [t for c, t in self.assertions if category is None or c == category]

    def count(self, category: str) -> int:
        return sum(1 for c, _ in self.assertions if c == category)

    def without(self, *categories) -> "ConstraintScript":
        return ConstraintScript(self.declarations, tuple((c, t) for c, t in self.assertions if c not in categories))

    def only(self, *categories) -> "ConstraintScript":
        return ConstraintScript((), tuple((c, t) for c, t in self.assertions if c in categories))

    def extend(self, category: str, terms: Iterable) -> "ConstraintScript":
        """Insert extra assertions keeping the canonical category order."""
        new = list(self.assertions) + [(category, t) for t in terms]
        order = {c: i for i, c in enumerate(CATEGORIES)}
        new.sort(key=lambda ct: order[ct[0]])  # stable
        return ConstraintScript(self.declarations, tuple(new))

    def body_lines(self) -> list[str]:
        lines = [f"(declare-fun {n} () {sort})" for n, sort in self.declarations]
        lines += [f"(assert {render_term(t)})" for _, t in self.assertions]
        return lines

    def render(self) -> str:
        head = ["(set-logic ALL)", "(set-option :produce-models true)"]
        return "\n".join(head + self.body_lines()) + "\n"

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.declarations)


def _one_hot(names: Sequence[str], pb: bool) -> list:
    if pb:
        return [(("pbeq", 1) + (1,) * len(names),) + tuple(names)]
    out = [_or(names)]
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            out.append(("=>", names[i], ("not", names[j])))
    return out


def _literal(name: str, positive: bool, boolean: bool):
    if boolean:
        return name if positive else ("not", name)
    return ("=", name, ONE if positive else Fraction(0))


def _guard_factor(name: str, positive: bool):
    return name if positive else ("-", ONE, name)


def encode(t: TpMc, opts: EncodeOptions) -> ConstraintScript:
    """Render the feasibility query for ``t`` under ``opts``."""
    opts.check()
    m = t.mdp
    boolean = opts.encoding == "boolean"
    x_bool = boolean and opts.mode == "deterministic"
    y_sort = "Bool" if boolean else "Real"
    tags = t.tags
    decls = [(y.name, y_sort) for y in t.y_vars]
    decls += [(x.name, "Bool" if x_bool else "Real") for x in t.x_vars]
    decls += [(v.name, "Real") for v in t.v_vars]
    out: list[tuple[str, object]] = []

    def add(cat, term):
        out.append((cat, term))

    # typing
    groups: dict[str, list[str]] = {}
    for y in t.y_vars:
        if not boolean:
            add("typing", ("or", ("=", y.name, Fraction(0)), ("=", y.name, ONE)))
        if y.role == "obs-assign":
            groups.setdefault(y.group[0], []).append(y.name)
    for names in groups.values():
        if boolean:
            for term in _one_hot(names, opts.pb):
                add("typing", term)
        else:
            add("typing", ("=", _sum(names), ONE))
    for r in t.rows:
        names = [x_name(r, tag) for tag in tags]
        if x_bool:
            for term in _one_hot(names, opts.pb):
                add("typing", term)
            continue
        for n in names:
            if opts.mode == "deterministic":
                add("typing", ("or", ("=", n, Fraction(0)), ("=", n, ONE)))
            else:
                add("typing", ("and", ("<=", Fraction(0), n), ("<=", n, ONE)))
        add("typing", ("=", _sum(names), ONE))
    for s in range(m.n_states):
        add("typing", ("<=", Fraction(0), v_name(s)))

    # Bellman. States that reach the goal almost surely under no strategy get
    # no equation (unless initial); live states may not risk entering them.
    rel = "=" if opts.bellman == "equality" else ">="
    live, _ = almost_sure_states(m)
    initial = set(m.initial)
    for s in range(m.n_states):
        v = v_name(s)
        if m.goal_mask[s]:
            add("bellman", ("=", v, Fraction(0)))
            continue
        if not live[s] and s not in initial:
            continue
        rew = m.rewards[s]
        for a, tag in enumerate(tags):
            if not all(live[u] for u, _ in m.transitions[s][a]):
                for br in t.branches[s]:
                    x = x_name(br.row, tag)
                    off = ("not", x) if x_bool else ("=", x, Fraction(0))
                    guard = _and([_literal(n, pos, boolean) for n, pos in br.guard])
                    add("bellman", off if guard is True else ("=>", guard, off))
        succ = []
        for a in range(len(tags)):
            succ.append(_sum([_mul([p, v_name(u)]) for u, p in m.transitions[s][a]]))
        brs = t.branches[s]
        if not boolean:
            parts = []
            for br in brs:
                g = [_guard_factor(n, pos) for n, pos in br.guard]
                for a, tag in enumerate(tags):
                    parts.append(_mul(g + [x_name(br.row, tag), succ[a]]))
            add("bellman", (rel, v, _sum([rew] + parts)))
        elif opts.mode == "deterministic":
            per_action = t.kind == "location" and not t.substituted
            for a, tag in enumerate(tags):
                cases = [_and([_literal(n, pos, True) for n, pos in br.guard] + [x_name(br.row, tag)]) for br in brs]
                rhs = (rel, v, _sum([rew, succ[a]]))
                if per_action:
                    add("bellman", ("=>", _or(cases), rhs))
                else:
                    for case in cases:
                        add("bellman", ("=>", case, rhs))
        else:
            for br in brs:
                rhs = (rel, v, _sum([rew] + [_mul([x_name(br.row, tag), succ[a]]) for a, tag in enumerate(tags)]))
                guard = _and([_literal(n, pos, True) for n, pos in br.guard])
                add("bellman", rhs if guard is True else ("=>", guard, rhs))

    # budget
    if t.kind == "location" and t.y_vars:
        names = [y.name for y in t.y_vars]
        B = t.budget
        if boolean and opts.pb:
            op = "pbeq" if opts.budget == "exact" else "pble"
            add("budget", ((op, B) + (1,) * len(names),) + tuple(names))
        else:
            cmp = "=" if opts.budget == "exact" else "<="
            if boolean:
                # real-valued indicator sum: an Int sum here pulls z3 into mixed nonlinear arithmetic
                add("budget", (cmp, _sum([("ite", n, ONE, ZERO) for n in names], ZERO), Fraction(B)))
            else:
                add("budget", (cmp, _sum(names), Fraction(B)))

    # threshold: mean over initial states, scaled to avoid a division
    tau = Fraction(opts.threshold)
    init = [v_name(s) for s in m.initial]
    add("threshold", ("<" if opts.strict else "<=", _sum(init), tau * len(init)))

    # stable sort into canonical order (typing, inferred, bellman, budget, threshold)
    order = {c: i for i, c in enumerate(CATEGORIES)}
    out.sort(key=lambda ct: order[ct[0]])
    return ConstraintScript(tuple(decls), tuple(out))


def inferred_terms(t: TpMc, constraints, opts: EncodeOptions) -> list:
    """Assertions fixing strategy variables from inferred constraints.

    ``constraints.rows`` maps observation labels to ``(zeros, support)``.
    """
    x_bool = opts.encoding == "boolean" and opts.mode == "deterministic"
    tags = t.tags
    out = []
    for label, (zeros, support) in constraints.rows.items():
        r = row_tag(label)
        if r not in t.rows:
            continue
        for a in sorted(zeros):
            n = x_name(r, tags[a])
            out.append(("not", n) if x_bool else ("=", n, Fraction(0)))
        if support:
            names = [x_name(r, tags[a]) for a in sorted(support)]
            out.append(_or(names) if x_bool else ("=", _sum(names), ONE))
    return out


def with_threshold(script: ConstraintScript, t: TpMc, tau, strict: bool) -> ConstraintScript:
    base = script.without("threshold")
    init = [v_name(s) for s in t.mdp.initial]
    term = ("<" if strict else "<=", _sum(init), Fraction(tau) * len(init))
    return base.extend("threshold", [term])
