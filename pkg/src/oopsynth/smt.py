"""Incremental SMT-LIB sessions over a solver child process.

One process per session. Commands go to the solver's stdin with
``:print-success`` on, so every command produces exactly one response; a
reader thread splits stdout into complete s-expressions. Deadlines are
enforced here by killing the process, on top of the solver's soft timeout.
"""
from __future__ import annotations

import logging
import os
import queue
import shlex
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .tpmc import ConstraintScript, render_term

log = logging.getLogger(__name__)

DEFAULT_COMMAND = ("z3", "-in")
SOLVER_ENV = "OOP_SOLVER_CMD"

# After a push z3 switches to its incremental core, which lacks the nonlinear
# real procedure; these let a stalled incremental check fall back to the
# one-shot solver over the current assertion stack.
Z3_SESSION_OPTIONS = (
    ("combined_solver.solver2_timeout", "500"),
    ("combined_solver.solver2_unknown", "1"),
)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    command: tuple[str, ...] = DEFAULT_COMMAND
    timeout: float = 180.0
    options: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("solver timeout must be positive")

    def resolved_command(self) -> list[str]:
        env = os.environ.get(SOLVER_ENV)
        return shlex.split(env) if env else list(self.command)

    def with_timeout(self, timeout: float) -> "SolverConfig":
        return SolverConfig(self.command, timeout, self.options)


@dataclass(frozen=True)
class SolverVerdict:
    status: str  # sat | unsat | unknown | timeout
    model: Mapping[str, object] | None = None
    wall_time: float = 0.0
    checks: int = 1
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status == "sat"


# ------------------------------------------------------------------ s-expressions


def _balance(text: str) -> int:
    depth, in_str, in_sym = 0, False, False
    for ch in text:
        if in_str:
            in_str = ch != '"'
        elif in_sym:
            in_sym = ch != "|"
        elif ch == '"':
            in_str = True
        elif ch == "|":
            in_sym = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
    return depth


def tokenize(text: str) -> list[str]:
    out, i, n = [], 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        elif ch == '"':
            j = i + 1
            while j < n:
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        j += 2
                        continue
                    break
                j += 1
            out.append(text[i : j + 1])
            i = j + 1
        elif ch == "|":
            j = text.index("|", i + 1)
            out.append(text[i + 1 : j])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def parse_sexpr(text: str):
    tokens = tokenize(text)
    pos = 0

    def walk():
        nonlocal pos
        if pos >= len(tokens):
            raise SolverError(f"unexpected end of solver output: {text[:200]!r}")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while pos < len(tokens) and tokens[pos] != ")":
                items.append(walk())
            if pos >= len(tokens):
                raise SolverError(f"unbalanced solver output: {text[:200]!r}")
            pos += 1
            return items
        if tok == ")":
            raise SolverError(f"unexpected ')' in solver output: {text[:200]!r}")
        return tok

    expr = walk()
    return expr


def _numeral(tok: str) -> Fraction:
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        raise SolverError(f"unparsable model value token {tok!r}") from None


def parse_value(expr):
    """Exact value of a model term: Bool, Fraction, or float for algebraic numbers."""
    if isinstance(expr, str):
        if expr == "true":
            return True
        if expr == "false":
            return False
        return _numeral(expr)
    if not expr:
        raise SolverError("empty model value")
    head = expr[0]
    if head == "-" and len(expr) == 2:
        return -parse_value(expr[1])
    if head == "/" and len(expr) == 3:
        num, den = parse_value(expr[1]), parse_value(expr[2])
        if den == 0:
            raise SolverError(f"zero denominator in model value {expr!r}")
        return num / den
    if head == "root-obj" and len(expr) == 3:
        return _root_obj(expr[1], int(expr[2]))
    raise SolverError(f"unparsable model value {expr!r}")


def _poly_coeffs(expr) -> dict[int, Fraction]:
    """Coefficients of a univariate polynomial in ``x`` as written by root-obj."""
    if isinstance(expr, str):
        if expr == "x":
            return {1: Fraction(1)}
        return {0: _numeral(expr)}
    head, *args = expr
    if head == "+":
        out: dict[int, Fraction] = {}
        for a in args:
            for d, c in _poly_coeffs(a).items():
                out[d] = out.get(d, Fraction(0)) + c
        return out
    if head == "-":
        parts = [_poly_coeffs(a) for a in args]
        if len(parts) == 1:
            return {d: -c for d, c in parts[0].items()}
        out = dict(parts[0])
        for p in parts[1:]:
            for d, c in p.items():
                out[d] = out.get(d, Fraction(0)) - c
        return out
    if head == "*":
        out = {0: Fraction(1)}
        for a in args:
            out = _mul_coeffs(out, _poly_coeffs(a))
        return out
    if head == "^" and len(args) == 2:
        base = _poly_coeffs(args[0])
        out = {0: Fraction(1)}
        for _ in range(int(args[1])):
            out = _mul_coeffs(out, base)
        return out
    if head == "/" and len(args) == 2:
        den = parse_value(args[1])
        return {d: c / den for d, c in _poly_coeffs(args[0]).items()}
    raise SolverError(f"unparsable root-obj polynomial {expr!r}")


def _mul_coeffs(a: dict, b: dict) -> dict:
    out: dict[int, Fraction] = {}
    for d1, c1 in a.items():
        for d2, c2 in b.items():
            out[d1 + d2] = out.get(d1 + d2, Fraction(0)) + c1 * c2
    return out


def _root_obj(poly_expr, index: int) -> float:
    coeffs = _poly_coeffs(poly_expr)
    degree = max(d for d, c in coeffs.items() if c)
    vec = [float(coeffs.get(d, 0)) for d in range(degree, -1, -1)]
    roots = np.roots(vec)
    real = sorted(r.real for r in roots if abs(r.imag) <= 1e-9 * max(1.0, abs(r)))
    if not 1 <= index <= len(real):
        raise SolverError(f"root-obj index {index} out of range for {poly_expr!r}")
    return float(real[index - 1])


# ------------------------------------------------------------------ session


class Session:
    """A live solver process. Single owner; not thread-safe."""

    def __init__(self, cfg: SolverConfig | None = None):
        self.cfg = cfg or SolverConfig()
        cmd = self.cfg.resolved_command()
        try:
            self.proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SolverError(f"cannot start solver {cmd!r}: {exc}") from None
        self._responses: queue.Queue = queue.Queue()
        self._stderr: deque = deque(maxlen=200)
        self._scopes: list[list[str]] = [[]]
        self.dead = False
        threading.Thread(target=self._read_stdout, daemon=True).start()
        threading.Thread(target=self._read_stderr, daemon=True).start()
        self.command("(set-option :print-success true)")
        self.command(f"(set-option :timeout {int(self.cfg.timeout * 1000)})")
        extra = Z3_SESSION_OPTIONS if os.path.basename(cmd[0]).startswith("z3") else ()
        for key, value in extra + tuple(self.cfg.options):
            self.command(f"(set-option :{key.lstrip(':')} {value})")

    def _read_stdout(self):
        buf = []
        depth = 0
        for line in self.proc.stdout:
            if not line.strip() and not buf:
                continue
            buf.append(line)
            depth += _balance(line)
            if depth <= 0:
                self._responses.put("".join(buf).strip())
                buf, depth = [], 0
        self._responses.put(None)

    def _read_stderr(self):
        for line in self.proc.stderr:
            self._stderr.append(line.rstrip())

    def diagnostics(self) -> str:
        return "\n".join(self._stderr)

    def _write(self, text: str):
        if self.dead:
            raise SolverError("solver session is closed")
        try:
            self.proc.stdin.write(text)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.dead = True
            raise SolverError(f"solver process died; stderr:\n{self.diagnostics()}") from None

    def _read(self, deadline: float | None):
        wait = None if deadline is None else max(0.0, deadline - time.monotonic())
        try:
            resp = self._responses.get(timeout=wait)
        except queue.Empty:
            return None
        if resp is None:
            self.dead = True
            raise SolverError(f"solver process died; stderr:\n{self.diagnostics()}")
        return resp

    def _expect_success(self, resp: str, cmd: str):
        if resp != "success":
            raise SolverError(f"solver rejected {cmd[:200]!r}: {resp}")

    def command(self, cmd: str, deadline: float | None = None) -> str:
        self._write(cmd + "\n")
        resp = self._read(deadline if deadline is not None else time.monotonic() + 60)
        if resp is None:
            self.kill()
            raise SolverError(f"no response to {cmd[:200]!r}")
        return resp

    def send_all(self, lines: list[str]):
        """Send commands in one batch and check that each one succeeded."""
        if not lines:
            return
        self._write("\n".join(lines) + "\n")
        deadline = time.monotonic() + 60 + 1e-3 * len(lines)
        for cmd in lines:
            resp = self._read(deadline)
            if resp is None:
                self.kill()
                raise SolverError("solver stopped responding while loading assertions")
            self._expect_success(resp, cmd)

    def declare(self, name: str, sort: str):
        self.send_all([f"(declare-fun {name} () {sort})"])
        self._scopes[-1].append(name)

    def assert_script(self, script: ConstraintScript):
        lines = [f"(declare-fun {n} () {s})" for n, s in script.declarations]
        lines += [f"(assert {render_term(t)})" for _, t in script.assertions]
        self.send_all(lines)
        self._scopes[-1].extend(n for n, _ in script.declarations)

    def assert_terms(self, terms: Iterable):
        self.send_all([f"(assert {render_term(t)})" for t in terms])

    def push(self):
        self._expect_success(self.command("(push 1)"), "(push 1)")
        self._scopes.append([])

    def pop(self):
        if len(self._scopes) == 1:
            raise SolverError("pop without matching push")
        self._expect_success(self.command("(pop 1)"), "(pop 1)")
        self._scopes.pop()

    @property
    def declared(self) -> list[str]:
        return [n for scope in self._scopes for n in scope]

    def check(self, timeout: float | None = None) -> SolverVerdict:
        timeout = self.cfg.timeout if timeout is None else timeout
        start = time.monotonic()
        deadline = start + timeout
        self._write("(check-sat)\n")
        resp = self._read(deadline + 0.5)
        elapsed = time.monotonic() - start
        if resp is None:
            self.kill()
            return SolverVerdict("timeout", None, elapsed, reason="driver deadline")
        if resp == "unknown":
            reason = self._reason_unknown()
            status = "timeout" if ("timeout" in reason or "canceled" in reason or elapsed >= timeout * 0.98) else "unknown"
            return SolverVerdict(status, None, elapsed, reason=reason)
        if resp == "unsat":
            return SolverVerdict("unsat", None, elapsed)
        if resp != "sat":
            raise SolverError(f"unexpected check-sat response: {resp}")
        return SolverVerdict("sat", self.get_model(), time.monotonic() - start)

    def _reason_unknown(self) -> str:
        try:
            resp = self.command("(get-info :reason-unknown)")
        except SolverError:
            return ""
        return resp

    def get_model(self, names: list[str] | None = None) -> dict[str, object]:
        names = self.declared if names is None else names
        model: dict[str, object] = {}
        for i in range(0, len(names), 500):
            chunk = names[i : i + 500]
            resp = self.command("(get-value (" + " ".join(chunk) + "))", time.monotonic() + 120)
            expr = parse_sexpr(resp)
            if not isinstance(expr, list) or (expr and expr[0] == "error"):
                raise SolverError(f"get-value failed: {resp[:300]}")
            for pair in expr:
                if not (isinstance(pair, list) and len(pair) == 2 and isinstance(pair[0], str)):
                    raise SolverError(f"unparsable get-value entry {pair!r}")
                model[pair[0]] = parse_value(pair[1])
        return model

    def kill(self):
        if not self.dead:
            self.dead = True
            try:
                self.proc.kill()
            except OSError:
                pass
        self.proc.wait()

    def close(self):
        if self.dead:
            return
        try:
            self.proc.stdin.write("(exit)\n")
            self.proc.stdin.flush()
            self.proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            pass
        self.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_session(cfg: SolverConfig | None = None) -> Session:
    return Session(cfg)


def solve_script(script: ConstraintScript, cfg: SolverConfig | None = None, extra: Iterable = ()) -> SolverVerdict:
    """One-shot: fresh session, assert everything, check."""
    with Session(cfg) as s:
        s.assert_script(script)
        extra = list(extra)
        if extra:
            s.assert_terms(extra)
        return s.check()


def relax_repair_solve(session: Session, base: ConstraintScript, budget_terms: list) -> SolverVerdict:
    """Check without the budget first; only if that is sat, push the budget and re-check.

    The relaxed problem over-approximates the real one, so an unsat first phase
    is final.
    """
    session.assert_script(base)
    first = session.check()
    if first.status != "sat":
        return first
    remaining = max(1e-3, session.cfg.timeout - first.wall_time)
    session.push()
    session.assert_terms(budget_terms)
    second = session.check(remaining)
    return SolverVerdict(second.status, second.model, first.wall_time + second.wall_time, 2, second.reason)
