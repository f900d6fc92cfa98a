import sys
import time
from fractions import Fraction

import pytest

from oopsynth.smt import (
    Session,
    SolverConfig,
    SolverError,
    parse_sexpr,
    parse_value,
    relax_repair_solve,
    solve_script,
    tokenize,
)
from oopsynth.tpmc import ConstraintScript

from conftest import requires_solver

ONE = Fraction(1)


def test_tokenize_quoted_symbols_and_strings():
    assert tokenize('(a |x y| "q ""r""")') == ["(", "a", "x y", '"q ""r"""', ")"]


def test_parse_sexpr_nested():
    assert parse_sexpr("((x 1) (y (- 2)))") == [["x", "1"], ["y", ["-", "2"]]]


@pytest.mark.parametrize("text", ["((x 1)", ")", ""])
def test_parse_sexpr_errors(text):
    with pytest.raises(SolverError):
        parse_sexpr(text)


@pytest.mark.parametrize(
    "text,value",
    [
        ("true", True),
        ("false", False),
        ("3.0", Fraction(3)),
        ("(- 2.5)", Fraction(-5, 2)),
        ("(/ 1.0 3.0)", Fraction(1, 3)),
        ("(- (/ 7.0 2.0))", Fraction(-7, 2)),
    ],
)
def test_parse_value_exact(text, value):
    assert parse_value(parse_sexpr(text)) == value


def test_parse_root_obj():
    # x^2 - 2 has roots -sqrt2, +sqrt2
    v = parse_value(parse_sexpr("(root-obj (+ (^ x 2) (- 2)) 2)"))
    assert v == pytest.approx(2**0.5, rel=1e-12)
    v = parse_value(parse_sexpr("(root-obj (+ (* 2 (^ x 2)) (- 1)) 1)"))
    assert v == pytest.approx(-(0.5**0.5), rel=1e-12)


def test_parse_value_rejects_junk():
    with pytest.raises(SolverError):
        parse_value(parse_sexpr("(foo 1)"))
    with pytest.raises(SolverError):
        parse_value(parse_sexpr("(/ 1.0 0.0)"))


def test_config_validation_and_env(monkeypatch):
    with pytest.raises(ValueError):
        SolverConfig(timeout=0)
    monkeypatch.setenv("OOP_SOLVER_CMD", "my-solver --smt2 -in")
    assert SolverConfig().resolved_command() == ["my-solver", "--smt2", "-in"]


def test_missing_solver_is_reported():
    with pytest.raises(SolverError, match="cannot start solver"):
        Session(SolverConfig(("/nonexistent/solver",), 5))


def _script(decls, terms):
    return ConstraintScript(tuple(decls), tuple(("typing", t) for t in terms))


@requires_solver
def test_sat_model_values():
    s = _script([("x", "Real"), ("b", "Bool")], [("=", ("*", "x", Fraction(3)), ONE), "b"])
    v = solve_script(s, SolverConfig(timeout=10))
    assert v.status == "sat"
    assert v.model == {"x": Fraction(1, 3), "b": True}


@requires_solver
def test_irrational_model_value():
    s = _script([("x", "Real")], [("=", ("*", "x", "x"), Fraction(2)), (">", "x", Fraction(0))])
    v = solve_script(s, SolverConfig(timeout=10))
    assert v.status == "sat"
    assert v.model["x"] == pytest.approx(2**0.5)


@requires_solver
def test_unsat():
    s = _script([("x", "Real")], [(">", "x", ONE), ("<", "x", Fraction(0))])
    assert solve_script(s, SolverConfig(timeout=10)).status == "unsat"


@requires_solver
def test_push_pop_scopes():
    with Session(SolverConfig(timeout=10)) as sess:
        sess.declare("x", "Real")
        sess.assert_terms([(">", "x", ONE)])
        sess.push()
        sess.declare("y", "Real")
        sess.assert_terms([("<", "x", Fraction(0))])
        assert sess.check().status == "unsat"
        assert sess.declared == ["x", "y"]
        sess.pop()
        assert sess.declared == ["x"]
        v = sess.check()
        assert v.status == "sat" and v.model["x"] > 1
        with pytest.raises(SolverError):
            sess.pop()


@requires_solver
def test_rejected_command_raises():
    with Session(SolverConfig(timeout=10)) as sess:
        with pytest.raises(SolverError, match="rejected"):
            sess.assert_terms([("+", "undeclared", ONE)])


def test_driver_kills_unresponsive_solver(tmp_path):
    # a fake solver that acknowledges everything and then never answers check-sat
    fake = tmp_path / "fake_solver.py"
    fake.write_text(
        "import sys, time\n"
        "for line in sys.stdin:\n"
        "    if 'check-sat' in line:\n"
        "        time.sleep(60)\n"
        "    print('success', flush=True)\n"
    )
    cfg = SolverConfig((sys.executable, str(fake)), timeout=0.5)
    sess = Session(cfg)
    start = time.monotonic()
    v = sess.check()
    assert v.status == "timeout"
    assert time.monotonic() - start < 5
    assert sess.dead
    sess.kill()


@requires_solver
def test_relax_repair_two_phases():
    base = _script([("x", "Real"), ("y", "Real")], [(">=", "x", Fraction(0)), (">=", "y", Fraction(0))])
    with Session(SolverConfig(timeout=10)) as sess:
        v = relax_repair_solve(sess, base, [("=", ("+", "x", "y"), Fraction(2)), ("=", "x", "y")])
        assert v.status == "sat" and v.checks == 2
        assert v.model["x"] == 1
    bad = _script([("x", "Real")], [(">", "x", ONE), ("<", "x", Fraction(0))])
    with Session(SolverConfig(timeout=10)) as sess:
        v = relax_repair_solve(sess, bad, [("=", "x", ONE)])
        assert v.status == "unsat" and v.checks == 1
