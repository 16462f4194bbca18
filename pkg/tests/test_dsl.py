import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn import dsl
from pinn.autodiff import Graph
from pinn.dsl import (BinOp, Deriv, DSLError, ParamSet, compile_expr, free_parameters, parse,
                      pretty)

from cases import BURGERS, CLOSED_FORMS, CORPUS, DIMS, ERRORS, FUZZ_ALPHABET, PARAMS


def test_burgers_is_sum_of_three_terms():
    ast = parse(BURGERS, DIMS).ast
    assert isinstance(ast, BinOp) and ast.op == "-"
    assert isinstance(ast.left, BinOp) and ast.left.op == "+"
    assert ast.left.left == Deriv(("t",))
    assert ast.right.op == "*" and ast.right.right == Deriv(("x", "x"))


def test_precedence():
    assert pretty(parse("-u^2", DIMS)) == "-u^2"
    neg = parse("-u^2", DIMS).ast
    assert isinstance(neg, dsl.Neg) and neg.operand.op == "^"
    right_assoc = parse("2^3^2", DIMS).ast
    assert right_assoc.right.op == "^"
    assert dsl.eval_numpy(right_assoc, {}) == 512.0
    assert dsl.eval_numpy(parse("x / t / nu", DIMS, ["nu"]).ast, {"x": 8.0, "t": 2.0, "nu": 2.0}) == 2.0


def test_learnable_param_reference():
    e = parse("u_t + nu*u_xx", DIMS, ["nu"])
    assert free_parameters(e) == ["nu"]


@pytest.mark.parametrize("text,expected", [
    (BURGERS, []), ("u_t + nu*u_xx", ["nu"]), ("a*u_xx + b*u + a*u_x", ["a", "b"])])
def test_free_parameters(text, expected):
    assert free_parameters(parse(text, DIMS, PARAMS)) == expected


@pytest.mark.parametrize("text", CORPUS)
def test_pretty_fixed_point(text):
    first = parse(text, DIMS, PARAMS)
    printed = pretty(first)
    again = parse(printed, DIMS, PARAMS)
    assert again.ast == first.ast
    assert pretty(again) == printed


@pytest.mark.parametrize("text,kind,pos", ERRORS)
def test_positioned_errors(text, kind, pos):
    with pytest.raises(DSLError) as info:
        parse(text, DIMS, PARAMS)
    assert type(info.value).__name__ == kind
    assert info.value.pos == pos
    assert f"column {pos + 1}" in str(info.value)


def _at(expr_text, u, x, t, params=None):
    g = Graph()
    xv, tv = g.var("x", x), g.var("t", t)
    node = compile_expr(parse(expr_text, DIMS, list(params.names) if params else ()), params,
                        lambda p: u(*p), g, [xv, tv])
    return g, node


def test_compile_power_rule():
    g, node = _at("u_x", lambda x, t: x * x, 3.0, 0.0)
    assert g.eval(node) == 6.0


@pytest.mark.parametrize("c", [-2.0, 0.0, 3.5])
def test_burgers_constant_solution(c):
    g, node = _at(BURGERS, lambda x, t: x.graph.const(c), 0.2, 0.4)
    assert g.eval(node) == 0.0


def test_burgers_linear_solution():
    g, node = _at(BURGERS, lambda x, t: x, 0.7, 0.1)
    assert g.eval(node) == 0.7


def test_trainable_vs_fixed_params():
    fixed = ParamSet(["nu"], [0.5], [False])
    g, node = _at("u_t + nu*u_xx", lambda x, t: x * x * t, 1.0, 1.0, fixed)
    assert g.eval(node) == 2.0
    assert not g.has_var(dsl.param_key("nu"))
    free = ParamSet(["nu"], [0.5], [True])
    g, node = _at("u_t + nu*u_xx", lambda x, t: x * x * t, 1.0, 1.0, free)
    assert g.has_var(dsl.param_key("nu"))
    g.bind(dsl.param_key("nu"), 2.0)
    assert g.eval(node) == 5.0


def test_non_integer_exponent_on_u_rejected():
    with pytest.raises(dsl.ExponentError):
        _at("u^0.5", lambda x, t: x, 1.0, 1.0)


def test_integer_powers():
    for k in range(-2, 7):
        g, node = _at(f"u^{k}" if k >= 0 else f"u^({k})", lambda x, t: x + t, 1.25, 0.5)
        assert abs(g.eval(node) - 1.75**k) <= 1e-14 * 1.75**abs(k)


@pytest.mark.parametrize("cf", CLOSED_FORMS, ids=repr)
def test_nested_derivatives_match_hand_derivation(cf):
    rng = np.random.default_rng(11)
    for x, t in zip(rng.uniform(-1, 1, 20), rng.uniform(0, 1, 20)):
        for text, ref in (("u_x", cf.ux), ("u_xx", cf.uxx), ("u_xt", cf.uxt)):
            g, node = _at(text, cf.build, float(x), float(t))
            expect = float(ref(x, t))
            assert abs(g.eval(node) - expect) <= 1e-10 * max(1.0, abs(expect))


@pytest.mark.parametrize("cf", CLOSED_FORMS, ids=repr)
def test_mixed_partials_commute(cf):
    for x, t in ((0.3, 0.2), (-0.8, 0.9)):
        g1, n1 = _at("u_xt", cf.build, x, t)
        g2, n2 = _at("u_tx", cf.build, x, t)
        assert abs(g1.eval(n1) - g2.eval(n2)) <= 1e-12 * max(1.0, abs(g1.eval(n1)))


def test_compiled_matches_numpy_eval():
    rng = np.random.default_rng(0)
    params = ParamSet(PARAMS, rng.uniform(0.5, 1.5, len(PARAMS)), [True] * len(PARAMS))
    for text in CORPUS:
        e = parse(text, DIMS, PARAMS)
        if any(isinstance(n, (dsl.U, dsl.Deriv)) for n in _walk(e.ast)):
            continue
        x, t = 0.37, 0.61
        g = Graph()
        node = compile_expr(e, params, None, g, [g.var("x", x), g.var("t", t)])
        env = {"x": x, "t": t, **{n: params.value(n) for n in PARAMS}}
        assert math.isclose(g.eval(node), dsl.eval_numpy(e.ast, env), rel_tol=1e-13)


def _walk(n):
    yield n
    for attr in ("operand", "left", "right", "arg"):
        child = getattr(n, attr, None)
        if child is not None:
            yield from _walk(child)


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet=FUZZ_ALPHABET, max_size=30))
def test_fuzz_never_crashes(text):
    try:
        e = parse(text, DIMS, PARAMS)
    except DSLError as exc:
        assert isinstance(exc.pos, int) and 0 <= exc.pos <= len(text)
    else:
        assert parse(pretty(e), DIMS, PARAMS).ast == e.ast


@st.composite
def asts(draw, depth=0):
    leaves = [st.just("u"), st.just("u_x"), st.just("u_xt"), st.just("x"), st.just("pi"),
              st.just("nu"), st.floats(0, 100, allow_nan=False).map(lambda v: repr(round(v, 3)))]
    if depth > 3:
        return draw(st.one_of(leaves))
    kind = draw(st.integers(0, 3))
    if kind == 0:
        return draw(st.one_of(leaves))
    if kind == 1:
        return f"-({draw(asts(depth + 1))})"
    if kind == 2:
        fn = draw(st.sampled_from(["sin", "cos", "tanh", "exp"]))
        return f"{fn}({draw(asts(depth + 1))})"
    op = draw(st.sampled_from(["+", "-", "*", "/", "^"]))
    return f"({draw(asts(depth + 1))}){op}({draw(asts(depth + 1))})"


@settings(max_examples=200, deadline=None)
@given(asts())
def test_roundtrip_generated(text):
    e = parse(text, DIMS, PARAMS)
    assert parse(pretty(e), DIMS, PARAMS).ast == e.ast
