import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn import autodiff as ad
from pinn.autodiff import Graph
from pinn.conditions import (ConditionFn, DirichletBC, InitialCondition, PeriodicBC, dirichlet_terms,
                             ic_terms, periodic_terms)
from pinn.domain import Domain
from pinn.dsl import DSLError


def burgers():
    return Domain().add("x", -1, 1).add("t", 0, 1, "temporal")


def const_u(c):
    return lambda p: p[0].graph.const(c)


def values(g, terms):
    return np.array([g.eval(t) for t in terms])


def test_burgers_ic_at_origin():
    d = burgers()
    h = ConditionFn.parse("-sin(pi*x)", d)
    assert h(np.array([[0.0, 0.0]]), d)[0] == 0.0


def test_ic_exact_solution_zero():
    d = burgers()
    ic = InitialCondition(ConditionFn.parse("-sin(pi*x)", d), n_points=40)
    g = Graph()
    terms = ic_terms(ic, d, lambda p: -ad.sin(math.pi * p[0]), g)
    assert len(terms) == 40
    assert np.all(values(g, terms) <= 1e-12)


def test_ic_term_is_squared_output():
    d = burgers()
    ic = InitialCondition(ConditionFn.parse("-sin(pi*x)", d), n_points=10, seed=4)
    g = Graph()
    terms = ic_terms(ic, d, lambda p: p[0] * p[0] + 2.0, g)
    pts = ic.sample(d).points
    np.testing.assert_allclose(values(g, terms), (pts[:, 0] ** 2 + 2 + np.sin(np.pi * pts[:, 0])) ** 2,
                               rtol=1e-14)


def test_ic_empty():
    d = burgers()
    assert ic_terms(InitialCondition(ConditionFn.parse("0", d), n_points=0), d, const_u(1.0), Graph()) == []


def test_condition_fn_unknown_dim():
    with pytest.raises(DSLError):
        ConditionFn.parse("sin(y)", burgers())


def test_condition_fn_rejects_u():
    with pytest.raises(DSLError):
        ConditionFn.parse("u + x", burgers())


@pytest.mark.parametrize("value,u,expected", [(0.0, 0.0, 0.0), (1.0, 0.0, 1.0)])
def test_dirichlet_constant(value, u, expected):
    d = burgers()
    g = Graph()
    terms = dirichlet_terms(DirichletBC("x", "upper", value, n_points=12), d, const_u(u), g)
    assert len(terms) == 12 and np.all(values(g, terms) == expected)


def test_dirichlet_function():
    d = Domain().add("x", 0, 1).add("t", 0, 1, "temporal")
    bc = DirichletBC("x", "lower", ConditionFn.parse("exp(-t)", d), n_points=15)
    g = Graph()
    terms = values(g, dirichlet_terms(bc, d, const_u(1.0), g))
    t = bc.sample(d).points[:, 1]
    np.testing.assert_allclose(terms, (1 - np.exp(-t)) ** 2, rtol=1e-14, atol=1e-300)
    # the t=0 point of the same face
    assert (1 - ConditionFn.parse("exp(-t)", d)(np.array([[0.0, 0.0]]), d)[0]) ** 2 == 0.0


def test_dirichlet_unknown_face():
    from pinn.conditions import ConditionError
    with pytest.raises(ConditionError):
        DirichletBC("y", "lower", 0.0).sample(burgers())
    with pytest.raises(ConditionError):
        DirichletBC("t", "lower", 0.0).sample(burgers())


def test_periodic_const():
    d = Domain().add("x", 0, 1).add("t", 0, 1, "temporal")
    g = Graph()
    terms = periodic_terms(PeriodicBC("x", n_points=8), d, const_u(3.0), g)
    assert len(terms) == 16 and np.all(values(g, terms) == 0.0)


def test_periodic_linear_order0():
    d = Domain().add("x", 0, 1)
    g = Graph()
    terms = periodic_terms(PeriodicBC("x", frozenset({0}), n_points=3), d, lambda p: p[0], g)
    assert values(g, terms).tolist() == [1.0, 1.0, 1.0]


def test_periodic_sine_both_orders():
    d = Domain().add("x", 0, 1).add("t", 0, 2, "temporal")
    g = Graph()
    terms = periodic_terms(PeriodicBC("x", n_points=20), d,
                           lambda p: ad.sin(2 * math.pi * p[0]) * ad.exp(-p[1]), g)
    assert len(terms) == 40
    assert np.all(values(g, terms) <= 1e-12)


def test_periodic_needs_orders():
    from pinn.conditions import ConditionError
    with pytest.raises(ConditionError):
        PeriodicBC("x", frozenset())
    with pytest.raises(ConditionError):
        PeriodicBC("x", frozenset({2}))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 40), st.integers(0, 1000))
def test_terms_nonnegative(a, b, n, seed):
    d = burgers()
    g = Graph()
    u = lambda p: a * ad.tanh(p[0] + b * p[1])  # noqa: E731
    terms = (ic_terms(InitialCondition(ConditionFn.parse("cos(pi*x)", d), n, seed), d, u, g)
             + dirichlet_terms(DirichletBC("x", "lower", ConditionFn.parse("t^2", d), n, seed), d, u, g)
             + periodic_terms(PeriodicBC("x", n_points=n, seed=seed), d, u, g))
    assert len(terms) == 4 * n
    assert np.all(values(g, terms) >= 0.0)
