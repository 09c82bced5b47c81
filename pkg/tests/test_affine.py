import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlerb.affine import (AffineDecomposition, Const, Coord, ParameterDomain, compile_thetas,
                             expr_from_json)
from saddlerb.errors import OutOfDomain

DOM = ParameterDomain((0.2, 0.2), (0.6, 0.6))
mus = st.tuples(st.floats(0.2, 0.6), st.floats(0.2, 0.6)).map(np.array)


def sample_exprs():
    x, y = Coord(0), Coord(1)
    return [Const(2.5), x, (1.1 - x) / (0.7 + y), x * y / (2.0 * x), (y + 0.0) / (1.0 - y) * 3.0]


def test_domain_rejects_bad_boxes():
    with pytest.raises(ValueError):
        ParameterDomain((0.5,), (0.1,))
    with pytest.raises(ValueError):
        ParameterDomain((), ())


def test_domain_validate():
    np.testing.assert_array_equal(DOM.validate([0.3, 0.4]), [0.3, 0.4])
    for bad in ([0.1, 0.3], [0.3, 0.7], [np.nan, 0.3], [0.3]):
        with pytest.raises(OutOfDomain):
            DOM.validate(bad)


def test_domain_sample_is_seeded_and_inside():
    a, b = DOM.sample(50, 7), DOM.sample(50, 7)
    np.testing.assert_array_equal(a, b)
    assert all(DOM.contains(m) for m in a)
    assert not np.array_equal(a, DOM.sample(50, 8))


@given(mus)
@settings(max_examples=50, deadline=None)
def test_compiled_thetas_are_bitwise_equal(mu):
    exprs = sample_exprs()
    fast = compile_thetas(exprs)(mu)
    assert fast == [e(mu) for e in exprs]


@given(mus)
@settings(max_examples=30, deadline=None)
def test_expression_json_round_trip(mu):
    for e in sample_exprs():
        back = expr_from_json(json.loads(json.dumps(e.to_json())))
        assert back(mu) == e(mu)
        assert back.key() == e.key()


def test_expression_arithmetic():
    x, y = Coord(0), Coord(1)
    mu = np.array([0.3, 0.5])
    assert (x - y)(mu) == pytest.approx(-0.2)
    assert (2.0 / x)(mu) == pytest.approx(2.0 / 0.3)
    assert (1.0 - x)(mu) == pytest.approx(0.7)
    with pytest.raises(ZeroDivisionError):
        x / 0.0


def test_decomposition_assembles_linear_combination(rng):
    terms = [sp.random(8, 8, density=0.4, random_state=i, format="csr") for i in range(3)]
    terms = [t + t.T for t in terms]
    dec = AffineDecomposition([Const(1.0), Coord(0), Coord(0) * Coord(1)], terms, DOM, symmetric=True)
    mu = np.array([0.3, 0.5])
    expected = terms[0] + 0.3 * terms[1] + 0.15 * terms[2]
    np.testing.assert_allclose(dec.assemble(mu).toarray(), expected.toarray(), atol=1e-14)
    with pytest.raises(OutOfDomain):
        dec.assemble([0.0, 0.5])


def test_decomposition_merges_identical_thetas():
    a = np.arange(4.0)
    x = Coord(0)
    dec = AffineDecomposition([x / 2.0, Const(1.0), x / 2.0], [a, a, 2 * a], DOM)
    merged = dec.merged()
    assert merged.Q == 2
    mu = np.array([0.4, 0.4])
    np.testing.assert_allclose(merged.assemble(mu), dec.assemble(mu))


def test_decomposition_validation():
    with pytest.raises(ValueError):
        AffineDecomposition([Const(1.0)], [np.ones(2), np.ones(2)])
    with pytest.raises(ValueError):
        AffineDecomposition([Const(1.0), Const(2.0)], [np.ones(2), np.ones(3)])
    with pytest.raises(ValueError):
        AffineDecomposition([Const(1.0)], [sp.csr_matrix(np.triu(np.ones((3, 3))))], symmetric=True)
