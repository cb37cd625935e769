import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcap.errors import ContractViolation, HypothesisViolation, SingularMatrixError
from flowcap.flows import Householder, Planar
from flowcap.lincompile import compile_linear, gaussian_bridge, gaussian_bridge_matrix, lu_no_pivot, rank_one_gadget

from support import random_spd

seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=st.integers(1, 7))
def test_compiled_map_equals_matrix(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    if np.linalg.cond(A) > 1e4:
        A += 3.0 * np.eye(d)
    res = compile_linear(A)
    Z = rng.normal(size=(50, d))
    assert np.allclose(res.apply(Z), Z @ A.T, rtol=1e-9, atol=1e-9 * np.abs(A).max())
    assert all(isinstance(layer, (Planar, Householder)) for layer in res.stack.layers)
    assert all(layer.h.is_relu for layer in res.stack.layers if isinstance(layer, Planar))


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=st.integers(2, 7))
def test_reflection_count_follows_determinant_sign(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 2 * np.eye(d)
    A[0, 0] = 0.0
    res = compile_linear(A)
    assert res.path == "pivoted"
    k = res.householder_count
    # every ReLU planar layer has positive determinant
    assert (-1) ** k == np.sign(np.linalg.det(A))
    assert k in (d - 1, d)


def test_lu_path_layer_count():
    rng = np.random.default_rng(3)
    for d in (2, 3, 5):
        L = np.eye(d) + np.tril(rng.normal(size=(d, d)), -1)
        U = np.triu(rng.normal(size=(d, d)), 1) + np.diag(rng.uniform(0.5, 2, size=d))
        res = compile_linear(L @ U)
        assert res.path == "lu" and res.planar_count == 4 * d - 4 and res.householder_count == 0


def test_lu_no_pivot_rejects_negative_pivot():
    assert lu_no_pivot(np.array([[-1.0, 0.0], [0.0, 1.0]])) is None
    L, U = lu_no_pivot(np.array([[2.0, 1.0], [1.0, 3.0]]))
    assert np.allclose(L @ U, [[2.0, 1.0], [1.0, 3.0]])


def test_identity_compiles_to_nothing():
    res = compile_linear(np.eye(4))
    assert len(res.stack) == 0 and res.path == "identity"


def test_scalar_paths():
    pos = compile_linear([[2.5]])
    assert pos.planar_count == 2 and pos.householder_count == 0
    neg = compile_linear([[-0.5]])
    assert neg.householder_count == 1
    z = np.linspace(-3, 3, 7).reshape(-1, 1)
    assert np.allclose(neg.apply(z), -0.5 * z)


def test_singular_matrix_rejected():
    with pytest.raises(SingularMatrixError):
        compile_linear([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(ContractViolation):
        compile_linear(np.ones((2, 3)))


def test_shift_is_applied_outside_stack():
    res = compile_linear(np.diag([2.0, 3.0]), shift=[1.0, -1.0])
    assert np.allclose(res.apply(np.zeros((1, 2))), [[1.0, -1.0]])


def test_rank_one_gadget():
    u, w = np.array([0.5, -0.6, 1.0]), np.array([0.0, 1.0, 0.0])
    stack = rank_one_gadget(u, w)
    Z = np.random.default_rng(0).normal(size=(20, 3))
    assert len(stack) == 2
    assert np.allclose(stack.forward(Z)[0], Z @ (np.eye(3) + np.outer(u, w)).T)
    with pytest.raises(HypothesisViolation):
        rank_one_gadget([0.0, -2.0, 0.0], w)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, d=st.integers(1, 6))
def test_bridge_matrix_maps_covariance(seed, d):
    rng = np.random.default_rng(seed)
    Sq, Sp = random_spd(d, rng), random_spd(d, rng)
    M = gaussian_bridge_matrix(Sq, Sp)
    assert np.allclose(M @ Sq @ M.T, Sp, rtol=1e-9, atol=1e-9)
    res = gaussian_bridge(Sq, Sp)
    assert np.allclose(res.matrix(), M, atol=1e-9)


def test_bridge_between_equal_covariances_is_identity():
    S = random_spd(3, np.random.default_rng(1))
    assert len(gaussian_bridge(S, S).stack) == 0


def test_bridge_rejects_indefinite():
    with pytest.raises(ContractViolation):
        gaussian_bridge_matrix(np.eye(2), np.diag([1.0, -1.0]))
