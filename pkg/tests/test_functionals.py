import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgate_opt.functionals import (
    check_unitary,
    costate_boundary_geo,
    costate_boundary_sm,
    eval_geo,
    eval_sm,
    eval_splx,
    geo_functional,
    sm_functional,
)
from qgate_opt.gate_analysis import diagonal_pe

from conftest import random_gate, random_unitary

CZ = np.diag([1, 1, 1, -1]).astype(complex)


def wirtinger_fd(J, U, h=1e-6):
    """Central-difference ``-dJ/d<phi_k|`` for every entry of U."""
    G = np.zeros((4, 4), complex)
    for l in range(4):
        for k in range(4):
            E = np.zeros((4, 4))
            E[l, k] = 1.0
            d_re = (J(U + h * E) - J(U - h * E)) / (2 * h)
            d_im = (J(U + 1j * h * E) - J(U - 1j * h * E)) / (2 * h)
            G[l, k] = -0.5 * (d_re + 1j * d_im)
    return G


def test_sm_value_hand_evaluated():
    assert eval_sm(CZ, np.eye(4)).total == pytest.approx(0.75)
    assert eval_sm(CZ, CZ).total == pytest.approx(0.0)


def test_j_diag_uniform_loss():
    value = eval_geo(np.eye(4) / np.sqrt(2))
    assert value.parts["J_diag"] == pytest.approx(2.0)


def test_splx_values():
    pe = diagonal_pe(0.3, -1.1, 2.0)
    assert eval_splx(pe, 185.0).total == pytest.approx(0.925)
    assert eval_splx(np.eye(4), 200.0).total == pytest.approx(5.0)
    with pytest.raises(ValueError):
        eval_splx(np.eye(4), 0.0)


def test_geo_costate_hand_evaluated():
    chi = costate_boundary_geo(CZ)
    assert chi[0, 0] == pytest.approx(2.0)
    assert np.allclose(chi, 2 * CZ)


def test_sm_costate_at_target():
    O = random_unitary(np.random.default_rng(1))
    assert np.allclose(costate_boundary_sm(O, O), O / 4)


def test_costates_embed_with_basis(rng):
    U = random_gate(rng)
    basis = np.linalg.qr(rng.normal(size=(10, 4)) + 1j * rng.normal(size=(10, 4)))[0]
    assert np.allclose(costate_boundary_geo(U, basis), basis @ costate_boundary_geo(U))
    O = random_unitary(rng)
    assert np.allclose(costate_boundary_sm(U, O, basis), basis @ costate_boundary_sm(U, O))


@pytest.mark.parametrize("seed", range(20))
def test_geo_costate_finite_differences(seed):
    rng = np.random.default_rng(seed)
    U = random_gate(rng)
    parts = lambda V: sum(eval_geo(V).parts.values())
    fd = wirtinger_fd(parts, U)
    an = costate_boundary_geo(U)
    assert np.max(np.abs(fd - an)) <= 1e-6 * np.max(np.abs(an))
    # the optimizer's co-state is the derivative of the normalized functional
    fd8 = wirtinger_fd(lambda V: eval_geo(V).total, U)
    assert np.max(np.abs(fd8 - geo_functional().costate(U))) <= 1e-6 * np.max(np.abs(fd8))


@pytest.mark.parametrize("seed", range(20))
def test_sm_costate_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    U = random_gate(rng)
    O = random_unitary(rng)
    fd = wirtinger_fd(lambda V: eval_sm(V, O).total, U)
    an = costate_boundary_sm(U, O)
    assert np.max(np.abs(fd - an)) <= 1e-6 * np.max(np.abs(an))


unitaries = st.integers(0, 2**32 - 1).map(lambda s: random_unitary(np.random.default_rng(s)))


@settings(max_examples=100, deadline=None)
@given(U=unitaries, O=unitaries)
def test_ranges_for_unitary_gates(U, O):
    assert -1e-12 <= eval_sm(U, O).total <= 1 + 1e-12
    parts = eval_geo(U).parts
    assert -1e-12 <= parts["J_diag"] <= 4 + 1e-12
    assert -1e-12 <= parts["J_gamma"] <= 4 + 1e-12


@settings(max_examples=100, deadline=None)
@given(r=st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4),
       th=st.lists(st.floats(-np.pi, np.pi), min_size=4, max_size=4))
def test_j_gamma_polar_identity(r, th):
    tau = np.array(r) * np.exp(1j * np.array(th))
    gamma = th[0] - th[1] - th[2] + th[3]
    expected = 2 + 2 * np.prod(r) * np.cos(gamma)
    assert eval_geo(np.diag(tau)).parts["J_gamma"] == pytest.approx(expected, abs=1e-12)


def test_zero_at_diagonal_perfect_entangler():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = rng.uniform(-np.pi, np.pi, 3)
        assert eval_geo(diagonal_pe(*p)).total == pytest.approx(0.0, abs=1e-15)


def test_positive_away_from_optimum():
    # gamma != pi
    assert eval_geo(np.diag(np.exp(1j * np.array([0, 0, 0, 3.0])))).total > 1e-4
    # population loss
    assert eval_geo(0.999 * CZ).total > 1e-4
    # off-diagonal gate with gamma = pi on the diagonal part
    U = CZ.copy()
    U[:2, :2] = np.array([[np.cos(0.1), np.sin(0.1)], [-np.sin(0.1), np.cos(0.1)]])
    assert eval_geo(U).total > 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_zero_functional_implies_diagonal_pe(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-np.pi, np.pi, 3)
    U = diagonal_pe(*p)
    assert eval_geo(U).total < 1e-12
    tau = np.diag(U)
    gamma = np.angle(tau[0]) - np.angle(tau[1]) - np.angle(tau[2]) + np.angle(tau[3])
    assert np.allclose(np.abs(tau), 1.0, atol=1e-6)
    assert abs(np.exp(1j * gamma) + 1) < 1e-6


def test_target_must_be_unitary():
    with pytest.raises(ValueError):
        check_unitary(np.eye(4) * 1.1)
    with pytest.raises(ValueError):
        check_unitary(np.eye(3))
    with pytest.raises(ValueError):
        sm_functional(2 * np.eye(4))
    with pytest.raises(ValueError):
        eval_geo(np.eye(3))


def test_functional_objects():
    sm = sm_functional(CZ)
    geo = geo_functional()
    assert sm.convex and not geo.convex
    assert sm(CZ).total == pytest.approx(0.0)
    assert np.allclose(sm.target, CZ)
    assert geo(np.eye(4)).total == pytest.approx(0.5)
