import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkgp.fock import (InvalidTruncation, TruncationLeakage, basis_state, displacement_unitary,
                       ladder, overlap, pair_state_oracle, vacuum, vacuum_amplitude)


def test_ladder_n4_entries():
    b = ladder(4)
    expected = np.zeros((4, 4))
    expected[1, 0], expected[2, 1], expected[3, 2] = 1.0, math.sqrt(2), math.sqrt(3)
    assert np.array_equal(b, expected)


def test_ladder_n2():
    assert np.array_equal(ladder(2), [[0, 0], [1, 0]])


def test_ladder_n8_number_operator_has_corner_defect():
    bdag = ladder(8)
    n_op = bdag @ bdag.conj().T  # b^dag b with b = (b^dag)^dag
    assert np.allclose(np.diag(n_op).real, [0, 1, 2, 3, 4, 5, 6, 7])
    n_trunc = bdag.conj().T @ bdag
    assert np.allclose(np.diag(n_trunc).real, [1, 2, 3, 4, 5, 6, 7, 0])


@pytest.mark.parametrize("bad", [1, 0, -3, 2.5, True])
def test_ladder_rejects_bad_truncation(bad):
    with pytest.raises(InvalidTruncation):
        ladder(bad)


def test_displacement_identity_at_zero():
    assert np.allclose(displacement_unitary(6, 0.0), np.eye(6), atol=1e-14)


def test_displacement_two_level_rotation():
    th = 0.83
    D = displacement_unitary(2, th)
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    assert np.allclose(D, R, atol=1e-14)


def test_displacement_large_truncation_vacuum_amplitude():
    D = displacement_unitary(32, 1.3)
    assert abs(D[0, 0] - math.exp(-1.3 ** 2 / 2)) < 1e-6


def test_displacement_matches_generator_exponential():
    from scipy.linalg import expm

    bdag = ladder(7)
    for th in (-1.1, 0.4, 2.0):
        assert np.allclose(displacement_unitary(7, th), expm(th * (bdag - bdag.conj().T)),
                           atol=1e-12)


def test_displacement_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        displacement_unitary(4, float("nan"))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 24), st.floats(-4, 4))
def test_displacement_unitary_and_echo_identity(N, th):
    D = displacement_unitary(N, th)
    assert np.max(np.abs(D.conj().T @ D - np.eye(N))) <= 1e-10
    assert np.max(np.abs(D @ displacement_unitary(N, -th) - np.eye(N))) <= 1e-10
    psi = D @ vacuum(N)
    assert abs(np.linalg.norm(psi) - 1) <= 1e-10


def test_vacuum_amplitude_matches_dense_column():
    th = np.linspace(-3, 3, 13)
    amp = vacuum_amplitude(9, th)
    dense = [displacement_unitary(9, t)[0, 0] for t in th]
    assert np.allclose(amp, dense, atol=1e-13)


def test_vacuum_probability_converges_with_truncation():
    th = np.linspace(0.0, 2.0, 41)
    exact = np.exp(-th ** 2)
    errs = [np.max(np.abs(np.abs(vacuum_amplitude(N, th)) ** 2 - exact)) for N in (8, 16, 32, 64)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_overlap_basics():
    assert overlap(vacuum(5), basis_state(5, 1)) == 0
    v = displacement_unitary(32, 1.0) @ vacuum(32)
    assert abs(overlap(v, v) - 1) < 1e-12
    assert abs(overlap(vacuum(32), v) - math.exp(-0.5)) < 1e-6


def test_overlap_is_conjugate_linear_in_first_argument():
    a = np.array([1j, 0])
    b = np.array([1, 0])
    assert overlap(a, b) == -1j


def test_overlap_dimension_mismatch():
    with pytest.raises(ValueError):
        overlap(vacuum(3), vacuum(4))


def test_pair_oracle_vacuum():
    psi = pair_state_oracle(8, 0.0, 0.0, 0.0)
    assert np.allclose(psi, basis_state(64, 0))


def test_pair_oracle_squeezed_vacuum_amplitudes():
    N, g = 40, 0.3
    amp = pair_state_oracle(N, 0.0, 0.0, g).reshape(N, N)
    n = np.arange(N)
    expected = np.diag((-math.tanh(g)) ** n / math.cosh(g))
    assert np.max(np.abs(amp - expected)) < 1e-10


def test_pair_oracle_factorizes_without_squeezing():
    N = 40
    a = pair_state_oracle(N, 0.7, -0.3, 0.0)
    b = pair_state_oracle(N, -0.2, 0.5, 0.0)
    single = math.exp(-(0.9 ** 2) / 2) * math.exp(-(0.8 ** 2) / 2)
    assert abs(abs(overlap(a, b)) - single) < 1e-8


def test_pair_oracle_fixture():
    # regression fixture produced by this oracle at N_per_mode=40
    a = pair_state_oracle(40, 1.0, -0.5, 0.5)
    b = pair_state_oracle(40, 0.2, 0.3, 0.1)
    assert abs(overlap(a, b)) == pytest.approx(0.6684106215633868, abs=1e-10)


def test_pair_oracle_leakage_guard():
    with pytest.raises(TruncationLeakage):
        pair_state_oracle(8, 2.0, 2.0, 1.5)


def test_pair_oracle_preconditions():
    with pytest.raises(InvalidTruncation):
        pair_state_oracle(6, 0, 0, 0)
    with pytest.raises(ValueError):
        pair_state_oracle(40, 0, 0, 2.5)
