"""Dense linear algebra on truncated bosonic Fock spaces.

Everything here is small (N <= 64 per mode) and exact up to roundoff; the
other modules use these routines as ground truth.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix, identity, kron
from scipy.sparse.linalg import expm_multiply

__all__ = [
    "InvalidTruncation",
    "TruncationLeakage",
    "ladder",
    "displacement_unitary",
    "vacuum",
    "basis_state",
    "overlap",
    "pair_state_oracle",
    "vacuum_amplitude",
]


class InvalidTruncation(ValueError):
    pass


class TruncationLeakage(ArithmeticError):
    pass


def _check_truncation(N) -> int:
    if isinstance(N, bool) or int(N) != N or N < 2:
        raise InvalidTruncation(f"truncation must be an integer >= 2, got {N!r}")
    return int(N)


def ladder(N: int) -> np.ndarray:
    """Truncated creation operator with (b^dag)[k+1, k] = sqrt(k+1)."""
    N = _check_truncation(N)
    bdag = np.zeros((N, N), dtype=complex)
    k = np.arange(N - 1)
    bdag[k + 1, k] = np.sqrt(k + 1.0)
    return bdag


@lru_cache(maxsize=None)
def _generator_eig(N: int) -> tuple[np.ndarray, np.ndarray]:
    # H = i(b^dag - b) is Hermitian; exp(theta (b^dag - b)) = exp(-i theta H)
    bdag = ladder(N)
    H = 1j * (bdag - bdag.conj().T)
    w, V = np.linalg.eigh(H)
    w.setflags(write=False)
    V.setflags(write=False)
    return w, V


def displacement_unitary(N: int, theta: float) -> np.ndarray:
    """exp(theta (b^dag_N - b_N)) built from the eigenbasis of i(b^dag - b)."""
    if not np.isfinite(theta):
        raise FloatingPointError(f"non-finite displacement {theta!r}")
    w, V = _generator_eig(_check_truncation(N))
    return (V * np.exp(-1j * theta * w)) @ V.conj().T


def vacuum_amplitude(N: int, theta) -> np.ndarray:
    """<0| D_N(theta) |0> for an array of displacements, without forming D."""
    w, V = _generator_eig(_check_truncation(N))
    weights = np.abs(V[0]) ** 2
    theta = np.asarray(theta, dtype=float)
    return np.exp(-1j * theta[..., None] * w) @ weights


def basis_state(dim: int, n: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def vacuum(dim: int) -> np.ndarray:
    return basis_state(dim, 0)


def overlap(a: np.ndarray, b: np.ndarray) -> complex:
    """<a|b>, conjugate-linear in the first argument."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


@lru_cache(maxsize=8)
def _two_mode_squeeze_generator(N: int):
    b = csr_matrix(ladder(N).conj().T)
    one = identity(N, format="csr")
    bi = kron(b, one, format="csr")
    bj = kron(one, b, format="csr")
    # b_i b_j - b_i^dag b_j^dag
    return (bi @ bj - bi.T @ bj.T).tocsr()


def pair_state_oracle(N_per_mode: int, alpha_i: float, alpha_j: float, gamma: float,
                      guard: float = 1e-6) -> np.ndarray:
    """D_i(alpha_i) D_j(alpha_j) S_ij(gamma) |0,0> on the N^2 tensor space.

    Mode i is the slow (row) index of the flattened amplitude vector. The
    state is checked for weight in the top eighth of either mode's levels;
    if keeping only the lower levels loses more than ``guard`` of the norm
    the truncation is too small and TruncationLeakage is raised.
    """
    N = int(N_per_mode)
    if N < 8:
        raise InvalidTruncation(f"pair oracle needs N_per_mode >= 8, got {N}")
    if abs(gamma) > 2:
        raise ValueError(f"|gamma| = {abs(gamma)} outside the oracle range [0, 2]")
    psi = np.zeros(N * N, dtype=complex)
    psi[0] = 1.0
    if gamma != 0:
        psi = expm_multiply(gamma * _two_mode_squeeze_generator(N), psi)
    amp = psi.reshape(N, N)
    amp = displacement_unitary(N, alpha_i) @ amp @ displacement_unitary(N, alpha_j).T

    keep = N - max(2, N // 8)
    kept = np.linalg.norm(amp[:keep, :keep])
    if abs(kept - 1.0) > guard:
        raise TruncationLeakage(
            f"norm inside the guard band is {kept:.3e}; raise N_per_mode above {N}")
    return amp.ravel() / np.linalg.norm(amp)
