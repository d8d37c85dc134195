"""Pauli-string form of the truncated displacement generator and its
first-order Trotterized evolution on log2(N) qubits.

Qubit ordering is little-endian: character k of a symbol string acts on
qubit k, which is bit k of the computational-basis index. Under this
ordering the strings read the same way as the published decompositions
(for N=4 the leading term is ``YI``).

The Hermitian operator that is decomposed is H = i(b^dag - b), so that
exp(-i theta H) = exp(theta (b^dag - b)).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fock import InvalidTruncation, ladder

__all__ = [
    "PauliTerm",
    "PauliSum",
    "pauli_decompose",
    "apply_pauli",
    "exp_pauli_apply",
    "trotter_evolve",
    "trotter_vacuum_amplitude",
    "echo_probability",
    "shot_estimate",
]

_SYMBOLS = "IXYZ"
PRUNE = 1e-12


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    symbols: str

    def __post_init__(self):
        if self.coefficient == 0:
            raise ValueError("zero-coefficient Pauli terms are pruned, not stored")
        if not self.symbols or set(self.symbols) - set(_SYMBOLS):
            raise ValueError(f"bad Pauli string {self.symbols!r}")

    @property
    def qubits(self) -> int:
        return len(self.symbols)

    def matrix(self) -> np.ndarray:
        return self.coefficient * _string_matrix(self.symbols)


@dataclass(frozen=True)
class PauliSum:
    qubits: int
    terms: tuple[PauliTerm, ...]

    def __post_init__(self):
        for t in self.terms:
            if t.qubits != self.qubits:
                raise ValueError(f"term {t.symbols} does not act on {self.qubits} qubits")

    def __len__(self):
        return len(self.terms)

    def to_dense(self) -> np.ndarray:
        dim = 2 ** self.qubits
        out = np.zeros((dim, dim), dtype=complex)
        for t in self.terms:
            out += t.matrix()
        return out

    def to_dict(self) -> dict:
        return {
            "qubits": self.qubits,
            "terms": [{"coeff": t.coefficient, "string": t.symbols} for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "PauliSum":
        terms = tuple(PauliTerm(float(t["coeff"]), t["string"]) for t in data["terms"])
        return cls(int(data["qubits"]), terms)


@lru_cache(maxsize=4096)
def _flip_and_phase(symbols: str) -> tuple[int, np.ndarray]:
    """P|b> = phase[b] |b ^ mask> for every basis index b."""
    q = len(symbols)
    b = np.arange(2 ** q)
    mask = 0
    phase = np.ones(2 ** q, dtype=complex)
    for k, s in enumerate(symbols):
        bit = (b >> k) & 1
        if s in "XY":
            mask |= 1 << k
        if s == "Y":
            phase *= 1j * (1 - 2 * bit)
        elif s == "Z":
            phase *= 1 - 2 * bit
    phase.setflags(write=False)
    return mask, phase


def _string_matrix(symbols: str) -> np.ndarray:
    mask, phase = _flip_and_phase(symbols)
    dim = phase.size
    b = np.arange(dim)
    M = np.zeros((dim, dim), dtype=complex)
    M[b ^ mask, b] = phase
    return M


def _qubit_count(N) -> int:
    if isinstance(N, bool) or int(N) != N or N < 2 or int(N) & (int(N) - 1):
        raise InvalidTruncation(f"truncation must be a power of two >= 2, got {N!r}")
    if N > 64:
        raise InvalidTruncation(f"truncation {N} exceeds the supported maximum of 64")
    return int(N).bit_length() - 1


def pauli_decompose(N: int) -> PauliSum:
    """Expand i(b^dag_N - b_N) over all 4^q Pauli strings by trace projection.

    c_P = Tr(P H) / N; coefficients are real for this H because every
    surviving string carries an odd number of Y factors.
    """
    q = _qubit_count(N)
    bdag = ladder(N)
    H = 1j * (bdag - bdag.conj().T)
    b = np.arange(N)
    terms = []
    for chars in itertools.product(_SYMBOLS, repeat=q):
        symbols = "".join(chars)
        mask, phase = _flip_and_phase(symbols)
        # Tr(P H) = sum_b phase[b] H[b, b ^ mask]
        c = np.sum(phase * H[b, b ^ mask]) / N
        if abs(c) < PRUNE:
            continue
        assert abs(c.imag) < PRUNE, (symbols, c)
        terms.append(PauliTerm(float(c.real), symbols))
    terms.sort(key=lambda t: t.symbols)
    return PauliSum(q, tuple(terms))


def apply_pauli(symbols: str, state: np.ndarray) -> np.ndarray:
    """P|state>; ``state`` may carry leading batch axes."""
    mask, phase = _flip_and_phase(symbols)
    state = np.asarray(state)
    if state.shape[-1] != phase.size:
        raise ValueError(f"state dimension {state.shape[-1]} != 2^{len(symbols)}")
    idx = np.arange(phase.size) ^ mask
    return state[..., idx] * phase[idx]


def exp_pauli_apply(term: PauliTerm, angle, state: np.ndarray) -> np.ndarray:
    """exp(-i angle c P)|state>, using P^2 = I.

    ``angle`` is a scalar or an array broadcasting against the batch axes of
    ``state``.
    """
    phi = np.asarray(angle, dtype=float)[..., None] * term.coefficient
    return np.cos(phi) * state - 1j * np.sin(phi) * apply_pauli(term.symbols, state)


def trotter_evolve(psum: PauliSum, theta, steps: int) -> np.ndarray:
    """First-order product formula for exp(-i theta H) applied to |0...0>.

    Terms are applied in the PauliSum's (lexicographic) order, ``steps``
    times, each with angle theta/steps. An array ``theta`` yields one state
    per row.
    """
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    theta = np.asarray(theta, dtype=float)
    state = np.zeros(theta.shape + (2 ** psum.qubits,), dtype=complex)
    state[..., 0] = 1.0
    dt = theta / steps
    for _ in range(int(steps)):
        for term in psum.terms:
            state = exp_pauli_apply(term, dt, state)
    return state


def trotter_vacuum_amplitude(psum: PauliSum, theta, steps: int) -> np.ndarray:
    return trotter_evolve(psum, theta, steps)[..., 0]


@lru_cache(maxsize=None)
def _cached_decompose(N: int) -> PauliSum:
    return pauli_decompose(N)


def echo_probability(N: int, theta, steps: int):
    """Vacuum population |<0...0| U_trotter(theta) |0...0>|^2."""
    theta = np.asarray(theta, dtype=float)
    uniq, inverse = np.unique(theta, return_inverse=True)
    amp = trotter_vacuum_amplitude(_cached_decompose(N), uniq, steps)
    p = (np.abs(amp) ** 2)[inverse].reshape(theta.shape)
    return float(p) if np.ndim(p) == 0 else p


def shot_estimate(p, shots: int, seed: int):
    """Binomial(shots, p) / shots from a generator seeded per call."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr < 0) or np.any(p_arr > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer, got {shots!r}")
    rng = np.random.default_rng(seed)
    est = rng.binomial(int(shots), p_arr) / shots
    return float(est) if np.ndim(est) == 0 else est
