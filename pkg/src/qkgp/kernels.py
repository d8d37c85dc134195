"""Coherent-state kernel families, Gram matrices and Gram-matrix I/O.

Kernel families
---------------
``coherent``     s * prod_i |<alpha_i|alpha'_i>|^2, the squared exponential
``C-N``          same with the N-level truncated displacement operator
``CQ-N-tm``      C-N prepared on log2(N) qubits with m first-order Trotter steps
``squeezed``     3-D kernel built from displaced two-mode squeezed vacua
``external``     a precomputed Gram matrix; inputs are row indices into it

Data enter every family through alpha_i = x_i / (sqrt(2) c_i).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .fock import vacuum_amplitude
from .pauli import echo_probability

__all__ = [
    "Hyperparams",
    "KernelSpec",
    "GramMatrix",
    "KernelError",
    "assoc_laguerre_table",
    "displaced_overlap_table",
    "displaced_number_overlap",
    "dim_kernel_analytic",
    "dim_kernel_finite",
    "dim_kernel_qubit",
    "squeezed_pair_overlap",
    "squeezed_pair_kernel",
    "eval_kernel",
    "gram",
    "cross_gram",
    "kernel_diag",
    "symmetrize",
    "nearest_psd",
    "emulate_hardware_gram",
    "save_gram",
    "load_gram",
]

SQRT2 = math.sqrt(2.0)
MAX_SERIES_CAP = 20
GAMMA_VALIDATED = 2.0


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    s: float
    c: tuple[float, ...] = ()
    d: tuple[float, ...] = ()
    sigma_d: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in np.atleast_1d(self.c)))
        object.__setattr__(self, "d", tuple(float(v) for v in np.atleast_1d(self.d)))
        if self.s <= 0:
            raise KernelError(f"scale s must be positive, got {self.s}")
        if any(v <= 0 for v in self.c):
            raise KernelError(f"length scales must be positive, got {self.c}")
        if any(v < 0 for v in self.d):
            raise KernelError(f"squeezing couplings must be nonnegative, got {self.d}")
        if self.sigma_d is not None and self.sigma_d < 0:
            raise KernelError(f"sigma_d must be nonnegative, got {self.sigma_d}")

    def to_dict(self) -> dict:
        out = {"s": self.s, "c": list(self.c)}
        if self.d:
            out["d"] = list(self.d)
        if self.sigma_d is not None:
            out["sigma_d"] = self.sigma_d
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparams":
        return cls(float(data["s"]), tuple(data.get("c", ())), tuple(data.get("d", ())),
                   data.get("sigma_d"))


_LABEL_FINITE = re.compile(r"^C-(\d+)$", re.IGNORECASE)
_LABEL_QUBIT = re.compile(r"^CQ-(\d+)-t(\d+)$", re.IGNORECASE)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    dims: int = 1
    levels: int | None = None
    steps: int | None = None
    cap: int = 8
    source: "GramMatrix | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        fam = self.family
        if fam not in ("coherent", "finite", "qubit", "squeezed", "external"):
            raise KernelError(f"unknown kernel family {fam!r}")
        if self.dims < 1:
            raise KernelError("dims must be >= 1")
        if fam in ("finite", "qubit") and (self.levels is None or self.levels < 2):
            raise KernelError(f"{fam} kernel needs levels >= 2")
        if fam == "qubit":
            if self.levels & (self.levels - 1):
                raise KernelError(f"qubit kernel needs a power-of-two truncation, got {self.levels}")
            if self.steps is None or self.steps < 1:
                raise KernelError("qubit kernel needs steps >= 1")
        if fam == "squeezed":
            if self.dims != 3:
                raise KernelError("the squeezed family is defined for dims == 3 only")
            if not 1 <= self.cap <= MAX_SERIES_CAP:
                raise KernelError(f"series cap must lie in [1, {MAX_SERIES_CAP}]")
        if fam == "external" and self.source is None:
            raise KernelError("external kernel needs a source Gram matrix")

    @classmethod
    def from_label(cls, label: str, dims: int = 1, cap: int = 8) -> "KernelSpec":
        key = label.strip()
        if key.lower() == "coherent":
            return cls("coherent", dims)
        if key.lower() == "squeezed":
            return cls("squeezed", dims, cap=cap)
        m = _LABEL_FINITE.match(key)
        if m:
            return cls("finite", dims, levels=int(m.group(1)))
        m = _LABEL_QUBIT.match(key)
        if m:
            return cls("qubit", dims, levels=int(m.group(1)), steps=int(m.group(2)))
        raise KernelError(f"unrecognised kernel label {label!r}")

    @property
    def label(self) -> str:
        if self.family == "finite":
            return f"C-{self.levels}"
        if self.family == "qubit":
            return f"CQ-{self.levels}-t{self.steps}"
        return self.family

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Dimension pairs coupled by squeezing, in the order of ``Hyperparams.d``."""
        return list(itertools.combinations(range(self.dims), 2))


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    provenance: str = "simulated"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise KernelError(f"Gram matrix must be square, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.provenance not in ("simulated", "ingested", "shot_emulated"):
            raise KernelError(f"unknown provenance {self.provenance!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]


# -- one-dimensional factors -------------------------------------------------

def dim_kernel_analytic(x, xp, c):
    return np.exp(-((np.asarray(x) - np.asarray(xp)) ** 2) / (2.0 * np.asarray(c) ** 2))


def dim_kernel_finite(x, xp, c, N):
    theta = (np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)) / (SQRT2 * np.asarray(c))
    val = np.abs(vacuum_amplitude(N, theta)) ** 2
    return float(val) if np.ndim(val) == 0 else val


def dim_kernel_qubit(x, xp, c, N, steps):
    theta = (np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)) / (SQRT2 * np.asarray(c))
    return echo_probability(N, theta, steps)


# -- displaced number states ---------------------------------------------------

def assoc_laguerre_table(x, cap: int) -> np.ndarray:
    """L[..., j, k] = L_j^{(k)}(x) for 0 <= j, k <= cap, by upward recurrence in j."""
    x = np.asarray(x, dtype=float)
    L = np.empty(x.shape + (cap + 1, cap + 1))
    k = np.arange(cap + 1, dtype=float)
    xe = x[..., None]
    L[..., 0, :] = 1.0
    if cap >= 1:
        L[..., 1, :] = 1.0 + k - xe
    for j in range(1, cap):
        L[..., j + 1, :] = ((2 * j + 1 + k - xe) * L[..., j, :] - (j + k) * L[..., j - 1, :]) / (j + 1)
    return L


def _check_cap(cap: int) -> int:
    if int(cap) != cap or not 0 <= cap <= MAX_SERIES_CAP:
        raise KernelError(f"series cap must be an integer in [0, {MAX_SERIES_CAP}], got {cap!r}")
    return int(cap)


@lru_cache(maxsize=None)
def _overlap_layout(cap: int):
    """Flat gather indices and constant factors shared by every overlap table."""
    idx = np.arange(cap + 1)
    lo = np.minimum.outer(idx, idx)
    diff = np.abs(idx[:, None] - idx[None, :])
    logfact = np.array([math.lgamma(i + 1) for i in idx])
    norm = np.exp(0.5 * (logfact[lo] - logfact[lo + diff]))
    sign = np.where(idx[:, None] > idx[None, :], (-1.0) ** diff, 1.0)
    flat = (lo * (cap + 1) + diff).ravel()
    for arr in (diff, norm, sign, flat):
        arr.setflags(write=False)
    return diff.ravel(), norm * sign, flat


def displaced_overlap_table(delta, cap: int) -> np.ndarray:
    """T[..., m, n] = <m, alpha'|n, alpha> for real displacements with delta = alpha' - alpha.

    n >= m:  e^{-delta^2/2} sqrt(m!/n!) delta^(n-m)  L_m^(n-m)(delta^2)
    n <  m:  e^{-delta^2/2} sqrt(n!/m!) (-delta)^(m-n) L_n^(m-n)(delta^2)
    """
    cap = _check_cap(cap)
    delta = np.asarray(delta, dtype=float)
    size = cap + 1
    diff, const, flat = _overlap_layout(cap)
    L = assoc_laguerre_table(delta ** 2, cap).reshape(delta.shape + (size * size,))
    powers = np.cumprod(np.concatenate(
        [np.ones(delta.shape + (1,)), np.repeat(delta[..., None], cap, axis=-1)], axis=-1),
        axis=-1)
    body = np.take(powers, diff, axis=-1) * np.take(L, flat, axis=-1)
    body = body.reshape(delta.shape + (size, size))
    return np.exp(-0.5 * delta ** 2)[..., None, None] * const * body


def displaced_number_overlap(m: int, alpha_p: float, n: int, alpha: float) -> float:
    """<m, alpha'| n, alpha> = <m| D(alpha')^dag D(alpha) |n> for real alphas."""
    if m < 0 or n < 0:
        raise KernelError("number-state indices must be nonnegative")
    cap = _check_cap(max(m, n))
    return float(displaced_overlap_table(alpha_p - alpha, cap)[m, n])


# -- squeezed pair factor ------------------------------------------------------

def _warn_gamma(*gammas):
    worst = max(float(np.max(np.abs(g), initial=0.0)) for g in gammas)
    if worst >= GAMMA_VALIDATED:
        warnings.warn(f"|gamma| = {worst:.3g} is outside the validated range of the "
                      "truncated squeezing series", RuntimeWarning, stacklevel=3)


def _squeezed_vacuum_weights(gamma, cap: int) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    ratio = np.repeat(-np.tanh(gamma)[..., None], cap + 1, axis=-1)
    ratio[..., 0] = 1.0
    return np.cumprod(ratio, axis=-1) / np.cosh(gamma)[..., None]


def _pair_sum(bra, ket, Ti, Tj) -> np.ndarray:
    """|sum_{m,n} bra_m ket_n Ti[m,n] Tj[m,n]| over trailing axes."""
    inner = np.einsum("...mn,...n->...m", Ti * Tj, ket)
    return np.abs(np.einsum("...m,...m->...", bra, inner))


def squeezed_pair_overlap(alpha_i, alpha_j, gamma, alpha_pi, alpha_pj, gamma_p, cap: int = 8):
    """|<0,0|S^dag(g') D_j^dag(a'_j) D_i^dag(a'_i) D_i(a_i) D_j(a_j) S(g)|0,0>| by series.

    The squeezed vacuum is sum_n (-tanh g)^n / cosh g |n,n>, so the overlap is
    sum_{m,n<=cap} b_m a_n <m,a'_i|n,a_i> <m,a'_j|n,a_j>. Arguments broadcast.
    """
    _warn_gamma(gamma, gamma_p)
    cap = _check_cap(cap)
    Ti = displaced_overlap_table(np.asarray(alpha_pi) - np.asarray(alpha_i), cap)
    Tj = displaced_overlap_table(np.asarray(alpha_pj) - np.asarray(alpha_j), cap)
    total = _pair_sum(_squeezed_vacuum_weights(gamma_p, cap),
                      _squeezed_vacuum_weights(gamma, cap), Ti, Tj)
    return float(total) if total.ndim == 0 else total


def squeezed_pair_kernel(xi, xj, xpi, xpj, ci, cj, dij, cap: int = 8):
    """Pair factor of the squeezed kernel; a magnitude, not squared."""
    gamma = np.asarray(xi) * np.asarray(xj) * dij
    gamma_p = np.asarray(xpi) * np.asarray(xpj) * dij
    return squeezed_pair_overlap(
        np.asarray(xi) / (SQRT2 * ci), np.asarray(xj) / (SQRT2 * cj), gamma,
        np.asarray(xpi) / (SQRT2 * ci), np.asarray(xpj) / (SQRT2 * cj), gamma_p, cap)


# -- multi-dimensional evaluation ---------------------------------------------

def _check_hp(spec: KernelSpec, hp: Hyperparams):
    if spec.family == "external":
        return
    if len(hp.c) != spec.dims:
        raise KernelError(f"{spec.label} needs {spec.dims} length scales, got {len(hp.c)}")
    if spec.family == "squeezed" and len(hp.d) != len(spec.pairs):
        raise KernelError(f"squeezed kernel needs {len(spec.pairs)} couplings, got {len(hp.d)}")


def _paired_values(spec: KernelSpec, hp: Hyperparams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """k(A[p], B[p]) for every row p; A and B are (P, dims)."""
    fam = spec.family
    if fam == "external":
        ia = A[:, 0].astype(int)
        ib = B[:, 0].astype(int)
        return hp.s * spec.source.values[ia, ib]
    c = np.asarray(hp.c)
    if fam == "coherent":
        return hp.s * np.exp(-np.sum((A - B) ** 2 / (2.0 * c ** 2), axis=1))
    if fam == "squeezed":
        # each dimension's overlap table is shared by the two pairs touching it
        T = [displaced_overlap_table((B[:, i] - A[:, i]) / (SQRT2 * c[i]), spec.cap)
             for i in range(spec.dims)]
        out = np.full(A.shape[0], hp.s)
        for (i, j), d in zip(spec.pairs, hp.d):
            g, gp = A[:, i] * A[:, j] * d, B[:, i] * B[:, j] * d
            _warn_gamma(g, gp)
            out = out * _pair_sum(_squeezed_vacuum_weights(gp, spec.cap),
                                  _squeezed_vacuum_weights(g, spec.cap), T[i], T[j])
        return out
    theta = (A - B) / (SQRT2 * c)
    if fam == "finite":
        factors = np.abs(vacuum_amplitude(spec.levels, theta)) ** 2
    else:
        factors = echo_probability(spec.levels, theta, spec.steps)
    return hp.s * np.prod(factors, axis=1)


def _as_points(X, dims: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dims == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != dims:
        raise KernelError(f"expected points with {dims} coordinates, got shape {X.shape}")
    return X


def eval_kernel(spec: KernelSpec, hp: Hyperparams, x, xp) -> float:
    if spec.family == "external":
        raise KernelError("external Gram kernels can only be evaluated as whole matrices")
    _check_hp(spec, hp)
    a = _as_points(np.atleast_1d(x)[None, :], spec.dims)
    b = _as_points(np.atleast_1d(xp)[None, :], spec.dims)
    return float(_paired_values(spec, hp, a, b)[0])


def gram(spec: KernelSpec, hp: Hyperparams, X) -> GramMatrix:
    """Symmetric Gram matrix; only the upper triangle is evaluated."""
    _check_hp(spec, hp)
    dims = 1 if spec.family == "external" else spec.dims
    X = _as_points(X, dims)
    n = X.shape[0]
    if n == 0:
        raise KernelError("cannot build a Gram matrix of zero points")
    iu, ju = np.triu_indices(n)
    vals = _paired_values(spec, hp, X[iu], X[ju])
    K = np.empty((n, n))
    K[iu, ju] = vals
    K[ju, iu] = vals
    provenance = "ingested" if spec.family == "external" else "simulated"
    return GramMatrix(K, provenance, {"s": hp.s, "family": spec.label,
                                      "hyperparams": hp.to_dict()})


def cross_gram(spec: KernelSpec, hp: Hyperparams, Xstar, X) -> np.ndarray:
    _check_hp(spec, hp)
    dims = 1 if spec.family == "external" else spec.dims
    Xstar = _as_points(Xstar, dims)
    X = _as_points(X, dims)
    i, j = np.meshgrid(np.arange(len(Xstar)), np.arange(len(X)), indexing="ij")
    vals = _paired_values(spec, hp, Xstar[i.ravel()], X[j.ravel()])
    return vals.reshape(len(Xstar), len(X))


def kernel_diag(spec: KernelSpec, hp: Hyperparams, X) -> np.ndarray:
    _check_hp(spec, hp)
    dims = 1 if spec.family == "external" else spec.dims
    X = _as_points(X, dims)
    return _paired_values(spec, hp, X, X)


# -- post-processing and hardware emulation -----------------------------------

def symmetrize(G):
    """(G + G^T) / 2; accepts a GramMatrix or a square array."""
    vals = G.values if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
        raise KernelError(f"cannot symmetrize a matrix of shape {vals.shape}")
    sym = 0.5 * (vals + vals.T)
    if isinstance(G, GramMatrix):
        return GramMatrix(sym, G.provenance, dict(G.meta))
    return sym


def nearest_psd(G: GramMatrix) -> GramMatrix:
    """Clip negative eigenvalues of a symmetrized Gram matrix to zero.

    Shot noise on every entry of a measured Gram matrix leaves it slightly
    indefinite, which can make posterior variances negative.
    """
    w, V = np.linalg.eigh(symmetrize(G.values))
    P = (V * np.clip(w, 0.0, None)) @ V.T
    meta = dict(G.meta, min_eigenvalue=float(w[0]))
    return GramMatrix(symmetrize(P), G.provenance, meta)


def emulate_hardware_gram(G: GramMatrix, shots: int = 8192, floor_rate: float = 0.04,
                          seed: int = 0, background: float = 0.5,
                          s: float | None = None) -> GramMatrix:
    """Shot-noise plus constant-leakage model of a device-evaluated Gram matrix.

    Each entry is turned into a vacuum probability p = K/s, replaced by a
    binomial estimate from ``shots`` samples, mixed with a background
    population ``p' = (1 - floor_rate) p + floor_rate * background``, then
    rescaled by s and symmetrized. The defaults put the diagonal at 0.98
    and lift a 1.7e-4 entry to about 0.02.
    """
    from .pauli import shot_estimate

    if not 0.0 <= floor_rate <= 1.0:
        raise KernelError(f"floor_rate must lie in [0, 1], got {floor_rate}")
    if not 0.0 <= background <= 1.0:
        raise KernelError(f"background must lie in [0, 1], got {background}")
    scale = float(s if s is not None else G.meta.get("s", 1.0))
    p = np.clip(G.values / scale, 0.0, 1.0)
    p_hat = shot_estimate(p, shots, seed)
    p_tilde = (1.0 - floor_rate) * p_hat + floor_rate * background
    meta = dict(G.meta, shots=int(shots), floor_rate=floor_rate, background=background,
                seed=seed)
    return GramMatrix(symmetrize(scale * p_tilde), "shot_emulated", meta)


# -- CSV I/O --------------------------------------------------------------------

def save_gram(G: GramMatrix, path) -> Path:
    """Write G as plain CSV (17 significant digits) plus a JSON sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for row in G.values:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    sidecar = {
        "n": G.n,
        "provenance": G.provenance,
        "s": G.meta.get("s"),
        "family": G.meta.get("family"),
        "hyperparams": G.meta.get("hyperparams"),
    }
    extra = {k: v for k, v in G.meta.items() if k not in sidecar}
    sidecar.update(extra)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_gram(path) -> GramMatrix:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise KernelError(f"{path}:{lineno}: non-numeric cell") from exc
    if not rows:
        raise KernelError(f"{path}: empty Gram file")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise KernelError(f"{path}: ragged rows")
    if len(rows) != width.pop():
        raise KernelError(f"{path}: Gram matrix is not square")
    meta = {}
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = {k: v for k, v in json.loads(sidecar.read_text()).items()
                if k in ("s", "family", "hyperparams")}
    return GramMatrix(np.array(rows), "ingested", meta)
