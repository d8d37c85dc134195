"""Gaussian-process regression with known heteroscedastic noise.

The prior is y = f + eps (+ d), f ~ N(0, K), eps_i ~ N(0, sigma_i^2) and,
when the model-discrepancy term is enabled, d_i ~ N(0, sigma_d^2). All
linear algebra goes through one Cholesky factor of
Q = K + diag(sigma^2 + sigma_d^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .kernels import Hyperparams, KernelSpec, cross_gram, gram

__all__ = [
    "Dataset",
    "GPModel",
    "Posterior",
    "GPError",
    "NonPSDError",
    "OptimizationError",
    "posterior",
    "log_marginal_likelihood",
    "maximize",
    "optimize",
    "hyperparam_bounds",
    "r2_score",
]

MAX_JITTER_RETRIES = 6
VARIANCE_TOL = 1e-10


class GPError(ArithmeticError):
    pass


class NonPSDError(GPError):
    pass


class OptimizationError(GPError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        s2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), y.shape).copy()
        if len(y) < 1 or X.shape[0] != len(y):
            raise ValueError(f"inconsistent dataset: X {X.shape}, y {y.shape}")
        if np.any(s2 < 0):
            raise ValueError("noise variances must be nonnegative")
        for arr in (X, y, s2):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma2", s2)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.sigma2[idx])


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def band(self, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
        half = z * self.std
        return self.mean - half, self.mean + half


@dataclass(frozen=True)
class GPModel:
    spec: KernelSpec
    hp: Hyperparams
    data: Dataset
    discrepancy: bool = False
    jitter: float = 1e-10

    @cached_property
    def noise(self) -> np.ndarray:
        sd2 = (self.hp.sigma_d or 0.0) ** 2 if self.discrepancy else 0.0
        return self.data.sigma2 + sd2

    @cached_property
    def K(self) -> np.ndarray:
        return gram(self.spec, self.hp, self.data.X).values

    @cached_property
    def factor(self) -> tuple[np.ndarray, float]:
        """Lower Cholesky factor of Q and the jitter that was needed."""
        Q = self.K + np.diag(self.noise)
        try:
            return cholesky(Q, lower=True, check_finite=True), 0.0
        except np.linalg.LinAlgError:
            pass
        except ValueError as exc:
            raise NonPSDError(f"non-finite covariance: {exc}") from exc
        base = self.jitter * np.trace(Q) / len(Q)
        for retry in range(MAX_JITTER_RETRIES):
            eps = base * 10.0 ** retry
            try:
                return cholesky(Q + eps * np.eye(len(Q)), lower=True), eps
            except np.linalg.LinAlgError:
                continue
        lam = float(np.linalg.eigvalsh(Q)[0])
        raise NonPSDError(f"covariance is not positive definite (min eigenvalue {lam:.3e})")

    @cached_property
    def alpha(self) -> np.ndarray:
        L, _ = self.factor
        return cho_solve((L, True), self.data.y)


def posterior(model: GPModel, Xstar) -> Posterior:
    """Predictive mean K*X Q^-1 y and covariance K** - K*X Q^-1 KX* of f at Xstar."""
    L, _ = model.factor
    Ks = cross_gram(model.spec, model.hp, Xstar, model.data.X)
    Kss = gram(model.spec, model.hp, Xstar).values
    mean = Ks @ model.alpha
    V = solve_triangular(L, Ks.T, lower=True)
    cov = Kss - V.T @ V
    cov = 0.5 * (cov + cov.T)
    d = np.diag(cov).copy()
    tol = VARIANCE_TOL * max(1.0, float(np.max(np.abs(np.diag(Kss)))))
    if np.any(d < -tol):
        raise NonPSDError(f"negative posterior variance {d.min():.3e}")
    neg = d < 0
    if np.any(neg):
        cov[neg, neg] = 0.0
    return Posterior(mean, cov)


def log_marginal_likelihood(model: GPModel) -> float:
    L, _ = model.factor
    y = model.data.y
    return float(-0.5 * y @ model.alpha - np.sum(np.log(np.diag(L)))
                 - 0.5 * len(y) * math.log(2 * math.pi))


def r2_score(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or truth.size < 2:
        raise ValueError("r2_score needs two equal-length arrays of at least two values")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for a constant target")
    return float(1.0 - np.sum((pred - truth) ** 2) / ss_tot)


# -- optimisation ---------------------------------------------------------------

def maximize(objective, bounds, log_scale, restarts: int = 4, seed: int = 0,
             starts=(), maxiter: int | None = None, simplex_scale: float = 0.02):
    """Multi-start bounded Nelder-Mead maximisation.

    Parameters flagged in ``log_scale`` are searched in log space. Start
    points are the box centre, then any explicit ``starts``, then
    ``restarts`` points drawn uniformly in the (log-)box from one generator,
    so a larger ``restarts`` extends the same sequence. The initial simplex
    spans ``simplex_scale`` of each (log-)box edge, which keeps a single
    start local. Returns
    ``(x, value)`` for the best start; ties keep the earliest start.
    """
    bounds = np.asarray(bounds, dtype=float)
    log_scale = np.asarray(log_scale, dtype=bool)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("bounds must be finite (lo, hi) pairs with lo < hi")
    if np.any(bounds[log_scale, 0] <= 0):
        raise ValueError("log-scaled parameters need positive bounds")
    lo = np.where(log_scale, np.log(np.where(log_scale, bounds[:, 0], 1.0)), bounds[:, 0])
    hi = np.where(log_scale, np.log(np.where(log_scale, bounds[:, 1], 1.0)), bounds[:, 1])

    def to_x(z):
        return np.clip(np.where(log_scale, np.exp(np.where(log_scale, z, 0.0)), z),
                       bounds[:, 0], bounds[:, 1])

    def to_z(x):
        x = np.clip(np.asarray(x, dtype=float), bounds[:, 0], bounds[:, 1])
        return np.where(log_scale, np.log(np.where(log_scale, x, 1.0)), x)

    def loss(z):
        try:
            val = objective(to_x(z))
        except (ArithmeticError, np.linalg.LinAlgError):
            return np.inf
        return -val if np.isfinite(val) else np.inf

    rng = np.random.default_rng(seed)
    z0s = [0.5 * (lo + hi)] + [to_z(s) for s in starts]
    z0s += [rng.uniform(lo, hi) for _ in range(restarts)]

    dim = len(lo)
    opts = {"xatol": 1e-7, "fatol": 1e-9, "maxiter": maxiter or 400 * dim,
            "maxfev": maxiter or 400 * dim, "adaptive": dim > 3}
    zb = list(zip(lo, hi))
    best_z, best_f = None, np.inf
    step = simplex_scale * (hi - lo)

    def simplex(z0):
        # step towards the interior so no vertex starts outside the box
        sign = np.where(z0 + step <= hi, 1.0, -1.0)
        return np.vstack([z0] + [z0 + np.eye(dim)[k] * sign * step for k in range(dim)])

    for z0 in z0s:
        f0 = loss(z0)
        res = minimize(loss, z0, method="Nelder-Mead", bounds=zb,
                       options=dict(opts, initial_simplex=simplex(z0)))
        z, f = (res.x, res.fun) if res.fun <= f0 else (z0, f0)
        if f < best_f:
            best_z, best_f = z, f
    if best_z is None:
        raise OptimizationError("every optimisation start failed")
    # one polishing pass restarts the simplex around the incumbent
    res = minimize(loss, best_z, method="Nelder-Mead", bounds=zb,
                   options=dict(opts, initial_simplex=simplex(best_z)))
    if res.fun < best_f:
        best_z, best_f = res.x, res.fun
    return to_x(best_z), -best_f


def hyperparam_bounds(spec: KernelSpec, bounds: dict, discrepancy: bool = False):
    """Flatten a bounds mapping into (names, [(lo, hi)], log_scale) for ``spec``.

    ``bounds`` has keys ``s``, ``c`` (one pair or one per dimension), ``d``
    and ``sigma_d``; s and c are searched in log space.
    """
    names, box, logs = ["s"], [tuple(bounds["s"])], [True]
    if spec.family != "external":
        cb = bounds["c"]
        per_dim = cb if np.ndim(cb) == 2 else [cb] * spec.dims
        for i in range(spec.dims):
            names.append(f"c{i}")
            box.append(tuple(per_dim[i]))
            logs.append(True)
    if spec.family == "squeezed":
        for k in range(len(spec.pairs)):
            names.append(f"d{k}")
            box.append(tuple(bounds["d"]))
            logs.append(False)
    if discrepancy:
        names.append("sigma_d")
        box.append(tuple(bounds["sigma_d"]))
        logs.append(False)
    return names, box, logs


def _vector_to_hp(spec: KernelSpec, names, x) -> Hyperparams:
    vals = dict(zip(names, x))
    c = tuple(vals[n] for n in names if n.startswith("c"))
    d = tuple(vals[n] for n in names if n.startswith("d"))
    return Hyperparams(vals["s"], c, d, vals.get("sigma_d"))


def _hp_to_vector(names, hp: Hyperparams):
    out = []
    for n in names:
        if n == "s":
            out.append(hp.s)
        elif n == "sigma_d":
            out.append(hp.sigma_d if hp.sigma_d is not None else 0.0)
        elif n.startswith("c"):
            out.append(hp.c[int(n[1:])])
        else:
            out.append(hp.d[int(n[1:])] if hp.d else 0.0)
    return out


def optimize(spec: KernelSpec, data: Dataset, bounds: dict, restarts: int = 4,
             seed: int = 0, discrepancy: bool = False, starts=(),
             maxiter: int | None = None) -> Hyperparams:
    """Maximise the log marginal likelihood over the hyperparameter box.

    ``starts`` are extra initial Hyperparams (e.g. a coherent optimum with
    zero squeezing); missing couplings are taken as zero.
    """
    names, box, logs = hyperparam_bounds(spec, bounds, discrepancy)

    def objective(x):
        model = GPModel(spec, _vector_to_hp(spec, names, x), data, discrepancy)
        return log_marginal_likelihood(model)

    x0s = [_hp_to_vector(names, h) for h in starts]
    x, _ = maximize(objective, box, logs, restarts, seed, x0s, maxiter)
    return _vector_to_hp(spec, names, x)


def with_hyperparams(model: GPModel, hp: Hyperparams) -> GPModel:
    return replace(model, hp=hp)
