"""Experiment harnesses: 1-D regression, car-on-hill dynamics regression,
GP-based reinforcement learning and emulated-hardware regression.

Every random draw is derived from one integer seed through
:func:`derive_seed`, so datasets, optimizer restarts and rollouts can be
reproduced independently of each other.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .gp import (Dataset, GPError, GPModel, Posterior, log_marginal_likelihood, optimize,
                 posterior, r2_score)
from .kernels import (GramMatrix, Hyperparams, KernelSpec, cross_gram, emulate_hardware_gram,
                      gram, nearest_psd)

__all__ = [
    "TARGETS",
    "derive_seed",
    "gen_1d",
    "RegressionResult",
    "run_regression1d",
    "HillConfig",
    "hill_step",
    "gen_dynamics",
    "DynamicsSet",
    "run_dynamics",
    "Policy",
    "Episode",
    "InstabilityError",
    "rl_train",
    "rl_rollout",
    "HardwareResult",
    "run_hardware_regression",
    "save_dataset",
    "load_dataset",
]


def _f1(x):
    return x * np.sin(0.65 * x / (1 + 0.1 * x)) * np.cos(np.sin(x))


def _f2(x):
    return 0.65 * x / (1 + 0.1 * x)


TARGETS = {
    "xsinx": lambda x: x * np.sin(x),
    "f1": _f1,
    "f2": _f2,
}

BOUNDS_1D = {"s": (1e-2, 1e2), "c": (1e-3, 1e3)}
BOUNDS_DYNAMICS = {"s": (1e-4, 1e4), "c": (1e-3, 1e2), "d": (0.0, 19.999)}
BOUNDS_HARDWARE = {"s": (1e-2, 1e2), "sigma_d": (1e-3, 1e3)}


def derive_seed(seed: int, *keys: str) -> int:
    """Child seed for the stream named by ``keys``; independent of call order."""
    spawn = tuple(zlib.crc32(k.encode()) for k in keys)
    return int(np.random.SeedSequence(int(seed), spawn_key=spawn).generate_state(1)[0])


def _target(func):
    if callable(func):
        return func
    try:
        return TARGETS[func]
    except KeyError:
        raise ValueError(f"unknown target function {func!r}; choose from {sorted(TARGETS)}")


# -- 1-D regression -------------------------------------------------------------

def gen_1d(func, n_train: int = 40, seed: int = 0, n_test: int = 100):
    """Noisy training grid on [0.1, 19.9] and a noiseless test grid on [0, 20].

    Noise variances are drawn from U[0, 1] and kept in the dataset.
    """
    if n_train < 2:
        raise ValueError("n_train must be at least 2")
    f = _target(func)
    rng = np.random.default_rng(seed)
    x = np.linspace(0.1, 19.9, n_train)
    sigma2 = rng.uniform(0.0, 1.0, n_train)
    y = f(x) + rng.normal(0.0, np.sqrt(sigma2))
    xt = np.linspace(0.0, 20.0, n_test)
    return Dataset(x, y, sigma2), Dataset(xt, f(xt), np.zeros(n_test))


@dataclass(frozen=True)
class RegressionResult:
    kernel: str
    hp: Hyperparams
    lml: float
    r2: float
    bounds: dict
    seed: int
    train: Dataset
    test: Dataset
    post: Posterior = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "hyperparams": self.hp.to_dict(),
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "lml": self.lml,
            "r2": self.r2,
            "seed": self.seed,
            "n_train": self.train.n,
            "n_test": self.test.n,
        }


def run_regression1d(func, kernel: str, seed: int = 0, n_train: int = 40,
                     bounds: dict | None = None, restarts: int = 4) -> RegressionResult:
    bounds = dict(bounds or BOUNDS_1D)
    train, test = gen_1d(func, n_train, derive_seed(seed, "data"))
    spec = KernelSpec.from_label(kernel)
    hp = optimize(spec, train, bounds, restarts=restarts, seed=derive_seed(seed, "optimizer"))
    model = GPModel(spec, hp, train)
    post = posterior(model, test.X)
    return RegressionResult(spec.label, hp, log_marginal_likelihood(model),
                            r2_score(post.mean, test.y), bounds, seed, train, test, post)


# -- car on a hill --------------------------------------------------------------

@dataclass(frozen=True)
class HillConfig:
    """Mountain-car style environment; the surface height is sin(freq x) / freq.

    ``d`` and ``v`` bound the sampling box for positions and velocities;
    accelerations are sampled in [-v^2/d, v^2/d].
    """

    d: float = 1.2
    v: float = 0.07
    force: float = 1.0
    gravity: float = 0.0025
    freq: float = 3.0
    dt: float = 1.0
    actions: tuple[float, ...] = (-0.0015, 0.0, 0.0015)
    goal: tuple[float, float] = (0.45, 0.75)
    discount: float = 0.95
    noise: float = 1e-6
    grid: int = 20
    value_c: tuple[float, float] = (0.2, 0.012)
    value_noise: float = 0.05

    def __post_init__(self):
        if self.d <= 0 or self.v <= 0 or self.dt <= 0:
            raise ValueError("d, v and dt must be positive")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not self.actions:
            raise ValueError("the action set is empty")
        if self.goal[0] >= self.goal[1]:
            raise ValueError("goal region must have lo < hi")

    @property
    def a_max(self) -> float:
        return self.v ** 2 / self.d

    @property
    def x_clamp(self) -> float:
        return 1.5 * self.d

    @property
    def valley(self) -> float:
        return -math.pi / (2 * self.freq)

    def in_goal(self, x):
        return (x >= self.goal[0]) & (x <= self.goal[1])

    def reward(self, x):
        return np.where(self.in_goal(x), 1.0, 0.0)


def hill_step(cfg: HillConfig, x, v, a, clamp: bool = False):
    """One step: v' = v + dt (F a - G cos(w x)), x' = x + dt v'.

    With ``clamp`` the position is held inside +-1.5 d and the velocity is
    zeroed when the car hits the edge.
    """
    v2 = v + cfg.dt * (cfg.force * a - cfg.gravity * np.cos(cfg.freq * x))
    x2 = x + cfg.dt * v2
    if clamp:
        hit = np.abs(x2) > cfg.x_clamp
        x2 = np.clip(x2, -cfg.x_clamp, cfg.x_clamp)
        v2 = np.where(hit, 0.0, v2)
    return x2, v2


def gen_dynamics(cfg: HillConfig, n: int = 128, seed: int = 0):
    """(next-x, next-v) datasets on uniform (x, v, a) samples from the box."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    X = np.column_stack([
        rng.uniform(-cfg.d, cfg.d, n),
        rng.uniform(-cfg.v, cfg.v, n),
        rng.uniform(-cfg.a_max, cfg.a_max, n),
    ])
    x2, v2 = hill_step(cfg, X[:, 0], X[:, 1], X[:, 2])
    noise = np.full(n, cfg.noise)
    return Dataset(X, x2, noise), Dataset(X, v2, noise)


@dataclass(frozen=True)
class DynamicsSet:
    index: int
    kernel: str
    target: str
    hp: Hyperparams
    lml: float
    r2: float


def _fit_dynamics(spec, train, test, bounds, restarts, seed, starts=(), maxiter=None):
    hp = optimize(spec, train, bounds, restarts=restarts, seed=seed, starts=starts,
                  maxiter=maxiter)
    model = GPModel(spec, hp, train)
    r2 = r2_score(posterior(model, test.X).mean, test.y)
    return hp, log_marginal_likelihood(model), r2


def run_dynamics(cfg: HillConfig | None = None, kernels=("coherent", "squeezed"),
                 sets: int = 10, n: int = 128, n_test: int = 200, seed: int = 0,
                 restarts: int = 0, targets=("x", "v"), bounds: dict | None = None,
                 maxiter: int | None = 600):
    """Fit every kernel to ``sets`` independent dynamics datasets.

    A squeezed fit always includes the coherent optimum with zero couplings
    among its starting points, so its likelihood cannot fall below it.
    """
    cfg = cfg or HillConfig()
    bounds = dict(bounds or BOUNDS_DYNAMICS)
    rows = []
    for k in range(sets):
        tr = dict(zip("xv", gen_dynamics(cfg, n, derive_seed(seed, "dynamics", str(k)))))
        te = dict(zip("xv", gen_dynamics(cfg, n_test, derive_seed(seed, "dyntest", str(k)))))
        for t in targets:
            best = {}
            for label in kernels:
                spec = KernelSpec.from_label(label, dims=3)
                starts = ()
                if spec.family == "squeezed" and "coherent" in best:
                    h = best["coherent"]
                    starts = (Hyperparams(h.s, h.c, (0.0,) * len(spec.pairs)),)
                opt_seed = derive_seed(seed, "dynopt", str(k), t, spec.label)
                hp, lml, r2 = _fit_dynamics(spec, tr[t], te[t], bounds, restarts, opt_seed,
                                            starts, maxiter)
                best[spec.label] = hp
                rows.append(DynamicsSet(k, spec.label, t, hp, lml, r2))
    return rows


# -- reinforcement learning -----------------------------------------------------

class InstabilityError(GPError):
    pass


@dataclass(frozen=True)
class Episode:
    trajectory: tuple[tuple[float, float, float, float], ...]
    reached_goal: bool
    steps_to_goal: int | None
    holding: int

    def records(self):
        for t, (x, v, a, r) in enumerate(self.trajectory):
            yield {"step": t, "x": x, "v": v, "action": a, "reward": r}


def _value_spec(spec: KernelSpec) -> KernelSpec:
    # the squeezed family is three-dimensional only; its d=0 limit is coherent
    if spec.family == "squeezed":
        return KernelSpec("coherent", 2)
    return KernelSpec(spec.family, 2, spec.levels, spec.steps, spec.cap)


@dataclass(frozen=True, eq=False)
class Policy:
    """Greedy policy over GP dynamics means and a GP value function."""

    cfg: HillConfig
    spec: KernelSpec
    models: tuple[GPModel, GPModel]
    support: np.ndarray
    value_weights: np.ndarray
    values: np.ndarray
    iterations: int

    def predict(self, x, v, a):
        X = np.column_stack(np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(v),
                                                np.atleast_1d(a)))
        out = []
        for m in self.models:
            out.append(cross_gram(m.spec, m.hp, X, m.data.X) @ m.alpha)
        return out[0], out[1]

    def value(self, x, v):
        S = np.column_stack(np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(v)))
        vspec = _value_spec(self.spec)
        return cross_gram(vspec, _value_hp(self.cfg), S, self.support) @ self.value_weights

    def q_values(self, x, v):
        q = []
        for a in self.cfg.actions:
            xn, vn = self.predict(x, v, a)
            q.append(self.cfg.reward(xn) + self.cfg.discount * self.value(xn, vn))
        return np.array(q)

    def __call__(self, x, v) -> float:
        return float(self.cfg.actions[int(np.argmax(self.q_values(x, v)[:, 0]))])


def _value_hp(cfg: HillConfig) -> Hyperparams:
    return Hyperparams(1.0, cfg.value_c)


def _support_grid(cfg: HillConfig) -> np.ndarray:
    xs = np.linspace(-cfg.d, cfg.d, cfg.grid)
    vs = np.linspace(-cfg.v, cfg.v, cfg.grid)
    X, V = np.meshgrid(xs, vs, indexing="ij")
    return np.column_stack([X.ravel(), V.ravel()])


def value_iteration(rewards, transfers, discount: float, iters: int, tol: float = 1e-6,
                    limit: float = 1e6):
    """V <- max_a (r_a + discount * A_a V) from V = 0.

    Returns (V, sweeps). Raises InstabilityError when |V| exceeds ``limit``.
    """
    V = np.zeros(transfers[0].shape[1])
    for sweep in range(1, iters + 1):
        Vn = np.max([r + discount * (A @ V) for r, A in zip(rewards, transfers)], axis=0)
        if not np.all(np.isfinite(Vn)) or np.max(np.abs(Vn)) > limit:
            raise InstabilityError(f"value iteration diverged after {sweep} sweeps")
        delta = np.max(np.abs(Vn - V))
        V = Vn
        if delta < tol:
            return V, sweep
    return V, iters


def rl_train(cfg: HillConfig | None = None, spec: KernelSpec | str = "coherent",
             iters: int = 500, seed: int = 0, n: int = 128, restarts: int = 2,
             bounds: dict | None = None, maxiter: int | None = 600) -> Policy:
    """Fit the dynamics GPs, then run value iteration on the support grid."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    cfg = cfg or HillConfig()
    if isinstance(spec, str):
        spec = KernelSpec.from_label(spec, dims=3)
    bounds = dict(bounds or BOUNDS_DYNAMICS)
    data = gen_dynamics(cfg, n, derive_seed(seed, "rl", "dynamics"))
    models = []
    for t, ds in zip("xv", data):
        hp = optimize(spec, ds, bounds, restarts=restarts,
                      seed=derive_seed(seed, "rl", "optimizer", t), maxiter=maxiter)
        models.append(GPModel(spec, hp, ds))

    S = _support_grid(cfg)
    vspec = _value_spec(spec)
    vhp = _value_hp(cfg)
    K = gram(vspec, vhp, S).values
    L = cholesky(K + cfg.value_noise * np.eye(len(S)), lower=True)
    proto = Policy(cfg, spec, tuple(models), S, np.zeros(len(S)), np.zeros(len(S)), 0)

    rewards, transfers = [], []
    for a in cfg.actions:
        xn, vn = proto.predict(S[:, 0], S[:, 1], a)
        Ks = cross_gram(vspec, vhp, np.column_stack([xn, vn]), S)
        rewards.append(cfg.reward(xn))
        transfers.append(cho_solve((L, True), Ks.T).T)
    V, sweeps = value_iteration(rewards, transfers, cfg.discount, iters)
    weights = cho_solve((L, True), V)
    return Policy(cfg, spec, tuple(models), S, weights, V, sweeps)


def rl_rollout(policy, cfg: HillConfig | None = None, steps: int = 500,
               seed: int = 0, jitter: float = 0.05) -> Episode:
    """Drive the true dynamics from rest near the valley floor.

    ``policy`` is any callable (x, v) -> action; the starting position is the
    valley plus a uniform offset of at most ``jitter`` drawn from ``seed``.
    """
    cfg = cfg or getattr(policy, "cfg", None) or HillConfig()
    rng = np.random.default_rng(derive_seed(seed, "rollout"))
    x = cfg.valley + rng.uniform(-jitter, jitter)
    v = 0.0
    traj = []
    first = None
    holding = 0
    for t in range(steps):
        a = float(policy(x, v))
        x, v = hill_step(cfg, x, v, a, clamp=True)
        x, v = float(x), float(v)
        r = float(cfg.reward(x))
        traj.append((x, v, a, r))
        if r > 0:
            holding += 1
            if first is None:
                first = t + 1
    return Episode(tuple(traj), first is not None, first, holding)


# -- emulated hardware regression -----------------------------------------------

@dataclass(frozen=True)
class HardwareResult:
    simulated: GramMatrix
    emulated: GramMatrix
    hp: Hyperparams
    lml: float
    r2: float
    coverage: float
    train: Dataset
    test: Dataset
    post: Posterior = field(repr=False)


def run_hardware_regression(func="xsinx", kernel: str = "CQ-4-t3", c: float = 2.225,
                            seed: int = 0, shots: int = 8192, floor_rate: float = 0.04,
                            background: float = 0.5, restarts: int = 4,
                            bounds: dict | None = None,
                            project: bool = True) -> HardwareResult:
    """Regression on a shot-emulated Gram matrix with a discrepancy term.

    The joint train+test Gram is evaluated once at s = 1 and fixed ``c``;
    afterwards only s and sigma_d are optimised. With ``project`` the
    emulated matrix is made positive semidefinite before it is ingested.
    """
    bounds = dict(bounds or BOUNDS_HARDWARE)
    train, test = gen_1d(func, seed=derive_seed(seed, "data"))
    spec = KernelSpec.from_label(kernel)
    X = np.concatenate([train.X[:, 0], test.X[:, 0]])
    sim = gram(spec, Hyperparams(1.0, (c,)), X)
    emu = emulate_hardware_gram(sim, shots=shots, floor_rate=floor_rate,
                                seed=derive_seed(seed, "shots"), background=background)
    ext = KernelSpec("external", source=nearest_psd(emu) if project else emu)
    idx_train = np.arange(train.n, dtype=float)
    idx_test = np.arange(train.n, train.n + test.n, dtype=float)
    data = Dataset(idx_train, train.y, train.sigma2)
    hp = optimize(ext, data, bounds, restarts=restarts, seed=derive_seed(seed, "optimizer"),
                  discrepancy=True)
    model = GPModel(ext, hp, data, discrepancy=True)
    post = posterior(model, idx_test)
    lo, hi = post.band()
    coverage = float(np.mean((test.y >= lo) & (test.y <= hi)))
    return HardwareResult(sim, emu, hp, log_marginal_likelihood(model),
                          r2_score(post.mean, test.y), coverage, train, test, post)


# -- dataset CSV ------------------------------------------------------------------

def save_dataset(ds: Dataset, path):
    """CSV with header ``x1,...,xD,y,sigma2``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(ds.dims)] + ["y", "sigma2"])
        for x, y, s2 in zip(ds.X, ds.y, ds.sigma2):
            w.writerow([format(v, ".17g") for v in (*x, y, s2)])
    return path


def load_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header, body = rows[0], [r for r in rows[1:] if r]
    dims = len(header) - 2
    expect = [f"x{k + 1}" for k in range(dims)] + ["y", "sigma2"]
    if dims < 1 or [h.strip() for h in header] != expect:
        raise ValueError(f"{path}: header must be x1,...,xD,y,sigma2")
    if not body or any(len(r) != dims + 2 for r in body):
        raise ValueError(f"{path}: ragged or empty dataset")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric cell") from exc
    return Dataset(arr[:, :dims], arr[:, dims], arr[:, dims + 1])
