"""Numbered acceptance criteria; each test records one PASS/FAIL summary line."""

import math
import time
import warnings
from functools import lru_cache

import numpy as np
import pytest

from qkgp.fock import displacement_unitary, ladder, pair_state_oracle, overlap, vacuum_amplitude
from qkgp.gp import (Dataset, GPError, GPModel, log_marginal_likelihood, optimize, posterior,
                     r2_score)
from qkgp.kernels import (Hyperparams, KernelSpec, dim_kernel_analytic, dim_kernel_finite,
                          eval_kernel, gram, squeezed_pair_overlap)
from qkgp.pauli import (_cached_decompose, echo_probability, pauli_decompose, trotter_evolve)
from qkgp.tasks import (BOUNDS_1D, HillConfig, derive_seed, gen_1d, rl_rollout, rl_train,
                        run_dynamics, run_hardware_regression)

SEED = 0


# -- 1 ------------------------------------------------------------------------------

def test_criterion_01_pauli_reconstruction(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for N in (2, 4, 8, 16):
        b = ladder(N)
        worst = max(worst, np.max(np.abs(pauli_decompose(N).to_dense() - 1j * (b - b.conj().T))))
    coeffs = {t.symbols: t.coefficient for t in pauli_decompose(4).terms}
    want = sorted([(1 + math.sqrt(3)) / 2, (1 - math.sqrt(3)) / 2,
                   math.sqrt(2) / 2, -math.sqrt(2) / 2])
    coef_err = max(abs(a - b) for a, b in zip(sorted(coeffs.values()), want))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and len(coeffs) == 4 and coef_err <= 1e-12 and elapsed < 1
    assert acceptance(1, ok, f"max recon err {worst:.1e}, N=4 coef err {coef_err:.1e}, "
                             f"{elapsed:.2f}s")


# -- 2 ------------------------------------------------------------------------------

def test_criterion_02_squared_exponential(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    spec = KernelSpec("coherent", 3)
    worst = 0.0
    for _ in range(1000):
        x, xp = rng.uniform(-5, 5, 3), rng.uniform(-5, 5, 3)
        c = rng.uniform(0.2, 5, 3)
        k = eval_kernel(spec, Hyperparams(1.0, tuple(c)), x, xp)
        worst = max(worst, abs(k - math.exp(-np.sum((x - xp) ** 2 / (2 * c ** 2)))))
    elapsed = time.perf_counter() - t0
    assert acceptance(2, worst <= 1e-12 and elapsed < 1,
                      f"1000 pairs, max err {worst:.1e}, {elapsed:.2f}s")


# -- 3 ------------------------------------------------------------------------------

def test_criterion_03_truncation_convergence(acceptance):
    t0 = time.perf_counter()
    r = np.linspace(0, 2, 100)
    exact = dim_kernel_analytic(r, 0.0, 1.0)
    errs = {N: np.max(np.abs(dim_kernel_finite(r, 0.0, 1.0, N) - exact)) for N in (4, 8, 16, 32)}
    seq = [errs[N] for N in (4, 8, 16, 32)]
    # successive errors compared at the double-precision tolerance floor
    monotone = all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))
    elapsed = time.perf_counter() - t0
    ok = errs[32] <= 1e-6 and monotone and elapsed < 5
    assert acceptance(3, ok, "max err N=4/8/16/32: " + ", ".join(f"{e:.1e}" for e in seq)
                      + f", {elapsed:.2f}s")


# -- 4 ------------------------------------------------------------------------------

STEPS = (1, 2, 3, 8, 50)


def test_criterion_04_trotter_convergence(acceptance):
    t0 = time.perf_counter()
    theta = np.linspace(0.1, 2.0, 50)
    exact = np.abs(vacuum_amplitude(4, theta)) ** 2
    errs = [np.max(np.abs(echo_probability(4, theta, k) - exact)) for k in STEPS]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    slope = -np.polyfit(np.log(STEPS), np.log(errs), 1)[0]
    elapsed = time.perf_counter() - t0
    ok = decreasing and 0.8 <= slope <= 1.2 and elapsed < 10
    assert acceptance(4, ok, f"echo error decreasing={decreasing}, log-log slope {slope:.3f} "
                             f"(want 0.8..1.2), {elapsed:.2f}s")


def test_trotter_state_error_is_first_order():
    # the full state converges at first order even though the echo observable does not
    theta = np.linspace(0.1, 2.0, 50)
    exact = np.array([displacement_unitary(4, t)[:, 0] for t in theta])
    errs = [np.max(np.linalg.norm(trotter_evolve(_cached_decompose(4), theta, k) - exact,
                                  axis=1)) for k in STEPS]
    slope = -np.polyfit(np.log(STEPS), np.log(errs), 1)[0]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert 0.8 <= slope <= 1.2


# -- 5 ------------------------------------------------------------------------------

def _series_vs_oracle(cap, points=200, seed=SEED):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        a = rng.uniform(-2, 2, 4)
        g = rng.uniform(-0.5, 0.5, 2)
        series = squeezed_pair_overlap(a[0], a[1], g[0], a[2], a[3], g[1], cap=cap)
        dense = overlap(pair_state_oracle(40, a[2], a[3], g[1]),
                        pair_state_oracle(40, a[0], a[1], g[0]))
        worst = max(worst, abs(series - dense))
    return worst


def test_criterion_05_squeezed_series(acceptance):
    t0 = time.perf_counter()
    worst = _series_vs_oracle(cap=8)
    rng = np.random.default_rng(SEED + 1)
    X = rng.uniform(-2, 2, (30, 3))
    c = (0.8, 1.3, 2.0)
    sq = gram(KernelSpec("squeezed", 3), Hyperparams(1.0, c, (0.0, 0.0, 0.0)), X).values
    co = gram(KernelSpec("coherent", 3), Hyperparams(1.0, c), X).values
    d0 = np.max(np.abs(sq - co))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and d0 <= 1e-8 and elapsed < 30
    assert acceptance(5, ok, f"cap-8 series vs oracle max err {worst:.1e} (want 1e-6), "
                             f"d=0 vs coherent {d0:.1e}, {elapsed:.2f}s")


def test_squeezed_series_converges_with_larger_cap():
    assert _series_vs_oracle(cap=16, points=50) <= 1e-6


# -- 6 ------------------------------------------------------------------------------

def test_criterion_06_gp_identities(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    spec = KernelSpec("coherent")
    x = np.sort(rng.uniform(0, 10, 15))
    exact = Dataset(x, np.sin(x), np.zeros(15))
    hp = Hyperparams(2.0, (1.2,))
    interp = np.max(np.abs(posterior(GPModel(spec, hp, exact), x).mean - exact.y))

    noisy = Dataset(x, np.sin(x) + rng.normal(0, 0.1, 15), rng.uniform(0, 0.3, 15))
    xt = np.linspace(-1, 11, 40)
    plain = posterior(GPModel(spec, hp, noisy), xt)
    disc_model = GPModel(spec, Hyperparams(2.0, (1.2,), sigma_d=0.0), noisy, discrepancy=True)
    disc = posterior(disc_model, xt)
    bitwise = (np.array_equal(plain.mean, disc.mean) and np.array_equal(plain.cov, disc.cov)
               and log_marginal_likelihood(GPModel(spec, hp, noisy))
               == log_marginal_likelihood(disc_model))
    var_ok = bool(np.all(np.diag(plain.cov) <= hp.s + 1e-12))
    elapsed = time.perf_counter() - t0
    ok = interp <= 1e-8 and bitwise and var_ok and elapsed < 5
    assert acceptance(6, ok, f"interp err {interp:.1e}, sigma_d=0 bitwise={bitwise}, "
                             f"var<=prior={var_ok}, {elapsed:.2f}s")


# -- 7 and 8 ----------------------------------------------------------------------

TABULATED_ROWS = {
    "xsinx": [("coherent", 100, 1.764), ("C-2", 59.43, 1.379), ("C-4", 100, 1.085),
              ("C-8", 100, 2.921), ("C-16", 100, 2.040), ("CQ-4-t1", 58.73, 1.379),
              ("CQ-4-t2", 18.85, 3.7), ("CQ-4-t3", 95.7, 2.225), ("CQ-4-t4", 69.82, 2.029)],
    "f1": [("coherent", 30.74, 1.384), ("C-8", 100, 10.76), ("C-16", 100, 1.926),
           ("C-32", 31.15, 1.382), ("CQ-16-t4", 100, 10.73), ("CQ-16-t5", 100, 10.74),
           ("CQ-16-t6", 92.89, 1.772)],
    "f2": [("coherent", 11.89, 17.87), ("C-2", 10.28, 16.21), ("CQ-2-t1", 10.94, 16.42)],
}


@lru_cache(maxsize=None)
def _fit(func, label):
    """Optimised hyperparameters with the same seeds as run_regression1d."""
    train, test = gen_1d(func, seed=derive_seed(SEED, "data"))
    spec = KernelSpec.from_label(label)
    hp = optimize(spec, train, BOUNDS_1D, restarts=4, seed=derive_seed(SEED, "optimizer"))
    return spec, hp, train, test


def _r2(func, label):
    spec, hp, train, test = _fit(func, label)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return r2_score(posterior(GPModel(spec, hp, train), test.X).mean, test.y)


@pytest.mark.slow
def test_criterion_07_regression_reproduction(acceptance):
    t0 = time.perf_counter()
    r2 = {k: _r2("xsinx", k) for k in ("C-4", "C-8", "C-16", "CQ-4-t3", "C-2", "CQ-4-t1")}
    r2_f2 = _r2("f2", "C-2")
    good = [k for k in ("C-4", "C-8", "C-16", "CQ-4-t3") if r2[k] >= 0.95]
    weak = [k for k in ("C-2", "CQ-4-t1") if r2[k] <= r2["C-4"] - 0.2]
    elapsed = time.perf_counter() - t0
    ok = len(good) == 4 and len(weak) == 2 and r2_f2 >= 0.95 and elapsed < 300
    detail = ", ".join(f"{k} {v:.4f}" for k, v in r2.items())
    assert acceptance(7, ok, f"xsinx R2: {detail}; f2 C-2 {r2_f2:.4f}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_08_tabulated_baselines(acceptance):
    t0 = time.perf_counter()
    short = []
    rows = 0
    for func, table in TABULATED_ROWS.items():
        for label, s, c in table:
            spec, hp, train, _ = _fit(func, label)
            got = log_marginal_likelihood(GPModel(spec, hp, train))
            try:
                base = log_marginal_likelihood(GPModel(spec, Hyperparams(s, (c,)), train))
            except GPError:
                base = -math.inf
            rows += 1
            if got < base - 1e-6:
                short.append(f"{func}/{label} {got:.3f}<{base:.3f}")
    elapsed = time.perf_counter() - t0
    ok = not short and elapsed < 600
    assert acceptance(8, ok, f"{rows - len(short)}/{rows} rows at or above the tabulated "
                             f"LML{'; ' + ', '.join(short) if short else ''}; {elapsed:.0f}s")


# -- 9 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_nesting(acceptance):
    t0 = time.perf_counter()
    rows = run_dynamics(HillConfig(), kernels=("coherent", "squeezed"), sets=10,
                        seed=SEED, targets=("v",))
    by = {(r.kernel, r.index): r for r in rows}
    idx = sorted({r.index for r in rows})
    nested = [by["squeezed", i].lml >= by["coherent", i].lml - 1e-9 for i in idx]
    r2_sq = np.mean([by["squeezed", i].r2 for i in idx])
    r2_co = np.mean([by["coherent", i].r2 for i in idx])
    elapsed = time.perf_counter() - t0
    ok = len(idx) == 10 and all(nested) and r2_sq >= r2_co - 0.005 and elapsed < 1800
    assert acceptance(9, ok, f"squeezed LML >= coherent on {sum(nested)}/{len(idx)} sets, "
                             f"mean v R2 {r2_sq:.6f} vs {r2_co:.6f}, {elapsed:.0f}s")


# -- 10 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_hardware_emulation(acceptance):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_hardware_regression(seed=SEED)
    sim, emu = res.simulated.values, res.emulated.values
    diag = float(np.mean(np.diag(emu)))
    far = (sim > 1e-4) & (sim < 3e-4)
    lifted = float(np.mean(emu[far]))
    elapsed = time.perf_counter() - t0
    ok = (abs(diag - 0.98) <= 0.01 and abs(lifted - 0.02) <= 0.005 and res.coverage >= 0.9
          and elapsed < 120)
    assert acceptance(10, ok, f"diag mean {diag:.4f}, far pairs ({int(far.sum())}) "
                              f"{np.mean(sim[far]):.1e} -> {lifted:.4f}, band coverage "
                              f"{res.coverage:.2f}, R2 {res.r2:.3f}, {elapsed:.0f}s")


# -- 11 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_11_rl(acceptance):
    t0 = time.perf_counter()
    outcome = {}
    for label in ("coherent", "C-16"):
        policy = rl_train(spec=label, seed=SEED)
        ep = rl_rollout(policy, steps=500, seed=SEED)
        outcome[label] = ep.steps_to_goal if ep.reached_goal else None
    elapsed = time.perf_counter() - t0
    ok = all(v is not None for v in outcome.values()) and elapsed < 900
    detail = ", ".join(f"{k} {'step ' + str(v) if v else 'not reached'}"
                       for k, v in outcome.items())
    assert acceptance(11, ok, f"goal reached: {detail}; {elapsed:.0f}s")
