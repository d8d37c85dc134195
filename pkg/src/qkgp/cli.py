"""Command-line front end.

Every subcommand writes its outputs into one directory together with a
``config.txt`` holding the resolved settings as ``key=value`` lines; that
file can be passed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 usage error, 3 numerical or optimisation failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import tasks
from .fock import ladder
from .gp import GPModel, log_marginal_likelihood, posterior
from .kernels import (Hyperparams, KernelSpec, emulate_hardware_gram, gram, save_gram,
                      symmetrize)
from .pauli import pauli_decompose

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_ENV = "QKGP_OUTPUT_DIR"


class UsageError(Exception):
    pass


# -- small writers ------------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _write_config(out: Path, args) -> Path:
    skip = {"config", "func_", "out_dir"}
    lines = [f"command={args.command}"]
    for key in sorted(vars(args)):
        if key in skip or key == "command":
            continue
        val = getattr(args, key)
        if val is None:
            continue
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key}={val}")
    path = out / "config.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or "qkgp-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plots(args):
    if args.no_plot:
        return None
    from . import plotting

    return plotting


# -- subcommands --------------------------------------------------------------------

def cmd_decompose(args) -> int:
    psum = pauli_decompose(args.N)
    bdag = ladder(args.N)
    residual = float(np.max(np.abs(psum.to_dense() - 1j * (bdag - bdag.conj().T))))
    out = Path(args.out) if args.out else _out_dir(args) / f"pauli_N{args.N}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(psum.to_json() + "\n")
    print(f"N={args.N} qubits={psum.qubits} terms={len(psum)} residual={residual:.3e}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_regress1d(args) -> int:
    bounds = {"s": (args.s_lo, args.s_hi), "c": (args.c_lo, args.c_hi)}
    res = tasks.run_regression1d(args.func, args.kernel, seed=args.seed, n_train=args.n_train,
                                 bounds=bounds, restarts=args.restarts)
    out = _out_dir(args)
    stem = f"{args.func}_{res.kernel}_seed{args.seed}"
    _write_json(out / f"{stem}.json", res.to_dict())
    lo, hi = res.post.band()
    x = res.test.X[:, 0]
    _write_csv(out / f"{stem}_predictions.csv", ["x", "mean", "lower", "upper", "truth"],
               zip(x, res.post.mean, lo, hi, res.test.y))
    tasks.save_dataset(res.train, out / f"{stem}_train.csv")
    plotting = _plots(args)
    if plotting:
        plotting.plot_regression(out / f"{stem}_predictions.png", x, res.post.mean, lo, hi,
                                 res.test.y, (res.train.X[:, 0], res.train.y),
                                 title=f"{args.func}, {res.kernel}")
    _write_config(out, args)
    print(f"{res.kernel} on {args.func}: lml={res.lml:.6f} r2={res.r2:.6f}")
    return EXIT_OK


def cmd_dynamics(args) -> int:
    cfg = tasks.HillConfig()
    rows = tasks.run_dynamics(cfg, kernels=tuple(args.kernel), sets=args.sets, n=args.n,
                              seed=args.seed, restarts=args.restarts,
                              targets=tuple(args.targets))
    out = _out_dir(args)
    _write_csv(out / "dynamics_r2.csv", ["set", "kernel", "target", "lml", "r2"],
               [(r.index, r.kernel, r.target, r.lml, r.r2) for r in rows])
    summary, table = [], {}
    for kernel in dict.fromkeys(r.kernel for r in rows):
        for target in args.targets:
            vals = [r.r2 for r in rows if r.kernel == kernel and r.target == target]
            lmls = [r.lml for r in rows if r.kernel == kernel and r.target == target]
            summary.append((kernel, target, float(np.mean(vals)), float(np.std(vals)),
                            float(np.mean(lmls))))
            table[f"{kernel}:{target}"] = vals
    _write_csv(out / "dynamics_summary.csv",
               ["kernel", "target", "mean_r2", "std_r2", "mean_lml"], summary)
    _write_json(out / "dynamics.json", {
        "seed": args.seed, "sets": args.sets, "n_train": args.n,
        "rows": [{"set": r.index, "kernel": r.kernel, "target": r.target, "lml": r.lml,
                  "r2": r.r2, "hyperparams": r.hp.to_dict()} for r in rows],
    })
    plotting = _plots(args)
    if plotting:
        plotting.plot_r2_table(out / "dynamics_r2.png", table, title="dynamics regression")
    _write_config(out, args)
    for kernel, target, mean, std, _ in summary:
        print(f"{kernel:>10s} {target}: mean r2={mean:.6f} std={std:.2e}")
    return EXIT_OK


def cmd_rl(args) -> int:
    cfg = tasks.HillConfig()
    policy = tasks.rl_train(cfg, args.kernel, iters=args.iters, seed=args.seed,
                            restarts=args.restarts)
    ep = tasks.rl_rollout(policy, cfg, steps=args.steps, seed=args.seed)
    out = _out_dir(args)
    stem = f"rl_{policy.spec.label}_seed{args.seed}"
    with open(out / f"{stem}_episode.jsonl", "w") as fh:
        for rec in ep.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_json(out / f"{stem}.json", {
        "kernel": policy.spec.label, "seed": args.seed, "steps": args.steps,
        "reached_goal": ep.reached_goal, "steps_to_goal": ep.steps_to_goal,
        "holding": ep.holding, "value_sweeps": policy.iterations,
        "dynamics_hyperparams": [m.hp.to_dict() for m in policy.models],
    })
    plotting = _plots(args)
    if plotting:
        plotting.plot_episode(out / f"{stem}_episode.png", [r[0] for r in ep.trajectory],
                              cfg.goal, title=policy.spec.label)
    _write_config(out, args)
    status = f"reached the goal after {ep.steps_to_goal} steps" if ep.reached_goal \
        else "never reached the goal"
    print(f"{policy.spec.label}: {status}; {ep.holding} of {args.steps} steps in the goal")
    return EXIT_OK


def cmd_gram(args) -> int:
    data = tasks.load_dataset(args.dataset)
    spec = KernelSpec.from_label(args.kernel, dims=data.dims)
    c = tuple(args.c) if len(args.c) == data.dims else tuple(args.c) * data.dims
    if len(c) != data.dims:
        raise UsageError(f"--c needs 1 or {data.dims} values")
    d = tuple(args.d or ())
    if spec.family == "squeezed" and not d:
        d = (0.0,) * len(spec.pairs)
    hp = Hyperparams(args.s, c, d)
    G = gram(spec, hp, data.X)
    out = _out_dir(args)
    stem = Path(args.dataset).stem + f"_{spec.label}"
    save_gram(G, out / f"{stem}_gram.csv")
    plotting = _plots(args)
    if plotting:
        plotting.plot_gram(out / f"{stem}_gram.png", G.values, title=f"{spec.label} Gram")
    msg = f"{spec.label}: n={G.n} diag mean={np.mean(np.diag(G.values)):.6f}"
    if args.emulate_hw:
        H = emulate_hardware_gram(G, shots=args.shots, floor_rate=args.floor,
                                  seed=args.hw_seed, background=args.background)
        save_gram(H, out / f"{stem}_hw.csv")
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(H.values - G.values) / np.abs(G.values)
        rel = symmetrize(np.where(np.isfinite(rel), rel, np.inf))
        with open(out / f"{stem}_relerr.csv", "w", newline="") as fh:
            for row in rel:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        if plotting:
            plotting.plot_gram(out / f"{stem}_relerr.png", rel, title="relative error",
                               log=True)
        msg += f"; emulated diag mean={np.mean(np.diag(H.values)):.6f}"
    _write_config(out, args)
    print(msg)
    return EXIT_OK


def cmd_hardware(args) -> int:
    res = tasks.run_hardware_regression(args.func, args.kernel, c=args.c[0], seed=args.seed,
                                        shots=args.shots, floor_rate=args.floor,
                                        background=args.background, restarts=args.restarts)
    out = _out_dir(args)
    stem = f"hw_{args.func}_{args.kernel}_seed{args.seed}"
    save_gram(res.emulated, out / f"{stem}_gram.csv")
    lo, hi = res.post.band()
    x = res.test.X[:, 0]
    _write_csv(out / f"{stem}_predictions.csv", ["x", "mean", "lower", "upper", "truth"],
               zip(x, res.post.mean, lo, hi, res.test.y))
    _write_json(out / f"{stem}.json", {
        "kernel": args.kernel, "hyperparams": res.hp.to_dict(), "lml": res.lml, "r2": res.r2,
        "coverage": res.coverage, "seed": args.seed, "n_train": res.train.n,
        "n_test": res.test.n,
    })
    plotting = _plots(args)
    if plotting:
        plotting.plot_regression(out / f"{stem}_predictions.png", x, res.post.mean, lo, hi,
                                 res.test.y, (res.train.X[:, 0], res.train.y),
                                 title=f"{args.kernel}, emulated device")
    _write_config(out, args)
    print(f"{args.kernel} emulated: lml={res.lml:.6f} r2={res.r2:.6f} "
          f"coverage={res.coverage:.3f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _words(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="qkgp", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, plot=True):
        sp.add_argument("--config", help=argparse.SUPPRESS)
        sp.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_ENV} or ./qkgp-out)")
        if plot:
            sp.add_argument("--no-plot", type=_bool, nargs="?", const=True, default=False,
                            help="skip the PNG figures")

    sp = sub.add_parser("decompose", help="Pauli decomposition of i(b^dag - b)")
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--out", help="JSON path (default <out-dir>/pauli_N<N>.json)")
    common(sp, plot=False)
    sp.set_defaults(func_=cmd_decompose)

    sp = sub.add_parser("regress1d", help="one-dimensional regression benchmark")
    sp.add_argument("--func", choices=sorted(tasks.TARGETS), default="xsinx")
    sp.add_argument("--kernel", default="coherent", help="coherent, C-N or CQ-N-tM")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-train", type=int, default=40)
    sp.add_argument("--restarts", type=int, default=4)
    sp.add_argument("--s-lo", type=float, default=1e-2)
    sp.add_argument("--s-hi", type=float, default=1e2)
    sp.add_argument("--c-lo", type=float, default=1e-3)
    sp.add_argument("--c-hi", type=float, default=1e3)
    common(sp)
    sp.set_defaults(func_=cmd_regress1d)

    sp = sub.add_parser("dynamics", help="car-on-hill dynamics regression over many sets")
    sp.add_argument("--kernel", type=_words, default=["coherent", "squeezed"],
                    help="comma-separated kernel labels")
    sp.add_argument("--targets", type=_words, default=["x", "v"])
    sp.add_argument("--sets", type=int, default=10)
    sp.add_argument("--n", type=int, default=128)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--restarts", type=int, default=0)
    common(sp)
    sp.set_defaults(func_=cmd_dynamics)

    sp = sub.add_parser("rl", help="GP reinforcement learning on the hill")
    sp.add_argument("--kernel", default="coherent")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--iters", type=int, default=500)
    sp.add_argument("--restarts", type=int, default=2)
    common(sp)
    sp.set_defaults(func_=cmd_rl)

    sp = sub.add_parser("gram", help="Gram matrix of a dataset CSV")
    sp.add_argument("--kernel", default="coherent")
    sp.add_argument("--dataset", required=True, help="CSV with header x1,...,xD,y,sigma2")
    sp.add_argument("--s", type=float, default=1.0)
    sp.add_argument("--c", type=_floats, default=[1.0], help="one or D comma-separated values")
    sp.add_argument("--d", type=_floats, default=None, help="squeezing couplings")
    sp.add_argument("--emulate-hw", type=_bool, nargs="?", const=True, default=False)
    sp.add_argument("--shots", type=int, default=8192)
    sp.add_argument("--floor", type=float, default=0.04)
    sp.add_argument("--background", type=float, default=0.5)
    sp.add_argument("--hw-seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func_=cmd_gram)

    sp = sub.add_parser("hardware", help="regression on an emulated-device Gram matrix")
    sp.add_argument("--func", choices=sorted(tasks.TARGETS), default="xsinx")
    sp.add_argument("--kernel", default="CQ-4-t3")
    sp.add_argument("--c", type=_floats, default=[2.225])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shots", type=int, default=8192)
    sp.add_argument("--floor", type=float, default=0.04)
    sp.add_argument("--background", type=float, default=0.5)
    sp.add_argument("--restarts", type=int, default=4)
    common(sp)
    sp.set_defaults(func_=cmd_hardware)

    return p, sub


def read_config(path) -> dict:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def parse_args(argv=None):
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # the config file may supply required options, so find it before a full parse
    scout = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    scout.add_argument("--config")
    pre, rest = scout.parse_known_args(argv)
    chosen = next((a for a in rest if a in sub.choices), None)
    if pre.config and chosen:
        values = read_config(pre.config)
        command = values.pop("command", chosen)
        if command != chosen:
            raise UsageError(f"config is for '{command}', not '{chosen}'")
        sp = sub.choices[chosen]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sp.set_defaults(**values)
        # required options may now come from the file
        for action in sp._actions:
            if action.dest in values:
                action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func_(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
