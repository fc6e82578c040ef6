"""Command-line front end.

Subcommands::

    run               run a preset or config file and write the curve CSVs
    compare           initial-phase AUC of vanilla vs momentum presets
    verify-hurwitz    Hurwitz checks of the stacked one-timescale matrix G
    check-conditions  three-timescale stability/convergence conditions
    dump-model        exact model matrices of an environment
    list-presets      names of the shipped presets

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures (including a tripped divergence guard).
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from .algorithms import ALGORITHMS, FORMS, REGIMES, DivergenceError
from .experiments import (ConfigError, ExperimentError, compare_presets, config_from_dict,
                          config_to_dict, default_output_dir, export_curves, list_presets,
                          load_config, load_preset, run_experiment, _preset_prefix)
from .mdp import build_environment
from .model import ModelError, compute_model, dump_model, load_model_dump
from .sa_framework import (build_stacked, check_b_conditions, hurwitz_sufficient,
                           is_hurwitz_eig, momentum_problem_from_exponents)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_SCHEDULE_FLAGS = ("regime", "alpha", "beta", "rho", "w")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("config source")
    src.add_argument("--preset", help="name of a shipped preset (see list-presets)")
    src.add_argument("--config", help="path to a YAML experiment config")
    ov = p.add_argument_group("overrides (take precedence over the config)")
    ov.add_argument("--env", help="environment: boyan14, rw5, rw19 or randmdp(seed,n,k)")
    ov.add_argument("--algo", help="comma separated subset of " + ",".join(ALGORITHMS))
    ov.add_argument("--form", choices=FORMS, help="learner form")
    ov.add_argument("--regime", choices=REGIMES, help="step-size regime")
    ov.add_argument("--alpha", type=float, help="theta step-size exponent")
    ov.add_argument("--beta", type=float, help="u step-size exponent")
    ov.add_argument("--rho", type=float, help="momentum step-size exponent")
    ov.add_argument("--w", type=float, help="momentum constant")
    ov.add_argument("--runs", type=int, help="number of independent runs")
    ov.add_argument("--episodes", type=int, help="episodes per run")
    ov.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
    ov.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    ov.add_argument("--out", help="raw curve CSV path; the aggregate is written next to it "
                                  "(default: $GTDM_OUTPUT_DIR/<name>.csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtd-momentum",
        description="Gradient TD learners with heavy-ball momentum: experiments and checks.",
        epilog="Default output directory: $GTDM_OUTPUT_DIR (else the current directory).")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    _add_run_flags(sub.add_parser("run", help="run an experiment and export curves"))

    p = sub.add_parser("compare", help="AUC of vanilla vs One-TS vs Three-TS presets")
    p.add_argument("--env", required=True, help="environment (selects its presets)")
    p.add_argument("--algo", help="comma separated subset of " + ",".join(ALGORITHMS))
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=100, help="episodes in the AUC window")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("verify-hurwitz", help="check G for an environment or an A matrix file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--env", help="environment whose exact A_bar is used")
    src.add_argument("--matrix", help="file with A_bar: a dump-model file or plain rows")
    p.add_argument("--w", type=float, required=True, help="momentum constant")

    p = sub.add_parser("check-conditions", help="three-timescale condition report")
    p.add_argument("--algo", required=True, help="gtd, gtd2 or tdc (a -m suffix is accepted)")
    p.add_argument("--env", required=True)
    p.add_argument("--w", type=float, help="momentum constant (default: Three-TS preset)")
    p.add_argument("--alpha", type=float, help="theta exponent (default: Three-TS preset)")
    p.add_argument("--beta", type=float, help="u exponent (default: Three-TS preset)")
    p.add_argument("--rho", type=float, help="momentum exponent (default: Three-TS preset)")
    p.add_argument("--horizon", type=int, default=10**6, help="step-size probe horizon")

    p = sub.add_parser("dump-model", help="print the exact model matrices")
    p.add_argument("--env", required=True)
    p.add_argument("--out", help="write to this file instead of stdout")

    sub.add_parser("list-presets", help="list shipped presets")
    return parser


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def resolve_config(args) -> tuple[dict, str]:
    """Merge the config source with flag overrides; returns ``(dict, name)``."""
    if args.preset and args.config:
        raise ConfigError("give at most one of --preset and --config")
    if args.preset:
        d, name = config_to_dict(load_preset(args.preset)), args.preset
    elif args.config:
        d, name = load_config(args.config), Path(args.config).stem
    else:
        d, name = {}, "run"

    for key, attr in (("env", "env"), ("runs", "runs"), ("episodes", "episodes"),
                      ("seed", "seed")):
        val = getattr(args, attr)
        if val is not None:
            d[key] = val

    sched = {k: getattr(args, k) for k in _SCHEDULE_FLAGS if getattr(args, k) is not None}
    if args.algo or args.form or sched:
        # flags apply to every algorithm entry; the template is the config's first entry
        entries = [dict(e) if isinstance(e, dict) else {"algo": e} for e in d.get("algorithms") or []]
        top = dict(d.pop("schedule", None) or {})
        template = {**top, **(entries[0] if entries else {})}
        template.pop("algo", None)
        names = ([a.strip().lower() for a in args.algo.split(",") if a.strip()] if args.algo
                 else [e["algo"] for e in entries])
        if not names:
            raise ConfigError("no algorithms selected; use --algo")
        merged = {**template, **sched}
        regime = merged.get("regime", "vanilla")
        form = args.form or merged.get("form")
        if not args.form and (form is None or (form == "vanilla") != (regime == "vanilla")):
            # follow the regime unless a form was asked for explicitly
            form = "vanilla" if regime == "vanilla" else "two_form"
        merged["form"] = form
        if regime == "vanilla":
            merged.pop("rho", None)
            merged.pop("w", None)
        d["algorithms"] = [{"algo": n, **merged} for n in names]
    return d, name


def cmd_run(args) -> int:
    d, name = resolve_config(args)
    cfg = config_from_dict(d)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    resolved = config_to_dict(cfg)
    print("# resolved config")
    print(yaml.safe_dump(resolved, sort_keys=False).rstrip())
    sys.stdout.flush()
    curves = run_experiment(cfg, jobs=args.jobs)
    out = args.out or cfg.output or str(Path(default_output_dir()) / f"{name}.csv")
    raw, agg = export_curves(curves, out)
    print(f"wrote {raw}")
    print(f"wrote {agg}")
    for label in curves.labels:
        mean = curves.mean(label)
        final = mean[-1] if len(mean) else curves.initial[label]
        print(f"{label}: final mean RMSPBE {final:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# other subcommands
# ---------------------------------------------------------------------------

def cmd_compare(args) -> int:
    algos = (tuple(a.strip().lower() for a in args.algo.split(",")) if args.algo
             else ALGORITHMS)
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise ConfigError(f"unknown algorithm(s) {bad}")
    if args.runs < 1 or args.episodes < 1 or args.k < 1:
        raise ConfigError("--runs, --episodes and --k must be positive")
    print(f"# compare env={args.env} algos={','.join(algos)} runs={args.runs} "
          f"episodes={args.episodes} seed={args.seed} k={args.k}")
    cmp = compare_presets(args.env, algos, horizon=args.episodes, n_runs=args.runs,
                          base_seed=args.seed, k=args.k, jobs=args.jobs)
    print(cmp.text())
    for algo in algos:
        for reg in ("one_ts", "three_ts"):
            verdict = "below" if cmp.momentum_wins(algo, reg) else "not below"
            print(f"{algo}-m/{reg} AUC {verdict} vanilla")
    return EXIT_OK


def read_matrix_file(path) -> np.ndarray:
    """Read ``A_bar`` from a dump-model file (its ``[A]`` block) or plain rows."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read matrix file {path}: {exc.strerror}") from exc
    try:
        if "[A]" in text:
            A = load_model_dump(text)["A"]
        else:
            rows = [ln.split() for ln in text.splitlines()
                    if ln.strip() and not ln.lstrip().startswith("#")]
            A = np.array([[float(x) for x in r] for r in rows])
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"cannot parse matrix file {path}: {exc}") from exc
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.size == 0:
        raise ConfigError(f"matrix in {path} is not square (shape {A.shape})")
    return A


class _Bare:
    # the minimal model interface build_stacked needs
    def __init__(self, A):
        self.A_bar, self.b_bar = A, np.zeros(A.shape[0])


def cmd_verify_hurwitz(args) -> int:
    if args.matrix:
        A, src = read_matrix_file(args.matrix), args.matrix
    else:
        A, src = compute_model(*build_environment(args.env)).A_bar, args.env
    G = build_stacked(_Bare(A), args.w).G
    norm2 = float(np.linalg.norm(A, 2) ** 2)
    suff = hurwitz_sufficient(A, args.w)
    eig_ok, top = is_hurwitz_eig(G)
    print(f"source: {src}  d={A.shape[0]}  w={args.w:g}")
    print(f"||A||^2 = {norm2:.17g}")
    print(f"w(w+1) = {args.w * (args.w + 1) + 0.0:.17g}")
    print(f"sufficient condition (w > 0 and w(w+1) > ||A||^2): {str(suff).lower()}")
    print(f"eigenvalue check (max Re < -1e-12): {str(eig_ok).lower()}")
    print(f"max real part = {top:.17g}")
    return EXIT_OK


def cmd_check_conditions(args) -> int:
    algo = args.algo.lower().removesuffix("-m")
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {args.algo!r}")
    env = build_environment(args.env)
    model = compute_model(*env)
    preset = load_preset(f"{_preset_prefix(args.env)}_three_ts").algorithms[0].schedule
    alpha = preset.alpha_exp if args.alpha is None else args.alpha
    beta = preset.beta_exp if args.beta is None else args.beta
    rho = preset.rho_exp if args.rho is None else args.rho
    w = preset.w if args.w is None else args.w
    print(f"# {algo}-m on {args.env}: w={w:g} alpha={alpha:g} beta={beta:g} rho={rho:g} "
          f"(xi={alpha - rho:g})")
    problem = momentum_problem_from_exponents(algo, model, w, alpha - rho, beta, rho, env=env,
                                              rng=np.random.default_rng(0))
    report = check_b_conditions(problem, horizon=args.horizon, rng=np.random.default_rng(0))
    print(report.text())
    return EXIT_OK if report.ok else 1


def cmd_dump_model(args) -> int:
    text = dump_model(compute_model(*build_environment(args.env)))
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_list_presets(args) -> int:
    print("\n".join(list_presets()))
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "compare": cmd_compare, "verify-hurwitz": cmd_verify_hurwitz,
             "check-conditions": cmd_check_conditions, "dump-model": cmd_dump_model,
             "list-presets": cmd_list_presets}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    warnings.simplefilter("default")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # bad environment names and invalid schedules surface as ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, DivergenceError, ModelError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
