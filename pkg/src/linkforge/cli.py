"""``linkforge`` command line.

Exit codes: 0 ok, 1 configuration or validation error, 2 solver failure,
3 numeric blow-up. ``LINKFORGE_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NUMERIC = 0, 1, 2, 3


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass


def _load_model(args):
    from .assembly import default_model_path, load_model
    return load_model(args.model or default_model_path())


def _load_env(args, **overrides):
    from .env import load_env_config
    if getattr(args, "stage", None) is not None:
        overrides["stage"] = args.stage
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_env_config(getattr(args, "env_config", None), **overrides)


def cmd_validate(args):
    model = _load_model(args)
    print(f"model {model.name}: {len(model.mechanisms)} mechanisms, "
          f"{len(model.actuator_names)} actuators, {len(model.joint_names)} joints -- ok")
    if args.env_config:
        cfg = _load_env(args)
        print(f"env config: stage {cfg.stage}, channels {', '.join(cfg.channels)} -- ok")
    return EXIT_OK


def _default_inputs(model, m):
    nom = model.q_nom
    j = model.joint_index
    if m.kind == "five_bar":
        return [nom[j(m.theta1_joint)], nom[j(m.crank)]]
    if m.kind == "four_bar":
        return [nom[j(m.crank)]]
    if m.kind == "differential":
        return [model.q_nom_act[model.act_index(a)] for a in m.actuators]
    return [model.q_nom_act[model.act_index(m.actuator)]]


def cmd_solve(args):
    import numpy as np

    from . import five_bar as fb
    from . import four_bar as fourb

    model = _load_model(args)
    try:
        m = model.mechanism(args.mechanism)
    except KeyError:
        names = ", ".join(x.name for x in model.mechanisms)
        print(f"unknown mechanism {args.mechanism!r}; available: {names}", file=sys.stderr)
        return EXIT_CONFIG
    x = list(args.inputs) if args.inputs else _default_inputs(model, m)
    nom, j = model.q_nom, model.joint_index
    if m.kind == "five_bar":
        if len(x) != 2:
            print("five_bar needs two inputs: theta1 joint and crank joint", file=sys.stderr)
            return EXIT_CONFIG
        t1, t4 = x[0] + m.theta1_offset, x[1] + m.theta4_offset
        cfg = fb.solve_passive(m.params, t1, t4, (nom[j(m.passive[0])], nom[j(m.passive[1])]),
                               tol=args.tol)
        res = float(np.linalg.norm(fb.closure_residual(m.params, cfg)))
        out = {m.passive[0]: cfg.theta2, m.passive[1]: cfg.theta3,
               "singularity_metric": fb.singularity_metric(m.params, cfg)}
    elif m.kind == "four_bar":
        if len(x) != 1:
            print("four_bar needs one input: the crank joint", file=sys.stderr)
            return EXIT_CONFIG
        cfg = fourb.fourbar_solve_output(m.params, x[0] + m.input_offset,
                                         (nom[j(m.coupler)], nom[j(m.output)] + m.output_offset),
                                         tol=args.tol)
        res = float(np.hypot(*fourb.loop_residual(m.params, cfg)))
        out = {m.coupler: cfg.theta_c, m.output: cfg.theta_out - m.output_offset,
               "transmission_ratio": fourb.transmission_ratio(m.params, cfg)}
    elif m.kind == "differential":
        if len(x) != 2:
            print("differential needs two actuator inputs", file=sys.stderr)
            return EXIT_CONFIG
        y = m.params.matrix() @ np.asarray(x, dtype=float)
        back = m.params.inverse_matrix() @ y
        res = float(np.max(np.abs(back - np.asarray(x))))
        out = dict(zip(m.outputs, y.tolist()))
    else:
        res = 0.0
        out = {m.joint: float(x[0])}
    for k, v in out.items():
        print(f"{k:>22s} = {v:+.12f}")
    print(f"{'residual':>22s} = {res:.3e}")
    return EXIT_OK if res <= args.tol else EXIT_SOLVER


def cmd_fit_fourbar(args):
    from . import four_bar as fourb

    model = _load_model(args)
    fours = [m for m in model.mechanisms if m.kind == "four_bar"]
    if args.mechanism:
        fours = [m for m in fours if m.name == args.mechanism]
    if not fours:
        print("no matching four_bar mechanism in the model", file=sys.stderr)
        return EXIT_CONFIG
    m = fours[0]
    domain = tuple(args.domain) if args.domain else None
    fit = fourb.fit_poly_ratio(m.params, degree=args.degree, domain=domain,
                               n_samples=args.samples)
    rows = fourb.validate_poly_ratio(m.params, fit, 10 * args.samples)
    out = Path(args.out or f"{m.name}_fit.csv")
    fourb.write_fit_csv(out, rows)
    coef_path = out.with_suffix(".json")
    coef_path.write_text(json.dumps({"mechanism": m.name, **fit.to_dict()}, indent=2) + "\n")
    print(f"{m.name}: degree {fit.degree} over [{fit.fit_domain[0]:.4f}, "
          f"{fit.fit_domain[1]:.4f}] rad")
    print("coefficients: " + " ".join(f"{a:+.10e}" for a in fit.a))
    print(f"max held-out residual: {abs(rows[:, 3]).max():.3e} rad")
    print(f"wrote {out} and {coef_path}")
    return EXIT_OK


def _file_policy(path, n_act):
    import numpy as np
    p = Path(path)
    seq = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, delimiter=",", ndmin=2)
    if seq.ndim != 2 or seq.shape[1] != n_act:
        raise ValueError(f"{path}: action file must have {n_act} columns")

    def policy(obs, step, env_ids):
        return np.broadcast_to(seq[step % len(seq)], (obs.shape[0], n_act)).copy()
    return policy


def cmd_rollout(args):
    from .env import (rollout, sine_policy, write_trace_binary, write_trace_csv,
                      zero_policy)

    model = _load_model(args)
    cfg = _load_env(args)
    n_act = len(model.actuator_names)
    if args.policy == "zero":
        policy = zero_policy(n_act)
    elif args.policy == "sine":
        policy = sine_policy(n_act, amplitude=args.amplitude, freq_hz=cfg.rewards.gait_hz,
                             ctrl_dt=cfg.ctrl_dt)
    else:
        policy = _file_policy(args.policy, n_act)
    trace = rollout(model, cfg, policy, args.steps, n_envs=args.n_envs)
    prefix = Path(args.out or "rollout")
    write_trace_csv(trace, prefix.with_suffix(".csv"))
    write_trace_binary(trace, prefix.with_suffix(".bin"))
    summary = trace.reward_summary()
    active = set(cfg.reward_terms)
    print(f"stage {cfg.stage}, {args.steps} steps x {args.n_envs} envs, policy {args.policy}")
    print(f"{'term':<18s} {'mean weighted':>14s}")
    for k, v in sorted(summary.items(), key=lambda kv: -abs(kv[1])):
        mark = "" if k in active else "  (inactive)"
        print(f"{k:<18s} {v:>14.6f}{mark}")
    dom = max(active, key=lambda k: abs(summary[k]))
    print(f"dominant term: {dom}")
    q = trace.fields["q"]
    print(f"max joint drift from start: {abs(q - q[:1]).max():.3e} rad")
    print(f"wrote {prefix.with_suffix('.csv')} and {prefix.with_suffix('.bin')}")
    return EXIT_OK


def cmd_bench(args):
    from .assembly import VARIANTS
    from .bench import cmd_bench as run, format_report, write_bench_csv

    model = _load_model(args)
    cfg = _load_env(args)
    names = args.variants or list(VARIANTS)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        print(f"unknown variants {unknown}; choose from {list(VARIANTS)}", file=sys.stderr)
        return EXIT_CONFIG
    report = run(model, cfg, [VARIANTS[n] for n in names], n_envs=args.n_envs,
                 n_steps=args.n_steps, seed=args.seed or 0, repeats=args.repeats,
                 warmup=args.warmup)
    out = Path(args.out or "bench.csv")
    write_bench_csv(report, out)
    print(format_report(report))
    for r in report.rows:
        if r.error is None:
            print(f"{r.variant:<12s} checksum {r.checksum[:16]}")
    print(f"wrote {out}")
    return EXIT_OK if report.ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="mechanism model file (default: shipped bruce_leg)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output path or prefix")
    common.add_argument("--threads", type=int, default=None, help="worker thread count")

    p = argparse.ArgumentParser(prog="linkforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="load and check a model file")
    s.add_argument("--env-config", help="also check an environment config file")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", parents=[common], help="solve one mechanism's passive joints")
    s.add_argument("mechanism")
    s.add_argument("inputs", nargs="*", type=float, help="input joint angles (rad)")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("fit-fourbar", parents=[common], help="fit the four-bar polynomial")
    s.add_argument("--mechanism")
    s.add_argument("--degree", type=int, default=5)
    s.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--samples", type=int, default=200)
    s.set_defaults(func=cmd_fit_fourbar)

    s = sub.add_parser("rollout", parents=[common], help="run a policy and write traces")
    s.add_argument("--env-config")
    s.add_argument("--stage", type=int)
    s.add_argument("--policy", default="zero", help="zero, sine or an action file (.npy/.csv)")
    s.add_argument("--amplitude", type=float, default=0.2)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--n-envs", type=int, default=1)
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("bench", parents=[common], help="variant throughput benchmark")
    s.add_argument("--env-config")
    s.add_argument("--stage", type=int)
    s.add_argument("--variants", nargs="+")
    s.add_argument("--n-envs", type=int, default=1024)
    s.add_argument("--n-steps", type=int, default=400)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--warmup", type=int, default=50)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("LINKFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)

    from .errors import (ConfigError, NonFinite, OutOfDomain, ParseError, SolverError,
                         ValidationError)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OutOfDomain) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NonFinite as exc:
        print(f"numeric blow-up at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
