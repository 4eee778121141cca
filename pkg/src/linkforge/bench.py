"""Variant throughput benchmark.

One timed step is a full batched environment step (action filtering, the
simulator substeps, sensing and rewards). Per-step time is normalized per
environment: ``total / (n_envs * n_steps)``. Each repetition builds a fresh
environment, runs ``warmup`` untimed steps and then ``n_steps`` timed steps;
variants are interleaved within each repetition so slow drifts in machine
load hit all of them alike. The reported time is the median over repetitions.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .assembly import VARIANTS, MechanismModel, VariantSpec
from .env import BatchedEnv, EnvConfig
from .env import rng
from .errors import LinkforgeError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("variant", "time_per_step_us", "steps_per_sec", "setup_s", "overhead_pct")
BASELINE = "Simplified"


@dataclass
class BenchRow:
    variant: str
    time_per_step_us: float = float("nan")
    steps_per_sec: float = float("nan")
    setup_s: float = float("nan")
    overhead_pct: float = float("nan")
    checksum: str = ""
    runs_us: tuple = ()
    error: str | None = None


@dataclass
class BenchReport:
    rows: list
    n_envs: int
    n_steps: int
    repeats: int
    seed: int

    def row(self, name) -> BenchRow:
        return next(r for r in self.rows if r.variant == name)

    @property
    def ok(self) -> bool:
        return any(r.error is None for r in self.rows)


def state_checksum(env: BatchedEnv) -> str:
    return hashlib.sha256(np.ascontiguousarray(env.state_vector()).tobytes()).hexdigest()


def _actions(seed, n_envs, n_act, n_steps):
    ids = np.arange(n_envs)
    return [rng.uniform(seed, ids, k, "bench", n_act, -0.1, 0.1) for k in range(n_steps)]


def run_variant(model, config, variant: VariantSpec, n_envs, actions, warmup):
    """(seconds for the timed steps, setup seconds, final state checksum)."""
    t0 = time.perf_counter()
    env = BatchedEnv(model, config, n_envs=n_envs, variant=variant)
    env.step(actions[0])  # first step triggers any compilation
    setup = time.perf_counter() - t0
    for k in range(1, warmup):
        env.step(actions[k])
    timed = actions[warmup:]
    t0 = time.perf_counter()
    for a in timed:
        env.step(a)
    elapsed = time.perf_counter() - t0
    return elapsed, setup, state_checksum(env)


def cmd_bench(model: MechanismModel, config: EnvConfig, variants=None, n_envs=1024,
              n_steps=400, seed=0, repeats=5, warmup=50) -> BenchReport:
    if n_envs < 1 or n_steps < 1:
        raise ValueError("n_envs and n_steps must be >= 1")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    variants = list(VARIANTS.values()) if variants is None else list(variants)
    config = replace(config, seed=int(seed))
    n_act = len(model.actuator_names)
    warmup = max(int(warmup), 1)
    actions = _actions(seed, n_envs, n_act, warmup + n_steps)
    times = {v.name: [] for v in variants}
    setups = {v.name: [] for v in variants}
    sums = {v.name: set() for v in variants}
    errors = {}
    # load the compiled kernel once so setup times compare variants, not the cache
    try:
        run_variant(model, config, variants[0], 1, [a[:1] for a in actions[:2]], 1)
    except (LinkforgeError, ValueError):
        pass  # reported per variant below
    for rep in range(repeats):
        for v in variants:
            if v.name in errors:
                continue
            try:
                dt, setup, chk = run_variant(model, config, v, n_envs, actions, warmup)
            except (LinkforgeError, ValueError) as exc:
                errors[v.name] = f"{type(exc).__name__}: {exc}"
                log.error("variant %s failed: %s", v.name, exc)
                continue
            times[v.name].append(dt / (n_envs * n_steps) * 1e6)
            setups[v.name].append(setup)
            sums[v.name].add(chk)
            log.info("rep %d %-12s %.3f us/step", rep, v.name, times[v.name][-1])
    rows = []
    for v in variants:
        if v.name in errors:
            rows.append(BenchRow(v.name, error=errors[v.name]))
            continue
        if len(sums[v.name]) != 1:
            raise RuntimeError(f"{v.name}: state checksum changed between repetitions")
        us = float(np.median(times[v.name]))
        rows.append(BenchRow(v.name, us, 1e6 / us, float(np.median(setups[v.name])),
                             checksum=sums[v.name].pop(), runs_us=tuple(times[v.name])))
    base = next((r for r in rows if r.variant == BASELINE and r.error is None), None)
    for r in rows:
        if r.error is None and base is not None:
            r.overhead_pct = (0.0 if r is base
                              else 100.0 * (r.time_per_step_us / base.time_per_step_us - 1.0))
    return BenchReport(rows, n_envs, n_steps, repeats, int(seed))


def write_bench_csv(report: BenchReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([r.variant] + [repr(float(getattr(r, c))) for c in CSV_COLUMNS[1:]])


def _pct(x):
    return "n/a" if not np.isfinite(x) else f"{x:+.1f}%"


def format_report(report: BenchReport) -> str:
    """Relative-overhead table: variants as columns; time, rate and setup as rows."""
    rows = report.rows
    base = next((r for r in rows if r.variant == BASELINE and r.error is None), None)
    head = [""] + [r.variant for r in rows]

    def rel(r, attr):
        if r.error is not None:
            return "error"
        if r is base:
            return {"time_per_step_us": f"{r.time_per_step_us:.3f} [us]",
                    "steps_per_sec": f"{r.steps_per_sec:,.0f}",
                    "setup_s": f"{r.setup_s:.2f} [s]"}[attr]
        if base is None:
            return f"{getattr(r, attr):.4g}"
        return _pct(100.0 * (getattr(r, attr) / getattr(base, attr) - 1.0))

    table = [head,
             ["Time/step"] + [rel(r, "time_per_step_us") for r in rows],
             ["Steps/sec"] + [rel(r, "steps_per_sec") for r in rows],
             ["Setup time"] + [rel(r, "setup_s") for r in rows]]
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in table]
    lines.insert(1, "-" * len(lines[0]))
    lines.append(f"({report.n_envs} envs x {report.n_steps} steps, median of "
                 f"{report.repeats}, seed {report.seed})")
    for r in rows:
        if r.error is not None:
            lines.append(f"{r.variant}: {r.error}")
    return "\n".join(lines)
