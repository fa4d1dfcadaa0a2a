"""Command-line entry points.

Subcommands: schedule inspect, score eval, sample, purify, attack,
sweep {noise-rate, forward-steps, guidance, async-attack}, report.
Output directory comes from --outdir or the DIFFAP_OUTPUT_DIR variable;
`sweep --check` exits nonzero when a trend assertion fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .attack import Pipeline, pgd_attack
from .classifier import class_log_probs
from .guidance import GuidanceMethod
from .harness import Lab, emit_report, evaluate, spread, sweep_forward_steps, sweep_guidance_methods, sweep_noise_rate, trend_nondecreasing
from .purifier import purify_batch
from .sampler import SamplerSpec, forward_noise, run_reverse
from .schedule import make_subsequence
from .score import epsilon as eps_fn
from .score import score as score_fn


def _load(args) -> dict:
    if getattr(args, "config", None):
        return cfgmod.load_config(args.config)
    gmm = cfgmod.default_mixture()
    return {
        "schedule": cfgmod.default_schedule(),
        "gmm": gmm,
        "oracle": cfgmod.make_oracle(gmm),
        "head": cfgmod.make_head(gmm),
        "defense": cfgmod.default_defense(gmm.dim),
        "attack": cfgmod.default_attack(),
        "experiment": {},
    }


def _outpath(args, name: str) -> str:
    outdir = args.outdir or cfgmod.output_dir()
    os.makedirs(outdir, exist_ok=True)
    return os.path.join(outdir, name)


def _lab(env) -> Lab:
    return Lab(schedule=env["schedule"], gmm=env["gmm"], oracle=env["oracle"], head=env["head"])


def cmd_schedule_inspect(args):
    env = _load(args)
    sched = env["schedule"]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["t", "beta_t", "alpha_bar_t"])
    for t in range(1, sched.T + 1):
        writer.writerow([t, repr(float(sched.betas[t - 1])), repr(float(sched.alpha_bars[t]))])
    return 0


def cmd_score_eval(args):
    env = _load(args)
    x = np.array([float(v) for v in args.x.split(",")])
    s = score_fn(env["oracle"], x, args.t)
    print("score:", " ".join(repr(float(v)) for v in s))
    if args.t >= 1:
        e = eps_fn(env["oracle"], x, args.t)
        print("eps:  ", " ".join(repr(float(v)) for v in e))
    return 0


def cmd_sample(args):
    env = _load(args)
    from .sampler import SamplerKind

    kind = args.kind.lower()
    spec = SamplerSpec.custom(float(kind[2:])) if kind.startswith("k=") else SamplerSpec(SamplerKind(kind))
    sched, oracle = env["schedule"], env["oracle"]
    subseq = make_subsequence(sched, args.steps, top=args.forward)
    rng = np.random.default_rng(args.seed)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["run", "t"] + [f"x{i}" for i in range(env["gmm"].dim)])
    for run in range(args.n):
        x_start = forward_noise(sched, env["gmm"].sample(1, rng)[0][0], args.forward, rng.standard_normal(env["gmm"].dim))
        x0, traj = run_reverse(oracle, sched, subseq, spec, x_start, rng, record=args.trajectories)
        if args.trajectories:
            for t, x_t, _ in traj.steps:
                writer.writerow([run, t] + [repr(float(v)) for v in x_t])
        else:
            writer.writerow([run, 0] + [repr(float(v)) for v in x0])
    return 0


def cmd_purify(args):
    env = _load(args)
    data = np.loadtxt(args.input, delimiter=",", ndmin=2)
    out = purify_batch(env["oracle"], env["schedule"], env["defense"], data)
    np.savetxt(args.output, out, delimiter=",")
    print(f"purified {data.shape[0]} samples -> {args.output}")
    return 0


def cmd_attack(args):
    env = _load(args)
    lab = _lab(env)
    size = int(env["experiment"].get("dataset_size", args.n))
    x, y = lab.draw_dataset(size, int(env["experiment"].get("data_seed", 0)))
    pipeline = Pipeline(oracle=env["oracle"], schedule=env["schedule"], defense=env["defense"])
    x_adv, info = pgd_attack(pipeline, env["head"], x, y, env["attack"], return_info=True)
    clean_pred = np.argmax(class_log_probs(env["head"], x), axis=-1)
    adv_out = purify_batch(env["oracle"], env["schedule"], env["defense"], x_adv)
    adv_pred = np.argmax(class_log_probs(env["head"], adv_out), axis=-1)
    delta = x_adv - x
    if env["attack"].norm.value == "linf":
        slack = env["attack"].epsilon - np.max(np.abs(delta), axis=-1)
    else:
        slack = env["attack"].epsilon - np.linalg.norm(delta, axis=-1)
    path = _outpath(args, "attack_results.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample", "label", "clean_pred", "adv_pred", "clean_loss", "best_loss", "constraint_slack"])
        for i in range(size):
            writer.writerow(
                [i, int(y[i]), int(clean_pred[i]), int(adv_pred[i]),
                 repr(float(info.clean_loss[i])), repr(float(info.best_loss[i])), repr(float(slack[i]))]
            )
    print(f"attack results -> {path}")
    return 0


def _check(label: str, ok: bool, failures: list):
    print(f"[{'PASS' if ok else 'FAIL'}] {label}")
    if not ok:
        failures.append(label)


def cmd_sweep(args):
    env = _load(args)
    lab = _lab(env)
    exp = env["experiment"]
    size = int(exp.get("dataset_size", args.n))
    runs = int(exp.get("runs", args.runs))
    data_seed = int(exp.get("data_seed", 0))
    failures = []

    if args.what == "noise-rate":
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        reports = sweep_noise_rate(lab, grid, env["defense"], env["attack"], size, runs, data_seed)
        robust = [r.robust_acc_mean for r in reports]
        if args.check:
            _check("robust acc non-decreasing in k (<= 1 violation)", trend_nondecreasing(robust), failures)
            _check("k=1 strictly beats k=0", robust[-1] > robust[0], failures)
    elif args.what == "forward-steps":
        grid = [int(v) for v in (exp.get("step_grid", "100 200 400 600 800 1000").split())]
        reports = sweep_forward_steps(lab, grid, True, env["attack"].attacker_knows_guidance, env["defense"], env["attack"], size, runs, data_seed)
        if args.check:
            std = [r.standard_acc_mean for r in reports]
            _check("standard acc flat across forward steps (<= 3 points)", spread(std) <= 0.03, failures)
    elif args.what == "guidance":
        grid = [int(v) for v in (exp.get("step_grid", "100 200 400 600 800 1000").split())]
        methods = [GuidanceMethod.NONE, GuidanceMethod.MEDIATOR, GuidanceMethod.GDMP, GuidanceMethod.DPS]
        reports = sweep_guidance_methods(lab, methods, grid, env["defense"], size, runs, data_seed)
        if args.check:
            by = {m.value: [] for m in methods}
            for rep in reports:
                by[rep.config["sweep.method"]].append(rep.standard_acc_mean)
            _check("mediator flat (<= 3 points)", spread(by["mediator"]) <= 0.03, failures)
            _check("gdmp declining", by["gdmp"][-1] < by["gdmp"][0] - 0.03, failures)
            _check("dps collapsing", min(by["dps"]) < by["mediator"][0] - 0.30, failures)
    elif args.what == "async-attack":
        from dataclasses import replace

        grid = [int(v) for v in (exp.get("attacker_grid", "50 100 200 500").split())]
        reports = []
        for steps in [None] + grid:  # None = synchronous
            attack = replace(env["attack"], attacker_forward_steps=steps)
            reports.append(
                evaluate(lab, env["defense"], attack, size, runs, data_seed,
                         config_extra={"sweep.attacker_forward_steps": steps if steps is not None else env["defense"].forward_steps})
            )
        if args.check:
            sync, async_100 = reports[0].robust_acc_mean, reports[2].robust_acc_mean
            _check("async attacker (100 steps) beats synchronous", async_100 < sync, failures)
    else:
        raise SystemExit(f"unknown sweep {args.what!r}")

    csv_path = _outpath(args, f"sweep_{args.what.replace('-', '_')}.csv")
    emit_report(reports, csv_path)
    print(f"report -> {csv_path}")
    if args.check and failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args):
    with open(args.input) as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    header, body = rows[0], rows[1:]
    std_i, rob_i = header.index("standard_acc"), header.index("robust_acc")
    std = np.array([float(r[std_i]) for r in body])
    rob = np.array([float(r[rob_i]) for r in body])
    summary = {
        "rows": len(body),
        "standard_acc_mean": float(std.mean()),
        "standard_acc_std": float(std.std(ddof=1 if len(body) > 1 else 0)),
        "robust_acc_mean": float(rob.mean()),
        "robust_acc_std": float(rob.std(ddof=1 if len(body) > 1 else 0)),
    }
    path = _outpath(args, "report_summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffap", description=__doc__)
    parser.add_argument("--config", help="flat config file")
    parser.add_argument("--outdir", help="output directory (default: $DIFFAP_OUTPUT_DIR or .)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="schedule utilities")
    psub = p.add_subparsers(dest="subcommand", required=True)
    pi = psub.add_parser("inspect", help="print t, beta_t, alpha_bar_t as CSV")
    pi.set_defaults(func=cmd_schedule_inspect)

    p = sub.add_parser("score", help="score oracle utilities")
    psub = p.add_subparsers(dest="subcommand", required=True)
    pe = psub.add_parser("eval", help="evaluate score and eps at a point")
    pe.add_argument("--x", required=True, help="comma-separated coordinates")
    pe.add_argument("--t", type=int, required=True)
    pe.set_defaults(func=cmd_score_eval)

    p = sub.add_parser("sample", help="run unguided reverse sampling")
    p.add_argument("--kind", default="random", help="ddim | ddpm | random | k=<v>")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--forward", type=int, default=1000)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("purify", help="purify a CSV of inputs")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_purify)

    p = sub.add_parser("attack", help="run PGD+EOT and emit per-sample results")
    p.add_argument("--n", type=int, default=64)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run a seeded sweep")
    p.add_argument("what", choices=["noise-rate", "forward-steps", "guidance", "async-attack"])
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--check", action="store_true", help="exit nonzero when a trend assertion fails")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize an emitted CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
