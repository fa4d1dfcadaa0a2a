"""Experiment orchestration: seeded sweeps, accuracy aggregation, reports.

Paired seeding discipline: within a sweep, run r at every grid point sees
the same dataset, the same attack seed and the same defense streams, so
differences across the grid isolate the swept variable.  Trend claims are
accepted by sign/ordering on paired seeds, never by absolute magnitudes;
report headers restate this.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackConfig, Pipeline, pgd_attack
from .classifier import ClassifierHead, accuracy
from .guidance import GuidanceMethod
from .purifier import DefenseConfig, purify_batch
from .sampler import SamplerSpec
from .schedule import NoiseSchedule
from .score import GaussianMixtureModel, ScoreOracle

__all__ = [
    "Lab",
    "ExperimentReport",
    "ExperimentError",
    "evaluate",
    "sweep_noise_rate",
    "sweep_forward_steps",
    "sweep_guidance_methods",
    "emit_report",
    "trend_nondecreasing",
    "spread",
]

TREND_NOTE = "trend acceptance is by sign/ordering on paired seeds, not paper magnitudes"


@dataclass(frozen=True)
class Lab:
    """The world under test: schedule, data mixture, score oracle, classifier."""

    schedule: NoiseSchedule
    gmm: GaussianMixtureModel
    oracle: ScoreOracle
    head: ClassifierHead

    @classmethod
    def build(cls, gmm: GaussianMixtureModel, schedule: NoiseSchedule, temperature: float = 1.0) -> "Lab":
        return cls(
            schedule=schedule,
            gmm=gmm,
            oracle=ScoreOracle(gmm=gmm, schedule=schedule),
            head=ClassifierHead(gmm=gmm, temperature=temperature),
        )

    def draw_dataset(self, n: int, data_seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence((data_seed, 0x0DA7A)))
        return self.gmm.sample(n, rng)

    def clean_accuracy(self, n: int = 512, data_seed: int = 0) -> float:
        x, y = self.draw_dataset(n, data_seed)
        return accuracy(self.head, x, y)


@dataclass
class ExperimentReport:
    config: dict
    rows: list
    standard_acc_mean: float
    standard_acc_std: float
    robust_acc_mean: float
    robust_acc_std: float
    runs: int
    stage_wall_ms: dict = field(default_factory=dict)
    note: str = TREND_NOTE

    def __post_init__(self):
        for v in (self.standard_acc_mean, self.robust_acc_mean):
            if not (0.0 <= v <= 1.0):
                raise ValueError("accuracy means must lie in [0, 1]")
        if self.standard_acc_std < 0.0 or self.robust_acc_std < 0.0:
            raise ValueError("stds must be >= 0")
        if self.runs != len(self.rows):
            raise ValueError("runs must match the number of rows")


class ExperimentError(RuntimeError):
    """A run failed; carries the report of the completed runs."""

    def __init__(self, message: str, partial_rows: list):
        super().__init__(message)
        self.partial_rows = partial_rows


def _flatten_config(defense: DefenseConfig, attack: AttackConfig | None, extra: dict) -> dict:
    cfg = {
        "defense.forward_steps": defense.forward_steps,
        "defense.denoising_steps": defense.denoising_steps,
        "defense.sampler": defense.sampler.label(),
        "defense.guidance": defense.guidance.method.value,
        "defense.R": defense.guidance.R,
        "defense.distance": defense.guidance.distance.value,
        "defense.modulus_k": defense.guidance.modulus_k,
        "defense.seed": defense.seed,
    }
    if attack is None:
        cfg["attack.enabled"] = False
    else:
        cfg.update(
            {
                "attack.enabled": attack.epsilon > 0.0,
                "attack.norm": attack.norm.value,
                "attack.epsilon": attack.epsilon,
                "attack.iterations": attack.iterations,
                "attack.eot_samples": attack.eot_samples,
                "attack.forward_steps": attack.attacker_forward_steps
                if attack.attacker_forward_steps is not None
                else defense.forward_steps,
                "attack.denoising_steps": attack.attacker_denoising_steps,
                "attack.knows_guidance": attack.attacker_knows_guidance,
                "attack.backend": attack.gradient_backend.value,
                "attack.seed": attack.seed,
            }
        )
    cfg.update(extra)
    return cfg


def _run_base_seed(defense_seed: int, run: int) -> int:
    return int(np.random.SeedSequence((defense_seed, run)).generate_state(1)[0])


def evaluate(
    lab: Lab,
    defense: DefenseConfig,
    attack: AttackConfig | None,
    dataset_size: int,
    runs: int,
    data_seed: int = 0,
    config_extra: dict | None = None,
) -> ExperimentReport:
    """Standard/robust accuracy, mean and std over seeded runs.

    The dataset is one fixed seeded draw.  The attack (when enabled) runs
    once; each run then replays fresh defense streams over both the clean
    and the attacked inputs, with identical streams for the two, so a null
    attack gives exactly equal accuracies.
    """
    if dataset_size < 1 or runs < 1:
        raise ValueError("dataset_size and runs must be >= 1")
    x_clean, labels = lab.draw_dataset(dataset_size, data_seed)
    pipeline = Pipeline(oracle=lab.oracle, schedule=lab.schedule, defense=defense)

    stage_ms = {}
    t0 = time.perf_counter()
    if attack is not None and attack.epsilon > 0.0:
        x_adv = pgd_attack(pipeline, lab.head, x_clean, labels, attack)
    else:
        x_adv = x_clean
    stage_ms["attack"] = 1000.0 * (time.perf_counter() - t0)

    rows = []
    t0 = time.perf_counter()
    for run in range(runs):
        try:
            base = _run_base_seed(defense.seed, run)
            run_t0 = time.perf_counter()
            std_out = purify_batch(lab.oracle, lab.schedule, defense, x_clean, base_seed=base)
            std_acc = accuracy(lab.head, std_out, labels)
            if x_adv is x_clean:
                rob_acc = std_acc
            else:
                rob_out = purify_batch(lab.oracle, lab.schedule, defense, x_adv, base_seed=base)
                rob_acc = accuracy(lab.head, rob_out, labels)
            rows.append(
                {
                    "run": run,
                    "seed": base,
                    "standard_acc": std_acc,
                    "robust_acc": rob_acc,
                    "wall_ms": 1000.0 * (time.perf_counter() - run_t0),
                }
            )
        except Exception as exc:  # abort with what completed
            raise ExperimentError(f"run {run} failed: {exc}", rows) from exc
    stage_ms["defense"] = 1000.0 * (time.perf_counter() - t0)

    std = np.array([r["standard_acc"] for r in rows])
    rob = np.array([r["robust_acc"] for r in rows])
    ddof = 1 if runs > 1 else 0
    return ExperimentReport(
        config=_flatten_config(defense, attack, dict(config_extra or {}, dataset_size=dataset_size, data_seed=data_seed)),
        rows=rows,
        standard_acc_mean=float(std.mean()),
        standard_acc_std=float(std.std(ddof=ddof)),
        robust_acc_mean=float(rob.mean()),
        robust_acc_std=float(rob.std(ddof=ddof)),
        runs=runs,
        stage_wall_ms=stage_ms,
    )


def sweep_noise_rate(
    lab: Lab,
    k_grid: list,
    base_defense: DefenseConfig,
    base_attack: AttackConfig | None,
    dataset_size: int = 512,
    runs: int = 3,
    data_seed: int = 0,
) -> list:
    """Robust/standard accuracy vs the fresh-noise rate k, paired seeds."""
    if len(k_grid) == 0:
        raise ValueError("empty k grid")
    reports = []
    for k in k_grid:
        defense = base_defense.with_sampler(SamplerSpec.custom(float(k)))
        reports.append(
            evaluate(lab, defense, base_attack, dataset_size, runs, data_seed, config_extra={"sweep.k": float(k)})
        )
    return reports


def sweep_forward_steps(
    lab: Lab,
    step_grid: list,
    attacker_sync: bool,
    attacker_knows_guidance: bool,
    base_defense: DefenseConfig,
    base_attack: AttackConfig | None,
    dataset_size: int = 512,
    runs: int = 3,
    data_seed: int = 0,
) -> list:
    """Sweep the defender's forward steps; the attacker follows when synchronous."""
    reports = []
    for t_star in step_grid:
        if not (1 <= t_star <= lab.schedule.T):
            raise ValueError(f"forward steps {t_star} outside [1, T]")
        defense = replace(
            base_defense,
            forward_steps=int(t_star),
            denoising_steps=min(base_defense.denoising_steps, int(t_star)),
        )
        attack = None
        if base_attack is not None:
            attack = replace(
                base_attack,
                attacker_forward_steps=int(t_star) if attacker_sync else base_attack.attacker_forward_steps,
                attacker_knows_guidance=attacker_knows_guidance,
            )
        reports.append(
            evaluate(lab, defense, attack, dataset_size, runs, data_seed, config_extra={"sweep.forward_steps": int(t_star)})
        )
    return reports


def sweep_guidance_methods(
    lab: Lab,
    methods: list,
    step_grid: list,
    base_defense: DefenseConfig,
    dataset_size: int = 512,
    runs: int = 3,
    data_seed: int = 0,
    attack: AttackConfig | None = None,
) -> list:
    """Standard-accuracy curves per guidance method over defense forward steps.

    DPS blow-ups surface as accuracy collapse, never as a crash: the chain
    is numerically total (bounded mediators, log-sum-exp densities).
    """
    reports = []
    for method in methods:
        method = GuidanceMethod(method) if not isinstance(method, GuidanceMethod) else method
        for t_star in step_grid:
            defense = replace(
                base_defense,
                forward_steps=int(t_star),
                denoising_steps=min(base_defense.denoising_steps, int(t_star)),
                guidance=replace(base_defense.guidance, method=method),
            )
            reports.append(
                evaluate(
                    lab, defense, attack, dataset_size, runs, data_seed,
                    config_extra={"sweep.method": method.value, "sweep.forward_steps": int(t_star)},
                )
            )
    return reports


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(reports: list, csv_path: str, json_path: str | None = None) -> tuple[str, str]:
    """Write per-run rows as CSV and a JSON summary; byte-stable for fixed inputs."""
    if not reports:
        raise ValueError("no reports to emit")
    if json_path is None:
        json_path = csv_path.rsplit(".", 1)[0] + ".json"

    config_keys = sorted({k for rep in reports for k in rep.config})
    columns = config_keys + ["run", "standard_acc", "robust_acc", "seed", "wall_ms"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["# " + TREND_NOTE])
    writer.writerow(columns)
    for rep in reports:
        for row in rep.rows:
            writer.writerow(
                [_fmt(rep.config.get(k, "")) for k in config_keys]
                + [_fmt(row[c]) for c in ("run", "standard_acc", "robust_acc", "seed", "wall_ms")]
            )
    with open(csv_path, "w", newline="") as fh:
        fh.write(buf.getvalue())

    summary = {
        "note": TREND_NOTE,
        "reports": [
            {
                "config": rep.config,
                "runs": rep.runs,
                "standard_acc_mean": rep.standard_acc_mean,
                "standard_acc_std": rep.standard_acc_std,
                "robust_acc_mean": rep.robust_acc_mean,
                "robust_acc_std": rep.robust_acc_std,
                "stage_wall_ms": rep.stage_wall_ms,
            }
            for rep in reports
        ],
    }
    with open(json_path, "w", newline="") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return csv_path, json_path


def trend_nondecreasing(values, tolerated_violations: int = 1) -> bool:
    """True when the sequence increases with at most the tolerated adjacent dips."""
    values = list(values)
    violations = sum(1 for a, b in zip(values, values[1:]) if b < a)
    return violations <= tolerated_violations


def spread(values) -> float:
    values = list(values)
    return max(values) - min(values)
