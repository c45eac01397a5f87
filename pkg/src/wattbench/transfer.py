"""Sim-to-real evaluation: one frozen policy, two backends, one gap figure.

The same policy runs greedily over the same prices and grid against the
in-process simulation and against hardware (usually the emulator over
MODBUS/TCP). The report carries total and per-day rewards plus the gap

    gap_percent = 100 * (reward_sim - reward_real) / |reward_sim|

so a positive gap means the hardware run earned less than simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .control import dynamics_hash, rollout
from .core import EpisodeRecord
from .env import ArbitrageEnv, ArbitrageEnvConfig, config_snapshot
from .errors import ConfigError, TransportError, ValidationError
from .telemetry import RunLogger, export_csv, new_run_id


@dataclass(frozen=True)
class TransferReport:
    policy_hash: str
    days: int
    steps_per_day: int
    reward_sim: float
    reward_real: float
    gap_percent: float
    day_rewards_sim: tuple
    day_rewards_real: tuple
    truncated_sim: bool
    truncated_real: bool
    record_sim: EpisodeRecord
    record_real: EpisodeRecord

    @property
    def truncated(self) -> bool:
        return self.truncated_sim or self.truncated_real


def _day_sums(record: EpisodeRecord, steps_per_day: int, days: int) -> tuple:
    sums = [0.0] * days
    for row in record.rows:
        sums[row.step // steps_per_day] += row.reward_eur
    return tuple(sums)


def _evaluate(config: ArbitrageEnvConfig, backend, policy, seed: int):
    env = ArbitrageEnv(config, backend)
    try:
        record = rollout(env, policy, seed=seed)
    except TransportError:
        record = env.record
    return record


def run_transfer(policy, config: ArbitrageEnvConfig, sim_backend, hw_backend,
                 days: int, seed: int = 0, out_dir=None,
                 run_id: str | None = None) -> TransferReport:
    """Evaluate ``policy`` on both backends over ``days`` consecutive days.

    The config's grid must span exactly ``days`` days worth of steps. A
    transport failure on either side truncates that side's episode: the
    report keeps the partial record and is marked truncated. With
    ``out_dir`` set, both episodes are persisted as telemetry runs next
    to a human-readable summary and a CSV table.
    """
    if days < 1:
        raise ConfigError(f"days must be at least 1, got {days}")
    if config.grid.n_steps % days != 0:
        raise ConfigError(
            f"{config.grid.n_steps} steps do not split into {days} equal days"
        )
    expected = dynamics_hash(config.battery, config.action_set_kw,
                             config.grid.step_s)
    policy_hash = getattr(policy, "config_hash", expected)
    if policy_hash != expected:
        raise ConfigError(
            f"policy was frozen for dynamics {policy_hash}, "
            f"this config hashes to {expected}"
        )
    steps_per_day = config.grid.n_steps // days

    record_sim = _evaluate(config, sim_backend, policy, seed)
    record_real = _evaluate(config, hw_backend, policy, seed)

    reward_sim = record_sim.cumulative_reward()
    reward_real = record_real.cumulative_reward()
    if reward_sim == 0.0:
        raise ValidationError(
            "simulated reward is zero; the gap percentage is undefined"
        )
    gap = 100.0 * (reward_sim - reward_real) / abs(reward_sim)

    report = TransferReport(
        policy_hash=policy_hash,
        days=days,
        steps_per_day=steps_per_day,
        reward_sim=reward_sim,
        reward_real=reward_real,
        gap_percent=gap,
        day_rewards_sim=_day_sums(record_sim, steps_per_day, days),
        day_rewards_real=_day_sums(record_real, steps_per_day, days),
        truncated_sim=record_sim.truncated,
        truncated_real=record_real.truncated,
        record_sim=record_sim,
        record_real=record_real,
    )
    if out_dir is not None:
        persist_report(report, config, out_dir, seed=seed, run_id=run_id)
    return report


def persist_report(report: TransferReport, config: ArbitrageEnvConfig,
                   out_dir, seed: int = 0, run_id: str | None = None) -> dict:
    """Write both episodes as telemetry runs plus summary and CSV files.

    Returns the paths written, keyed by role.
    """
    anchor = run_id if run_id is not None else new_run_id()
    base = Path(out_dir)
    snapshot = config_snapshot(config)
    paths = {}
    for suffix, record, truncated in (
        ("sim", report.record_sim, report.truncated_sim),
        ("real", report.record_real, report.truncated_real),
    ):
        rid = f"{anchor}-{suffix}"
        logger = RunLogger(
            base, kind="transfer", backend=suffix, seed=seed,
            config_hash=report.policy_hash, config=snapshot,
            grid=config.grid, run_id=rid,
        )
        for row in record.rows:
            logger.log_step(row)
        logger.finish("truncated" if truncated else "done")
        paths[suffix] = export_csv(base, rid).parent
    csv_path = base / f"{anchor}-transfer.csv"
    csv_path.write_text(report_csv(report), encoding="utf-8")
    paths["csv"] = csv_path
    txt_path = base / f"{anchor}-transfer.txt"
    txt_path.write_text(report_summary(report) + "\n", encoding="utf-8")
    paths["summary"] = txt_path
    return paths


def report_csv(report: TransferReport) -> str:
    lines = ["day,reward_sim_eur,reward_real_eur,gap_percent"]
    for d in range(report.days):
        sim_d = report.day_rewards_sim[d]
        real_d = report.day_rewards_real[d]
        gap_d = "" if sim_d == 0.0 else f"{100.0 * (sim_d - real_d) / abs(sim_d):.6g}"
        lines.append(f"{d + 1},{sim_d:.6g},{real_d:.6g},{gap_d}")
    lines.append(
        f"total,{report.reward_sim:.6g},{report.reward_real:.6g},"
        f"{report.gap_percent:.6g}"
    )
    return "\n".join(lines) + "\n"


def report_summary(report: TransferReport) -> str:
    direction = "below" if report.gap_percent > 0 else "above or equal to"
    lines = [
        f"policy {report.policy_hash} over {report.days} day(s), "
        f"{report.days * report.steps_per_day} steps",
        f"  simulated reward  {report.reward_sim:.6f} EUR",
        f"  hardware reward   {report.reward_real:.6f} EUR",
        f"  gap               {report.gap_percent:.2f} % (hardware {direction} simulation)",
    ]
    for d in range(report.days):
        lines.append(
            f"  day {d + 1}  sim {report.day_rewards_sim[d]:+.6f}  "
            f"real {report.day_rewards_real[d]:+.6f}"
        )
    lines.append(f"  truncated: {'yes' if report.truncated else 'no'}")
    return "\n".join(lines)
