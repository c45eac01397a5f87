"""Run directories, durable step logs, and CSV export."""

import json

import pytest

from wattbench.core import StepRow, TimeGrid, parse_utc
from wattbench.env import ArbitrageEnvConfig, ArbitrageEnv, SimBackend
from wattbench.assets import BatteryParams
from wattbench.errors import TelemetryError
from wattbench.telemetry import (
    EXPORT_HEADER,
    RunLogger,
    export_csv,
    load_manifest,
    new_run_id,
    read_steps,
)

MIDNIGHT = parse_utc("2024-01-01T00:00:00Z")


def make_row(step, reward=0.0, soc=0.5):
    return StepRow(
        step=step, observation=(soc, 0.25, 0.0, 1.0), action=1,
        setpoint_kw=0.0, delivered_kw=0.0, soc=soc, price_eur_mwh=50.0,
        reward_eur=reward, temp_c=18.0,
    )


def make_logger(base, run_id="RUN1", n_steps=96):
    grid = TimeGrid(start=MIDNIGHT, step_s=900, n_steps=n_steps)
    return RunLogger(
        base, kind="test", backend="sim", seed=0, config_hash="abc123def456",
        config={"note": "unit test"}, grid=grid, run_id=run_id,
    )


class TestRunIds:
    def test_ids_sort_by_time(self):
        a = new_run_id(now_ms=1_000_000, entropy=5)
        b = new_run_id(now_ms=2_000_000, entropy=1)
        assert a < b
        assert len(a) == 26

    def test_ids_unique(self):
        assert len({new_run_id() for _ in range(200)}) == 200


class TestManifest:
    def test_written_at_start_and_finalized(self, tmp_path):
        logger = make_logger(tmp_path)
        started = load_manifest(tmp_path, "RUN1")
        assert started.status == "running"
        assert started.finished_utc is None
        assert started.config_hash == "abc123def456"
        assert started.seed == 0
        logger.finish()
        done = load_manifest(tmp_path, "RUN1")
        assert done.status == "done"
        assert done.finished_utc is not None

    def test_context_manager_marks_failures(self, tmp_path):
        with pytest.raises(RuntimeError):
            with make_logger(tmp_path):
                raise RuntimeError("boom")
        assert load_manifest(tmp_path, "RUN1").status == "failed"

    def test_unknown_run_not_found(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path, "NOPE")
        with pytest.raises(FileNotFoundError):
            export_csv(tmp_path, "NOPE")

    def test_duplicate_run_id_rejected(self, tmp_path):
        make_logger(tmp_path).finish()
        with pytest.raises(FileExistsError):
            make_logger(tmp_path)


class TestStepLog:
    def test_count_and_order_preserved(self, tmp_path):
        logger = make_logger(tmp_path)
        for i in range(96):
            logger.log_step(make_row(i, reward=0.001 * i))
        logger.finish()
        rows = read_steps(tmp_path, "RUN1")
        assert len(rows) == 96
        assert [r["step"] for r in rows] == list(range(96))
        assert rows[3]["timestamp"] == "2024-01-01T00:45:00Z"

    def test_append_only_prefix_property(self, tmp_path):
        logger = make_logger(tmp_path)
        previous = []
        for i in range(10):
            logger.log_step(make_row(i))
            current = read_steps(tmp_path, "RUN1")
            assert current[: len(previous)] == previous
            assert len(current) == len(previous) + 1
            previous = current
        logger.finish()

    def test_closed_sink_raises_and_keeps_prefix(self, tmp_path):
        logger = make_logger(tmp_path)
        for i in range(50):
            logger.log_step(make_row(i))
        logger.finish()
        with pytest.raises(TelemetryError):
            logger.log_step(make_row(50))
        assert len(read_steps(tmp_path, "RUN1")) == 50

    def test_partial_trailing_line_ignored(self, tmp_path):
        logger = make_logger(tmp_path)
        for i in range(5):
            logger.log_step(make_row(i))
        logger.finish()
        path = tmp_path / "RUN1" / "steps.log"
        data = path.read_text()
        path.write_text(data + '{"step": 5, "soc": 0.')  # crash mid-row
        assert len(read_steps(tmp_path, "RUN1")) == 5

    def test_two_runs_do_not_interleave(self, tmp_path):
        a = make_logger(tmp_path, run_id="RUNA")
        b = make_logger(tmp_path, run_id="RUNB")
        for i in range(20):
            a.log_step(make_row(i, reward=1.0))
            b.log_step(make_row(i, reward=2.0))
        a.finish()
        b.finish()
        assert all(r["reward_eur"] == 1.0 for r in read_steps(tmp_path, "RUNA"))
        assert all(r["reward_eur"] == 2.0 for r in read_steps(tmp_path, "RUNB"))

    def test_identical_runs_byte_identical_logs(self, tmp_path):
        battery = BatteryParams()
        grid = TimeGrid(start=MIDNIGHT, step_s=900, n_steps=24)
        config = ArbitrageEnvConfig(
            grid=grid, prices=tuple(30.0 + i for i in range(24)), battery=battery,
        )

        def run(run_id):
            env = ArbitrageEnv(config, SimBackend(battery, step_s=900))
            logger = RunLogger(
                tmp_path, kind="eval", backend="sim", seed=7, config_hash="h",
                config={}, grid=grid, run_id=run_id,
            )
            env.reset(seed=7)
            done = False
            i = 0
            while not done:
                _, _, done, _, _ = env.step((i * 7) % 3)
                logger.log_step(env.record.rows[-1])
                i += 1
            logger.finish()
            return (tmp_path / run_id / "steps.log").read_bytes()

        assert run("FIRST") == run("SECOND")


class TestExport:
    def test_header_and_row_count(self, tmp_path):
        logger = make_logger(tmp_path)
        for i in range(96):
            logger.log_step(make_row(i, reward=-0.000123456789 * (i + 1)))
        logger.finish()
        path = export_csv(tmp_path, "RUN1")
        lines = path.read_text().splitlines()
        assert lines[0] == EXPORT_HEADER
        assert len(lines) == 97

    def test_resummed_reward_close_to_logged(self, tmp_path):
        logger = make_logger(tmp_path)
        total = 0.0
        for i in range(96):
            reward = -0.0123456789 * ((i % 7) - 3)
            total += reward
            logger.log_step(make_row(i, reward=reward))
        logger.finish()
        lines = export_csv(tmp_path, "RUN1").read_text().splitlines()[1:]
        resummed = sum(float(line.split(",")[-1]) for line in lines)
        assert abs(resummed - total) < 1e-6

    def test_six_significant_digits(self, tmp_path):
        logger = make_logger(tmp_path)
        logger.log_step(make_row(0, reward=-0.025, soc=0.5237499999))
        logger.finish()
        line = export_csv(tmp_path, "RUN1").read_text().splitlines()[1]
        fields = line.split(",")
        assert fields[2] == "0.52375"
        assert fields[-1] == "-0.025"

    def test_empty_run_header_only(self, tmp_path):
        make_logger(tmp_path).finish()
        path = export_csv(tmp_path, "RUN1")
        assert path.read_text() == EXPORT_HEADER + "\n"

    def test_export_twice_byte_identical(self, tmp_path):
        logger = make_logger(tmp_path)
        for i in range(10):
            logger.log_step(make_row(i, reward=1e-7 * i))
        logger.finish()
        first = export_csv(tmp_path, "RUN1").read_bytes()
        second = export_csv(tmp_path, "RUN1").read_bytes()
        assert first == second


class TestCurve:
    def test_curve_file_contents(self, tmp_path):
        logger = make_logger(tmp_path)
        logger.log_curve([-0.5, -0.25, 0.125])
        logger.finish()
        lines = (tmp_path / "RUN1" / "curve.csv").read_text().splitlines()
        assert lines[0] == "episode,return_eur"
        assert lines[1] == "0,-0.5"
        assert lines[3] == "2,0.125"

    def test_manifest_round_trips_config(self, tmp_path):
        grid = TimeGrid(start=MIDNIGHT, step_s=900, n_steps=4)
        config = {"battery": {"capacity_kwh": 10.0}, "prices": [1.0, 2.0]}
        RunLogger(
            tmp_path, kind="train", backend="sim", seed=3, config_hash="h",
            config=config, grid=grid, run_id="CFG",
        ).finish()
        manifest = load_manifest(tmp_path, "CFG")
        assert manifest.config == config
        raw = json.loads((tmp_path / "CFG" / "manifest.json").read_text())
        assert raw["config"]["battery"]["capacity_kwh"] == 10.0
