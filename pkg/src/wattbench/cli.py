"""Operator entry points: train in simulation, serve the hardware emulator,
evaluate a policy on both backends, and fetch day-ahead prices.

Every command reads one INI configuration file (sections per module) and
applies command-line flags on top of it; the effective configuration is
printed before any work starts. Exit codes: 0 success, 2 configuration or
validation error, 3 environment or IO error, 4 partial result.
"""

import configparser
import dataclasses
import signal
import socket
import sys
import threading
from datetime import date
from pathlib import Path

import click

from .assets import BatteryParams, ThermalParams
from .control import Hyperparameters, dynamics_hash, load_policy, save_policy
from .control import train as train_policy
from .core import parse_utc
from .core import TimeGrid
from .env import ArbitrageEnv, ArbitrageEnvConfig, ModbusBackend, SimBackend
from .env import config_snapshot
from .errors import ConfigError, TelemetryError, TransportError
from .modbus.emulator import EmulatorServer
from .modbus.plant import PlantModel
from .modbus.registers import DEFAULT_REGISTER_MAP
from .prices import fetch_day_ahead, load_fixture, resample, save_fixture
from .telemetry import RunLogger
from .transfer import report_summary, run_transfer


def _dataclass_defaults(instance) -> dict:
    out = {}
    for field in dataclasses.fields(instance):
        value = getattr(instance, field.name)
        if isinstance(value, bool):
            out[field.name] = "true" if value else "false"
        else:
            out[field.name] = repr(value) if isinstance(value, float) else str(value)
    return out


_DEFAULTS = {
    "grid": {"start": "2023-06-01T00:00:00Z", "step_s": "900", "days": "1"},
    "prices": {"fixture": "fixtures/two_tier_day.csv", "area": "BE"},
    "battery": _dataclass_defaults(BatteryParams()),
    "thermal": _dataclass_defaults(ThermalParams()),
    "env": {"action_set_kw": "-2.5, 0, 2.5", "initial_soc": "0.5"},
    "train": {
        "episodes": "1500",
        "seed": "0",
        "alpha": "0.1",
        "gamma": "0.99",
        "epsilon_start": "1.0",
        "epsilon_end": "0.05",
        "epsilon_decay_fraction": "0.8",
    },
    "emulator": {
        "host": "127.0.0.1",
        "port": "15020",
        "tick_s": "10",
        "time_scale": "3600.0",
        "seed": "0",
        "initial_soc": "0.5",
        "initial_temp_c": "18.0",
    },
    "telemetry": {"out_dir": "runs"},
}


def load_config(path) -> dict:
    """Defaults overlaid with an optional INI file; unknown keys rejected."""
    cfg = {section: dict(values) for section, values in _DEFAULTS.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser[section].items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            cfg[section][key] = value
    return cfg


def _print_config(cfg: dict) -> None:
    click.echo("effective configuration:")
    for section, values in cfg.items():
        click.echo(f"[{section}]")
        for key, value in values.items():
            click.echo(f"{key} = {value}")
    click.echo("")


def _as_int(cfg, section, key) -> int:
    raw = cfg[section][key]
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from None


def _as_float(cfg, section, key) -> float:
    raw = cfg[section][key]
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None


def _as_bool(cfg, section, key) -> bool:
    raw = cfg[section][key].strip().lower()
    if raw in ("true", "1", "yes", "on"):
        return True
    if raw in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key} must be a boolean, got {cfg[section][key]!r}")


def _as_floats(cfg, section, key) -> tuple:
    raw = cfg[section][key]
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} must be comma-separated numbers, got {raw!r}"
        ) from None


def _battery_from(cfg) -> BatteryParams:
    return BatteryParams(
        capacity_kwh=_as_float(cfg, "battery", "capacity_kwh"),
        p_max_kw=_as_float(cfg, "battery", "p_max_kw"),
        eta_charge=_as_float(cfg, "battery", "eta_charge"),
        eta_discharge=_as_float(cfg, "battery", "eta_discharge"),
        taper_start_soc=_as_float(cfg, "battery", "taper_start_soc"),
        soc_min=_as_float(cfg, "battery", "soc_min"),
        soc_max=_as_float(cfg, "battery", "soc_max"),
        ideal=_as_bool(cfg, "battery", "ideal"),
        tracking_noise_std_kw=_as_float(cfg, "battery", "tracking_noise_std_kw"),
    )


def _thermal_from(cfg) -> ThermalParams:
    return ThermalParams(
        tau_h=_as_float(cfg, "thermal", "tau_h"),
        heat_rate_k_per_h=_as_float(cfg, "thermal", "heat_rate_k_per_h"),
        t_ambient_c=_as_float(cfg, "thermal", "t_ambient_c"),
        hysteresis_c=_as_float(cfg, "thermal", "hysteresis_c"),
        setpoint_c=_as_float(cfg, "thermal", "setpoint_c"),
    )


def _grid_from(cfg) -> TimeGrid:
    step_s = _as_int(cfg, "grid", "step_s")
    days = _as_int(cfg, "grid", "days")
    if days < 1:
        raise ConfigError(f"[grid] days must be >= 1, got {days}")
    if step_s <= 0 or 86400 % step_s != 0:
        raise ConfigError(f"[grid] step_s must divide 86400, got {step_s}")
    start = parse_utc(cfg["grid"]["start"])
    return TimeGrid(start=start, step_s=step_s, n_steps=days * (86400 // step_s))


def _prices_for(cfg, grid: TimeGrid) -> tuple:
    path = cfg["prices"]["fixture"]
    series = load_fixture(path)
    return tuple(resample(series, grid))


def _env_config(cfg, grid, prices, battery) -> ArbitrageEnvConfig:
    return ArbitrageEnvConfig(
        grid=grid,
        prices=prices,
        battery=battery,
        action_set_kw=_as_floats(cfg, "env", "action_set_kw"),
        initial_soc=_as_float(cfg, "env", "initial_soc"),
    )


def _ideal_twin(battery: BatteryParams) -> BatteryParams:
    """Same electrical parameters with taper and tracking noise removed."""
    return dataclasses.replace(battery, ideal=True, tracking_noise_std_kw=0.0)


def _register_map_lines(reg_map) -> list:
    lines = ["  addr  name                 kind  scale  unit   access"]
    for spec in reg_map:
        lines.append(
            f"  {spec.address:>4}  {spec.name:<19}  {spec.kind:<4}  "
            f"{spec.scale:<5g}  {spec.unit:<5}  {spec.access}"
        )
    return lines


def _fail(code: int, exc) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _execute(body) -> None:
    """Run a command body, mapping failures onto the documented exit codes."""
    try:
        body()
    except (ValueError, IndexError) as exc:
        _fail(2, exc)
    except FileNotFoundError as exc:
        _fail(2, exc)
    except (TransportError, TelemetryError) as exc:
        _fail(3, exc)
    except OSError as exc:
        _fail(3, exc)


_EPILOG = "\n".join(
    [
        "\b",
        "Default battery parameters:",
        *[
            f"  {key} = {value}"
            for key, value in _dataclass_defaults(BatteryParams()).items()
        ],
        "\b",
        "Default register map (MODBUS holding registers, unit id "
        f"{DEFAULT_REGISTER_MAP.unit_id}):",
        *_register_map_lines(DEFAULT_REGISTER_MAP),
    ]
)


@click.group(epilog=_EPILOG)
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(),
    default=None,
    help="INI configuration file with one section per module; flags override it.",
)
@click.pass_context
def main(ctx, config_path):
    """Desk-scale home energy lab: train, emulate, deploy, measure the gap."""
    ctx.obj = config_path


@main.command()
@click.option("--episodes", type=int, default=None, help="Training episodes.")
@click.option("--seed", type=int, default=None, help="Training seed.")
@click.option(
    "--out",
    type=click.Path(),
    default="policy.txt",
    show_default=True,
    help="Where to write the frozen policy.",
)
@click.pass_context
def train(ctx, episodes, seed, out):
    """Train the tabular controller on the ideal in-process backend."""
    _execute(lambda: _cmd_train(ctx.obj, episodes, seed, out))


def _cmd_train(config_path, episodes, seed, out):
    cfg = load_config(config_path)
    if episodes is not None:
        cfg["train"]["episodes"] = str(episodes)
    if seed is not None:
        cfg["train"]["seed"] = str(seed)
    _print_config(cfg)

    grid = _grid_from(cfg)
    battery = _ideal_twin(_battery_from(cfg))
    prices = _prices_for(cfg, grid)
    env_config = _env_config(cfg, grid, prices, battery)
    env = ArbitrageEnv(env_config, SimBackend(battery, grid.step_s))
    hyper = Hyperparameters(
        alpha=_as_float(cfg, "train", "alpha"),
        gamma=_as_float(cfg, "train", "gamma"),
        epsilon_start=_as_float(cfg, "train", "epsilon_start"),
        epsilon_end=_as_float(cfg, "train", "epsilon_end"),
        epsilon_decay_fraction=_as_float(cfg, "train", "epsilon_decay_fraction"),
    )
    n_episodes = _as_int(cfg, "train", "episodes")
    seed_value = _as_int(cfg, "train", "seed")

    result = train_policy(env, n_episodes, hyper=hyper, seed=seed_value)
    try:
        save_policy(result.policy, out)
    except OSError as exc:
        raise TelemetryError(f"could not write policy to {out}: {exc}") from exc

    out_dir = Path(cfg["telemetry"]["out_dir"])
    with RunLogger(
        out_dir,
        kind="train",
        backend="sim",
        seed=seed_value,
        config_hash=result.policy.config_hash,
        config=config_snapshot(env_config),
        grid=grid,
    ) as logger:
        logger.log_curve(result.episode_returns)
        run_id = logger.run_id
    click.echo(f"trained {n_episodes} episodes, policy hash {result.policy.config_hash}")
    click.echo(f"policy written to {out}")
    click.echo(f"training curve logged as run {run_id} under {out_dir}")


@main.command("serve-hw")
@click.option("--port", type=int, default=None, help="TCP port to serve on.")
@click.option("--time-scale", type=float, default=None, help="Emulated seconds per wall second.")
@click.option("--seed", type=int, default=None, help="Plant noise seed.")
@click.pass_context
def serve_hw(ctx, port, time_scale, seed):
    """Serve the emulated plant over MODBUS/TCP until interrupted."""
    _execute(lambda: _cmd_serve_hw(ctx.obj, port, time_scale, seed))


def _cmd_serve_hw(config_path, port, time_scale, seed):
    cfg = load_config(config_path)
    if port is not None:
        cfg["emulator"]["port"] = str(port)
    if time_scale is not None:
        cfg["emulator"]["time_scale"] = repr(time_scale)
    if seed is not None:
        cfg["emulator"]["seed"] = str(seed)
    _print_config(cfg)

    battery = _battery_from(cfg)
    plant = PlantModel(
        battery=battery,
        thermal=_thermal_from(cfg),
        tick_s=_as_int(cfg, "emulator", "tick_s"),
        seed=_as_int(cfg, "emulator", "seed"),
        initial_soc=_as_float(cfg, "emulator", "initial_soc"),
        initial_temp_c=_as_float(cfg, "emulator", "initial_temp_c"),
    )
    server = EmulatorServer(
        plant,
        host=cfg["emulator"]["host"],
        port=_as_int(cfg, "emulator", "port"),
        time_scale=_as_float(cfg, "emulator", "time_scale"),
    )
    server.start()
    host, bound_port = server.address

    out_dir = Path(cfg["telemetry"]["out_dir"])
    grid = _grid_from(cfg)
    logger = RunLogger(
        out_dir,
        kind="serve-hw",
        backend="emulator",
        seed=_as_int(cfg, "emulator", "seed"),
        config_hash=dynamics_hash(
            battery, _as_floats(cfg, "env", "action_set_kw"), grid.step_s
        ),
        config={
            "battery": dataclasses.asdict(battery),
            "thermal": dataclasses.asdict(_thermal_from(cfg)),
            "emulator": dict(cfg["emulator"]),
        },
    )

    stop = threading.Event()

    def _on_signal(signum, frame):
        stop.set()

    old_int = signal.signal(signal.SIGINT, _on_signal)
    old_term = signal.signal(signal.SIGTERM, _on_signal)
    try:
        click.echo(f"emulator serving on {host}:{bound_port}")
        click.echo(f"run {logger.run_id}, time scale {server.time_scale:g}")
        click.echo("register map:")
        for line in _register_map_lines(plant.reg_map):
            click.echo(line)
        click.echo("interrupt to stop")
        sys.stdout.flush()
        while not stop.wait(0.2):
            pass
    finally:
        signal.signal(signal.SIGINT, old_int)
        signal.signal(signal.SIGTERM, old_term)
        server.stop()
        logger.finish("done")
    click.echo(f"stopped after {plant.tick_count} ticks; manifest finalized")


@main.command()
@click.option(
    "--policy",
    "policy_path",
    type=click.Path(),
    required=True,
    help="Frozen policy file to evaluate.",
)
@click.option("--days", type=int, default=None, help="Evaluation horizon in days.")
@click.option("--hw", default=None, metavar="HOST:PORT", help="Emulator address.")
@click.pass_context
def transfer(ctx, policy_path, days, hw):
    """Evaluate a policy in simulation and on hardware; report the gap."""
    _execute(lambda: _cmd_transfer(ctx.obj, policy_path, days, hw))


def _parse_hostport(text: str):
    host, sep, port_text = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"--hw must look like host:port, got {text!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"--hw port must be an integer, got {port_text!r}") from None
    return host, port


def _cmd_transfer(config_path, policy_path, days, hw):
    cfg = load_config(config_path)
    if days is not None:
        cfg["grid"]["days"] = str(days)
    if hw is not None:
        host, port = _parse_hostport(hw)
        cfg["emulator"]["host"] = host
        cfg["emulator"]["port"] = str(port)
    _print_config(cfg)

    policy = load_policy(policy_path)
    battery = _battery_from(cfg)
    grid = _grid_from(cfg)
    prices = _prices_for(cfg, grid)
    env_config = _env_config(cfg, grid, prices, battery)

    host = cfg["emulator"]["host"]
    port = _as_int(cfg, "emulator", "port")
    # Distinguish "emulator unreachable" from a failure mid-run: probe the
    # TCP endpoint before any episode starts.
    try:
        probe = socket.create_connection((host, port), timeout=2.0)
        probe.close()
    except OSError as exc:
        raise TransportError(f"emulator at {host}:{port} unreachable: {exc}") from exc

    sim_backend = SimBackend(_ideal_twin(battery), grid.step_s)
    hw_backend = ModbusBackend(
        host, port, battery, grid.step_s, tick_s=_as_int(cfg, "emulator", "tick_s")
    )
    out_dir = Path(cfg["telemetry"]["out_dir"])
    report = run_transfer(
        policy,
        env_config,
        sim_backend,
        hw_backend,
        days=_as_int(cfg, "grid", "days"),
        seed=_as_int(cfg, "train", "seed"),
        out_dir=out_dir,
    )
    click.echo(report_summary(report))
    click.echo(f"report written under {out_dir}")
    if report.truncated:
        sys.exit(4)


@main.command("fetch-prices")
@click.option("--endpoint", default=None, help="Day-ahead price API base URL.")
@click.option(
    "--fixture",
    "fixture_path",
    type=click.Path(),
    default=None,
    help="Existing fixture CSV to revalidate and normalize.",
)
@click.option("--date", "day_text", default=None, metavar="YYYY-MM-DD", help="Delivery day.")
@click.option("--out", type=click.Path(), required=True, help="Output fixture CSV.")
@click.pass_context
def fetch_prices(ctx, endpoint, fixture_path, day_text, out):
    """Fetch or revalidate a day-ahead price fixture."""
    _execute(lambda: _cmd_fetch_prices(ctx.obj, endpoint, fixture_path, day_text, out))


def _cmd_fetch_prices(config_path, endpoint, fixture_path, day_text, out):
    cfg = load_config(config_path)
    _print_config(cfg)
    if (endpoint is None) == (fixture_path is None):
        raise ConfigError("exactly one of --endpoint and --fixture is required")
    if endpoint is not None:
        if day_text is None:
            raise ConfigError("--date is required with --endpoint")
        try:
            day = date.fromisoformat(day_text)
        except ValueError:
            raise ConfigError(f"--date must be YYYY-MM-DD, got {day_text!r}") from None
        series = fetch_day_ahead(endpoint, cfg["prices"]["area"], day)
    else:
        series = load_fixture(fixture_path)
    try:
        save_fixture(series, out)
    except OSError as exc:
        raise TelemetryError(f"could not write fixture to {out}: {exc}") from exc
    click.echo(f"wrote {len(series)} hourly prices to {out}")


if __name__ == "__main__":
    main()
