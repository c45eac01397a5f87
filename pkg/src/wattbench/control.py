"""Dispatch controllers: exact planner, tabular Q-learning, threshold rule.

All controllers share one interface: ``act(step_index, observation)``
returns an action index. They reuse the environment's battery dynamics
and reward function so planner values and realized episode rewards
agree bit for bit on deterministic instances.
"""

from __future__ import annotations

import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .assets import BatteryParams, BatteryState, battery_step
from .core import make_rng
from .env import PRICE_NORM_EUR_MWH, VIRTUAL, ArbitrageEnvConfig, step_reward
from .errors import ConfigError, ParseError

POLICY_FORMAT = "wattbench-policy"
POLICY_VERSION = 1

SOC_BINS = 11
PRICE_BINS = 10
HOUR_BINS = 24


def dynamics_hash(battery: BatteryParams, action_set_kw, step_s: int) -> str:
    """Hash of what a policy's value depends on and ablations must preserve.

    Covers the battery's size, limits, and efficiencies plus the action
    vocabulary and step length. Deliberately excludes the taper, noise,
    and ideal switches (a policy trained on the ideal variant is meant to
    run against the non-ideal one) and the price data (policies transfer
    across days).
    """
    text = "|".join([
        repr(float(battery.capacity_kwh)),
        repr(float(battery.p_max_kw)),
        repr(float(battery.eta_charge)),
        repr(float(battery.eta_discharge)),
        repr(float(battery.soc_min)),
        repr(float(battery.soc_max)),
        ",".join(repr(float(a)) for a in action_set_kw),
        str(int(step_s)),
    ])
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def preference_order(action_set_kw) -> list:
    """Action indices in tie-break order: idle first, then lower index."""
    idle = list(action_set_kw).index(0.0)
    return [idle] + [j for j in range(len(action_set_kw)) if j != idle]


# -- exact planner -----------------------------------------------------------


@dataclass(frozen=True)
class DPSolution:
    """Backward-induction solution over (step, SoC node).

    ``value[i][k]`` is the best achievable total reward from step i at
    SoC node k; the final row is all zero. ``policy[i][k]`` is the
    matching greedy action index. ``optimal_profit`` is the value at
    step 0 for the configured initial SoC, interpolated.
    """

    config: ArbitrageEnvConfig
    soc_grid: np.ndarray
    value: np.ndarray
    policy: np.ndarray
    optimal_profit: float


def _interp(row, soc: float, lo: float, hi: float) -> float:
    """Linear interpolation that returns node values exactly at nodes."""
    n = len(row)
    pos = (soc - lo) / (hi - lo) * (n - 1)
    if pos <= 0.0:
        return float(row[0])
    if pos >= n - 1:
        return float(row[n - 1])
    i = int(pos)
    frac = pos - i
    if frac <= 1e-9:
        return float(row[i])
    if frac >= 1.0 - 1e-9:
        return float(row[i + 1])
    return float(row[i] + frac * (row[i + 1] - row[i]))


def dp_solve(config: ArbitrageEnvConfig, n_soc: int = 201) -> DPSolution:
    """Exact dispatch by backward induction on a uniform SoC grid.

    Requires deterministic dynamics: the battery must be the ideal
    variant (no taper, no tracking noise). Off-grid successor states are
    valued by linear interpolation, so results are exact only when every
    reachable SoC lands on a grid node.
    """
    if n_soc < 2:
        raise ValueError(f"SoC grid needs at least 2 points, got {n_soc}")
    battery = config.battery
    if not battery.ideal:
        raise ValueError(
            "planner requires deterministic dynamics: set battery ideal=True"
        )
    lo, hi = battery.soc_min, battery.soc_max
    grid_nodes = np.linspace(lo, hi, n_soc)
    n_steps = config.grid.n_steps
    dt_h = config.grid.step_h
    actions = config.action_set_kw
    order = preference_order(actions)

    value = np.zeros((n_steps + 1, n_soc))
    policy = np.zeros((n_steps, n_soc), dtype=np.int64)
    for i in reversed(range(n_steps)):
        price = config.prices[i]
        nxt = value[i + 1]
        for k in range(n_soc):
            soc = float(grid_nodes[k])
            best_val = None
            best_a = order[0]
            for j in order:
                state, delivered = battery_step(
                    battery, BatteryState(soc=soc), actions[j], dt_h, 0.0
                )
                cand = step_reward(price, delivered, dt_h) + _interp(
                    nxt, state.soc, lo, hi
                )
                if best_val is None or cand > best_val:
                    best_val = cand
                    best_a = j
            value[i, k] = best_val
            policy[i, k] = best_a

    optimal = _interp(value[0], config.initial_soc, lo, hi)
    return DPSolution(
        config=config, soc_grid=grid_nodes, value=value, policy=policy,
        optimal_profit=optimal,
    )


class DPPolicy:
    """Greedy controller against a planner's value function.

    Recomputes the one-step lookahead at the observed SoC instead of
    snapping to the nearest node, so it stays consistent with the value
    table between nodes.
    """

    def __init__(self, solution: DPSolution):
        self.solution = solution
        self._order = preference_order(solution.config.action_set_kw)

    def act(self, step_index: int, observation) -> int:
        config = self.solution.config
        battery = config.battery
        soc = observation[0]
        price = config.prices[step_index]
        dt_h = config.grid.step_h
        nxt = self.solution.value[step_index + 1]
        best_val = None
        best_a = self._order[0]
        for j in self._order:
            state, delivered = battery_step(
                battery, BatteryState(soc=soc), config.action_set_kw[j], dt_h, 0.0
            )
            cand = step_reward(price, delivered, dt_h) + _interp(
                nxt, state.soc, battery.soc_min, battery.soc_max
            )
            if best_val is None or cand > best_val:
                best_val = cand
                best_a = j
        return best_a


# -- observation discretization ---------------------------------------------


@dataclass(frozen=True)
class StateCodec:
    """Maps observations to tabular state indices, bijectively over bins.

    Price bin edges are the deciles of the training prices, frozen with
    the policy so train and eval index states identically.
    """

    price_edges: tuple
    soc_bins: int = SOC_BINS
    price_bins: int = PRICE_BINS
    hour_bins: int = HOUR_BINS

    def __post_init__(self):
        object.__setattr__(
            self, "price_edges", tuple(float(e) for e in self.price_edges)
        )
        if len(self.price_edges) != self.price_bins - 1:
            raise ConfigError(
                f"{self.price_bins} price bins need {self.price_bins - 1} "
                f"edges, got {len(self.price_edges)}"
            )
        if list(self.price_edges) != sorted(self.price_edges):
            raise ConfigError("price edges must be nondecreasing")

    @property
    def n_states(self) -> int:
        return self.soc_bins * self.price_bins * self.hour_bins

    def index_of(self, soc_bin: int, price_bin: int, hour_bin: int) -> int:
        if not 0 <= soc_bin < self.soc_bins:
            raise IndexError(f"soc bin {soc_bin} outside [0, {self.soc_bins})")
        if not 0 <= price_bin < self.price_bins:
            raise IndexError(f"price bin {price_bin} outside [0, {self.price_bins})")
        if not 0 <= hour_bin < self.hour_bins:
            raise IndexError(f"hour bin {hour_bin} outside [0, {self.hour_bins})")
        return (soc_bin * self.price_bins + price_bin) * self.hour_bins + hour_bin

    def state_of(self, observation) -> int:
        soc, norm_price, sin_h, cos_h = observation
        soc_bin = min(max(int(soc * self.soc_bins), 0), self.soc_bins - 1)
        price_bin = bisect_right(self.price_edges, norm_price * PRICE_NORM_EUR_MWH)
        hour = math.atan2(sin_h, cos_h) / (2.0 * math.pi) * 24.0
        hour_bin = int(math.floor(hour + 1e-9)) % self.hour_bins
        return self.index_of(soc_bin, price_bin, hour_bin)


def decile_edges(prices) -> tuple:
    qs = [i / 10.0 for i in range(1, 10)]
    return tuple(float(v) for v in np.quantile(np.asarray(prices, dtype=float), qs))


# -- tabular Q-learning ------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.epsilon_decay_fraction <= 1.0:
            raise ConfigError("epsilon decay fraction must be in (0, 1]")

    def epsilon_at(self, episode: int, episodes: int) -> float:
        decay_span = max(1, int(round(episodes * self.epsilon_decay_fraction)))
        frac = min(1.0, episode / decay_span)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass
class QTable:
    codec: StateCodec
    n_actions: int
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    values: np.ndarray = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.codec.n_states, self.n_actions))
        if self.values.shape != (self.codec.n_states, self.n_actions):
            raise ConfigError(
                f"table shape {self.values.shape} does not match "
                f"{self.codec.n_states} states x {self.n_actions} actions"
            )

    def greedy(self, state: int, order) -> int:
        row = self.values[state]
        best = order[0]
        for j in order[1:]:
            if row[j] > row[best]:
                best = j
        return best


def q_update(table: QTable, s: int, a: int, r: float, s_next: int, done: bool) -> None:
    """One temporal-difference backup, in place."""
    q = table.values
    if not 0 <= s < q.shape[0] or not 0 <= s_next < q.shape[0]:
        raise IndexError(f"state index outside [0, {q.shape[0]})")
    if not 0 <= a < q.shape[1]:
        raise IndexError(f"action index {a} outside [0, {q.shape[1]})")
    hyper = table.hyper
    target = r if done else r + hyper.gamma * float(np.max(q[s_next]))
    q[s, a] += hyper.alpha * (target - q[s, a])


@dataclass(frozen=True)
class TrainResult:
    policy: "TabularPolicy"
    table: QTable
    episode_returns: tuple


def train(env, episodes: int, hyper: Hyperparameters | None = None,
          seed: int = 0) -> TrainResult:
    """Epsilon-greedy training; returns the frozen greedy policy.

    The environment must run on the virtual clock (training is not meant
    to wait for scaled or wall time). Exploration decays linearly from
    epsilon_start to epsilon_end over the first decay fraction of
    episodes. Zero episodes yield the all-idle policy.
    """
    config = env.config
    if config.clock_mode != VIRTUAL:
        raise ConfigError(
            f"training requires the virtual clock, not {config.clock_mode!r}"
        )
    if episodes < 0:
        raise ConfigError(f"episodes must be nonnegative, got {episodes}")
    hyper = hyper if hyper is not None else Hyperparameters()
    codec = StateCodec(price_edges=decile_edges(config.prices))
    table = QTable(codec=codec, n_actions=config.n_actions, hyper=hyper)
    order = preference_order(config.action_set_kw)
    rng = make_rng(seed)
    returns = []
    for episode in range(episodes):
        epsilon = hyper.epsilon_at(episode, episodes)
        obs, _ = env.reset(seed=seed + episode)
        state = codec.state_of(obs)
        total = 0.0
        done = False
        while not done:
            if rng.random() < epsilon:
                action = int(rng.integers(config.n_actions))
            else:
                action = table.greedy(state, order)
            obs, reward, terminated, truncated, _ = env.step(action)
            next_state = codec.state_of(obs)
            q_update(table, state, action, reward, next_state, terminated)
            state = next_state
            total += reward
            done = terminated or truncated
        returns.append(total)
    policy = freeze_policy(table, config)
    return TrainResult(policy=policy, table=table, episode_returns=tuple(returns))


# -- frozen policies ---------------------------------------------------------


@dataclass(frozen=True)
class TabularPolicy:
    """State-indexed action table plus everything needed to index states."""

    codec: StateCodec
    actions: np.ndarray
    action_set_kw: tuple
    step_s: int
    config_hash: str
    version: int = POLICY_VERSION

    def act(self, step_index: int, observation) -> int:
        return int(self.actions[self.codec.state_of(observation)])


def freeze_policy(table: QTable, config: ArbitrageEnvConfig) -> TabularPolicy:
    order = preference_order(config.action_set_kw)
    actions = np.array(
        [table.greedy(s, order) for s in range(table.codec.n_states)],
        dtype=np.int64,
    )
    return TabularPolicy(
        codec=table.codec,
        actions=actions,
        action_set_kw=config.action_set_kw,
        step_s=config.grid.step_s,
        config_hash=dynamics_hash(config.battery, config.action_set_kw,
                                  config.grid.step_s),
    )


def save_policy(policy: TabularPolicy, path) -> None:
    lines = [
        f"{POLICY_FORMAT} {policy.version}",
        f"hash {policy.config_hash}",
        f"step_s {policy.step_s}",
        "actions_kw " + " ".join(repr(a) for a in policy.action_set_kw),
        f"soc_bins {policy.codec.soc_bins}",
        f"price_bins {policy.codec.price_bins}",
        f"hour_bins {policy.codec.hour_bins}",
        "price_edges " + " ".join(repr(e) for e in policy.codec.price_edges),
        f"states {policy.codec.n_states}",
    ]
    for s in range(policy.codec.n_states):
        lines.append(f"{s} {int(policy.actions[s])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path) -> TabularPolicy:
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in raw_lines if line.strip()]
    if not lines:
        raise ParseError(f"{path}: empty policy file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != POLICY_FORMAT:
        raise ParseError(f"{path}:1: not a {POLICY_FORMAT} file")
    if head[1] != str(POLICY_VERSION):
        raise ParseError(f"{path}:1: unsupported version {head[1]}")

    header = {}
    row_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if parts[0] in ("hash", "step_s", "actions_kw", "soc_bins",
                        "price_bins", "hour_bins", "price_edges", "states"):
            header[parts[0]] = parts[1:]
        else:
            row_start = lineno
            break
    missing = {"hash", "step_s", "actions_kw", "soc_bins", "price_bins",
               "hour_bins", "price_edges", "states"} - set(header)
    if missing:
        raise ParseError(f"{path}: missing header keys {sorted(missing)}")

    try:
        step_s = int(header["step_s"][0])
        action_set = tuple(float(a) for a in header["actions_kw"])
        codec = StateCodec(
            price_edges=tuple(float(e) for e in header["price_edges"]),
            soc_bins=int(header["soc_bins"][0]),
            price_bins=int(header["price_bins"][0]),
            hour_bins=int(header["hour_bins"][0]),
        )
        n_states = int(header["states"][0])
    except (ValueError, ConfigError) as exc:
        raise ParseError(f"{path}: bad header: {exc}") from None
    if n_states != codec.n_states:
        raise ParseError(
            f"{path}: states {n_states} does not match bin product "
            f"{codec.n_states}"
        )

    rows = lines[row_start - 1:] if row_start is not None else []
    if len(rows) != n_states:
        raise ParseError(
            f"{path}: expected {n_states} state rows, found {len(rows)}"
        )
    actions = np.zeros(n_states, dtype=np.int64)
    seen = set()
    for offset, line in enumerate(rows):
        parts = line.split()
        try:
            s, a = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise ParseError(f"{path}: bad state row {line!r}") from None
        if len(parts) != 2 or not 0 <= s < n_states or s in seen:
            raise ParseError(f"{path}: bad state row {line!r}")
        if not 0 <= a < len(action_set):
            raise ParseError(
                f"{path}: action {a} outside [0, {len(action_set)}) in row {line!r}"
            )
        seen.add(s)
        actions[s] = a
    return TabularPolicy(
        codec=codec, actions=actions, action_set_kw=action_set,
        step_s=step_s, config_hash=header["hash"][0],
    )


# -- threshold baseline ------------------------------------------------------


@dataclass(frozen=True)
class ThresholdPolicy:
    """Charge below one price, discharge above another, else idle."""

    buy_below: float
    sell_above: float
    action_set_kw: tuple = (-1.0, 0.0, 1.0)

    def act(self, step_index: int, observation) -> int:
        price = observation[1] * PRICE_NORM_EUR_MWH
        actions = self.action_set_kw
        if price < self.buy_below:
            return actions.index(max(actions))
        if price > self.sell_above:
            return actions.index(min(actions))
        return actions.index(0.0)


def threshold_policy(buy_below: float, sell_above: float,
                     action_set_kw=(-1.0, 0.0, 1.0)) -> ThresholdPolicy:
    if buy_below > sell_above:
        raise ValueError(
            f"buy_below {buy_below} must not exceed sell_above {sell_above}"
        )
    return ThresholdPolicy(
        buy_below=buy_below, sell_above=sell_above,
        action_set_kw=tuple(float(a) for a in action_set_kw),
    )


# -- rollout -----------------------------------------------------------------


def rollout(env, policy, seed: int = 0, keep_soc: bool = False):
    """Run one greedy episode; returns the environment's EpisodeRecord.

    Transport failures propagate after the record is marked truncated.
    """
    obs, _ = env.reset(seed=seed, keep_soc=keep_soc)
    step_index = 0
    terminated = truncated = False
    while not (terminated or truncated):
        action = policy.act(step_index, obs)
        obs, _, terminated, truncated, _ = env.step(action)
        step_index += 1
    return env.record
