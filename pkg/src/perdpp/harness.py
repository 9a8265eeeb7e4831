"""Training loop for the three agents and the convergence metrics."""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .elastic import ElasticConfig, ElasticStepper
from .env import N_ACTIONS, STATE_DIM, GridMap, observe, path_metrics, read_map, step
from .qnet import (
    QNetwork,
    TrainConfig,
    TrainingError,
    select_action_epsilon_greedy,
    sync_target,
    td_error_multistep,
    train_step,
)
from .replay import KernelConfig, PrioritizedReplayBuffer, Transition, diverse_positions

log = logging.getLogger(__name__)

ALGORITHMS = ("dqn", "elastic", "per-dpp-elastic")
CONVERGENCE_WINDOW = 10
STREAMS = {"init": 0, "explore": 1, "replay": 2}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    map: str = "map1-dense-random"
    algorithm: str = "per-dpp-elastic"
    seed: int = 0
    epochs: int = 80
    episodes_per_epoch: int = 30
    max_steps: int = 200
    # replay
    buffer_capacity: int = 10_000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    priority_eps: float = 0.01
    candidate_size: int = 128
    batch_size: int = 32
    sigma: float = 1.0
    jitter: float = 1e-6
    use_quality: bool = False
    # network
    hidden: int = 64
    lr: float = 1e-3
    gamma: float = 0.9
    target_sync: int = 100
    grad_clip: float = 10.0
    train_every: int = 1
    # elastic
    min_cluster_size: int = 5
    bank_capacity: int = 256
    d_max: int = 8
    cluster_every: int = 1
    # exploration
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5

    def validate(self) -> "ExperimentConfig":
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}")
        need(self.epochs >= CONVERGENCE_WINDOW, f"epochs must be at least {CONVERGENCE_WINDOW}")
        need(self.episodes_per_epoch >= 1, "episodes_per_epoch must be at least 1")
        need(self.max_steps >= 1, "max_steps must be at least 1")
        need(self.buffer_capacity >= 1, "buffer_capacity must be at least 1")
        need(0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]")
        need(0.0 <= self.beta_start <= 1.0 and 0.0 <= self.beta_end <= 1.0, "beta must lie in [0, 1]")
        need(self.priority_eps > 0, "priority_eps must be positive")
        need(self.batch_size >= 1, "batch_size must be at least 1")
        need(self.candidate_size >= self.batch_size, "candidate_size must be at least batch_size")
        need(self.sigma > 0, "sigma must be positive")
        need(self.jitter >= 0, "jitter must be non-negative")
        need(self.hidden >= 1, "hidden must be at least 1")
        need(self.lr >= 0, "lr must be non-negative")
        need(0.0 < self.gamma < 1.0, "gamma must lie in (0, 1)")
        need(self.target_sync >= 1, "target_sync must be at least 1")
        need(self.grad_clip >= 0, "grad_clip must be non-negative")
        need(self.train_every >= 1, "train_every must be at least 1")
        need(self.min_cluster_size >= 2, "min_cluster_size must be at least 2")
        need(self.bank_capacity >= 2 * self.min_cluster_size, "bank_capacity must be at least 2 * min_cluster_size")
        need(self.d_max >= 0, "d_max must be non-negative")
        need(self.cluster_every >= 1, "cluster_every must be at least 1")
        need(0.0 <= self.eps_end <= self.eps_start <= 1.0, "need 0 <= eps_end <= eps_start <= 1")
        need(0.0 < self.eps_decay_fraction <= 1.0, "eps_decay_fraction must lie in (0, 1]")
        return self

    @property
    def total_episodes(self) -> int:
        return self.epochs * self.episodes_per_epoch

    def epsilon(self, episode: int) -> float:
        span = self.eps_decay_fraction * self.total_episodes
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def beta(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.total_episodes - 1))
        return self.beta_start + frac * (self.beta_end - self.beta_start)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: str | None = None, **overrides) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    for key, value in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            values[key] = value
    cfg = ExperimentConfig(**values)
    if base_dir and "map" in values:
        candidate = os.path.join(base_dir, cfg.map)
        if os.path.exists(candidate):
            cfg.map = candidate
    return cfg.validate()


def load_config(path: str, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)), **overrides)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


@dataclass
class EpochMetrics:
    epoch: int
    success_rate: float
    mean_return: float
    mean_length: float


@dataclass
class EpisodeRecord:
    epoch: int
    episode: int
    success: bool
    episode_return: float
    length: int


@dataclass
class RunReport:
    algorithm: str
    map: str
    seed: int
    epochs: list = field(default_factory=list)
    final_rate: float | None = None
    first_epoch: int | None = None
    best_path: list = field(default_factory=list)
    best_length: int = 0
    best_turns: int = 0
    reached_goal: bool = False
    episodes: list = field(default_factory=list)

    def success_rates(self) -> list[float]:
        return [m.success_rate for m in self.epochs]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["epochs"] = [EpochMetrics(**m) for m in data.get("epochs", [])]
        data["episodes"] = [EpisodeRecord(**e) for e in data.get("episodes", [])]
        data["best_path"] = [tuple(c) for c in data.get("best_path", [])]
        return cls(**data)


def compute_convergence(report_or_rates) -> tuple[float, int]:
    """Mean success rate of the last 10 epochs and the first epoch reaching it."""
    rates = (report_or_rates.success_rates() if isinstance(report_or_rates, RunReport)
             else [float(r) for r in report_or_rates])
    if len(rates) < CONVERGENCE_WINDOW:
        raise ValueError(f"need at least {CONVERGENCE_WINDOW} epochs, got {len(rates)}")
    rate = math.fsum(rates[-CONVERGENCE_WINDOW:]) / CONVERGENCE_WINDOW
    # a rate equal to the mean up to summation rounding counts as reaching it
    tol = 1e-12 * max(1.0, abs(rate))
    first = next(i for i, r in enumerate(rates) if r >= rate - tol)
    return rate, first


def rng_streams(seed: int) -> dict:
    return {name: np.random.default_rng([seed, sid]) for name, sid in STREAMS.items()}


def greedy_rollout(net: QNetwork, grid: GridMap, max_steps: int = 200):
    """Follow argmax actions from the start; returns (cells, reached_goal)."""
    pos = grid.start
    state = observe(grid, pos)
    cells = [pos]
    for _ in range(max_steps):
        a = int(np.argmax(net.forward(state.encode())))
        out = step(grid, pos, a)
        if out.event == "collision":
            return cells, False
        pos, state = out.position, out.state
        cells.append(pos)
        if out.terminal:
            return cells, out.event == "goal"
    return cells, False


class Trainer:
    """Runs one configured experiment; keeps the networks and buffer for inspection."""

    def __init__(self, config: ExperimentConfig, grid: GridMap | None = None,
                 record_transitions: bool = False):
        self.config = config.validate()
        self.grid = grid if grid is not None else read_map(config.map)
        cfg = self.config
        self.rng = rng_streams(cfg.seed)
        self.main = QNetwork((STATE_DIM, cfg.hidden, cfg.hidden, N_ACTIONS), rng=self.rng["init"])
        self.target = self.main.copy()
        self.train_cfg = TrainConfig(cfg.lr, cfg.gamma, cfg.target_sync, cfg.hidden, cfg.grad_clip)
        self.use_dpp = cfg.algorithm == "per-dpp-elastic"
        self.use_elastic = cfg.algorithm in ("elastic", "per-dpp-elastic")
        # baselines replay uniformly from the same buffer implementation
        alpha = cfg.alpha if self.use_dpp else 0.0
        self.buffer = PrioritizedReplayBuffer(cfg.buffer_capacity, alpha, cfg.priority_eps)
        self.kernel_cfg = KernelConfig(cfg.sigma, cfg.jitter, cfg.use_quality)
        self.stepper = ElasticStepper(
            ElasticConfig(cfg.gamma, cfg.d_max, cfg.min_cluster_size, cfg.bank_capacity,
                          cfg.cluster_every), N_ACTIONS)
        self.updates = 0
        self.env_steps = 0
        self.transitions = [] if record_transitions else None
        self.commit_steps = []

    def _store(self, t: Transition) -> None:
        if self.transitions is not None:
            self.transitions.append(t)
        self.commit_steps.append(t.steps)

    def learn(self, beta: float) -> None:
        cfg = self.config
        if self.use_dpp:
            cand = self.buffer.sample_proportional(cfg.candidate_size, beta, self.rng["replay"])
            td = td_error_multistep(cand, self.main, self.target, cfg.gamma)
            self.buffer.update_priorities(cand.indices, td)
            picked = diverse_positions(self.buffer, cand, cfg.batch_size, self.kernel_cfg)
            # the loss is a sum, so train in candidate order
            batch = cand.subset(np.sort(picked))
            train_step(self.main, self.target, batch, self.train_cfg)
        else:
            batch = self.buffer.sample_proportional(cfg.batch_size, beta, self.rng["replay"])
            td = train_step(self.main, self.target, batch, self.train_cfg)
            self.buffer.update_priorities(batch.indices, td)
        self.updates += 1
        if self.updates % cfg.target_sync == 0:
            sync_target(self.main, self.target)

    def run_episode(self, epoch: int, episode: int, global_episode: int) -> EpisodeRecord:
        cfg, grid = self.config, self.grid
        eps = cfg.epsilon(global_episode)
        beta = cfg.beta(global_episode)
        pos = grid.start
        state = observe(grid, pos)
        total, length, success = 0.0, 0, False
        for t in range(cfg.max_steps):
            a = select_action_epsilon_greedy(self.main, state, eps, self.rng["explore"])
            out = step(grid, pos, a)
            total += out.reward
            length += 1
            self.env_steps += 1
            episode_end = out.terminal or t == cfg.max_steps - 1
            if self.use_elastic:
                self.stepper.begin(state, a)
                q_now = self.main.forward(self.stepper.acc.state.encode())
                q_next = self.main.forward(out.state.encode())
                dec = self.stepper.step(out.reward, q_now, q_next, out.state, out.terminal,
                                        episode_end, self.buffer)
                if dec.committed:
                    self._store(dec.transition)
            else:
                tr = Transition(state, a, out.reward, out.state, 0, out.terminal)
                self.buffer.push(tr)
                self._store(tr)
            if len(self.buffer) >= cfg.batch_size and self.env_steps % cfg.train_every == 0:
                self.learn(beta)
            pos, state = out.position, out.state
            if out.terminal:
                success = out.event == "goal"
                break
        if not self.stepper.acc.empty:
            raise RuntimeError("elastic accumulator not flushed at episode end")
        return EpisodeRecord(epoch, episode, success, total, length)

    def run(self) -> RunReport:
        cfg = self.config
        report = RunReport(cfg.algorithm, self.grid.name or str(cfg.map), cfg.seed)
        g = 0
        for epoch in range(cfg.epochs):
            records = []
            for ep in range(cfg.episodes_per_epoch):
                try:
                    records.append(self.run_episode(epoch, ep, g))
                except TrainingError as exc:
                    raise TrainingError(
                        f"{exc} (epoch {epoch}, episode {ep}, update {self.updates})") from exc
                g += 1
            report.episodes.extend(records)
            n = len(records)
            report.epochs.append(EpochMetrics(
                epoch,
                sum(r.success for r in records) / n,
                math.fsum(r.episode_return for r in records) / n,
                sum(r.length for r in records) / n,
            ))
            log.debug("epoch %d success %.3f", epoch, report.epochs[-1].success_rate)
        report.final_rate, report.first_epoch = compute_convergence(report)
        cells, reached = greedy_rollout(self.main, self.grid, cfg.max_steps)
        report.best_path = cells
        report.best_length, report.best_turns = path_metrics(cells)
        report.reached_goal = reached
        return report


def run_experiment(config: ExperimentConfig, grid: GridMap | None = None) -> RunReport:
    return Trainer(config, grid).run()
