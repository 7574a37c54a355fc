"""Seeded training/evaluation runs, metrics files and checkpoints.

Files written into ``cfg.out`` by ``run_training``:

config.txt              the resolved configuration (key=value)
metrics.csv             one row per finished episode, appended and flushed
metrics.json            the same numbers, written at the end of the run
checkpoint_epNNNNNN.ckpt  every ``checkpoint_every`` episodes
checkpoint.ckpt         final parameters
run_info.json           wall-clock timings (the only non-reproducible file)

metrics.csv columns: episode, return_agent0 .. return_agent{N-1},
mean_return, moving_mean. ``return_agent{i}`` is the undiscounted sum of agent
i's rewards over the episode, ``mean_return`` its mean over agents and
``moving_mean`` the trailing mean of ``mean_return`` over ``smooth`` episodes.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import envs
from .marl import ALGORITHMS, LearnerConfig, Team, Transition, config_hash, load_checkpoint, save_checkpoint

# keys that fix the parameter layout; a checkpoint is only valid for these
ARCH_KEYS = ("scenario", "algo", "depth", "window", "rnn_hidden", "d_model", "heads", "d_ff",
             "mlp_width", "actor_encoder", "sinusoidal")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "coop_nav"
    algo: str = "hrtmaddpg"
    depth: int = 2
    episode_length: int = envs.EPISODE_LENGTH
    train_episodes: int = 2000
    eval_episodes: int = 200
    seed: int = 0
    out: str = "runs/default"
    checkpoint_every: int = 500
    smooth: int = 100
    literal_goals: bool = False
    window: int = 8
    rnn_hidden: int = 64
    d_model: int = 64
    heads: int = 4
    d_ff: int = 64
    mlp_width: int = 64
    gamma: float = 0.95
    tau: float = 0.01
    lr: float = 1e-2
    batch_size: int = 1024
    buffer_capacity: int = 1_000_000
    learn_every: int = 100
    noise_start: float = 0.1
    noise_end: float = 0.01
    gumbel_temperature: float = 1.0
    grad_clip: float = 0.5
    action_reg: float = 1e-3
    encoder_lr: float = 1e-3
    actor_encoder: bool = False
    sinusoidal: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in envs.SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if not 1 <= self.depth <= 5:
            raise ConfigError(f"depth must be in 1..5, got {self.depth}")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if self.train_episodes < 0 or self.eval_episodes < 0:
            raise ConfigError("episode counts must be nonnegative")
        if self.smooth < 1:
            raise ConfigError("smooth must be >= 1")
        if self.checkpoint_every < 1 or self.learn_every < 1 or self.batch_size < 1:
            raise ConfigError("checkpoint_every, learn_every and batch_size must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.lr <= 0.0 or self.encoder_lr <= 0.0:
            raise ConfigError("learning rates must be positive")
        if self.action_reg < 0.0:
            raise ConfigError("action_reg must be >= 0")

    def learner(self) -> LearnerConfig:
        names = {f.name for f in dataclasses.fields(LearnerConfig)}
        return LearnerConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt_value(v)}\n" for k, v in dataclasses.asdict(self).items())

    def arch_hash(self) -> str:
        d = dataclasses.asdict(self)
        if self.algo != "hrtmaddpg" and not self.actor_encoder:
            d["depth"] = 0
        return config_hash("".join(f"{k}={_fmt_value(d[k])}\n" for k in ARCH_KEYS))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, FIELD_TYPES[key], raw)
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for k, v in overrides.items():
        if k not in FIELD_TYPES:
            raise ConfigError(f"unknown key {k!r}")
        if v is not None:
            values[k] = v
    return ExperimentConfig(**values)


# -------------------------------------------------------------------- RNG

STREAMS = ("init", "env", "noise", "sample", "eval_env", "eval_policy")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators derived from one run seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


# ---------------------------------------------------------------- metrics

@dataclass
class RunMetrics:
    returns: np.ndarray                 # (episodes, agents)
    seed: int
    config: dict = field(default_factory=dict)
    smooth: int = 100
    wall_clock: float = 0.0
    buffer_size: int = 0

    @property
    def n_agents(self) -> int:
        return self.returns.shape[1]

    @property
    def mean_return(self) -> np.ndarray:
        return self.returns.mean(axis=1) if len(self.returns) else np.zeros(0)

    @property
    def moving_mean(self) -> np.ndarray:
        return trailing_mean(self.mean_return, self.smooth)

    def columns(self) -> list[str]:
        return metric_columns(self.n_agents)


def metric_columns(n_agents: int) -> list[str]:
    return ["episode"] + [f"return_agent{i}" for i in range(n_agents)] + ["mean_return", "moving_mean"]


def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for k in range(len(x)):
        out[k] = x[max(0, k - window + 1):k + 1].mean()
    return out


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _metric_row(episode: int, ret: np.ndarray, mean: float, moving: float) -> list[str]:
    return [str(episode)] + [fmt_float(v) for v in ret] + [fmt_float(mean), fmt_float(moving)]


def _json_dump(obj, indent: int = 0) -> str:
    """JSON with every float written at 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("non-finite float in metrics")
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = [f"{inner}{json.dumps(str(k))}: {_json_dump(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}" if items else "{}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json_dump(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _json_dump(v, indent + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def export_metrics(m: RunMetrics, path, format: str = "csv"):
    path = Path(path)
    mean, moving = m.mean_return, m.moving_mean
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(m.columns())
            for k in range(len(m.returns)):
                w.writerow(_metric_row(k + 1, m.returns[k], mean[k], moving[k]))
    elif format == "json":
        doc = {
            "seed": m.seed,
            "smooth": m.smooth,
            "n_agents": m.n_agents,
            "columns": m.columns(),
            "config": m.config,
            "episode": list(range(1, len(m.returns) + 1)),
            "returns": [[float(v) for v in row] for row in m.returns],
            "mean_return": [float(v) for v in mean],
            "moving_mean": [float(v) for v in moving],
        }
        path.write_text(_json_dump(doc) + "\n")
    else:
        raise ValueError(f"unknown metrics format {format!r}")


def read_metrics(path) -> RunMetrics:
    """Parse a metrics file written by ``export_metrics`` or a training run."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        returns = np.array(doc["returns"], dtype=np.float64).reshape(-1, doc["n_agents"])
        return RunMetrics(returns=returns, seed=doc["seed"], config=doc.get("config", {}), smooth=doc["smooth"])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty metrics file")
    header = rows[0]
    n = sum(c.startswith("return_agent") for c in header)
    if header != metric_columns(n):
        raise ValueError(f"{path}: unexpected header {header}")
    returns = np.array([[float(v) for v in r[1:1 + n]] for r in rows[1:]], dtype=np.float64).reshape(-1, n)
    return RunMetrics(returns=returns, seed=-1)


# ----------------------------------------------------------------- running

def noise_sigma(cfg: ExperimentConfig, episode: int) -> float:
    """Linear decay from noise_start to noise_end across the training episodes."""
    if cfg.train_episodes <= 1:
        return cfg.noise_start
    frac = min(1.0, episode / (cfg.train_episodes - 1))
    return cfg.noise_start + frac * (cfg.noise_end - cfg.noise_start)


def make_team(cfg: ExperimentConfig) -> Team:
    return Team(cfg.scenario, cfg.learner(), rng_streams(cfg.seed)["init"])


def run_training(cfg: ExperimentConfig, progress: Callable[[int, float], None] | None = None,
                 progress_every: int = 100) -> RunMetrics:
    """Full training loop: collect, store, learn, checkpoint; metrics flushed every episode."""
    cfg.validate()
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    rngs = rng_streams(cfg.seed)
    team = Team(cfg.scenario, cfg.learner(), rngs["init"])
    buffer = team.new_buffer()
    chash = cfg.arch_hash()
    n = team.n
    returns = np.zeros((cfg.train_episodes, n))
    total_steps = 0
    updates = 0
    means: list[float] = []

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metric_columns(n))
        fh.flush()
        for ep in range(cfg.train_episodes):
            team.set_noise(noise_sigma(cfg, ep))
            env_seed = int(rngs["env"].integers(2 ** 63))
            state = envs.scenario_init(cfg.scenario, env_seed, cfg.episode_length, cfg.literal_goals)
            obs = envs.observe_all(state)
            windows = [w.push(o) for w, o in zip(team.new_windows(), obs)]
            done = False
            while not done:
                acts = team.select_actions(obs, windows, explore=True, rng=rngs["noise"])
                state, obs2, rew, done = envs.world_step(state, acts)
                windows2 = [w.push(o) for w, o in zip(windows, obs2)]
                buffer.store(Transition(s=obs, h=[w.data for w in windows], a=acts, r=np.array(rew),
                                        s2=obs2, h2=[w.data for w in windows2]))
                returns[ep] += rew
                total_steps += 1
                if total_steps % cfg.learn_every == 0 and len(buffer) >= cfg.batch_size:
                    team.update(buffer, rngs["sample"])
                    updates += 1
                obs, windows = obs2, windows2
            means.append(float(returns[ep].mean()))
            moving = float(np.mean(means[-cfg.smooth:]))
            writer.writerow(_metric_row(ep + 1, returns[ep], means[-1], moving))
            fh.flush()
            if (ep + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_ep{ep + 1:06d}.ckpt", team.named_state(), chash)
            if progress is not None and (ep + 1) % progress_every == 0:
                progress(ep + 1, moving)

    save_checkpoint(out / "checkpoint.ckpt", team.named_state(), chash)
    # the output location is not part of a run's identity; leaving it out keeps
    # metrics from identical runs in different directories byte-identical
    snapshot = {k: _fmt_value(v) for k, v in dataclasses.asdict(cfg).items() if k != "out"}
    metrics = RunMetrics(returns=returns, seed=cfg.seed, config=snapshot, smooth=cfg.smooth,
                         wall_clock=time.perf_counter() - t0, buffer_size=len(buffer))
    export_metrics(metrics, out / "metrics.json", "json")
    (out / "run_info.json").write_text(json.dumps({
        "wall_clock_s": metrics.wall_clock, "updates": updates, "env_steps": total_steps,
        "buffer_size": len(buffer)}, indent=2) + "\n")
    return metrics


@dataclass
class EvalReport:
    scenario: str
    policy: str                         # "checkpoint" or "random"
    episode_returns: np.ndarray         # (episodes, agents)

    @property
    def mean(self) -> np.ndarray:
        return self.episode_returns.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.episode_returns.std(axis=0)

    @property
    def overall_mean(self) -> float:
        return float(self.episode_returns.mean())

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "policy": self.policy,
            "episodes": int(self.episode_returns.shape[0]),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "overall_mean": self.overall_mean,
            "episode_returns": [[float(v) for v in r] for r in self.episode_returns],
        }

    def write(self, path):
        Path(path).write_text(_json_dump(self.to_dict()) + "\n")

    @classmethod
    def read(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        ret = np.array(d["episode_returns"], dtype=np.float64).reshape(d["episodes"], -1)
        return cls(scenario=d["scenario"], policy=d["policy"], episode_returns=ret)


def random_action(spec: envs.AgentSpec, rng: np.random.Generator) -> np.ndarray:
    parts = []
    if spec.move_dim:
        parts.append(rng.uniform(-1.0, 1.0, size=spec.move_dim))
    if spec.comm_dim:
        parts.append(rng.dirichlet(np.ones(spec.comm_dim)))
    return np.concatenate(parts)


def run_evaluation(cfg: ExperimentConfig, checkpoint=None, force: bool = False) -> EvalReport:
    """Exploration-free rollouts of a frozen checkpoint (or of a uniform random
    policy when ``checkpoint`` is None)."""
    rngs = rng_streams(cfg.seed)
    team = None
    if checkpoint is not None:
        team = Team(cfg.scenario, cfg.learner(), rngs["init"])
        entries, _ = load_checkpoint(checkpoint, cfg.arch_hash(), force=force)
        team.load_state(entries)
    specs = envs.agent_specs(cfg.scenario)
    n = len(specs)
    returns = np.zeros((cfg.eval_episodes, n))
    env_rng, pol_rng = rngs["eval_env"], rngs["eval_policy"]
    for ep in range(cfg.eval_episodes):
        state = envs.scenario_init(cfg.scenario, int(env_rng.integers(2 ** 63)), cfg.episode_length,
                                   cfg.literal_goals)
        obs = envs.observe_all(state)
        windows = None
        if team is not None:
            windows = [w.push(o) for w, o in zip(team.new_windows(), obs)]
        done = False
        while not done:
            if team is None:
                acts = [random_action(sp, pol_rng) for sp in specs]
            else:
                acts = team.select_actions(obs, windows, explore=False)
            state, obs, rew, done = envs.world_step(state, acts)
            if team is not None:
                windows = [w.push(o) for w, o in zip(windows, obs)]
            returns[ep] += rew
    return EvalReport(cfg.scenario, "random" if team is None else "checkpoint", returns)
