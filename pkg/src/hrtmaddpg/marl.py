"""MADDPG, RMADDPG and HRTMADDPG learners.

The three algorithms differ only in what the critic sees besides the joint
observation and joint action:

maddpg      nothing
rmaddpg     the final hidden state of a per-agent RNN run over each agent's
            observation window
hrtmaddpg   the pooled output of a per-agent ``EncoderStack`` (step-level RNN
            plus N transformer blocks) over each agent's window

Actors of rmaddpg/hrtmaddpg read their own observation plus the final RNN
hidden state of their own window; ``actor_encoder=True`` swaps that RNN for an
``EncoderStack``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import envs
from . import numcore as nc
from . import nets
from .numcore import Tensor

ALGORITHMS = ("maddpg", "rmaddpg", "hrtmaddpg")


@dataclass(frozen=True)
class LearnerConfig:
    algo: str = "hrtmaddpg"
    depth: int = 2
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
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.algo == "hrtmaddpg" and self.depth < 1:
            raise ValueError("hrtmaddpg needs depth >= 1")

    @property
    def encoder_depth(self) -> int:
        return self.depth if self.algo == "hrtmaddpg" else 0


# ------------------------------------------------------------------ history

class ObservationWindow:
    """The K most recent observations of one agent, oldest first.

    Starts as all zeros; ``push`` returns a new window and leaves this one
    untouched.
    """

    def __init__(self, k: int, obs_dim: int, data: np.ndarray | None = None):
        self.k, self.obs_dim = k, obs_dim
        self.data = np.zeros((k, obs_dim)) if data is None else data

    def push(self, obs: np.ndarray) -> "ObservationWindow":
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise nc.ShapeError(f"observation {obs.shape}, window expects ({self.obs_dim},)")
        data = np.empty_like(self.data)
        data[:-1] = self.data[1:]
        data[-1] = obs
        return ObservationWindow(self.k, self.obs_dim, data)

    def array(self) -> np.ndarray:
        return self.data.copy()


@dataclass
class Transition:
    s: list[np.ndarray]
    h: list[np.ndarray]         # per agent (K, obs)
    a: list[np.ndarray]
    r: np.ndarray               # (N,)
    s2: list[np.ndarray]
    h2: list[np.ndarray]


@dataclass
class Batch:
    s: list[np.ndarray]         # per agent (B, obs)
    h: list[np.ndarray]         # per agent (B, K, obs)
    a: list[np.ndarray]         # per agent (B, act)
    r: np.ndarray               # (B, N)
    s2: list[np.ndarray]
    h2: list[np.ndarray]

    def __len__(self):
        return self.r.shape[0]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions.

    Storage is preallocated per field and grows by doubling up to the capacity.
    """

    def __init__(self, capacity: int, obs_dims: Sequence[int], act_dims: Sequence[int], window: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dims, self.act_dims, self.window = list(obs_dims), list(act_dims), window
        self.size = 0
        self.cursor = 0
        self._alloc = 0
        self._fields: dict[str, list[np.ndarray]] = {}
        self._r = np.zeros((0, len(obs_dims)))
        self._grow(min(capacity, 1024))

    def __len__(self):
        return self.size

    def _grow(self, n: int):
        def resize(arr, shape):
            out = np.zeros((n,) + shape)
            out[:self._alloc] = arr[:self._alloc]
            return out

        shapes = {
            "s": [(d,) for d in self.obs_dims], "s2": [(d,) for d in self.obs_dims],
            "h": [(self.window, d) for d in self.obs_dims], "h2": [(self.window, d) for d in self.obs_dims],
            "a": [(d,) for d in self.act_dims],
        }
        for name, per_agent in shapes.items():
            old = self._fields.get(name, [np.zeros((0,) + sh) for sh in per_agent])
            self._fields[name] = [resize(o, sh) for o, sh in zip(old, per_agent)]
        self._r = resize(self._r, (len(self.obs_dims),))
        self._alloc = n

    def _check(self, t: Transition):
        n = len(self.obs_dims)
        for name in ("s", "s2", "h", "h2", "a"):
            if len(getattr(t, name)) != n:
                raise nc.ShapeError(f"transition field {name} has {len(getattr(t, name))} agents, expected {n}")
        for i in range(n):
            d, k, ad = self.obs_dims[i], self.window, self.act_dims[i]
            if (np.shape(t.s[i]) != (d,) or np.shape(t.s2[i]) != (d,) or np.shape(t.h[i]) != (k, d)
                    or np.shape(t.h2[i]) != (k, d) or np.shape(t.a[i]) != (ad,)):
                raise nc.ShapeError(f"transition shapes for agent {i} do not match the buffer")
        if np.shape(t.r) != (n,):
            raise nc.ShapeError(f"reward shape {np.shape(t.r)}, expected ({n},)")

    def store(self, t: Transition):
        self._check(t)
        if self.cursor >= self._alloc:
            self._grow(min(self.capacity, 2 * self._alloc))
        c = self.cursor
        for name in ("s", "s2", "h", "h2", "a"):
            for arr, v in zip(self._fields[name], getattr(t, name)):
                arr[c] = v
        self._r[c] = t.r
        self.cursor = (c + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, index: int) -> Transition:
        """Transition by age: 0 is the oldest stored."""
        if not 0 <= index < self.size:
            raise IndexError(index)
        slot = (self.cursor - self.size + index) % self.capacity
        f = self._fields
        return Transition(
            s=[x[slot].copy() for x in f["s"]], h=[x[slot].copy() for x in f["h"]],
            a=[x[slot].copy() for x in f["a"]], r=self._r[slot].copy(),
            s2=[x[slot].copy() for x in f["s2"]], h2=[x[slot].copy() for x in f["h2"]])

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform slot indices, with replacement."""
        if self.size < batch or self.size == 0:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch}")
        return rng.integers(0, self.size, size=batch)

    def gather(self, slots: np.ndarray) -> Batch:
        f = self._fields
        return Batch(s=[x[slots] for x in f["s"]], h=[x[slots] for x in f["h"]],
                     a=[x[slots] for x in f["a"]], r=self._r[slots],
                     s2=[x[slots] for x in f["s2"]], h2=[x[slots] for x in f["h2"]])

    def sample_batch(self, batch: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.sample_indices(batch, rng))

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        slots = self.sample_indices(batch, rng)
        b = self.gather(slots)
        return [Transition(s=[x[j] for x in b.s], h=[x[j] for x in b.h], a=[x[j] for x in b.a],
                           r=b.r[j], s2=[x[j] for x in b.s2], h2=[x[j] for x in b.h2])
                for j in range(len(slots))]


def buffer_store(b: ReplayBuffer, t: Transition):
    b.store(t)


def buffer_sample(b: ReplayBuffer, batch: int, rng: np.random.Generator) -> list[Transition]:
    return b.sample(batch, rng)


# ----------------------------------------------------------------- networks

@dataclass
class ActorParams:
    mlp: nets.MlpParams
    rnn: nets.RnnParams | None = None
    encoder: nets.EncoderStack | None = None


@dataclass
class CriticParams:
    mlp: nets.MlpParams
    rnns: list[nets.RnnParams] | None = None
    encoders: list[nets.EncoderStack] | None = None


def _actor_init(rng, cfg: LearnerConfig, obs_dim: int, spec: envs.AgentSpec) -> ActorParams:
    rnn = enc = None
    extra = 0
    if cfg.algo != "maddpg":
        if cfg.actor_encoder:
            enc = nets.encoder_init(rng, obs_dim, max(cfg.depth, 1), cfg.rnn_hidden, cfg.d_model,
                                    cfg.heads, cfg.d_ff, cfg.sinusoidal)
            extra = cfg.d_model
        else:
            rnn = nets.rnn_init(rng, obs_dim, cfg.rnn_hidden)
            extra = cfg.rnn_hidden
    w = cfg.mlp_width
    mlp = nets.mlp_init(rng, [obs_dim + extra, w, w, spec.action_dim], ["relu", "relu", "none"])
    return ActorParams(mlp=mlp, rnn=rnn, encoder=enc)


def _critic_init(rng, cfg: LearnerConfig, obs_dims: Sequence[int], act_dims: Sequence[int]) -> CriticParams:
    rnns = encs = None
    extra = 0
    if cfg.algo == "rmaddpg":
        rnns = [nets.rnn_init(rng, d, cfg.rnn_hidden) for d in obs_dims]
        extra = cfg.rnn_hidden * len(obs_dims)
    elif cfg.algo == "hrtmaddpg":
        encs = [nets.encoder_init(rng, d, cfg.depth, cfg.rnn_hidden, cfg.d_model, cfg.heads, cfg.d_ff,
                                  cfg.sinusoidal) for d in obs_dims]
        extra = cfg.d_model * len(obs_dims)
    w = cfg.mlp_width
    mlp = nets.mlp_init(rng, [extra + sum(obs_dims) + sum(act_dims), w, w, 1], ["relu", "relu", "none"])
    return CriticParams(mlp=mlp, rnns=rnns, encoders=encs)


def actor_logits(p: ActorParams, obs: Tensor, window: Tensor) -> Tensor:
    if p.encoder is not None:
        feats = nc.concat([obs, nets.pooled_encode(p.encoder, window)], axis=-1)
    elif p.rnn is not None:
        feats = nc.concat([obs, nets.rnn_chain(p.rnn, window)[-1]], axis=-1)
    else:
        feats = obs
    return nets.mlp_forward(p.mlp, feats)


def actor_forward(p: ActorParams, spec: envs.AgentSpec, obs: Tensor, window: Tensor,
                  gumbel: np.ndarray | None = None, temperature: float = 1.0) -> Tensor:
    """Policy output: tanh movement components, softmax communication components.

    ``gumbel`` (same shape as the communication logits) turns the softmax into
    a Gumbel-softmax sample.
    """
    z = actor_logits(p, obs, window)
    parts = []
    if spec.move_dim:
        parts.append(nc.tanh(nc.slice_last(z, 0, spec.move_dim)))
    if spec.comm_dim:
        c = nc.slice_last(z, spec.move_dim, spec.action_dim)
        if gumbel is not None:
            c = nc.scale(nc.add(c, Tensor(gumbel)), 1.0 / temperature)
        parts.append(nc.softmax(c, axis=-1))
    return parts[0] if len(parts) == 1 else nc.concat(parts, axis=-1)


def critic_context(p: CriticParams, windows: Sequence[Tensor]) -> list[Tensor]:
    """Per-agent history summaries fed to the critic head (empty for maddpg)."""
    if p.encoders is not None:
        return [nets.pooled_encode(e, w) for e, w in zip(p.encoders, windows)]
    if p.rnns is not None:
        return [nets.rnn_chain(r, w)[-1] for r, w in zip(p.rnns, windows)]
    return []


def critic_head(p: CriticParams, context: Sequence[Tensor], obs: Sequence[Tensor],
                acts: Sequence[Tensor]) -> Tensor:
    x = nc.concat([*context, *obs, *acts], axis=-1)
    return nets.mlp_forward(p.mlp, x)


def critic_loss(critic: CriticParams, batch: Batch, y: np.ndarray) -> Tensor:
    """Batch mean of (y - Q(x))^2 over the stored joint observations and actions."""
    ctx = critic_context(critic, [Tensor(w) for w in batch.h])
    q = critic_head(critic, ctx, [Tensor(o) for o in batch.s], [Tensor(a) for a in batch.a])
    d = nc.sub(Tensor(y.reshape(-1, 1)), q)
    return nc.mean(nc.mul(d, d))


# ------------------------------------------------------------------ learner

@dataclass
class AgentLearner:
    spec: envs.AgentSpec
    actor: ActorParams
    critic: CriticParams
    target_actor: ActorParams
    target_critic: CriticParams
    actor_opt: nc.OptimizerState
    critic_opt: nc.OptimizerState
    noise_scale: float = 0.1


def _copy_tree(tree):
    return nc.tree_map(lambda t: Tensor(t.data.copy()), tree)


def _group_rates(params, encoder_field: str, cfg: LearnerConfig) -> tuple[float, ...]:
    """Per-leaf Adam rates: ``encoder_lr`` for EncoderStack parameters, ``lr``
    for the rest. Post-norm transformer blocks destabilise at the head's rate."""
    enc = {id(t) for t in nc.tree_leaves(getattr(params, encoder_field))}
    return tuple(cfg.encoder_lr if id(t) in enc else cfg.lr for t in nc.tree_leaves(params))


def _t(x) -> Tensor:
    return Tensor(x)


class Team:
    """All agent learners of one run plus the shared acting and update machinery."""

    def __init__(self, scenario: str, cfg: LearnerConfig, rng: np.random.Generator):
        self.scenario = scenario
        self.cfg = cfg
        self.specs = envs.agent_specs(scenario)
        self.obs_dims = envs.obs_dims(scenario)
        self.act_dims = [s.action_dim for s in self.specs]
        self.learners: list[AgentLearner] = []
        for d, spec in zip(self.obs_dims, self.specs):
            actor = _actor_init(rng, cfg, d, spec)
            critic = _critic_init(rng, cfg, self.obs_dims, self.act_dims)
            self.learners.append(AgentLearner(
                spec=spec, actor=actor, critic=critic,
                target_actor=_copy_tree(actor), target_critic=_copy_tree(critic),
                actor_opt=nc.adam_init(nc.tree_leaves(actor), lr=_group_rates(actor, "encoder", cfg)),
                critic_opt=nc.adam_init(nc.tree_leaves(critic), lr=_group_rates(critic, "encoders", cfg)),
                noise_scale=cfg.noise_start))

    @property
    def n(self) -> int:
        return len(self.learners)

    def new_windows(self) -> list[ObservationWindow]:
        return [ObservationWindow(self.cfg.window, d) for d in self.obs_dims]

    def new_buffer(self) -> ReplayBuffer:
        return ReplayBuffer(self.cfg.buffer_capacity, self.obs_dims, self.act_dims, self.cfg.window)

    def set_noise(self, sigma: float):
        for l in self.learners:
            l.noise_scale = sigma

    # -- acting

    def select_action(self, i: int, obs: np.ndarray, window: ObservationWindow, explore: bool,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        """Policy action for agent ``i`` on one observation.

        With ``explore`` the movement components get Gaussian noise of the
        learner's current scale and the communication components are
        Gumbel-softmax samples. Movement is clipped to [-1, 1].
        """
        l = self.learners[i]
        spec = l.spec
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dims[i],):
            raise nc.ShapeError(f"agent {i} observation {obs.shape}, expected ({self.obs_dims[i]},)")
        if explore and rng is None:
            raise ValueError("exploration needs an rng")
        gumbel = None
        if explore and spec.comm_dim:
            gumbel = rng.gumbel(size=(1, spec.comm_dim))
        a = actor_forward(l.actor, spec, _t(obs[None]), _t(window.data[None]), gumbel,
                          self.cfg.gumbel_temperature).data[0].copy()
        if spec.move_dim:
            if explore:
                a[:spec.move_dim] += rng.normal(0.0, l.noise_scale, size=spec.move_dim)
            a[:spec.move_dim] = np.clip(a[:spec.move_dim], -1.0, 1.0)
        return a

    def select_actions(self, obs: Sequence[np.ndarray], windows: Sequence[ObservationWindow],
                       explore: bool, rng: np.random.Generator | None = None) -> list[np.ndarray]:
        return [self.select_action(i, o, w, explore, rng) for i, (o, w) in enumerate(zip(obs, windows))]

    # -- learning pieces

    def target_actions(self, batch: Batch) -> list[Tensor]:
        """a'_k = mu'_k(s'_k, h'_k) for every agent, no gumbel noise."""
        return [actor_forward(l.target_actor, l.spec, _t(batch.s2[k]), _t(batch.h2[k]),
                              temperature=self.cfg.gumbel_temperature)
                for k, l in enumerate(self.learners)]

    def encode_critic_input(self, i: int, batch: Batch, use_targets: bool = False) -> Tensor:
        """Critic input x (or x' with ``use_targets``) for agent i's critic."""
        l = self.learners[i]
        if use_targets:
            critic, s, h = l.target_critic, batch.s2, batch.h2
            acts = self.target_actions(batch)
        else:
            critic, s, h = l.critic, batch.s, batch.h
            acts = [_t(a) for a in batch.a]
        ctx = critic_context(critic, [_t(w) for w in h])
        return nc.concat([*ctx, *[_t(o) for o in s], *acts], axis=-1)

    def compute_target(self, i: int, batch: Batch) -> np.ndarray:
        """y = r_i + gamma * Q'_i(x') with target networks, shape (B,)."""
        x2 = self.encode_critic_input(i, batch, use_targets=True)
        q2 = nets.mlp_forward(self.learners[i].target_critic.mlp, x2).data[:, 0]
        return batch.r[:, i] + self.cfg.gamma * q2

    def critic_loss(self, critic: CriticParams, batch: Batch, y: np.ndarray) -> Tensor:
        return critic_loss(critic, batch, y)

    def critic_update(self, i: int, batch: Batch, y: np.ndarray | None = None) -> float:
        """One Adam step on agent i's critic (head and encoders); returns the pre-step loss."""
        l = self.learners[i]
        if y is None:
            y = self.compute_target(i, batch)
        tape = nc.Tape()
        tracked = nc.watch_tree(tape, l.critic)
        loss = self.critic_loss(tracked, batch, y)
        grads = nc.backward(loss)
        leaves = nc.tree_leaves(tracked)
        g = [grads.get(t) for t in leaves]
        if self.cfg.grad_clip:
            g = nc.clip_grad_norm(g, self.cfg.grad_clip)
        new, l.critic_opt = nc.adam_step(nc.tree_leaves(l.critic), g, l.critic_opt)
        l.critic = nc.tree_unflatten(l.critic, new)
        return loss.item()

    def actor_objective(self, i: int, actor: ActorParams, batch: Batch,
                        gumbel: np.ndarray | None = None, context: list[Tensor] | None = None) -> Tensor:
        """mean_j Q_i(x_j) with a_i replaced by mu_i(s_i, h_i); other actions from the batch."""
        l = self.learners[i]
        if context is None:
            context = critic_context(l.critic, [_t(w) for w in batch.h])
        acts = [_t(a) for a in batch.a]
        acts[i] = actor_forward(actor, l.spec, _t(batch.s[i]), _t(batch.h[i]), gumbel,
                                self.cfg.gumbel_temperature)
        q = critic_head(l.critic, context, [_t(o) for o in batch.s], acts)
        return nc.mean(q)

    def actor_update(self, i: int, batch: Batch, rng: np.random.Generator | None = None) -> float:
        """One Adam ascent step on agent i's actor (minus ``action_reg`` times the mean
        squared pre-squash output); returns the pre-step objective."""
        l = self.learners[i]
        gumbel = None
        if l.spec.comm_dim and rng is not None:
            gumbel = rng.gumbel(size=(len(batch), l.spec.comm_dim))
        context = critic_context(l.critic, [_t(w) for w in batch.h])
        tape = nc.Tape()
        tracked = nc.watch_tree(tape, l.actor)
        obj = self.actor_objective(i, tracked, batch, gumbel, context)
        loss = nc.scale(obj, -1.0)
        if self.cfg.action_reg:
            # a small pull on the pre-squash outputs keeps tanh out of saturation,
            # where the critic's gradient vanishes and agents drift off at full force
            z = actor_logits(tracked, _t(batch.s[i]), _t(batch.h[i]))
            loss = nc.add(loss, nc.scale(nc.mean(nc.mul(z, z)), self.cfg.action_reg))
        grads = nc.backward(loss)
        leaves = nc.tree_leaves(tracked)
        g = [grads.get(t) for t in leaves]
        if self.cfg.grad_clip:
            g = nc.clip_grad_norm(g, self.cfg.grad_clip)
        new, l.actor_opt = nc.adam_step(nc.tree_leaves(l.actor), g, l.actor_opt)
        l.actor = nc.tree_unflatten(l.actor, new)
        return obj.item()

    def soft_update(self, tau: float | None = None):
        """theta' <- tau * theta + (1 - tau) * theta' for every target parameter."""
        tau = self.cfg.tau if tau is None else float(tau)
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        for l in self.learners:
            for online, target in ((l.actor, "target_actor"), (l.critic, "target_critic")):
                tgt = getattr(l, target)
                blended = [Tensor(tau * p.data + (1.0 - tau) * q.data)
                           for p, q in zip(nc.tree_leaves(online), nc.tree_leaves(tgt))]
                setattr(l, target, nc.tree_unflatten(tgt, blended))

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        """Per-agent critic and actor updates followed by the target blend."""
        stats = {"critic_loss": [], "actor_objective": []}
        for i in range(self.n):
            batch = buffer.sample_batch(self.cfg.batch_size, rng)
            stats["critic_loss"].append(self.critic_update(i, batch))
            stats["actor_objective"].append(self.actor_update(i, batch, rng))
        self.soft_update()
        return stats

    # -- parameters

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, l in enumerate(self.learners):
            for part in ("actor", "critic", "target_actor", "target_critic"):
                out += nc.tree_named(getattr(l, part), f"agent{i}.{part}")
        return out

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus optimizer moments and step counters."""
        out = [(n, t.data) for n, t in self.named_params()]
        for i, l in enumerate(self.learners):
            for part in ("actor_opt", "critic_opt"):
                st = getattr(l, part)
                out += [(f"agent{i}.{part}.m.{k}", m) for k, m in enumerate(st.m)]
                out += [(f"agent{i}.{part}.v.{k}", v) for k, v in enumerate(st.v)]
                out.append((f"agent{i}.{part}.step", np.array([float(st.step)])))
        return out

    def load_state(self, entries: dict[str, np.ndarray]):
        names = [n for n, _ in self.named_state()]
        missing = [n for n in names if n not in entries]
        extra = sorted(set(entries) - set(names))
        if missing or extra:
            raise CheckpointError(f"checkpoint layout differs: missing {missing[:3]}, unexpected {extra[:3]}")
        for i, l in enumerate(self.learners):
            for part in ("actor", "critic", "target_actor", "target_critic"):
                tree = getattr(l, part)
                named = nc.tree_named(tree, f"agent{i}.{part}")
                new = []
                for n, t in named:
                    v = entries[n]
                    if v.shape != t.shape:
                        raise CheckpointError(f"{n}: shape {v.shape}, expected {t.shape}")
                    new.append(Tensor(v.copy()))
                setattr(l, part, nc.tree_unflatten(tree, new))
            for part in ("actor_opt", "critic_opt"):
                st = getattr(l, part)
                m = tuple(entries[f"agent{i}.{part}.m.{k}"].copy() for k in range(len(st.m)))
                v = tuple(entries[f"agent{i}.{part}.v.{k}"].copy() for k in range(len(st.v)))
                step = int(entries[f"agent{i}.{part}.step"][0])
                setattr(l, part, dataclasses.replace(st, m=m, v=v, step=step))


# --------------------------------------------------------------- checkpoint

MAGIC = b"HRTCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(path, entries: Sequence[tuple[str, np.ndarray]], cfg_hash: str):
    """Binary layout, all integers little-endian:

    magic(8) version:u32 hash_len:u32 hash(utf-8) count:u32, then per entry
    name_len:u32 name(utf-8) ndim:u32 shape:u32*ndim values:f64*prod(shape).
    """
    hb = cfg_hash.encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb, struct.pack("<I", len(entries))]
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)) + nb)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path, expected_hash: str | None = None, force: bool = False
                    ) -> tuple[dict[str, np.ndarray], str]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = 8
    version, hlen = struct.unpack_from("<II", raw, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    h = raw[off:off + hlen].decode("utf-8")
    off += hlen
    if expected_hash is not None and h != expected_hash and not force:
        raise CheckpointError(f"{path}: config hash {h[:12]} does not match {expected_hash[:12]}")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return out, h
