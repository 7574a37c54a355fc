"""Deterministic particle-world scenarios.

Four scenarios share one double-integrator physics step. Entity order inside
a ``WorldState`` is always agents first (in agent-index order), then
landmarks/obstacles.

Observation layouts (all positions relative to the observing agent unless
noted; ``vel``/``pos`` are the agent's own absolute velocity and position):

coop_nav        vel(2) pos(2) landmarks(3x2) other agents(2x2)             = 14
phys_deception  adversary:   vel pos landmarks(2x2) other agents(2x2)      = 12
                cooperator:  vel pos goal(2) landmarks(2x2) others(2x2)    = 14
coop_comm       speaker:     vel pos goal colour one-hot(3)                = 7
                listener:    vel pos landmarks(3x2) received comm(3)       = 13
predator_prey   predator:    vel pos obstacles(2x2) others(3x2) prey vel(2)= 16
                prey:        vel pos obstacles(2x2) others(3x2)            = 14

Agent order: phys_deception puts the adversary first; coop_comm is
(speaker, listener); predator_prey is three predators then the prey.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SCENARIOS = ("coop_nav", "phys_deception", "coop_comm", "predator_prey")
TITLES = {
    "coop_nav": "Cooperative Navigation",
    "phys_deception": "Physical Deception",
    "coop_comm": "Cooperative Communication",
    "predator_prey": "Predator-Prey",
}

DT = 0.1
DAMPING = 0.25
SENSITIVITY = 5.0
CONTACT_STIFFNESS = 100.0
EPISODE_LENGTH = 25
COLLISION_PENALTY = 1.0
CAPTURE_BONUS = 10.0
PREDATOR_MAX_SPEED = 1.0
PREY_MAX_SPEED = 1.3 * PREDATOR_MAX_SPEED
COMM_DIM = 3


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    move_dim: int
    comm_dim: int

    @property
    def action_dim(self) -> int:
        return self.move_dim + self.comm_dim


@dataclass
class WorldState:
    scenario: str
    kind: tuple[str, ...]
    role: tuple[str, ...]
    color: tuple[str, ...]
    pos: np.ndarray                 # (E, 2) metres
    vel: np.ndarray                 # (E, 2) m/s
    size: np.ndarray                # (E,)
    movable: np.ndarray             # (E,) bool
    collide: np.ndarray             # (E,) bool
    max_speed: np.ndarray           # (E,) inf when uncapped
    goal: int                       # entity index of the goal landmark (-1 if none)
    assignment: tuple[int, ...]     # coop_nav: agent -> landmark entity index
    comm: np.ndarray                # channel read by the listener
    step: int = 0
    episode_length: int = EPISODE_LENGTH
    seed: int = 0
    rng_state: dict = field(default_factory=dict)
    literal_goals: bool = False

    @property
    def n_agents(self) -> int:
        return self.kind.count("agent")

    @property
    def agents(self) -> list[int]:
        return [i for i, k in enumerate(self.kind) if k == "agent"]

    @property
    def landmarks(self) -> list[int]:
        return [i for i, k in enumerate(self.kind) if k != "agent"]

    def copy(self) -> "WorldState":
        return dataclasses.replace(self, pos=self.pos.copy(), vel=self.vel.copy(), comm=self.comm.copy())


def states_equal(a: WorldState, b: WorldState) -> bool:
    """Bitwise equality of every field."""
    for f in dataclasses.fields(WorldState):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            if x.shape != y.shape or x.dtype != y.dtype or x.tobytes() != y.tobytes():
                return False
        elif x != y:
            return False
    return True


def agent_specs(name: str) -> list[AgentSpec]:
    if name == "coop_nav":
        return [AgentSpec(2, 0)] * 3
    if name == "phys_deception":
        return [AgentSpec(2, 0)] * 3
    if name == "coop_comm":
        return [AgentSpec(0, COMM_DIM), AgentSpec(2, 0)]
    if name == "predator_prey":
        return [AgentSpec(2, 0)] * 4
    raise ScenarioError(f"unknown scenario {name!r}")


def obs_dims(name: str) -> list[int]:
    return {
        "coop_nav": [14, 14, 14],
        "phys_deception": [12, 14, 14],
        "coop_comm": [7, 13],
        "predator_prey": [16, 16, 16, 14],
    }[_check_name(name)]


def _check_name(name: str) -> str:
    if name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return name


def scenario_init(name: str, seed: int, episode_length: int = EPISODE_LENGTH,
                  literal_goals: bool = False) -> WorldState:
    _check_name(name)
    if episode_length < 1:
        raise ValueError("episode length must be at least 1")
    rng = np.random.default_rng(seed)
    inf = np.inf
    if name == "coop_nav":
        kind = ("agent",) * 3 + ("landmark",) * 3
        role = ("good",) * 3 + ("none",) * 3
        color = ("blue",) * 3 + ("grey",) * 3
        size = [0.15] * 3 + [0.05] * 3
        movable = [True] * 3 + [False] * 3
        collide = [True] * 3 + [False] * 3
        max_speed = [inf] * 6
    elif name == "phys_deception":
        kind = ("agent",) * 3 + ("landmark",) * 2
        role = ("adversary", "good", "good", "none", "none")
        color = ("red", "blue", "blue", "grey", "grey")
        size = [0.05] * 3 + [0.08] * 2
        movable = [True] * 3 + [False] * 2
        collide = [False] * 5
        max_speed = [inf] * 5
    elif name == "coop_comm":
        kind = ("agent", "agent", "landmark", "landmark", "landmark")
        role = ("speaker", "listener", "none", "none", "none")
        color = ("grey", "grey", "red", "green", "blue")
        size = [0.075, 0.075, 0.04, 0.04, 0.04]
        movable = [False, True, False, False, False]
        collide = [False] * 5
        max_speed = [inf] * 5
    else:
        kind = ("agent",) * 4 + ("obstacle",) * 2
        role = ("predator",) * 3 + ("prey", "none", "none")
        color = ("red",) * 3 + ("green", "black", "black")
        size = [0.075] * 3 + [0.05, 0.2, 0.2]
        movable = [True] * 4 + [False] * 2
        collide = [True] * 6
        max_speed = [PREDATOR_MAX_SPEED] * 3 + [PREY_MAX_SPEED, inf, inf]
    n = len(kind)
    pos = rng.uniform(-1.0, 1.0, size=(n, 2))
    n_agents = kind.count("agent")
    landmarks = list(range(n_agents, n))
    goal, assignment = -1, ()
    if name == "coop_nav":
        assignment = tuple(int(landmarks[k]) for k in rng.permutation(3))
    elif name in ("phys_deception", "coop_comm"):
        goal = int(landmarks[rng.integers(len(landmarks))])
    return WorldState(
        scenario=name, kind=kind, role=role, color=color, pos=pos, vel=np.zeros((n, 2)),
        size=np.array(size), movable=np.array(movable), collide=np.array(collide),
        max_speed=np.array(max_speed), goal=goal, assignment=assignment,
        comm=np.zeros(COMM_DIM if name == "coop_comm" else 0), step=0,
        episode_length=episode_length, seed=int(seed), rng_state=rng.bit_generator.state,
        literal_goals=literal_goals,
    )


# ------------------------------------------------------------------- physics

def _contact_forces(s: WorldState) -> np.ndarray:
    """Linear springs pushing overlapping colliding entities apart."""
    force = np.zeros_like(s.pos)
    idx = np.flatnonzero(s.collide)
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            delta = s.pos[i] - s.pos[j]
            dist = float(np.hypot(delta[0], delta[1]))
            overlap = s.size[i] + s.size[j] - dist
            if overlap <= 0.0 or dist == 0.0:
                continue
            f = CONTACT_STIFFNESS * overlap * delta / dist
            if s.movable[i]:
                force[i] += f
            if s.movable[j]:
                force[j] -= f
    return force


def _split_actions(s: WorldState, actions: Sequence[np.ndarray]) -> list[np.ndarray]:
    specs = agent_specs(s.scenario)
    if len(actions) != len(specs):
        raise ScenarioError(f"{s.scenario} needs {len(specs)} actions, got {len(actions)}")
    out = []
    for i, (spec, a) in enumerate(zip(specs, actions)):
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.size != spec.action_dim:
            raise ScenarioError(f"agent {i} action has {a.size} components, expected {spec.action_dim}")
        out.append(a)
    return out


def world_step(s: WorldState, actions: Sequence[np.ndarray]
               ) -> tuple[WorldState, list[np.ndarray], list[float], bool]:
    """Advance one step of dt. Pure: ``s`` is not modified."""
    if s.step >= s.episode_length:
        raise ScenarioError("episode already finished")
    acts = _split_actions(s, actions)
    specs = agent_specs(s.scenario)
    force = _contact_forces(s)
    comm = s.comm.copy()
    for i, (spec, a) in zip(s.agents, zip(specs, acts)):
        if spec.move_dim and s.movable[i]:
            force[i] = force[i] + SENSITIVITY * np.clip(a[:spec.move_dim], -1.0, 1.0)
        if spec.comm_dim:
            comm = a[spec.move_dim:].copy()
    mov = s.movable[:, None]
    vel = np.where(mov, s.vel * (1.0 - DAMPING) + force * DT, 0.0)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    cap = np.isfinite(s.max_speed) & (speed > s.max_speed)
    if cap.any():
        vel[cap] = vel[cap] / speed[cap, None] * s.max_speed[cap, None]
    pos = s.pos + vel * DT
    nxt = dataclasses.replace(s, pos=pos, vel=vel, comm=comm, step=s.step + 1)
    obs = [observe(nxt, i) for i in range(nxt.n_agents)]
    return nxt, obs, rewards(nxt), nxt.step >= nxt.episode_length


# ------------------------------------------------------------------- rewards

def _dist(s: WorldState, i: int, j: int) -> float:
    d = s.pos[i] - s.pos[j]
    return float(np.hypot(d[0], d[1]))


def _touching(s: WorldState, i: int, j: int) -> bool:
    return _dist(s, i, j) < s.size[i] + s.size[j]


def _require(s: WorldState, name: str):
    if s.scenario != name:
        raise ScenarioError(f"reward for {name} called on a {s.scenario} state")


def reward_coop_nav(s: WorldState) -> list[float]:
    _require(s, "coop_nav")
    agents = s.agents
    if s.literal_goals:
        total = -sum(_dist(s, i, g) for i, g in zip(agents, s.assignment))
    else:
        total = -sum(min(_dist(s, i, l) for i in agents) for l in s.landmarks)
    hits = sum(_touching(s, a, b) for k, a in enumerate(agents) for b in agents[k + 1:])
    total -= COLLISION_PENALTY * hits
    return [total] * len(agents)


def reward_phys_deception(s: WorldState) -> list[float]:
    _require(s, "phys_deception")
    adv, *coops = s.agents
    adv_d = _dist(s, adv, s.goal)
    good = adv_d - min(_dist(s, c, s.goal) for c in coops)
    return [-adv_d] + [good] * len(coops)


def reward_coop_comm(s: WorldState) -> list[float]:
    _require(s, "coop_comm")
    r = -_dist(s, s.agents[1], s.goal)
    return [r, r]


def reward_predator_prey(s: WorldState) -> list[float]:
    _require(s, "predator_prey")
    *preds, prey = s.agents
    nearest = min(_dist(s, p, prey) for p in preds)
    contacts = sum(_touching(s, p, prey) for p in preds)
    pred_r = -nearest + CAPTURE_BONUS * contacts
    prey_r = nearest - CAPTURE_BONUS * contacts
    return [pred_r] * len(preds) + [prey_r]


_REWARDS = {
    "coop_nav": reward_coop_nav,
    "phys_deception": reward_phys_deception,
    "coop_comm": reward_coop_comm,
    "predator_prey": reward_predator_prey,
}


def rewards(s: WorldState) -> list[float]:
    return _REWARDS[s.scenario](s)


# --------------------------------------------------------------- observation

def observe(s: WorldState, agent: int) -> np.ndarray:
    agents = s.agents
    if not 0 <= agent < len(agents):
        raise IndexError(f"agent index {agent} out of range for {len(agents)} agents")
    me = agents[agent]
    p = s.pos[me]
    parts = [s.vel[me], p]
    others = [s.pos[j] - p for j in agents if j != me]
    marks = [s.pos[l] - p for l in s.landmarks]
    role = s.role[me]
    if s.scenario == "coop_nav":
        parts += marks + others
    elif s.scenario == "phys_deception":
        if role != "adversary":
            parts.append(s.pos[s.goal] - p)
        parts += marks + others
    elif s.scenario == "coop_comm":
        if role == "speaker":
            onehot = np.zeros(COMM_DIM)
            onehot[s.landmarks.index(s.goal)] = 1.0
            parts.append(onehot)
        else:
            parts += marks
            parts.append(s.comm)
    else:
        parts += marks + others
        if role == "predator":
            parts.append(s.vel[agents[-1]])
    return np.concatenate(parts).astype(np.float64)


def observe_all(s: WorldState) -> list[np.ndarray]:
    return [observe(s, i) for i in range(s.n_agents)]


# ----------------------------------------------------------------- recorder

class TrajectoryRecorder:
    """CSV trajectory log, one row per recorded state.

    Columns: ``episode, step``, then for every entity e in state order
    ``e{e}_x, e{e}_y, e{e}_vx, e{e}_vy``, then every action component
    ``a{i}_{k}`` per agent i, then the rewards ``r{i}``. Rows for initial
    states leave the action and reward cells empty.
    """

    def __init__(self, path, scenario: str):
        specs = agent_specs(scenario)
        n_ent = len(scenario_init(scenario, 0).kind)
        self.columns = ["episode", "step"]
        for e in range(n_ent):
            self.columns += [f"e{e}_x", f"e{e}_y", f"e{e}_vx", f"e{e}_vy"]
        for i, spec in enumerate(specs):
            self.columns += [f"a{i}_{k}" for k in range(spec.action_dim)]
        self.columns += [f"r{i}" for i in range(len(specs))]
        self._n_act = sum(sp.action_dim for sp in specs)
        self._n_agents = len(specs)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.columns)

    def record(self, episode: int, s: WorldState, actions=None, rewards=None):
        row = [episode, s.step]
        for e in range(len(s.kind)):
            row += [repr(float(v)) for v in (*s.pos[e], *s.vel[e])]
        if actions is None:
            row += [""] * (self._n_act + self._n_agents)
        else:
            row += [repr(float(v)) for a in actions for v in np.ravel(a)]
            row += [repr(float(r)) for r in rewards]
        self._w.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
