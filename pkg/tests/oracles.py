"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops and math so it shares no
code path with the package under test.
"""
import math

import numpy as np


def euclid(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def reward_coop_nav(s):
    P = s.pos.tolist()
    total = 0.0
    for l in (3, 4, 5):
        total -= min(euclid(P[i], P[l]) for i in (0, 1, 2))
    for i in range(3):
        for j in range(i + 1, 3):
            if euclid(P[i], P[j]) < s.size[i] + s.size[j]:
                total -= 1.0
    return [total] * 3


def reward_phys_deception(s):
    P = s.pos.tolist()
    g = P[s.goal]
    adv = euclid(P[0], g)
    good = adv - min(euclid(P[1], g), euclid(P[2], g))
    return [-adv, good, good]


def reward_coop_comm(s):
    d = euclid(s.pos[1].tolist(), s.pos[s.goal].tolist())
    return [-d, -d]


def reward_predator_prey(s):
    P = s.pos.tolist()
    d = [euclid(P[i], P[3]) for i in range(3)]
    hits = sum(d[i] < s.size[i] + s.size[3] for i in range(3))
    return [-min(d) + 10 * hits] * 3 + [min(d) - 10 * hits]


REWARDS = {"coop_nav": reward_coop_nav, "phys_deception": reward_phys_deception,
           "coop_comm": reward_coop_comm, "predator_prey": reward_predator_prey}


def random_state(name, rng, spread=1.5):
    """A fresh scenario with entities scattered at random; sometimes packed
    tightly so that contacts occur."""
    import dataclasses
    from hrtmaddpg import envs
    s = envs.scenario_init(name, int(rng.integers(2 ** 32)))
    scale = spread if rng.random() < 0.7 else 0.15
    return dataclasses.replace(s, pos=rng.uniform(-scale, scale, size=s.pos.shape))


def naive_mha(p, X):
    """Loop-per-head, loop-per-row multi-head attention with 1/sqrt(d_s) scaling."""
    d_s = p.d_s
    outs = []
    for wq, wk, wv in zip(p.wq, p.wk, p.wv):
        Q, K, V = X @ wq.data, X @ wk.data, X @ wv.data
        rows = []
        for i in range(X.shape[0]):
            logits = np.array([Q[i] @ K[j] for j in range(X.shape[0])]) / math.sqrt(d_s)
            w = np.exp(logits - logits.max())
            w /= w.sum()
            rows.append(sum(w[j] * V[j] for j in range(X.shape[0])))
        outs.append(np.array(rows))
    return np.concatenate(outs, axis=1) @ p.wo.data
