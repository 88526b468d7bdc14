"""DDPG building blocks for the per-AP agents.

State/action layout
-------------------
Agent n observes, per UE k, the received common and private signal factors
Y_c = H_kn^H P_c[n] and Y_p = H_kn^H P_p[k, n] (each M' x M' complex).  The
local state is their flat encoding: all common blocks first, then all private
blocks, UE-major, row-major inside each matrix, (real, imag) per entry --
length 4*K*M'^2.  The global state/action are the N local blocks naturally
ordered by agent index; between synchronisation rounds the other agents'
blocks stay frozen at their last exchanged snapshot.

The local action is [p_c | p_p,1 .. p_p,K | c_1 .. c_K] with the precoder
parts in the same flat complex encoding (length 2*(K+1)*M*M') and K common
rate share logits, all in [-1, 1].  Decoding scales precoder entries by
sqrt(p_max / (2*(K+1)*M*M')) (full-scale action sits exactly on the power
budget), zeroes unselected private precoders, projects onto the per-AP power
ball, and maps share logits through relu(x)/max(1, sum relu(x)).

Raw channel gains are tiny in watts (~1e-6), so agents feed states to the
networks scaled by 1/sqrt(noise power); the scale is fixed per run and lives
in AgentNets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, rsma


# ---------------------------------------------------------------- layout ----

def local_state_dim(n_ue: int, m_ue: int) -> int:
    return 4 * n_ue * m_ue * m_ue


def local_action_dim(n_ue: int, m_ap: int, m_ue: int) -> int:
    return 2 * (n_ue + 1) * m_ap * m_ue + n_ue


def flatten_complex(X: np.ndarray) -> np.ndarray:
    """Row-major flat vector with (real, imag) per entry."""
    v = np.asarray(X).ravel()
    out = np.empty(2 * v.size)
    out[0::2] = v.real
    out[1::2] = v.imag
    return out


def unflatten_complex(v: np.ndarray, shape: tuple) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (v[0::2] + 1j * v[1::2]).reshape(shape)


def encode_state(Y_c: np.ndarray, Y_p: np.ndarray) -> np.ndarray:
    """Local state from the K common and K private signal factors."""
    return np.concatenate([flatten_complex(Y_c), flatten_complex(Y_p)])


def decode_state(vec: np.ndarray, n_ue: int, m_ue: int):
    """Inverse of encode_state; returns (Y_c, Y_p) each (K, M', M')."""
    vec = np.asarray(vec, dtype=float)
    if vec.size != local_state_dim(n_ue, m_ue):
        raise ValueError("state vector has the wrong length")
    half = vec.size // 2
    shape = (n_ue, m_ue, m_ue)
    return unflatten_complex(vec[:half], shape), unflatten_complex(vec[half:], shape)


def local_state(own_H: np.ndarray, P_c_n: np.ndarray, P_p_n: np.ndarray) -> np.ndarray:
    """Agent state from its own channel column (K, M, M') and its precoders."""
    Hh = own_H.conj().transpose(0, 2, 1)          # (K, M', M)
    Y_c = Hh @ P_c_n[None, :, :]
    Y_p = Hh @ P_p_n
    return encode_state(Y_c, Y_p)


def _clamp_simplex(c: np.ndarray) -> np.ndarray:
    """Force sum(c) <= 1 exactly by shaving float excess off the largest entry."""
    s = c.sum()
    while s > 1.0:
        i = int(np.argmax(c))
        c[i] -= s - 1.0
        if c[i] < 0.0:
            c[i] = 0.0
        s = c.sum()
    return c


def decode_shares(raw: np.ndarray) -> np.ndarray:
    """relu(x) / max(1, sum relu(x)); non-negative, sums to at most 1 exactly."""
    c = np.maximum(np.asarray(raw, dtype=float), 0.0)
    s = c.sum()
    if s > 1.0:
        c = c / s
    return _clamp_simplex(c)


def decode_action(raw: np.ndarray, n_ue: int, m_ap: int, m_ue: int, p_max: float,
                  g_col: np.ndarray | None = None, sdma: bool = False):
    """Decode one agent's raw action into feasible precoders and shares.

    Args:
        raw: local action vector in [-1, 1].
        g_col: (K,) association column of this AP; None means all ones.
        sdma: zero the common precoder (no rate splitting).

    Returns:
        (P_c_n (M, M'), P_p_n (K, M, M'), shares (K,)); C1 holds after the
        per-AP projection, C3/C5 hold exactly.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size != local_action_dim(n_ue, m_ap, m_ue):
        raise ValueError("action vector has the wrong length")
    n_pre = 2 * (n_ue + 1) * m_ap * m_ue
    scale = np.sqrt(p_max / n_pre)
    P_c = unflatten_complex(raw[:2 * m_ap * m_ue], (m_ap, m_ue)) * scale
    P_p = unflatten_complex(raw[2 * m_ap * m_ue:n_pre],
                            (n_ue, m_ap, m_ue)) * scale
    if sdma:
        P_c = np.zeros_like(P_c)
    g_col = np.ones(n_ue) if g_col is None else np.asarray(g_col, dtype=float)
    P_p[g_col == 0] = 0.0
    P_c, P_p = rsma.project_ap_power(P_c, P_p, g_col, p_max)
    shares = np.zeros(n_ue) if sdma else decode_shares(raw[n_pre:])
    return P_c, P_p, shares


def combine_shares(per_agent: np.ndarray) -> np.ndarray:
    """Average the per-agent share vectors; convexity keeps C3/C5 exact."""
    c = np.mean(np.asarray(per_agent, dtype=float), axis=0)
    return _clamp_simplex(c)


def noise_sigma(episode: int, n_episodes: int, start: float, end: float) -> float:
    """Linear exploration schedule across episodes (1-based episode index)."""
    if n_episodes <= 1:
        return end
    f = (episode - 1) / (n_episodes - 1)
    return start + (end - start) * f


# ---------------------------------------------------------------- replay ----

@dataclass
class Experience:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int,
                 rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self._s = np.zeros((capacity, s_dim))
        self._a = np.zeros((capacity, a_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, s_dim))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, exp: Experience) -> None:
        i = self._next
        self._s[i] = exp.s
        self._a[i] = exp.a
        self._r[i] = exp.r
        self._s2[i] = exp.s2
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int):
        """Uniform with replacement; valid as soon as one experience exists."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self._size, size=batch)
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx]


# ---------------------------------------------------------------- agents ----

@dataclass
class AgentNets:
    """Actor/critic pairs with their targets, optimizers and input scale."""

    actor: nn.Mlp
    critic: nn.Mlp
    actor_target: nn.Mlp
    critic_target: nn.Mlp
    actor_opt: nn.AdamState
    critic_opt: nn.AdamState
    state_scale: float = 1.0


def make_agent(s_dim: int, a_dim_global: int, a_dim_local: int, eta: float,
               lr: float, rng: np.random.Generator,
               state_scale: float = 1.0, beta1: float = 0.9,
               beta2: float = 0.999, actor_lr: float | None = None) -> AgentNets:
    """Fresh agent; targets start as exact copies of the primaries.

    The actor may use a slower rate than the critic (``actor_lr``, defaulting
    to ``lr``); a fast actor chases the bootstrapped critic into the tanh
    rails before the critic has settled.
    """
    actor = nn.make_mlp(s_dim, a_dim_local, eta, "tanh", rng)
    critic = nn.make_mlp(s_dim + a_dim_global, 1, eta, "linear", rng)
    a_lr = lr if actor_lr is None else actor_lr
    return AgentNets(actor=actor, critic=critic,
                     actor_target=actor.copy(), critic_target=critic.copy(),
                     actor_opt=nn.adam_init(actor, a_lr, beta1, beta2),
                     critic_opt=nn.adam_init(critic, lr, beta1, beta2),
                     state_scale=state_scale)


def act(nets: AgentNets, s: np.ndarray, sigma: float,
        rng: np.random.Generator) -> np.ndarray:
    """Exploratory action: clip(actor(s) + N(0, sigma^2), -1, 1)."""
    a = nn.forward(nets.actor, np.asarray(s) / nets.state_scale)
    if sigma > 0.0:
        a = a + sigma * rng.standard_normal(a.shape)
    return np.clip(a, -1.0, 1.0)


def td_targets(nets: AgentNets, slot: tuple[int, int], batch, gamma: float) -> np.ndarray:
    """z = r + gamma * Q'(s', a') with the agent's slot replaced by mu'(s').

    The other agents' slots of a' come from the stored global action, i.e.
    the snapshots frozen into the experience when it was collected.
    """
    S, A, R, S2 = batch
    off, length = slot
    S2_in = S2 / nets.state_scale
    a_loc = nn.forward(nets.actor_target, S2_in)
    A2 = A.copy()
    A2[:, off:off + length] = a_loc
    q2 = nn.forward(nets.critic_target, np.concatenate([S2_in, A2], axis=1))
    return R + gamma * q2[:, 0]


def critic_update(nets: AgentNets, batch, z: np.ndarray) -> float:
    """One Adam step on the mean squared TD error; returns the pre-step loss."""
    S, A, R, S2 = batch
    X = np.concatenate([S / nets.state_scale, A], axis=1)
    y, cache = nn.forward_cached(nets.critic, X)
    err = y[:, 0] - z
    loss = float(np.mean(err * err))
    grads, _ = nn.backward(nets.critic, cache, (2.0 / len(err)) * err[:, None])
    nn.adam_step(nets.critic, grads, nets.critic_opt)
    return loss


def actor_update(nets: AgentNets, slot: tuple[int, int], batch) -> float:
    """One Adam ascent step on mean Q(s, a) through the agent's action slot.

    Gradients flow from the critic's action input into the actor only through
    this agent's slot; the other slots are frozen snapshot constants.
    Returns the pre-step objective estimate.
    """
    S, A, R, S2 = batch
    off, length = slot
    s_dim = S.shape[1]
    S_in = S / nets.state_scale
    a_loc, cache_a = nn.forward_cached(nets.actor, S_in)
    A2 = A.copy()
    A2[:, off:off + length] = a_loc
    X = np.concatenate([S_in, A2], axis=1)
    q, cache_c = nn.forward_cached(nets.critic, X)
    upstream = np.full((len(q), 1), 1.0 / len(q))
    _, gX = nn.backward(nets.critic, cache_c, upstream)
    g_slot = gX[:, s_dim + off:s_dim + off + length]
    grads, _ = nn.backward(nets.actor, cache_a, g_slot)
    nn.adam_step(nets.actor, [-g for g in grads], nets.actor_opt)
    return float(np.mean(q[:, 0]))


def polyak_all(nets: AgentNets, tau: float) -> None:
    nn.polyak_update(nets.actor_target, nets.actor, tau)
    nn.polyak_update(nets.critic_target, nets.critic, tau)


# ----------------------------------------------------------- checkpoints ----

CHECKPOINT_VERSION = 1
_NET_KEYS = ("actor", "critic", "actor_target", "critic_target")


def save_checkpoint(path: str, agents: list[AgentNets]) -> None:
    """Versioned container with all four nets and Adam states per agent."""
    blobs = {"version": np.array([CHECKPOINT_VERSION]),
             "n_agents": np.array([len(agents)])}
    for i, ag in enumerate(agents):
        for key in _NET_KEYS:
            net: nn.Mlp = getattr(ag, key)
            blobs[f"a{i}_{key}"] = np.frombuffer(nn.serialize(net).to_bytes(),
                                                 dtype=np.uint8)
        for key, opt in (("actor_opt", ag.actor_opt), ("critic_opt", ag.critic_opt)):
            for j, (m, v) in enumerate(zip(opt.m, opt.v)):
                blobs[f"a{i}_{key}_m{j}"] = m
                blobs[f"a{i}_{key}_v{j}"] = v
            blobs[f"a{i}_{key}_meta"] = np.array(
                [opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps])
        blobs[f"a{i}_state_scale"] = np.array([ag.state_scale])
    np.savez(path, **blobs)


def load_checkpoint(path: str) -> list[AgentNets]:
    with np.load(path) as z:
        version = int(z["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        agents = []
        for i in range(int(z["n_agents"][0])):
            nets = {}
            for key in _NET_KEYS:
                pv = nn.ParamVector.from_bytes(z[f"a{i}_{key}"].tobytes())
                nets[key] = nn.deserialize(pv, pv.dims)
            opts = {}
            for key, net in (("actor_opt", nets["actor"]),
                             ("critic_opt", nets["critic"])):
                meta = z[f"a{i}_{key}_meta"]
                opt = nn.adam_init(net, lr=float(meta[1]), beta1=float(meta[2]),
                                   beta2=float(meta[3]), eps=float(meta[4]))
                opt.t = int(meta[0])
                opt.m = [z[f"a{i}_{key}_m{j}"].copy() for j in range(4)]
                opt.v = [z[f"a{i}_{key}_v{j}"].copy() for j in range(4)]
                opts[key] = opt
            agents.append(AgentNets(
                actor=nets["actor"], critic=nets["critic"],
                actor_target=nets["actor_target"],
                critic_target=nets["critic_target"],
                actor_opt=opts["actor_opt"], critic_opt=opts["critic_opt"],
                state_scale=float(z[f"a{i}_state_scale"][0])))
    return agents
