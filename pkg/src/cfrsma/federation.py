"""Federated coordination: parameter averaging, channel estimation, rewards.

Agents never exchange raw channel state.  At every synchronisation round each
agent ships a SyncMessage -- its four network parameter vectors plus a frozen
snapshot of its local state and action.  The CPU averages the parameters
uniformly and broadcasts them back; every agent also receives the snapshot
blocks, from which it reconstructs the other APs' common precoders and
received-signal factors and estimates their channels by projection.

Inside a synchronisation episode the lighter ``exchange_views`` runs once,
after the first training step, so each agent's picture of the others
(snapshot blocks and channel estimates) is rebuilt from that episode's
pilots; between synchronisation episodes the picture stays frozen at the
last exchange.  The exchange period therefore controls how stale the
information each agent trains on is, independently of the parameter
averaging itself.

Averaging uses a compensated pairwise scheme (anchor on the first vector, sum
deviations) so that averaging identical parameter sets is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import channel, ddpg, nn, rsma

SYNC_MESSAGE_VERSION = 1
_NET_KEYS = ("actor", "critic", "actor_target", "critic_target")


# -------------------------------------------------------------- averaging ----

def average_vectors(vectors: list[np.ndarray]) -> np.ndarray:
    """Uniform mean, pairwise-stable: identical inputs return bit-equal output."""
    if not vectors:
        raise ValueError("nothing to average")
    base = np.asarray(vectors[0], dtype=float)
    if len(vectors) == 1:
        return base.copy()
    diffs = np.stack([np.asarray(v, dtype=float) - base for v in vectors[1:]])
    return base + diffs.sum(axis=0) / len(vectors)


@dataclass
class SyncMessage:
    """Everything one agent uploads at a synchronisation round."""

    agent_id: int
    episode: int
    params: dict  # net key -> nn.ParamVector
    state_snapshot: np.ndarray
    action_snapshot: np.ndarray
    version: int = SYNC_MESSAGE_VERSION

    def to_bytes(self) -> bytes:
        out = [struct.pack("<BII", self.version, self.agent_id, self.episode)]
        for key in _NET_KEYS:
            blob = self.params[key].to_bytes()
            out.append(struct.pack("<I", len(blob)))
            out.append(blob)
        for arr in (self.state_snapshot, self.action_snapshot):
            data = np.asarray(arr, dtype="<f8").tobytes()
            out.append(struct.pack("<I", len(data)))
            out.append(data)
        return b"".join(out)

    @staticmethod
    def from_bytes(buf: bytes) -> "SyncMessage":
        version, agent_id, episode = struct.unpack("<BII", buf[:9])
        if version != SYNC_MESSAGE_VERSION:
            raise ValueError(f"unsupported sync message version {version}")
        off = 9
        params = {}
        for key in _NET_KEYS:
            (ln,) = struct.unpack("<I", buf[off:off + 4])
            off += 4
            params[key] = nn.ParamVector.from_bytes(buf[off:off + ln])
            off += ln
        arrays = []
        for _ in range(2):
            (ln,) = struct.unpack("<I", buf[off:off + 4])
            off += 4
            arrays.append(np.frombuffer(buf[off:off + ln], dtype="<f8").copy())
            off += ln
        return SyncMessage(agent_id=agent_id, episode=episode, params=params,
                           state_snapshot=arrays[0], action_snapshot=arrays[1])


def build_sync_message(agent_id: int, episode: int, nets: ddpg.AgentNets,
                       state_snapshot: np.ndarray,
                       action_snapshot: np.ndarray) -> SyncMessage:
    params = {key: nn.serialize(getattr(nets, key)) for key in _NET_KEYS}
    return SyncMessage(agent_id=agent_id, episode=episode, params=params,
                       state_snapshot=np.asarray(state_snapshot, dtype=float),
                       action_snapshot=np.asarray(action_snapshot, dtype=float))


def aggregate(messages: list[SyncMessage]) -> dict:
    """Average each network's parameters across agents.

    Every message must carry identically-shaped vectors; targets are averaged
    alongside the primaries.
    """
    if not messages:
        raise ValueError("no messages to aggregate")
    out = {}
    for key in _NET_KEYS:
        pvs = [m.params[key] for m in messages]
        first = pvs[0]
        for pv in pvs[1:]:
            if pv.dims != first.dims or pv.out_activation != first.out_activation:
                raise ValueError(f"mismatched {key} layouts across agents")
            if pv.version != first.version:
                raise ValueError("mismatched parameter format versions")
        out[key] = nn.ParamVector(first.version, first.dims, first.out_activation,
                                  average_vectors([pv.data for pv in pvs]))
    return out


def install_params(nets: ddpg.AgentNets, averaged: dict) -> None:
    """Broadcast step: replace all four nets with the averaged parameters.

    Optimizer moments stay local; only parameters are federated.
    """
    for key in _NET_KEYS:
        pv = averaged[key]
        setattr(nets, key, nn.deserialize(pv, pv.dims))


# ------------------------------------------------------------- estimation ----

def estimate_channel(Y_c: np.ndarray, P_c: np.ndarray) -> np.ndarray:
    """Project-and-solve channel estimate from a received common factor.

    Given Y_c = H^H P_c, returns pinv(P_c P_c^H) P_c Y_c^H, i.e. the true H
    projected onto the column space of P_c.  A zero precoder yields a zero
    estimate (nothing was illuminated).
    """
    P_c = np.asarray(P_c)
    if not np.any(P_c):
        return np.zeros((P_c.shape[0], np.asarray(Y_c).shape[0]), dtype=complex)
    G = P_c @ P_c.conj().T
    return np.linalg.pinv(G) @ P_c @ np.asarray(Y_c).conj().T


def estimates_from_snapshots(state_snaps: np.ndarray, action_snaps: np.ndarray,
                             n_ue: int, m_ap: int, m_ue: int, p_max: float,
                             assoc: np.ndarray, sdma: bool = False) -> np.ndarray:
    """Rebuild H estimates (K, N, M, M') from exchanged snapshot blocks."""
    n_ap = len(state_snaps)
    est = np.zeros((n_ue, n_ap, m_ap, m_ue), dtype=complex)
    for n in range(n_ap):
        P_c, _, _ = ddpg.decode_action(action_snaps[n], n_ue, m_ap, m_ue,
                                       p_max, assoc[:, n], sdma)
        Y_c, _ = ddpg.decode_state(state_snaps[n], n_ue, m_ue)
        for k in range(n_ue):
            est[k, n] = estimate_channel(Y_c[k], P_c)
    return est


def effective_channels(H: np.ndarray, noise_power: float) -> channel.ChannelSet:
    """Wrap an effective channel array for the rate engine (no large-scale data)."""
    K, N = H.shape[:2]
    ones = np.ones((K, N))
    return channel.ChannelSet(H=H, kappa=ones, pl_db=np.zeros((K, N)),
                              z=np.zeros((K, N)), noise_power=noise_power)


# ----------------------------------------------------------------- reward ----

def decode_global_action(raw_global: np.ndarray, n_ue: int, n_ap: int,
                         m_ap: int, m_ue: int, p_max: float, assoc: np.ndarray,
                         sdma: bool = False):
    """Decode all agents' blocks into a PrecoderSet and combined shares."""
    la = ddpg.local_action_dim(n_ue, m_ap, m_ue)
    raw_global = np.asarray(raw_global, dtype=float)
    if raw_global.size != n_ap * la:
        raise ValueError("global action vector has the wrong length")
    P_c = np.zeros((n_ap, m_ap, m_ue), dtype=complex)
    P_p = np.zeros((n_ue, n_ap, m_ap, m_ue), dtype=complex)
    blocks = np.zeros((n_ap, n_ue))
    for n in range(n_ap):
        pc, pp, c = ddpg.decode_action(raw_global[n * la:(n + 1) * la], n_ue,
                                       m_ap, m_ue, p_max, assoc[:, n], sdma)
        P_c[n] = pc
        P_p[:, n] = pp
        blocks[n] = c
    return rsma.PrecoderSet(P_c=P_c, P_p=P_p), ddpg.combine_shares(blocks)


def reward_for_agent(n: int, own_H: np.ndarray, noise_power: float,
                     estimates: np.ndarray, raw_global: np.ndarray,
                     assoc: np.ndarray, p_max: float,
                     sdma: bool = False) -> float:
    """Local reward: worst served-UE rate under estimated cross-AP channels.

    The agent substitutes its channel estimates for every other AP's column
    and its own true channel column, decodes the full (partly frozen) global
    action, and takes the minimum rate over the UEs it serves.  An agent
    serving no UE gets reward 0.

    Args:
        own_H: agent n's true channel column, shape (K, M, M').
        estimates: estimated channels (K, N, M, M'); column n is ignored.
    """
    K, N = assoc.shape
    m_ap, m_ue = own_H.shape[1], own_H.shape[2]
    precoders, shares = decode_global_action(raw_global, K, N, m_ap, m_ue,
                                             p_max, assoc, sdma)
    H_eff = estimates.copy()
    H_eff[:, n] = own_H
    rep = rsma.rates(effective_channels(H_eff, noise_power), precoders,
                     assoc, shares)
    served = np.flatnonzero(assoc[:, n] == 1)
    if served.size == 0:
        return 0.0
    return float(rep.totals[served].min())


# ------------------------------------------------------------------ trace ----

def write_trace(path: str, messages: list[SyncMessage], append: bool = True) -> None:
    """Append sync messages to an on-disk federation trace."""
    mode = "ab" if append else "wb"
    with open(path, mode) as fh:
        for msg in messages:
            blob = msg.to_bytes()
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def read_trace(path: str) -> list[SyncMessage]:
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            (ln,) = struct.unpack("<I", head)
            out.append(SyncMessage.from_bytes(fh.read(ln)))
    return out


# ------------------------------------------------------------- sync round ----

@dataclass
class ViewSnapshot:
    """State/action snapshot exchanged without parameters."""

    agent_id: int
    state_snapshot: np.ndarray
    action_snapshot: np.ndarray


def exchange_views(workers) -> list[ViewSnapshot]:
    """Refresh every worker's view of the others; parameters stay local.

    Run once inside a synchronisation episode: each worker's frozen
    state/action blocks and the channel estimates derived from them are
    rebuilt from the other workers' current snapshots.
    """
    views = [ViewSnapshot(w.agent_id, w.snapshot_state(), w.snapshot_action())
             for w in workers]
    for w in workers:
        w.refresh(views)
    return views


def sync_round(workers, episode: int, trace_path: str | None = None) -> list[SyncMessage]:
    """One synchronisation round over agent workers.

    Collects every worker's SyncMessage, averages all four networks, installs
    the averaged parameters everywhere, and hands each worker the full block
    of snapshots so it can refresh its frozen state/action views and channel
    estimates.  Workers must expose agent_id, nets, snapshot_state(),
    snapshot_action() and refresh(messages).
    """
    messages = [build_sync_message(w.agent_id, episode, w.nets,
                                   w.snapshot_state(), w.snapshot_action())
                for w in workers]
    averaged = aggregate(messages)
    for w in workers:
        install_params(w.nets, averaged)
        w.refresh(messages)
    if trace_path is not None:
        write_trace(trace_path, messages)
    return messages
