"""Three-block resource allocation pipeline.

Block 1 pre-trains one DDPG agent per AP (or a single centralized agent)
with every AP serving every UE.  Block 2 freezes the learned precoders,
scores each (UE, AP) pair and solves the max-min association program
exactly.  Block 3 fine-tunes the precoders under the selected association
with a smaller exploration schedule.

Federated agents never see the true channels of other APs: their global
state and action views are peer snapshots, rebuilt from the current
pilots once inside each sync episode and frozen in between, and rewards
are computed against least-squares channel estimates recovered from those
snapshots.  The centralized baseline trains one agent on the full state
with true channels throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ap_selection, channel, ddpg, federation, nn, rsma
from .config import ExperimentConfig

BLOCKS = ("pretrain", "finetune")

# Seed-tree tags; every stream is SeedSequence([seed, tag, ...]).
_SEED_TOPOLOGY = 0
_SEED_CHANNEL = 1
_SEED_AGENT_INIT = 2
_SEED_EXPLORE = 3
_SEED_REPLAY = 4


def seed_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


@dataclass
class EpisodeRow:
    """Deterministic end-of-episode evaluation against true channels."""

    redraw: int
    block: str
    episode: int
    min_rate: float
    mean_rate: float
    common_rate: float
    power_slack: float


@dataclass
class TraceRecord:
    """Everything needed to re-check constraints on a logged solution."""

    redraw: int
    block: str
    episode: int
    precoders: rsma.PrecoderSet
    shares: np.ndarray
    assoc: np.ndarray


@dataclass
class RunReport:
    config: ExperimentConfig
    rows: list[EpisodeRow]
    association: np.ndarray
    wall_clock_s: float
    trace: list[TraceRecord] = field(default_factory=list)

    def block_series(self, block: str, key: str = "min_rate",
                     redraw: int = 1) -> np.ndarray:
        vals = [getattr(r, key) for r in self.rows
                if r.block == block and r.redraw == redraw]
        return np.asarray(vals)


class AgentWorker:
    """Per-AP learner satisfying the sync-round worker interface.

    Keeps frozen state/action blocks for the other APs (rebuilt from the
    current pilots once inside each sync episode, otherwise frozen at the
    last exchange), the channel estimates recovered from those blocks, and
    its own replay machinery.  ``sdma`` switches off the common stream.
    """

    def __init__(self, agent_id: int, cfg: ExperimentConfig,
                 noise_power: float, sdma: bool = False):
        net, tr = cfg.network, cfg.training
        self.agent_id = agent_id
        self.n_ap = net.n_ap
        self.n_ue = net.n_ue
        self.m_ap = net.m_ap
        self.m_ue = net.m_ue
        self.p_max = cfg.p_max_w
        self.sdma = sdma
        self.ls = ddpg.local_state_dim(net.n_ue, net.m_ue)
        self.la = ddpg.local_action_dim(net.n_ue, net.m_ap, net.m_ue)
        s_dim = net.n_ap * self.ls
        a_dim = net.n_ap * self.la
        self.nets = ddpg.make_agent(
            s_dim, a_dim, self.la, tr.eta, tr.lr,
            seed_rng(cfg.seed, _SEED_AGENT_INIT, agent_id),
            state_scale=np.sqrt(noise_power),
            beta1=tr.beta1, beta2=tr.beta2, actor_lr=tr.actor_lr)
        self.frozen_states = np.zeros((net.n_ap, self.ls))
        self.frozen_actions = np.zeros((net.n_ap, self.la))
        self.estimates = np.zeros(
            (net.n_ue, net.n_ap, net.m_ap, net.m_ue), dtype=complex)
        self.noise_power = noise_power
        self.buffer = None
        self.rng_explore = None
        self.own_H = None
        self.own_state = np.zeros(self.ls)
        self.own_action = np.zeros(self.la)

    def begin_block(self, cfg: ExperimentConfig, redraw: int, block_idx: int):
        tr = cfg.training
        self.buffer = ddpg.ReplayBuffer(
            tr.replay_capacity, self.n_ap * self.ls, self.n_ap * self.la,
            seed_rng(cfg.seed, _SEED_REPLAY, redraw, block_idx, self.agent_id))
        self.rng_explore = seed_rng(
            cfg.seed, _SEED_EXPLORE, redraw, block_idx, self.agent_id)
        self.nets.actor_opt = nn.adam_init(
            self.nets.actor, tr.actor_lr, tr.beta1, tr.beta2)
        self.nets.critic_opt = nn.adam_init(
            self.nets.critic, tr.lr, tr.beta1, tr.beta2)

    def begin_episode(self, own_H: np.ndarray):
        """New channel draw; precoders restart from zero transmission."""
        self.own_H = own_H
        zc = np.zeros((self.m_ap, self.m_ue), dtype=complex)
        zp = np.zeros((self.n_ue, self.m_ap, self.m_ue), dtype=complex)
        self.own_state = ddpg.local_state(own_H, zc, zp)

    def global_state(self, own_block: np.ndarray | None = None) -> np.ndarray:
        blocks = self.frozen_states.copy()
        blocks[self.agent_id] = self.own_state if own_block is None else own_block
        return blocks.ravel()

    def global_action(self, own_raw: np.ndarray) -> np.ndarray:
        blocks = self.frozen_actions.copy()
        blocks[self.agent_id] = own_raw
        return blocks.ravel()

    def snapshot_state(self) -> np.ndarray:
        return self.own_state.copy()

    def snapshot_action(self) -> np.ndarray:
        return self.own_action.copy()

    def refresh(self, messages):
        for msg in messages:
            self.frozen_states[msg.agent_id] = msg.state_snapshot
            self.frozen_actions[msg.agent_id] = msg.action_snapshot
        # Estimated channels of all APs follow from the exchanged blocks;
        # the reward path later overwrites the own-AP column with truth.
        assoc = np.ones((self.n_ue, self.n_ap), dtype=int)
        self.estimates = federation.estimates_from_snapshots(
            [self.frozen_states[n] for n in range(self.n_ap)],
            [self.frozen_actions[n] for n in range(self.n_ap)],
            self.n_ue, self.m_ap, self.m_ue, self.p_max, assoc,
            sdma=self.sdma)

    def train_step(self, sigma: float, assoc: np.ndarray, gamma: float,
                   batch_size: int, tau: float, step: int,
                   target_interval: int):
        g_col = assoc[:, self.agent_id]
        s = self.global_state()
        raw = ddpg.act(self.nets, s, sigma, self.rng_explore)
        P_c, P_p, _ = ddpg.decode_action(
            raw, self.n_ue, self.m_ap, self.m_ue, self.p_max,
            g_col=g_col, sdma=self.sdma)
        a_glob = self.global_action(raw)
        reward = federation.reward_for_agent(
            self.agent_id, self.own_H, self.noise_power, self.estimates,
            a_glob, assoc, self.p_max, sdma=self.sdma)
        next_state = ddpg.local_state(self.own_H, P_c, P_p)
        s2 = self.global_state(next_state)
        # raw rewards: a running normaliser would relabel equal-quality
        # transitions inconsistently across the buffer's lifetime
        self.buffer.push(ddpg.Experience(s, a_glob, reward, s2))
        self.own_state = next_state
        self.own_action = raw
        self._learn(gamma, batch_size, tau, step, target_interval)
        return reward

    def _learn(self, gamma, batch_size, tau, step, target_interval):
        if len(self.buffer) < batch_size:
            return
        slot = (self.agent_id * self.la, self.la)
        batch = self.buffer.sample(batch_size)
        z = ddpg.td_targets(self.nets, slot, batch, gamma)
        ddpg.critic_update(self.nets, batch, z)
        ddpg.actor_update(self.nets, slot, batch)
        if step % target_interval == 0:
            ddpg.polyak_all(self.nets, tau)

    def eval_raw(self, assoc: np.ndarray, steps: int) -> np.ndarray:
        """Greedy rollout from the zero-precoder reset; final action wins.

        Evaluating from the reset rather than from wherever exploration
        wandered keeps the series a function of the policy alone.
        """
        g_col = assoc[:, self.agent_id]
        zc = np.zeros((self.m_ap, self.m_ue), dtype=complex)
        zp = np.zeros((self.n_ue, self.m_ap, self.m_ue), dtype=complex)
        state = ddpg.local_state(self.own_H, zc, zp)
        raw = np.zeros(self.la)
        for _ in range(steps):
            raw = ddpg.act(self.nets, self.global_state(state), 0.0,
                           self.rng_explore)
            pc, pp, _ = ddpg.decode_action(
                raw, self.n_ue, self.m_ap, self.m_ue, self.p_max,
                g_col=g_col, sdma=self.sdma)
            state = ddpg.local_state(self.own_H, pc, pp)
        return raw


class CentralWorker:
    """Single centralized agent: full state and action, true channels."""

    def __init__(self, cfg: ExperimentConfig, noise_power: float):
        net, tr = cfg.network, cfg.training
        self.agent_id = 0
        self.n_ap = net.n_ap
        self.n_ue = net.n_ue
        self.m_ap = net.m_ap
        self.m_ue = net.m_ue
        self.p_max = cfg.p_max_w
        self.sdma = False
        self.ls = ddpg.local_state_dim(net.n_ue, net.m_ue)
        self.la = ddpg.local_action_dim(net.n_ue, net.m_ap, net.m_ue)
        s_dim = net.n_ap * self.ls
        a_dim = net.n_ap * self.la
        self.nets = ddpg.make_agent(
            s_dim, a_dim, a_dim, tr.eta, tr.lr,
            seed_rng(cfg.seed, _SEED_AGENT_INIT, 0),
            state_scale=np.sqrt(noise_power),
            beta1=tr.beta1, beta2=tr.beta2, actor_lr=tr.actor_lr)
        self.noise_power = noise_power
        self.channels = None
        self.state = np.zeros(s_dim)
        self.buffer = None
        self.rng_explore = None

    def begin_block(self, cfg: ExperimentConfig, redraw: int, block_idx: int):
        tr = cfg.training
        self.buffer = ddpg.ReplayBuffer(
            tr.replay_capacity, self.n_ap * self.ls, self.n_ap * self.la,
            seed_rng(cfg.seed, _SEED_REPLAY, redraw, block_idx, 0))
        self.rng_explore = seed_rng(cfg.seed, _SEED_EXPLORE, redraw, block_idx, 0)
        self.nets.actor_opt = nn.adam_init(
            self.nets.actor, tr.actor_lr, tr.beta1, tr.beta2)
        self.nets.critic_opt = nn.adam_init(
            self.nets.critic, tr.lr, tr.beta1, tr.beta2)

    def begin_episode(self, channels: channel.ChannelSet):
        self.channels = channels
        self.state = self._state_for(rsma.PrecoderSet(
            np.zeros((self.n_ap, self.m_ap, self.m_ue), dtype=complex),
            np.zeros((self.n_ue, self.n_ap, self.m_ap, self.m_ue), dtype=complex)))

    def _state_for(self, precoders: rsma.PrecoderSet) -> np.ndarray:
        blocks = [ddpg.local_state(self.channels.H[:, n],
                                   precoders.P_c[n], precoders.P_p[:, n])
                  for n in range(self.n_ap)]
        return np.concatenate(blocks)

    def train_step(self, sigma: float, assoc: np.ndarray, gamma: float,
                   batch_size: int, tau: float, step: int,
                   target_interval: int):
        s = self.state
        raw = ddpg.act(self.nets, s, sigma, self.rng_explore)
        precoders, shares = federation.decode_global_action(
            raw, self.n_ue, self.n_ap, self.m_ap, self.m_ue, self.p_max,
            assoc, sdma=self.sdma)
        report = rsma.rates(self.channels, precoders, assoc, shares)
        reward = float(np.min(report.totals))
        s2 = self._state_for(precoders)
        self.buffer.push(ddpg.Experience(s, raw, reward, s2))
        self.state = s2
        self._learn(gamma, batch_size, tau, step, target_interval)
        return reward

    def _learn(self, gamma, batch_size, tau, step, target_interval):
        if len(self.buffer) < batch_size:
            return
        slot = (0, self.n_ap * self.la)
        batch = self.buffer.sample(batch_size)
        z = ddpg.td_targets(self.nets, slot, batch, gamma)
        ddpg.critic_update(self.nets, batch, z)
        ddpg.actor_update(self.nets, slot, batch)
        if step % target_interval == 0:
            ddpg.polyak_all(self.nets, tau)

    def eval_raw(self, assoc: np.ndarray, steps: int) -> np.ndarray:
        """Greedy rollout from the zero-precoder reset; final action wins."""
        state = self._state_for(rsma.PrecoderSet(
            np.zeros((self.n_ap, self.m_ap, self.m_ue), dtype=complex),
            np.zeros((self.n_ue, self.n_ap, self.m_ap, self.m_ue),
                     dtype=complex)))
        raw = np.zeros(self.n_ap * self.la)
        for _ in range(steps):
            raw = ddpg.act(self.nets, state, 0.0, self.rng_explore)
            precoders, _ = federation.decode_global_action(
                raw, self.n_ue, self.n_ap, self.m_ap, self.m_ue, self.p_max,
                assoc, sdma=self.sdma)
            state = self._state_for(precoders)
        return raw


def build_workers(cfg: ExperimentConfig, noise_power: float):
    if cfg.mode == "drl-rsma-centralized":
        return [CentralWorker(cfg, noise_power)]
    sdma = cfg.mode == "fdrl-sdma"
    return [AgentWorker(n, cfg, noise_power, sdma=sdma)
            for n in range(cfg.network.n_ap)]


# Deterministic evaluation rollout length from the zero-precoder reset:
# long enough for the precoder/state loop to settle, short next to T.
EVAL_ROLLOUT_STEPS = 5


def joint_solution(workers, cfg: ExperimentConfig, assoc: np.ndarray):
    """Assemble the deterministic joint precoders and shares for logging."""
    net = cfg.network
    sdma = workers[0].sdma
    if cfg.mode == "drl-rsma-centralized":
        raw = workers[0].eval_raw(assoc, EVAL_ROLLOUT_STEPS)
        return federation.decode_global_action(
            raw, net.n_ue, net.n_ap, net.m_ap, net.m_ue, cfg.p_max_w,
            assoc, sdma=sdma)
    P_c = np.zeros((net.n_ap, net.m_ap, net.m_ue), dtype=complex)
    P_p = np.zeros((net.n_ue, net.n_ap, net.m_ap, net.m_ue), dtype=complex)
    per_agent = np.zeros((net.n_ap, net.n_ue))
    for w in workers:
        raw = w.eval_raw(assoc, EVAL_ROLLOUT_STEPS)
        pc, pp, sh = ddpg.decode_action(
            raw, net.n_ue, net.m_ap, net.m_ue, cfg.p_max_w,
            g_col=assoc[:, w.agent_id], sdma=sdma)
        P_c[w.agent_id] = pc
        P_p[:, w.agent_id] = pp
        per_agent[w.agent_id] = sh
    return rsma.PrecoderSet(P_c, P_p), ddpg.combine_shares(per_agent)


def evaluate(channels: channel.ChannelSet, precoders: rsma.PrecoderSet,
             assoc: np.ndarray, shares: np.ndarray, p_max: float):
    report = rsma.rates(channels, precoders, assoc, shares)
    slack = min(p_max - rsma.power_used(precoders, assoc, n)
                for n in range(precoders.P_c.shape[0]))
    return report, float(slack)


def run_block(cfg: ExperimentConfig, workers, topology: channel.Topology,
              assoc: np.ndarray, redraw: int, block: str,
              report: RunReport, collect_trace: bool):
    """One training block: E episodes of T iterations plus sync rounds.

    Returns the channel set of the final episode, which the selection
    block scores.
    """
    tr = cfg.training
    block_idx = BLOCKS.index(block)
    if block == "pretrain":
        lo, hi = tr.noise_start, tr.noise_end
    else:
        lo, hi = tr.finetune_noise_start, tr.finetune_noise_end
    for w in workers:
        w.begin_block(cfg, redraw, block_idx)
    federated = cfg.mode != "drl-rsma-centralized"
    channels = None
    for episode in range(1, tr.episodes + 1):
        channels = channel.draw_channel(
            topology, cfg.channel, cfg.network.m_ap, cfg.network.m_ue,
            seed_rng(cfg.seed, _SEED_CHANNEL, redraw, block_idx, episode))
        for w in workers:
            if federated:
                w.begin_episode(channels.H[:, w.agent_id])
            else:
                w.begin_episode(channels)
        sigma = ddpg.noise_sigma(episode, tr.episodes, lo, hi)
        # Peer views refresh once per sync episode, after the first step
        # has produced this episode's pilots; every other episode trains
        # on the views frozen at the last exchange.
        sync_episode = federated and episode % tr.t_fl == 0
        for step in range(1, tr.steps_per_episode + 1):
            if sync_episode and step == 2:
                federation.exchange_views(workers)
            for w in workers:
                w.train_step(sigma, assoc, tr.gamma, tr.batch_size,
                             tr.tau, step, tr.target_update_interval)
        precoders, shares = joint_solution(workers, cfg, assoc)
        rate_report, slack = evaluate(
            channels, precoders, assoc, shares, cfg.p_max_w)
        report.rows.append(EpisodeRow(
            redraw, block, episode, rate_report.min_rate,
            rate_report.mean_rate, rate_report.common_rate, slack))
        if collect_trace:
            report.trace.append(TraceRecord(
                redraw, block, episode, precoders.copy(),
                shares.copy(), assoc.copy()))
        if federated and episode % tr.t_fl == 0:
            federation.sync_round(workers, episode)
    return channels


def select_aps(cfg: ExperimentConfig, channels: channel.ChannelSet,
               workers, assoc_all: np.ndarray) -> np.ndarray:
    """Score pairs with the pre-trained precoders and solve the program.

    Any UE left unserved by the optimum is repaired greedily: it gets its
    highest-scoring AP whose power budget still admits the extra private
    stream.
    """
    net = cfg.network
    precoders, _ = joint_solution(workers, cfg, assoc_all)
    inst = ap_selection.build_instance(channels, precoders, cfg.p_max_w,
                                       net.n_ue_max)
    g = ap_selection.solve_p3(inst)
    for k in range(net.n_ue):
        if g[k].any():
            continue
        # row is empty, so the per-UE cap cannot bind; only power can
        order = np.argsort(-inst.lam[k], kind="stable")
        for n in order:
            used = inst.common_power[n] + inst.private_power[g[:, n] == 1, n].sum()
            if used + inst.private_power[k, n] <= inst.p_max + 1e-12:
                g[k, n] = 1
                break
    return g


def run(cfg: ExperimentConfig, collect_trace: bool = False) -> RunReport:
    """Execute pretrain, AP selection and finetune for each redraw."""
    start = time.perf_counter()
    n0 = channel.noise_power(cfg.channel.bandwidth_hz,
                             cfg.channel.noise_figure_db,
                             cfg.channel.temperature_k)
    net = cfg.network
    report = RunReport(cfg, rows=[], association=np.ones(
        (net.n_ue, net.n_ap), dtype=int), wall_clock_s=0.0)
    assoc_all = np.ones((net.n_ue, net.n_ap), dtype=int)
    for redraw in range(1, cfg.training.redraws + 1):
        topology = channel.draw_topology(
            net.n_ap, net.n_ue, net.area_side_m,
            seed_rng(cfg.seed, _SEED_TOPOLOGY, redraw))
        workers = build_workers(cfg, n0)
        last_channels = run_block(cfg, workers, topology, assoc_all,
                                  redraw, "pretrain", report, collect_trace)
        assoc = select_aps(cfg, last_channels, workers, assoc_all)
        run_block(cfg, workers, topology, assoc, redraw, "finetune",
                  report, collect_trace)
        report.association = assoc
    report.wall_clock_s = time.perf_counter() - start
    return report
