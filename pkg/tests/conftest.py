"""Shared random-instance builders plus the acceptance-line reporter."""

import json

import numpy as np
import pytest

from cfrsma import channel, config, pipeline, rsma

# one line per end-to-end criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def log(num, name, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        line = f"ACCEPTANCE {num:02d} {name}: {status}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append((num, line))
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def run_cache():
    """Training runs shared across the trend criteria, keyed by config."""
    cache = {}

    def get(mode, seed, p_max_dbm=30.0, episodes=120, steps=25, t_fl=10):
        key = json.dumps([mode, seed, p_max_dbm, episodes, steps, t_fl])
        if key not in cache:
            cfg = config.from_dict({
                "mode": mode, "seed": seed,
                "network": {"n_ap": 2, "n_ue": 4, "m_ap": 2, "m_ue": 1,
                            "p_max_dbm": p_max_dbm, "n_ue_max": 4},
                "training": {"episodes": episodes, "steps_per_episode": steps,
                             "t_fl": t_fl},
            })
            cache[key] = pipeline.run(cfg)
        return cache[key]

    return get


def random_channelset(rng, K, N, M, Mp, scale=1.0, noise=1e-2):
    """Synthetic ChannelSet with CN(0, scale^2) entries; large-scale fields dummy."""
    H = scale * (rng.standard_normal((K, N, M, Mp))
                 + 1j * rng.standard_normal((K, N, M, Mp))) / np.sqrt(2.0)
    return channel.ChannelSet(H=H, kappa=np.ones((K, N)), pl_db=np.zeros((K, N)),
                              z=np.zeros((K, N)), noise_power=noise)


def random_precoders(rng, K, N, M, Mp, p_max=1.0):
    """Random complex precoders scaled so every AP sits inside the power budget."""
    def cplx(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    P_c = cplx(N, M, Mp)
    P_p = cplx(K, N, M, Mp)
    for n in range(N):
        p = np.sum(np.abs(P_c[n]) ** 2) + np.sum(np.abs(P_p[:, n]) ** 2)
        s = 0.9 * np.sqrt(p_max / p)
        P_c[n] *= s
        P_p[:, n] *= s
    return rsma.PrecoderSet(P_c=P_c, P_p=P_p)


def random_shares(rng, K):
    c = rng.uniform(0.0, 1.0, K)
    s = c.sum()
    return c / s if s > 1.0 else c


def random_assoc(rng, K, N, density=0.7):
    g = (rng.uniform(size=(K, N)) < density).astype(np.int64)
    return g
