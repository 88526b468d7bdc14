"""Built-in verification suite.

Each check recomputes a core quantity through an independent route (explicit
inverses and eigendecompositions, finite differences, exhaustive enumeration)
and compares against the production path.  The suite is self-contained so a
deployed installation can be verified without the test tree.  run_all takes
an optional fault name that deliberately fails one check, which lets the
reporting path itself be exercised.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import ap_selection, ddpg, federation, nn, rsma


class CheckFailure(AssertionError):
    """A selftest check found a disagreement."""


def _require(ok: bool, msg: str) -> None:
    if not ok:
        raise CheckFailure(msg)


def _random_channelset(rng, K, N, M, Mp, noise=1e-2):
    H = rng.standard_normal((K, N, M, Mp)) + 1j * rng.standard_normal((K, N, M, Mp))
    return SimpleNamespace(H=H, noise_power=noise)


def _random_precoders(rng, K, N, M, Mp, p_max=1.0):
    P_c = rng.standard_normal((N, M, Mp)) + 1j * rng.standard_normal((N, M, Mp))
    P_p = rng.standard_normal((K, N, M, Mp)) + 1j * rng.standard_normal((K, N, M, Mp))
    for n in range(N):
        used = np.sum(np.abs(P_c[n]) ** 2) + np.sum(np.abs(P_p[:, n]) ** 2)
        s = np.sqrt(0.9 * p_max / used)
        P_c[n] *= s
        P_p[:, n] *= s
    return rsma.PrecoderSet(P_c, P_p)


def _oracle_rates(H, n0, P_c, P_p, g, c):
    """Literal rate formulas via explicit inverses and eigenvalues."""
    K, N, M, Mp = H.shape
    common = np.zeros(K)
    private = np.zeros(K)
    for k in range(K):
        sig_c = n0 * np.eye(Mp, dtype=complex)
        for i in range(K):
            for n in range(N):
                A = H[k, n].conj().T @ P_p[i, n]
                sig_c = sig_c + A @ A.conj().T
        sig_p = sig_c.copy()
        for n in range(N):
            A = H[k, n].conj().T @ P_p[k, n]
            sig_p = sig_p - A @ A.conj().T
        inv_c = np.linalg.inv(sig_c)
        inv_p = np.linalg.inv(sig_p)
        xc = np.zeros((Mp, Mp), dtype=complex)
        xp = np.zeros((Mp, Mp), dtype=complex)
        for n in range(N):
            Ac = H[k, n].conj().T @ P_c[n]
            Ap = H[k, n].conj().T @ P_p[k, n]
            xc = xc + Ac.conj().T @ inv_c @ Ac
            xp = xp + g[k, n] * (Ap.conj().T @ inv_p @ Ap)
        common[k] = np.log2(1.0 + np.linalg.eigvalsh(0.5 * (xc + xc.conj().T))).sum()
        private[k] = np.log2(1.0 + np.linalg.eigvalsh(0.5 * (xp + xp.conj().T))).sum()
    rc = common.min()
    totals = c * rc + private
    return common, private, rc, totals


def check_rate_oracle() -> str:
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(5):
        K, N, M, Mp = 3, 2, 3, 2
        ch = _random_channelset(rng, K, N, M, Mp)
        pre = _random_precoders(rng, K, N, M, Mp)
        g = (rng.random((K, N)) < 0.7).astype(int)
        c = rng.random(K)
        c = c / (c.sum() + 1.0)
        rep = rsma.rates(ch, pre, g, c)
        o_common, o_private, o_rc, o_tot = _oracle_rates(
            ch.H, ch.noise_power, pre.P_c, pre.P_p, g, c)
        dev = max(np.max(np.abs(rep.common_rates - o_common)),
                  np.max(np.abs(rep.private_rates - o_private)),
                  abs(rep.common_rate - o_rc),
                  np.max(np.abs(rep.totals - o_tot)))
        worst = max(worst, dev / max(1.0, abs(o_rc)))
    _require(worst <= 1e-10, f"rate mismatch {worst:.3e} > 1e-10")
    return f"max relative deviation {worst:.3e} over 5 instances"


def check_scalar_shannon() -> str:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        h = rng.standard_normal() + 1j * rng.standard_normal()
        pc, pp, n0 = rng.random() + 0.1, rng.random() + 0.1, rng.random() + 0.05
        ch = _random_channelset(rng, 1, 1, 1, 1, noise=n0)
        ch.H = np.array([[[[h]]]])
        pre = rsma.PrecoderSet(np.sqrt(pc) * np.ones((1, 1, 1), complex),
                               np.sqrt(pp) * np.ones((1, 1, 1, 1), complex))
        rep = rsma.rates(ch, pre, np.ones((1, 1), int), np.array([1.0]))
        a = abs(h) ** 2
        rc = np.log2(1.0 + a * pc / (n0 + a * pp))
        rp = np.log2(1.0 + a * pp / n0)
        worst = max(worst,
                    abs(rep.common_rate - rc), abs(rep.private_rates[0] - rp))
    _require(worst <= 1e-12, f"scalar-channel mismatch {worst:.3e} > 1e-12")
    return f"max deviation {worst:.3e} against closed form"


def check_gradients() -> str:
    rng = np.random.default_rng(11)
    worst = 0.0
    for act in ("tanh", "linear"):
        net = nn.make_mlp(3, 2, 1.5, act, rng)
        x = rng.standard_normal(3)
        w = rng.standard_normal(2)
        y, cache = nn.forward_cached(net, x)
        grads, _ = nn.backward(net, cache, w.reshape(1, -1))
        eps = 1e-6
        for gi, p in zip(grads, net.params()):
            num = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                old = p[i]
                p[i] = old + eps
                up = float(w @ nn.forward(net, x))
                p[i] = old - eps
                dn = float(w @ nn.forward(net, x))
                p[i] = old
                num[i] = (up - dn) / (2 * eps)
                it.iternext()
            scale = max(1.0, np.abs(num).max())
            worst = max(worst, float(np.abs(gi - num).max()) / scale)
    _require(worst <= 1e-6, f"gradient error {worst:.3e} > 1e-6")
    return f"max relative gradient error {worst:.3e}"


def check_selection_exact() -> str:
    rng = np.random.default_rng(23)
    for trial in range(10):
        K, N = 3, 3
        inst = ap_selection.SelectionInstance(
            lam=rng.random((K, N)),
            private_power=rng.random((K, N)) * 0.4,
            common_power=rng.random(N) * 0.3,
            p_max=1.0, n_ue_max=int(rng.integers(1, N + 1)))
        got = ap_selection.solve_p3(inst)
        ref = ap_selection.brute_force_p3(inst)
        _require(np.array_equal(got, ref),
                 f"solver disagrees with enumeration on trial {trial}")
    return "10/10 instances match exhaustive enumeration"


def check_estimation() -> str:
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(5):
        M, Mp, K = 4, 2, 3
        P = rng.standard_normal((M, Mp)) + 1j * rng.standard_normal((M, Mp))
        H = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
        Y = H.conj().T @ P
        est = federation.estimate_channel(Y, P)
        proj = P @ np.linalg.pinv(P.conj().T @ P) @ P.conj().T
        ref = proj @ H
        worst = max(worst, float(np.abs(est - ref).max()) / np.abs(H).max())
    _require(worst <= 1e-10, f"estimator residual {worst:.3e} > 1e-10")
    return f"max residual {worst:.3e} against the projector form"


def check_decode_constraints() -> str:
    rng = np.random.default_rng(41)
    K, M, Mp, p_max = 4, 3, 2, 0.5
    for _ in range(20):
        raw = rng.uniform(-1, 1, ddpg.local_action_dim(K, M, Mp))
        g_col = (rng.random(K) < 0.6).astype(int)
        P_c, P_p, c = ddpg.decode_action(raw, K, M, Mp, p_max, g_col=g_col)
        used = np.sum(np.abs(P_c) ** 2) + sum(
            np.sum(np.abs(P_p[k]) ** 2) for k in range(K) if g_col[k])
        _require(used <= p_max * (1 + 1e-12), "per-AP power budget violated")
        _require(np.all(P_p[g_col == 0] == 0), "unselected private not zeroed")
        _require(np.all(c >= 0) and c.sum() <= 1.0, "share simplex violated")
    return "power, gating and share constraints hold on 20 random decodes"


def check_aggregation_identity() -> str:
    rng = np.random.default_rng(53)
    net = nn.make_mlp(4, 3, 2.0, "tanh", rng)
    pv = nn.serialize(net)
    for n in (2, 3, 5):
        avg = federation.average_vectors([pv.data.copy() for _ in range(n)])
        _require(np.array_equal(avg, pv.data),
                 f"averaging {n} identical vectors is not exact")
    return "identical-parameter averaging is bit-exact for n in {2, 3, 5}"


CHECKS = (
    ("rate-oracle", check_rate_oracle),
    ("scalar-shannon", check_scalar_shannon),
    ("gradient-check", check_gradients),
    ("selection-exact", check_selection_exact),
    ("estimation-projector", check_estimation),
    ("decode-constraints", check_decode_constraints),
    ("aggregation-identity", check_aggregation_identity),
)


def run_all(inject_fault: str | None = None) -> list[tuple[str, bool, str]]:
    """Run every check; returns (name, passed, detail) per check."""
    names = [name for name, _ in CHECKS]
    if inject_fault is not None and inject_fault not in names:
        raise ValueError(f"unknown check {inject_fault!r}; expected one of {names}")
    results = []
    for name, fn in CHECKS:
        try:
            detail = fn()
            if name == inject_fault:
                raise CheckFailure("injected fault")
            results.append((name, True, detail))
        except CheckFailure as exc:
            results.append((name, False, str(exc)))
    return results
