"""Association solver tests: closed-form eigenvalue oracle and exhaustive search."""

import numpy as np
import pytest

from cfrsma import ap_selection, rsma
from conftest import random_channelset, random_precoders


def lambda_max_2x2_oracle(X):
    # largest root of the 2x2 Hermitian characteristic polynomial
    a = X[0, 0].real
    d = X[1, 1].real
    return (a + d) / 2 + np.sqrt(((a - d) / 2) ** 2 + abs(X[0, 1]) ** 2)


def random_instance(rng, K=None, N=None, tight=False):
    K = K or int(rng.integers(1, 4))
    N = N or int(rng.integers(1, 4))
    lam = rng.uniform(0.0, 2.0, size=(K, N))
    priv = rng.uniform(0.0, 0.5, size=(K, N))
    common = rng.uniform(0.0, 0.3, size=N)
    p_max = float(rng.uniform(0.4, 0.8)) if tight else float(rng.uniform(0.8, 2.0))
    n_ue_max = int(rng.integers(1, N + 1))
    return ap_selection.SelectionInstance(lam=lam, private_power=priv,
                                          common_power=common, p_max=p_max,
                                          n_ue_max=n_ue_max)


def test_lambda_max_matches_2x2_closed_form():
    rng = np.random.default_rng(61)
    for _ in range(50):
        B = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        X = B @ B.conj().T  # Hermitian PSD
        assert ap_selection.lambda_max(X) == pytest.approx(
            lambda_max_2x2_oracle(X), rel=1e-12)


def test_lambda_max_rejects_non_hermitian():
    X = np.array([[1.0, 2.0], [0.5, 1.0]], dtype=complex)
    with pytest.raises(ValueError):
        ap_selection.lambda_max(X)


def test_lambda_max_scalar_case():
    assert ap_selection.lambda_max(np.array([[3.5 + 0j]])) == pytest.approx(3.5)


def test_solve_matches_brute_force_random():
    rng = np.random.default_rng(71)
    for i in range(120):
        inst = random_instance(rng, tight=(i % 2 == 0))
        g_bb = ap_selection.solve_p3(inst)
        g_bf = ap_selection.brute_force_p3(inst)
        assert np.array_equal(g_bb, g_bf), f"instance {i}: solver disagrees"
        assert ap_selection.is_feasible(inst, g_bb)


def test_solve_matches_brute_force_medium_size():
    rng = np.random.default_rng(73)
    for _ in range(10):
        inst = random_instance(rng, K=4, N=4, tight=True)
        g_bb = ap_selection.solve_p3(inst)
        g_bf = ap_selection.brute_force_p3(inst)
        assert np.array_equal(g_bb, g_bf)


def test_lexicographic_tie_break():
    # two identical APs; one slot: (0,1) is lexicographically below (1,0)
    inst = ap_selection.SelectionInstance(
        lam=np.array([[1.0, 1.0]]), private_power=np.zeros((1, 2)),
        common_power=np.zeros(2), p_max=1.0, n_ue_max=1)
    assert np.array_equal(ap_selection.solve_p3(inst), [[0, 1]])
    assert np.array_equal(ap_selection.brute_force_p3(inst), [[0, 1]])


def test_all_zero_metric_yields_empty_association():
    inst = ap_selection.SelectionInstance(
        lam=np.zeros((2, 2)), private_power=np.full((2, 2), 0.1),
        common_power=np.zeros(2), p_max=1.0, n_ue_max=2)
    g = ap_selection.solve_p3(inst)
    assert np.array_equal(g, np.zeros((2, 2)))


def test_infeasible_common_power_raises():
    inst = ap_selection.SelectionInstance(
        lam=np.ones((1, 2)), private_power=np.zeros((1, 2)),
        common_power=np.array([0.5, 2.0]), p_max=1.0, n_ue_max=1)
    with pytest.raises(ap_selection.InfeasibleSelection):
        ap_selection.solve_p3(inst)


def test_relaxing_budgets_never_hurts():
    rng = np.random.default_rng(79)
    for _ in range(40):
        inst = random_instance(rng, tight=True)
        base = ap_selection.selection_objective(inst, ap_selection.solve_p3(inst))
        more_power = ap_selection.SelectionInstance(
            lam=inst.lam, private_power=inst.private_power,
            common_power=inst.common_power, p_max=inst.p_max * 2,
            n_ue_max=inst.n_ue_max)
        more_slots = ap_selection.SelectionInstance(
            lam=inst.lam, private_power=inst.private_power,
            common_power=inst.common_power, p_max=inst.p_max,
            n_ue_max=inst.n_ue_max + 1)
        assert ap_selection.selection_objective(
            more_power, ap_selection.solve_p3(more_power)) >= base - 1e-12
        assert ap_selection.selection_objective(
            more_slots, ap_selection.solve_p3(more_slots)) >= base - 1e-12


def test_build_instance_from_channels():
    rng = np.random.default_rng(83)
    cs = random_channelset(rng, 2, 2, 3, 2)
    ps = random_precoders(rng, 2, 2, 3, 2)
    inst = ap_selection.build_instance(cs, ps, p_max=1.0, n_ue_max=2)
    assert inst.lam.shape == (2, 2)
    assert np.all(inst.lam >= 0)
    for k in range(2):
        for n in range(2):
            _, xi_p = rsma.xi_matrices(cs, ps, k, n)
            ev = np.linalg.eigvalsh(0.5 * (xi_p + xi_p.conj().T))[-1]
            assert inst.lam[k, n] == pytest.approx(max(ev, 0.0), rel=1e-12)
    assert inst.private_power[1, 0] == pytest.approx(
        np.sum(np.abs(ps.P_p[1, 0]) ** 2), rel=1e-12)
    assert inst.common_power[1] == pytest.approx(
        np.sum(np.abs(ps.P_c[1]) ** 2), rel=1e-12)


def test_miso_argmax_agrees_with_rate_enumeration():
    # with M'=1 the log2(1+x) map is monotone, so the max-min linear objective
    # and the max-min private rate pick the same association
    rng = np.random.default_rng(89)
    import itertools
    for _ in range(10):
        K, N = 2, 2
        cs = random_channelset(rng, K, N, 2, 1, noise=1e-2)
        ps = random_precoders(rng, K, N, 2, 1)
        inst = ap_selection.build_instance(cs, ps, p_max=5.0, n_ue_max=N)
        g_sel = ap_selection.solve_p3(inst)
        best, best_g = -1.0, None
        for bits in itertools.product((0, 1), repeat=K * N):
            g = np.array(bits).reshape(K, N)
            if not ap_selection.is_feasible(inst, g):
                continue
            val = rsma.rates(cs, ps, g, np.zeros(K)).private_rates.min()
            if val > best:
                best, best_g = val, g
        got = rsma.rates(cs, ps, g_sel, np.zeros(K)).private_rates.min()
        assert got == pytest.approx(best, rel=1e-10)
        assert np.array_equal(g_sel, best_g)


def test_larger_instance_runs_quickly():
    import time
    rng = np.random.default_rng(97)
    inst = random_instance(rng, K=6, N=8, tight=True)  # 48 variables
    t0 = time.perf_counter()
    g = ap_selection.solve_p3(inst)
    dt = time.perf_counter() - t0
    assert ap_selection.is_feasible(inst, g)
    assert dt < 10.0
