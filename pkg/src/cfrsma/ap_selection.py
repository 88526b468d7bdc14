"""Max-min AP-UE association as an exact integer program.

The pairing metric lambda[k, n] is the largest eigenvalue of the private
SINR-like form Xi_p for pair (k, n) with every pair active; the program picks
a binary association g maximising min_k sum_n g[k, n] * lambda[k, n] subject
to the per-AP power budget (common power plus selected private powers) and a
per-UE cap on the number of serving APs.

solve_p3 is an exact depth-first branch-and-bound: variables are fixed in
row-major order with the 0-branch explored first, so complete assignments are
visited in lexicographic order and the first incumbent attaining the optimum
is the lexicographically smallest maximiser.  The node bound is, per UE, the
fractional packing of the row's unfixed candidates (capped by the optimistic
per-AP power residual and by the remaining association slots), minimised over
UEs.  A greedy warm start supplies the initial incumbent value.  Exact at
desk scale (K*N <= 64 decision variables); brute_force_p3 is the reference
oracle for K*N <= 20.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import rsma


class InfeasibleSelection(ValueError):
    """No association satisfies the power budget (common power alone exceeds it)."""


@dataclass
class SelectionInstance:
    """Frozen data of one selection problem.

    Attributes:
        lam: pairing metrics, shape (K, N), non-negative.
        private_power: Frobenius-squared private precoder powers, shape (K, N).
        common_power: common precoder powers, shape (N,).
        p_max: per-AP power budget, watts.
        n_ue_max: maximum serving APs per UE.
    """

    lam: np.ndarray
    private_power: np.ndarray
    common_power: np.ndarray
    p_max: float
    n_ue_max: int

    def validate(self) -> None:
        if self.lam.ndim != 2 or self.lam.shape != self.private_power.shape:
            raise ValueError("lam and private_power must share shape (K, N)")
        if self.common_power.shape != (self.lam.shape[1],):
            raise ValueError("common_power must have shape (N,)")
        if np.any(self.lam < 0) or np.any(self.private_power < 0):
            raise ValueError("metrics and powers must be non-negative")
        if self.p_max <= 0 or self.n_ue_max < 1:
            raise ValueError("need p_max > 0 and n_ue_max >= 1")
        if np.any(self.common_power > self.p_max):
            raise InfeasibleSelection("common power alone exceeds the AP budget")


def lambda_max(X: np.ndarray, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a Hermitian matrix; rejects non-Hermitian input."""
    X = np.asarray(X)
    nrm = np.linalg.norm(X)
    if np.linalg.norm(X - X.conj().T) > tol * max(1.0, nrm):
        raise ValueError("input is not Hermitian within tolerance")
    return float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[-1])


def build_instance(channels, precoders: rsma.PrecoderSet, p_max: float,
                   n_ue_max: int) -> SelectionInstance:
    """Assemble the selection problem from a channel draw and trained precoders."""
    K, N, M, Mp = precoders.P_p.shape
    lam = np.empty((K, N))
    for k in range(K):
        for n in range(N):
            _, xi_p = rsma.xi_matrices(channels, precoders, k, n)
            lam[k, n] = max(lambda_max(xi_p), 0.0)
    inst = SelectionInstance(
        lam=lam,
        private_power=np.sum(np.abs(precoders.P_p) ** 2, axis=(2, 3)),
        common_power=np.sum(np.abs(precoders.P_c) ** 2, axis=(1, 2)),
        p_max=p_max, n_ue_max=n_ue_max)
    inst.validate()
    return inst


def selection_objective(inst: SelectionInstance, g: np.ndarray) -> float:
    """min over UEs of the selected-metric sum."""
    return float(np.min(np.sum(np.asarray(g) * inst.lam, axis=1)))


def is_feasible(inst: SelectionInstance, g: np.ndarray) -> bool:
    g = np.asarray(g)
    power = inst.common_power + np.sum(g * inst.private_power, axis=0)
    return bool(np.all(power <= inst.p_max) and np.all(g.sum(axis=1) <= inst.n_ue_max))


def brute_force_p3(inst: SelectionInstance) -> np.ndarray:
    """Reference exact solver: enumerate all binary matrices (K*N <= 20)."""
    inst.validate()
    K, N = inst.lam.shape
    if K * N > 20:
        raise ValueError("brute force limited to K*N <= 20")
    best_val = -1.0
    best = None
    for bits in itertools.product((0, 1), repeat=K * N):
        g = np.array(bits, dtype=np.int64).reshape(K, N)
        if not is_feasible(inst, g):
            continue
        val = selection_objective(inst, g)
        if val > best_val:
            best_val = val
            best = g
    if best is None:
        raise InfeasibleSelection("no feasible association")
    return best


def _greedy_value(inst: SelectionInstance) -> float:
    """Feasible warm-start value: repeatedly serve the worst-off UE."""
    K, N = inst.lam.shape
    g = np.zeros((K, N), dtype=np.int64)
    residual = inst.p_max - inst.common_power.copy()
    row_val = np.zeros(K)
    active = set(range(K))
    while active:
        k = min(active, key=lambda i: (row_val[i], i))
        cand = [n for n in range(N)
                if g[k, n] == 0 and inst.private_power[k, n] <= residual[n]]
        if not cand or g[k].sum() >= inst.n_ue_max:
            active.discard(k)
            continue
        n = max(cand, key=lambda j: (inst.lam[k, j], -j))
        if inst.lam[k, n] <= 0.0:
            active.discard(k)
            continue
        g[k, n] = 1
        residual[n] -= inst.private_power[k, n]
        row_val[k] += inst.lam[k, n]
    return float(row_val.min())


def solve_p3(inst: SelectionInstance) -> np.ndarray:
    """Exact max-min association; ties go to the lexicographically smallest g."""
    inst.validate()
    K, N = inst.lam.shape
    lam = inst.lam
    priv = inst.private_power
    n_vars = K * N

    # order candidates of each row by metric, once
    row_order = [np.argsort(-lam[k], kind="stable") for k in range(K)]

    residual = (inst.p_max - inst.common_power).astype(float)
    row_cnt = np.zeros(K, dtype=np.int64)
    row_val = np.zeros(K)
    g = np.zeros((K, N), dtype=np.int64)

    start = _greedy_value(inst)
    # deflate so the first leaf matching the warm-start value still becomes
    # the incumbent (keeps the lexicographic tie-break exact)
    best_val = start - (1e-12 * abs(start) + 1e-300)
    best = None

    def bound(j: int) -> float:
        ub = np.inf
        for k in range(K):
            first_unfixed = max(j - k * N, 0)
            slots = inst.n_ue_max - row_cnt[k]
            acc = row_val[k]
            remaining = float(slots)
            if remaining > 0:
                for n in row_order[k]:
                    if n < first_unfixed:
                        continue  # already fixed for this row
                    lam_kn = lam[k, n]
                    if lam_kn <= 0.0 or remaining <= 0:
                        break
                    p = priv[k, n]
                    cap = 1.0 if p <= 0 else min(1.0, max(residual[n], 0.0) / p)
                    take = min(cap, remaining)
                    acc += take * lam_kn
                    remaining -= take
            if acc < ub:
                ub = acc
        return ub * (1.0 + 1e-9) + 1e-300

    def dfs(j: int) -> None:
        nonlocal best_val, best
        if j == n_vars:
            # recompute exactly (the incremental row_val only feeds the bound,
            # which carries a 1e-9 inflation to absorb float drift)
            val = selection_objective(inst, g)
            if val > best_val:
                best_val = val
                best = g.copy()
            return
        if bound(j) <= best_val:
            return
        k, n = divmod(j, N)
        dfs(j + 1)  # 0-branch first: lexicographic leaf order
        if row_cnt[k] < inst.n_ue_max and priv[k, n] <= residual[n]:
            g[k, n] = 1
            row_cnt[k] += 1
            row_val[k] += lam[k, n]
            residual[n] -= priv[k, n]
            dfs(j + 1)
            g[k, n] = 0
            row_cnt[k] -= 1
            row_val[k] -= lam[k, n]
            residual[n] += priv[k, n]

    dfs(0)
    if best is None:
        raise InfeasibleSelection("no feasible association")
    return best
