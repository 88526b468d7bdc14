"""Rate-splitting downlink rate engine.

Every AP n transmits one common-stream precoder P_c[n] (M x M') plus one
private precoder P_p[k, n] per UE k.  UE k first decodes the common stream,
treating all private streams as interference, then cancels it and decodes its
own private stream.  Rates are log2-determinants of the resulting SINR-like
matrices; the common rate is shared between UEs through non-negative shares
c_k with sum <= 1.

Interference covariances are never inverted explicitly; every quadratic form
is evaluated by solving the Hermitian system, and log-determinants go through
a Cholesky factor.  Private interference sums run over every UE regardless of
the association; unserved pairs are expected to carry zero precoders, and the
association only gates which private-signal terms count toward a UE's rate
and which private powers count toward an AP's budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG2 = np.log(2.0)


@dataclass
class PrecoderSet:
    """Common precoders P_c (N, M, M') and private precoders P_p (K, N, M, M')."""

    P_c: np.ndarray
    P_p: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int, int]:
        K, N, M, Mp = self.P_p.shape
        return K, N, M, Mp

    def copy(self) -> "PrecoderSet":
        return PrecoderSet(P_c=self.P_c.copy(), P_p=self.P_p.copy())


@dataclass
class RateReport:
    """Per-UE common/private rates and the share-weighted totals, bits/s/Hz."""

    common_rates: np.ndarray   # R_k^c, shape (K,)
    private_rates: np.ndarray  # R_k^p, shape (K,)
    common_rate: float         # R^c = min_k R_k^c
    totals: np.ndarray         # R_k = c_k R^c + R_k^p
    min_rate: float
    mean_rate: float


def _validate_shares(shares: np.ndarray, n_ue: int) -> np.ndarray:
    c = np.asarray(shares, dtype=float)
    if c.shape != (n_ue,):
        raise ValueError(f"shares must have shape ({n_ue},)")
    if np.any(c < 0) or c.sum() > 1.0 + 1e-9:
        raise ValueError("shares must be non-negative with sum <= 1")
    return c


def _validate_assoc(assoc: np.ndarray, n_ue: int, n_ap: int) -> np.ndarray:
    g = np.asarray(assoc)
    if g.shape != (n_ue, n_ap):
        raise ValueError(f"association must have shape ({n_ue}, {n_ap})")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("association entries must be 0 or 1")
    return g.astype(float)


def _private_cross_terms(H: np.ndarray, P_p: np.ndarray) -> np.ndarray:
    """G[k, i, n] = (H_kn^H P_in)(H_kn^H P_in)^H, shape (K, K, N, M', M')."""
    T = np.einsum("knab,inac->kinbc", H.conj(), P_p)
    return np.einsum("kinbc,kindc->kinbd", T, T.conj())


def interference_covariances(channels, precoders: PrecoderSet,
                             k: int) -> tuple[np.ndarray, np.ndarray]:
    """Common- and private-stream interference covariances for UE k.

    The common stream sees every private stream; the private stream of UE k
    sees every private stream but its own.  Both include the noise floor.

    Returns:
        (Sigma_c, Sigma_p), each (M', M') Hermitian positive definite.
    """
    H = channels.H
    K, N, M, Mp = precoders.P_p.shape
    eye = channels.noise_power * np.eye(Mp, dtype=complex)
    G = _private_cross_terms(H[k:k + 1], precoders.P_p)[0]  # (K, N, Mp, Mp)
    total = G.sum(axis=(0, 1))
    own = G[k].sum(axis=0)
    return eye + total, eye + (total - own)


def xi_matrices(channels, precoders: PrecoderSet, k: int,
                n: int) -> tuple[np.ndarray, np.ndarray]:
    """SINR-like quadratic forms Xi_c and Xi_p for the (UE k, AP n) pair.

    Xi = A^H Sigma^{-1} A with A the received precoded channel, evaluated by
    solving the Hermitian system instead of inverting Sigma.
    """
    sigma_c, sigma_p = interference_covariances(channels, precoders, k)
    Hkn = channels.H[k, n]
    A_c = Hkn.conj().T @ precoders.P_c[n]
    A_p = Hkn.conj().T @ precoders.P_p[k, n]
    xi_c = A_c.conj().T @ np.linalg.solve(sigma_c, A_c)
    xi_p = A_p.conj().T @ np.linalg.solve(sigma_p, A_p)
    return xi_c, xi_p


def logdet2_eye_plus(S: np.ndarray) -> float:
    """log2 det(I + S) for Hermitian PSD S, via eigenvalues and log1p.

    log1p keeps the value accurate when the eigenvalues sit far below one,
    which noise-limited draws produce routinely; forming I + S first would
    round them away at machine epsilon.
    """
    S = 0.5 * (S + S.conj().T)
    lam = np.maximum(np.linalg.eigvalsh(S), 0.0)
    return float(np.log1p(lam).sum() / _LOG2)


def rates(channels, precoders: PrecoderSet, assoc: np.ndarray,
          shares: np.ndarray) -> RateReport:
    """Full rate report for one channel draw.

    Args:
        channels: ChannelSet (H (K,N,M,M'), noise_power).
        precoders: PrecoderSet.
        assoc: binary (K, N) association; gates private rate terms only.
        shares: common-rate shares c_k, non-negative, sum <= 1.

    Returns:
        RateReport; all-zero precoders give all-zero rates.
    """
    H = channels.H
    K, N, M, Mp = precoders.P_p.shape
    g = _validate_assoc(assoc, K, N)
    c = _validate_shares(shares, K)

    G = _private_cross_terms(H, precoders.P_p)      # (K, K, N, Mp, Mp)
    total = G.sum(axis=(1, 2))                      # (K, Mp, Mp)
    own = np.einsum("kknab->knab", G).sum(axis=1)   # (K, Mp, Mp)
    eye = np.eye(Mp, dtype=complex)
    sigma_c = channels.noise_power * eye + total
    sigma_p = channels.noise_power * eye + (total - own)

    A_c = np.einsum("knab,nac->knbc", H.conj(), precoders.P_c)
    A_p = np.einsum("knab,knac->knbc", H.conj(), precoders.P_p)
    xi_c = np.einsum("kncb,kncd->knbd", A_c.conj(),
                     np.linalg.solve(sigma_c[:, None], A_c))
    xi_p = np.einsum("kncb,kncd->knbd", A_p.conj(),
                     np.linalg.solve(sigma_p[:, None], A_p))

    common_rates = np.array([logdet2_eye_plus(xi_c[k].sum(axis=0)) for k in range(K)])
    private_rates = np.array([
        logdet2_eye_plus(np.einsum("n,nab->ab", g[k], xi_p[k])) for k in range(K)])
    common_rate = float(common_rates.min())
    totals = c * common_rate + private_rates
    return RateReport(common_rates=common_rates, private_rates=private_rates,
                      common_rate=common_rate, totals=totals,
                      min_rate=float(totals.min()), mean_rate=float(totals.mean()))


def power_used(precoders: PrecoderSet, assoc: np.ndarray, n: int) -> float:
    """Transmit power of AP n: common power plus associated private powers."""
    K, N, M, Mp = precoders.P_p.shape
    g = _validate_assoc(assoc, K, N)
    p = np.sum(np.abs(precoders.P_c[n]) ** 2)
    p += np.sum(g[:, n] * np.sum(np.abs(precoders.P_p[:, n]) ** 2, axis=(1, 2)))
    return float(p)


def project_ap_power(P_c_n: np.ndarray, P_p_n: np.ndarray, g_col: np.ndarray,
                     p_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale one AP's precoders onto the power ball if they exceed p_max.

    Args:
        P_c_n: (M, M') common precoder of the AP.
        P_p_n: (K, M, M') private precoders of the AP.
        g_col: (K,) association column; only selected privates count.
        p_max: power budget in watts.
    """
    p = np.sum(np.abs(P_c_n) ** 2) + np.sum(
        np.asarray(g_col, dtype=float) * np.sum(np.abs(P_p_n) ** 2, axis=(1, 2)))
    if p > p_max:
        s = np.sqrt(p_max / p)
        return P_c_n * s, P_p_n * s
    return P_c_n, P_p_n


def project_power(precoders: PrecoderSet, assoc: np.ndarray,
                  p_max: float) -> PrecoderSet:
    """Per-AP power projection: scale every AP exceeding the budget."""
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    K, N, M, Mp = precoders.P_p.shape
    g = _validate_assoc(assoc, K, N)
    out = precoders.copy()
    for n in range(N):
        out.P_c[n], out.P_p[:, n] = project_ap_power(
            out.P_c[n], out.P_p[:, n], g[:, n], p_max)
    return out


def received_signal_parts(channels, precoders: PrecoderSet, k: int,
                          n: int) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless received common/private signal factors (M' x M' each)."""
    Hkn = channels.H[k, n]
    return Hkn.conj().T @ precoders.P_c[n], Hkn.conj().T @ precoders.P_p[k, n]
