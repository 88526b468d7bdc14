"""Large- and small-scale channel generation for a cell-free downlink network.

N access points (APs) with M antennas each serve K user equipments (UEs) with
M' antennas each over a shared band.  The channel between AP n and UE k is an
M x M' complex matrix combining a three-slope path loss, correlated log-normal
shadowing and Nakagami small-scale fading.

Distances are handled in kilometres throughout; positions are stored in
metres and converted on use.  Powers are linear watts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BOLTZMANN = 1.380649e-23  # J/K

_SNAPSHOT_MAGIC = b"CFCH"
_SNAPSHOT_VERSION = 1


@dataclass
class ChannelParams:
    """Propagation and radio constants (defaults reproduce the reference setup)."""

    f_mhz: float = 1900.0
    bandwidth_hz: float = 20e6
    noise_figure_db: float = 9.0
    temperature_k: float = 290.0
    h_ap_m: float = 15.0
    h_ue_m: float = 1.65
    d_upper_km: float = 0.05
    d_lower_km: float = 0.01
    sigma_sh_db: float = 8.0
    epsilon: float = 0.5
    nakagami_m: float = 1.0
    nakagami_omega: float = 2.0


@dataclass
class Topology:
    """AP and UE positions in metres on a square service area."""

    ap_xy: np.ndarray  # (N, 2)
    ue_xy: np.ndarray  # (K, 2)
    area_side_m: float


@dataclass
class ChannelSet:
    """One full draw of the network channel.

    Attributes:
        H: complex channel matrices, shape (K, N, M, M').
        kappa: linear large-scale gains, shape (K, N).
        pl_db: path loss in dB (negative), shape (K, N).
        z: standard-normal shadowing variates, shape (K, N).
        noise_power: receiver noise power in watts.
    """

    H: np.ndarray
    kappa: np.ndarray
    pl_db: np.ndarray
    z: np.ndarray
    noise_power: float

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.H.shape


def path_loss_constant(f_mhz: float, h_ap_m: float, h_ue_m: float) -> float:
    """Frequency/height constant L of the three-slope model, in dB.

    Args:
        f_mhz: carrier frequency in MHz.
        h_ap_m: AP antenna height in metres.
        h_ue_m: UE antenna height in metres (0 allowed; enters linearly).

    Returns:
        L in dB.
    """
    if f_mhz <= 0 or h_ap_m <= 0:
        raise ValueError("f_mhz and h_ap_m must be positive")
    if h_ue_m < 0:
        raise ValueError("h_ue_m must be non-negative")
    lf = np.log10(f_mhz)
    return (46.3 + 33.9 * lf - 13.82 * np.log10(h_ap_m)
            - (1.1 * lf - 0.7) * h_ue_m + 1.56 * lf - 0.8)


def path_loss(d_km: float, L_db: float, d_upper_km: float, d_lower_km: float) -> float:
    """Three-slope path loss in dB (negative) at distance d_km.

    Continuous at both breakpoints; constant below d_lower_km so d=0 is safe.
    """
    if d_upper_km <= d_lower_km or d_lower_km <= 0:
        raise ValueError("need d_upper_km > d_lower_km > 0")
    if d_km < 0:
        raise ValueError("distance must be non-negative")
    if d_km >= d_upper_km:
        return -L_db - 35.0 * np.log10(d_km)
    if d_km > d_lower_km:
        return -L_db - 15.0 * np.log10(d_upper_km) - 20.0 * np.log10(d_km)
    return -L_db - 15.0 * np.log10(d_upper_km) - 20.0 * np.log10(d_lower_km)


def noise_power(bandwidth_hz: float, noise_figure_db: float,
                temperature_k: float = 290.0) -> float:
    """Receiver noise power k_B * T * B * 10^(NF/10) in watts."""
    if bandwidth_hz <= 0 or temperature_k <= 0:
        raise ValueError("bandwidth and temperature must be positive")
    return BOLTZMANN * temperature_k * bandwidth_hz * 10.0 ** (noise_figure_db / 10.0)


def draw_topology(n_ap: int, n_ue: int, area_side_m: float,
                  rng: np.random.Generator) -> Topology:
    """Drop APs then UEs uniformly at random on the square area."""
    if n_ap < 1 or n_ue < 1 or area_side_m <= 0:
        raise ValueError("need n_ap >= 1, n_ue >= 1, area_side_m > 0")
    ap_xy = rng.uniform(0.0, area_side_m, size=(n_ap, 2))
    ue_xy = rng.uniform(0.0, area_side_m, size=(n_ue, 2))
    return Topology(ap_xy=ap_xy, ue_xy=ue_xy, area_side_m=area_side_m)


def distances_km(topology: Topology) -> np.ndarray:
    """Horizontal UE-AP distances, shape (K, N), in kilometres."""
    diff = topology.ue_xy[:, None, :] - topology.ap_xy[None, :, :]
    return np.linalg.norm(diff, axis=-1) / 1000.0


def draw_shadowing(n_ue: int, n_ap: int, epsilon: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Correlated shadowing z_kn = sqrt(eps)*b_n + sqrt(1-eps)*q_k, shape (K, N).

    b is drawn once per AP and q once per UE, both standard normal, so every
    z_kn is standard normal with corr eps across UEs at one AP and corr
    1-eps across APs for one UE.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    b = rng.standard_normal(n_ap)
    q = rng.standard_normal(n_ue)
    return np.sqrt(epsilon) * b[None, :] + np.sqrt(1.0 - epsilon) * q[:, None]


def draw_channel(topology: Topology, params: ChannelParams, m_ap: int, m_ue: int,
                 rng: np.random.Generator) -> ChannelSet:
    """Draw one complete ChannelSet for the given topology.

    Draw order is fixed (shadowing, fading magnitudes, phases) so a seeded
    generator reproduces the set bit for bit.

    Args:
        topology: AP/UE drop.
        params: propagation constants.
        m_ap: antennas per AP (M).
        m_ue: antennas per UE (M').
        rng: seeded generator.

    Returns:
        ChannelSet with H of shape (K, N, M, M').
    """
    n_ue = topology.ue_xy.shape[0]
    n_ap = topology.ap_xy.shape[0]
    L = path_loss_constant(params.f_mhz, params.h_ap_m, params.h_ue_m)
    d = distances_km(topology)
    pl_db = np.empty((n_ue, n_ap))
    for k in range(n_ue):
        for n in range(n_ap):
            pl_db[k, n] = path_loss(d[k, n], L, params.d_upper_km, params.d_lower_km)

    z = draw_shadowing(n_ue, n_ap, params.epsilon, rng)
    kappa = 10.0 ** ((pl_db + params.sigma_sh_db * z) / 10.0)

    shape = (n_ue, n_ap, m_ap, m_ue)
    # Nakagami(m, omega) amplitude == sqrt of Gamma(m, omega/m); phase uniform.
    gain = rng.gamma(shape=params.nakagami_m,
                     scale=params.nakagami_omega / params.nakagami_m, size=shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    small = np.sqrt(gain) * np.exp(1j * phase)
    H = np.sqrt(kappa)[:, :, None, None] * small
    n0 = noise_power(params.bandwidth_hz, params.noise_figure_db, params.temperature_k)
    return ChannelSet(H=H, kappa=kappa, pl_db=pl_db, z=z, noise_power=n0)


def save_channels(cs: ChannelSet, path: str) -> None:
    """Write a ChannelSet to a versioned little-endian binary snapshot.

    Layout: magic, version byte, dims N,K,M,M' (uint32), H as row-major
    (N,K,M,M') complex pairs of float64, then kappa, pl_db, z as row-major
    (N,K) float64 and the scalar noise power.
    """
    K, N, M, Mp = cs.H.shape
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<B4I", _SNAPSHOT_VERSION, N, K, M, Mp))
        H_nk = np.ascontiguousarray(cs.H.transpose(1, 0, 2, 3))
        fh.write(H_nk.astype("<c16").tobytes())
        for arr in (cs.kappa, cs.pl_db, cs.z):
            fh.write(np.ascontiguousarray(arr.T).astype("<f8").tobytes())
        fh.write(struct.pack("<d", cs.noise_power))


def load_channels(path: str) -> ChannelSet:
    """Read a snapshot written by save_channels; exact inverse."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"not a channel snapshot (magic {magic!r})")
        version, N, K, M, Mp = struct.unpack("<B4I", fh.read(17))
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        H_nk = np.frombuffer(fh.read(N * K * M * Mp * 16), dtype="<c16")
        H = H_nk.reshape(N, K, M, Mp).transpose(1, 0, 2, 3).copy()
        planes = []
        for _ in range(3):
            flat = np.frombuffer(fh.read(N * K * 8), dtype="<f8")
            planes.append(flat.reshape(N, K).T.copy())
        (n0,) = struct.unpack("<d", fh.read(8))
    return ChannelSet(H=H, kappa=planes[0], pl_db=planes[1], z=planes[2],
                      noise_power=n0)
