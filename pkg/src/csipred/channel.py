"""Path-resolved time-varying MIMO channel simulator.

Generates per-path complex channel matrices along a straight UE trajectory
with speed-dependent Doppler. Diffuse paths use a sum-of-sinusoids model with
isotropic arrival angles (Clarke spectrum); line-of-sight scenarios add a
deterministic phase-ramp component whose share of the total power is set by
the Rician K-factor. Per-path mean powers follow an exponential delay profile
(3 dB decay per path index) normalized to unit total power, so large-scale
gain is normalized out.

Antenna elements share each path's Doppler frequencies but draw independent
sinusoid phases, which yields nonzero but simple spatial structure. Sampling
is tied to distance (snapshots per meter), so the snapshot interval in
seconds is dt = 1 / (snapshots_per_meter * speed).

Generation is a pure function of (config, seed) and is reproducible
bit-exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

SPEED_OF_LIGHT = 299792458.0

__all__ = [
    "ChannelSeries",
    "ScenarioConfig",
    "collapse_paths",
    "doppler_hz",
    "generate_trajectory",
    "load_trajectory",
    "save_trajectory",
    "temporal_autocorrelation",
]


def doppler_hz(speed_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift for a UE moving at speed_kmh under carrier_hz."""
    if speed_kmh < 0:
        raise ContractError(f"speed must be non-negative, got {speed_kmh}")
    return (speed_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT


@dataclass(frozen=True)
class ScenarioConfig:
    """Propagation scenario description plus generation knobs."""

    id: str
    los: bool
    rician_k_db: float = 10.0          # ignored when los is False
    num_paths: int = 8
    speed_range: tuple[float, float] = (3.0, 60.0)   # km/h
    carrier_hz: float = 3.5e9
    snapshots_per_meter: float = 30.0
    trajectory_m: float = 150.0
    num_sinusoids_per_path: int = 32
    rx: int = 2
    tx: int = 2

    def __post_init__(self):
        lo, hi = self.speed_range
        if not (0 < lo <= hi):
            raise ConfigError(f"speed range must satisfy 0 < min <= max, got {self.speed_range}")
        if self.num_paths < 1 or self.rx < 1 or self.tx < 1:
            raise ConfigError("num_paths, rx and tx must all be >= 1")
        if self.num_sinusoids_per_path < 1:
            raise ConfigError("need at least one sinusoid per path")
        if self.snapshots() < 2:
            raise ConfigError("trajectory too short for the sampling density")

    def snapshots(self) -> int:
        return int(round(self.trajectory_m * self.snapshots_per_meter))

    def ensure_windowable(self, n_p: int, n_l: int) -> None:
        if self.snapshots() <= n_p + n_l:
            raise ConfigError(
                f"scenario {self.id!r} yields {self.snapshots()} snapshots, "
                f"need more than n_p + n_l = {n_p + n_l}")


@dataclass
class ChannelSeries:
    """Per-path channel over time: per_path[r, t, p, s], speed[s] in km/h."""

    per_path: np.ndarray
    speed: np.ndarray
    dt: float
    seed: int

    @property
    def snapshots(self) -> int:
        return self.per_path.shape[3]


def _power_profile(num_paths: int) -> np.ndarray:
    # exponential delay profile, 3 dB per path index, unit total power
    prof = 10.0 ** (-0.3 * np.arange(num_paths))
    return prof / prof.sum()


def generate_trajectory(cfg: ScenarioConfig, seed: int) -> ChannelSeries:
    """Simulate one trajectory; pure function of (cfg, seed)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(cfg.id.encode())])
    ts = cfg.snapshots()
    r_ant, t_ant, paths = cfg.rx, cfg.tx, cfg.num_paths
    n_sin = cfg.num_sinusoids_per_path

    speed_kmh = float(rng.uniform(*cfg.speed_range))
    speed_mps = speed_kmh / 3.6
    dt = 1.0 / (cfg.snapshots_per_meter * speed_mps)
    fd = doppler_hz(speed_kmh, cfg.carrier_hz)
    t_axis = np.arange(ts) * dt

    if cfg.los:
        k_lin = 10.0 ** (cfg.rician_k_db / 10.0)
        if np.isinf(k_lin):
            los_power, diffuse_total = 1.0, 0.0
        else:
            los_power, diffuse_total = k_lin / (k_lin + 1.0), 1.0 / (k_lin + 1.0)
    else:
        los_power, diffuse_total = 0.0, 1.0
    path_power = diffuse_total * _power_profile(paths)

    # deterministic LOS component: drawn once so the whole ramp is fixed
    if cfg.los:
        theta_los = rng.uniform(0.0, 2.0 * np.pi)
        psi_los = rng.uniform(0.0, 2.0 * np.pi, size=(r_ant, t_ant))

    per_path = np.zeros((r_ant, t_ant, paths, ts), dtype=np.complex128)
    for p in range(paths):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n_sin)       # shared per path
        phi = rng.uniform(0.0, 2.0 * np.pi, size=(r_ant, t_ant, n_sin))
        omega = 2.0 * np.pi * fd * np.cos(theta)                 # rad/s per sinusoid
        amp = np.sqrt(path_power[p] / n_sin)
        if amp > 0.0:
            # [R, T, n_sin, ts] phase grid, summed over sinusoids
            phase = omega[None, None, :, None] * t_axis[None, None, None, :] \
                + phi[:, :, :, None]
            per_path[:, :, p, :] = amp * np.exp(1j * phase).sum(axis=2)

    if cfg.los and los_power > 0.0:
        ramp = 2.0 * np.pi * fd * np.cos(theta_los) * t_axis
        per_path[:, :, 0, :] += np.sqrt(los_power) * np.exp(
            1j * (ramp[None, None, :] + psi_los[:, :, None]))

    speed_track = np.full(ts, speed_kmh)
    return ChannelSeries(per_path=per_path, speed=speed_track, dt=dt, seed=seed)


def collapse_paths(series: ChannelSeries) -> np.ndarray:
    """Effective channel: sum over the path axis -> [R, T, Ts]."""
    return series.per_path.sum(axis=2)


def temporal_autocorrelation(h: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized empirical autocorrelation along the last axis.

    Averages the lag products over all leading axes and normalizes by the
    zero-lag power, returning the real part for lags 0..max_lag.
    """
    flat = h.reshape(-1, h.shape[-1])
    ts = flat.shape[1]
    power = np.mean(np.abs(flat) ** 2)
    rho = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        prod = flat[:, : ts - lag] * np.conj(flat[:, lag:])
        rho[lag] = prod.mean().real / power
    return rho


# -- trajectory file format (CSIT1) -----------------------------------------
#
# ASCII header line:  CSIT1 R T P Ts dt seed
# then little-endian float32 (re, im) pairs in row-major [R, T, P, Ts] order,
# then Ts float32 speeds (km/h). Round-trips bit-exactly.


def save_trajectory(series: ChannelSeries, path) -> None:
    r_ant, t_ant, paths, ts = series.per_path.shape
    header = f"CSIT1 {r_ant} {t_ant} {paths} {ts} {series.dt!r} {series.seed}\n"
    pairs = np.empty((r_ant, t_ant, paths, ts, 2), dtype="<f4")
    pairs[..., 0] = series.per_path.real.astype(np.float32)
    pairs[..., 1] = series.per_path.imag.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pairs.tobytes())
        fh.write(series.speed.astype("<f4").tobytes())


def load_trajectory(path) -> ChannelSeries:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 7 or header[0] != "CSIT1":
            raise ConfigError(f"{path}: not a CSIT1 trajectory file")
        r_ant, t_ant, paths, ts = (int(v) for v in header[1:5])
        dt = float(header[5])
        seed = int(header[6])
        pairs = np.frombuffer(fh.read(r_ant * t_ant * paths * ts * 8), dtype="<f4")
        pairs = pairs.reshape(r_ant, t_ant, paths, ts, 2)
        speed = np.frombuffer(fh.read(ts * 4), dtype="<f4").astype(np.float64)
    per_path = pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)
    return ChannelSeries(per_path=per_path, speed=speed, dt=dt, seed=seed)
