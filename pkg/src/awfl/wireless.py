"""Uplink channel, rate and transmission-energy model.

Rates use the natural logarithm, so they are in nats/s; model sizes are
converted from bits to nats once (``CellConfig.model_size_nats``). Energies
come out in Joules either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)

# stream ids for seeded randomness; see ``stream_rng``
STREAM_SELECTION = 1
STREAM_FADING = 2
STREAM_DATA = 3
STREAM_INIT = 4
STREAM_PLACEMENT = 5
STREAM_TRAIN = 6
STREAM_MONTE_CARLO = 7


def stream_rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    """Generator for one named purpose, reproducible across processes."""
    return np.random.default_rng([int(seed), int(stream), *(int(k) for k in key)])


def dbm_per_hz_to_w_per_hz(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class CellConfig:
    total_bandwidth_hz: float
    noise_density_w_per_hz: float
    model_size_bits: float
    cell_radius_m: float = 1000.0

    def __post_init__(self):
        for name in ("total_bandwidth_hz", "noise_density_w_per_hz", "cell_radius_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.model_size_bits >= 1:
            raise ValueError(f"model_size_bits must be >= 1, got {self.model_size_bits!r}")

    @classmethod
    def from_dbm(cls, total_bandwidth_hz, noise_density_dbm_per_hz, model_size_bits,
                 cell_radius_m=1000.0):
        return cls(total_bandwidth_hz, dbm_per_hz_to_w_per_hz(noise_density_dbm_per_hz),
                   model_size_bits, cell_radius_m)

    @property
    def model_size_nats(self) -> float:
        return self.model_size_bits * LN2


@dataclass(frozen=True)
class ClientProfile:
    id: int
    distance_km: float
    tx_power_w: float

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"client ids start at 1, got {self.id}")
        if not self.distance_km > 0:
            raise ValueError(f"client {self.id}: distance_km must be positive")
        if not self.tx_power_w > 0:
            raise ValueError(f"client {self.id}: tx_power_w must be positive")

    def check_in_cell(self, cell: CellConfig) -> None:
        if self.distance_km * 1000.0 > cell.cell_radius_m * (1 + 1e-12):
            raise ValueError(
                f"client {self.id} at {self.distance_km} km lies outside the "
                f"{cell.cell_radius_m} m cell")


@dataclass(frozen=True)
class FadingConfig:
    """Block fading applied on top of path loss.

    ``kind`` is ``"none"`` (static channel) or ``"rayleigh"``: a unit-mean
    exponential power factor redrawn every round.
    """

    kind: str = "none"

    def __post_init__(self):
        if self.kind not in ("none", "rayleigh"):
            raise ValueError(f"unknown fading kind {self.kind!r}")

    @property
    def enabled(self) -> bool:
        return self.kind != "none"


@dataclass(frozen=True)
class ChannelRealization:
    gain: float
    round: int


def path_loss_db(distance_km):
    """Path loss ``128.1 + 37.6 log10(r)`` in dB, ``r`` in km."""
    d = np.asarray(distance_km, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def fading_factors(K: int, rnd: int, fading: FadingConfig, seed: int) -> np.ndarray:
    """Per-client fading power factors for one round (ones when disabled)."""
    if not fading.enabled:
        return np.ones(K)
    return stream_rng(seed, STREAM_FADING, rnd).exponential(1.0, size=K)


def channel_gain(profile: ClientProfile, rnd: int, fading: FadingConfig = FadingConfig(),
                 rng_seed: int = 0) -> ChannelRealization:
    base = 10.0 ** (-path_loss_db(profile.distance_km) / 10.0)
    factor = fading_factors(profile.id, rnd, fading, rng_seed)[profile.id - 1]
    return ChannelRealization(gain=base * float(factor), round=rnd)


def channel_gains(profiles, rounds, fading: FadingConfig = FadingConfig(),
                  rng_seed: int = 0) -> np.ndarray:
    """(K, len(rounds)) gain matrix; column j is round ``rounds[j]``.

    Matches ``channel_gain`` element for element.
    """
    dist = np.array([p.distance_km for p in profiles])
    base = 10.0 ** (-path_loss_db(dist) / 10.0)
    rounds = list(rounds)
    out = np.empty((len(profiles), len(rounds)))
    for j, r in enumerate(rounds):
        out[:, j] = base * fading_factors(len(profiles), r, fading, rng_seed)
    return out


def transmission_rate(w, cell: CellConfig, P, h):
    """Achievable uplink rate in nats/s for bandwidth fraction ``w``.

    ``w = 0`` maps to rate 0 (the continuous limit). Broadcasts over arrays.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any((w < 0) | (w > 1)):
        raise ValueError("bandwidth fraction must lie in [0, 1]")
    P = np.asarray(P, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    W = cell.total_bandwidth_hz
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = P * h / (w * W * cell.noise_density_w_per_hz)
        rate = np.where(w > 0, w * W * np.log1p(snr), 0.0)
    return float(rate) if rate.ndim == 0 else rate


def realized_transmission_energy(P, cell: CellConfig, R):
    """Energy in Joules to upload one model at rate ``R`` (nats/s)."""
    R = np.asarray(R, dtype=np.float64)
    if np.any(~(R > 0)):
        raise ValueError("rate must be positive")
    out = np.asarray(P, dtype=np.float64) * cell.model_size_nats / R
    return float(out) if out.ndim == 0 else out


class InfeasibleEnergyError(ValueError):
    """A client may transmit (p > 0) but holds no bandwidth (w = 0)."""


def expected_round_energy(p, w, profiles, gains, cell: CellConfig) -> float:
    """Expected uplink energy of one round: sum_k p_k P_k S / R_k."""
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("selection probabilities must lie in [0, 1]")
    if w.sum() > 1.0 + 1e-9:
        raise ValueError(f"bandwidth fractions sum to {w.sum()} > 1")
    bad = (p > 0) & (w <= 0)
    if np.any(bad):
        ids = [profiles[i].id for i in np.flatnonzero(bad)]
        raise InfeasibleEnergyError(f"clients {ids} have p > 0 but no bandwidth")
    P = np.array([pr.tx_power_w for pr in profiles])
    active = p > 0
    if not active.any():
        return 0.0
    R = transmission_rate(w[active], cell, P[active], np.asarray(gains, dtype=np.float64)[active])
    return float(np.sum(p[active] * P[active] * cell.model_size_nats / R))


def place_clients(K: int, cell: CellConfig, seed: int, tx_power_w: float = 0.2,
                  annuli=None) -> list[ClientProfile]:
    """Drop ``K`` clients uniformly (by area) in the cell.

    ``annuli`` optionally maps client ids to ``(r_min_m, r_max_m)`` rings, as in
    the near-server and cell-edge placement scenarios; other clients fall
    anywhere in the cell.
    """
    rng = stream_rng(seed, STREAM_PLACEMENT)
    annuli = annuli or {}
    out = []
    for cid in range(1, K + 1):
        r_min, r_max = annuli.get(cid, (0.0, cell.cell_radius_m))
        if not 0 <= r_min < r_max <= cell.cell_radius_m:
            raise ValueError(f"placement ring {r_min}-{r_max} m not inside the cell")
        u = rng.uniform()
        r = math.sqrt(r_min ** 2 + u * (r_max ** 2 - r_min ** 2))
        out.append(ClientProfile(cid, max(r, 1.0) / 1000.0, tx_power_w))
    return out


def scenario_annuli(scenario: int, n_extreme: int = 5):
    """Placement rings: scenario 1 puts the first clients at 100-200 m, scenario 2 at 900-1000 m."""
    ring = {1: (100.0, 200.0), 2: (900.0, 1000.0)}
    if scenario == 0:
        return {}
    if scenario not in ring:
        raise ValueError(f"unknown placement scenario {scenario}")
    return {cid: ring[scenario] for cid in range(1, n_extreme + 1)}
