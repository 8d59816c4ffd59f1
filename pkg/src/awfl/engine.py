"""Round-based simulator of the asynchronous protocol.

Every round: all clients train locally, the policy picks selection
probabilities and bandwidth shares, participants are drawn, their
pseudo-gradients are aggregated and only they receive the new global model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .wireless import (
    STREAM_SELECTION,
    CellConfig,
    FadingConfig,
    InfeasibleEnergyError,
    channel_gains,
    expected_round_energy,
    stream_rng,
    transmission_rate,
)


@dataclass
class ClientState:
    id: int
    local_model: np.ndarray
    last_global: np.ndarray
    last_comm_round: int = -1
    rounds_since_comm: int = 0

    def __post_init__(self):
        if self.local_model.shape != self.last_global.shape:
            raise ValueError(f"client {self.id}: local and global model dimensions differ")
        if self.rounds_since_comm < 0:
            raise ValueError("rounds_since_comm must be >= 0")


@dataclass
class ServerState:
    global_model: np.ndarray
    round: int = 0


@dataclass
class RoundMetrics:
    round: int
    participants: frozenset
    expected_energy_j: float
    realized_energy_j: float
    cum_energy_j: float
    train_loss: float
    test_accuracy: float
    global_grad_norm_sq: float

    @property
    def n_participants(self):
        return len(self.participants)


@dataclass
class Decision:
    """Selection probabilities and bandwidth shares for one round."""

    p: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.any((self.p < 0) | (self.p > 1)):
            raise ValueError("selection probabilities must lie in [0, 1]")
        if np.any((self.w < 0) | (self.w > 1)) or self.w.sum() > 1.0 + 1e-9:
            raise ValueError("bandwidth shares must lie in [0, 1] and sum to at most 1")


class Wireless:
    """Cell, client placement and the per-round channel of one run."""

    def __init__(self, cell: CellConfig, profiles, fading: FadingConfig = FadingConfig(),
                 seed: int = 0):
        self.cell = cell
        self.profiles = list(profiles)
        self.fading = fading
        self.seed = seed
        self.tx_power = np.array([p.tx_power_w for p in self.profiles])
        self._static = None

    @property
    def K(self):
        return len(self.profiles)

    def gains(self, rnd: int) -> np.ndarray:
        if not self.fading.enabled:
            if self._static is None:
                self._static = channel_gains(self.profiles, [0], self.fading, self.seed)[:, 0]
            return self._static
        return channel_gains(self.profiles, [rnd], self.fading, self.seed)[:, 0]

    def transmission_energy(self, ids, w, gains) -> np.ndarray:
        """Energy of one upload for each 0-based index in ``ids``."""
        P = self.tx_power[ids]
        return P * self.cell.model_size_nats / transmission_rate(w[ids], self.cell, P, gains[ids])


def pseudo_gradient(client: ClientState) -> np.ndarray:
    """Displacement of the local model since the last received global model."""
    if client.local_model.shape != client.last_global.shape:
        raise ValueError(f"client {client.id}: dimension mismatch")
    return client.local_model - client.last_global


def aggregate_global(server: ServerState, deltas: dict, K: int,
                     divide_by_participants: bool = False) -> ServerState:
    """``x + (1/K) * sum of deltas``, summed in ascending client id.

    ``divide_by_participants`` replaces ``K`` by the number of reporting
    clients; this is an experimental option, not the default rule.
    """
    x = server.global_model
    if not deltas:
        return ServerState(x.copy(), server.round + 1)
    total = np.zeros_like(x)
    for k in sorted(deltas):
        if deltas[k].shape != x.shape:
            raise ValueError(f"client {k}: delta has shape {deltas[k].shape}, model {x.shape}")
        total = total + deltas[k]
    div = len(deltas) if divide_by_participants else K
    return ServerState(x + total / div, server.round + 1)


def selection_uniforms(K: int, rnd: int, seed: int) -> np.ndarray:
    return stream_rng(seed, STREAM_SELECTION, rnd).random(K)


def sample_selection(p, rnd: int, rng_seed: int, force_cap=None, rounds_since_comm=None) -> frozenset:
    """Independent Bernoulli(p_k) draws; ids are 1-based.

    The same uniforms are used for every ``p`` in a given (seed, round), so
    raising a probability never removes a client. With ``force_cap`` a client
    for which ``rounds_since_comm`` (rounds elapsed since its last upload,
    including the current one) has reached its cap is always included, so
    no gap between uploads exceeds the cap.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("selection probabilities must lie in [0, 1]")
    chosen = selection_uniforms(p.size, rnd, rng_seed) < p
    if force_cap is not None:
        if rounds_since_comm is None:
            raise ValueError("force_cap needs rounds_since_comm")
        cap = np.broadcast_to(np.asarray(force_cap), p.shape)
        chosen |= np.asarray(rounds_since_comm) >= cap
    return frozenset(int(k) + 1 for k in np.flatnonzero(chosen))


@dataclass
class EngineState:
    server: ServerState
    clients: list
    cum_energy_j: float = 0.0
    client_energy_j: np.ndarray = None
    participation: np.ndarray = None

    def __post_init__(self):
        K = len(self.clients)
        if self.client_energy_j is None:
            self.client_energy_j = np.zeros(K)
        if self.participation is None:
            self.participation = np.zeros(K, dtype=np.int64)

    @classmethod
    def initial(cls, x0, K: int) -> "EngineState":
        x0 = np.asarray(x0, dtype=np.float64)
        clients = [ClientState(k, x0.copy(), x0.copy()) for k in range(1, K + 1)]
        return cls(ServerState(x0.copy(), 0), clients)


@dataclass
class RunOptions:
    seed: int = 0
    force_cap: object = None
    divide_by_participants: bool = False


def run_round(state: EngineState, policy, task, wireless: Wireless,
              options: RunOptions = RunOptions()):
    """Advance one round; returns ``(new_state, RoundMetrics)``.

    The input state is not modified.
    """
    rnd = state.server.round
    K = len(state.clients)
    clients = [replace(c, local_model=task.local_update(c.local_model, c.id, rnd))
               for c in state.clients]

    gains = wireless.gains(rnd)
    decision = policy.decide(rnd, gains, state)
    # rounds elapsed since each client's last upload, counting this one
    since = np.array([c.rounds_since_comm + 1 for c in clients])
    chosen = sample_selection(decision.p, rnd, options.seed, options.force_cap, since)

    idx = np.array(sorted(chosen), dtype=np.int64) - 1
    if idx.size and np.any(decision.w[idx] <= 0):
        bad = [int(k) + 1 for k in idx if decision.w[k] <= 0]
        raise InfeasibleEnergyError(f"clients {bad} were selected without bandwidth")
    expected = expected_round_energy(decision.p, decision.w, wireless.profiles, gains, wireless.cell)
    per_client = np.zeros(K)
    if idx.size:
        per_client[idx] = wireless.transmission_energy(idx, decision.w, gains)
    realized = float(per_client.sum())

    deltas = {c.id: pseudo_gradient(c) for c in clients if c.id in chosen}
    server = aggregate_global(state.server, deltas, K, options.divide_by_participants)
    x = server.global_model
    new_clients = []
    for c in clients:
        if c.id in chosen:
            new_clients.append(ClientState(c.id, x.copy(), x.copy(), rnd, 0))
        else:
            new_clients.append(replace(c, rounds_since_comm=c.rounds_since_comm + 1))

    loss, acc, gn = task.metrics(x)
    cum = state.cum_energy_j + realized
    new_state = EngineState(server, new_clients, cum, state.client_energy_j + per_client,
                            state.participation + np.isin(np.arange(K), idx))
    return new_state, RoundMetrics(rnd, chosen, expected, realized, cum, loss, acc, gn)


@dataclass
class Trace:
    rounds: list = field(default_factory=list)
    final_state: EngineState | None = None

    @property
    def total_energy_j(self) -> float:
        return self.rounds[-1].cum_energy_j if self.rounds else 0.0

    @property
    def client_energy_j(self) -> np.ndarray:
        return self.final_state.client_energy_j


def run_training(task, policy, wireless: Wireless, rounds: int,
                 options: RunOptions = RunOptions()) -> Trace:
    """Run ``rounds`` rounds from the task's initial model."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    state = EngineState.initial(task.initial_params(), wireless.K)
    trace = Trace(final_state=state)
    for _ in range(rounds):
        state, m = run_round(state, policy, task, wireless, options)
        trace.rounds.append(m)
    trace.final_state = state
    return trace
