"""Traffic generation, proportional-fair scheduling and packet delay tracking.

Two traffic models exist: full buffer (every UE always backlogged, used for
SINR CDF derivation and spectral-efficiency runs) and Poisson messaging with a
fixed layer-2 PDU size (used for the non-full-buffer connection-density
route).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigInvalid, InternalError


class TrafficKind(Enum):
    FULL_BUFFER = "FullBuffer"
    POISSON_MESSAGING = "PoissonMessaging"


@dataclass(frozen=True)
class TrafficModelSpec:
    """Traffic model parameters.

    ``rate_per_s`` is messages per second per device (1/86400 for one
    message per day, 1/7200 for one message per two hours). ``w_user_hz``
    is the bandwidth one device occupies while transmitting,
    ``eval_bandwidth_hz`` the narrowband carrier the multiplexing formula
    normalizes against, and ``overhead_s`` a fixed per-message signalling
    overhead added to every service time (0 models an idealized grant-free
    transfer).
    """

    kind: TrafficKind = TrafficKind.FULL_BUFFER
    pdu_size_bytes: int = 32
    rate_per_s: float = 1.0 / 7200.0
    w_user_hz: float = 15e3
    eval_bandwidth_hz: float = 180e3
    overhead_s: float = 0.2

    def validate(self):
        if self.kind is TrafficKind.POISSON_MESSAGING:
            if self.pdu_size_bytes <= 0:
                raise ConfigInvalid("traffic.pdu_size_bytes", "must be > 0")
            if self.rate_per_s <= 0:
                raise ConfigInvalid("traffic.rate_per_s", "must be > 0")
        if self.w_user_hz <= 0:
            raise ConfigInvalid("traffic.w_user_hz", "must be > 0")
        if self.eval_bandwidth_hz < self.w_user_hz:
            raise ConfigInvalid("traffic.eval_bandwidth_hz", "must be >= w_user_hz")
        if self.overhead_s < 0:
            raise ConfigInvalid("traffic.overhead_s", "must be >= 0")


class FullBufferArrivals:
    """Sentinel meaning every UE always has data queued."""

    def __repr__(self):
        return "FullBufferArrivals()"


FULL_BUFFER = FullBufferArrivals()


def gen_arrivals(spec: TrafficModelSpec, n_ues: int, horizon_s: float, rng: np.random.Generator):
    """Per-UE independent Poisson arrivals over [0, horizon).

    Returns a time-ordered list of (arrival_time, ue_id), or the
    FULL_BUFFER sentinel for the full-buffer model.
    """
    if horizon_s <= 0:
        raise ConfigInvalid("horizon", "must be > 0")
    if spec.kind is TrafficKind.FULL_BUFFER:
        return FULL_BUFFER
    arrivals = []
    for ue in range(n_ues):
        t = 0.0
        while True:
            t += rng.exponential(1.0 / spec.rate_per_s)
            if t >= horizon_s:
                break
            arrivals.append((t, ue))
    arrivals.sort()
    return arrivals


@dataclass
class SchedulerState:
    """Exponentially averaged per-UE throughput for the PF metric."""

    n_ues: int
    beta: float = 0.01
    avg_rate: np.ndarray = None
    allocation_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.avg_rate is None:
            self.avg_rate = np.zeros(self.n_ues)


def schedule_pf(backlogged, instantaneous_rates, state: SchedulerState, resources: int):
    """One proportional-fair scheduling interval.

    Grants one resource unit each to up to ``resources`` backlogged UEs in
    descending rate/average order (ties broken by lower ue_id; UEs that have
    never been served sort first). UEs with zero instantaneous rate are
    never scheduled. Updates the state averages once and appends the set of
    scheduled UEs to the allocation log.
    """
    rates = np.asarray(instantaneous_rates, dtype=float)
    candidates = [ue for ue in sorted(backlogged) if rates[ue] > 0.0]
    # metric: rate / average; unserved UEs (avg == 0) get priority
    scored = sorted(
        candidates,
        key=lambda ue: (-math.inf if state.avg_rate[ue] == 0.0 else -rates[ue] / state.avg_rate[ue], ue),
    )
    chosen = scored[: max(resources, 0)]
    allocation = {ue: 1 for ue in chosen}
    served = np.zeros(state.n_ues)
    for ue in chosen:
        served[ue] = rates[ue]
    state.avg_rate = (1.0 - state.beta) * state.avg_rate + state.beta * served
    state.allocation_log.append(frozenset(chosen))
    return allocation


@dataclass(frozen=True)
class PacketRecord:
    ue_id: int
    arrival_time: float
    service_start: float
    completion_time: float
    transmissions_used: int = 1

    @property
    def delay(self) -> float:
        return self.completion_time - self.arrival_time


def track_delays(arrivals, service_log):
    """Build PacketRecords and per-UE delay lists from a service log.

    ``service_log`` rows are (ue_id, arrival_time, service_start,
    completion_time, transmissions). Raises InternalError if the log is
    inconsistent (service before arrival or completion before start).
    """
    records = []
    per_ue: dict[int, list[float]] = {}
    for ue_id, arr, start, done, ntx in service_log:
        if start < arr - 1e-12 or done < start - 1e-12:
            raise InternalError(
                f"inconsistent service log for ue {ue_id}: arrival={arr} start={start} done={done}"
            )
        rec = PacketRecord(ue_id, arr, start, done, ntx)
        records.append(rec)
        per_ue.setdefault(ue_id, []).append(rec.delay)
    if arrivals is not FULL_BUFFER and arrivals is not None:
        if len(records) > len(arrivals):
            raise InternalError("more completions than arrivals")
    return records, per_ue


def n_mux(allocation_log) -> float:
    """Average number of distinct UEs holding resources per scheduling interval."""
    if not allocation_log:
        raise InternalError("n_mux of an empty allocation log")
    return float(np.mean([len(s) for s in allocation_log]))


def pf_run(instantaneous_rates, n_intervals: int, resources: int, beta: float = 0.01):
    """Vectorized proportional-fair run over a fixed rate vector.

    Produces exactly the same allocations as repeated schedule_pf calls on
    an all-backlogged population (same metric, same tie-breaking), returning
    (scheduled counts per UE, average scheduled UEs per interval).
    """
    rates = np.asarray(instantaneous_rates, dtype=float)
    n = len(rates)
    avg = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    eligible = rates > 0.0
    k = max(int(resources), 0)
    mux_total = 0
    for _ in range(n_intervals):
        with np.errstate(divide="ignore"):
            metric = np.where(avg > 0.0, rates / np.where(avg > 0.0, avg, 1.0), np.inf)
        metric = np.where(eligible, metric, -np.inf)
        order = np.lexsort((np.arange(n), -metric))
        chosen = order[:k]
        chosen = chosen[metric[chosen] > 0.0]
        served = np.zeros(n)
        served[chosen] = rates[chosen]
        avg = (1.0 - beta) * avg + beta * served
        counts[chosen] += 1
        mux_total += len(chosen)
    return counts, (mux_total / n_intervals if n_intervals > 0 else 0.0)


def serve_fifo(arrivals, service_times, n_servers: int):
    """Multi-server FIFO queue with infinite buffer.

    ``arrivals`` is a time-sorted list of (time, ue_id); ``service_times``
    gives the busy-time of each message in arrival order (retransmissions
    folded in). Returns the service log consumed by track_delays.
    """
    if n_servers < 1:
        raise ConfigInvalid("n_servers", "must be >= 1")
    free_at = [0.0] * n_servers
    heapq.heapify(free_at)
    log = []
    for (t, ue), svc in zip(arrivals, service_times):
        server_free = heapq.heappop(free_at)
        start = max(t, server_free)
        done = start + svc
        heapq.heappush(free_at, done)
        log.append((ue, t, start, done, 1))
    return log
