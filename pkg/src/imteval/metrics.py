"""KPI computation: spectral efficiency, connection density (both routes),
reliability, mobility and user-experienced data rate, plus the empirical
CDF machinery and the drop-convergence monitor they all feed on.

Every pass/fail comparison in this module is boundary-inclusive
(measured >= requirement passes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientSamples
from .link import BlerModel, HarqConfig, LinkAbstraction, harq_outcome, sinr_to_se


class CdfEstimator:
    """Exact empirical distribution over a growing sample buffer.

    Quantiles interpolate linearly between order statistics at positions
    p*(n-1)+1 (one-indexed), so quantile(0) is the minimum sample and
    quantile(1) the maximum.
    """

    def __init__(self, samples=None):
        self._samples = np.array([] if samples is None else samples, dtype=float)
        self._sorted = False

    def add(self, samples) -> None:
        arr = np.atleast_1d(np.asarray(samples, dtype=float))
        self._samples = np.concatenate([self._samples, arr])
        self._sorted = False

    def merge(self, other: "CdfEstimator") -> None:
        self.add(other._samples)

    @property
    def count(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> np.ndarray:
        """The raw sample buffer (a view; treat as read-only)."""
        return self._samples

    def _ensure_sorted(self) -> np.ndarray:
        if not self._sorted:
            self._samples.sort()
            self._sorted = True
        return self._samples

    def quantile(self, p) -> float:
        if self.count == 0:
            raise InsufficientSamples("empty CDF estimator")
        data = self._ensure_sorted()
        return float(np.quantile(data, p, method="linear"))

    def mean(self) -> float:
        if self.count == 0:
            raise InsufficientSamples("empty CDF estimator")
        return float(self._samples.mean())

    def percentile_rows(self, step: float = 0.1):
        """(percentile, value) rows from 0 to 100 for CSV export."""
        ps = np.arange(0.0, 100.0 + step / 2.0, step)
        data = self._ensure_sorted()
        vals = np.quantile(data, ps / 100.0, method="linear")
        return list(zip(ps.tolist(), vals.tolist()))


@dataclass(frozen=True)
class SeInputs:
    """Inputs to the average spectral efficiency estimator.

    ``bits_per_drop_user[j][i]`` holds the correctly received bits of user i
    in drop j over the simulated duration ``duration_s``; ``n_trxps`` is the
    number of transmission/reception points the result is normalized by.
    """

    bits_per_drop_user: list
    duration_s: float
    bandwidth_hz: float
    n_trxps: int

    def validate(self):
        if self.duration_s <= 0 or self.bandwidth_hz <= 0 or self.n_trxps <= 0:
            raise DomainError("duration, bandwidth and TRxP count must be positive")
        if not self.bits_per_drop_user:
            raise DomainError("need at least one drop")


def avg_spectral_efficiency(inputs: SeInputs) -> float:
    """Sum of correctly received bits over drops and users, normalized by
    drops x time x bandwidth x TRxPs (bit/s/Hz per TRxP)."""
    inputs.validate()
    n_drops = len(inputs.bits_per_drop_user)
    total = 0.0
    for drop_bits in inputs.bits_per_drop_user:
        arr = np.asarray(drop_bits, dtype=float)
        if np.any(arr < 0):
            raise DomainError("received bit counts must be >= 0")
        total += float(arr.sum())
    return total / (n_drops * inputs.duration_s * inputs.bandwidth_hz * inputs.n_trxps)


def pct5_user_se(per_user_normalized_throughputs) -> float:
    """Linear-interpolated empirical 5 percent quantile of user spectral
    efficiency; requires at least 20 samples."""
    arr = np.asarray(per_user_normalized_throughputs, dtype=float)
    if arr.size < 20:
        raise InsufficientSamples(f"need >= 20 samples for the 5th percentile, got {arr.size}")
    return float(np.quantile(arr, 0.05, method="linear"))


@dataclass(frozen=True)
class CdInputs:
    """Inputs for the full-buffer connection-density formula."""

    n_mux: float
    bandwidth_hz: float
    b_values: np.ndarray  # per-user B_i from the per-user bandwidth relation
    isd_m: float

    def validate(self):
        if self.isd_m <= 0:
            raise DomainError("ISD must be positive")
        if float(np.mean(self.b_values)) <= 0:
            raise DomainError("mean(B_i) must be positive")


def b_value(duration_s: float, received_bits: float, w_user_hz: float) -> float:
    """Per-user bandwidth-time value B_i = T / (R_i / W_user)."""
    if received_bits <= 0:
        raise DomainError("received bits must be positive for B_i")
    return duration_s / (received_bits / w_user_hz)


def connection_density_fullbuffer(inputs: CdInputs) -> float:
    """Devices per km^2: (n_mux * W / mean(B_i)) / (ISD^2 * sqrt(3)/6 in km^2)."""
    inputs.validate()
    sector_area_km2 = (inputs.isd_m ** 2 * math.sqrt(3.0) / 6.0) / 1e6
    supported = inputs.n_mux * inputs.bandwidth_hz / float(np.mean(inputs.b_values))
    return supported / sector_area_km2


@dataclass(frozen=True)
class DensitySearchResult:
    density_per_km2: float  # largest tested density meeting the QoS
    delay_p99_s: float  # achieved 99th-percentile delay at that density
    passed: bool  # density >= the one-million-per-km2 requirement
    evaluations: tuple  # (density, p99_delay) pairs in evaluation order
    monotone: bool  # False when delay-vs-density came out non-monotone
    bracket: tuple  # (highest passing density, lowest failing density or inf)


def connection_density_search(evaluate_p99_delay, lo_per_km2: float, hi_per_km2: float,
                              qos_delay_s: float = 10.0,
                              requirement_per_km2: float = 1_000_000.0,
                              steps: int = 12) -> DensitySearchResult:
    """Bisection over device density for the non-full-buffer route.

    ``evaluate_p99_delay(density)`` must run the engine at that density and
    return the 99th-percentile per-user delay in seconds. Returns the
    largest tested density whose delay met the QoS bound (boundary
    inclusive). Non-monotone samples are reported with the widest
    bracketing interval rather than hidden.
    """
    if not (0 < lo_per_km2 < hi_per_km2):
        raise DomainError("need 0 < lo < hi for the density search")
    evals = []

    def probe(density):
        delay = float(evaluate_p99_delay(density))
        evals.append((density, delay))
        return delay

    lo_delay = probe(lo_per_km2)
    if lo_delay > qos_delay_s:
        return DensitySearchResult(0.0, lo_delay, False, tuple(evals), True, (0.0, lo_per_km2))
    hi_delay = probe(hi_per_km2)
    if hi_delay <= qos_delay_s:
        return DensitySearchResult(hi_per_km2, hi_delay, hi_per_km2 >= requirement_per_km2,
                                   tuple(evals), True, (hi_per_km2, math.inf))

    lo, hi = lo_per_km2, hi_per_km2
    best_delay = lo_delay
    for _ in range(steps):
        mid = math.sqrt(lo * hi)  # geometric bisection suits the /km^2 scale
        mid_delay = probe(mid)
        if mid_delay <= qos_delay_s:
            lo, best_delay = mid, mid_delay
        else:
            hi = mid

    passing = [d for d, t in evals if t <= qos_delay_s]
    failing = [d for d, t in evals if t > qos_delay_s]
    monotone = not passing or not failing or max(passing) <= min(failing) + 1e-9
    bracket = (max(passing) if passing else 0.0, min(failing) if failing else math.inf)
    return DensitySearchResult(lo, best_delay, lo >= requirement_per_km2,
                               tuple(evals), monotone, bracket)


def reliability(sinr_cdf: CdfEstimator, bler: BlerModel, harq: HarqConfig,
                latency_budget_s: float = 1e-3, pdu_bytes: int = 32,
                requirement: float = 0.99999, extra_backoff_db: float = 0.0):
    """Success probability of delivering the PDU within the budget at the
    coverage edge (5th-percentile SINR). Returns (probability, pass)."""
    edge_sinr = sinr_cdf.quantile(0.05) - extra_backoff_db
    outcome = harq_outcome(bler, harq, edge_sinr, latency_budget_s)
    return outcome.success_probability, outcome.success_probability >= requirement


# (normalized Doppler upper bound, SINR backoff dB); normalized Doppler is
# shift x scheduling interval. The last entry also covers anything beyond.
DEFAULT_DOPPLER_BACKOFF = ((1e-4, 0.0), (1e-3, 0.5), (1e-2, 1.5), (1e-1, 3.0))


def doppler_backoff_db(speed_kmh: float, carrier_hz: float,
                       table=DEFAULT_DOPPLER_BACKOFF, interval_s: float = 1e-3) -> float:
    shift_hz = (speed_kmh / 3.6) * carrier_hz / 299_792_458.0
    norm = shift_hz * interval_s
    for bound, backoff in table:
        if norm <= bound:
            return backoff
    return table[-1][1]


def mobility_check(sinr_cdf: CdfEstimator, speed_kmh: float, carrier_hz: float,
                   abstraction: LinkAbstraction, requirement: float,
                   backoff_table=DEFAULT_DOPPLER_BACKOFF, extra_backoff_db: float = 0.0):
    """Normalized traffic-channel rate at the median SINR with a
    Doppler-dependent backoff. Returns (rate bit/s/Hz, pass)."""
    median = sinr_cdf.quantile(0.5)
    penalty = doppler_backoff_db(speed_kmh, carrier_hz, backoff_table) + extra_backoff_db
    rate = float(sinr_to_se(abstraction, median - penalty))
    return rate, rate >= requirement


def user_experienced_data_rate(throughput_samples_bps, requirement_bps: float):
    """5 percent point of the user-throughput CDF. Returns (bit/s, pass)."""
    arr = np.asarray(throughput_samples_bps, dtype=float)
    if arr.size < 20:
        raise InsufficientSamples(f"need >= 20 throughput samples, got {arr.size}")
    rate = float(np.quantile(arr, 0.05, method="linear"))
    return rate, rate >= requirement_bps


CONTINUE = "continue"
CONVERGED = "converged"
CAPPED = "capped"


@dataclass
class ConvergenceMonitor:
    """Running-mean convergence over per-drop statistics.

    Declares convergence once the running mean moved by less than ``tol``
    (relative) over the last ``window`` drops, or caps at ``max_drops``.
    """

    window: int = 50
    tol: float = 1e-4
    max_drops: int = 10_000
    _count: int = 0
    _total: float = 0.0
    _running_means: list = field(default_factory=list)

    def observe(self, drop_mean: float) -> str:
        self._count += 1
        self._total += float(drop_mean)
        mean = self._total / self._count
        self._running_means.append(mean)
        if self._count >= self.max_drops:
            return CAPPED
        if self._count >= self.window + 1:
            ref = self._running_means[-1 - self.window]
            denom = max(abs(ref), 1e-300)
            if abs(mean - ref) / denom < self.tol:
                return CONVERGED
        return CONTINUE

    @property
    def drops_seen(self) -> int:
        return self._count

    @property
    def running_means(self):
        return list(self._running_means)


def converged(monitor: ConvergenceMonitor, next_drop_mean: float) -> str:
    """Feed one per-drop mean; returns continue / converged / capped."""
    return monitor.observe(next_drop_mean)
