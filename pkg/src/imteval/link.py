"""Link budget arithmetic: noise, SINR, branch combining, uplink power
control and the SINR-to-rate / SINR-to-BLER abstraction with HARQ.

The link abstraction (truncated-capacity map plus a parametric BLER
waterfall) stands in for proprietary link-level simulators; its parameters
are ordinary configuration and every KPI that uses them reports them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

THERMAL_NOISE_DBM_HZ = -174.0


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def lin_to_db(lin):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(lin, dtype=float))


@dataclass(frozen=True)
class SinrSample:
    """One per-UE SINR observation with its budget components in dBm."""

    ue_id: int
    direction: str  # "downlink" | "uplink"
    sinr_db: float
    signal_dbm: float
    interference_dbm: float  # -inf when no interferer exists
    noise_dbm: float


def noise_power(bandwidth_hz: float, noise_figure_db: float) -> float:
    """Thermal noise power in dBm over the given bandwidth."""
    if bandwidth_hz <= 0:
        raise DomainError("bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def compute_sinr(
    serving_mw: float,
    interferer_mw,
    noise_mw: float,
    ue_id: int = -1,
    direction: str = "downlink",
) -> SinrSample:
    """SINR from linear powers; interferers are summed explicitly."""
    if serving_mw < 0 or noise_mw <= 0:
        raise DomainError("serving power must be >= 0 and noise > 0")
    interference = float(np.sum(np.asarray(interferer_mw, dtype=float))) if len(interferer_mw) else 0.0
    if interference < 0:
        raise DomainError("interferer powers must be >= 0")
    sinr = serving_mw / (interference + noise_mw)
    return SinrSample(
        ue_id=ue_id,
        direction=direction,
        sinr_db=float(lin_to_db(sinr)),
        signal_dbm=float(lin_to_db(serving_mw)),
        interference_dbm=float(lin_to_db(interference)),
        noise_dbm=float(lin_to_db(noise_mw)),
    )


def combine_mrc(branch_sinrs_linear) -> float:
    """Maximum-ratio combining of per-branch linear SINRs.

    Interference is treated as spatially white, so the effective SINR is
    the plain sum of branch SINRs.
    """
    branches = np.asarray(branch_sinrs_linear, dtype=float)
    if branches.size == 0:
        raise DomainError("combine_mrc needs at least one branch")
    if np.any(branches < 0):
        raise DomainError("branch SINRs must be >= 0")
    return float(branches.sum())


@dataclass(frozen=True)
class PowerControlParams:
    """Open-loop uplink power control: min(p_max, p0 + alpha * PL)."""

    p0_dbm: float = -90.0
    alpha: float = 1.0
    p_max_dbm: float = 23.0
    iot_target_db: float = 10.0


def uplink_power_control(pathloss_db: float, params: PowerControlParams) -> float:
    """Open-loop UE transmit power in dBm for the given coupling loss."""
    if not math.isfinite(pathloss_db):
        raise DomainError("pathloss must be finite")
    return min(params.p_max_dbm, params.p0_dbm + params.alpha * pathloss_db)


@dataclass(frozen=True)
class LinkAbstraction:
    """Truncated-capacity SINR-to-spectral-efficiency map."""

    efficiency: float = 0.6
    se_max: float = 7.4
    sinr_min_db: float = -10.0

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise DomainError("efficiency must be in (0, 1]")
        if self.se_max <= 0:
            raise DomainError("se_max must be > 0")


def sinr_to_se(abstraction: LinkAbstraction, sinr_db):
    """Spectral efficiency in bit/s/Hz: 0 below cutoff, capped at se_max."""
    s = np.asarray(sinr_db, dtype=float)
    se = abstraction.efficiency * np.log2(1.0 + db_to_lin(s))
    se = np.minimum(se, abstraction.se_max)
    se = np.where(s < abstraction.sinr_min_db, 0.0, se)
    return se if se.ndim else float(se)


@dataclass(frozen=True)
class BlerModel:
    """Log-linear BLER waterfall: slope dB per decade through (sinr_50, 0.5)."""

    sinr_50_db: float = -5.0
    slope_db_per_decade: float = 2.0
    bler_floor: float = 1e-9

    def __post_init__(self):
        if self.slope_db_per_decade <= 0:
            raise DomainError("slope must be > 0")
        if not 0.0 <= self.bler_floor < 1.0:
            raise DomainError("bler_floor must be in [0, 1)")


def bler(model: BlerModel, sinr_db):
    """Block error probability at the given SINR (monotone non-increasing)."""
    s = np.asarray(sinr_db, dtype=float)
    log_bler = math.log10(0.5) - (s - model.sinr_50_db) / model.slope_db_per_decade
    out = np.clip(10.0 ** log_bler, model.bler_floor, 1.0)
    return out if out.ndim else float(out)


ZERO_BLER = BlerModel(sinr_50_db=-math.inf, slope_db_per_decade=1.0, bler_floor=0.0)


@dataclass(frozen=True)
class HarqConfig:
    """Bounded retransmissions counted against a latency budget."""

    max_transmissions: int = 4
    per_transmission_time_s: float = 0.25e-3
    combining_gain_db: float = 0.0

    def __post_init__(self):
        if self.max_transmissions < 1:
            raise DomainError("max_transmissions must be >= 1")
        if self.per_transmission_time_s <= 0:
            raise DomainError("per_transmission_time_s must be > 0")


@dataclass(frozen=True)
class HarqOutcome:
    """Success probability and the delay distribution over attempt counts."""

    success_probability: float
    # (attempt index starting at 1, delay seconds, probability of succeeding
    # exactly at that attempt)
    attempts: tuple
    degenerate_budget: bool = False

    def expected_transmissions(self) -> float:
        if not self.attempts:
            return 0.0
        total_p = sum(p for _, _, p in self.attempts)
        if total_p == 0.0:
            return 0.0
        return sum(i * p for i, _, p in self.attempts) / total_p


def harq_outcome(
    bler_model: BlerModel,
    harq: HarqConfig,
    sinr_db: float,
    latency_budget_s: float,
) -> HarqOutcome:
    """Residual-error arithmetic for up to k transmissions within the budget.

    k = min(max_transmissions, floor(budget / per_transmission_time)); each
    retransmission sees the SINR improved by the configured combining gain.
    A budget too short for even one transmission yields success 0 with the
    degenerate flag set.
    """
    if latency_budget_s <= 0:
        raise DomainError("latency_budget_s must be > 0")
    k = min(harq.max_transmissions, int(math.floor(latency_budget_s / harq.per_transmission_time_s + 1e-12)))
    if k == 0:
        return HarqOutcome(0.0, (), degenerate_budget=True)
    attempts = []
    p_all_failed = 1.0
    for i in range(1, k + 1):
        e_i = bler(bler_model, sinr_db + (i - 1) * harq.combining_gain_db)
        p_success_here = p_all_failed * (1.0 - e_i)
        attempts.append((i, i * harq.per_transmission_time_s, p_success_here))
        p_all_failed *= e_i
    return HarqOutcome(1.0 - p_all_failed, tuple(attempts))


@dataclass(frozen=True)
class LinkParams:
    """Per-scenario link abstraction bundle carried by the configuration."""

    alpha: float = 0.6
    se_max_dl: float = 7.4
    se_max_ul: float = 5.5
    sinr_min_db: float = -10.0
    csi_backoff_db: float = 1.0  # stands in for estimation/feedback error
    bler_sinr_50_db: float = -5.0
    bler_slope_db: float = 2.0
    bler_floor: float = 1e-9
    harq_max_transmissions: int = 4
    harq_tx_time_s: float = 0.25e-3
    harq_combining_gain_db: float = 0.0
    ul_p0_dbm: float = -90.0
    ul_alpha: float = 1.0
    ul_iot_target_db: float = 10.0
    # idealized spatial multiplexing order of the scheduler (MU-MIMO layers)
    mu_layers_dl: int = 4
    mu_layers_ul: int = 2

    def abstraction(self, direction: str) -> LinkAbstraction:
        se_max = self.se_max_dl if direction == "downlink" else self.se_max_ul
        return LinkAbstraction(efficiency=self.alpha, se_max=se_max, sinr_min_db=self.sinr_min_db)

    def bler_model(self) -> BlerModel:
        return BlerModel(self.bler_sinr_50_db, self.bler_slope_db, self.bler_floor)

    def harq(self) -> HarqConfig:
        return HarqConfig(self.harq_max_transmissions, self.harq_tx_time_s, self.harq_combining_gain_db)

    def power_control(self) -> PowerControlParams:
        return PowerControlParams(self.ul_p0_dbm, self.ul_alpha, 23.0, self.ul_iot_target_db)
