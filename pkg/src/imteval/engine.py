"""Drop-loop orchestration: seeded streams, per-drop link budgets and SINR,
scheduling, KPI accumulation, uplink power-control calibration and the
non-full-buffer connection-density evaluator.

Reproducibility contract: every random draw comes from a stream derived
from (master_seed, drop_index, stream_name), so identical (config, seed)
produce identical results for any worker count, and drop results merge in
drop-index order.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .antenna import element_gain
from .channel.model import los_probability, pathloss_curves
from .channel.profiles import ChannelProfile, profile_for
from .errors import DomainError
from .geometry import (
    MICRO_TX_OFFSET_DB,
    LayoutKind,
    NetworkLayout,
    build_layout,
    drop_ues,
    wrap_displacements,
)
from .link import SinrSample, noise_power, sinr_to_se
from .scenario import DOWNLINK, UPLINK, EMBB_ENVIRONMENTS, EvaluationConfig, TestEnvironment, config_hash
from .traffic import TrafficKind, pf_run, serve_fifo, track_delays

STREAM_ALGORITHM = (
    "numpy PCG64 seeded by SeedSequence(master_seed, spawn_key=(drop_index, "
    "blake2s_64(stream_name)))"
)

# drop indices above this offset are reserved for calibration probes
_CALIBRATION_DROP_BASE = 2 ** 40

# retransmission budget and channel-occupancy floor for the messaging model
_MAX_MESSAGE_ATTEMPTS = 8
_SE_CHANNEL_FLOOR = 0.1  # bit/s/Hz, slot length of an undecodable transfer


def _stream_key(link_id) -> int:
    if isinstance(link_id, (int, np.integer)):
        return int(link_id)
    digest = hashlib.blake2s(str(link_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_stream(master_seed: int, drop_index: int, link_id) -> np.random.Generator:
    """Independent, collision-resistant RNG stream for (drop, link)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(drop_index, _stream_key(link_id)))
    return np.random.default_rng(seq)


# ---------------------------------------------------------------------------
# vectorized link budget


@dataclass
class LinkBudget:
    """Per-drop coupling state for all UE x TRxP pairs."""

    coupling_db: np.ndarray  # (n_ue, n_trxp) pathloss + shadow - antenna gains
    los: np.ndarray  # (n_ue, n_trxp) bool
    d2d_m: np.ndarray
    serving: np.ndarray  # (n_ue,) argmin coupling


def _trxp_gain_db(config: EvaluationConfig, layout: NetworkLayout, delta: np.ndarray,
                  d2d: np.ndarray) -> np.ndarray:
    """BS-side element gain toward each UE (n_ue, n_trxp)."""
    pattern = config.bs_pattern()
    az = np.degrees(np.arctan2(delta[..., 1], delta[..., 0]))
    az_rel = (az - layout.trxp_boresight_deg[None, :] + 180.0) % 360.0 - 180.0
    dz = config.ue_height - layout.trxp_height[None, :]
    zen = np.degrees(np.arctan2(d2d, -dz))  # zenith of the UE seen from the BS
    downtilt = config.antenna_bs.downtilt_deg
    zen_eff = np.clip(zen - downtilt, 0.0, 180.0)
    gain = np.asarray(element_gain(pattern, az_rel, zen_eff))
    if layout.trxp_is_micro.any():
        # micro/indoor points are omnidirectional at their element gain
        gain = np.where(layout.trxp_is_micro[None, :], config.bs_element_gain, gain)
    return gain


def compute_coupling(config: EvaluationConfig, layout: NetworkLayout, ues,
                     rng: np.random.Generator) -> LinkBudget:
    """Pathloss + shadowing - antenna gain for every UE x TRxP pair.

    LOS conditions and shadow fading are drawn here, once per link per
    drop. The dense-urban micro layer uses its own profile.
    """
    ue_pos = np.array([ue.position[:2] for ue in ues])
    indoor = np.array([ue.indoor for ue in ues])
    high = np.array([ue.high_loss for ue in ues])

    delta, d2d = wrap_displacements(layout, ue_pos, layout.trxp_pos)
    n_ue, n_t = d2d.shape
    h_bs = layout.trxp_height[None, :]
    dz = h_bs - config.ue_height
    d3d = np.sqrt(d2d ** 2 + dz ** 2)
    d3d = np.maximum(d3d, 1.0)

    macro_profile = profile_for(config.environment, config.config_variant)
    micro_mask = layout.trxp_is_micro if layout.layout_kind is LayoutKind.DENSE_URBAN_TWO_LAYER \
        else np.zeros(n_t, dtype=bool)

    los_u = rng.uniform(size=(n_ue, n_t))
    sf_z = rng.standard_normal((n_ue, n_t))

    pl = np.zeros((n_ue, n_t))
    los = np.zeros((n_ue, n_t), dtype=bool)
    for profile, mask in _profile_columns(config, macro_profile, micro_mask):
        if not mask.any():
            continue
        p_los = los_probability(profile.plos_model, d2d[:, mask])
        los_part = los_u[:, mask] < p_los
        h_ref = float(layout.trxp_height[mask][0])
        pl_los, pl_nlos = pathloss_curves(profile, config.carrier_frequency,
                                          d3d[:, mask], h_ref, config.ue_height)
        part = np.where(los_part, pl_los, pl_nlos)
        sf_sigma = np.where(los_part, profile.los.sf_sigma_db, profile.nlos.sf_sigma_db)
        part = part + sf_sigma * sf_z[:, mask]
        pen = np.where(high, profile.pen_high_db, profile.pen_low_db)
        part = part + np.where(indoor, pen, 0.0)[:, None]
        pl[:, mask] = part
        los[:, mask] = los_part

    gain = _trxp_gain_db(config, layout, delta, d2d)
    coupling = pl - gain - config.ue_element_gain
    serving = np.argmin(coupling, axis=1)
    return LinkBudget(coupling_db=coupling, los=los, d2d_m=d2d, serving=serving)


def _profile_columns(config: EvaluationConfig, macro_profile: ChannelProfile, micro_mask):
    yield macro_profile, ~micro_mask
    if micro_mask.any():
        yield profile_for(config.environment, config.config_variant, micro=True), micro_mask


# ---------------------------------------------------------------------------
# per-drop simulation


@dataclass
class DropResult:
    drop_index: int
    serving: np.ndarray
    dl_signal_dbm: np.ndarray
    dl_interf_dbm: np.ndarray
    dl_noise_dbm: float
    dl_sinr_db: np.ndarray
    ul_signal_dbm: np.ndarray
    ul_interf_dbm: np.ndarray
    ul_noise_dbm: float
    ul_sinr_db: np.ndarray
    mean_iot_db: float
    ue_positions: np.ndarray  # (n_ue, 3)
    ue_indoor: np.ndarray
    dl_bits: np.ndarray | None = None  # per-UE correctly received bits over duration
    ul_bits: np.ndarray | None = None
    n_mux_ul: float = 0.0
    b_values_ul: np.ndarray | None = None

    def sinr_samples(self, direction: str):
        if direction == DOWNLINK:
            sig, itf, noise, sinr = (self.dl_signal_dbm, self.dl_interf_dbm,
                                     self.dl_noise_dbm, self.dl_sinr_db)
        else:
            sig, itf, noise, sinr = (self.ul_signal_dbm, self.ul_interf_dbm,
                                     self.ul_noise_dbm, self.ul_sinr_db)
        return [SinrSample(i, direction, float(sinr[i]), float(sig[i]),
                           float(itf[i]), float(noise)) for i in range(len(sinr))]


def _dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def _mw_to_dbm(mw):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(mw, dtype=float))


def run_drop(config: EvaluationConfig, layout: NetworkLayout, drop_index: int,
             sinr_only: bool = False) -> DropResult:
    """One Monte-Carlo drop: place UEs, build the link budget, compute DL
    and UL SINR with explicit inter-site interference, and (unless
    sinr_only) run the scheduler to get per-UE throughput."""
    rng_ues = derive_stream(config.master_seed, drop_index, "ues")
    rng_links = derive_stream(config.master_seed, drop_index, "links")
    rng_sched = derive_stream(config.master_seed, drop_index, "sched")

    ues = drop_ues(layout, config, rng_ues)
    budget = compute_coupling(config, layout, ues, rng_links)
    n_ue, n_t = budget.coupling_db.shape
    serving = budget.serving
    coupling_mw_dl = _dbm_to_mw(-budget.coupling_db)  # unit-power coupling gain

    # --- downlink: every co-channel TRxP transmits at full configured power
    tx_dbm = np.full(n_t, config.bs_tx_power)
    if layout.layout_kind is LayoutKind.DENSE_URBAN_TWO_LAYER:
        tx_dbm[layout.trxp_is_micro] += MICRO_TX_OFFSET_DB
    rx_mw = _dbm_to_mw(tx_dbm)[None, :] * coupling_mw_dl
    idx = np.arange(n_ue)
    dl_branches = config.antenna_ue.n_ports
    dl_serving_mw = rx_mw[idx, serving] * dl_branches  # MRC array gain on the signal
    dl_interf_mw = rx_mw.sum(axis=1) - rx_mw[idx, serving]
    dl_noise_dbm = noise_power(config.bandwidth, config.ue_noise_figure)
    dl_noise_mw = float(_dbm_to_mw(dl_noise_dbm))
    dl_sinr = dl_serving_mw / (dl_interf_mw + dl_noise_mw)

    # --- uplink: open-loop power control, one co-scheduled UE per other cell
    is_mmtc_style = config.traffic.kind is TrafficKind.POISSON_MESSAGING
    ul_user_bw = config.traffic.w_user_hz if is_mmtc_style else \
        config.bandwidth / config.link.mu_layers_ul
    cl_serving = budget.coupling_db[idx, serving]
    p_ue = np.minimum(config.ue_tx_power, config.link.ul_p0_dbm + config.link.ul_alpha * cl_serving)
    ul_noise_dbm = noise_power(ul_user_bw, config.bs_noise_figure)
    ul_noise_mw = float(_dbm_to_mw(ul_noise_dbm))
    ul_branches = config.antenna_bs.n_ports

    # pick the transmitting UE of each cell for the co-channel resource
    cell_ues = [np.flatnonzero(serving == c) for c in range(n_t)]
    pick = np.full(n_t, -1, dtype=int)
    for c in range(n_t):
        if len(cell_ues[c]):
            pick[c] = cell_ues[c][int(rng_sched.integers(len(cell_ues[c])))]
    active = pick >= 0
    if active.any():
        # received power of every cell's active UE at every TRxP: (n_active, n_t)
        act_idx = pick[active]
        own_cell = np.flatnonzero(active)
        act_rx_mw = _dbm_to_mw(p_ue[act_idx, None] - budget.coupling_db[act_idx, :])
        total = act_rx_mw.sum(axis=0)
        own_contrib = np.zeros(n_t)
        own_contrib[own_cell] = act_rx_mw[np.arange(len(own_cell)), own_cell]
        interf_at = total - own_contrib
    else:
        interf_at = np.zeros(n_t)

    ul_serving_mw = _dbm_to_mw(p_ue - cl_serving) * ul_branches
    ul_interf_mw = interf_at[serving]
    ul_sinr = ul_serving_mw / (ul_interf_mw + ul_noise_mw)

    # mean cell IoT taken over per-TRxP values in dB
    with np.errstate(divide="ignore"):
        iot_db = float(np.mean(10.0 * np.log10(np.maximum(interf_at, 1e-30) / ul_noise_mw)))

    result = DropResult(
        drop_index=drop_index,
        serving=serving,
        dl_signal_dbm=_mw_to_dbm(dl_serving_mw),
        dl_interf_dbm=_mw_to_dbm(dl_interf_mw),
        dl_noise_dbm=dl_noise_dbm,
        dl_sinr_db=_mw_to_dbm(dl_sinr),
        ul_signal_dbm=_mw_to_dbm(ul_serving_mw),
        ul_interf_dbm=_mw_to_dbm(ul_interf_mw),
        ul_noise_dbm=ul_noise_dbm,
        ul_sinr_db=_mw_to_dbm(ul_sinr),
        mean_iot_db=iot_db,
        ue_positions=np.array([ue.position for ue in ues]),
        ue_indoor=np.array([ue.indoor for ue in ues]),
    )
    for ue, trxp in zip(ues, serving):
        ue.serving_trxp = int(trxp)
    if sinr_only:
        return result

    # --- scheduling and per-UE throughput over the drop duration
    lk = config.link
    backoff = lk.csi_backoff_db
    n_intervals = max(1, int(round(config.duration_t / 1e-3)))
    dt = config.duration_t / n_intervals
    dl_bits = np.zeros(n_ue)
    ul_bits = np.zeros(n_ue)
    mux_samples = []
    for c in range(n_t):
        members = cell_ues[c]
        if not len(members):
            continue
        se_dl = sinr_to_se(lk.abstraction(DOWNLINK), result.dl_sinr_db[members] - backoff)
        se_ul = sinr_to_se(lk.abstraction(UPLINK), result.ul_sinr_db[members] - backoff)
        rates_dl = np.asarray(se_dl) * config.bandwidth
        rates_ul = np.asarray(se_ul) * ul_user_bw
        if config.environment in EMBB_ENVIRONMENTS:
            counts_dl, _ = pf_run(rates_dl, n_intervals, lk.mu_layers_dl)
            dl_bits[members] = counts_dl * dt * rates_dl
        ul_resources = int(config.traffic.eval_bandwidth_hz // config.traffic.w_user_hz) \
            if is_mmtc_style else lk.mu_layers_ul
        counts_ul, mux = pf_run(rates_ul, n_intervals, ul_resources)
        ul_bits[members] = counts_ul * dt * rates_ul
        mux_samples.append(mux)

    result.dl_bits = dl_bits
    result.ul_bits = ul_bits
    result.n_mux_ul = float(np.mean(mux_samples)) if mux_samples else 0.0
    if is_mmtc_style:
        served = ul_bits > 0
        b_vals = np.full(n_ue, np.nan)
        b_vals[served] = config.duration_t / (ul_bits[served] / config.traffic.w_user_hz)
        result.b_values_ul = b_vals
    return result


# ---------------------------------------------------------------------------
# uplink power-control calibration


def calibrate_ul_power(config: EvaluationConfig, layout: NetworkLayout,
                       probes: int = 3, max_iterations: int = 8):
    """Adjust the open-loop P0 until the mean uplink IoT meets the target.

    Returns (adjusted config, achieved mean IoT dB, warnings). Probe drops
    use reserved stream indices so they never collide with run drops.
    """
    target = config.link.ul_iot_target_db
    warnings = []
    cfg = config
    achieved = math.inf
    for iteration in range(max_iterations):
        iots = []
        for p in range(probes):
            drop = _CALIBRATION_DROP_BASE + iteration * probes + p
            iots.append(run_drop(cfg, layout, drop, sinr_only=True).mean_iot_db)
        achieved = float(np.mean(iots))
        if achieved <= target:
            break
        # IoT moves ~1:1 with P0; step down with a small margin
        new_p0 = cfg.link.ul_p0_dbm - (achieved - target) - 0.5
        cfg = replace(cfg, link=replace(cfg.link, ul_p0_dbm=new_p0))
    else:
        warnings.append(
            f"CalibrationWarning: mean uplink IoT {achieved:.2f} dB still above "
            f"{target:.1f} dB after {max_iterations} iterations"
        )
    return cfg, achieved, warnings


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True)
class KpiValue:
    metric: str
    direction: str | None
    value: float
    unit: str
    speed_kmh: float | None = None
    note: str = ""


@dataclass
class RunResult:
    config: EvaluationConfig
    config_digest: str
    drops_executed: int
    convergence_status: str
    kpis: list
    cdfs: dict
    per_drop_mean_ul_sinr: np.ndarray
    mean_iot_db: float
    calibrated_p0_dbm: float
    n_mux_ul: float
    mean_b_ul: float
    warnings: list
    master_seed: int
    stream_algorithm: str = STREAM_ALGORITHM

    def kpi(self, metric: str, direction: str | None = None, speed_kmh: float | None = None):
        for k in self.kpis:
            if k.metric == metric and (direction is None or k.direction == direction) \
                    and (speed_kmh is None or k.speed_kmh == speed_kmh):
                return k
        raise KeyError(f"no KPI ({metric}, {direction}, {speed_kmh}) in this run")


_WORKER_STATE: dict = {}


def _worker_init(config, layout, sinr_only):
    _WORKER_STATE["args"] = (config, layout, sinr_only)


def _drop_worker(drop_index):
    config, layout, sinr_only = _WORKER_STATE["args"]
    return run_drop(config, layout, drop_index, sinr_only)


def run(config: EvaluationConfig, workers: int = 1, sinr_only: bool = False,
        early_stop: bool = False, convergence_window: int = 50,
        convergence_tol: float = 1e-4, calibrate: bool = True) -> RunResult:
    """Execute the drop loop and compute every KPI defined for the
    environment. Results are identical for any worker count."""
    layout = build_layout(config)
    warnings = []
    achieved_iot = math.nan
    if calibrate:
        config, achieved_iot, warnings = calibrate_ul_power(config, layout)

    cdfs = {
        "dl_sinr_db": metrics.CdfEstimator(),
        "ul_sinr_db": metrics.CdfEstimator(),
    }
    if not sinr_only:
        cdfs.update({
            "dl_user_se": metrics.CdfEstimator(),
            "ul_user_se": metrics.CdfEstimator(),
            "dl_user_tput_bps": metrics.CdfEstimator(),
            "ul_user_tput_bps": metrics.CdfEstimator(),
        })

    monitor = metrics.ConvergenceMonitor(window=convergence_window, tol=convergence_tol,
                                         max_drops=config.drops)
    per_drop_mean = []
    iot_values = []
    dl_bits_per_drop = []
    ul_bits_per_drop = []
    n_mux_values = []
    b_pool = []
    status = "completed"
    executed = 0

    def fold(drop: DropResult):
        nonlocal status, executed
        executed += 1
        cdfs["dl_sinr_db"].add(drop.dl_sinr_db)
        cdfs["ul_sinr_db"].add(drop.ul_sinr_db)
        mean_ul = float(np.mean(drop.ul_sinr_db))
        per_drop_mean.append(mean_ul)
        iot_values.append(drop.mean_iot_db)
        if drop.dl_bits is not None:
            dl_bits_per_drop.append(float(drop.dl_bits.sum()))
            ul_bits_per_drop.append(float(drop.ul_bits.sum()))
            norm_dl = drop.dl_bits / (config.duration_t * config.bandwidth)
            norm_ul = drop.ul_bits / (config.duration_t * config.bandwidth)
            cdfs["dl_user_se"].add(norm_dl)
            cdfs["ul_user_se"].add(norm_ul)
            cdfs["dl_user_tput_bps"].add(drop.dl_bits / config.duration_t)
            cdfs["ul_user_tput_bps"].add(drop.ul_bits / config.duration_t)
            n_mux_values.append(drop.n_mux_ul)
            if drop.b_values_ul is not None:
                b_pool.append(drop.b_values_ul[~np.isnan(drop.b_values_ul)])
        verdict = metrics.converged(monitor, mean_ul)
        if verdict == metrics.CAPPED:
            status = "capped"
            return False
        if early_stop and verdict == metrics.CONVERGED:
            status = "converged"
            return False
        return True

    drop_indices = range(config.drops)
    if workers <= 1:
        for d in drop_indices:
            if not fold(run_drop(config, layout, d, sinr_only)):
                break
    else:
        chunk = max(1, min(64, config.drops // (workers * 4)))
        with multiprocessing.Pool(processes=workers, initializer=_worker_init,
                                  initargs=(config, layout, sinr_only)) as pool:
            for drop in pool.imap(_drop_worker, drop_indices, chunksize=chunk):
                if not fold(drop):
                    break

    layout_n_trxps = layout.n_trxps
    kpis = _assemble_kpis(config, layout_n_trxps, cdfs, dl_bits_per_drop, ul_bits_per_drop,
                          n_mux_values, b_pool, sinr_only)

    return RunResult(
        config=config,
        config_digest=config_hash(config),
        drops_executed=executed,
        convergence_status=status,
        kpis=kpis,
        cdfs=cdfs,
        per_drop_mean_ul_sinr=np.array(per_drop_mean),
        mean_iot_db=float(np.mean(iot_values)) if iot_values else math.nan,
        calibrated_p0_dbm=config.link.ul_p0_dbm,
        n_mux_ul=float(np.mean(n_mux_values)) if n_mux_values else 0.0,
        mean_b_ul=float(np.mean(np.concatenate(b_pool))) if b_pool else math.nan,
        warnings=warnings,
        master_seed=config.master_seed,
    )


def _assemble_kpis(config, n_trxps, cdfs, dl_bits_per_drop, ul_bits_per_drop,
                   n_mux_values, b_pool, sinr_only):
    kpis = []
    env = config.environment
    lk = config.link

    # reliability needs only the SINR CDFs, so it survives sinr_only mode
    if env is TestEnvironment.URBAN_MACRO_URLLC:
        for direction in (DOWNLINK, UPLINK):
            prob, _ = metrics.reliability(
                cdfs[f"{'dl' if direction == DOWNLINK else 'ul'}_sinr_db"],
                lk.bler_model(), lk.harq(), extra_backoff_db=lk.csi_backoff_db)
            kpis.append(KpiValue("reliability", direction, prob, "probability"))
    if sinr_only:
        return kpis

    if env in EMBB_ENVIRONMENTS and dl_bits_per_drop:
        for direction, bits_per_drop in ((DOWNLINK, dl_bits_per_drop), (UPLINK, ul_bits_per_drop)):
            se_in = metrics.SeInputs(
                bits_per_drop_user=[[b] for b in bits_per_drop],
                duration_s=config.duration_t,
                bandwidth_hz=config.bandwidth,
                n_trxps=n_trxps,
            )
            kpis.append(KpiValue("avg_se", direction, metrics.avg_spectral_efficiency(se_in),
                                 "bit/s/Hz/TRxP"))
            se_cdf = cdfs[f"{'dl' if direction == DOWNLINK else 'ul'}_user_se"]
            kpis.append(KpiValue("pct5_se", direction,
                                 metrics.pct5_user_se(se_cdf.samples), "bit/s/Hz"))
        # normalized traffic-channel rate at the environment's mobility speeds
        for speed in _mobility_speeds(env):
            rate, _ = metrics.mobility_check(
                cdfs["ul_sinr_db"], speed, config.carrier_frequency,
                lk.abstraction(UPLINK), requirement=0.0, extra_backoff_db=lk.csi_backoff_db)
            kpis.append(KpiValue("mobility_rate", UPLINK, rate, "bit/s/Hz", speed_kmh=speed))
        if env is TestEnvironment.DENSE_URBAN_EMBB:
            for direction in (DOWNLINK, UPLINK):
                tput_cdf = cdfs[f"{'dl' if direction == DOWNLINK else 'ul'}_user_tput_bps"]
                value = float(np.quantile(tput_cdf.samples, 0.05, method="linear"))
                kpis.append(KpiValue("ued_rate", direction, value, "bit/s"))

    if env is TestEnvironment.URBAN_MACRO_MMTC and n_mux_values and b_pool:
        all_b = np.concatenate(b_pool)
        cd_in = metrics.CdInputs(
            n_mux=float(np.mean(n_mux_values)),
            bandwidth_hz=config.traffic.eval_bandwidth_hz,
            b_values=all_b,
            isd_m=config.isd,
        )
        kpis.append(KpiValue("connection_density", UPLINK,
                             metrics.connection_density_fullbuffer(cd_in), "/km^2",
                             note="full-buffer multiplexing route"))
    return kpis


def _mobility_speeds(env: TestEnvironment):
    return {
        TestEnvironment.INDOOR_HOTSPOT_EMBB: (10.0,),
        TestEnvironment.DENSE_URBAN_EMBB: (30.0,),
        TestEnvironment.RURAL_EMBB: (120.0, 500.0),
    }.get(env, ())


# ---------------------------------------------------------------------------
# non-full-buffer connection density route


def evaluate_p99_delay(config: EvaluationConfig, layout: NetworkLayout,
                       density_per_km2: float, n_drops: int = 3,
                       horizon_s: float = 20.0, record_sink: list | None = None) -> float:
    """99th-percentile message delay at the given device density.

    Messages arrive per cell as aggregate Poisson traffic (device density x
    sector area x per-device rate); each message samples a fresh device
    position. Service uses the narrowband channels of the evaluated
    carrier, retransmissions draw from the block-error model, and the
    co-channel interference level comes from the same budget machinery as
    the full-buffer runs (saturated-neighbor assumption).

    When ``record_sink`` is given, per-message rows (drop, cell, arrival,
    service start, completion, transmissions, delivered) are appended to it.
    """
    spec = config.traffic
    if spec.kind is not TrafficKind.POISSON_MESSAGING:
        raise DomainError("density evaluation needs the Poisson messaging traffic model")
    area_km2 = layout.sector_area_m2 / 1e6
    rate_per_cell = density_per_km2 * area_km2 * spec.rate_per_s
    n_servers = max(1, int(spec.eval_bandwidth_hz // spec.w_user_hz))
    pdu_bits = spec.pdu_size_bytes * 8
    lk = config.link
    bler_model = lk.bler_model()
    delays = []

    for d in range(n_drops):
        rng = derive_stream(config.master_seed, d, "density")
        probe = run_drop(config, layout, d, sinr_only=True)
        # saturated-neighbor interference: reuse the drop's per-victim level
        for c in range(layout.n_trxps):
            n_msgs = rng.poisson(rate_per_cell * horizon_s)
            if n_msgs == 0:
                continue
            arrivals = np.sort(rng.uniform(0.0, horizon_s, size=n_msgs))
            # sample message SINRs from this drop's UE population of the cell
            members = np.flatnonzero(probe.serving == c)
            if len(members) == 0:
                continue
            chosen = members[rng.integers(len(members), size=n_msgs)]
            sinr = probe.ul_sinr_db[chosen] - lk.csi_backoff_db
            se = np.asarray(sinr_to_se(lk.abstraction(UPLINK), sinr))
            # undecodable messages still occupy the channel at the slowest
            # rate for the full retransmission budget, then count as lost
            tx_time = pdu_bits / np.maximum(se, _SE_CHANNEL_FLOOR) / spec.w_user_hz
            e1 = _bler_vec(bler_model, sinr)
            first_success = rng.geometric(np.clip(1.0 - e1, 1e-9, 1.0))
            delivered = (se > 0.0) & (first_success <= _MAX_MESSAGE_ATTEMPTS)
            n_tx = np.minimum(first_success, _MAX_MESSAGE_ATTEMPTS)
            busy = spec.overhead_s + n_tx * tx_time
            log = [(ue, t, start, done, int(k)) for (ue, t, start, done, _), k in
                   zip(serve_fifo(list(zip(arrivals.tolist(), range(n_msgs))),
                                  busy.tolist(), n_servers), n_tx)]
            records, _ = track_delays(None, log)
            for rec, good in zip(records, delivered):
                delays.append(rec.delay if good else math.inf)
                if record_sink is not None:
                    record_sink.append((d, c, rec.arrival_time, rec.service_start,
                                        rec.completion_time, rec.transmissions_used,
                                        bool(good)))

    if not delays:
        return 0.0
    return float(np.quantile(np.asarray(delays), 0.99, method="linear"))


def _bler_vec(model, sinr_db):
    from .link import bler
    return np.asarray(bler(model, sinr_db))


def density_search(config: EvaluationConfig, lo_per_km2: float = 2e5,
                   hi_per_km2: float = 4e7, steps: int = 10,
                   n_drops: int = 3, calibrate: bool = True):
    """Non-full-buffer connection density: the largest device density whose
    99th-percentile delay stays within 10 s."""
    layout = build_layout(config)
    if calibrate:
        config, _, _ = calibrate_ul_power(config, layout)

    def probe(density):
        return evaluate_p99_delay(config, layout, density, n_drops=n_drops)

    return metrics.connection_density_search(probe, lo_per_km2, hi_per_km2, steps=steps), config
