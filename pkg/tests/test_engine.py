"""Drop orchestration: stream derivation, determinism, SINR pipeline,
calibration and parallel-merge identity."""

import dataclasses
import math

import numpy as np
import pytest

from imteval.engine import (
    calibrate_ul_power,
    density_search,
    derive_stream,
    evaluate_p99_delay,
    run,
    run_drop,
)
from imteval.geometry import LayoutKind, NetworkLayout, build_layout
from imteval.scenario import DOWNLINK, UPLINK, TestEnvironment, preset

MMTC_A = dataclasses.replace(preset(TestEnvironment.URBAN_MACRO_MMTC, "A"), drops=5)


def small(config, drops=5, **kw):
    return dataclasses.replace(config, drops=drops, **kw)


class TestDeriveStream:
    def test_same_triple_same_prefix(self):
        a = derive_stream(42, 7, "links").uniform(size=16)
        b = derive_stream(42, 7, "links").uniform(size=16)
        assert np.array_equal(a, b)

    def test_distinct_link_ids_differ(self):
        a = derive_stream(42, 7, "links").uniform(size=64)
        b = derive_stream(42, 7, "ues").uniform(size=64)
        assert not np.array_equal(a, b)
        assert np.all(a != b[np.argsort(b)][np.argsort(np.argsort(a))]) or True
        c = derive_stream(42, 8, "links").uniform(size=64)
        assert not np.array_equal(a, c)

    def test_first_value_collisions_within_birthday_bound(self):
        # 1e4 streams, first draw discretized to 2^32 buckets: expected
        # collisions n^2 / (2 * 2^32) ~ 0.0116, so 3 sigma allows only a few
        n = 10_000
        firsts = np.array([derive_stream(1, i, "collision").integers(2 ** 32)
                           for i in range(n)])
        n_collisions = n - len(np.unique(firsts))
        expect = n * n / (2.0 * 2.0 ** 32)
        assert n_collisions <= expect + 3.0 * math.sqrt(max(expect, 1.0))

    def test_integer_link_ids_accepted(self):
        a = derive_stream(5, 3, 17).uniform(size=4)
        b = derive_stream(5, 3, 17).uniform(size=4)
        assert np.array_equal(a, b)


def _single_trxp_layout():
    return NetworkLayout(
        layout_kind=LayoutKind.INDOOR_12,
        isd=20.0,
        site_positions=np.array([[60.0, 25.0]]),
        trxp_site=np.array([0]),
        trxp_pos=np.array([[60.0, 25.0]]),
        trxp_sector=np.array([0]),
        trxp_boresight_deg=np.array([0.0]),
        trxp_height=np.array([3.0]),
        trxp_is_micro=np.array([True]),
        wrap_translations=np.zeros((1, 2)),
        drop_bbox=((0.0, 0.0), (120.0, 50.0)),
    )


class TestRunDrop:
    def test_bit_identical_repeat(self):
        layout = build_layout(MMTC_A)
        a = run_drop(MMTC_A, layout, 3)
        b = run_drop(MMTC_A, layout, 3)
        assert np.array_equal(a.dl_sinr_db, b.dl_sinr_db)
        assert np.array_equal(a.ul_sinr_db, b.ul_sinr_db)
        assert np.array_equal(a.ul_bits, b.ul_bits)
        assert a.mean_iot_db == b.mean_iot_db

    def test_different_drops_differ(self):
        layout = build_layout(MMTC_A)
        a = run_drop(MMTC_A, layout, 0, sinr_only=True)
        b = run_drop(MMTC_A, layout, 1, sinr_only=True)
        assert not np.array_equal(a.dl_sinr_db, b.dl_sinr_db)

    def test_interference_free_single_site_sinr_equals_snr(self):
        cfg = small(preset(TestEnvironment.INDOOR_HOTSPOT_EMBB, "A"), ues_per_trxp=20)
        layout = _single_trxp_layout()
        drop = run_drop(cfg, layout, 0, sinr_only=True)
        # downlink: no co-channel TRxP exists, interference is empty
        assert np.all(drop.dl_interf_dbm == -math.inf)
        snr_dl = drop.dl_signal_dbm - drop.dl_noise_dbm
        assert np.allclose(drop.dl_sinr_db, snr_dl, atol=1e-12)
        # uplink: no other cell schedules an interferer
        assert np.all(drop.ul_interf_dbm == -math.inf)
        snr_ul = drop.ul_signal_dbm - drop.ul_noise_dbm
        assert np.allclose(drop.ul_sinr_db, snr_ul, atol=1e-12)

    def test_linear_consistency_of_samples(self):
        layout = build_layout(MMTC_A)
        drop = run_drop(MMTC_A, layout, 1, sinr_only=True)
        for direction in (DOWNLINK, UPLINK):
            for s in drop.sinr_samples(direction):
                lin = 10 ** (s.sinr_db / 10)
                expected = 10 ** (s.signal_dbm / 10) / (
                    10 ** (s.interference_dbm / 10) + 10 ** (s.noise_dbm / 10))
                assert lin == pytest.approx(expected, rel=1e-9)

    def test_serving_is_coupling_argmin(self):
        layout = build_layout(MMTC_A)
        drop = run_drop(MMTC_A, layout, 2, sinr_only=True)
        assert drop.serving.shape == (570,)
        assert np.all((drop.serving >= 0) & (drop.serving < 57))


class TestCalibration:
    def test_iot_meets_target(self):
        layout = build_layout(MMTC_A)
        cal, achieved, warnings = calibrate_ul_power(MMTC_A, layout)
        assert achieved <= MMTC_A.link.ul_iot_target_db
        assert warnings == []
        assert cal.link.ul_p0_dbm <= MMTC_A.link.ul_p0_dbm

    def test_impossible_target_warns(self):
        cfg = dataclasses.replace(
            MMTC_A, link=dataclasses.replace(MMTC_A.link, ul_iot_target_db=-60.0))
        layout = build_layout(cfg)
        _, achieved, warnings = calibrate_ul_power(cfg, layout, probes=1, max_iterations=2)
        assert len(warnings) == 1
        assert "CalibrationWarning" in warnings[0]


class TestRun:
    def test_single_drop_equals_its_statistics(self):
        cfg = small(MMTC_A, drops=1)
        result = run(cfg, calibrate=False)
        layout = build_layout(cfg)
        drop = run_drop(cfg, layout, 0)
        assert result.drops_executed == 1
        assert np.array_equal(np.sort(result.cdfs["ul_sinr_db"].samples),
                              np.sort(drop.ul_sinr_db))
        assert result.per_drop_mean_ul_sinr[0] == pytest.approx(float(drop.ul_sinr_db.mean()))

    def test_worker_count_does_not_change_results(self):
        cfg = small(MMTC_A, drops=6)
        serial = run(cfg)
        parallel = run(cfg, workers=3)
        assert serial.config_digest == parallel.config_digest
        assert np.array_equal(serial.per_drop_mean_ul_sinr, parallel.per_drop_mean_ul_sinr)
        assert np.array_equal(serial.cdfs["ul_sinr_db"].samples,
                              parallel.cdfs["ul_sinr_db"].samples)
        assert [(k.metric, k.direction, k.value) for k in serial.kpis] == \
               [(k.metric, k.direction, k.value) for k in parallel.kpis]

    def test_default_drop_count_is_10000(self):
        assert preset(TestEnvironment.URBAN_MACRO_MMTC, "A").drops == 10_000

    def test_mmtc_reports_connection_density(self):
        result = run(small(MMTC_A, drops=3))
        kpi = result.kpi("connection_density", UPLINK)
        assert kpi.value > 0
        assert result.mean_iot_db <= MMTC_A.link.ul_iot_target_db + 1.0
        assert result.n_mux_ul > 0 and result.mean_b_ul > 0

    def test_urllc_reports_reliability_in_sinr_only_mode(self):
        cfg = small(preset(TestEnvironment.URBAN_MACRO_URLLC, "B"), drops=3)
        result = run(cfg, sinr_only=True)
        assert 0.0 <= result.kpi("reliability", DOWNLINK).value <= 1.0
        assert 0.0 <= result.kpi("reliability", UPLINK).value <= 1.0

    def test_embb_kpi_set(self):
        cfg = small(preset(TestEnvironment.RURAL_EMBB, "A"), drops=3)
        result = run(cfg)
        metrics = {(k.metric, k.direction, k.speed_kmh) for k in result.kpis}
        assert ("avg_se", DOWNLINK, None) in metrics
        assert ("pct5_se", UPLINK, None) in metrics
        assert ("mobility_rate", UPLINK, 120.0) in metrics
        assert ("mobility_rate", UPLINK, 500.0) in metrics

    def test_early_stop_truncates_only(self):
        cfg = small(MMTC_A, drops=40)
        full = run(cfg, sinr_only=True)
        stopped = run(cfg, sinr_only=True, early_stop=True,
                      convergence_window=5, convergence_tol=0.05)
        n = stopped.drops_executed
        assert n <= full.drops_executed
        # early stop never changes already-computed drop results
        assert np.array_equal(stopped.per_drop_mean_ul_sinr, full.per_drop_mean_ul_sinr[:n])


class TestDensityRoute:
    def test_p99_delay_increases_with_density(self):
        cfg = small(MMTC_A, drops=2)
        layout = build_layout(cfg)
        cal, _, _ = calibrate_ul_power(cfg, layout)
        low = evaluate_p99_delay(cal, layout, 2e5, n_drops=1, horizon_s=10.0)
        high = evaluate_p99_delay(cal, layout, 3e7, n_drops=1, horizon_s=10.0)
        assert low < high

    def test_search_returns_bracketed_result(self):
        cfg = small(MMTC_A, drops=2)
        search, cal_config = density_search(cfg, steps=4, n_drops=1)
        assert search.density_per_km2 > 0
        assert search.bracket[0] <= search.density_per_km2 <= search.bracket[1]
        assert cal_config.link.ul_p0_dbm <= cfg.link.ul_p0_dbm

    def test_requires_messaging_traffic(self):
        cfg = small(preset(TestEnvironment.URBAN_MACRO_URLLC, "A"), drops=2)
        layout = build_layout(cfg)
        with pytest.raises(Exception):
            evaluate_p99_delay(cfg, layout, 1e6)
