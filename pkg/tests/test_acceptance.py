"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL
line. Tolerances are pinned here and nowhere else.

Run it alone with:  pytest tests/test_acceptance.py -v -s
"""

import dataclasses
import math
import numpy as np
import pytest

from imteval import preset, TestEnvironment
from imteval.antenna import ArrayConfig, ElementPattern
from imteval.channel import (
    assign_los,
    channel_coeff,
    gen_clusters,
    gen_lsp,
    get_profile,
    los_probability,
    realize_link,
)
from imteval.engine import (
    calibrate_ul_power,
    density_search,
    derive_stream,
    run,
    run_drop,
)
from imteval.geometry import build_layout, wrap_displacements, wrap_distance
from imteval.link import BlerModel, HarqConfig, ZERO_BLER, bler, harq_outcome
from imteval.metrics import (
    CdfEstimator,
    CdInputs,
    CONVERGED,
    ConvergenceMonitor,
    SeInputs,
    avg_spectral_efficiency,
    b_value,
    connection_density_fullbuffer,
    converged,
)
from imteval.report import check_compliance, emit, load_fixture
from imteval.scenario import DOWNLINK, UPLINK, builtin_requirements

MMTC_A = preset(TestEnvironment.URBAN_MACRO_MMTC, "A")


def _report(number, name, ok, detail=""):
    line = f"ACCEPTANCE {number} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" -- {detail}"
    print(line, flush=True)  # visible with pytest -s
    assert ok, line


class TestCriterion1FormulaOracles:
    def test_formula_oracles(self):
        se = avg_spectral_efficiency(SeInputs(
            bits_per_drop_user=[[5e6, 15e6]], duration_s=1.0, bandwidth_hz=10e6, n_trxps=1))
        ok_se = se == 2.0

        cd = connection_density_fullbuffer(CdInputs(
            n_mux=10.0, bandwidth_hz=180e3, b_values=np.array([1.8e3]), isd_m=500.0))
        ok_cd = abs(cd - 13_856.4) <= 0.1

        b = b_value(10.0, 1000.0, 100.0)
        ok_b = b == 1.0

        _report(1, "formula oracles", ok_se and ok_cd and ok_b,
                f"avg SE {se}, density {cd:.1f}/km^2, per-user bandwidth value {b}")


class TestCriterion2Geometry:
    def test_geometry(self):
        layout = build_layout(MMTC_A)
        ok_count = layout.n_trxps == 57

        expected_area = 500.0 ** 2 * math.sqrt(3.0) / 6.0
        ok_area = abs(layout.sector_area_m2 - expected_area) / expected_area < 1e-6

        rng = np.random.default_rng(2024)
        a = rng.uniform(-2500, 2500, (10_000, 2))
        b = rng.uniform(-2500, 2500, (10_000, 2))

        def pairwise_wrapped(x, y):
            d2 = np.full(len(x), np.inf)
            for t in layout.wrap_translations:
                d2 = np.minimum(d2, np.sum((x - y - t[None, :]) ** 2, axis=1))
            return np.sqrt(d2)

        pair_ab = pairwise_wrapped(a, b)
        pair_ba = pairwise_wrapped(b, a)
        direct = np.linalg.norm(a - b, axis=1)
        ok_sym = np.allclose(pair_ab, pair_ba, atol=1e-9)
        ok_short = np.all(pair_ab <= direct + 1e-9)

        _report(2, "geometry", ok_count and ok_area and ok_sym and ok_short,
                f"57 TRxPs: {ok_count}, sector area rel err "
                f"{abs(layout.sector_area_m2 - expected_area) / expected_area:.2e}, "
                f"wrap symmetric/short on 10^4 pairs: {ok_sym}/{ok_short}")


class TestCriterion3ChannelStatistics:
    def test_cluster_power_normalization(self):
        params = get_profile("UMa_A").nlos
        rng = derive_stream(31, 0, "acceptance-powers")
        lsp = gen_lsp(params, False, rng)
        worst = 0.0
        for _ in range(100_000):
            cl = gen_clusters(lsp, params.n_clusters, rng, params)
            worst = max(worst, abs(cl.powers.sum() - 1.0))
        _report(3, "channel: cluster power normalization", worst <= 1e-12,
                f"max |sum - 1| = {worst:.2e} over 1e5 draws")

    def test_unit_power_coefficients(self):
        profile = get_profile("UMa_A")
        one = ArrayConfig()
        iso = ElementPattern(0.0, isotropic=True)
        rng = derive_stream(32, 0, "acceptance-unit")
        powers = np.empty(10_000)
        for i in range(len(powers)):
            real = realize_link(profile, 700e6, [0, 0, 25.0], [130.0, 40.0, 1.5], rng,
                                speed_kmh=3.0)
            h = channel_coeff(real, one, iso, one, iso, 0.0)
            powers[i] = abs(h[0, 0]) ** 2
        err = abs(powers.mean() - 1.0)
        _report(3, "channel: unit mean coefficient power", err < 0.02,
                f"|mean power - 1| = {err:.4f} over 1e4 realizations")

    def test_rms_delay_spread(self):
        params = get_profile("UMa_A").nlos
        rng = derive_stream(33, 0, "acceptance-ds")
        ds_in = 300e-9
        lsp = dataclasses.replace(gen_lsp(params, False, rng), ds_s=ds_in)
        spreads = np.empty(10_000)
        for i in range(len(spreads)):
            cl = gen_clusters(lsp, params.n_clusters, rng, params)
            m1 = float(np.sum(cl.powers * cl.delays_s))
            spreads[i] = math.sqrt(np.sum(cl.powers * cl.delays_s ** 2) - m1 ** 2)
        rel = abs(spreads.mean() - ds_in) / ds_in
        _report(3, "channel: rms delay spread tracking", rel < 0.10,
                f"relative deviation {rel:.3f} over 1e4 draws")

    def test_los_frequency(self):
        profile = get_profile("UMa_A")
        rng = derive_stream(34, 0, "acceptance-los")
        n = 100_000
        d2d = 150.0
        hits = sum(assign_los(profile, d2d, False, rng).los for _ in range(n))
        p = float(los_probability("uma", d2d))
        dev = abs(hits - n * p)
        bound = 3.0 * math.sqrt(n * p * (1 - p))
        _report(3, "channel: LOS frequency vs curve", dev < bound,
                f"|observed - expected| = {dev:.0f} < {bound:.0f} (3 sigma)")


class TestCriterion4SinrPipeline:
    def test_sinr_pipeline_100_drops(self):
        cfg = dataclasses.replace(MMTC_A, drops=100)
        layout = build_layout(cfg)
        cal_cfg, achieved_iot, warnings = calibrate_ul_power(cfg, layout)
        ok_iot = achieved_iot <= cfg.link.ul_iot_target_db and not warnings

        worst_rel = 0.0
        iot_values = []
        for d in range(100):
            drop = run_drop(cal_cfg, layout, d, sinr_only=True)
            iot_values.append(drop.mean_iot_db)
            for sig, itf, noise, sinr in (
                (drop.dl_signal_dbm, drop.dl_interf_dbm, drop.dl_noise_dbm, drop.dl_sinr_db),
                (drop.ul_signal_dbm, drop.ul_interf_dbm, drop.ul_noise_dbm, drop.ul_sinr_db),
            ):
                lin = 10 ** (sinr / 10)
                expected = 10 ** (sig / 10) / (10 ** (itf / 10) + 10 ** (noise / 10))
                worst_rel = max(worst_rel, float(np.max(np.abs(lin / expected - 1.0))))
        ok_consistency = worst_rel < 1e-9
        run_iot = float(np.mean(iot_values))
        ok_run_iot = run_iot <= cfg.link.ul_iot_target_db

        _report(4, "SINR pipeline", ok_consistency and ok_iot and ok_run_iot,
                f"max linear-consistency error {worst_rel:.2e} over 100 drops x 570 UEs x 2 "
                f"directions; calibrated IoT {achieved_iot:.2f} dB, run mean {run_iot:.2f} dB")

    def test_interference_free_equals_snr(self):
        from tests.test_engine import _single_trxp_layout
        cfg = dataclasses.replace(preset(TestEnvironment.INDOOR_HOTSPOT_EMBB, "A"),
                                  drops=1, ues_per_trxp=50)
        drop = run_drop(cfg, _single_trxp_layout(), 0, sinr_only=True)
        ok_dl = np.allclose(drop.dl_sinr_db, drop.dl_signal_dbm - drop.dl_noise_dbm, atol=1e-12)
        ok_ul = np.allclose(drop.ul_sinr_db, drop.ul_signal_dbm - drop.ul_noise_dbm, atol=1e-12)
        _report(4, "SINR pipeline: interference-free SINR equals SNR", ok_dl and ok_ul)


class TestCriterion5Convergence:
    def test_running_mean_standard_error_shrinks(self):
        cfg = dataclasses.replace(MMTC_A, drops=10_000)
        result = run(cfg, sinr_only=True)
        means = result.per_drop_mean_ul_sinr
        se_100 = means[:100].std(ddof=1) / math.sqrt(100)
        se_10k = means.std(ddof=1) / math.sqrt(10_000)
        ratio = se_100 / se_10k
        ok = abs(ratio - 10.0) <= 3.0
        _report(5, "convergence: standard error shrink 100 -> 10000 drops", ok,
                f"ratio {ratio:.2f} (target 10 +/- 30%)")

    def test_monitor_triggers_after_window_plus_one(self):
        monitor = ConvergenceMonitor(window=50, tol=1e-4, max_drops=10_000)
        verdicts = [converged(monitor, 3.14) for _ in range(51)]
        ok = all(v != CONVERGED for v in verdicts[:50]) and verdicts[50] == CONVERGED
        _report(5, "convergence: monitor fires at exactly K+1 on constant stream", ok,
                f"fired at drop {len(verdicts)} with K=50")


class TestCriterion6ReliabilityArithmetic:
    def test_harq_products(self):
        model = BlerModel(sinr_50_db=0.0, slope_db_per_decade=1.0, bler_floor=0.0)
        sinr = math.log10(0.5 / 0.01)  # per-attempt BLER exactly 0.01
        two = harq_outcome(model, HarqConfig(2, 0.5e-3, 0.0), sinr, 1e-3)
        ok_two = two.success_probability == pytest.approx(0.9999, abs=1e-13)

        zero = harq_outcome(ZERO_BLER, HarqConfig(4, 0.25e-3), -20.0, 1e-3)
        ok_zero = zero.success_probability == 1.0

        # boundary-inclusive comparison against the reliability requirement
        requirement = 0.99999
        at_requirement = 0.99999
        ok_boundary = (at_requirement >= requirement) and not (0.9999 >= requirement)
        _report(6, "reliability/HARQ arithmetic", ok_two and ok_zero and ok_boundary,
                f"two-attempt success {two.success_probability!r}, zero-BLER "
                f"{zero.success_probability!r}, boundary inclusive: {ok_boundary}")


class TestCriterion7ComplianceFixtures:
    def test_digitized_table_verdicts(self):
        reqs = builtin_requirements()

        se = check_compliance(load_fixture("spectral_efficiency.csv"), reqs)
        xii = [r for r in se.rows if r.source_table == "XII" and r.evaluator == "Univ of Toronto"]
        ok_xii = (any(r.measured == 9.812 and r.passed for r in xii)
                  and any(r.measured == 0.359 and r.passed for r in xii)
                  and all(r.passed for r in xii))

        cd = check_compliance(load_fixture("connection_density.csv"), reqs)
        x_rows = [r for r in cd.rows if r.source_table == "X" and r.evaluator == "Univ of Toronto"]
        ok_x = any(r.measured == 2_314_259.0 and r.passed for r in x_rows)

        mob = check_compliance(load_fixture("mobility.csv"), reqs)
        clean_mob = [r for r in mob.rows if r.evaluator == "Univ of Toronto"
                     and "suspect" not in r.footnotes and r.passed is not None]
        ok_vi = clean_mob and all(r.passed for r in clean_mob)

        # editing any fixture value below its threshold must flip the verdict
        table = load_fixture("spectral_efficiency.csv")
        victim = next(r for r in table.rows if r.value == 9.812)
        edited = dataclasses.replace(victim, value=victim.requirement - 0.001)
        flipped = check_compliance(type(table)("edited", [edited]), reqs).rows[0]
        ok_flip = flipped.passed is False

        _report(7, "compliance checker on digitized tables",
                bool(ok_xii and ok_x and ok_vi and ok_flip),
                f"SE rows pass: {ok_xii}, density 2,314,259 passes: {ok_x}, "
                f"mobility thresholds pass: {bool(ok_vi)}, edited value flips: {ok_flip}")


class TestCriterion8Reproducibility:
    def test_byte_identical_bundles_across_worker_counts(self, tmp_path):
        cfg = dataclasses.replace(MMTC_A, drops=100)
        reqs = builtin_requirements()

        paths = {}
        for label, workers in (("one", 1), ("three", 3)):
            result = run(cfg, workers=workers)
            report = check_compliance(result, reqs)
            out = tmp_path / label
            paths[label] = sorted(emit(result, report, out))

        identical = True
        for fa, fb in zip(paths["one"], paths["three"]):
            with open(fa, "rb") as ha, open(fb, "rb") as hb:
                if ha.read() != hb.read():
                    identical = False
                    break
        _report(8, "reproducibility across worker counts", identical,
                f"{len(paths['one'])} files byte-compared at 100 drops")


class TestCriterion9SoftDensityTarget:
    def test_nonfullbuffer_density_reported(self):
        # non-gating statistical target: report the searched density and the
        # abstraction parameters; the bracket check is informational
        search, cal = density_search(MMTC_A, steps=8, n_drops=2)
        in_bracket = 1e6 <= search.density_per_km2 <= 1e7
        lk = cal.link
        detail = (f"density {search.density_per_km2:,.0f}/km^2, p99 delay "
                  f"{search.delay_p99_s:.2f} s, within 1e6..1e7: {in_bracket}; "
                  f"link abstraction alpha={lk.alpha}, se_max_ul={lk.se_max_ul}, "
                  f"sinr_min={lk.sinr_min_db} dB, P0={lk.ul_p0_dbm:.1f} dBm, "
                  f"overhead={cal.traffic.overhead_s} s, w_user={cal.traffic.w_user_hz:g} Hz")
        print(f"ACCEPTANCE 9 (soft density target, non-gating): "
              f"{'IN RANGE' if in_bracket else 'OUT OF RANGE'} -- {detail}", flush=True)
        # gate only on the search having produced a meaningful QoS answer
        assert search.density_per_km2 > 0
        assert search.passed == (search.density_per_km2 >= 1e6)
