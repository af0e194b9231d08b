"""Test-environment presets, requirement tables, and config-file handling.

Configs are immutable after validation and safe to share across drop
workers. The config file format is a sectioned key-value text
(``[scenario]``, ``[antenna.bs]``, ``[antenna.ue]``, ``[traffic]``,
``[run]``, ``[link]``) whose keys match the EvaluationConfig field names,
so presets can be diffed and overridden file-side.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
from dataclasses import dataclass, replace
from enum import Enum

from .antenna import ArrayConfig, ElementPattern
from .errors import ConfigInvalid, ConfigSyntax, UnknownPreset, UnknownRequirement
from .link import LinkParams
from .traffic import TrafficKind, TrafficModelSpec

DOWNLINK = "downlink"
UPLINK = "uplink"


class TestEnvironment(Enum):
    __test__ = False  # not a pytest class, despite the domain name

    INDOOR_HOTSPOT_EMBB = "IndoorHotspot_eMBB"
    DENSE_URBAN_EMBB = "DenseUrban_eMBB"
    RURAL_EMBB = "Rural_eMBB"
    URBAN_MACRO_MMTC = "UrbanMacro_mMTC"
    URBAN_MACRO_URLLC = "UrbanMacro_URLLC"

    @classmethod
    def parse(cls, text: str) -> "TestEnvironment":
        for env in cls:
            if text == env.value or text == env.name or text.lower() == env.value.lower():
                return env
        raise UnknownPreset(f"unknown test environment '{text}'")


EMBB_ENVIRONMENTS = (
    TestEnvironment.INDOOR_HOTSPOT_EMBB,
    TestEnvironment.DENSE_URBAN_EMBB,
    TestEnvironment.RURAL_EMBB,
)


def total_tx_power_dbm(bandwidth_hz: float) -> float:
    """Total transmit power per TRxP: 49 dBm at 20 MHz, dB-linear in bandwidth."""
    return 49.0 + 10.0 * math.log10(bandwidth_hz / 20e6)


@dataclass(frozen=True)
class EvaluationConfig:
    environment: TestEnvironment
    config_variant: str  # "A" | "B"
    carrier_frequency: float  # Hz
    isd: float  # meters
    bs_height: float  # meters
    ue_height: float  # meters
    bs_tx_power: float  # dBm total per TRxP
    ue_tx_power: float  # dBm
    bs_noise_figure: float  # dB
    ue_noise_figure: float  # dB
    bs_element_gain: float  # dBi
    ue_element_gain: float  # dBi
    thermal_noise_density: float  # dBm/Hz
    bandwidth: float  # Hz
    indoor_fraction: float
    ue_speed_indoor: float  # km/h
    ue_speed_outdoor: float  # km/h
    ues_per_trxp: int
    high_loss_fraction: float
    traffic: TrafficModelSpec = TrafficModelSpec()
    drops: int = 10_000
    master_seed: int = 20200101
    duration_t: float = 0.1  # seconds simulated per drop
    antenna_bs: ArrayConfig = ArrayConfig()
    antenna_ue: ArrayConfig = ArrayConfig()
    link: LinkParams = LinkParams()
    # element pattern constants (config-overridable; UE defaults isotropic)
    bs_h_3db: float = 65.0
    bs_v_3db: float = 65.0
    bs_front_back: float = 30.0
    bs_sidelobe: float = 30.0
    ue_isotropic: bool = True

    def bs_pattern(self) -> ElementPattern:
        return ElementPattern(
            max_gain_dbi=self.bs_element_gain,
            h_3db_deg=self.bs_h_3db,
            v_3db_deg=self.bs_v_3db,
            front_back_db=self.bs_front_back,
            sidelobe_db=self.bs_sidelobe,
        )

    def ue_pattern(self) -> ElementPattern:
        return ElementPattern(max_gain_dbi=self.ue_element_gain, isotropic=self.ue_isotropic)


# documented validation ranges; a None bound is unconstrained
_RANGES = {
    "carrier_frequency": (1e6, 120e9),
    "isd": (1.0, 1e5),
    "bs_height": (0.5, 200.0),
    "ue_height": (0.5, 30.0),
    "bs_tx_power": (-30.0, 80.0),
    "ue_tx_power": (-30.0, 33.0),
    "bs_noise_figure": (0.0, 20.0),
    "ue_noise_figure": (0.0, 20.0),
    "bs_element_gain": (-10.0, 30.0),
    "ue_element_gain": (-10.0, 30.0),
    "thermal_noise_density": (-200.0, -100.0),
    "bandwidth": (1e3, 2e9),
    "indoor_fraction": (0.0, 1.0),
    "ue_speed_indoor": (0.0, 1000.0),
    "ue_speed_outdoor": (0.0, 1000.0),
    "ues_per_trxp": (1, 10_000),
    "high_loss_fraction": (0.0, 1.0),
    "drops": (1, 10_000_000),
    "master_seed": (0, 2**64 - 1),
    "duration_t": (1e-4, 1e4),
}


def validate(config: EvaluationConfig) -> EvaluationConfig:
    """Range-check every field; raises ConfigInvalid naming the first offender."""
    if config.config_variant not in ("A", "B"):
        raise ConfigInvalid("config_variant", "must be 'A' or 'B'")
    for name, (lo, hi) in _RANGES.items():
        value = getattr(config, name)
        if not (lo <= value <= hi):
            raise ConfigInvalid(name, f"{value} outside [{lo}, {hi}]")
    config.traffic.validate()
    # dataclass __post_init__ already vetted antenna and link parameter sanity
    return config


def _mmtc_preset(variant: str) -> EvaluationConfig:
    bandwidth = 10e6 if variant == "A" else 50e6
    return EvaluationConfig(
        environment=TestEnvironment.URBAN_MACRO_MMTC,
        config_variant=variant,
        carrier_frequency=700e6,
        isd=500.0 if variant == "A" else 1732.0,
        bs_height=25.0,
        ue_height=1.5,
        bs_tx_power=total_tx_power_dbm(bandwidth),
        ue_tx_power=23.0,
        bs_noise_figure=5.0,
        ue_noise_figure=7.0,
        bs_element_gain=8.0,
        ue_element_gain=0.0,
        thermal_noise_density=-174.0,
        bandwidth=bandwidth,
        indoor_fraction=0.8,
        ue_speed_indoor=3.0,
        ue_speed_outdoor=3.0,
        ues_per_trxp=10,
        high_loss_fraction=0.2,
        traffic=TrafficModelSpec(kind=TrafficKind.POISSON_MESSAGING, pdu_size_bytes=32,
                                 rate_per_s=1.0 / 7200.0),
        antenna_bs=ArrayConfig(m=1, n=2, mp=1, np=2, downtilt_deg=10.0),
        antenna_ue=ArrayConfig(),
    )


def _urllc_preset(variant: str) -> EvaluationConfig:
    bandwidth = 100e6 if variant == "A" else 40e6
    return EvaluationConfig(
        environment=TestEnvironment.URBAN_MACRO_URLLC,
        config_variant=variant,
        carrier_frequency=4e9 if variant == "A" else 700e6,
        isd=500.0,
        bs_height=25.0,
        ue_height=1.5,
        bs_tx_power=total_tx_power_dbm(bandwidth),
        ue_tx_power=23.0,
        bs_noise_figure=5.0,
        ue_noise_figure=7.0,
        bs_element_gain=8.0,
        ue_element_gain=0.0,
        thermal_noise_density=-174.0,
        bandwidth=bandwidth,
        indoor_fraction=0.2,  # 80% outdoor
        ue_speed_indoor=3.0,
        ue_speed_outdoor=30.0,
        ues_per_trxp=10,
        high_loss_fraction=0.0,  # 100% low loss
        traffic=TrafficModelSpec(kind=TrafficKind.FULL_BUFFER),
        antenna_bs=ArrayConfig(m=16, n=16, mp=4, np=4, downtilt_deg=10.0) if variant == "A"
        else ArrayConfig(m=8, n=8, mp=2, np=4, downtilt_deg=10.0),
        antenna_ue=ArrayConfig(m=1, n=2, mp=1, np=2),
    )


def _indoor_preset(variant: str) -> EvaluationConfig:
    return EvaluationConfig(
        environment=TestEnvironment.INDOOR_HOTSPOT_EMBB,
        config_variant=variant,
        carrier_frequency=4e9,
        isd=20.0,
        bs_height=3.0,
        ue_height=1.5,
        bs_tx_power=24.0,  # indoor access points, not the macro power rule
        ue_tx_power=23.0,
        bs_noise_figure=5.0,
        ue_noise_figure=7.0,
        bs_element_gain=5.0,
        ue_element_gain=0.0,
        thermal_noise_density=-174.0,
        bandwidth=20e6,
        indoor_fraction=1.0,
        ue_speed_indoor=3.0,
        ue_speed_outdoor=3.0,
        ues_per_trxp=10,
        high_loss_fraction=0.0,
        traffic=TrafficModelSpec(kind=TrafficKind.FULL_BUFFER),
        antenna_bs=ArrayConfig(m=4, n=4, p=2, mp=4, np=4),
        antenna_ue=ArrayConfig(m=1, n=2, mp=1, np=2),
    )


def _dense_urban_preset(variant: str) -> EvaluationConfig:
    return EvaluationConfig(
        environment=TestEnvironment.DENSE_URBAN_EMBB,
        config_variant=variant,
        carrier_frequency=4e9,
        isd=200.0,
        bs_height=25.0,
        ue_height=1.5,
        bs_tx_power=total_tx_power_dbm(20e6),
        ue_tx_power=23.0,
        bs_noise_figure=5.0,
        ue_noise_figure=7.0,
        bs_element_gain=8.0,
        ue_element_gain=0.0,
        thermal_noise_density=-174.0,
        bandwidth=20e6,
        indoor_fraction=0.8,
        ue_speed_indoor=3.0,
        ue_speed_outdoor=30.0,
        ues_per_trxp=10,
        high_loss_fraction=0.2,
        traffic=TrafficModelSpec(kind=TrafficKind.FULL_BUFFER),
        antenna_bs=ArrayConfig(m=8, n=8, p=2, mp=2, np=8, downtilt_deg=10.0),
        antenna_ue=ArrayConfig(m=1, n=2, mp=1, np=2),
    )


def _rural_preset(variant: str) -> EvaluationConfig:
    return EvaluationConfig(
        environment=TestEnvironment.RURAL_EMBB,
        config_variant=variant,
        carrier_frequency=700e6,
        isd=1732.0,
        bs_height=35.0,
        ue_height=1.5,
        bs_tx_power=total_tx_power_dbm(20e6),
        ue_tx_power=23.0,
        bs_noise_figure=5.0,
        ue_noise_figure=7.0,
        bs_element_gain=8.0,
        ue_element_gain=0.0,
        thermal_noise_density=-174.0,
        bandwidth=20e6,
        indoor_fraction=0.5,
        ue_speed_indoor=3.0,
        ue_speed_outdoor=120.0,
        ues_per_trxp=10,
        high_loss_fraction=0.2,
        traffic=TrafficModelSpec(kind=TrafficKind.FULL_BUFFER),
        antenna_bs=ArrayConfig(m=8, n=4, p=2, mp=1, np=4, downtilt_deg=6.0),
        antenna_ue=ArrayConfig(m=1, n=2, mp=1, np=2),
    )


_PRESET_BUILDERS = {
    TestEnvironment.URBAN_MACRO_MMTC: _mmtc_preset,
    TestEnvironment.URBAN_MACRO_URLLC: _urllc_preset,
    TestEnvironment.INDOOR_HOTSPOT_EMBB: _indoor_preset,
    TestEnvironment.DENSE_URBAN_EMBB: _dense_urban_preset,
    TestEnvironment.RURAL_EMBB: _rural_preset,
}


def preset(environment: TestEnvironment, variant: str) -> EvaluationConfig:
    """Fully populated config for the given environment and variant A/B.

    Variant semantics are environment-specific: mMTC A/B select ISD
    500/1732 m, URLLC A/B select 4 GHz/700 MHz, and for the eMBB
    environments A/B select the channel-model variant only.
    """
    if variant not in ("A", "B"):
        raise UnknownPreset(f"variant must be 'A' or 'B', got '{variant}'")
    if environment not in _PRESET_BUILDERS:
        raise UnknownPreset(f"no preset for environment {environment}")
    return validate(_PRESET_BUILDERS[environment](variant))


def list_presets():
    """All (environment, variant) pairs with their parameter provenance."""
    out = []
    for env in TestEnvironment:
        for variant in ("A", "B"):
            source = {
                TestEnvironment.URBAN_MACRO_MMTC: "connection-density parameter table",
                TestEnvironment.URBAN_MACRO_URLLC: "reliability parameter table",
            }.get(env, "standard eMBB evaluation configuration")
            out.append((env, variant, source))
    return out


# ---------------------------------------------------------------------------
# config file round-trip


_SCENARIO_FIELDS = [
    "environment", "config_variant", "carrier_frequency", "isd", "bs_height",
    "ue_height", "bs_tx_power", "ue_tx_power", "bs_noise_figure",
    "ue_noise_figure", "bs_element_gain", "ue_element_gain",
    "thermal_noise_density", "bandwidth", "indoor_fraction",
    "ue_speed_indoor", "ue_speed_outdoor", "ues_per_trxp",
    "high_loss_fraction",
]
_ANTENNA_FIELDS = ["m", "n", "p", "mg", "ng", "mp", "np",
                   "element_spacing_h", "element_spacing_v", "bearing_deg", "downtilt_deg"]
_BS_PATTERN_FIELDS = {"h_3db": "bs_h_3db", "v_3db": "bs_v_3db",
                      "front_back": "bs_front_back", "sidelobe": "bs_sidelobe"}
_TRAFFIC_FIELDS = ["kind", "pdu_size_bytes", "rate_per_s", "w_user_hz",
                   "eval_bandwidth_hz", "overhead_s"]
_RUN_FIELDS = ["drops", "master_seed", "duration_t"]
_LINK_FIELDS = [f.name for f in dataclasses.fields(LinkParams)]

_INT_FIELDS = {"ues_per_trxp", "drops", "master_seed", "pdu_size_bytes",
               "harq_max_transmissions", "mu_layers_dl", "mu_layers_ul",
               "m", "n", "p", "mg", "ng", "mp", "np"}
_BOOL_FIELDS = {"ue_isotropic", "isotropic"}


def _fmt(value) -> str:
    if isinstance(value, TestEnvironment):
        return value.value
    if isinstance(value, TrafficKind):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config: EvaluationConfig) -> str:
    """Serialize a config to the sectioned key-value format (deterministic)."""
    buf = io.StringIO()
    buf.write("[scenario]\n")
    for name in _SCENARIO_FIELDS:
        buf.write(f"{name} = {_fmt(getattr(config, name))}\n")
    for section, array in (("antenna.bs", config.antenna_bs), ("antenna.ue", config.antenna_ue)):
        buf.write(f"\n[{section}]\n")
        for name in _ANTENNA_FIELDS:
            buf.write(f"{name} = {_fmt(getattr(array, name))}\n")
        if section == "antenna.bs":
            for key, attr in _BS_PATTERN_FIELDS.items():
                buf.write(f"{key} = {_fmt(getattr(config, attr))}\n")
        else:
            buf.write(f"isotropic = {_fmt(config.ue_isotropic)}\n")
    buf.write("\n[traffic]\n")
    for name in _TRAFFIC_FIELDS:
        buf.write(f"{name} = {_fmt(getattr(config.traffic, name))}\n")
    buf.write("\n[run]\n")
    for name in _RUN_FIELDS:
        buf.write(f"{name} = {_fmt(getattr(config, name))}\n")
    buf.write("\n[link]\n")
    for name in _LINK_FIELDS:
        buf.write(f"{name} = {_fmt(getattr(config.link, name))}\n")
    return buf.getvalue()


def save_config(config: EvaluationConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(config))


def config_hash(config: EvaluationConfig) -> str:
    return hashlib.sha256(config_to_text(config).encode("utf-8")).hexdigest()


def _convert(key: str, raw: str):
    if key == "environment":
        return TestEnvironment.parse(raw)
    if key == "kind":
        for kind in TrafficKind:
            if raw == kind.value or raw == kind.name:
                return kind
        raise ConfigInvalid("traffic.kind", f"unknown traffic kind '{raw}'")
    if key in _BOOL_FIELDS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigInvalid(key, f"expected boolean, got '{raw}'")
    if key in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigInvalid(key, f"expected integer, got '{raw}'") from exc
    if key == "config_variant":
        return raw
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigInvalid(key, f"expected number, got '{raw}'") from exc


def load_config(path=None, base: EvaluationConfig | None = None, text: str | None = None) -> EvaluationConfig:
    """Load a config file, merging its overrides onto a preset.

    The base preset is either passed explicitly or identified by the
    ``environment`` / ``config_variant`` keys in the file's [scenario]
    section. Unknown sections or keys are rejected.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if text is None:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        parser.read_string(text)
    except OSError as exc:
        raise ConfigSyntax(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigSyntax(f"config parse error: {exc}") from exc

    known_sections = {"scenario", "antenna.bs", "antenna.ue", "traffic", "run", "link"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigSyntax(f"unknown section [{section}]")

    scen = dict(parser.items("scenario")) if parser.has_section("scenario") else {}
    if base is None:
        if "environment" not in scen:
            raise ConfigSyntax("config file must name an environment (or pass a base preset)")
        env = TestEnvironment.parse(scen["environment"])
        variant = scen.get("config_variant", "A")
        base = preset(env, variant)

    updates = {}
    for key, raw in scen.items():
        if key not in _SCENARIO_FIELDS:
            raise ConfigInvalid(key, "unknown key in [scenario]")
        updates[key] = _convert(key, raw)

    for section, attr in (("antenna.bs", "antenna_bs"), ("antenna.ue", "antenna_ue")):
        if not parser.has_section(section):
            continue
        array_updates = {}
        for key, raw in parser.items(section):
            if key in _ANTENNA_FIELDS:
                array_updates[key] = _convert(key, raw)
            elif section == "antenna.bs" and key in _BS_PATTERN_FIELDS:
                updates[_BS_PATTERN_FIELDS[key]] = _convert(key, raw)
            elif section == "antenna.ue" and key == "isotropic":
                updates["ue_isotropic"] = _convert("isotropic", raw)
            else:
                raise ConfigInvalid(key, f"unknown key in [{section}]")
        if array_updates:
            updates[attr] = replace(getattr(base, attr), **array_updates)

    if parser.has_section("traffic"):
        traffic_updates = {}
        for key, raw in parser.items("traffic"):
            if key not in _TRAFFIC_FIELDS:
                raise ConfigInvalid(key, "unknown key in [traffic]")
            traffic_updates[key] = _convert(key, raw)
        if traffic_updates:
            updates["traffic"] = replace(base.traffic, **traffic_updates)

    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_FIELDS:
                raise ConfigInvalid(key, "unknown key in [run]")
            updates[key] = _convert(key, raw)

    if parser.has_section("link"):
        link_updates = {}
        for key, raw in parser.items("link"):
            if key not in _LINK_FIELDS:
                raise ConfigInvalid(key, "unknown key in [link]")
            link_updates[key] = _convert(key, raw)
        if link_updates:
            updates["link"] = replace(base.link, **link_updates)

    return validate(replace(base, **updates))


# ---------------------------------------------------------------------------
# requirement tables


@dataclass(frozen=True)
class Requirement:
    environment: TestEnvironment
    direction: str | None  # downlink / uplink / None when both apply
    metric: str
    value: float
    unit: str
    source_table: str
    speed_kmh: float | None = None
    note: str = ""


def builtin_requirements() -> "RequirementSet":
    env = TestEnvironment
    rows = [
        # 5th percentile user spectral efficiency
        Requirement(env.INDOOR_HOTSPOT_EMBB, DOWNLINK, "pct5_se", 0.3, "bit/s/Hz", "I"),
        Requirement(env.INDOOR_HOTSPOT_EMBB, UPLINK, "pct5_se", 0.21, "bit/s/Hz", "I"),
        Requirement(env.DENSE_URBAN_EMBB, DOWNLINK, "pct5_se", 0.225, "bit/s/Hz", "I"),
        Requirement(env.DENSE_URBAN_EMBB, UPLINK, "pct5_se", 0.15, "bit/s/Hz", "I"),
        Requirement(env.RURAL_EMBB, DOWNLINK, "pct5_se", 0.12, "bit/s/Hz", "I"),
        Requirement(env.RURAL_EMBB, UPLINK, "pct5_se", 0.045, "bit/s/Hz", "I"),
        # average spectral efficiency
        Requirement(env.INDOOR_HOTSPOT_EMBB, DOWNLINK, "avg_se", 9.0, "bit/s/Hz/TRxP", "II"),
        Requirement(env.INDOOR_HOTSPOT_EMBB, UPLINK, "avg_se", 6.75, "bit/s/Hz/TRxP", "II"),
        Requirement(env.DENSE_URBAN_EMBB, DOWNLINK, "avg_se", 7.8, "bit/s/Hz/TRxP", "II"),
        Requirement(env.DENSE_URBAN_EMBB, UPLINK, "avg_se", 5.4, "bit/s/Hz/TRxP", "II"),
        Requirement(env.RURAL_EMBB, DOWNLINK, "avg_se", 3.3, "bit/s/Hz/TRxP", "II"),
        Requirement(env.RURAL_EMBB, UPLINK, "avg_se", 1.6, "bit/s/Hz/TRxP", "II"),
        # URLLC performance metrics
        Requirement(env.URBAN_MACRO_URLLC, None, "user_plane_latency", 1.0, "ms", "III",
                    note="analytical -- reported, not simulated"),
        Requirement(env.URBAN_MACRO_URLLC, None, "control_plane_latency", 10.0, "ms", "III",
                    note="encouraged value; analytical -- reported, not simulated"),
        Requirement(env.URBAN_MACRO_URLLC, None, "reliability", 0.99999, "probability", "III"),
        Requirement(env.URBAN_MACRO_URLLC, None, "mobility_interruption", 0.0, "ms", "III",
                    note="analytical -- reported, not simulated"),
        # normalized traffic channel link data rate vs mobility
        Requirement(env.INDOOR_HOTSPOT_EMBB, UPLINK, "mobility_rate", 1.5, "bit/s/Hz", "VI", speed_kmh=10.0),
        Requirement(env.DENSE_URBAN_EMBB, UPLINK, "mobility_rate", 1.12, "bit/s/Hz", "VI", speed_kmh=30.0),
        Requirement(env.RURAL_EMBB, UPLINK, "mobility_rate", 0.8, "bit/s/Hz", "VI", speed_kmh=120.0),
        Requirement(env.RURAL_EMBB, UPLINK, "mobility_rate", 0.45, "bit/s/Hz", "VI", speed_kmh=500.0),
        # requirements stated in the prose rather than a numbered table
        Requirement(env.URBAN_MACRO_MMTC, UPLINK, "connection_density", 1_000_000.0, "/km^2", "II.C.2"),
        Requirement(env.DENSE_URBAN_EMBB, DOWNLINK, "ued_rate", 100e6, "bit/s", "II.C.5"),
        Requirement(env.DENSE_URBAN_EMBB, UPLINK, "ued_rate", 50e6, "bit/s", "II.C.5"),
    ]
    return RequirementSet(tuple(rows))


@dataclass(frozen=True)
class RequirementSet:
    rows: tuple

    NUMBERED_TABLES = ("I", "II", "III", "VI")

    def table_rows(self):
        return [r for r in self.rows if r.source_table in self.NUMBERED_TABLES]

    def lookup(self, environment: TestEnvironment, direction: str | None, metric: str,
               speed_kmh: float | None = None) -> Requirement:
        matches = [
            r for r in self.rows
            if r.environment == environment
            and r.metric == metric
            and (r.direction is None or direction is None or r.direction == direction)
            and (speed_kmh is None or r.speed_kmh is None or abs(r.speed_kmh - speed_kmh) < 1e-9)
        ]
        if speed_kmh is not None:
            exact = [r for r in matches if r.speed_kmh is not None]
            if exact:
                matches = exact
        if not matches:
            raise UnknownRequirement(
                f"no requirement row for ({environment.value}, {direction}, {metric}, speed={speed_kmh})"
            )
        if len(matches) > 1 and metric == "mobility_rate" and speed_kmh is None:
            raise UnknownRequirement(
                f"mobility requirement for {environment.value} needs a speed: "
                f"{sorted(r.speed_kmh for r in matches)}"
            )
        return matches[0]


def requirement_for(reqs: RequirementSet, environment: TestEnvironment,
                    direction: str | None, metric: str,
                    speed_kmh: float | None = None) -> float:
    """The table value, verbatim. Raises UnknownRequirement for missing rows."""
    return reqs.lookup(environment, direction, metric, speed_kmh).value
