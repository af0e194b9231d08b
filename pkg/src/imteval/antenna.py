"""Antenna element patterns, planar panel arrays, directivity and TXRU port mapping.

Angles follow one convention everywhere: azimuth in degrees within [-180, 180]
measured from the array boresight (+x axis), zenith in degrees within [0, 180]
measured from the +z axis (90 deg = horizon). Element spacings are in
wavelengths; horizontal columns run along +y, vertical rows along +z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MappingError

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class ElementPattern:
    """Parametric single-element radiation pattern.

    The parametric form attenuates quadratically in azimuth and zenith with
    3 dB beamwidths ``h_3db_deg``/``v_3db_deg``, clips the azimuth cut at the
    front-to-back ratio ``front_back_db`` (A_m), the zenith cut at
    ``sidelobe_db`` (SLA_v), and the combined attenuation again at A_m.
    An isotropic pattern returns ``max_gain_dbi`` at every angle.
    """

    max_gain_dbi: float = 8.0
    h_3db_deg: float = 65.0
    v_3db_deg: float = 65.0
    front_back_db: float = 30.0
    sidelobe_db: float = 30.0
    isotropic: bool = False


def element_gain(pattern: ElementPattern, azimuth_deg, zenith_deg):
    """Element gain in dBi at the given angles (scalar or ndarray).

    Raises DomainError if any azimuth is outside [-180, 180] or any zenith
    outside [0, 180].
    """
    az = np.asarray(azimuth_deg, dtype=float)
    zen = np.asarray(zenith_deg, dtype=float)
    if np.any(az < -180.0) or np.any(az > 180.0):
        raise DomainError(f"azimuth out of [-180, 180]: {azimuth_deg}")
    if np.any(zen < 0.0) or np.any(zen > 180.0):
        raise DomainError(f"zenith out of [0, 180]: {zenith_deg}")
    if pattern.isotropic:
        out = np.full(np.broadcast(az, zen).shape, pattern.max_gain_dbi)
        return out if out.ndim else float(out)
    a_h = -np.minimum(12.0 * (az / pattern.h_3db_deg) ** 2, pattern.front_back_db)
    a_v = -np.minimum(12.0 * ((zen - 90.0) / pattern.v_3db_deg) ** 2, pattern.sidelobe_db)
    att = np.minimum(-(a_h + a_v), pattern.front_back_db)
    out = pattern.max_gain_dbi - att
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ArrayConfig:
    """Panel array geometry: (M, N, P, Mg, Ng; Mp, Np) plus spacings and pointing.

    m x n elements per panel and polarization, p polarizations, mg x ng
    panels, and mp x np ports per panel per polarization. Spacings are in
    wavelengths. ``bearing_deg`` rotates the boresight in azimuth;
    ``downtilt_deg`` is the mechanical/electrical tilt used by the TXRU
    weights.
    """

    m: int = 1
    n: int = 1
    p: int = 1
    mg: int = 1
    ng: int = 1
    mp: int = 1
    np: int = 1
    element_spacing_h: float = 0.5
    element_spacing_v: float = 0.8
    bearing_deg: float = 0.0
    downtilt_deg: float = 0.0

    def __post_init__(self):
        for name in ("m", "n", "p", "mg", "ng", "mp", "np"):
            if getattr(self, name) < 1:
                raise DomainError(f"array count {name} must be >= 1")
        if self.p not in (1, 2):
            raise DomainError("polarization count p must be 1 or 2")
        if self.mp > self.m or self.np > self.n:
            raise DomainError("port grid (mp, np) must not exceed element grid (m, n)")
        if self.element_spacing_h <= 0 or self.element_spacing_v <= 0:
            raise DomainError("element spacings must be positive")

    @property
    def n_elements(self) -> int:
        return self.m * self.n * self.p * self.mg * self.ng

    @property
    def n_ports(self) -> int:
        return self.mp * self.np * self.p * self.mg * self.ng

    def element_positions_wl(self) -> np.ndarray:
        """(n_elements, 3) element positions in wavelengths, boresight +x.

        Ordering: panels row-major (mg, ng), then elements row-major (m, n),
        polarization fastest. Co-polarized pairs are co-located.
        """
        dv, dh = self.element_spacing_v, self.element_spacing_h
        pos = np.zeros((self.n_elements, 3))
        idx = 0
        for g_v in range(self.mg):
            for g_h in range(self.ng):
                for row in range(self.m):
                    for col in range(self.n):
                        y = (g_h * self.n + col) * dh
                        z = (g_v * self.m + row) * dv
                        for _ in range(self.p):
                            pos[idx, 1] = y
                            pos[idx, 2] = z
                            idx += 1
        return pos

    def polarization_slants_deg(self) -> np.ndarray:
        """Per-element polarization slant angle: 0 for p=1, +/-45 for p=2."""
        slants = np.zeros(self.n_elements)
        if self.p == 2:
            slants[0::2] = 45.0
            slants[1::2] = -45.0
        return slants


def array_response(config: ArrayConfig, carrier_hz: float, azimuth_deg, zenith_deg) -> np.ndarray:
    """Unit-modulus steering vector(s) for the planar array.

    Scalar angles give shape (n_elements,); array angles of shape (k,) give
    (n_elements, k). The carrier only fixes the wavelength used to convert
    spacings to meters, so responses depend on spacing-in-wavelengths alone.
    """
    az = np.atleast_1d(np.asarray(azimuth_deg, dtype=float))
    zen = np.atleast_1d(np.asarray(zenith_deg, dtype=float))
    az, zen = np.broadcast_arrays(az, zen)
    az_r = np.radians(az)
    zen_r = np.radians(zen)
    # unit direction vectors, one per angle
    direction = np.stack(
        [np.sin(zen_r) * np.cos(az_r), np.sin(zen_r) * np.sin(az_r), np.cos(zen_r)]
    )
    pos = config.element_positions_wl()  # already in wavelengths
    phase = 2.0 * np.pi * (pos @ direction)
    resp = np.exp(1j * phase)
    if np.isscalar(azimuth_deg) and np.isscalar(zenith_deg):
        return resp[:, 0]
    return resp


def directivity(config: ArrayConfig, pattern: ElementPattern, grid_resolution_deg: float = 1.0) -> float:
    """Peak-over-average gain of the uniformly fed array, in dBi.

    Integrates the combined element x array power pattern over the sphere on
    a midpoint grid. ``grid_resolution_deg`` must divide 180.
    """
    if abs(180.0 / grid_resolution_deg - round(180.0 / grid_resolution_deg)) > 1e-9:
        raise DomainError("grid_resolution_deg must divide 180")
    step = grid_resolution_deg
    zen = np.arange(step / 2.0, 180.0, step)
    az = np.arange(-180.0 + step / 2.0, 180.0, step)
    zz, aa = np.meshgrid(zen, az, indexing="ij")
    elem_db = element_gain(pattern, aa, zz)
    elem_lin = 10.0 ** (np.asarray(elem_db) / 10.0)

    n = config.n_elements
    resp = array_response(config, 1e9, aa.ravel(), zz.ravel())  # (n, k)
    af = np.abs(resp.sum(axis=0)) ** 2 / n  # uniform weights 1/sqrt(n)
    u = elem_lin * af.reshape(zz.shape)

    d_omega = np.sin(np.radians(zz)) * np.radians(step) ** 2
    total = float(np.sum(u * d_omega))
    return 10.0 * np.log10(4.0 * np.pi * float(u.max()) / total)


def total_radiated_power(config: ArrayConfig, pattern: ElementPattern, grid_resolution_deg: float) -> float:
    """Sphere integral of the combined power pattern (linear, steradian-weighted)."""
    if abs(180.0 / grid_resolution_deg - round(180.0 / grid_resolution_deg)) > 1e-9:
        raise DomainError("grid_resolution_deg must divide 180")
    step = grid_resolution_deg
    zen = np.arange(step / 2.0, 180.0, step)
    az = np.arange(-180.0 + step / 2.0, 180.0, step)
    zz, aa = np.meshgrid(zen, az, indexing="ij")
    elem_lin = 10.0 ** (np.asarray(element_gain(pattern, aa, zz)) / 10.0)
    resp = array_response(config, 1e9, aa.ravel(), zz.ravel())
    af = np.abs(resp.sum(axis=0)) ** 2 / config.n_elements
    u = elem_lin * af.reshape(zz.shape)
    d_omega = np.sin(np.radians(zz)) * np.radians(step) ** 2
    return float(np.sum(u * d_omega))


def txru_weights(config: ArrayConfig) -> np.ndarray:
    """Port-to-element weight matrix of shape (n_elements, n_ports).

    Each port drives a contiguous block of m/mp rows x n/np columns of one
    polarization of one panel, with equal amplitudes and a progressive
    vertical phase implementing the configured downtilt. Columns are unit
    power: sum |w|^2 = 1 per port.
    """
    if config.m % config.mp != 0 or config.n % config.np != 0:
        raise MappingError(
            f"({config.mp}, {config.np}) ports do not divide ({config.m}, {config.n}) elements"
        )
    rows_per_port = config.m // config.mp
    cols_per_port = config.n // config.np
    k = rows_per_port * cols_per_port
    w = np.zeros((config.n_elements, config.n_ports), dtype=complex)

    tilt = np.radians(config.downtilt_deg)
    dv = config.element_spacing_v
    # progressive phase down the rows of the subarray
    sub_phase = np.exp(-1j * 2.0 * np.pi * dv * np.arange(rows_per_port) * np.sin(tilt))

    elems_per_panel = config.m * config.n * config.p
    ports_per_panel = config.mp * config.np * config.p
    for panel in range(config.mg * config.ng):
        for pm in range(config.mp):
            for pn in range(config.np):
                for pol in range(config.p):
                    port = panel * ports_per_panel + (pm * config.np + pn) * config.p + pol
                    for r in range(rows_per_port):
                        row = pm * rows_per_port + r
                        for c in range(cols_per_port):
                            col = pn * cols_per_port + c
                            elem = panel * elems_per_panel + (row * config.n + col) * config.p + pol
                            w[elem, port] = sub_phase[r] / np.sqrt(k)
    return w


def map_txru(config: ArrayConfig, signal_per_port: np.ndarray) -> np.ndarray:
    """Apply the TXRU virtualization: per-port signals -> per-element weights."""
    signal = np.asarray(signal_per_port, dtype=complex)
    if signal.shape[0] != config.n_ports:
        raise MappingError(f"expected {config.n_ports} port signals, got {signal.shape[0]}")
    return txru_weights(config) @ signal
