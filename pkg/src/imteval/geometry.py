"""Network layouts, wrap-around services, UE drops and cell attachment.

Three layout families: the 19-site / 57-sector hexagonal macro grid with
toroidal wrap-around, the 12-point indoor floor (no wrap-around), and the
dense-urban two-layer variant that adds 3 randomly dropped micro points per
macro sector. Sector boresights are 30/150/270 degrees from east.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigInvalid, DomainError
from .scenario import EvaluationConfig, TestEnvironment

SECTOR_BORESIGHTS_DEG = (30.0, 150.0, 270.0)
MIN_UE_DISTANCE_MACRO_M = 35.0
MIN_UE_DISTANCE_MICRO_M = 10.0
MICRO_HEIGHT_M = 10.0
MICRO_TX_OFFSET_DB = -13.0  # micro TRxP power relative to the macro layer
MICRO_MIN_SEPARATION_M = 57.9
MICROS_PER_SECTOR = 3

INDOOR_FLOOR_X_M = 120.0
INDOOR_FLOOR_Y_M = 50.0
INDOOR_BS_XS = (10.0, 30.0, 50.0, 70.0, 90.0, 110.0)
INDOOR_BS_YS = (15.0, 35.0)


class LayoutKind(Enum):
    HEX_MACRO_19 = "HexMacro19"
    INDOOR_12 = "Indoor12"
    DENSE_URBAN_TWO_LAYER = "DenseUrbanTwoLayer"


# 19-site hexagonal cluster in lattice coordinates (center + 2 rings)
_HEX19_IJ = [
    (0, 0),
    (1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1),
    (2, 0), (1, 1), (0, 2), (-1, 2), (-2, 2), (-2, 1),
    (-2, 0), (-1, -1), (0, -2), (1, -2), (2, -2), (2, -1),
]


@dataclass
class NetworkLayout:
    layout_kind: LayoutKind
    isd: float
    site_positions: np.ndarray  # (n_sites, 2) meters
    trxp_site: np.ndarray  # (n_trxp,) site index
    trxp_pos: np.ndarray  # (n_trxp, 2) meters
    trxp_sector: np.ndarray  # (n_trxp,) sector index within site
    trxp_boresight_deg: np.ndarray  # (n_trxp,)
    trxp_height: np.ndarray  # (n_trxp,) meters
    trxp_is_micro: np.ndarray  # (n_trxp,) bool; micro/indoor points are omni
    wrap_translations: np.ndarray  # (k, 2) meters, includes zero
    drop_basis: np.ndarray | None = None  # (2, 2) columns span the wrapped region
    drop_origin: np.ndarray | None = None  # (2,)
    drop_bbox: tuple | None = None  # ((x0, y0), (x1, y1)) for indoor

    @property
    def n_trxps(self) -> int:
        return len(self.trxp_pos)

    @property
    def n_sites(self) -> int:
        return len(self.site_positions)

    @property
    def sector_area_m2(self) -> float:
        """Area served by one TRxP; the denominator of the density formula."""
        if self.layout_kind is LayoutKind.INDOOR_12:
            return INDOOR_FLOOR_X_M * INDOOR_FLOOR_Y_M / 12.0
        return self.isd ** 2 * math.sqrt(3.0) / 6.0

    def macro_site_positions(self) -> np.ndarray:
        if self.layout_kind is LayoutKind.DENSE_URBAN_TWO_LAYER:
            return self.site_positions[:19]
        return self.site_positions


def _hex_basis(isd: float):
    a1 = np.array([isd, 0.0])
    a2 = np.array([isd * 0.5, isd * math.sqrt(3.0) / 2.0])
    return a1, a2


def _wrap_set_19(isd: float) -> np.ndarray:
    """Translation set of the 19-site rhombic lattice.

    All 9 combinations i*T1 + j*T2 with i, j in {-1, 0, 1}: the 6 nearest
    cluster images plus the two diagonal images. The diagonals are needed
    because the drop region is the rhombus spanned by (T1, T2), whose
    corners are closer to a diagonal image than to any of the 6 neighbors.
    """
    a1, a2 = _hex_basis(isd)
    t1 = 3 * a1 + 2 * a2
    t2 = -2 * a1 + 5 * a2
    vs = [i * t1 + j * t2 for i in (-1, 0, 1) for j in (-1, 0, 1)]
    return np.array(vs)


def _hex_sites(isd: float) -> np.ndarray:
    a1, a2 = _hex_basis(isd)
    return np.array([i * a1 + j * a2 for i, j in _HEX19_IJ])


def _macro_trxps(sites: np.ndarray, height: float):
    n_sites = len(sites)
    site_idx = np.repeat(np.arange(n_sites), 3)
    sector = np.tile(np.arange(3), n_sites)
    boresight = np.array([SECTOR_BORESIGHTS_DEG[s] for s in sector])
    pos = np.repeat(sites, 3, axis=0)
    heights = np.full(3 * n_sites, height)
    return site_idx, pos, sector, boresight, heights


def _in_hex_cell(points: np.ndarray, center: np.ndarray, isd: float) -> np.ndarray:
    """True where a point lies in the hexagonal Voronoi cell of `center`."""
    rel = points - center
    ok = np.ones(len(points), dtype=bool)
    for k in range(6):
        ang = math.radians(60.0 * k)
        u = np.array([math.cos(ang), math.sin(ang)])
        ok &= rel @ u <= isd / 2.0 + 1e-9
    return ok


def _drop_micros(sites: np.ndarray, isd: float, rng: np.random.Generator) -> np.ndarray:
    """3 micro points per sector, uniform in the site's hex cell, separated
    by at least MICRO_MIN_SEPARATION_M from the site center and each other.

    Greedy rejection sampling can dead-end at small ISDs, so a site that
    cannot be completed is restarted from scratch.
    """
    r_max = isd / math.sqrt(3.0)
    sep = MICRO_MIN_SEPARATION_M
    out = []
    for site in sites:
        for _restart in range(800):
            placed = _try_micros_for_site(site, isd, r_max, sep, rng)
            if placed is not None:
                out.extend(placed)
                break
        else:
            raise DomainError("micro placement did not converge; separation too strict for ISD")
    return np.array(out)


def _try_micros_for_site(site, isd, r_max, sep, rng, batch: int = 256):
    placed = []
    for boresight in SECTOR_BORESIGHTS_DEG:
        need = MICROS_PER_SECTOR
        for _ in range(40):  # batches per sector before declaring a dead end
            cand = site + rng.uniform(-r_max, r_max, size=(batch, 2))
            ok = _in_hex_cell(cand, site, isd)
            rel = cand - site
            az = np.degrees(np.arctan2(rel[:, 1], rel[:, 0])) % 360.0
            ok &= np.minimum((az - boresight) % 360.0, (boresight - az) % 360.0) <= 60.0
            ok &= np.linalg.norm(rel, axis=1) >= sep
            for p in cand[ok]:
                if placed and np.min(np.linalg.norm(np.array(placed) - p, axis=1)) < sep:
                    continue
                placed.append(p)
                need -= 1
                if need == 0:
                    break
            if need == 0:
                break
        if need > 0:
            return None
    return placed


def build_layout(config: EvaluationConfig, rng: np.random.Generator | None = None) -> NetworkLayout:
    """Construct the layout for the config's environment.

    The dense-urban micro layer is random; its placement stream derives
    from the master seed unless an explicit generator is supplied.
    """
    env = config.environment
    if env is TestEnvironment.INDOOR_HOTSPOT_EMBB:
        sites = np.array([[x, y] for y in INDOOR_BS_YS for x in INDOOR_BS_XS])
        n = len(sites)
        return NetworkLayout(
            layout_kind=LayoutKind.INDOOR_12,
            isd=config.isd,
            site_positions=sites,
            trxp_site=np.arange(n),
            trxp_pos=sites.copy(),
            trxp_sector=np.zeros(n, dtype=int),
            trxp_boresight_deg=np.zeros(n),
            trxp_height=np.full(n, config.bs_height),
            trxp_is_micro=np.ones(n, dtype=bool),  # ceiling points, omni
            wrap_translations=np.zeros((1, 2)),
            drop_bbox=((0.0, 0.0), (INDOOR_FLOOR_X_M, INDOOR_FLOOR_Y_M)),
        )

    isd = config.isd
    sites = _hex_sites(isd)
    site_idx, pos, sector, boresight, heights = _macro_trxps(sites, config.bs_height)
    is_micro = np.zeros(len(pos), dtype=bool)
    wrap = _wrap_set_19(isd)
    a1, a2 = _hex_basis(isd)
    t1 = 3 * a1 + 2 * a2
    t2 = -2 * a1 + 5 * a2
    basis = np.column_stack([t1, t2])
    origin = -(t1 + t2) / 2.0
    kind = LayoutKind.HEX_MACRO_19

    if env is TestEnvironment.DENSE_URBAN_EMBB:
        kind = LayoutKind.DENSE_URBAN_TWO_LAYER
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(0xA11CE,)))
        micros = _drop_micros(sites, isd, rng)
        n_micro = len(micros)
        sites = np.vstack([sites, micros])
        site_idx = np.concatenate([site_idx, np.arange(19, 19 + n_micro)])
        pos = np.vstack([pos, micros])
        sector = np.concatenate([sector, np.zeros(n_micro, dtype=int)])
        boresight = np.concatenate([boresight, np.zeros(n_micro)])
        heights = np.concatenate([heights, np.full(n_micro, MICRO_HEIGHT_M)])
        is_micro = np.concatenate([is_micro, np.ones(n_micro, dtype=bool)])

    return NetworkLayout(
        layout_kind=kind,
        isd=isd,
        site_positions=sites,
        trxp_site=site_idx,
        trxp_pos=pos,
        trxp_sector=sector,
        trxp_boresight_deg=boresight,
        trxp_height=heights,
        trxp_is_micro=is_micro,
        wrap_translations=wrap,
        drop_basis=basis,
        drop_origin=origin,
    )


def wrap_distance(layout: NetworkLayout, a, b):
    """Minimum distance between a and b over the wrap translation set.

    Returns (distance, translation) where ``b + translation`` realizes the
    minimum. Symmetric in (a, b) because the set is closed under negation.
    """
    a = np.asarray(a, dtype=float)[:2]
    b = np.asarray(b, dtype=float)[:2]
    shifted = b[None, :] + layout.wrap_translations
    d = np.linalg.norm(a[None, :] - shifted, axis=1)
    k = int(np.argmin(d))
    return float(d[k]), layout.wrap_translations[k].copy()


def wrap_displacements(layout: NetworkLayout, from_pos: np.ndarray, to_pos: np.ndarray):
    """Vectorized wrapped displacement from each `from_pos` to each `to_pos`.

    Returns (delta, dist): delta has shape (n_from, n_to, 2) holding
    to - from under the minimizing translation, dist has shape (n_from, n_to).
    """
    f = np.asarray(from_pos, dtype=float)[:, :2]
    t = np.asarray(to_pos, dtype=float)[:, :2]
    base_x = t[None, :, 0] - f[:, 0, None]
    base_y = t[None, :, 1] - f[:, 1, None]
    best_d2 = None
    best_k = None
    for k, (tx, ty) in enumerate(layout.wrap_translations):
        d2 = (base_x + tx) ** 2 + (base_y + ty) ** 2
        if best_d2 is None:
            best_d2, best_k = d2, np.zeros(d2.shape, dtype=np.intp)
        else:
            closer = d2 < best_d2
            np.copyto(best_d2, d2, where=closer)
            best_k[closer] = k
    shift = layout.wrap_translations[best_k]  # (n_from, n_to, 2)
    delta = np.stack([base_x + shift[..., 0], base_y + shift[..., 1]], axis=-1)
    return delta, np.sqrt(best_d2)


@dataclass
class UePlacement:
    ue_id: int
    position: np.ndarray  # (3,) meters
    indoor: bool
    high_loss: bool
    speed_kmh: float
    direction_rad: float
    serving_trxp: int | None = None


def drop_ues(layout: NetworkLayout, config: EvaluationConfig, rng: np.random.Generator):
    """Drop ues_per_trxp x n_trxps UEs uniformly over the wrapped region.

    Indoor/outdoor flags follow the configured fraction; indoor UEs draw a
    high-loss building type with probability high_loss_fraction. Positions
    closer than the per-layer minimum 2D distance to any station are
    redrawn.
    """
    if config.ues_per_trxp < 1:
        raise ConfigInvalid("ues_per_trxp", "must be >= 1")
    n = config.ues_per_trxp * layout.n_trxps
    pos = _sample_positions(layout, n, rng)

    min_macro = 0.0 if layout.layout_kind is LayoutKind.INDOOR_12 else MIN_UE_DISTANCE_MACRO_M
    if min_macro > 0.0 or layout.layout_kind is LayoutKind.DENSE_URBAN_TWO_LAYER:
        macro_sites = layout.macro_site_positions()
        micro_pos = layout.trxp_pos[layout.trxp_is_micro]
        for _ in range(1000):
            _, d_macro = wrap_displacements(layout, pos, macro_sites)
            bad = d_macro.min(axis=1) < min_macro
            if len(micro_pos):
                _, d_micro = wrap_displacements(layout, pos, micro_pos)
                bad |= d_micro.min(axis=1) < MIN_UE_DISTANCE_MICRO_M
            if not bad.any():
                break
            pos[bad] = _sample_positions(layout, int(bad.sum()), rng)
        else:
            raise DomainError("could not place UEs outside the exclusion radius")

    indoor = rng.uniform(size=n) < config.indoor_fraction
    high_loss = indoor & (rng.uniform(size=n) < config.high_loss_fraction)
    direction = rng.uniform(0.0, 2.0 * math.pi, size=n)
    ues = []
    for i in range(n):
        speed = config.ue_speed_indoor if indoor[i] else config.ue_speed_outdoor
        ues.append(
            UePlacement(
                ue_id=i,
                position=np.array([pos[i, 0], pos[i, 1], config.ue_height]),
                indoor=bool(indoor[i]),
                high_loss=bool(high_loss[i]),
                speed_kmh=float(speed),
                direction_rad=float(direction[i]),
            )
        )
    return ues


def _sample_positions(layout: NetworkLayout, n: int, rng: np.random.Generator) -> np.ndarray:
    if layout.drop_bbox is not None:
        (x0, y0), (x1, y1) = layout.drop_bbox
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    uv = rng.uniform(size=(n, 2))
    return layout.drop_origin[None, :] + uv @ layout.drop_basis.T


def attach(ue: UePlacement, layout: NetworkLayout, coupling_loss_fn) -> int:
    """Serving TRxP index: minimum coupling loss, ties to the lowest index."""
    losses = np.array([coupling_loss_fn(ue, k) for k in range(layout.n_trxps)], dtype=float)
    if not np.all(np.isfinite(losses)):
        raise DomainError("coupling_loss_fn returned a non-finite loss")
    return int(np.argmin(losses))


def export_layout_csv(layout: NetworkLayout, path) -> None:
    """CSV of (trxp_id, x, y, z, azimuth_deg, is_micro)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trxp_id,site_id,x_m,y_m,z_m,azimuth_deg,is_micro\n")
        for k in range(layout.n_trxps):
            fh.write(
                f"{k},{layout.trxp_site[k]},{layout.trxp_pos[k, 0]:.3f},{layout.trxp_pos[k, 1]:.3f},"
                f"{layout.trxp_height[k]:.3f},{layout.trxp_boresight_deg[k]:.1f},{int(layout.trxp_is_micro[k])}\n"
            )
