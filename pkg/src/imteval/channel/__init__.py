"""Geometry-based stochastic channel: profiles plus the per-link generator."""

from .model import (
    ChannelRealization,
    ClusterSet,
    LargeScaleParams,
    PropagationCondition,
    apply_pl_sf,
    assign_los,
    channel_coeff,
    free_space_1m_db,
    gen_clusters,
    gen_lsp,
    geometry_angles,
    los_probability,
    pathloss,
    pathloss_curves,
    realize_link,
)
from .profiles import (
    C_PHI,
    C_THETA,
    N_RAYS,
    RAY_OFFSETS,
    ChannelProfile,
    ConditionParams,
    builtin_profiles,
    get_profile,
    load_profiles,
    profile_for,
)

__all__ = [
    "ChannelRealization", "ClusterSet", "LargeScaleParams", "PropagationCondition",
    "apply_pl_sf", "assign_los", "channel_coeff", "free_space_1m_db", "gen_clusters",
    "gen_lsp", "geometry_angles", "los_probability", "pathloss", "pathloss_curves",
    "realize_link", "C_PHI", "C_THETA", "N_RAYS", "RAY_OFFSETS", "ChannelProfile",
    "ConditionParams", "builtin_profiles", "get_profile", "load_profiles", "profile_for",
]
