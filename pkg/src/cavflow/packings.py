"""
Reference circle packings of the unit disk used as cavitation sites.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import CavitationConfig, proportional_areas

__all__ = ["MELISSEN_11", "MELISSEN_11_RADIUS", "melissen_config"]

# Optimal packing of 11 equal disks in the unit disk (Melissen 1994), found
# by a constrained optimization of the common radius; the radius agrees with
# sin(pi/9) / (1 + sin(pi/9)) to 1e-15.
MELISSEN_11 = np.array([
    [-0.665877540989408, -0.334437760964490],
    [-0.177585046034721, -0.188238871364482],
    [0.213728478355717, -0.713835872657565],
    [-0.725064239031947, 0.171823644560532],
    [0.622570367474731, -0.409447985824104],
    [-0.236771744077258, 0.318022534160539],
    [0.511335760676228, 0.542012228097027],
    [0.043307173514669, 0.743885746788585],
    [-0.295119341113382, -0.684212021272530],
    [0.231256843084294, 0.116149015468981],
    [0.740104662553402, 0.086525164083939],
])

MELISSEN_11_RADIUS = math.sin(math.pi / 9) / (1 + math.sin(math.pi / 9))


def melissen_config(R0: float = 1.0, lam: float = 1.5, shrink: float = 1e-9,
                    min_area_ratio: float | None = 0.5) -> CavitationConfig:
    """Eleven equal cavities at the optimal packing, scaled to radius ``R0``.

    Seed disks are shrunk by the relative amount ``shrink`` so that they are
    strictly disjoint; areas exhaust the stretch ``lam``.
    """
    sites = MELISSEN_11 * R0
    d = np.full(11, MELISSEN_11_RADIUS * R0 * (1 - shrink))
    areas = proportional_areas(d, R0, lam)
    mins = None if min_area_ratio is None else min_area_ratio * math.pi * d**2
    return CavitationConfig(R0, sites, areas, min_areas=mins, seed_radii=d)
