"""
Cavitation configurations, attainability and the evolution of circular holes.

Points in the plane are handled internally as complex numbers; the public
constructors accept ``(x, y)`` pairs as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "NotAttainableError",
    "CavitationConfig",
    "AffinePath",
    "BlendPath",
    "Evolution",
    "HoleDomain",
    "AttainabilityReport",
    "compute_lambda",
    "sigma",
    "check_attainable",
    "packing_density",
    "proportional_areas",
    "coalescence_bounds",
    "build_evolution",
    "select_excision",
    "domain_at",
    "certification_grid",
    "evolution_clearances",
]


class ConfigError(ValueError):
    """Invalid cavitation configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NotAttainableError(RuntimeError):
    pass


def as_complex_points(points) -> np.ndarray:
    """Convert a sequence of points (complex or ``(x, y)`` pairs) to a complex array."""
    arr = np.asarray(points)
    if np.iscomplexobj(arr):
        return arr.astype(complex).reshape(-1)
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError("points must be complex numbers or (x, y) pairs")
    return arr[:, 0] + 1j * arr[:, 1]


@dataclass(frozen=True)
class CavitationConfig:
    """The load: disk radius, cavitation sites and target cavity areas.

    ``sites`` is stored as a complex array. The optional ``min_areas`` and
    ``seed_radii`` feed the coalescence-load variant.
    """

    R0: float
    sites: np.ndarray
    areas: np.ndarray
    min_areas: np.ndarray | None = None
    seed_radii: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "R0", float(self.R0))
        object.__setattr__(self, "sites", as_complex_points(self.sites))
        object.__setattr__(self, "areas", np.asarray(self.areas, dtype=float).reshape(-1))
        if self.min_areas is not None:
            object.__setattr__(self, "min_areas", np.asarray(self.min_areas, dtype=float).reshape(-1))
        if self.seed_radii is not None:
            object.__setattr__(self, "seed_radii", np.asarray(self.seed_radii, dtype=float).reshape(-1))
        self.validate()

    @property
    def n(self) -> int:
        return len(self.sites)

    def validate(self):
        if not (self.R0 > 0 and math.isfinite(self.R0)):
            raise ConfigError("R0 must be a positive number", "R0")
        n = self.n
        if n < 1:
            raise ConfigError("at least one cavitation site is required", "sites")
        if len(self.areas) != n:
            raise ConfigError(f"expected {n} areas, got {len(self.areas)}", "areas")
        for i, a in enumerate(self.sites):
            if not abs(a) < self.R0:
                raise ConfigError(f"site {i} lies outside the open disk of radius R0", f"sites[{i}]")
        for i, v in enumerate(self.areas):
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"area {i} must be positive", f"areas[{i}]")
        for i in range(n):
            for j in range(i + 1, n):
                if self.sites[i] == self.sites[j]:
                    raise ConfigError(f"sites {i} and {j} coincide", f"sites[{j}]")
        if self.min_areas is not None:
            if len(self.min_areas) != n:
                raise ConfigError(f"expected {n} min_areas", "min_areas")
            for i, u in enumerate(self.min_areas):
                if not u > 0:
                    raise ConfigError(f"min area {i} must be positive", f"min_areas[{i}]")
        if self.seed_radii is not None:
            check_seed_disks(self.sites, self.seed_radii, self.R0)

    def scaled(self, s: float) -> "CavitationConfig":
        """Same configuration with lengths multiplied by ``s`` (areas by ``s**2``)."""
        return CavitationConfig(
            R0=self.R0 * s,
            sites=self.sites * s,
            areas=self.areas * s**2,
            min_areas=None if self.min_areas is None else self.min_areas * s**2,
            seed_radii=None if self.seed_radii is None else self.seed_radii * s,
        )


def check_seed_disks(sites, seed_radii, R0):
    sites = as_complex_points(sites)
    d = np.asarray(seed_radii, dtype=float).reshape(-1)
    if len(d) != len(sites):
        raise ConfigError(f"expected {len(sites)} seed radii, got {len(d)}", "seed_radii")
    for i in range(len(d)):
        if not d[i] > 0:
            raise ConfigError(f"seed radius {i} must be positive", f"seed_radii[{i}]")
        if not abs(sites[i]) + d[i] < R0:
            raise ConfigError(f"seed disk {i} is not contained in the body", f"seed_radii[{i}]")
        for j in range(i + 1, len(d)):
            if not abs(sites[i] - sites[j]) > d[i] + d[j]:
                raise ConfigError(f"seed disks {i} and {j} overlap", f"seed_radii[{j}]")


# -- scalar formulas ---------------------------------------------------------


def compute_lambda(config: CavitationConfig) -> float:
    """Outer stretch forced by incompressibility: sum(v) = (lambda^2 - 1) pi R0^2."""
    return math.sqrt(1.0 + config.areas.sum() / (math.pi * config.R0**2))


def sigma(config: CavitationConfig) -> float:
    R0 = config.R0
    frac = config.areas / config.areas.sum()
    a = config.sites
    terms = (1.0 - np.abs(a) / R0) ** 2 / frac
    best = terms.min()
    n = config.n
    if n >= 2:
        i, j = np.triu_indices(n, 1)
        pair = np.abs(a[i] - a[j]) ** 2 / (R0**2 * (np.sqrt(frac[i]) + np.sqrt(frac[j])) ** 2)
        best = min(best, pair.min())
    return float(best)


def packing_density(config: CavitationConfig) -> float:
    """Density of the largest equal-radius disjoint disks centred at the sites.

    Only meaningful (and equal to :func:`sigma`) when all areas coincide.
    """
    if not np.allclose(config.areas, config.areas[0], rtol=1e-12, atol=0):
        raise ConfigError("packing density requires equal areas", "areas")
    a = config.sites
    rho_sq = ((config.R0 - np.abs(a)) ** 2).min()
    if config.n >= 2:
        i, j = np.triu_indices(config.n, 1)
        rho_sq = min(rho_sq, ((np.abs(a[i] - a[j]) / 2) ** 2).min())
    return float(config.n * math.pi * rho_sq / (math.pi * config.R0**2))


@dataclass(frozen=True)
class AttainabilityReport:
    sigma: float
    lam: float
    attainable: bool
    reason: str


def check_attainable(config: CavitationConfig) -> AttainabilityReport:
    """Sufficient test for attainability through circular cavities.

    A negative answer means "not certified"; the test is not necessary.
    """
    s = sigma(config)
    lam = compute_lambda(config)
    if config.n == 1:
        return AttainabilityReport(s, lam, True, "single cavity: always attainable")
    if s >= 1.0:
        return AttainabilityReport(s, lam, True, "certified: sigma >= 1")
    bound = 1.0 / (1.0 - s)
    if lam**2 < bound:
        return AttainabilityReport(
            s, lam, True, f"certified: lambda^2 = {lam**2:.6g} < 1/(1-sigma) = {bound:.6g}"
        )
    return AttainabilityReport(
        s,
        lam,
        False,
        f"not certified: lambda^2 = {lam**2:.6g} >= 1/(1-sigma) = {bound:.6g} "
        "(sufficient test only)",
    )


def proportional_areas(seed_radii, R0: float, lam: float, sites=None) -> np.ndarray:
    """Areas proportional to the seed disks that exhaust the stretch ``lam``."""
    d = np.asarray(seed_radii, dtype=float).reshape(-1)
    if sites is not None:
        check_seed_disks(sites, d, R0)
    elif np.any(d <= 0):
        raise ConfigError("seed radii must be positive", "seed_radii")
    share = d**2 / (d**2).sum()
    return (lam**2 - 1.0) * math.pi * R0**2 * share


def coalescence_bounds(seed_radii, min_areas, R0: float, sites=None):
    """Return ``(lambda0, lambda_star, sigma_star)`` for the minimum-area problem.

    Any stretch in ``[lambda0, lambda_star)`` produces areas above the
    prescribed minima while staying attainable; ``lambda_star`` is the
    lower bound for the coalescence load.
    """
    d = np.asarray(seed_radii, dtype=float).reshape(-1)
    ups = np.asarray(min_areas, dtype=float).reshape(-1)
    if len(ups) != len(d):
        raise ConfigError("min_areas and seed_radii differ in length", "min_areas")
    if sites is not None:
        check_seed_disks(sites, d, R0)
    sigma_star = float((d**2).sum() / R0**2)
    if not sigma_star < 1.0:
        raise ConfigError("seed disks cover the body", "seed_radii")
    ratio = ups / (math.pi * d**2)
    for i, q in enumerate(ratio):
        if not q * (1.0 - sigma_star) < 1.0:
            raise ConfigError(
                f"min area {i} is too large: needs upsilon_i < pi d_i^2 / (1 - sigma*)",
                f"min_areas[{i}]",
            )
    lam_star = 1.0 / math.sqrt(1.0 - sigma_star)
    lam0 = math.sqrt(1.0 + ratio.max() * sigma_star)
    return lam0, lam_star, sigma_star


# -- evolutions ---------------------------------------------------------------


@dataclass(frozen=True)
class AffinePath:
    """Center path ``z(t) = origin + velocity * t``."""

    origin: complex
    velocity: complex

    def __call__(self, t):
        return self.origin + self.velocity * np.asarray(t, dtype=float)

    def rate(self, t):
        return self.velocity + 0.0 * np.asarray(t, dtype=float)

    def to_dict(self):
        return {"kind": "affine", "origin": [self.origin.real, self.origin.imag],
                "velocity": [self.velocity.real, self.velocity.imag]}


@dataclass(frozen=True)
class BlendPath:
    """Center path ``z(t) = a * (c + (1 - c) * exp(-k (t - 1)))``.

    Slides the site towards ``c * a`` fast enough to clear the outer boundary.
    """

    site: complex
    limit: float
    k: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.site * (self.limit + (1.0 - self.limit) * np.exp(-self.k * (t - 1.0)))

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return -self.site * self.k * (1.0 - self.limit) * np.exp(-self.k * (t - 1.0))

    def to_dict(self):
        return {"kind": "blend", "site": [self.site.real, self.site.imag],
                "limit": self.limit, "k": self.k}


@dataclass(frozen=True)
class HoleDomain:
    """Disk ``B(z0, r0)`` with closed circular holes ``B(z_k, r_k)`` removed."""

    z0: complex
    r0: float
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z0", complex(self.z0))
        object.__setattr__(self, "r0", float(self.r0))
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=complex).reshape(-1))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float).reshape(-1))
        if len(self.centers) != len(self.radii):
            raise ValueError("need one radius per hole")
        if not self.r0 > 0 or np.any(self.radii <= 0):
            raise ValueError("radii must be positive")
        if np.any(np.abs(self.centers - self.z0) + self.radii >= self.r0):
            raise ValueError("holes must lie inside the outer disk")
        n = self.n
        for i in range(n):
            for j in range(i + 1, n):
                if abs(self.centers[i] - self.centers[j]) <= self.radii[i] + self.radii[j]:
                    raise ValueError(f"holes {i} and {j} intersect")

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def area(self) -> float:
        return math.pi * (self.r0**2 - (self.radii**2).sum())

    def circle_centers(self) -> np.ndarray:
        """Centers of all boundary circles, outer circle first."""
        return np.concatenate([[self.z0], self.centers])

    def circle_radii(self) -> np.ndarray:
        return np.concatenate([[self.r0], self.radii])

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Membership in the closed domain, widened by ``tol``."""
        y = np.asarray(points, dtype=complex)
        inside = np.abs(y - self.z0) <= self.r0 + tol
        for c, r in zip(self.centers, self.radii):
            inside &= np.abs(y - c) >= r - tol
        return inside

    def min_gap_ratio(self) -> float:
        """Smallest boundary gap divided by the diameter of an adjacent hole."""
        best = math.inf
        for i in range(self.n):
            outer = self.r0 - abs(self.centers[i] - self.z0) - self.radii[i]
            best = min(best, outer / (2 * self.radii[i]))
            for j in range(i + 1, self.n):
                gap = abs(self.centers[i] - self.centers[j]) - self.radii[i] - self.radii[j]
                best = min(best, gap / (2 * max(self.radii[i], self.radii[j])))
        return best


@dataclass(frozen=True)
class Evolution:
    """Closed-form evolution of cavity centers and radii on ``[1, lam]``.

    Cavity radii follow ``L_i(t)^2 = kappa_i (t^2 - 1)``; excised holes have
    radii ``r_i(t) = sqrt(L_i(t)^2 + R_i^2)`` and the outer circle ``t R0``.
    """

    R0: float
    lam: float
    centers: tuple
    kappa: np.ndarray
    excision_radii: np.ndarray | None = None
    margin: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=float).reshape(-1))
        if self.excision_radii is not None:
            object.__setattr__(
                self, "excision_radii", np.asarray(self.excision_radii, dtype=float).reshape(-1)
            )

    @property
    def n(self) -> int:
        return len(self.centers)

    @property
    def r_max(self) -> float:
        return self.lam * self.R0

    @property
    def sites(self) -> np.ndarray:
        return self.center(1.0)

    def center(self, t) -> np.ndarray:
        """Centers at time(s) ``t``; shape ``(n,)`` or ``(len(t), n)``."""
        return np.stack([np.asarray(p(t), dtype=complex) for p in self.centers], axis=-1)

    def center_rate(self, t) -> np.ndarray:
        return np.stack([np.asarray(p.rate(t), dtype=complex) for p in self.centers], axis=-1)

    def cavity_radius_sq(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.kappa * (t[..., None] ** 2 - 1.0)

    def cavity_radius_sq_rate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return 2.0 * self.kappa * t[..., None]

    def final_areas(self) -> np.ndarray:
        return math.pi * self.cavity_radius_sq(self.lam)

    def _require_excision(self):
        if self.excision_radii is None or self.margin is None:
            raise ValueError("evolution has no excision radii; run select_excision first")

    def hole_radius(self, t) -> np.ndarray:
        self._require_excision()
        return np.sqrt(self.cavity_radius_sq(t) + self.excision_radii**2)

    def hole_radius_rate(self, t) -> np.ndarray:
        return self.cavity_radius_sq_rate(t) / (2.0 * self.hole_radius(t))

    def check_time(self, t, tol=1e-12):
        if not (1.0 - tol <= t <= self.lam + tol * self.lam):
            raise ValueError(f"time {t} outside [1, {self.lam}]")

    def to_dict(self):
        return {
            "R0": self.R0,
            "lambda": self.lam,
            "centers": [p.to_dict() for p in self.centers],
            "kappa": self.kappa.tolist(),
            "excision_radii": None if self.excision_radii is None else self.excision_radii.tolist(),
            "margin": self.margin,
        }


def certification_grid(lam: float, n: int = 1000) -> np.ndarray:
    """Uniform t-grid of ``n`` points plus both endpoints."""
    return np.unique(np.concatenate([[1.0], np.linspace(1.0, lam, n), [lam]]))


def evolution_clearances(centers, radii, t, R0):
    """Pairwise gaps ``(T, n, n)`` (diagonal inf) and outer clearances ``(T, n)``."""
    centers = np.atleast_2d(centers)
    radii = np.atleast_2d(radii)
    t = np.atleast_1d(t)
    outer = t[:, None] * R0 - np.abs(centers) - radii
    gaps = np.abs(centers[:, :, None] - centers[:, None, :]) - radii[:, :, None] - radii[:, None, :]
    n = centers.shape[1]
    gaps[:, np.arange(n), np.arange(n)] = np.inf
    return gaps, outer


def _lemma_evolution(config: CavitationConfig, lam: float) -> Evolution:
    kappa = config.R0**2 * config.areas / config.areas.sum()
    paths = tuple(AffinePath(0j, complex(a)) for a in config.sites)
    return Evolution(config.R0, lam, paths, kappa)


def _single_cavity_evolution(config: CavitationConfig, lam: float) -> Evolution:
    a = complex(config.sites[0])
    R0 = config.R0
    kappa = np.array([R0**2])
    limit = lam - math.sqrt(lam**2 - 1.0)
    if a == 0:
        return Evolution(R0, lam, (AffinePath(0j, 0j),), kappa)
    t = certification_grid(lam)
    L = np.sqrt(kappa[0] * (t**2 - 1.0))
    best = None
    candidates = []
    for k in 2.0 ** np.arange(-2, 13):
        path = BlendPath(a, limit, float(k))
        clearance = (t * R0 - np.abs(path(t)) - L).min()
        candidates.append((clearance, path))
        if best is None or clearance > best:
            best = clearance
    if best <= 0:
        raise NotAttainableError("no admissible single-cavity center path found")
    # smallest rate reaching 95% of the best clearance keeps the translation field mild
    for clearance, path in candidates:
        if clearance >= 0.95 * best:
            return Evolution(R0, lam, (path,), kappa)
    raise AssertionError("unreachable")


def select_excision(evolution: Evolution, config: CavitationConfig | None = None, beta: float = 0.25,
                    grid: np.ndarray | None = None) -> Evolution:
    """Choose excision radii ``R_i`` and margin ``d``; return the completed evolution.

    ``R_i = beta * c_i`` with ``c_i`` the smallest clearance of cavity ``i``
    over the t-grid; ``d`` is a quarter of the smallest residual clearance,
    so the disjointness and containment margins hold with a factor 2 to
    spare, capped by the smallest hole radius. ``beta`` is halved down to
    1/64 if certification fails.
    """
    R0 = evolution.R0
    t = certification_grid(evolution.lam) if grid is None else np.asarray(grid, dtype=float)
    z = evolution.center(t)
    L = np.sqrt(np.maximum(evolution.cavity_radius_sq(t), 0.0))
    gaps, outer = evolution_clearances(z, L, t, R0)
    c = np.minimum(outer.min(axis=0), gaps.min(axis=(0, 2)))
    if np.any(c <= 0):
        raise NotAttainableError("cavities touch each other or the boundary along the evolution")
    while beta >= 1.0 / 64 - 1e-15:
        R = beta * c
        r = np.sqrt(L**2 + R**2)
        gaps, outer = evolution_clearances(z, r, t, R0)
        d = min(gaps.min() / 4.0, outer.min() / 4.0, r.min())
        if d > 0 and _margin_holds(gaps, outer, r, 2 * d):
            return replace(evolution, excision_radii=R, margin=float(d))
        beta /= 2.0
    raise NotAttainableError("no positive margin found down to beta = 1/64")


def _margin_holds(gaps, outer, r, margin, rtol=1e-12):
    slack = rtol * max(1.0, float(np.abs(r).max()))
    return bool(
        (gaps >= 2 * margin - slack).all()
        and (outer >= 2 * margin - slack).all()
        and (r >= margin / 2 - slack).all()
    )


def build_evolution(config: CavitationConfig, beta: float = 0.25) -> Evolution:
    report = check_attainable(config)
    if not report.attainable:
        raise NotAttainableError(report.reason)
    lam = report.lam
    if config.n == 1:
        evo = _single_cavity_evolution(config, lam)
    else:
        evo = _lemma_evolution(config, lam)
    return select_excision(evo, config, beta=beta)


def domain_at(evolution: Evolution, t: float) -> HoleDomain:
    evolution.check_time(t)
    t = min(max(float(t), 1.0), evolution.lam)
    return HoleDomain(0j, t * evolution.R0, evolution.center(t), evolution.hole_radius(t))
