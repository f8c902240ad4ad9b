"""
Near-cavity radial maps, assembly of the full deformation and its energy.

Around each site the map is the explicit radial stretch
``a + r e^{i theta} -> z(lam) + sqrt(L^2 + r^2) e^{i theta}`` on the annulus
``eps <= r <= R``; on the perforated disk ``E(1)`` it is the time-``lam``
flow map. Shape diagnostics work on closed polygons given as complex arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .flow import FlowOptions, VelocitySchedule, integrate_flow
from .geometry import Evolution

__all__ = [
    "NearMap",
    "near_energy_exact",
    "near_energy_bound",
    "CavitationMap",
    "StratifiedCloud",
    "stratified_cloud",
    "far_energy",
    "EnergyReport",
    "energy_sweep",
    "bound_check",
    "polygon_area",
    "disk_intersection_area",
    "fraenkel_asymmetry",
    "distortion_bound_terms",
    "QuadratureError",
]


class QuadratureError(RuntimeError):
    """Monte Carlo error above the requested level; ``points`` is a suggested size."""

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


# -- near field ------------------------------------------------------------------


@dataclass(frozen=True)
class NearMap:
    site: complex
    center: complex
    L: float
    R: float

    def _polar(self, x):
        x = np.asarray(x, dtype=complex)
        dz = x - self.site
        r = np.abs(dz)
        return r, dz / np.where(r > 0, r, 1.0)

    def contains(self, x, eps: float, tol: float = 0.0):
        r = np.abs(np.asarray(x, dtype=complex) - self.site)
        return (r >= eps - tol) & (r <= self.R + tol)

    def __call__(self, x):
        r, e = self._polar(x)
        return self.center + np.sqrt(self.L**2 + r**2) * e

    def gradient(self, x):
        """``(r/s) e (x) e + (s/r) ie (x) ie`` with ``s = sqrt(L^2 + r^2)``."""
        r, e = self._polar(x)
        if np.any(r <= 0):
            raise ValueError("gradient undefined at the site")
        s = np.sqrt(self.L**2 + r**2)
        er = np.stack([e.real, e.imag], axis=-1)
        et = np.stack([-e.imag, e.real], axis=-1)
        return ((r / s)[..., None, None] * er[..., :, None] * er[..., None, :]
                + (s / r)[..., None, None] * et[..., :, None] * et[..., None, :])

    def energy_density(self, x):
        r, _ = self._polar(x)
        return 0.5 * (r**2 / (self.L**2 + r**2) + 1.0 + self.L**2 / r**2)

    def energy(self, eps: float) -> float:
        return near_energy_exact(self.L, self.R, eps)


def _near_primitive(L, r):
    return math.pi * (r**2 - 0.5 * L**2 * math.log(L**2 + r**2) + L**2 * math.log(r))


def near_energy_exact(L: float, R: float, eps: float) -> float:
    """Dirichlet energy of the radial stretch on ``eps <= r <= R``.

    The integrand ``pi r (r^2/(L^2+r^2) + 1 + L^2/r^2)`` integrates to
    ``pi [r^2 - (L^2/2) log(L^2 + r^2) + L^2 log r]``.
    """
    if not 0 < eps < R:
        raise ValueError("need 0 < eps < R")
    if L == 0:
        return math.pi * (R**2 - eps**2)
    return _near_primitive(L, R) - _near_primitive(L, eps)


def near_energy_bound(L: float, R: float, eps: float) -> float:
    """Upper bound ``pi R^2 + v log R + v |log eps|`` with ``v = pi L^2``."""
    v = math.pi * L**2
    return math.pi * R**2 + v * math.log(R) + v * abs(math.log(eps))


# -- polygons ---------------------------------------------------------------------


def polygon_area(poly) -> float:
    """Signed shoelace area of a closed polygon; positive when counterclockwise.

    Vertices are complex numbers and the first one is not repeated.
    """
    p = np.asarray(poly, dtype=complex)
    return float(0.5 * np.imag(np.conj(p) * np.roll(p, -1)).sum())


def disk_intersection_area(poly, c: complex, rho: float) -> float:
    """Exact area of ``polygon ∩ B(c, rho)`` for a simple polygon.

    Sums the signed areas of ``triangle(c, p_k, p_{k+1}) ∩ disk`` over the
    edges; each edge is split where it crosses the circle into straight
    pieces inside and circular sectors outside.
    """
    p = np.asarray(poly, dtype=complex) - c
    q = np.roll(p, -1)
    dq = q - p
    A = np.abs(dq) ** 2
    B = np.real(np.conj(p) * dq)
    C = np.abs(p) ** 2 - rho**2
    disc = B**2 - A * C
    root = np.sqrt(np.maximum(disc, 0.0))
    safe = np.where(A > 0, A, 1.0)
    t1 = np.where(disc > 0, np.clip((-B - root) / safe, 0.0, 1.0), 0.0)
    t2 = np.where(disc > 0, np.clip((-B + root) / safe, 0.0, 1.0), 0.0)
    a = p + t1 * dq
    b = p + t2 * dq

    def sector(u, w):
        return 0.5 * rho**2 * np.arctan2(np.imag(np.conj(u) * w), np.real(np.conj(u) * w))

    def tri(u, w):
        return 0.5 * np.imag(np.conj(u) * w)

    return float((sector(p, a) + tri(a, b) + sector(b, q)).sum())


def fraenkel_asymmetry(poly, grid: int = 9, return_center: bool = False):
    """Fraenkel asymmetry ``min_c |P Δ B(c, rho)| / |P|`` with ``pi rho^2 = |P|``.

    Since both sets have the same area, ``|P Δ B| = 2 (|P| - |P ∩ B|)``. The
    search starts at the area centroid; a ``grid x grid`` lattice spanning
    half the diameter around it guards against poor local minima.
    """
    p = np.asarray(poly, dtype=complex).reshape(-1)
    if len(p) < 3:
        raise ValueError("polygon needs at least three vertices")
    area = polygon_area(p)
    if area < 0:
        p = p[::-1]
        area = -area
    if not area > 0 or not np.isfinite(area):
        raise ValueError("degenerate polygon")
    rho = math.sqrt(area / math.pi)
    q = np.roll(p, -1)
    cross = np.imag(np.conj(p) * q)
    centroid = ((p + q) * cross).sum() / (6.0 * area)

    def D(x):
        return 2.0 * (1.0 - disk_intersection_area(p, complex(x[0], x[1]), rho) / area)

    span = float(np.abs(p - centroid).max())
    offs = np.linspace(-span / 2, span / 2, grid)
    starts = [np.array([centroid.real, centroid.imag])]
    vals = [(D(x), complex(x[0], x[1])) for x in
            (np.array([centroid.real + u, centroid.imag + w]) for u in offs for w in offs)]
    best_grid = min(vals, key=lambda z: z[0])[1]
    starts.append(np.array([best_grid.real, best_grid.imag]))
    best = (D(starts[0]), centroid)
    for x0 in starts:
        simplex = x0 + 0.1 * rho * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        res = minimize(D, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10 * rho, "fatol": 1e-14, "initial_simplex": simplex,
                                "maxiter": 2000})
        if res.fun < best[0]:
            best = (float(res.fun), complex(res.x[0], res.x[1]))
    value = max(0.0, float(best[0]))
    return (value, best[1]) if return_center else value


def distortion_bound_terms(v, D, d, R: float, eps: float):
    """Both logarithmic terms of the lower energy bound for distorted cavities.

    Returns ``(sum v_i log(R/eps), sum v_i D_i^2 log(min(d_i, sqrt(v_i D_i^2))/eps))``.
    The universal constant in front of the second term is unknown, so the two
    terms are returned separately and never combined.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    D = np.atleast_1d(np.asarray(D, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if R <= 0 or eps <= 0 or np.any(v <= 0) or np.any(d <= 0) or np.any(D < 0):
        raise ValueError("inputs must be positive")
    first = float((v * np.log(R / eps)).sum())
    second = 0.0
    for vi, Di, di in zip(v, D, d):
        if Di > 0:
            second += vi * Di**2 * math.log(min(di, math.sqrt(vi * Di**2)) / eps)
    return first, second


# -- full map ---------------------------------------------------------------------


@dataclass
class CavitationMap:
    """The assembled deformation at a fixed ``eps``.

    Far points are pushed through the flow; near points through the radial
    stretch of their cavity. ``schedule`` is shared between calls so the
    velocity fields are solved only once.
    """

    evolution: Evolution
    eps: float
    opts: FlowOptions = field(default_factory=FlowOptions)
    schedule: VelocitySchedule | None = None

    def __post_init__(self):
        evo = self.evolution
        if evo.excision_radii is None:
            raise ValueError("evolution has no excision radii")
        L = np.sqrt(evo.cavity_radius_sq(evo.lam))
        z = evo.center(evo.lam)
        self.near = [NearMap(complex(a), complex(c), float(l), float(R))
                     for a, c, l, R in zip(evo.sites, z, L, evo.excision_radii)]
        if not 0 < self.eps < min(m.R for m in self.near):
            raise ValueError("need 0 < eps < min R_i")
        if self.schedule is None:
            self.schedule = VelocitySchedule(evo, self.opts.steps, self.opts.solver, self.opts.cutoff)

    def region(self, x, tol: float = 1e-12):
        """``i`` for points in annulus ``i``, -1 for the far region; raises outside the body."""
        x = np.asarray(x, dtype=complex).reshape(-1)
        evo = self.evolution
        if np.any(np.abs(x) > evo.R0 * (1 + tol)):
            raise ValueError("point outside the reference disk")
        out = np.full(len(x), -1)
        for i, m in enumerate(self.near):
            r = np.abs(x - m.site)
            if np.any(r < self.eps * (1 - tol)):
                raise ValueError(f"point inside the eps-disk of cavity {i}")
            out[r < m.R] = i
        return out

    def flow(self, x, checkpoints=None, labels=None):
        return integrate_flow(x, self.evolution, self.opts, labels=labels,
                              checkpoints=checkpoints, schedule=self.schedule)

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """Images and deformation gradients of the points ``x``."""
        x = np.asarray(x, dtype=complex).reshape(-1)
        reg = self.region(x)
        y = np.empty(len(x), dtype=complex)
        G = np.empty((len(x), 2, 2))
        far = reg < 0
        if far.any():
            batch = self.flow(x[far], checkpoints=1)
            y[far] = batch.final
            G[far] = batch.gradients[-1]
        for i, m in enumerate(self.near):
            sel = reg == i
            if sel.any():
                y[sel] = m(x[sel])
                G[sel] = m.gradient(x[sel])
        assert not np.isnan(y.real).any(), "point claimed by no region"
        return y, G

    def interface_mismatch(self, samples: int = 512) -> float:
        """Largest gap between the two branches on the circles ``|x - a_i| = R_i``.

        The far branch is integrated without re-projection, so the value
        measures the flow itself.
        """
        th = 2 * np.pi * np.arange(samples) / samples
        e = np.exp(1j * th)
        worst = 0.0
        for m in self.near:
            x = m.site + m.R * e
            far = self.flow(x, checkpoints=1).final
            worst = max(worst, float(np.abs(far - m(x)).max()))
        return worst

    def outer_error(self, samples: int = 512) -> float:
        th = 2 * np.pi * np.arange(samples) / samples
        x = self.evolution.R0 * np.exp(1j * th)
        return float(np.abs(self.flow(x, checkpoints=1).final - self.evolution.lam * x).max())

    def cavity_polygon(self, i: int, samples: int = 1024) -> np.ndarray:
        """Image of the circle ``|x - a_i| = eps`` as a closed polygon."""
        th = 2 * np.pi * np.arange(samples) / samples
        return self.near[i](self.near[i].site + self.eps * np.exp(1j * th))

    def cavity_areas(self, samples: int = 1024) -> np.ndarray:
        return np.array([polygon_area(self.cavity_polygon(i, samples)) for i in range(len(self.near))])


# -- far energy --------------------------------------------------------------------


@dataclass(frozen=True)
class StratifiedCloud:
    """Sample points with their stratum index and stratum areas."""

    points: np.ndarray
    stratum: np.ndarray
    areas: np.ndarray
    inside: np.ndarray

    def integrate(self, values):
        """Stratified estimate of the integral over ``E(1)`` and its standard error."""
        f = np.where(self.inside, np.asarray(values, dtype=float), 0.0)
        S = len(self.areas)
        n = np.bincount(self.stratum, minlength=S)
        s1 = np.bincount(self.stratum, weights=f, minlength=S)
        s2 = np.bincount(self.stratum, weights=f * f, minlength=S)
        mean = s1 / n
        var = np.maximum(s2 - n * mean**2, 0.0) / np.maximum(n - 1, 1)
        est = float((self.areas * mean).sum())
        err = float(math.sqrt((self.areas**2 * var / n).sum()))
        return est, err


def _annulus_cells(c, r1, r2, n_r, n_t, per_cell, rng, start):
    """Equal-area polar cells of an annulus with ``per_cell`` uniform points each."""
    edges = np.sqrt(np.linspace(r1**2, r2**2, n_r + 1))
    tedges = np.linspace(0, 2 * np.pi, n_t + 1)
    rr = np.repeat(np.arange(n_r), n_t)
    tt = np.tile(np.arange(n_t), n_r)
    area = np.pi * (r2**2 - r1**2) / (n_r * n_t)
    cell = np.repeat(np.arange(n_r * n_t), per_cell)
    u = rng.uniform(size=(len(cell), 2))
    lo2, hi2 = edges[rr[cell]] ** 2, edges[rr[cell] + 1] ** 2
    rho = np.sqrt(lo2 + u[:, 0] * (hi2 - lo2))
    th = tedges[tt[cell]] + u[:, 1] * (2 * np.pi / n_t)
    return c + rho * np.exp(1j * th), start + cell, np.full(n_r * n_t, area)


def stratified_cloud(evolution: Evolution, points: int = 20000, seed: int = 0,
                     band_share: float = 0.5, per_cell: int = 2) -> StratifiedCloud:
    """Stratified sample of ``E(1)`` refined in bands along every boundary circle.

    A band of width ``w`` hugs each hole and the outer circle, where the
    collar terms of the velocity concentrate; the rest of the disk is cut
    into equal-area polar cells and points inside the bands or holes get
    weight zero there.
    """
    rng = np.random.default_rng(seed)
    R0 = evolution.R0
    a = evolution.sites
    R = evolution.excision_radii
    n = len(a)
    outer = R0 - np.abs(a) - R
    clear = [outer.min()]
    for i in range(n):
        for j in range(i + 1, n):
            clear.append((abs(a[i] - a[j]) - R[i] - R[j]) / 2)
    w = min(4 * evolution.margin, min(clear) / 2)
    pts, strata, areas = [], [], []
    start = 0
    band_pts = int(points * band_share)
    per_band = band_pts // (n + 1)
    n_r = 8
    for c, r1, r2 in [(0j, R0 - w, R0)] + [(a[i], R[i], R[i] + w) for i in range(n)]:
        n_t = max(1, per_band // (per_cell * n_r))
        p, s, ar = _annulus_cells(c, r1, r2, n_r, n_t, per_cell, rng, start)
        pts.append(p), strata.append(s), areas.append(ar)
        start += len(ar)
    rest = points - band_pts
    n_r = max(1, int(math.sqrt(rest / per_cell / (2 * math.pi))))
    n_t = max(1, rest // (per_cell * n_r))
    p, s, ar = _annulus_cells(0j, 0.0, R0 - w, n_r, n_t, per_cell, rng, start)
    keep = np.ones(len(p), dtype=bool)
    for i in range(n):
        keep &= np.abs(p - a[i]) >= R[i] + w
    pts.append(p), strata.append(s), areas.append(ar)
    inside = np.concatenate([np.ones(sum(len(q) for q in pts[:-1]), dtype=bool), keep])
    return StratifiedCloud(np.concatenate(pts), np.concatenate(strata), np.concatenate(areas), inside)


def far_energy(cmap: CavitationMap, points: int = 20000, seed: int = 0, max_rel_err: float = 0.01):
    """``int_{E(1)} |D u_far|^2 / 2`` by stratified Monte Carlo; returns ``(E, stderr, batch)``."""
    if points < 20000:
        raise ValueError("use at least 2e4 Monte Carlo points")
    cloud = stratified_cloud(cmap.evolution, points, seed)
    x = cloud.points[cloud.inside]
    batch = cmap.flow(x, checkpoints=10)
    dens = np.zeros(len(cloud.points))
    dens[cloud.inside] = 0.5 * (batch.gradients[-1] ** 2).sum(axis=(1, 2))
    est, err = cloud.integrate(dens)
    if err > max_rel_err * est:
        raise QuadratureError(
            f"far-field standard error {err:.3g} exceeds {max_rel_err:.0%} of {est:.3g}",
            points=int(points * (err / (max_rel_err * est)) ** 2) + 1,
        )
    return est, err, batch


# -- energy scaling ----------------------------------------------------------------


@dataclass
class EnergyReport:
    eps: np.ndarray
    near: np.ndarray
    far: float
    far_stderr: float
    total_areas: float
    slope: float = float("nan")
    C: float = float("nan")
    residual: float = float("nan")

    @property
    def total(self) -> np.ndarray:
        return self.near + self.far

    @property
    def log_eps(self) -> np.ndarray:
        return np.abs(np.log(self.eps))

    @property
    def bound_gap(self) -> np.ndarray:
        return self.total - self.total_areas * self.log_eps

    def rows(self):
        for k in range(len(self.eps)):
            yield {
                "epsilon": float(self.eps[k]),
                "E_near_exact": float(self.near[k]),
                "E_far_mc": float(self.far),
                "E_far_stderr": float(self.far_stderr),
                "E_total": float(self.total[k]),
                "log_eps": float(self.log_eps[k]),
                "bound_gap": float(self.bound_gap[k]),
            }


def energy_sweep(evolution: Evolution, eps_grid, opts: FlowOptions | None = None, points: int = 20000,
                 seed: int = 0, schedule: VelocitySchedule | None = None):
    """Energy of the assembled map for every ``eps``; the far part is computed once.

    Returns ``(report, batch)`` with the far-field trajectory batch.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    opts = opts or FlowOptions()
    cmap = CavitationMap(evolution, float(eps.min()), opts, schedule)
    far, err, batch = far_energy(cmap, points, seed)
    near = np.array([sum(m.energy(e) for m in cmap.near) for e in eps])
    total_areas = float(evolution.final_areas().sum())
    report = EnergyReport(eps, near, far, err, total_areas)
    return report, batch


def bound_check(report: EnergyReport, slope_tol: float = 0.03, resid_tol: float = 0.02) -> dict:
    """Fit ``E = C + s |log eps|`` and compare ``s`` with the total cavity area."""
    x = report.log_eps
    if len(x) < 4 or x.max() - x.min() < math.log(30.0) - 1e-9:
        raise ValueError("need at least 4 eps values with max/min >= 30")
    E = report.total
    s, C = np.polyfit(x, E, 1)
    resid = float(np.abs(E - (C + s * x)).max() / np.abs(E).min())
    target = report.total_areas
    dev = abs(s - target) / target if target > 0 else abs(s)
    report.slope, report.C, report.residual = float(s), float(C), resid
    ok_slope = dev <= slope_tol if target > 0 else abs(s) <= slope_tol * max(1.0, abs(C))
    return {
        "slope": float(s),
        "target_slope": target,
        "slope_deviation": float(dev),
        "C": float(C),
        "max_residual": resid,
        "passed": bool(ok_slope and resid < resid_tol),
    }
