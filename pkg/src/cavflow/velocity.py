"""
Divergence-free velocity fields on the evolving domains E(t).

The growth field is ``D phi + Dperp psi``, where ``phi`` carries the normal
growth rates of every circle and ``psi`` removes its tangential part on the
boundary. The translation field ``Dperp w`` moves each hole with its center.
``Dperp f = (d2 f, -d1 f)`` throughout; both parts are skew gradients or
gradients of harmonic functions, so the divergence vanishes identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Evolution, HoleDomain, domain_at
from .neumann import (
    HarmonicRepresentation,
    NeumannData,
    SolverOptions,
    solve_neumann,
    tangential_derivative,
)

__all__ = [
    "Smoothstep",
    "CutoffParams",
    "VelocityEvaluator",
    "build_growth_field",
    "build_translation_field",
    "build_velocity_field",
    "eval_velocity",
    "eval_velocity_gradient",
    "verify_boundary_conditions",
    "sample_cloud",
    "sup_grad_over_time",
]

J = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class Smoothstep:
    """Quintic ``1 - (10 s^3 - 15 s^4 + 6 s^5)``, clamped to 1 below 0 and 0 above 1."""

    def __call__(self, s):
        s = np.clip(s, 0.0, 1.0)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)

    def d1(self, s):
        s = np.clip(s, 0.0, 1.0)
        return -30.0 * s**2 * (1.0 - s) ** 2

    def d2(self, s):
        s = np.clip(s, 0.0, 1.0)
        return -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)

    def sup_d1(self):
        return 1.875

    def sup_d2(self):
        return 60.0 / (6.0 * np.sqrt(3.0))


@dataclass(frozen=True)
class CutoffParams:
    zeta: Smoothstep = field(default_factory=Smoothstep)
    eta: Smoothstep = field(default_factory=Smoothstep)


def _frame(y, c):
    dz = y - c
    rho = np.abs(dz)
    e = dz / np.where(rho > 0, rho, 1.0)
    return rho, e


def _polar_hessian(rho, e, h_r, h_t, h_rr, h_rt, h_tt):
    """Cartesian gradient and Hessian of ``h(rho, theta)`` from polar partials."""
    er = np.stack([e.real, e.imag], axis=-1)
    et = np.stack([-e.imag, e.real], axis=-1)
    grad = h_r[:, None] * er + (h_t / rho)[:, None] * et
    rr = np.einsum("ki,kj->kij", er, er)
    tt = np.einsum("ki,kj->kij", et, et)
    rt = np.einsum("ki,kj->kij", er, et)
    mixed = h_rt / rho - h_t / rho**2
    hess = (
        h_rr[:, None, None] * rr
        + mixed[:, None, None] * (rt + rt.transpose(0, 2, 1))
        + (h_tt / rho**2 + h_r / rho)[:, None, None] * tt
    )
    return grad, hess


@dataclass
class VelocityEvaluator:
    """Composite field ``v + v~`` on ``E(t)`` with analytic gradient.

    ``rates`` holds ``dr/dt`` for every circle (outer first), ``center_rates``
    the hole velocities ``dz_i/dt``. Either part can be switched off.
    """

    t: float
    domain: HoleDomain
    margin: float
    rates: np.ndarray
    center_rates: np.ndarray
    phi: HarmonicRepresentation | None = None
    varphi: HarmonicRepresentation | None = None
    cutoff: CutoffParams = field(default_factory=CutoffParams)
    growth: bool = True
    translation: bool = True

    # -- pieces -------------------------------------------------------------
    def _growth(self, y):
        v = np.zeros((len(y), 2))
        G = np.zeros((len(y), 2, 2))
        if not self.growth or self.phi is None:
            return v, G
        F1, F2 = self.phi.analytic(y, 2)[1:]
        v[:, 0] += F1.real
        v[:, 1] -= F1.imag
        G[:, 0, 0] += F2.real
        G[:, 0, 1] -= F2.imag
        G[:, 1, 0] -= F2.imag
        G[:, 1, 1] -= F2.real
        # psi = varphi - zeta(dist / (d/2)) varphi(q(y))
        _, P1, P2 = self.varphi.analytic(y, 2)
        dpsi = np.stack([P1.real, -P1.imag], axis=-1)
        hpsi = np.empty((len(y), 2, 2))
        hpsi[:, 0, 0] = P2.real
        hpsi[:, 0, 1] = hpsi[:, 1, 0] = -P2.imag
        hpsi[:, 1, 1] = -P2.real
        half = self.margin / 2.0
        zf = self.cutoff.zeta
        dom = self.domain
        centers, radii = dom.circle_centers(), dom.circle_radii()
        for j in range(dom.n + 1):
            rho, e = _frame(y, centers[j])
            if j == 0:
                dist, sgn = radii[0] - rho, -1.0
            else:
                dist, sgn = rho - radii[j], 1.0
            idx = np.nonzero(dist < half)[0]
            if idx.size == 0:
                continue
            rho, e, s = rho[idx], e[idx], dist[idx] / half
            Z = zf(s)
            Z1 = sgn * zf.d1(s) / half
            Z2 = zf.d2(s) / half**2
            r = radii[j]
            q = centers[j] + r * e
            Fq, Fq1, Fq2 = self.varphi.analytic(q, 2)
            g = Fq.real
            g1 = (Fq1 * 1j * r * e).real
            g2 = (-(r * e) ** 2 * Fq2 - r * e * Fq1).real
            dh, hh = _polar_hessian(rho, e, Z1 * g, Z * g1, Z2 * g, Z1 * g1, Z * g2)
            dpsi[idx] -= dh
            hpsi[idx] -= hh
        v += dpsi @ J.T
        G += np.einsum("ab,kbc->kac", J, hpsi)
        return v, G

    def _translation(self, y):
        v = np.zeros((len(y), 2))
        G = np.zeros((len(y), 2, 2))
        if not self.translation:
            return v, G
        dom = self.domain
        d = self.margin
        ef = self.cutoff.eta
        for i in range(dom.n):
            zr = self.center_rates[i]
            if zr == 0:
                continue
            rho, e = _frame(y, dom.centers[i])
            s = (rho - dom.radii[i]) / d
            idx = np.nonzero(s < 1.0)[0]
            if idx.size == 0:
                continue
            rho, e, s = rho[idx], e[idx], s[idx]
            dz = y[idx] - dom.centers[i]
            # w = eta * l with Dperp l = dz_i/dt
            ell = zr.real * dz.imag - zr.imag * dz.real
            gl = np.array([-zr.imag, zr.real])
            H, H1, H2 = ef(s), ef.d1(s) / d, ef.d2(s) / d**2
            er = np.stack([e.real, e.imag], axis=-1)
            dw = (H1 * ell)[:, None] * er + H[:, None] * gl
            rr = np.einsum("ki,kj->kij", er, er)
            eye = np.eye(2)[None]
            hw = ell[:, None, None] * (H2[:, None, None] * rr + (H1 / rho)[:, None, None] * (eye - rr))
            cross = np.einsum("ki,j->kij", er, gl)
            hw += H1[:, None, None] * (cross + cross.transpose(0, 2, 1))
            v[idx] += dw @ J.T
            G[idx] += np.einsum("ab,kbc->kac", J, hw)
        return v, G

    def evaluate(self, y):
        """Velocity ``(K, 2)`` and gradient ``(K, 2, 2)`` at complex points ``y``."""
        y = np.asarray(y, dtype=complex).reshape(-1)
        v1, G1 = self._growth(y)
        v2, G2 = self._translation(y)
        return v1 + v2, G1 + G2

    def velocity(self, y):
        return self.evaluate(y)[0]

    def gradient(self, y):
        return self.evaluate(y)[1]

    def boundary_velocity(self, j: int, theta):
        """Prescribed velocity of the boundary point at angle ``theta`` of circle ``j``."""
        e = np.exp(1j * np.asarray(theta, dtype=float))
        w = np.zeros(e.shape, dtype=complex)
        if self.growth:
            w += self.rates[j] * e
        if self.translation and j > 0:
            w += self.center_rates[j - 1]
        return np.stack([w.real, w.imag], axis=-1)


def _check_collars(domain: HoleDomain, d: float):
    for i in range(domain.n):
        if abs(domain.centers[i] - domain.z0) + domain.radii[i] + d > domain.r0 - d + 1e-12 * domain.r0:
            raise ValueError(f"collar of hole {i} leaves the margin band; margin d is too large")
        for j in range(i + 1, domain.n):
            if abs(domain.centers[i] - domain.centers[j]) <= domain.radii[i] + domain.radii[j] + 2 * d - 1e-12:
                raise ValueError(f"collars of holes {i} and {j} overlap; margin d is too large")


def _rates(evolution: Evolution, t: float):
    return np.concatenate([[evolution.R0], evolution.hole_radius_rate(t)])


def build_growth_field(evolution: Evolution, t: float, opts: SolverOptions | None = None,
                       cutoff: CutoffParams | None = None) -> VelocityEvaluator:
    """Solve for ``phi_t`` and ``varphi_t`` and return the growth-only evaluator."""
    opts = opts or SolverOptions()
    dom = domain_at(evolution, t)
    rates = _rates(evolution, min(max(t, 1.0), evolution.lam))
    phi = solve_neumann(dom, NeumannData.constants(rates), opts)
    circles = tuple(tangential_derivative(phi, k, opts.modes) for k in range(dom.n + 1))
    data = NeumannData(circles, sampler=lambda k, th: phi.tangential(k, th))
    varphi = solve_neumann(dom, data, opts)
    return VelocityEvaluator(
        float(t), dom, float(evolution.margin), rates, np.zeros(dom.n, dtype=complex),
        phi, varphi, cutoff or CutoffParams(), growth=True, translation=False,
    )


def build_translation_field(evolution: Evolution, t: float,
                            cutoff: CutoffParams | None = None) -> VelocityEvaluator:
    dom = domain_at(evolution, t)
    _check_collars(dom, evolution.margin)
    tt = min(max(t, 1.0), evolution.lam)
    return VelocityEvaluator(
        float(t), dom, float(evolution.margin), _rates(evolution, tt),
        np.asarray(evolution.center_rate(tt), dtype=complex).reshape(-1),
        None, None, cutoff or CutoffParams(), growth=False, translation=True,
    )


def build_velocity_field(evolution: Evolution, t: float, opts: SolverOptions | None = None,
                         cutoff: CutoffParams | None = None) -> VelocityEvaluator:
    """Full field ``v(., t) + v~(., t)``."""
    ev = build_growth_field(evolution, t, opts, cutoff)
    _check_collars(ev.domain, ev.margin)
    tt = min(max(t, 1.0), evolution.lam)
    ev.center_rates = np.asarray(evolution.center_rate(tt), dtype=complex).reshape(-1)
    ev.translation = True
    return ev


def _points(y):
    arr = np.asarray(y)
    if np.iscomplexobj(arr):
        return arr.reshape(-1)
    arr = np.asarray(arr, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def eval_velocity(evaluator: VelocityEvaluator, y, tol: float = 1e-9):
    y = _points(y)
    if not evaluator.domain.contains(y, tol * evaluator.domain.r0).all():
        raise ValueError("point outside the closed domain E(t)")
    return evaluator.velocity(y)


def eval_velocity_gradient(evaluator: VelocityEvaluator, y, tol: float = 1e-9):
    y = _points(y)
    if not evaluator.domain.contains(y, tol * evaluator.domain.r0).all():
        raise ValueError("point outside the closed domain E(t)")
    return evaluator.gradient(y)


def verify_boundary_conditions(evaluator: VelocityEvaluator, samples: int = 1024):
    """Max normal and tangential errors of the field on every circle."""
    dom = evaluator.domain
    theta = 2 * np.pi * np.arange(samples) / samples
    e = np.exp(1j * theta)
    er = np.stack([e.real, e.imag], axis=-1)
    et = np.stack([-e.imag, e.real], axis=-1)
    normal, tangential = [], []
    for j, (c, r) in enumerate(zip(dom.circle_centers(), dom.circle_radii())):
        v = evaluator.velocity(c + r * e)
        err = v - evaluator.boundary_velocity(j, theta)
        normal.append(float(np.abs((err * er).sum(-1)).max()))
        tangential.append(float(np.abs((err * et).sum(-1)).max()))
    return {
        "normal": normal,
        "tangential": tangential,
        "max_normal": max(normal),
        "max_tangential": max(tangential),
    }


def sample_cloud(domain: HoleDomain, margin: float, density: int = 1, seed: int = 0):
    """Deterministic point cloud refined towards every boundary circle.

    Rings at fixed multiples of ``margin`` cover the cutoff and translation
    collars; the rest of the domain gets uniform random points.
    """
    offsets = margin * np.array([0.0, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 3 / 8, 1 / 2, 5 / 8, 3 / 4, 7 / 8, 1.0, 1.25])
    nt = 64 * density
    e = np.exp(2j * np.pi * (np.arange(nt) + 0.5) / nt)
    pts = []
    for j, (c, r) in enumerate(zip(domain.circle_centers(), domain.circle_radii())):
        rad = r - offsets if j == 0 else r + offsets
        pts.append((c + rad[:, None] * e[None, :]).ravel())
    rng = np.random.default_rng(seed)
    k = 2000 * density
    rho = domain.r0 * np.sqrt(rng.uniform(size=k))
    z = domain.z0 + rho * np.exp(2j * np.pi * rng.uniform(size=k))
    pts.append(z)
    y = np.concatenate(pts)
    return y[domain.contains(y)]


def sup_grad_over_time(evolution: Evolution, t_grid, opts: SolverOptions | None = None,
                       min_points: int = 4000, rel_change: float = 0.02, max_doublings: int = 4):
    """Sampled ``sup |D(v + v~)|`` (Frobenius) at each time of ``t_grid``.

    Returns ``(max, series)``. At each time the cloud density is doubled until
    the estimate moves by less than ``rel_change``.
    """
    series = []
    for t in np.asarray(t_grid, dtype=float):
        ev = build_velocity_field(evolution, t, opts)
        density = 1
        y = sample_cloud(ev.domain, ev.margin, density)
        while len(y) < min_points:
            density *= 2
            y = sample_cloud(ev.domain, ev.margin, density)
        est = float(np.linalg.norm(ev.gradient(y), axis=(1, 2)).max())
        for _ in range(max_doublings):
            density *= 2
            y = sample_cloud(ev.domain, ev.margin, density)
            new = float(np.linalg.norm(ev.gradient(y), axis=(1, 2)).max())
            done = abs(new - est) <= rel_change * max(est, 1e-300)
            est = max(est, new)
            if done:
                break
        series.append(est)
    series = np.array(series)
    return float(series.max()), series
