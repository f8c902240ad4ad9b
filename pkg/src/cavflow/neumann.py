"""
Neumann problem for the Laplacian on a disk with circular holes.

Solutions are sought in the span of an exactly harmonic basis: a constant,
one logarithm per hole, and truncated Laurent series around every circle,

    u = Re F,   F(z) = c + sum_k alpha_k log(z - z_k)
                     + sum_k sum_m A_km (r_k / (z - z_k))**m
                     + sum_m B_m ((z - z0) / r0)**m .

The normal on every circle is radial from that circle's own center, so on
the holes it points into the domain. The log coefficients are pinned by the
flux through each hole; the Laurent coefficients come from least-squares
collocation of the boundary data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .geometry import HoleDomain, as_complex_points

__all__ = [
    "SolverError",
    "CircleData",
    "NeumannData",
    "SolverOptions",
    "HarmonicRepresentation",
    "check_compatibility",
    "solve_neumann",
    "evaluate",
    "evaluate_gradient",
    "evaluate_hessian",
    "tangential_derivative",
    "mean_value",
    "boundary_residual",
    "green_neumann_disk",
    "disk_neumann_via_green",
    "poincare_probe",
]


class SolverError(RuntimeError):
    """Raised when a Neumann solve cannot be certified."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class CircleData:
    """Truncated Fourier series ``const + sum cos_m cos(m t) + sin_m sin(m t)``."""

    const: float
    cos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sin: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "const", float(self.const))
        object.__setattr__(self, "cos", np.asarray(self.cos, dtype=float).reshape(-1))
        object.__setattr__(self, "sin", np.asarray(self.sin, dtype=float).reshape(-1))

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, self.const)
        for m, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            out = out + a * np.cos(m * theta) + b * np.sin(m * theta)
        return out

    @classmethod
    def from_samples(cls, values, modes: int) -> "CircleData":
        """Fourier coefficients from equispaced samples on ``[0, 2pi)``."""
        values = np.asarray(values, dtype=float)
        q = len(values)
        if q < 2 * modes + 1:
            raise ValueError("too few samples for the requested number of modes")
        c = np.fft.rfft(values) / q
        return cls(c[0].real, 2 * c[1 : modes + 1].real, -2 * c[1 : modes + 1].imag)


@dataclass(frozen=True)
class NeumannData:
    """Boundary data, one :class:`CircleData` per circle (outer circle first).

    ``sampler(k, theta)``, when given, returns exact data values on circle
    ``k`` and takes precedence over the Fourier series during collocation.
    """

    circles: tuple
    sampler: Callable | None = None

    def values(self, k: int, theta) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(k, theta), dtype=float)
        return self.circles[k](theta)

    @classmethod
    def constants(cls, values: Sequence[float]) -> "NeumannData":
        return cls(tuple(CircleData(v) for v in values))

    @classmethod
    def from_sampler(cls, domain: HoleDomain, sampler, modes: int = 32, samples: int | None = None):
        q = samples or max(8 * modes, 256)
        theta = 2 * np.pi * np.arange(q) / q
        circles = tuple(
            CircleData.from_samples(sampler(k, theta), modes) for k in range(domain.n + 1)
        )
        return cls(circles, sampler)


@dataclass(frozen=True)
class SolverOptions:
    modes: int = 32
    points: int | None = None
    rcond: float = 1e-13
    tol: float = 1e-8
    atol: float = 1e-13
    compat_tol: float = 1e-10
    min_gap_ratio: float = 1e-3

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("need at least one Fourier mode")
        if self.points is not None and self.points < 2 * self.modes + 2:
            raise ValueError("collocation needs at least 2M+2 points per circle")

    @property
    def collocation_points(self) -> int:
        return self.points if self.points is not None else 4 * self.modes + 2


def _complex(points) -> np.ndarray:
    arr = np.asarray(points)
    if np.iscomplexobj(arr):
        return arr
    return as_complex_points(arr) if arr.ndim >= 1 and arr.shape[-1] == 2 else arr.astype(complex)


@dataclass(frozen=True)
class HarmonicRepresentation:
    """Closed-form harmonic function on a :class:`HoleDomain`.

    ``hole_coef[k, m-1] = a_km + i b_km`` multiplies ``(r_k/|y - z_k|)^m``
    times ``cos``/``sin`` of ``m theta_k``; ``outer_coef[m-1] = c_m - i d_m``
    multiplies ``(|y - z0|/r0)^m`` times ``cos``/``sin`` of ``m theta_0``.
    """

    domain: HoleDomain
    const: float
    alpha: np.ndarray
    hole_coef: np.ndarray
    outer_coef: np.ndarray
    residual: float = 0.0

    @property
    def modes(self) -> int:
        return len(self.outer_coef)

    @property
    def a(self):
        return self.hole_coef.real

    @property
    def b(self):
        return self.hole_coef.imag

    @property
    def c(self):
        return self.outer_coef.real

    @property
    def d(self):
        return -self.outer_coef.imag

    def with_const(self, const: float) -> "HarmonicRepresentation":
        return HarmonicRepresentation(
            self.domain, const, self.alpha, self.hole_coef, self.outer_coef, self.residual
        )

    def analytic(self, zeta, order: int = 1):
        """Return ``[F, F', F'']`` (up to ``order``) of the analytic generator."""
        zeta = np.asarray(zeta, dtype=complex)
        shape = zeta.shape
        zeta = zeta.reshape(-1)
        M = self.modes
        m = np.arange(1, M + 1)
        F = [np.full(zeta.shape, self.const, dtype=complex)]
        F += [np.zeros(zeta.shape, dtype=complex) for _ in range(order)]
        dom = self.domain
        for k in range(dom.n):
            dz = zeta - dom.centers[k]
            inv = 1.0 / dz
            al = self.alpha[k]
            A = self.hole_coef[k]
            # rows: coefficients of w^m for F, F' * dz and F'' * dz^2
            C = np.stack([A, -m * A, m * (m + 1) * A])[: order + 1]
            R = C @ _powers(dom.radii[k] * inv, M, start=1)
            F[0] += al * np.log(dz) + R[0]
            if order >= 1:
                F[1] += (al + R[1]) * inv
            if order >= 2:
                F[2] += (R[2] - al) * inv**2
        s = (zeta - dom.z0) / dom.r0
        B = self.outer_coef
        C = np.zeros((order + 1, M + 1), dtype=complex)
        C[0, 1:] = B
        if order >= 1:
            C[1, :M] = m * B / dom.r0
        if order >= 2:
            C[2, : M - 1] = (m * (m - 1) * B)[1:] / dom.r0**2
        R = C @ _powers(s, M, start=0)
        for q in range(order + 1):
            F[q] += R[q]
        return [f.reshape(shape) for f in F]

    def value(self, zeta):
        return self.analytic(zeta, 0)[0].real

    def gradient(self, zeta):
        F1 = self.analytic(zeta, 1)[1]
        return np.stack([F1.real, -F1.imag], axis=-1)

    def hessian(self, zeta):
        F2 = self.analytic(zeta, 2)[2]
        h = np.empty(F2.shape + (2, 2))
        h[..., 0, 0] = F2.real
        h[..., 0, 1] = h[..., 1, 0] = -F2.imag
        h[..., 1, 1] = -F2.real
        return h

    def normal_derivative(self, k: int, theta):
        """``du/dnu`` on circle ``k`` (radial from its own center)."""
        c, r = self.domain.circle_centers()[k], self.domain.circle_radii()[k]
        e = np.exp(1j * np.asarray(theta, dtype=float))
        return (self.analytic(c + r * e, 1)[1] * e).real

    def tangential(self, k: int, theta):
        """``du/dtau`` on circle ``k`` with counterclockwise tangent."""
        c, r = self.domain.circle_centers()[k], self.domain.circle_radii()[k]
        e = np.exp(1j * np.asarray(theta, dtype=float))
        return -(self.analytic(c + r * e, 1)[1] * e).imag


def _powers(w, M: int, start: int = 1) -> np.ndarray:
    """Rows ``w^start, ..., w^M`` by repeated multiplication."""
    out = np.empty((M + 1 - start, len(w)), dtype=complex)
    out[0] = 1.0 if start == 0 else w
    for j in range(1, len(out)):
        np.multiply(out[j - 1], w, out=out[j])
    return out


def _check_points(domain: HoleDomain, zeta, tol=1e-9):
    if not np.all(domain.contains(zeta, tol=tol * domain.r0)):
        raise ValueError("evaluation point outside the closed domain")


def evaluate(rep: HarmonicRepresentation, points):
    zeta = _complex(points)
    _check_points(rep.domain, zeta)
    return rep.value(zeta)


def evaluate_gradient(rep: HarmonicRepresentation, points):
    zeta = _complex(points)
    _check_points(rep.domain, zeta)
    return rep.gradient(zeta)


def evaluate_hessian(rep: HarmonicRepresentation, points):
    zeta = _complex(points)
    _check_points(rep.domain, zeta)
    return rep.hessian(zeta)


def check_compatibility(domain: HoleDomain, data: NeumannData) -> float:
    """Flux imbalance ``2 pi |r0 g0 - sum_k r_k g_k|`` of the constant terms."""
    if len(data.circles) != domain.n + 1:
        raise ValueError(
            f"data has {len(data.circles)} circles, domain has {domain.n + 1}"
        )
    consts = np.array([c.const for c in data.circles])
    radii = domain.circle_radii()
    return float(2 * np.pi * abs(radii[0] * consts[0] - (radii[1:] * consts[1:]).sum()))


def _collocation_matrix(domain: HoleDomain, M: int, theta):
    """Normal derivatives of the Laurent basis on every circle."""
    centers, radii = domain.circle_centers(), domain.circle_radii()
    m = np.arange(1, M + 1)
    e = np.exp(1j * theta)
    blocks = []
    for j in range(domain.n + 1):
        zeta = centers[j] + radii[j] * e
        cols = []
        for k in range(domain.n):
            dz = zeta - domain.centers[k]
            dW = -((domain.radii[k] / dz)[:, None] ** m) * m / dz[:, None]
            cols += [(dW * e[:, None]).real, (1j * dW * e[:, None]).real]
        s = (zeta - domain.z0) / domain.r0
        dS = (s[:, None] ** (m - 1)) * m / domain.r0
        cols += [(dS * e[:, None]).real, (-1j * dS * e[:, None]).real]
        blocks.append(np.hstack(cols))
    return np.vstack(blocks)


def _log_normal_derivative(domain: HoleDomain, alpha, theta):
    centers, radii = domain.circle_centers(), domain.circle_radii()
    e = np.exp(1j * theta)
    out = []
    for j in range(domain.n + 1):
        zeta = centers[j] + radii[j] * e
        acc = np.zeros(len(theta))
        for k in range(domain.n):
            acc += (alpha[k] / (zeta - domain.centers[k]) * e).real
        out.append(acc)
    return np.concatenate(out)


def solve_neumann(domain: HoleDomain, data: NeumannData, opts: SolverOptions | None = None):
    """Solve ``Lap u = 0``, ``du/dnu = g`` on every circle, ``mean(u) = 0``."""
    opts = opts or SolverOptions()
    if domain.n and domain.min_gap_ratio() < opts.min_gap_ratio:
        raise SolverError("holes are too close for a reliable solve")
    compat = check_compatibility(domain, data)
    gscale = max(
        max(abs(c.const) + np.abs(c.cos).sum() + np.abs(c.sin).sum() for c in data.circles),
        1e-300,
    )
    flux_scale = 2 * np.pi * domain.r0 * gscale
    if compat > opts.compat_tol * flux_scale + opts.atol:
        raise SolverError(f"incompatible Neumann data (flux imbalance {compat:.3e})", compat)

    M, P = opts.modes, opts.collocation_points
    theta = 2 * np.pi * np.arange(P) / P
    g = np.concatenate([data.values(k, theta) for k in range(domain.n + 1)])
    alpha = domain.radii * np.array([c.const for c in data.circles[1:]])
    rhs = g - _log_normal_derivative(domain, alpha, theta)

    A = _collocation_matrix(domain, M, theta)
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = 1.0
    x, _, rank, _ = scipy.linalg.lstsq(A / norms, rhs, cond=opts.rcond, lapack_driver="gelsy")
    if rank < A.shape[1]:
        raise SolverError(f"collocation matrix is rank deficient ({rank} < {A.shape[1]})")
    x = x / norms

    n = domain.n
    hole = np.empty((n, M), dtype=complex)
    for k in range(n):
        blk = x[2 * M * k : 2 * M * (k + 1)]
        hole[k] = blk[:M] + 1j * blk[M:]
    out = x[2 * M * n :]
    outer = out[:M] - 1j * out[M:]

    resid = float(np.abs(A @ x - rhs).max()) if len(rhs) else 0.0
    gmax = float(np.abs(g).max()) if len(g) else 0.0
    if resid > opts.tol * gmax + opts.atol:
        raise SolverError(
            f"boundary residual {resid:.3e} exceeds tolerance (|g|max = {gmax:.3e})", resid
        )
    rep = HarmonicRepresentation(domain, 0.0, alpha, hole, outer, resid)
    return rep.with_const(-mean_value(rep))


def boundary_residual(rep: HarmonicRepresentation, data: NeumannData, points: int) -> float:
    """Max ``|du/dnu - g|`` over ``points`` equispaced angles on every circle."""
    theta = (np.arange(points) + 0.5) * 2 * np.pi / points
    return float(
        max(
            np.abs(rep.normal_derivative(k, theta) - data.values(k, theta)).max()
            for k in range(rep.domain.n + 1)
        )
    )


def tangential_derivative(rep: HarmonicRepresentation, k: int, modes: int | None = None,
                          samples: int | None = None) -> CircleData:
    """Fourier coefficients of ``du/dtau`` on circle ``k``; constant term is 0."""
    if not 0 <= k <= rep.domain.n:
        raise IndexError(f"circle index {k} out of range")
    modes = modes or rep.modes
    q = samples or max(8 * modes, 256)
    theta = 2 * np.pi * np.arange(q) / q
    coeffs = CircleData.from_samples(rep.tangential(k, theta), modes)
    return CircleData(0.0, coeffs.cos, coeffs.sin)


def _disk_log_integral(R, c, z):
    """Integral of ``log|y - z|`` over ``B(c, R)``."""
    dist = abs(z - c)
    if dist <= R:
        return math.pi * R**2 * math.log(R) - math.pi * (R**2 - dist**2) / 2
    return math.pi * R**2 * math.log(dist)


def mean_value(rep: HarmonicRepresentation, domain: HoleDomain | None = None) -> float:
    """Exact domain average of ``rep`` from closed-form disk integrals."""
    dom = domain or rep.domain
    M = rep.modes
    m = np.arange(1, M + 1)
    total = rep.const * dom.area
    for j in range(dom.n):
        zj, rj = dom.centers[j], dom.radii[j]
        I = _disk_log_integral(dom.r0, dom.z0, zj) - (math.pi * rj**2 * math.log(rj) - math.pi * rj**2 / 2)
        dec = np.zeros(M, dtype=complex)
        # r/(y - z) over B(z0, r0) minus B(z_j, r_j): pi r conj(z0 - z)
        dec[0] = math.pi * rj * np.conj(dom.z0 - zj)
        for k in range(dom.n):
            if k == j:
                continue
            I -= math.pi * dom.radii[k] ** 2 * math.log(abs(dom.centers[k] - zj))
            dec -= math.pi * dom.radii[k] ** 2 * (rj / (dom.centers[k] - zj)) ** m
        total += rep.alpha[j] * I + (rep.hole_coef[j] * dec).real.sum()
    for k in range(dom.n):
        s = (dom.centers[k] - dom.z0) / dom.r0
        total -= math.pi * dom.radii[k] ** 2 * (rep.outer_coef * s**m).real.sum()
    return float(total / dom.area)


# -- disk Green's function -----------------------------------------------------


def green_neumann_disk(x, y, R: float):
    """Neumann Green's function of ``B(0, R)``, ``Phi(y - x) - phi^x(y)``."""
    x = _complex(x)
    y = _complex(y)
    if np.any(x == 0):
        raise ValueError("x = 0 has no inversion point")
    if np.any(x == y):
        raise ValueError("x and y must differ")
    xs = R**2 * x / np.abs(x) ** 2
    Phi = -np.log(np.abs(y - x)) / (2 * np.pi)
    phix = np.log(np.abs(y - xs)) / (2 * np.pi) - np.abs(y) ** 2 / (4 * np.pi * R**2)
    return Phi - phix


def green_neumann_disk_boundary(x, y, R: float):
    """Reduced form of :func:`green_neumann_disk` valid for ``|y| = R``."""
    x = _complex(x)
    y = _complex(y)
    return (
        -np.log(np.abs(y - x)) / np.pi
        + np.log(np.abs(x) / R) / (2 * np.pi)
        + np.abs(y) ** 2 / (4 * np.pi * R**2)
    )


def disk_neumann_via_green(g, x, R: float = 1.0, modes: int = 32, tol: float = 1e-10):
    """Neumann solution on ``B(0, R)`` (up to a constant) from its boundary integral.

    ``g`` is a callable of the boundary angle; trapezoid rule with ``8 * modes``
    nodes. Used as an independent check of :func:`solve_neumann`.
    """
    q = 8 * modes
    theta = 2 * np.pi * np.arange(q) / q
    gv = np.asarray(g(theta), dtype=float)
    w = 2 * np.pi * R / q
    if abs(gv.sum() * w) > tol * max(1.0, np.abs(gv).max() * 2 * np.pi * R):
        raise ValueError("boundary data must integrate to zero")
    y = R * np.exp(1j * theta)
    x = np.atleast_1d(_complex(x))
    G = green_neumann_disk_boundary(x[:, None], y[None, :], R)
    return G @ gv * w


# -- Poincare constant ----------------------------------------------------------


def _disk_quadrature(c, R, nr, nt):
    xg, wg = np.polynomial.legendre.leggauss(nr)
    rho = R * (xg + 1) / 2
    wr = wg * R / 2 * rho
    th = 2 * np.pi * np.arange(nt) / nt
    pts = c + rho[:, None] * np.exp(1j * th)[None, :]
    w = wr[:, None] * (2 * np.pi / nt) * np.ones(nt)[None, :]
    return pts.ravel(), w.ravel()


def poincare_probe(domain: HoleDomain, order: int = 3) -> float:
    """Lower bound on the Poincare constant of ``domain``.

    Maximises ``||phi||_2 / ||D phi||_2`` over mean-free combinations of the
    harmonic polynomials ``Re, Im ((y - z0)/r0)^m``, ``m <= order``.
    Integrals are exact (Gauss-polar quadrature on each disk).
    """
    nr, nt = order + 2, 2 * order + 4
    pts, wts = [], []
    p, w = _disk_quadrature(domain.z0, domain.r0, nr, nt)
    pts.append(p), wts.append(w)
    for c, r in zip(domain.centers, domain.radii):
        p, w = _disk_quadrature(c, r, nr, nt)
        pts.append(p), wts.append(-w)
    y, w = np.concatenate(pts), np.concatenate(wts)
    s = (y - domain.z0) / domain.r0
    vals, grads = [], []
    for m in range(1, order + 1):
        f = s**m
        df = m * s ** (m - 1) / domain.r0
        for ph in (1.0, -1j):
            vals.append((ph * f).real)
            g = ph * df
            grads.append(np.stack([g.real, -g.imag]))
    V = np.array(vals)
    G = np.array(grads)
    means = V @ w / domain.area
    Vc = V - means[:, None]
    A = (Vc * w) @ Vc.T
    B = np.einsum("iak,jak,k->ij", G, G, w)
    ev = scipy.linalg.eigh(A, B, eigvals_only=True)
    return float(math.sqrt(max(ev.max(), 0.0)))
