import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavflow.geometry import HoleDomain
from cavflow.neumann import (
    CircleData,
    HarmonicRepresentation,
    NeumannData,
    SolverError,
    SolverOptions,
    boundary_residual,
    check_compatibility,
    disk_neumann_via_green,
    evaluate,
    evaluate_gradient,
    evaluate_hessian,
    green_neumann_disk,
    green_neumann_disk_boundary,
    mean_value,
    poincare_probe,
    solve_neumann,
    tangential_derivative,
)

from conftest import three_hole_domain


def interior_points(domain, n=400, seed=1, pad=1e-3):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        z = domain.z0 + domain.r0 * (2 * rng.random(4 * n) - 1 + 2j * rng.random(4 * n) - 1j)
        pts.extend(z[domain.contains(z, tol=-pad * domain.r0)])
    return np.array(pts[:n])


def sampler_from(grad, domain):
    """Exact normal derivative data of a function with gradient ``grad``."""
    centers, radii = domain.circle_centers(), domain.circle_radii()

    def g(k, theta):
        e = np.exp(1j * np.asarray(theta))
        gx, gy = grad(centers[k] + radii[k] * e)
        return gx * e.real + gy * e.imag

    return g


def domain_mean_quadratic(domain):
    """Exact domain mean of ``x^2 - y^2``."""
    def disk(c, r):
        return math.pi * r**2 * (c.real**2 - c.imag**2)

    total = disk(domain.z0, domain.r0) - sum(disk(c, r) for c, r in zip(domain.centers, domain.radii))
    return total / domain.area


# -- oracles ----------------------------------------------------------------------


def test_annulus_log():
    dom = HoleDomain(0j, 2.0, [0j], [1.0])
    rep = solve_neumann(dom, NeumannData.constants([0.5, 1.0]), SolverOptions(modes=8))
    z = interior_points(dom)
    exact = np.log(np.abs(z)) - (4 * math.log(2) - 1.5) / 3
    assert np.abs(evaluate(rep, z) - exact).max() <= 1e-10
    assert abs(mean_value(rep)) <= 1e-13


def test_manufactured_three_holes():
    dom = three_hole_domain()
    grad = lambda z: (2 * z.real, -2 * z.imag)
    data = NeumannData.from_sampler(dom, sampler_from(grad, dom), modes=32)
    rep = solve_neumann(dom, data, SolverOptions(modes=32))
    z = interior_points(dom, 2000)
    exact = z.real**2 - z.imag**2 - domain_mean_quadratic(dom)
    assert np.abs(evaluate(rep, z) - exact).max() <= 1e-8
    g = evaluate_gradient(rep, z)
    assert np.abs(g[:, 0] - 2 * z.real).max() <= 1e-8
    assert np.abs(g[:, 1] + 2 * z.imag).max() <= 1e-8
    H = evaluate_hessian(rep, z)
    assert np.abs(H - np.diag([2.0, -2.0])).max() <= 1e-7
    assert boundary_residual(rep, data, 257) <= 1e-9


def test_manufactured_with_flux():
    # u = log|y - z1| - log|y - z2| + Re y^3: nonzero flux through two holes
    dom = three_hole_domain(0.12)
    z1, z2 = dom.centers[0], dom.centers[1]

    def grad(z):
        w = 1 / np.conj(z - z1) - 1 / np.conj(z - z2) + np.conj(3 * z**2)
        return w.real, w.imag

    data = NeumannData.from_sampler(dom, sampler_from(grad, dom), modes=40)
    rep = solve_neumann(dom, data, SolverOptions(modes=40))
    z = interior_points(dom, 1000)
    u = np.log(np.abs(z - z1)) - np.log(np.abs(z - z2)) + (z**3).real
    diff = evaluate(rep, z) - u
    assert np.ptp(diff) <= 1e-8
    assert np.allclose(rep.alpha, [1.0, -1.0, 0.0], atol=1e-12)


def test_disk_against_green_representation():
    dom = HoleDomain(0j, 1.0, [], [])
    g = lambda th: np.cos(2 * th) + 0.3 * np.sin(5 * th)
    data = NeumannData((CircleData(0.0, [0, 1.0, 0, 0, 0], [0, 0, 0, 0, 0.3]),))
    rep = solve_neumann(dom, data, SolverOptions(modes=8))
    x = 0.7 * np.exp(1j * np.linspace(0.1, 6.0, 25)) * np.linspace(0.2, 1.0, 25)
    ug = disk_neumann_via_green(g, x, 1.0, modes=64)
    diff = evaluate(rep, x) - ug
    assert np.ptp(diff) <= 1e-10
    exact = x**2 / 2 + 0.3 / 5 * (-1j * x**5)
    assert np.abs(evaluate(rep, x) - exact.real).max() <= 1e-12


def test_green_boundary_reduction_and_zero_flux():
    R = 1.7
    x = np.array([0.3 + 0.4j, -1.1 + 0.2j])
    th = np.linspace(0, 2 * np.pi, 13)
    y = R * np.exp(1j * th)
    for xx in x:
        full = green_neumann_disk(xx, y, R)
        red = green_neumann_disk_boundary(xx, y, R)
        assert np.allclose(full, red, atol=1e-13)
        # normal derivative in y vanishes on the circle
        h = 1e-5
        dn = (green_neumann_disk(xx, y * (1 + h / R), R) - green_neumann_disk(xx, y * (1 - h / R), R)) / (2 * h)
        assert np.abs(dn).max() <= 1e-8
    with pytest.raises(ValueError):
        green_neumann_disk(0j, y, R)


def test_green_discrete_laplacian():
    # Lap_y G = 1 / (pi R^2) away from x
    R, x = 1.0, 0.2 + 0.1j
    y, h = np.array([-0.4 + 0.3j, 0.5 - 0.5j]), 1e-3
    G = lambda p: green_neumann_disk(x, p, R)
    lap = (G(y + h) + G(y - h) + G(y + 1j * h) + G(y - 1j * h) - 4 * G(y)) / h**2
    assert np.allclose(lap, 1 / (math.pi * R**2), rtol=1e-5)


def test_green_reflection_symmetry():
    rng = np.random.default_rng(3)
    R = 1.3
    x1 = R * np.sqrt(rng.uniform(0.01, 0.95, 50)) * np.exp(2j * np.pi * rng.uniform(size=50))
    x2 = R * np.sqrt(rng.uniform(0.01, 0.95, 50)) * np.exp(2j * np.pi * rng.uniform(size=50))
    star = lambda z: R**2 * z / np.abs(z) ** 2
    lhs = np.abs(x1) * np.abs(star(x1) - x2)
    rhs = np.abs(x2) * np.abs(x1 - star(x2))
    assert np.allclose(lhs, rhs, rtol=1e-13)
    # so G is symmetric up to a sum of one-point terms
    k = lambda z: np.log(np.abs(z)) / (2 * np.pi) - np.abs(z) ** 2 / (4 * np.pi * R**2)
    asym = green_neumann_disk(x1, x2, R) - green_neumann_disk(x2, x1, R)
    assert np.allclose(asym, k(x1) - k(x2), atol=1e-13)


@pytest.mark.parametrize("m", [1, 2])
def test_green_representation_of_cosines(m):
    # g = cos(m theta) on the unit circle has solution Re(z^m) / m up to a constant
    z = 0.8 * np.sqrt(np.linspace(0.01, 1, 40)) * np.exp(1j * np.linspace(0, 6, 40))
    u = disk_neumann_via_green(lambda th: np.cos(m * th), z)
    assert np.ptp(u - (z**m).real / m) <= 1e-8
    h = 1e-5
    ux = (disk_neumann_via_green(lambda th: np.cos(m * th), z + h)
          - disk_neumann_via_green(lambda th: np.cos(m * th), z - h)) / (2 * h)
    assert np.abs(ux - (m * z ** (m - 1)).real / m).max() <= 1e-8


def test_green_representation_of_zero_data():
    u = disk_neumann_via_green(lambda th: 0 * th, [0.1, 0.5j, -0.3 - 0.3j])
    assert np.ptp(u) == 0.0


def test_green_rejects_nonzero_mean():
    with pytest.raises(ValueError):
        disk_neumann_via_green(lambda th: 1.0 + 0 * th, [0.1j])


def test_poincare_probe_disk():
    for R in (1.0, 2.5):
        assert poincare_probe(HoleDomain(0j, R, [], [])) == pytest.approx(R / 2, rel=1e-12)


def test_poincare_probe_positive_with_holes():
    assert poincare_probe(three_hole_domain()) > 0.3


# -- the mean value ---------------------------------------------------------------


def random_rep(domain, M=4, seed=3):
    rng = np.random.default_rng(seed)
    hole = (rng.normal(size=(domain.n, M)) + 1j * rng.normal(size=(domain.n, M))) / 2.0 ** np.arange(M)
    outer = (rng.normal(size=M) + 1j * rng.normal(size=M)) / 2.0 ** np.arange(M)
    return HarmonicRepresentation(domain, 0.3, rng.normal(size=domain.n), hole, outer)


def test_mean_value_matches_quadrature():
    dom = three_hole_domain()
    rep = random_rep(dom)
    # masked midpoint rule; first-order accurate at the circles
    n = 1600
    h = 2.0 / n
    xs = -1 + h * (np.arange(n) + 0.5)
    total = 0.0
    for row in xs:
        z = xs + 1j * row
        z = z[dom.contains(z) & (np.abs(z) < 1)]
        if len(z):
            total += rep.value(z).sum() * h * h
    assert mean_value(rep) == pytest.approx(total / dom.area, abs=1e-4)


def test_solution_is_mean_free():
    dom = three_hole_domain()
    data = NeumannData(tuple(CircleData(0.0, [1.0], [0.5]) for _ in range(4)))
    rep = solve_neumann(dom, data)
    assert abs(mean_value(rep)) <= 1e-13


# -- tangential derivative ---------------------------------------------------------


def test_tangential_derivative_of_quadratic():
    dom = three_hole_domain()
    grad = lambda z: (2 * z.real, -2 * z.imag)
    rep = solve_neumann(dom, NeumannData.from_sampler(dom, sampler_from(grad, dom)))
    for k in range(dom.n + 1):
        c, r = dom.circle_centers()[k], dom.circle_radii()[k]
        th = np.linspace(0, 2 * np.pi, 50)
        e = np.exp(1j * th)
        gx, gy = grad(c + r * e)
        exact = -gx * e.imag + gy * e.real
        td = tangential_derivative(rep, k)
        assert td.const == 0.0
        assert np.abs(td(th) - exact).max() <= 1e-8
    with pytest.raises(IndexError):
        tangential_derivative(rep, 9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.floats(-2, 2), st.floats(-2, 2))
def test_circle_data_fourier_round_trip(m, a, b):
    cos = np.zeros(12)
    sin = np.zeros(12)
    cos[m - 1], sin[m - 1] = a, b
    c = CircleData(0.5, cos, sin)
    th = 2 * np.pi * np.arange(128) / 128
    back = CircleData.from_samples(c(th), 12)
    assert back.const == pytest.approx(0.5, abs=1e-13)
    assert np.allclose(back.cos, cos, atol=1e-13) and np.allclose(back.sin, sin, atol=1e-13)


# -- failure modes ----------------------------------------------------------------


def test_incompatible_data_rejected():
    dom = three_hole_domain()
    data = NeumannData.constants([1.0, 0.0, 0.0, 0.0])
    assert check_compatibility(dom, data) == pytest.approx(2 * math.pi)
    with pytest.raises(SolverError):
        solve_neumann(dom, data)


def test_wrong_circle_count():
    with pytest.raises(ValueError):
        check_compatibility(three_hole_domain(), NeumannData.constants([0.0]))


def test_near_touching_holes_rejected():
    dom = HoleDomain(0j, 1.0, [-0.3, 0.3 + 0j], [0.2999, 0.2999])
    with pytest.raises(SolverError):
        solve_neumann(dom, NeumannData.constants([0.0, 0.0, 0.0]))


def test_unresolved_data_reports_residual():
    dom = three_hole_domain()
    # sharp data on the outer circle cannot be resolved with four modes
    def g(k, th):
        if k:
            return 0 * th
        return np.where(np.cos(th) > 0, 1.0, -1.0)

    data = NeumannData.from_sampler(dom, g, modes=4)
    with pytest.raises(SolverError) as exc:
        solve_neumann(dom, data, SolverOptions(modes=4))
    assert exc.value.residual > 1e-3


def test_evaluate_rejects_outside_points():
    dom = three_hole_domain()
    rep = solve_neumann(dom, NeumannData.constants([0.0] * 4))
    with pytest.raises(ValueError):
        evaluate(rep, [dom.centers[0]])
    with pytest.raises(ValueError):
        evaluate(rep, [1.5 + 0j])


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(modes=0)
    with pytest.raises(ValueError):
        SolverOptions(modes=8, points=10)
