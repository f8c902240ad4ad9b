import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavflow.geometry import (
    AffinePath,
    BlendPath,
    CavitationConfig,
    ConfigError,
    HoleDomain,
    NotAttainableError,
    build_evolution,
    certification_grid,
    check_attainable,
    coalescence_bounds,
    compute_lambda,
    domain_at,
    evolution_clearances,
    packing_density,
    proportional_areas,
    select_excision,
    sigma,
)
from cavflow.packings import MELISSEN_11, MELISSEN_11_RADIUS, melissen_config


def two_sym(v=math.pi / 2, R0=1.0):
    return CavitationConfig(R0, [(0.5, 0.0), (-0.5, 0.0)], [v, v])


def two_sym_lam_sq(lam_sq):
    v = (lam_sq - 1.0) * math.pi / 2
    return two_sym(v)


# -- configuration ------------------------------------------------------------------


def test_sites_accept_pairs_and_complex():
    a = CavitationConfig(1.0, [(0.1, 0.2)], [1.0])
    b = CavitationConfig(1.0, [0.1 + 0.2j], [1.0])
    assert a.sites[0] == b.sites[0]


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(R0=-1.0, sites=[0j], areas=[1.0]), "R0"),
        (dict(R0=1.0, sites=[1.0 + 0j], areas=[1.0]), "sites[0]"),
        (dict(R0=1.0, sites=[0j], areas=[0.0]), "areas[0]"),
        (dict(R0=1.0, sites=[0j, 0.1], areas=[1.0]), "areas"),
        (dict(R0=1.0, sites=[0.1 + 0j, 0.1 + 0j], areas=[1.0, 1.0]), "sites[1]"),
        (dict(R0=1.0, sites=[0.3 + 0j, -0.3 + 0j], areas=[1.0, 1.0], seed_radii=[0.35, 0.3]), "seed_radii[1]"),
        (dict(R0=1.0, sites=[0.8 + 0j], areas=[1.0], seed_radii=[0.25]), "seed_radii[0]"),
    ],
)
def test_invalid_configs_name_the_field(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        CavitationConfig(**kwargs)
    assert exc.value.field == field


# -- scalar formulas ------------------------------------------------------------------


def test_lambda_examples():
    assert compute_lambda(CavitationConfig(1.0, [0j], [3 * math.pi])) == pytest.approx(2.0, abs=1e-15)
    lam = 1.8714
    c = CavitationConfig(1.0, [0j], [math.pi * (lam**2 - 1)])
    assert abs(compute_lambda(c) - lam) < 1e-12
    c = CavitationConfig(2.0, [(0.5, 0), (-0.5, 0)], [math.pi, math.pi])
    assert compute_lambda(c) == pytest.approx(math.sqrt(1.5), abs=1e-15)


def test_sigma_examples():
    assert sigma(CavitationConfig(1.0, [0j], [7.0])) == 1.0
    assert sigma(two_sym()) == pytest.approx(0.5, abs=1e-15)


def test_melissen_packing_density():
    c = melissen_config()
    expected = 11 / (1 + 1 / math.sin(math.pi / 9)) ** 2
    assert packing_density(c) == pytest.approx(expected, abs=1e-8)
    assert sigma(c) == pytest.approx(0.7145, abs=1e-3)
    assert abs(sigma(c) - packing_density(c)) < 1e-14


def test_melissen_coordinates_are_a_packing():
    z = MELISSEN_11[:, 0] + 1j * MELISSEN_11[:, 1]
    i, j = np.triu_indices(11, 1)
    assert np.abs(z[i] - z[j]).min() / 2 == pytest.approx(MELISSEN_11_RADIUS, abs=1e-12)
    assert (1 - np.abs(z)).min() == pytest.approx(MELISSEN_11_RADIUS, abs=1e-12)


def test_packing_density_examples():
    assert packing_density(CavitationConfig(1.0, [0j], [1.0])) == 1.0
    assert packing_density(two_sym()) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ConfigError):
        packing_density(CavitationConfig(1.0, [0.5, -0.5], [1.0, 2.0]))


def test_attainability_examples():
    c = CavitationConfig(1.0, [(0.9, 0.0)], [1e6])
    assert check_attainable(c).attainable
    rep = check_attainable(two_sym_lam_sq(1.9))
    assert rep.attainable and rep.lam**2 == pytest.approx(1.9)
    rep = check_attainable(two_sym_lam_sq(2.5))
    assert not rep.attainable
    assert "not certified" in rep.reason


def test_proportional_areas_examples():
    v = proportional_areas([0.3], 1.0, 1.2)
    assert v[0] == pytest.approx(0.44 * math.pi, rel=1e-14)
    d = np.array([0.2, 0.1, 0.15])
    v = proportional_areas(d, 1.0, 1.3)
    assert v.sum() == pytest.approx((1.3**2 - 1) * math.pi, rel=1e-14)
    assert np.all(proportional_areas(d, 1.0, 1.0 + 1e-12) < 1e-10)
    # at the largest admissible stretch the areas are pi d^2 / (1 - sigma*)
    s = (d**2).sum()
    v = proportional_areas(d, 1.0, 1 / math.sqrt(1 - s))
    assert np.allclose(v, math.pi * d**2 / (1 - s), rtol=1e-13)


def test_proportional_areas_rejects_overlapping_seeds():
    with pytest.raises(ConfigError):
        proportional_areas([0.4, 0.4], 1.0, 1.2, sites=[0.3 + 0j, -0.3 + 0j])


def test_coalescence_bounds_examples():
    lam0, lam_star, s = coalescence_bounds([1 / math.sqrt(2)], [1e-9], 1.0)
    assert s == pytest.approx(0.5) and lam_star == pytest.approx(math.sqrt(2))
    assert lam0 == pytest.approx(1.0, abs=1e-8)
    d = np.array([0.2, 0.3])
    lam0, lam_star, s = coalescence_bounds(d, math.pi * d**2, 1.0)
    assert lam0 == pytest.approx(math.sqrt(1 + s)) and lam0 < lam_star


def test_coalescence_bounds_names_bad_index():
    d = np.array([0.2, 0.3])
    s = (d**2).sum()
    ups = math.pi * d**2 / (1 - s) * np.array([0.5, 1.01])
    with pytest.raises(ConfigError) as exc:
        coalescence_bounds(d, ups, 1.0)
    assert exc.value.field == "min_areas[1]"


def test_melissen_coalescence_load():
    c = melissen_config()
    lam0, lam_star, s = coalescence_bounds(c.seed_radii, c.min_areas, c.R0, c.sites)
    assert lam_star == pytest.approx(1.8714, abs=1e-3)
    assert s == pytest.approx(0.7145, abs=1e-3)
    assert lam0 < lam_star


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.7), st.floats(1e-3, 0.5), st.floats(0.1, 10.0))
def test_coalescence_bounds_ordered(d, frac, scale):
    ups = frac * math.pi * d**2
    lam0, lam_star, _ = coalescence_bounds([d * scale], [ups * scale**2], scale)
    assert lam0 < lam_star


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0))
def test_scale_equivariance(s):
    c = melissen_config()
    cs = c.scaled(s)
    assert sigma(cs) == pytest.approx(sigma(c), rel=1e-12)
    assert compute_lambda(cs) == pytest.approx(compute_lambda(c), rel=1e-12)
    assert check_attainable(cs).attainable == check_attainable(c).attainable
    b = coalescence_bounds(c.seed_radii, c.min_areas, c.R0)
    bs = coalescence_bounds(cs.seed_radii, cs.min_areas, cs.R0)
    assert np.allclose(b, bs, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0.01, 100.0))
def test_single_cavity_always_attainable(x, v):
    assert check_attainable(CavitationConfig(1.0, [complex(x)], [v])).attainable


# -- evolutions -----------------------------------------------------------------------


def test_paths():
    p = AffinePath(0j, 0.5 + 0.1j)
    assert p(2.0) == 1.0 + 0.2j and p.rate(3.0) == 0.5 + 0.1j
    b = BlendPath(0.4 + 0j, 0.5, 8.0)
    assert b(1.0) == pytest.approx(0.4)
    h = 1e-6
    assert (b(1.3 + h) - b(1.3 - h)) / (2 * h) == pytest.approx(b.rate(1.3), rel=1e-7)


def assert_evolution_invariants(evo, config):
    t = certification_grid(evo.lam)
    assert len(t) >= 1000
    L2 = evo.cavity_radius_sq(t)
    np.testing.assert_allclose(L2.sum(axis=1), (t**2 - 1) * config.R0**2, rtol=1e-12, atol=1e-15)
    assert np.allclose(evo.center(1.0), config.sites, atol=1e-14)
    assert np.allclose(evo.cavity_radius_sq(1.0), 0.0)
    assert np.allclose(evo.final_areas(), config.areas, rtol=1e-12)
    r = evo.hole_radius(t)
    gaps, outer = evolution_clearances(evo.center(t), r, t, config.R0)
    d = evo.margin
    assert gaps.min() >= 2 * d * (1 - 1e-12) and outer.min() >= 2 * d * (1 - 1e-12)
    assert r.min() >= d and r.max() <= evo.r_max
    # area is conserved
    A = np.pi * ((t * config.R0) ** 2 - (r**2).sum(axis=1))
    A0 = np.pi * (config.R0**2 - (evo.excision_radii**2).sum())
    assert np.abs(A - A0).max() <= 1e-10 * np.pi * config.R0**2


def test_concentric_evolution():
    c = CavitationConfig(1.0, [0j], [math.pi])
    evo = build_evolution(c)
    assert np.all(evo.center(np.linspace(1, evo.lam, 7)) == 0)
    # clearance lam R0 - L(lam) is smallest at the end
    assert evo.excision_radii[0] == pytest.approx(0.25 * (math.sqrt(2) - 1), rel=1e-12)
    assert_evolution_invariants(evo, c)


def test_symmetric_pair_evolution():
    c = two_sym_lam_sq(1.9)
    evo = build_evolution(c)
    assert evo.excision_radii[0] == pytest.approx(evo.excision_radii[1], rel=1e-14)
    assert_evolution_invariants(evo, c)


@pytest.mark.parametrize("a", [0.4, 0.9, -0.3 + 0.5j])
def test_single_off_center_evolution(a):
    c = CavitationConfig(1.0, [complex(a)], [0.5 * math.pi])
    evo = build_evolution(c)
    t = np.linspace(1.0, evo.lam, 50)
    z = evo.center(t)[:, 0]
    assert z[0] == pytest.approx(a, abs=1e-15)
    # the site slides straight towards the origin
    assert np.all(np.diff(np.abs(z)) < 0)
    assert np.allclose(np.angle(z), np.angle(a), atol=1e-12)
    assert_evolution_invariants(evo, c)


def test_melissen_evolution():
    c = melissen_config(lam=1.2)
    assert_evolution_invariants(build_evolution(c), c)


def test_not_attainable_raises():
    with pytest.raises(NotAttainableError):
        build_evolution(two_sym_lam_sq(2.5))


def test_beta_halving():
    c = two_sym_lam_sq(1.9)
    evo = build_evolution(c)
    coarse = select_excision(evo, c, beta=0.25)
    small = select_excision(evo, c, beta=1 / 16)
    assert small.excision_radii[0] == pytest.approx(coarse.excision_radii[0] / 4)


def test_domain_at():
    c = CavitationConfig(1.0, [0.3, -0.4j], [0.1, 0.15])
    evo = build_evolution(c)
    d1 = domain_at(evo, 1.0)
    assert np.allclose(d1.radii, evo.excision_radii)
    dl = domain_at(evo, evo.lam)
    assert np.allclose(dl.radii**2, c.areas / np.pi + evo.excision_radii**2)
    for t in np.linspace(1, evo.lam, 9):
        assert abs(domain_at(evo, t).area - d1.area) <= 1e-12 * d1.area
    with pytest.raises(ValueError):
        domain_at(evo, evo.lam + 0.1)


def test_hole_domain_validation():
    with pytest.raises(ValueError):
        HoleDomain(0j, 1.0, [0.5, -0.5], [0.6, 0.1])
    with pytest.raises(ValueError):
        HoleDomain(0j, 1.0, [0.9], [0.2])
    dom = HoleDomain(0j, 1.0, [0.5], [0.1])
    assert dom.contains(np.array([0.0, 0.5, 0.61, 1.0]), 0).tolist() == [True, False, True, True]
