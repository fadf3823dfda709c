import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hktl import (
    GeometricFamily,
    HarmonicPotential,
    PointSource,
    chern_flux,
    gauge_one_form,
    potential_one_form,
    truncate_a_infinity,
)
from hktl.errors import (
    CapabilityError,
    ConfigError,
    DivergenceRiskError,
    GaugeStringError,
    HarmonicityError,
    QuadratureHazardError,
    SingularityError,
)
from hktl.exterior import batch, ext_d, sweep
from hktl.potentials import monopole_residual_form, poly_laplacian


def off_axis_points(rng, n, sources, margin=0.05):
    out = []
    while len(out) < n:
        p = rng.uniform(-2, 2, size=3)
        ok = True
        for c in sources:
            d = p - np.asarray(c)
            if np.linalg.norm(d) < margin or np.hypot(d[0], d[1]) < margin:
                ok = False
        if ok:
            out.append(p)
    return np.array(out)


# -- evaluation -------------------------------------------------------------


def test_eval_examples():
    assert HarmonicPotential.point()((1.0, 0.0, 0.0)) == pytest.approx(0.5, abs=1e-15)
    assert HarmonicPotential.point(constant=1.0)((0.0, 0.0, 2.0)) == pytest.approx(1.25, abs=1e-15)
    v, g, _ = HarmonicPotential(poly={"x^2": 1.0, "y^2": -1.0}).eval((1.0, 1.0, 0.0))
    assert v == 0.0
    np.testing.assert_allclose(g, [2.0, -2.0, 0.0])


def test_eval_near_source_raises():
    with pytest.raises(SingularityError):
        HarmonicPotential.point((1.0, 0.0, 0.0)).eval((1.0, 0.0, 5e-8))


def test_invalid_sources():
    with pytest.raises(ValueError):
        PointSource((0.0, 0.0, 0.0), 2)
    with pytest.raises(ValueError):
        HarmonicPotential(0.0, [PointSource((0, 0, 0)), PointSource((0, 0, 1e-10))])


def test_harmonicity_required():
    with pytest.raises(HarmonicityError):
        HarmonicPotential(poly={"x^2": 1.0})
    raw = HarmonicPotential.raw({"x^2": 1.0, "y^2": 1.0, "z^2": 1.0})
    assert not raw.is_harmonic
    assert raw.laplacian_residual((0.3, -0.2, 0.9)) == pytest.approx(6.0, abs=1e-12)
    assert poly_laplacian({(1, 1, 0): 1.0, (0, 0, 3): 2.0}) == {(0, 0, 1): 12.0}


def test_laplacian_residuals(rng):
    V = HarmonicPotential(
        0.7,
        [PointSource((0.5, 0.0, 0.0), 1), PointSource((-0.5, 0.2, 0.1), -1)],
        {"x*y": 1.0, "x^2": 1.0, "z^2": -1.0, "x*y*z": 0.4, "z": 2.0},
    )
    pts = off_axis_points(rng, 1000, [s.center for s in V.sources])
    res = sweep(batch(V.laplacian_fn), pts)
    assert np.max(np.abs(res)) <= 1e-12 * np.max(np.abs(sweep(batch(lambda p: V.hess_fn(p)[0, 0]), pts)))
    unit = HarmonicPotential.point()
    assert abs(unit.laplacian_residual((0.0, 1.0, 0.0))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_superposition(x, y, z):
    a = HarmonicPotential(1.0, [PointSource((0.0, 0.0, 5.0), 1)], {"x*y": 2.0})
    b = HarmonicPotential(-0.5, [PointSource((5.0, 0.0, 0.0), -1)], {"z": 1.0})
    p = (x, y, z)
    s = a + b
    assert s.constant == a.constant + b.constant
    assert s.sources == a.sources + b.sources
    assert s.poly == {**a.poly, **b.poly}
    # equal up to summation order
    assert s(p) == pytest.approx(a(p) + b(p), rel=4e-16, abs=4e-16)


def test_potential_roundtrip():
    V = HarmonicPotential(0.5, [PointSource((1.0, 2.0, 3.0), -1)], {"x*z": 1.5})
    W = HarmonicPotential.from_dict(V.to_dict())
    assert W.to_dict() == V.to_dict()
    with pytest.raises(ConfigError):
        HarmonicPotential.from_dict({"constant": 1.0, "bogus": 2})


# -- gauges -------------------------------------------------------------


@pytest.mark.parametrize("patch", ["north", "south"])
def test_gauge_monopole_residual(rng, patch):
    src = PointSource((0.2, -0.1, 0.3), 1)
    V = HarmonicPotential(0.0, [src])
    om = gauge_one_form(src, patch)
    pts = off_axis_points(rng, 1000, [src.center])
    res = monopole_residual_form(V, om).fn
    worst = sweep(batch(lambda p: abs(res(p)).max()), pts)
    assert worst.max() <= 1e-6
    # finite-difference oracle on the same gauge
    fd, dom = ext_d(om, analytic=False).fn, ext_d(om).fn
    gap = sweep(batch(lambda p: abs(fd(p) - dom(p)).max()), pts[:200])
    assert gap.max() <= 1e-5


def test_gauge_string_raises():
    om = gauge_one_form(PointSource((0.0, 0.0, 0.0), 1), "north")
    with pytest.raises(GaugeStringError):
        om(np.array([0.0, 0.0, -1.0]))
    om(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(GaugeStringError):
        gauge_one_form(PointSource((0.0, 0.0, 0.0), 1), "south")(np.array([0.0, 0.0, 1.0]))


def test_patch_difference_is_closed(rng):
    src = PointSource((0.0, 0.0, 0.0), 1)
    diff = gauge_one_form(src, "north") - gauge_one_form(src, "south")
    d = ext_d(diff)
    for p in off_axis_points(rng, 20, [src.center], margin=0.2):
        rho2 = p[0] ** 2 + p[1] ** 2
        np.testing.assert_allclose(diff(p), [-p[1] / rho2, p[0] / rho2, 0.0], atol=1e-12)
        assert np.max(np.abs(d(p))) <= 1e-10


def test_sigma_flips_sign():
    p = np.array([0.3, 0.4, 0.5])
    a = gauge_one_form(PointSource((0, 0, 0), 1))(p)
    b = gauge_one_form(PointSource((0, 0, 0), -1))(p)
    np.testing.assert_array_equal(a, -b)


def test_potential_one_form_examples(rng):
    V = HarmonicPotential(0.0, [PointSource((1, 0, 0), 1), PointSource((-1, 0, 0), 1)])
    res = monopole_residual_form(V, potential_one_form(V)).fn
    pts = off_axis_points(rng, 1000, [s.center for s in V.sources])
    assert sweep(batch(lambda p: abs(res(p)).max()), pts).max() <= 1e-6
    p = np.array([0.3, 0.2, 0.1])
    np.testing.assert_array_equal(potential_one_form(HarmonicPotential(2.0))(p), np.zeros(3))
    src = PointSource((0.1, 0.2, 0.3), -1)
    np.testing.assert_array_equal(
        potential_one_form(HarmonicPotential(0.0, [src]))(p), gauge_one_form(src)(p)
    )


def test_linear_part_gauge(rng):
    V = HarmonicPotential(1.0, [PointSource((0, 0, 0), 1)], {"x": 0.3, "z": -0.2})
    res = monopole_residual_form(V, potential_one_form(V)).fn
    pts = off_axis_points(rng, 200, [(0, 0, 0)])
    assert sweep(batch(lambda p: abs(res(p)).max()), pts).max() <= 1e-6


def test_higher_degree_gauge_unsupported():
    with pytest.raises(CapabilityError):
        potential_one_form(HarmonicPotential(poly={"x*y": 1.0}))


# -- flux ----------------------------------------------------------------


@pytest.mark.parametrize(
    "sources,expected",
    [([((0, 0, 0), 1)], 1), ([((0, 0, 0), -1)], -1), ([((0.2, 0, 0), 1), ((-0.2, 0.1, 0), 1)], 2), ([], 0)],
)
def test_flux_integers(sources, expected):
    h = HarmonicPotential(0.5, [PointSource(c, s) for c, s in sources], {"x*y": 1.0})
    t0 = time.perf_counter()
    flux = chern_flux(h, (0.0, 0.0, 0.0), 1.0)
    assert time.perf_counter() - t0 <= 1.0
    assert abs(flux - expected) <= 1e-3


def test_flux_radius_invariance():
    h = HarmonicPotential(0.0, [PointSource((0.1, 0.0, 0.0), 1), PointSource((2.0, 0.0, 0.0), -1)])
    a = chern_flux(h, (0.0, 0.0, 0.0), 0.5)
    b = chern_flux(h, (0.0, 0.0, 0.0), 1.5)
    c = chern_flux(h, (0.0, 0.0, 0.0), 3.0)
    assert abs(a - b) <= 2e-3
    assert abs(a - 1.0) <= 1e-3 and abs(c) <= 1e-3


def test_flux_hazard():
    h = HarmonicPotential.point((1.0, 0.0, 0.0))
    with pytest.raises(QuadratureHazardError):
        chern_flux(h, (0.0, 0.0, 0.0), 1.0 + 1e-4)


# -- A-infinity truncation ---------------------------------------------------


def test_truncation_geometric_tail():
    t = truncate_a_infinity(GeometricFamily(), (0.0, 0.0, 0.0), 1e-8)
    assert t.n_terms >= 27
    assert t.tail_bound < 1e-8
    exact_tail = sum(2.0 ** (-i - 1) for i in range(t.n_terms, t.n_terms + 200))
    assert exact_tail <= t.tail_bound


def test_truncation_loose_and_single():
    t = truncate_a_infinity(GeometricFamily(), (0.1, 0.0, 0.0), 0.5)
    assert t.n_terms <= 3 and t.tail_bound < 0.5
    one = truncate_a_infinity(GeometricFamily(length=1), (0.0, 0.0, 0.0), 1e-8)
    assert len(one.potential.sources) == 1 and one.tail_bound == 0.0


def test_truncation_divergence_risk():
    with pytest.raises(DivergenceRiskError):
        truncate_a_infinity(GeometricFamily(ratio=1.0), (0.0, 0.0, 0.0), 1e-3)
    with pytest.raises(DivergenceRiskError):
        truncate_a_infinity(GeometricFamily(), (1e9, 0.0, 0.0), 1e-3, n_max=5)
