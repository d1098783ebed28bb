import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beltrami.conditions import (
    FAILS, HOLDS, INCONCLUSIVE, NONE_ESTABLISHED, PhiSpec, PsiFamily, ReportConfig,
    bmo_norm_estimate, circle_average, condition_report, divergence_integral, fmo_growth_check,
    fmo_indicator, log_scale_condition, phi_divergence_criteria, phi_integral, radial_averages,
    ring_norm,
)
from beltrami.errors import InputError
from beltrami.fields import (
    DilatationField, MuField, RadialProfile, RealField, disk_grid, mu_of_radial_profile,
)


@pytest.fixture(scope="module")
def g256():
    return disk_grid(256)


@pytest.fixture(scope="module")
def g512():
    return disk_grid(512)


def _log_field(g):
    """log(1/|z|) with the centre sample clipped to the largest finite value."""
    u = RealField.from_function(g, lambda z: np.log(1 / np.abs(z)))
    v = u.values.copy()
    v[g.mask & ~np.isfinite(v)] = np.nanmax(v[np.isfinite(v)])
    return RealField(g, v)


def _radial(g, fn, kind="KT"):
    return DilatationField.from_radial(g, fn, kind=kind)


# --- BMO ---------------------------------------------------------------------

def test_bmo_constant_is_zero(g256):
    assert bmo_norm_estimate(RealField.from_function(g256, lambda z: 0 * z.real + 3)) < 1e-12


def test_bmo_linear_stable_under_doubling(g256):
    u = RealField.from_function(g256, lambda z: z.real)
    a, b = bmo_norm_estimate(u, 200), bmo_norm_estimate(u, 400)
    assert 0 < a <= 2.0
    assert abs(a - b) <= 0.1 * b


def test_bmo_log_finite(g256):
    val = bmo_norm_estimate(_log_field(g256))
    assert np.isfinite(val) and 0 < val < 2


def test_bmo_too_few_discs():
    g = disk_grid(16)
    u = RealField.from_function(g, lambda z: z.real)
    with pytest.raises(InputError):
        bmo_norm_estimate(u, radius_range=(1.5, 1.9))


# --- FMO ---------------------------------------------------------------------

def test_fmo_constant(g256):
    r = fmo_indicator(RealField.from_function(g256, lambda z: 0 * z.real + 5), 0j)
    assert r.verdict == HOLDS
    assert np.max(r.oscillation) < 1e-12


def test_fmo_log_holds_while_mean_test_fails(g256):
    r = fmo_indicator(_log_field(g256), 0j)
    assert r.verdict == HOLDS
    assert r.sufficient_verdict == FAILS
    assert r.means[-1] > r.means[0]


def test_fmo_inverse_radius_fails(g256):
    u = RealField.from_function(g256, lambda z: 1 / np.abs(z))
    v = u.values.copy()
    v[g256.mask & ~np.isfinite(v)] = np.nanmax(v[np.isfinite(v)])
    r = fmo_indicator(RealField(g256, v), 0j)
    assert r.verdict == FAILS
    assert np.all(np.diff(r.oscillation[-5:]) > 0)


@pytest.mark.parametrize("a, b", [(0.0, 3.0), (7.5, 1.0), (-2.0, 0.25)])
def test_fmo_invariant_under_affine_change(g256, a, b):
    base = _log_field(g256)
    ref = fmo_indicator(base, 0j)
    r = fmo_indicator(RealField(g256, a + b * base.values), 0j)
    assert r.verdict == ref.verdict
    assert np.allclose(r.oscillation, b * ref.oscillation, rtol=1e-9, atol=1e-12)


def test_growth_check_examples(g256):
    zero = fmo_growth_check(RealField.from_function(g256, lambda z: 0 * z.real), 0j)
    assert np.all(zero.ratios == 0) and zero.verdict == HOLDS
    one = fmo_growth_check(RealField.from_function(g256, lambda z: 0 * z.real + 1), 0j)
    assert one.verdict == HOLDS
    # closed form of the weighted ring integral of 1: 2 pi (1/log(1/eps0) - 1/log(1/eps))^{-1} ...
    eps0 = one.eps0
    expect = 2 * np.pi * (1 / np.log(1 / eps0) - 1 / np.log(1 / one.eps))
    assert np.allclose(one.integrals, expect, rtol=1e-3)
    lg = fmo_growth_check(_log_field(g256), 0j)
    assert lg.verdict == HOLDS
    # 1-D quadrature oracle: 2 pi * integral of 1/(r log(1/r)) over (eps, eps0) = 2 pi log(log(1/eps)/log(1/eps0))
    expect = 2 * np.pi * np.log(np.log(1 / lg.eps) / np.log(1 / eps0))
    assert np.allclose(lg.integrals, expect, rtol=5e-3)


# --- circle averages / ring norms ----------------------------------------------

def test_circle_average_examples(g256):
    K1 = _radial(g256, np.ones_like, "K")
    KL = _radial(g256, lambda r: 1 + np.log(1 / r), "K")
    for e in (0.1, 0.3, 0.7):
        assert abs(circle_average(K1, 0j, e) - 1) < 1e-12
        assert abs(circle_average(KL, 0j, e) - (1 + np.log(1 / e))) < 1e-4 * (1 + np.log(1 / e))


def test_circle_average_profile_growth_class(g256):
    mu = mu_of_radial_profile(RadialProfile("log-degenerate"), g256)
    from beltrami.fields import tangent_dilatation
    Kt = tangent_dilatation(mu, 0j)
    ra = radial_averages(Kt, 0j, [0.4, 0.2, 0.1, 0.05])
    ratio = ra.values / np.log(1 / ra.radii)
    assert np.all(ratio < 3)


def test_ring_norm_examples(g256):
    K1 = _radial(g256, np.ones_like)
    KL = _radial(g256, lambda r: 1 + np.log(1 / r))
    for r in (0.2, 0.5, 0.8):
        assert abs(ring_norm(K1, 0j, r) - 2 * np.pi * r) < 1e-10 * r
        assert abs(ring_norm(KL, 0j, r) / (2 * np.pi * r * (1 + np.log(1 / r))) - 1) < 1e-4
    half = g256.with_mask(g256.mask & (g256.z.imag >= 0))
    Kh = _radial(half, np.ones_like)
    assert abs(ring_norm(Kh, 0j, 0.5) - np.pi * 0.5) < 4 * half.h


@given(st.floats(0.05, 0.9), st.floats(0, 2 * np.pi), st.floats(0, 0.05))
def test_ring_norm_is_average_times_length(r, th, off):
    g = disk_grid(64, radius=2.0)
    z0 = off * np.exp(1j * th)
    K = _radial(g, lambda s: 1 + s ** 2)
    assert abs(ring_norm(K, z0, r) - 2 * np.pi * r * circle_average(K, z0, r)) <= 1e-10 * ring_norm(K, z0, r)


def test_circle_average_short_arc_raises(g256):
    K1 = _radial(g256, np.ones_like)
    with pytest.raises(InputError):
        circle_average(K1, 3.0 + 0j, 0.5)


# --- divergence integral -----------------------------------------------------

@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_divergence_constant_diverges(g512, c):
    d = divergence_integral(_radial(g512, lambda r: c * np.ones_like(r)), 0j, 0.5)
    assert d.verdict == HOLDS and d.classification == "diverges"
    assert np.allclose(d.partials, np.log(0.5 / d.eps) / (2 * np.pi * c), rtol=1e-12)


@pytest.mark.parametrize("z0", [0.3 + 0.2j, -0.1 - 0.4j])
def test_divergence_constant_off_centre(g512, z0):
    assert divergence_integral(_radial(g512, np.ones_like), z0, 0.4).verdict == HOLDS


def test_divergence_log_profile(g512):
    d = divergence_integral(_radial(g512, lambda r: 1 + np.log(1 / r)), 0j, 0.5)
    expect = np.log((1 + np.log(1 / d.eps)) / (1 + np.log(2))) / (2 * np.pi)
    assert np.allclose(d.partials, expect, rtol=1e-5)
    assert d.verdict == HOLDS


def test_divergence_inverse_radius_not_established(g512):
    d = divergence_integral(_radial(g512, lambda r: 1 / r), 0j, 0.5)
    assert d.classification == "converges"
    assert d.verdict == INCONCLUSIVE
    assert np.allclose(d.partials, (0.5 - d.eps) / (2 * np.pi), rtol=1e-3)


# --- Phi ---------------------------------------------------------------------

def test_phi_integral_examples(g256):
    K1 = _radial(g256, np.ones_like, "K")
    assert abs(phi_integral(K1, PhiSpec("exp")) / (np.pi * np.e) - 1) < 5e-3
    KL = _radial(g256, lambda r: 1 + np.log(1 / r), "K")
    assert abs(phi_integral(KL, PhiSpec("exp")) / (2 * np.pi * np.e) - 1) < 5e-3
    K0 = DilatationField(g256, np.full((g256.ny, g256.nx), 1e-300))
    assert phi_integral(K0, PhiSpec("power", {"p": 2})) == 0.0


def test_phi_integral_overflow_is_inf(g256):
    Kbig = _radial(g256, lambda r: np.exp(1 / r))
    assert phi_integral(Kbig, PhiSpec("exp")) == np.inf


@pytest.mark.parametrize("spec, base", [
    (PhiSpec("exp"), "diverges"),
    (PhiSpec("exp", {"alpha": 3.0}), "diverges"),
    (PhiSpec("log-composite", {"alpha": 1.0, "gamma": 1.0}), "diverges"),
    (PhiSpec("power", {"p": 2}), "converges"),
    (PhiSpec("power", {"p": 1.5}), "converges"),
    (PhiSpec("log-composite", {"alpha": 1.0, "gamma": 0.0}), "diverges"),
])
def test_phi_criteria_agree(spec, base):
    r = phi_divergence_criteria(spec)
    assert r.base == base
    assert r.agree, r.verdicts
    assert len(r.verdicts) == 6


def test_phi_rejects_non_convex():
    with pytest.raises(InputError):
        PhiSpec("table", {"t": [0, 1, 2, 3], "log_phi": [0, 3, 3.5, 3.6]})


def test_phi_short_table_inconclusive():
    t = np.linspace(0, 5, 6)
    r = phi_divergence_criteria(PhiSpec("table", {"t": t, "log_phi": t}))
    assert r.base == "inconclusive" and not r.agree


# --- log-scale conditions ----------------------------------------------------

@pytest.fixture(scope="module")
def small_disk():
    return disk_grid(1024, radius=0.3)


@pytest.mark.parametrize("depth", [0, 1])
def test_log_scale_constant_holds(small_disk, depth):
    K1 = _radial(small_disk, np.ones_like)
    psi = PsiFamily(depth, 0.25)
    r = log_scale_condition(K1, 0j, psi, min_levels=6)
    assert r.verdict == HOLDS
    if depth == 0:
        assert np.allclose(r.ratios, 2 * np.pi / np.log(0.25 / r.eps), rtol=1e-6)


def test_log_scale_needs_enough_levels(g256):
    r = log_scale_condition(_radial(g256, np.ones_like), 0j, PsiFamily(0, 0.25))
    assert r.verdict == INCONCLUSIVE


def test_log_scale_exp_fails(g256):
    r = log_scale_condition(_radial(g256, lambda r: np.exp(1 / r)), 0j, PsiFamily(0, 0.5))
    assert r.verdict == FAILS


def test_psi_family_closed_form():
    psi = PsiFamily(1, 0.25)
    from scipy.integrate import quad
    val, _ = quad(psi, 1e-3, 0.25)
    assert abs(psi.I(1e-3) - val) < 1e-8
    with pytest.raises(InputError):
        PsiFamily(2, 0.9)


# --- report ------------------------------------------------------------------

@pytest.mark.parametrize("n", [128, 256])
def test_report_zero_mu_is_fmo(n):
    g = disk_grid(n)
    rep = condition_report(MuField.constant(g, 0.0), [0j, 0.3 + 0.2j])
    assert rep.routes == ["FMO", "FMO"]
    assert rep.overall_route == "FMO"


def test_report_log_profile_log_average(g256):
    mu = mu_of_radial_profile(RadialProfile("log-degenerate"), g256)
    rep = condition_report(mu, [0j])
    assert rep.routes[0] == "log-average"


def test_report_exp_profile_none(g256):
    mu = mu_of_radial_profile(RadialProfile("exp-degenerate"), g256, sanitize=True)
    rep = condition_report(mu, [0j])
    assert rep.routes[0] == NONE_ESTABLISHED
    assert rep.overall_route == NONE_ESTABLISHED


def test_report_serialisations():
    rep = condition_report(MuField.constant(disk_grid(128), 0.2), [0j], ReportConfig())
    d = json.loads(rep.to_json())
    assert d["overall_route"] == "FMO"
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "point,x,y,criterion,verdict"
    assert rows[-1].endswith("route,FMO")


def test_report_needs_points():
    with pytest.raises(InputError):
        condition_report(MuField.constant(disk_grid(32), 0.0), [])
