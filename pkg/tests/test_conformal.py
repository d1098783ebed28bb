import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beltrami.conformal import (
    AccuracyWarning, AnnulusHarmonic, BoundaryData, DirichletConfig, JordanBoundary,
    annulus_harmonic_dirichlet, boundary_error, boundary_error_details, compose_dirichlet,
    conjugate_period, dirichlet_solve, riemann_map, schwarz_integral,
)
from beltrami.errors import InputError, NumericFailure, RouteNotEstablished
from beltrami.fields import ComplexMapField, MuField, RadialProfile, RealField, disk_grid, mu_of_radial_profile
from beltrami.solver import SolverConfig

RNG = np.random.default_rng(2024)
DISK_PTS = 0.9 * np.sqrt(RNG.random(300)) * np.exp(2j * np.pi * RNG.random(300))


def _angles(n):
    return 2 * np.pi * np.arange(n) / n


# --- boundaries --------------------------------------------------------------

def test_boundary_basic_geometry():
    b = JordanBoundary.circle(256, 2.0, 1 + 1j)
    # inscribed polygon: area N/2 r^2 sin(2 pi/N), perimeter 2 N r sin(pi/N)
    assert abs(b.area - 128 * 4 * np.sin(2 * np.pi / 256)) < 1e-12
    assert abs(b.centroid - (1 + 1j)) < 1e-12
    assert abs(b.length - 2 * 256 * 2 * np.sin(np.pi / 256)) < 1e-12
    assert np.all(b.contains(np.array([1 + 1j, 2.5 + 1j])))
    assert not b.contains(np.array([3.5 + 1j]))[0]


def test_boundary_reorients_and_drops_closing_point():
    z = np.exp(-1j * _angles(128))
    b = JordanBoundary(np.append(z, z[0]))
    assert b.n == 128 and b.area > 0


def test_boundary_rejects_self_intersection():
    t = _angles(200)
    eight = np.sin(t) + 0.5j * np.sin(2 * t)
    with pytest.raises(InputError, match="self-intersection"):
        JordanBoundary(eight)


def test_boundary_needs_samples():
    with pytest.raises(InputError):
        JordanBoundary(np.exp(1j * _angles(10)))


def test_boundary_csv_roundtrip(tmp_path):
    b = JordanBoundary.ellipse(128, 1.2, 0.8)
    phi = BoundaryData.from_function(b, lambda z: z.real ** 2)
    p = tmp_path / "b.csv"
    b.to_csv(p, phi.phi)
    b2, phi2 = JordanBoundary.from_csv(p)
    assert np.allclose(b2.samples, b.samples, rtol=0, atol=1e-15)
    assert np.allclose(phi2.phi, phi.phi, rtol=0, atol=1e-15)
    b.to_csv(tmp_path / "c.csv")
    assert JordanBoundary.from_csv(tmp_path / "c.csv")[1] is None


def test_boundary_data_linear_between_samples():
    b = JordanBoundary.circle(64)
    phi = BoundaryData.from_function(b, lambda z: z.imag)
    mid = 0.5 * (b.samples[3] + b.samples[4])
    assert abs(phi.at(np.array([mid]))[0] - 0.5 * (phi.phi[3] + phi.phi[4])) < 1e-12
    with pytest.raises(InputError):
        BoundaryData(b, np.full(b.n, np.nan))


# --- Riemann map ---------------------------------------------------------------

def test_riemann_unit_circle_identity():
    R = riemann_map(JordanBoundary.circle(256), anchor=0)
    assert np.max(np.abs(R(DISK_PTS) - DISK_PTS)) < 1e-8


def test_riemann_scaled_circle():
    R = riemann_map(JordanBoundary.circle(256, 2.0), anchor=0)
    assert np.max(np.abs(R(2 * DISK_PTS) - DISK_PTS)) < 1e-8


def test_riemann_ellipse_residual_and_refinement():
    b = JordanBoundary.ellipse(512, 1.2, 0.8)
    R = riemann_map(b, anchor=0)
    assert R.conformality_residual < 1e-6
    R2 = riemann_map(b, anchor=0, n_nodes=4096, residual_check=False)
    w = 0.95 * np.array([1.2, 0.8j, -0.6 + 0.4j, 0.3 - 0.5j, 0])
    assert np.max(np.abs(R(w) - R2(w))) < 1e-5
    assert abs(R(np.array([0j]))[0]) < 1e-12
    d = R.derivative_at_anchor()
    assert d.real > 0 and abs(d.imag) < 1e-10


def test_riemann_inverse_roundtrip():
    b = JordanBoundary.ellipse(512, 1.2, 0.8)
    R = riemann_map(b, anchor=0)
    w = 0.8 * np.array([1.0, 0.7j, -0.5 + 0.3j])
    assert np.max(np.abs(R.inverse(R(w)) - w)) < 1e-8


def test_riemann_boundary_correspondence_monotone():
    R = riemann_map(JordanBoundary.ellipse(256, 2.0, 0.5))
    th = R.theta
    assert np.all(np.diff(th) > 0)
    assert abs(th[-1] - th[0] - 2 * np.pi) < 2 * np.pi / 32
    beta = np.linspace(0, 2 * np.pi, 17)[:-1] + th[0]
    t = R.parameter_of_angle(beta)
    assert np.max(np.abs(R.angle_at(t) - beta)) < 1e-9


def test_riemann_anchor_outside():
    with pytest.raises(InputError, match="outside"):
        riemann_map(JordanBoundary.circle(128), anchor=2.0)


# --- Schwarz integral ----------------------------------------------------------

def test_schwarz_cos_gives_identity():
    th = _angles(256)
    h = schwarz_integral(np.cos(th), DISK_PTS)
    assert np.max(np.abs(h - DISK_PTS)) < 1e-10


def test_schwarz_constant():
    h = schwarz_integral(np.full(512, 2.5), DISK_PTS)
    assert np.max(np.abs(h - 2.5)) < 1e-13


@pytest.mark.parametrize("k", [2, 5, 8])
def test_schwarz_cos_k(k):
    h = schwarz_integral(np.cos(k * _angles(256)), DISK_PTS)
    assert np.max(np.abs(h - DISK_PTS ** k)) < 1e-8


def test_schwarz_boundary_data_object():
    b = JordanBoundary.circle(512)
    phi = BoundaryData.from_function(b, lambda z: z.real)
    assert np.max(np.abs(schwarz_integral(phi, DISK_PTS) - DISK_PTS)) < 1e-10
    with pytest.raises(InputError):
        schwarz_integral(BoundaryData.from_function(JordanBoundary.circle(128, 2.0), np.real), DISK_PTS)


def test_schwarz_imaginary_part_zero_at_origin():
    th = _angles(128)
    h = schwarz_integral(np.sin(3 * th) + np.cos(th) ** 3, np.array([0j]))
    assert h[0].imag == 0


def test_schwarz_spectral_decay_for_analytic_data():
    # Re exp(e^{it}) extends to exp(z)
    z = 0.5 * DISK_PTS
    errs = []
    for n in (8, 16, 32, 64):
        th = _angles(n)
        v = np.exp(np.cos(th)) * np.cos(np.sin(th))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AccuracyWarning)
            errs.append(np.max(np.abs(schwarz_integral(v, z) - np.exp(z))))
    assert errs[3] < 1e-13
    assert errs[2] < 1e-5 * errs[0]
    assert errs[1] < errs[0]


def test_schwarz_warns_near_circle():
    with pytest.warns(AccuracyWarning):
        schwarz_integral(np.cos(_angles(32)), np.array([0.99 + 0j]))


def test_schwarz_rejects_outside_points():
    with pytest.raises(InputError):
        schwarz_integral(np.cos(_angles(32)), np.array([1.5 + 0j]))
    with pytest.raises(InputError):
        schwarz_integral(np.cos(_angles(32)), np.array([0j]), method="magic")


@st.composite
def trig_polys(draw, n=64):
    deg = draw(st.integers(0, n // 4))
    a = draw(st.lists(st.floats(-1, 1), min_size=deg + 1, max_size=deg + 1))
    b = draw(st.lists(st.floats(-1, 1), min_size=deg + 1, max_size=deg + 1))
    return np.array(a), np.array(b)


def _trig(coef, th):
    a, b = coef
    k = np.arange(len(a))
    return (a[None, :] * np.cos(np.outer(th, k)) + b[None, :] * np.sin(np.outer(th, k))).sum(1)


@given(trig_polys(), trig_polys(), st.floats(-3, 3), st.floats(-3, 3))
def test_schwarz_linear(p, q, s, t):
    th = _angles(64)
    u, v = _trig(p, th), _trig(q, th)
    lhs = schwarz_integral(s * u + t * v, DISK_PTS, method="series")
    rhs = s * schwarz_integral(u, DISK_PTS, method="series") + t * schwarz_integral(v, DISK_PTS, method="series")
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + np.abs(lhs).max())


@given(trig_polys())
def test_schwarz_reproduces_boundary_data(p):
    n = 64
    th = _angles(n)
    fine = np.linspace(0, 2 * np.pi, 1000)
    h = schwarz_integral(_trig(p, th), np.exp(1j * fine), method="series")
    assert np.max(np.abs(h.real - _trig(p, fine))) < 1e-8


# --- boundary error ----------------------------------------------------------

def test_boundary_error_examples():
    b = JordanBoundary.circle(512)
    errs = []
    for n in (64, 128, 256):
        g = disk_grid(n)
        f = ComplexMapField.from_function(g, lambda z: z ** 3)
        errs.append(boundary_error(f, BoundaryData.from_function(b, lambda z: (z ** 3).real)))
    assert errs[2] < errs[1] < errs[0]
    g = disk_grid(128)
    const = ComplexMapField.from_function(g, lambda z: 0 * z + 2.0)
    assert boundary_error(const, BoundaryData(b, np.full(b.n, 2.0))) < 1e-12
    ident = ComplexMapField.from_function(g, lambda z: z)
    d = boundary_error_details(ident, BoundaryData(b, np.zeros(b.n)))
    assert abs(d["error"] - 1) < 1e-3
    assert d["collar_sup"] < 1


def test_boundary_error_needs_collar():
    g = disk_grid(64)
    b = JordanBoundary.circle(128)
    with pytest.raises(InputError):
        boundary_error(ComplexMapField.from_function(g, lambda z: z), BoundaryData(b, np.zeros(b.n)), collar_width=1)


# --- Dirichlet pipeline --------------------------------------------------------

@pytest.fixture(scope="module")
def unit_boundary():
    # as many samples as transplant nodes, so linear data interpolation is exact at the nodes
    return JordanBoundary.circle(1024)


def test_dirichlet_identity(unit_boundary):
    g = disk_grid(128)
    phi = BoundaryData.from_function(unit_boundary, np.real)
    res = dirichlet_solve(unit_boundary, MuField.constant(g, 0.0), phi,
                          DirichletConfig(SolverConfig(resolution=128)))
    assert res.boundary_error < 1e-6
    m = g.mask
    assert np.max(np.abs(res.f.values[m] - g.z[m])) < 1e-6
    assert res.route == "FMO"
    d = res.diagnostics()
    assert d["jacobian_positive_fraction"] == 1.0


def test_dirichlet_constant_mu_128(unit_boundary):
    g = disk_grid(128)
    phi = BoundaryData.from_function(unit_boundary, np.real)
    res = dirichlet_solve(unit_boundary, MuField.constant(g, 0.5), phi,
                          DirichletConfig(SolverConfig(resolution=128)))
    assert res.boundary_error < 5e-3
    assert res.residual_relative < 1e-3
    assert res.jacobian_positive_fraction >= 0.99


def test_dirichlet_route_not_established(unit_boundary):
    g = disk_grid(128)
    mu = mu_of_radial_profile(RadialProfile("exp-degenerate"), g, sanitize=True)
    phi = BoundaryData.from_function(unit_boundary, np.real)
    with pytest.raises(RouteNotEstablished):
        dirichlet_solve(unit_boundary, mu, phi, DirichletConfig(SolverConfig(resolution=128, truncation_levels=(4, 8))))


def test_dirichlet_rejects_mismatched_data(unit_boundary):
    g = disk_grid(64)
    other = JordanBoundary.circle(128)
    with pytest.raises(InputError):
        dirichlet_solve(unit_boundary, MuField.constant(g, 0.0), BoundaryData.from_function(other, np.real))


def test_dirichlet_ellipse_domain():
    b = JordanBoundary.ellipse(512, 1.0, 0.7)
    g = disk_grid(128).with_mask(b.contains(disk_grid(128).z))
    phi = BoundaryData.from_function(b, lambda w: w.real)
    res = dirichlet_solve(b, MuField.constant(g, 0.0), phi, DirichletConfig(SolverConfig(resolution=128)))
    m = g.mask
    # harmonic extension of Re w is Re w
    assert np.nanmax(np.abs(res.f.values[m].real - g.z[m].real)) < 1e-3
    assert res.boundary_error < 1e-3


@settings(max_examples=6)
@given(st.floats(0, 0.3), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_composition_absorbs_disk_automorphism(a_abs, a_arg, alpha):
    def F(z):
        return (z + 0.2 * np.conj(z)) / 1.2 + 0.1 * z ** 2

    def Fb(th):
        return F(np.exp(1j * np.asarray(th)))

    def phi(th):
        th = np.asarray(th)
        return np.cos(th) + 0.3 * np.sin(2 * th)

    a = a_abs * np.exp(1j * a_arg)

    def M(w):
        return np.exp(1j * alpha) * (w - a) / (1 - np.conj(a) * w)

    c1 = compose_dirichlet(F, Fb, phi)
    c2 = compose_dirichlet(lambda z: M(F(z)), lambda th: M(Fb(th)), phi, anchor=M(c1.R.anchor))
    assert np.max(np.abs(c1(DISK_PTS) - c2(DISK_PTS))) < 1e-6


def test_composition_rejects_reversed_orientation():
    with pytest.raises(NumericFailure):
        compose_dirichlet(np.conj, lambda th: np.exp(-1j * np.asarray(th)), np.cos, n_nodes=256)


def test_normalization_changes_only_imaginary_constant(unit_boundary):
    g = disk_grid(128)
    phi = BoundaryData.from_function(unit_boundary, np.real)
    mu = MuField.constant(g, 0.3)
    outs = []
    for norm in ((0, 1), (0.2j, -0.5)):
        cfg = DirichletConfig(SolverConfig(resolution=128, normalization=norm))
        outs.append(dirichlet_solve(unit_boundary, mu, phi, cfg).f.values[g.mask])
    d = outs[1] - outs[0]
    assert np.max(np.abs(d.real)) < 1e-8
    assert np.max(d.imag) - np.min(d.imag) < 1e-8


# --- annulus -----------------------------------------------------------------

def test_annulus_two_circle_solution():
    u = annulus_harmonic_dirichlet(0.5, 0.0, 1.0, n_samples=64)
    w = np.array([0.6, 0.75j, -0.9 + 0.1j])
    assert np.max(np.abs(u(w) - np.log(np.abs(w) / 0.5) / np.log(2))) < 1e-12


def test_annulus_constant():
    u = annulus_harmonic_dirichlet(0.3, 2.0, 2.0, n_samples=32)
    assert np.max(np.abs(u(np.array([0.4, 0.9j])) - 2)) < 1e-12


def test_annulus_mode_one():
    u = annulus_harmonic_dirichlet(0.5, 0.0, np.cos, n_samples=64)
    th = np.linspace(0, 2 * np.pi, 200)
    assert np.max(np.abs(u(np.exp(1j * th)) - np.cos(th))) < 1e-8
    assert np.max(np.abs(u(0.5 * np.exp(1j * th)))) < 1e-8
    # r^1 and r^-1 coefficients from the 2 x 2 system
    A = 1 / (1 - 0.25)
    w = 0.7 * np.exp(0.4j)
    assert abs(u(np.array([w]))[0] - A * (0.7 - 0.25 / 0.7) * np.cos(0.4)) < 1e-12


def test_annulus_rejects_bad_radius():
    with pytest.raises(InputError):
        annulus_harmonic_dirichlet(1.5, 0.0, 1.0)


def test_annulus_warns_on_rough_data():
    th = _angles(64)
    with pytest.warns(AccuracyWarning):
        annulus_harmonic_dirichlet(0.5, 0.0, np.sign(np.cos(th)) + 0.0)


def test_period_examples():
    for c in (0.5, 2.0):
        u = AnnulusHarmonic(0.4, 0.0, c, np.zeros(3, complex), np.zeros(3, complex))
        assert abs(conjugate_period(u).period - 2 * np.pi * c) < 1e-10
    re_w = annulus_harmonic_dirichlet(0.5, lambda t: 0.5 * np.cos(t), np.cos, n_samples=32)
    mv = conjugate_period(re_w)
    assert abs(mv.period) < 1e-10
    assert mv.slit_jump_real < 1e-8 and mv.slit_jump_imag < 1e-8
    two = conjugate_period(annulus_harmonic_dirichlet(0.5, 0.0, 1.0, n_samples=64))
    assert abs(two.period - 2 * np.pi / np.log(2)) < 1e-10
    assert two.slit_jump_real < 1e-8


def test_period_from_sampled_field():
    g = disk_grid(256, inner=0.5)
    u = RealField.from_function(g, lambda w: np.log(np.abs(w) / 0.5) / np.log(2))
    mv = conjugate_period(u, r_in=0.5)
    assert abs(mv.period - 2 * np.pi / np.log(2)) < 1e-3


def test_period_unstable_for_garbage():
    g = disk_grid(64, inner=0.5)
    rng = np.random.default_rng(0)
    u = RealField(g, rng.standard_normal((g.ny, g.nx)))
    with pytest.raises(NumericFailure, match="unstable"):
        conjugate_period(u, r_in=0.5)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_period_linear(a, b):
    th = _angles(32)
    d1 = (np.zeros(32), np.ones(32))
    d2 = (np.cos(th) + 0.2, 0.5 * np.sin(2 * th) + 1.5)
    u1 = annulus_harmonic_dirichlet(0.4, *d1)
    u2 = annulus_harmonic_dirichlet(0.4, *d2)
    uc = annulus_harmonic_dirichlet(0.4, a * d1[0] + b * d2[0], a * d1[1] + b * d2[1])
    p = conjugate_period(uc).period
    assert abs(p - (a * conjugate_period(u1).period + b * conjugate_period(u2).period)) < 1e-9 * (1 + abs(p))
