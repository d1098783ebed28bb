import numpy as np
import pytest
from hypothesis import given, strategies as st

from beltrami.errors import InputError, NumericFailure
from beltrami.fields import (
    ComplexMapField, DilatationField, GridSpec, MuField, RadialProfile, RealField,
    dilatation_quotient, directional_derivative, directional_derivative_estimate,
    disk_grid, export_csv, geometric_tangent_dilatation, geometric_tangent_dilatation_field,
    jacobian, mask_from_rle, mask_rle, mu_of_radial_profile, read_grid_file,
    tangent_derivative, tangent_dilatation, write_grid_file,
)


@pytest.fixture(scope="module")
def sq64():
    return GridSpec.square(65, 1.5)


# --- construction -----------------------------------------------------------

def test_grid_rejects_small_and_disconnected():
    with pytest.raises(InputError):
        GridSpec(0j, 1.0, 1.0, 3, 8)
    m = np.zeros((8, 8), bool)
    m[1, 1] = m[5, 5] = True
    with pytest.raises(InputError):
        GridSpec(0j, 1.0, 1.0, 8, 8, m)


def test_mu_rejects_modulus_one_unless_sanitized():
    g = disk_grid(16)
    with pytest.raises(InputError):
        MuField.constant(g, 1.0)
    mu = MuField.constant(g, 1.0, sanitize=True)
    assert np.all(np.abs(mu.values[g.mask]) < 1)


def test_mu_rejects_nan_inside_mask():
    g = disk_grid(16)
    v = np.zeros((g.ny, g.nx), complex)
    v[g.mask.nonzero()[0][0], g.mask.nonzero()[1][0]] = np.nan
    with pytest.raises(InputError):
        MuField(g, v)


# --- dilatation quotient -----------------------------------------------------

@pytest.mark.parametrize("k, K", [(0.0, 1.0), (0.5, 3.0), (0.9, 19.0)])
def test_dilatation_quotient_constants(k, K):
    g = disk_grid(32)
    Kf = dilatation_quotient(MuField.constant(g, k))
    assert np.allclose(Kf.values[g.mask], K, rtol=1e-12)


def test_degeneracy_flag():
    g = disk_grid(32)
    assert not MuField.constant(g, 0.5).degeneracy_flag
    assert MuField.constant(g, 0.9).degeneracy_flag


# --- tangent dilatation ------------------------------------------------------

@pytest.mark.parametrize("sign", [1, -1])
def test_tangent_dilatation_radial_coefficient(sign):
    g = disk_grid(64)
    k = 0.4
    mu = MuField.from_function(g, lambda z: sign * k * z / np.conj(z))
    KT = tangent_dilatation(mu, 0j).values
    expect = (1 - k) / (1 + k) if sign > 0 else (1 + k) / (1 - k)
    fin = np.isfinite(KT)
    assert fin.sum() > 0.9 * g.mask.sum()
    assert np.allclose(KT[fin], expect, rtol=1e-12)


def test_tangent_dilatation_without_exclusion_at_node_raises():
    g = disk_grid(33)
    mu = MuField.constant(g, 0.2)
    with pytest.raises(InputError):
        tangent_dilatation(mu, 0j, exclusion_cells=0)


@st.composite
def random_mu(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    g = disk_grid(24)
    a = 0.95 * rng.random((g.ny, g.nx)) ** 0.5
    v = a * np.exp(2j * np.pi * rng.random((g.ny, g.nx)))
    z0 = complex(*rng.uniform(-1.2, 1.2, 2))
    return MuField(g, v), z0


@given(random_mu())
def test_dilatation_chain_property(case):
    mu, z0 = case
    K = mu.K
    KT = tangent_dilatation(mu, z0).values
    m = mu.grid.mask & np.isfinite(KT)
    assert np.all(KT[m] <= K[m] * (1 + 1e-12))
    assert np.all(KT[m] >= (1 / K[m]) * (1 - 1e-12))


# --- directional / tangent derivatives ----------------------------------------

def test_directional_derivative_examples(sq64):
    ident = ComplexMapField.from_function(sq64, lambda z: z)
    conj = ComplexMapField.from_function(sq64, np.conj)
    sq = ComplexMapField.from_function(sq64, lambda z: z ** 2)
    for om in (1, 1j, np.exp(0.7j)):
        assert abs(directional_derivative(ident, 0.3 + 0.1j, om) - om) < 1e-12
    assert abs(directional_derivative(conj, 0.2j, 1) - 1) < 1e-12
    assert abs(directional_derivative(conj, 0.2j, 1j) + 1j) < 1e-12
    assert abs(directional_derivative(sq, 1.0, 1) - 2) < 1e-10


def test_directional_derivative_rejects_non_unit(sq64):
    f = ComplexMapField.from_function(sq64, lambda z: z)
    with pytest.raises(InputError):
        directional_derivative(f, 0j, 2.0)


def test_directional_derivative_outside_mask_raises():
    g = disk_grid(33)
    f = ComplexMapField.from_function(g, lambda z: z)
    with pytest.raises(InputError):
        directional_derivative(f, 1.5 + 0j, 1)


def test_directional_derivative_consistency_flag(sq64):
    smooth = ComplexMapField.from_function(sq64, lambda z: np.exp(z))
    kink = ComplexMapField.from_function(sq64, lambda z: np.abs(z.real) + 1j * z.imag)
    assert directional_derivative_estimate(smooth, 0.3 + 0.2j, np.exp(0.4j)).consistent
    assert not directional_derivative_estimate(kink, 0j, 1).consistent


def test_directional_derivative_convergence_order():
    errs = []
    z, om = 0.3 + 0.2j, np.exp(0.9j)
    exact = np.exp(z) * om
    for n in (33, 65, 129, 257):
        g = GridSpec.square(n, 1.0)
        f = ComplexMapField.from_function(g, np.exp)
        errs.append(abs(directional_derivative(f, z, om) - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_tangent_derivative_examples(sq64):
    ident = ComplexMapField.from_function(sq64, lambda z: z)
    conj = ComplexMapField.from_function(sq64, np.conj)
    assert abs(tangent_derivative(ident, 1.0, 0) - 1j) < 1e-12
    assert abs(tangent_derivative(conj, 1.0, 0) + 1j) < 1e-12
    with pytest.raises(InputError):
        tangent_derivative(ident, 0.5, 0.5)


def test_tangent_derivative_radial_profile():
    g = disk_grid(513)
    prof = RadialProfile("log-degenerate")
    f = prof.map_field(g)
    for th in (0.3, 1.9, 4.0):
        z = 0.5 * np.exp(1j * th)
        expect = 1j * z * prof.rho(0.5) / 0.5 ** 2
        assert abs(tangent_derivative(f, z, 0) - expect) < 1e-4


def test_tangent_derivative_matches_directional_in_tangent_direction(sq64):
    f = ComplexMapField.from_function(sq64, lambda z: z + 0.3 * np.conj(z) ** 2)
    z, z0 = 0.4 + 0.3j, -0.1j
    w0 = (z - z0) / abs(z - z0)
    assert abs(tangent_derivative(f, z, z0) - directional_derivative(f, z, 1j * w0)) < 1e-12


# --- geometric tangent dilatation / jacobian ----------------------------------

def test_geometric_tangent_dilatation_examples(sq64):
    ident = ComplexMapField.from_function(sq64, lambda z: z)
    assert abs(geometric_tangent_dilatation(ident, 0.4 - 0.3j, 0) - 1) < 1e-12
    aff = ComplexMapField.from_function(sq64, lambda z: z + 0.3 * np.conj(z))
    KT = tangent_dilatation(MuField.constant(sq64, 0.3), 0j)
    i, j = sq64.node_at(0.75 + 0j)
    assert abs(geometric_tangent_dilatation(aff, 0.75, 0) - KT.values[i, j]) < 1e-12


def test_geometric_tangent_dilatation_degenerate_raises(sq64):
    f = ComplexMapField.from_function(sq64, lambda z: z.real + 0j)
    with pytest.raises(NumericFailure):
        geometric_tangent_dilatation(f, 0.3 + 0.3j, 0)


def test_geometric_tangent_dilatation_field_matches_coefficient(sq64):
    f = ComplexMapField.from_function(sq64, lambda z: z + 0.2 * np.conj(z) + 0.1 * z ** 2)
    G = geometric_tangent_dilatation_field(f, 0.1j).values
    T = tangent_dilatation(f.mu(), 0.1j).values
    m = np.isfinite(G) & np.isfinite(T)
    assert m.sum() > 1000
    assert np.nanmax(np.abs(G[m] - T[m]) / T[m]) < 1e-12


@pytest.mark.parametrize("func, J", [
    (lambda z: z, 1.0), (np.conj, -1.0), (lambda z: 2 * z + 0.5 * np.conj(z), 3.75),
])
def test_jacobian_constants(sq64, func, J):
    f = ComplexMapField.from_function(sq64, func)
    v = jacobian(f)
    assert np.allclose(v[sq64.mask], J, atol=1e-12)


def test_jacobian_positive_fraction_radial_512():
    g = disk_grid(512)
    f = RadialProfile("log-degenerate").map_field(g)
    J = jacobian(f)[g.mask]
    J = J[np.isfinite(J)]
    assert np.mean(J > 0) >= 0.99


# --- radial profiles ---------------------------------------------------------

def test_identity_profile_gives_zero_mu():
    g = disk_grid(64)
    mu = mu_of_radial_profile(RadialProfile("power", {"alpha": 1.0}), g)
    assert np.max(np.abs(mu.values)) < 1e-15


@pytest.mark.parametrize("alpha", [0.5, 2.0, 3.0])
def test_power_profile_modulus(alpha):
    g = disk_grid(64)
    mu = mu_of_radial_profile(RadialProfile("power", {"alpha": alpha}), g)
    r = np.abs(g.z)
    m = g.mask & (r > 0)
    assert np.allclose(np.abs(mu.values[m]), abs(alpha - 1) / (alpha + 1), rtol=1e-12)


def test_log_profile_dilatation():
    g = disk_grid(128)
    mu = mu_of_radial_profile(RadialProfile("log-degenerate"), g)
    r = np.abs(g.z)
    m = g.mask & (r > 0)
    assert np.allclose(mu.K[m], 1 + np.log(1 / r[m]), rtol=1e-10)
    assert mu.exact_map is not None


def test_profile_mu_matches_exact_map_coefficient():
    g = disk_grid(257)
    prof = RadialProfile("power", {"alpha": 1.7})
    mu_exact = mu_of_radial_profile(prof, g).values
    mu_num = prof.map_field(g).mu().values
    r = np.abs(g.z)
    m = g.mask & (r > 0.2) & (r < 0.9)
    assert np.max(np.abs(mu_num[m] - mu_exact[m])) < 1e-3


def test_custom_table_without_derivative():
    r = np.linspace(0.1, 1, 10)
    prof = RadialProfile("custom-table", {"r": r, "rho": r ** 2})
    with pytest.raises(InputError):
        mu_of_radial_profile(prof, disk_grid(16))
    prof2 = RadialProfile("custom-table", {"r": r, "rho": r ** 2, "drho": 2 * r})
    assert np.allclose(prof2.stretch(np.array([0.5])), 2.0, rtol=1e-6)


def test_profile_validation():
    with pytest.raises(InputError):
        RadialProfile("power", {"alpha": -1})
    with pytest.raises(InputError):
        RadialProfile("nope")


# --- grid files --------------------------------------------------------------

def test_mask_rle_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(5):
        m = rng.random((7, 9)) > 0.5
        assert np.array_equal(mask_from_rle(mask_rle(m), m.shape), m)


@pytest.mark.parametrize("kind", ["mu", "map", "K", "real"])
def test_grid_file_roundtrip(tmp_path, kind):
    g = disk_grid(20)
    if kind == "mu":
        fld = MuField.from_function(g, lambda z: 0.3 * z)
    elif kind == "map":
        fld = ComplexMapField.from_function(g, lambda z: z + 0.1 * z ** 2)
    elif kind == "K":
        fld = DilatationField.from_radial(g, lambda r: 1 + r, kind="K")
    else:
        fld = RealField.from_function(g, lambda z: z.real)
    p = tmp_path / "f.grid"
    write_grid_file(p, fld)
    back = read_grid_file(p)
    assert type(back) is type(fld)
    assert np.array_equal(back.grid.mask, g.mask)
    a, b = np.asarray(back.values), np.asarray(fld.values)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(a[g.mask], b[g.mask], rtol=0, atol=0)
    export_csv(tmp_path / "f.csv", fld)
    assert (tmp_path / "f.csv").read_text().count("\n") >= g.mask.sum()


def test_grid_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.grid"
    p.write_bytes(b"not a grid")
    with pytest.raises(InputError):
        read_grid_file(p)
