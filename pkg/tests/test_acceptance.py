"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from beltrami.conditions import (
    FAILS, HOLDS, PhiSpec, fmo_growth_check, fmo_indicator, phi_divergence_criteria,
)
from beltrami.conformal import (
    BoundaryData, DirichletConfig, JordanBoundary, annulus_harmonic_dirichlet, conjugate_period,
    dirichlet_solve, schwarz_integral,
)
from beltrami.fields import (
    ComplexMapField, DilatationField, MuField, RadialProfile, RealField, dilatation_quotient, disk_grid,
    geometric_tangent_dilatation_field, mu_of_radial_profile, tangent_dilatation,
)
from beltrami.modulus import (
    Eta0Problem, WeightedMinProblem, annulus_joining_family, discrete_modulus, pushforward_modulus_check,
    weighted_inf_closed_form, weighted_inf_sampled,
)
from beltrami.solver import SolverConfig, regularity_diagnostics, solve_beltrami_disk


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def emit(number, title, ok, detail, limit):
        elapsed = time.perf_counter() - t0
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail} "
                  f"({elapsed:.1f} s, limit {limit:.0f} s)")
        assert ok, f"criterion {number}: {detail}"
    return emit


def _ring(g, lo, hi):
    r = np.abs(g.z)
    return g.mask & (r >= lo) & (r <= hi)


def test_01_dilatation_chain(report):
    rng = np.random.default_rng(1)
    g = disk_grid(128)
    worst = 0.0
    checked = 0
    for _ in range(100):
        n = g.z.shape
        mu = 0.95 * np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
        m = MuField(g, mu)
        K = dilatation_quotient(m).values
        for _ in range(10):
            z0 = 0.9 * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random())
            Kt = tangent_dilatation(m, z0).values
            ok = g.mask & np.isfinite(Kt)
            lo = 1 / K[ok] - Kt[ok]
            hi = Kt[ok] - K[ok]
            worst = max(worst, lo.max(), hi.max())
            checked += int(ok.sum())
    report(1, "dilatation chain 1/K <= K^T <= K", worst <= 1e-12,
           f"{checked} samples, max violation {worst:.2e}", 10)


def test_02_tangent_derivative_identity(report):
    g = disk_grid(1024)
    prof = RadialProfile("log-degenerate")
    k = 0.4 - 0.2j
    maps = {
        "identity": (ComplexMapField.from_function(g, lambda z: z), MuField.constant(g, 0.0)),
        "affine": (ComplexMapField.from_function(g, lambda z: z + k * np.conj(z)), MuField.constant(g, k)),
        "log-radial": (prof.map_field(g), mu_of_radial_profile(prof, g)),
    }
    ring = _ring(g, 0.2, 0.8)
    errs = {}
    for name, (f, mu) in maps.items():
        e = 0.0
        for z0 in (0j, 0.1 - 0.05j):
            G = geometric_tangent_dilatation_field(f, z0).values
            T = tangent_dilatation(mu, z0).values
            ok = ring & np.isfinite(G) & np.isfinite(T)
            e = max(e, float(np.max(np.abs(G[ok] - T[ok]) / T[ok])))
        errs[name] = e
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(2, "geometric vs coefficient tangent dilatation", max(errs.values()) < 1e-4, detail, 60)


def test_03_weighted_closed_form(report):
    rng = np.random.default_rng(3)
    beaten = 0
    worst = 0.0
    for i in range(10_000):
        n = int(rng.integers(1, 51))
        p = (1.5, 2.0, 3.0)[i % 3]
        pb = WeightedMinProblem(tuple(rng.uniform(0.05, 2.0, n)), tuple(np.exp(rng.uniform(-3, 3, n))), p)
        I, a0 = weighted_inf_closed_form(pb)
        best, _ = weighted_inf_sampled(pb, 1000, rng)
        beaten += best < I * (1 - 1e-12)
        worst = max(worst, abs(float(pb.functional(a0)) - I) / I)
    report(3, "weighted infimum closed form", beaten == 0 and worst <= 1e-10,
           f"10000 problems, beaten {beaten}, max gap at minimiser {worst:.1e}", 120)


def test_04_ring_modulus(report):
    exact = 2 * np.pi / np.log(2)
    vals = {n: discrete_modulus(annulus_joining_family(n)).value for n in (128, 256, 512)}
    errs = [abs(v / exact - 1) for v in vals.values()]
    lower = 2 / np.pi * np.log(2)
    ok = errs[2] < 0.05 and errs[0] > errs[1] > errs[2] and all(v >= lower for v in vals.values())
    detail = ", ".join(f"{n}: {v:.4f} ({e:.2%})" for (n, v), e in zip(vals.items(), errs))
    report(4, "annulus 1<|z|<2 modulus vs 2 pi/log 2", ok, detail, 300)


def test_05_eta0_optimality(report):
    g = disk_grid(256)
    fields = {
        "K=1": DilatationField.from_radial(g, np.ones_like),
        "log": DilatationField.from_radial(g, lambda r: 1 + np.log(1 / r)),
        "oscillating": DilatationField.from_radial(g, lambda r: 1 + 3 * np.sin(9 * r) ** 2),
        "affine mu": tangent_dilatation(MuField.constant(g, 0.5), 0j),
        "off-centre": tangent_dilatation(MuField.from_function(g, lambda z: 0.6 * z * np.abs(z)), 0.1j),
    }
    rng = np.random.default_rng(5)
    violations = 0
    trials = 0
    for name, Kt in fields.items():
        z0 = 0.1j if name == "off-centre" else 0j
        pb = Eta0Problem(Kt, z0, 0.05, 0.6)
        m = pb.r.size
        # piecewise constant, smooth positive, and perturbations of eta0
        edges = np.sort(rng.uniform(0.05, 0.6, (3400, 6)), axis=1)
        levels = rng.exponential(size=(3400, 7))
        pc = np.take_along_axis(levels, (pb.r[None, :] > edges[:, :, None]).sum(1), axis=1)
        t = np.log(pb.r / 0.05)[None, :]
        smooth = np.exp(sum(rng.normal(size=(3300, 1)) * np.cos(j * t + rng.uniform(0, 6.3, (3300, 1)))
                            for j in range(1, 5)))
        near = pb.eta0[None, :] * np.exp(1e-3 * rng.normal(size=(3300, m)))
        eta = pb.normalise(np.vstack((pc, smooth, near)))
        lhs = float(pb.energy(pb.eta0))
        rhs = pb.energy(eta)
        violations += int(np.sum(lhs > rhs + 1e-8 * np.maximum(1.0, rhs)))
        trials += eta.shape[0]
    report(5, "eta0 minimises the ring energy", violations == 0,
           f"{trials} candidates over {len(fields)} fields, {violations} violations", 60)


def test_06_pushforward_bound(report):
    g = disk_grid(128)
    prof = RadialProfile("log-degenerate")
    k = 0.3
    maps = {
        "identity": (lambda z: z, MuField.constant(g, 0.0)),
        "affine": (lambda z: z + k * np.conj(z), MuField.constant(g, k)),
        "log-radial": (prof.map_field(g), mu_of_radial_profile(prof, g)),
    }
    pairs = [(eps0 / 2 ** j, eps0) for eps0 in (0.5, 0.25, 0.125) for j in range(1, 5) if eps0 / 2 ** j >= 0.03]
    fails = []
    worst = np.inf
    for name, (f, mu) in maps.items():
        for eps, eps0 in pairs:
            rep = pushforward_modulus_check(f, mu, 0j, eps, eps0)
            worst = min(worst, rep.estimate / rep.bound)
            if not rep.holds:
                fails.append((name, eps, eps0))
    report(6, "image-family modulus >= ring-norm bound", not fails,
           f"{len(pairs) * len(maps)} checks, min estimate/bound {worst:.3f}, failures {fails}", 300)


def test_07_phi_battery(report):
    battery = [
        (PhiSpec("exp"), "diverges"),
        (PhiSpec("exp", {"alpha": 3.0}), "diverges"),
        (PhiSpec("log-composite", {"alpha": 1.0, "gamma": 1.0}), "diverges"),
        (PhiSpec("power", {"p": 2}), "converges"),
        (PhiSpec("power", {"p": 1.5}), "converges"),
        (PhiSpec("log-composite", {"alpha": 1.0, "gamma": 0.0}), "diverges"),
    ]
    bad = []
    for spec, base in battery:
        r = phi_divergence_criteria(spec)
        if r.base != base or not r.agree:
            bad.append((spec.kind, r.verdicts))
    report(7, "Phi growth criteria agree", not bad, f"{len(battery)} specs, disagreements {bad}", 30)


def test_08_schwarz_cos_k(report):
    rng = np.random.default_rng(8)
    z = 0.9 * np.sqrt(rng.random(2000)) * np.exp(2j * np.pi * rng.random(2000))
    z = np.concatenate([z, 0.9 * np.exp(2j * np.pi * np.arange(256) / 256)])
    th = 2 * np.pi * np.arange(256) / 256
    err = max(float(np.max(np.abs(schwarz_integral(np.cos(k * th), z) - z ** k))) for k in range(9))
    report(8, "Schwarz integral of cos k theta", err < 1e-8, f"k <= 8, max error {err:.1e}", 5)


def test_09_solver(report):
    g = disk_grid(256)
    res = solve_beltrami_disk(MuField.constant(g, 0.5))
    m = g.mask
    e_aff = float(np.max(np.abs(res.f.values[m] - (g.z[m] + 0.5 * np.conj(g.z[m])) / 1.5)))
    g5 = disk_grid(512)
    prof = RadialProfile("log-degenerate")
    res5 = solve_beltrami_disk(mu_of_radial_profile(prof, g5), SolverConfig(truncation_levels=(4, 8, 16, 32)))
    ring = _ring(g5, 0.2, 0.9)
    exact = prof.map_values(g5.z[ring])
    e_log = float(np.max(np.abs(res5.f.values[ring] - exact)) / np.max(np.abs(exact)))
    jac = regularity_diagnostics(res5, exclusion_radius=0.05)["jacobian_positive_fraction"]
    report(9, "Beltrami solver", e_aff < 1e-6 and e_log < 1e-3 and jac >= 0.99,
           f"affine {e_aff:.1e}, log-radial {e_log:.1e}, Jacobian>0 on {jac:.2%}", 600)


def test_10_dirichlet(report):
    b = JordanBoundary.circle(1024)
    phi = BoundaryData.from_function(b, np.real)
    g = disk_grid(256)
    zero = dirichlet_solve(b, MuField.constant(g, 0.0), phi, DirichletConfig(SolverConfig(resolution=256)))
    aff = dirichlet_solve(b, MuField.constant(g, 0.5), phi, DirichletConfig(SolverConfig(resolution=256)))
    prof = RadialProfile("log-degenerate")
    logerr = []
    for n in (256, 512):
        gn = disk_grid(n)
        cfg = DirichletConfig(SolverConfig(resolution=n, truncation_levels=(4, 8, 16, 32)))
        logerr.append(dirichlet_solve(b, mu_of_radial_profile(prof, gn), phi, cfg).boundary_error)
    ok = (zero.boundary_error < 1e-6 and aff.boundary_error < 5e-3 and aff.residual_relative < 1e-3
          and logerr[1] < 2e-2 and logerr[1] < logerr[0])
    report(10, "Dirichlet pipeline", ok,
           f"mu=0 {zero.boundary_error:.1e}; mu=0.5 {aff.boundary_error:.1e} (residual {aff.residual_relative:.1e}); "
           f"log 256 {logerr[0]:.1e} -> 512 {logerr[1]:.1e}", 900)


def test_11_annulus_period(report):
    u = annulus_harmonic_dirichlet(0.5, 0.0, 1.0)
    mv = conjugate_period(u)
    err = abs(mv.period - 2 * np.pi / np.log(2))
    report(11, "annulus conjugate period", err < 1e-6 and mv.slit_jump_real < 1e-8,
           f"period error {err:.1e}, slit jump of Re {mv.slit_jump_real:.1e}", 30)


def test_12_fmo_log(report):
    g = disk_grid(256)
    u = RealField.from_function(g, lambda z: np.log(1 / np.abs(z)))
    v = u.values.copy()
    v[g.mask & ~np.isfinite(v)] = np.nanmax(v[np.isfinite(v)])
    u = RealField(g, v)
    fmo = fmo_indicator(u, 0j)
    gr = fmo_growth_check(u, 0j)
    ok = fmo.verdict == HOLDS and fmo.sufficient_verdict == FAILS and gr.verdict == HOLDS \
        and np.all(np.isfinite(gr.ratios))
    report(12, "log(1/|z|) has finite mean oscillation", ok,
           f"FMO {fmo.verdict}, mean test {fmo.sufficient_verdict}, growth {gr.verdict} "
           f"(ratios {gr.ratios.min():.3f}..{gr.ratios.max():.3f})", 30)
