"""Oscillation and integral solvability criteria for degenerate Beltrami equations.

Every evaluator works on sampled fields and returns a tri-state verdict:
``holds``, ``fails`` or ``inconclusive`` (the resolution of the grid did not
allow a decision with the documented margin).  Limits as ``eps -> 0`` are
replaced by finite sequences of radii down to a resolution floor of a few
grid cells.

Circle integrals use ``4*max(nx, ny)`` equally spaced angular nodes and
bilinear interpolation of the field (NaN-aware: corners outside the mask or
inside an exclusion zone are dropped and the weights renormalised).  Ring
integrals over ``eps < |z - z0| < eps0`` are computed as radial integrals of
circle integrals with Gauss-Legendre panels in ``log r``, one panel per
dyadic shell.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import InputError
from .fields import (DilatationField, GridSpec, MuField, RealField, dilatation_quotient,
                     tangent_dilatation)

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"
ROUTES = ("FMO", "log-average", "divergence", "phi")
NONE_ESTABLISHED = "none-established"

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

def sample_field(grid: GridSpec, values: np.ndarray, pts) -> np.ndarray:
    """NaN-aware bilinear interpolation of node values at arbitrary points.

    A point counts as inside the domain when the bilinear interpolant of the
    mask indicator is at least 1/2.  Non-finite corners are ignored and the
    remaining weights renormalised.  Points outside the domain get NaN.
    """
    pts = np.asarray(pts, complex)
    fi = (pts.imag - grid.origin.imag) / grid.hy
    fj = (pts.real - grid.origin.real) / grid.hx
    ingrid = (fi >= -1e-9) & (fi <= grid.ny - 1 + 1e-9) & (fj >= -1e-9) & (fj <= grid.nx - 1 + 1e-9)
    fi = np.where(np.isfinite(fi), fi, 0.0)
    fj = np.where(np.isfinite(fj), fj, 0.0)
    i0 = np.clip(np.floor(fi).astype(np.int64), 0, grid.ny - 2)
    j0 = np.clip(np.floor(fj).astype(np.int64), 0, grid.nx - 2)
    ti = np.clip(fi - i0, 0.0, 1.0)
    tj = np.clip(fj - j0, 0.0, 1.0)
    mask = grid.mask
    num = np.zeros(pts.shape)
    den = np.zeros(pts.shape)
    inside = np.zeros(pts.shape)
    for di, dj, w in ((0, 0, (1 - ti) * (1 - tj)), (1, 0, ti * (1 - tj)),
                      (0, 1, (1 - ti) * tj), (1, 1, ti * tj)):
        v = values[i0 + di, j0 + dj]
        mk = mask[i0 + di, j0 + dj]
        inside += w * mk
        use = mk & np.isfinite(v) & (w > 0)
        num += np.where(use, w * np.where(use, v, 0.0), 0.0)
        den += np.where(use, w, 0.0)
    ok = ingrid & (inside >= 0.5 - 1e-12) & (den > 0)
    with np.errstate(all="ignore"):
        out = np.where(ok, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def _n_theta(grid: GridSpec) -> int:
    return 4 * max(grid.nx, grid.ny)


def _circles(fld, z0: complex, radii, n_theta: Optional[int] = None):
    """Samples on circles: returns (values[k, n], dtheta)."""
    n = n_theta or _n_theta(fld.grid)
    th = 2 * np.pi * np.arange(n) / n
    radii = np.atleast_1d(np.asarray(radii, float))
    pts = complex(z0) + radii[:, None] * np.exp(1j * th)[None, :]
    return sample_field(fld.grid, fld.values, pts), 2 * np.pi / n


def _arc_check(grid: GridSpec, radii, counts, dth):
    arc = counts * radii * dth
    short = arc < 4 * grid.h
    return arc, short


def circle_average(K, z0: complex, eps: float, n_theta: Optional[int] = None) -> float:
    """Arc-length average of ``K`` over ``S(z0, eps)`` intersected with the domain."""
    vals, dth = _circles(K, z0, [eps], n_theta)
    valid = np.isfinite(vals[0])
    _, short = _arc_check(K.grid, np.array([eps]), valid.sum(), dth)
    if short[0]:
        raise InputError(f"circle |z - z0| = {eps:g} meets the domain in arcs shorter than 4 cells")
    return float(vals[0][valid].mean())


def ring_norm(Kt, z0: complex, r: float, n_theta: Optional[int] = None) -> float:
    """L1 norm of ``K^T`` over ``D`` intersected with ``S(z0, r)``."""
    vals, dth = _circles(Kt, z0, [r], n_theta)
    valid = np.isfinite(vals[0])
    _, short = _arc_check(Kt.grid, np.array([r]), valid.sum(), dth)
    if short[0]:
        raise InputError(f"circle |z - z0| = {r:g} meets the domain in arcs shorter than 4 cells")
    return float(vals[0][valid].sum() * r * dth)


def _ring_norms(Kt, z0, radii, n_theta=None, power: float = 1.0):
    """Vectorised ring norms of ``Kt**power``; NaN where the arc is too short."""
    vals, dth = _circles(Kt, z0, radii, n_theta)
    valid = np.isfinite(vals)
    with np.errstate(all="ignore"):
        s = np.where(valid, vals ** power if power != 1.0 else vals, 0.0).sum(axis=1)
    r = np.asarray(radii, float)
    _, short = _arc_check(Kt.grid, r, valid.sum(axis=1), dth)
    out = s * r * dth
    out[short] = np.nan
    return out


def _log_panels(edges: np.ndarray):
    """Gauss-Legendre nodes/weights in ``r`` for panels uniform in ``log r``.

    ``edges`` must be decreasing.  Returns (nodes[k, 8], weights[k, 8]) where
    panel k spans ``[edges[k+1], edges[k]]``.
    """
    a = np.log(edges[1:])
    b = np.log(edges[:-1])
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    s = mid[:, None] + half[:, None] * _GL_X[None, :]
    r = np.exp(s)
    w = half[:, None] * _GL_W[None, :] * r
    return r, w


def _dyadic_edges(eps0: float, eps_min: float, min_levels: int = 0, per_octave: int = 1) -> np.ndarray:
    n = int(np.floor(per_octave * np.log2(eps0 / eps_min) + 1e-9))
    n = max(n, min_levels)
    return eps0 * 2.0 ** (-np.arange(n + 1) / per_octave)


def _resolution_floor(grid: GridSpec, cells: float) -> float:
    return cells * grid.h


def _domain_extent(grid: GridSpec, z0: complex) -> float:
    return float(np.abs(grid.z[grid.mask] - z0).max())


# ---------------------------------------------------------------------------
# sequence classifiers
# ---------------------------------------------------------------------------

def classify_bounded(eps: np.ndarray, vals: np.ndarray, eps0: float, margin: float = 0.1,
                     min_tail: int = 2, atol: float = 1e-12) -> str:
    """Boundedness of ``vals(eps)`` as eps -> 0 at finite resolution.

    The limsup is proxied by the maximum over radii ``eps <= eps0/8`` (the tail)
    and compared with the maximum over the outer radii (the head).
    ``holds`` when tail <= (1 + margin) * head; ``fails`` when the tail keeps
    increasing and exceeds that bound; otherwise ``inconclusive``.
    """
    eps = np.asarray(eps, float)
    vals = np.abs(np.asarray(vals, float))
    ok = np.isfinite(vals) | np.isinf(vals)
    eps, vals = eps[ok], vals[ok]
    head = vals[eps > eps0 / 8 * (1 + 1e-12)]
    tail = vals[eps <= eps0 / 8 * (1 + 1e-12)]
    if len(tail) < min_tail or len(head) == 0:
        return INCONCLUSIVE
    ref = float(np.max(head))
    proxy = float(np.max(tail))
    if proxy <= (1 + margin) * ref + atol:
        return HOLDS
    order = np.argsort(-eps[eps <= eps0 / 8 * (1 + 1e-12)])
    t = tail[order]
    with np.errstate(invalid="ignore"):
        increasing = np.all(np.diff(t) >= -margin * 1e-2 * np.abs(t[:-1]))
    if increasing and t[-1] > (1 + margin) * ref:
        return FAILS
    return INCONCLUSIVE


# ---------------------------------------------------------------------------
# BMO / FMO
# ---------------------------------------------------------------------------

def _disc_quadrature(grid: GridSpec, eps: float, n_theta: Optional[int] = None):
    """Polar Gauss-Legendre points and area weights for the disc of radius eps at 0."""
    nr = int(max(8, np.ceil(2 * eps / grid.h)))
    nt = n_theta or int(min(_n_theta(grid), max(64, 4 * np.ceil(2 * np.pi * eps / grid.h))))
    xr, wr = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * eps * (xr + 1)
    wr = 0.5 * eps * wr * r
    th = 2 * np.pi * np.arange(nt) / nt
    pts = r[:, None] * np.exp(1j * th)[None, :]
    w = np.repeat(wr[:, None] * (2 * np.pi / nt), nt, axis=1)
    return pts.ravel(), w.ravel()


def disc_statistics(fld, z0: complex, eps: float, n_theta: Optional[int] = None):
    """(mean, mean |u - mean|, mean |u|, covered fraction) over B(z0, eps) in the domain."""
    pts, w = _disc_quadrature(fld.grid, eps, n_theta)
    v = sample_field(fld.grid, fld.values, complex(z0) + pts)
    ok = np.isfinite(v)
    if not ok.any():
        return np.nan, np.nan, np.nan, 0.0
    wv, vv = w[ok], v[ok]
    W = wv.sum()
    mean = float((wv * vv).sum() / W)
    osc = float((wv * np.abs(vv - mean)).sum() / W)
    amean = float((wv * np.abs(vv)).sum() / W)
    return mean, osc, amean, float(W / (np.pi * eps ** 2))


def bmo_norm_estimate(u, n_discs: int = 200, radius_range: Optional[tuple[float, float]] = None,
                      seed: int = 0) -> float:
    """Lower estimate of the BMO seminorm: max over sampled discs of mean |u - u_B|.

    Discs are drawn with a fixed seed (centers uniform over the masked samples,
    radii log-uniform in ``radius_range``) and kept only when they lie wholly
    inside the domain.  Raises InputError when fewer than 10 discs fit.
    """
    grid = u.grid
    lo, hi = radius_range or (2 * grid.h, 0.25 * min(grid.width, grid.height))
    if not 0 < lo <= hi:
        raise InputError("radius_range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    cand = grid.z[grid.mask]
    nt = 64
    th = np.exp(2j * np.pi * np.arange(nt) / nt)
    best = 0.0
    accepted = 0
    tries = 0
    while accepted < n_discs and tries < 20 * n_discs:
        tries += 1
        c = cand[rng.integers(len(cand))]
        r = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        rim = sample_field(grid, np.where(grid.mask, 0.0, np.nan), c + r * th)
        if not np.all(np.isfinite(rim)):
            continue
        pts, w = _disc_quadrature(grid, r, nt)
        v = sample_field(grid, u.values, c + pts)
        ok = np.isfinite(v)
        if ok.mean() < 0.99:
            continue
        wv, vv = w[ok], v[ok]
        m = (wv * vv).sum() / wv.sum()
        best = max(best, float((wv * np.abs(vv - m)).sum() / wv.sum()))
        accepted += 1
    if accepted < 10:
        raise InputError(f"only {accepted} discs fit inside the mask (need at least 10)")
    return best


@dataclass
class FMOResult:
    verdict: str
    sufficient_verdict: str
    eps: np.ndarray
    oscillation: np.ndarray
    means: np.ndarray
    eps0: float

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "sufficient_verdict": self.sufficient_verdict,
                "eps0": self.eps0, "eps": self.eps.tolist(),
                "oscillation": self.oscillation.tolist(), "mean_abs": self.means.tolist()}


def default_eps_grid(grid: GridSpec, eps0: float, min_cells: float = 3.0, per_octave: int = 4) -> np.ndarray:
    """Radii eps0 * 2**(-k/per_octave) down to ``min_cells`` grid spacings."""
    floor = _resolution_floor(grid, min_cells)
    if eps0 <= floor:
        return np.array([eps0])
    n = int(np.floor(per_octave * np.log2(eps0 / floor) + 1e-9))
    return eps0 * 2.0 ** (-np.arange(n + 1) / per_octave)


def fmo_indicator(phi, z0: complex, eps_grid: Optional[Sequence[float]] = None,
                  eps0: Optional[float] = None, margin: float = 0.1) -> FMOResult:
    """Mean oscillation of ``phi`` over B(z0, eps) along a decreasing radius sequence.

    ``verdict`` classifies the oscillation sequence (finite mean oscillation);
    ``sufficient_verdict`` classifies the means of ``|phi|`` (the stronger
    mean-bound test, which implies finite mean oscillation).
    """
    z0 = complex(z0)
    if eps0 is None:
        eps0 = 0.5 * _domain_extent(phi.grid, z0)
    eps = np.sort(np.asarray(eps_grid if eps_grid is not None else default_eps_grid(phi.grid, eps0), float))[::-1]
    eps0 = float(max(eps0, eps[0]))
    osc = np.empty(len(eps))
    amean = np.empty(len(eps))
    for k, e in enumerate(eps):
        _, osc[k], amean[k], _ = disc_statistics(phi, z0, e)
    vals = np.asarray(phi.values)[phi.grid.mask]
    vals = vals[np.isfinite(vals)]
    scale = float(np.max(np.abs(vals))) if vals.size else 1.0
    atol = 1e-10 * max(scale, 1e-300)
    v1 = classify_bounded(eps, osc, eps0, margin, atol=atol)
    v2 = classify_bounded(eps, amean, eps0, margin, atol=atol)
    return FMOResult(v1, v2, eps, osc, amean, eps0)


@dataclass
class GrowthResult:
    verdict: str
    eps: np.ndarray
    integrals: np.ndarray
    ratios: np.ndarray
    eps0: float

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "eps0": self.eps0, "eps": self.eps.tolist(),
                "integrals": self.integrals.tolist(), "ratios": self.ratios.tolist()}


def _ring_integral_partials(fld, z0, weight, eps0, eps_min, n_theta=None, min_levels=0, per_octave=1):
    """Partial integrals of ``fld * weight(|z - z0|)`` over eps_k < |z - z0| < eps0.

    ``eps_k = eps0 * 2**(-k/per_octave)``.  Returns (eps_k[1:], partials, failing_fraction).
    """
    edges = _dyadic_edges(eps0, eps_min, min_levels, per_octave)
    if len(edges) < 2:
        return edges[1:], np.zeros(0), 1.0
    r, w = _log_panels(edges)
    norms = _ring_norms(fld, z0, r.ravel(), n_theta).reshape(r.shape)
    bad = ~np.isfinite(norms) & ~np.isinf(norms)
    frac = float(bad.mean())
    with np.errstate(all="ignore"):
        integrand = np.where(bad, 0.0, norms) * weight(r)
        shells = (integrand * w).sum(axis=1)
    return edges[1:], np.cumsum(shells), frac


def fmo_growth_check(phi, z0: complex, eps0: Optional[float] = None,
                     min_cells: float = 2.0) -> GrowthResult:
    """Ratios of the weighted ring integral of ``phi/(r log(1/r))**2`` to log log(1/eps).

    The outer radius defaults to 0.9 min(e**-e, d0), d0 the largest distance
    from z0 to the domain; radii step by quarter octaves.  Verdict ``holds`` (bounded) when the ratio sequence
    stops accelerating: its increments are non-increasing up to noise.
    """
    z0 = complex(z0)
    d0 = _domain_extent(phi.grid, z0)
    delta0 = min(np.exp(-np.e), d0)
    if eps0 is None:
        eps0 = 0.9 * delta0
    if not 0 < eps0 < delta0:
        raise InputError(f"eps0 must lie in (0, {delta0:.6g})")
    eps_min = _resolution_floor(phi.grid, min_cells)
    eps, partial, _ = _ring_integral_partials(
        phi, z0, lambda r: 1.0 / (r * np.log(1.0 / r)) ** 2, eps0, eps_min, per_octave=4)
    ratios = partial / np.log(np.log(1.0 / eps))
    return GrowthResult(_classify_growth(ratios), eps, partial, ratios, float(eps0))


def _classify_growth(ratios: np.ndarray, noise: float = 1e-3) -> str:
    r = np.asarray(ratios, float)
    if len(r) < 4 or not np.all(np.isfinite(r)):
        return INCONCLUSIVE if len(r) < 4 else FAILS
    scale = max(float(np.max(np.abs(r))), 1e-300)
    d = np.diff(r)
    if np.all(np.abs(r) <= 1e-300):
        return HOLDS
    tail = d[-3:]
    if np.all(np.diff(tail) <= noise * scale):
        return HOLDS
    if np.all(tail > 0) and np.all(tail[1:] > 1.05 * tail[:-1]):
        return FAILS
    return INCONCLUSIVE


# ---------------------------------------------------------------------------
# circle averages and divergence integrals
# ---------------------------------------------------------------------------

@dataclass
class RadialAverages:
    z0: complex
    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.radii = np.asarray(self.radii, float)
        self.values = np.asarray(self.values, float)
        if np.any(np.diff(self.radii) >= 0):
            raise InputError("radii must be strictly decreasing")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise InputError("circle averages must be finite and non-negative")


def radial_averages(K, z0: complex, radii) -> RadialAverages:
    return RadialAverages(complex(z0), radii, [circle_average(K, z0, r) for r in radii])


@dataclass
class DivergenceResult:
    verdict: str
    classification: str
    eps: np.ndarray
    partials: np.ndarray
    projected: float
    failing_fraction: float
    delta: float

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "classification": self.classification,
                "delta": self.delta, "eps": self.eps.tolist(), "partials": self.partials.tolist(),
                "projected_normalised": self.projected, "failing_fraction": self.failing_fraction}


def _series_verdict(levels: np.ndarray, increments: np.ndarray, threshold: float,
                    q_geom: float = 0.75, n_last: int = 4, level_limit: float = 690.0):
    """Classify a series of positive increments indexed by a log-scale level.

    ``converges`` when the last ``n_last`` increment ratios are all at most
    ``q_geom`` (geometric decay).  Otherwise the increments are extrapolated
    with a power law in ``levels`` (fitted over the last ``n_last + 1``
    increments) up to ``level_limit`` and the projected partial sum,
    normalised by the first increment, is compared with ``threshold``.
    Returns (classification, projected).
    """
    d = np.asarray(increments, float)
    lv = np.asarray(levels, float)
    if len(d) < n_last + 1:
        return "unresolved", float("nan")
    if np.any(np.isinf(d)):
        return "diverges", float("inf")
    if d[0] <= 0:
        return "unresolved", float("nan")
    last = d[-(n_last + 1):]
    if np.all(last <= 0):
        return "converges", float(d.sum() / d[0])
    if np.any(last <= 0):
        return "unresolved", float("nan")
    q = last[1:] / last[:-1]
    if np.all(q <= q_geom):
        return "converges", float(d.sum() / d[0])
    ll = lv[-(n_last + 1):]
    a = -np.polyfit(np.log(ll), np.log(last), 1)[0]
    step = lv[-1] - lv[-2]
    lmax = max(level_limit, lv[-1])
    # sum of d_last * (l/l_last)**-a over further levels spaced by ``step``
    if a <= 1.0:
        ext = np.arange(lv[-1] + step, lmax + step, step)
        tail = float(np.sum(last[-1] * (ext / lv[-1]) ** (-a)))
    else:
        tail = float(last[-1] * lv[-1] / ((a - 1) * step) * (1 - (lv[-1] / lmax) ** (a - 1)))
    projected = float((d.sum() + tail) / d[0])
    return ("diverges" if projected > threshold else "unresolved"), projected


def divergence_integral(Kt, z0: complex, delta: float, eps_min: Optional[float] = None,
                        threshold: float = 10.0, min_cells: float = 2.0,
                        n_theta: Optional[int] = None) -> DivergenceResult:
    """Partial integrals of dr/||K^T||_1(z0, r) over (eps, delta) at dyadic eps.

    Verdict ``holds`` (the integral diverges) when the increments over the last
    four dyadic refinements do not decay geometrically and the partial
    integral, normalised by the first dyadic shell and extrapolated along the
    observed increment trend down to the floating-point radius limit, exceeds
    ``threshold``.  Geometric decay is reported as classification
    ``converges`` with verdict ``inconclusive`` (criterion not established).
    """
    z0 = complex(z0)
    if eps_min is None:
        eps_min = _resolution_floor(Kt.grid, min_cells)
    edges = _dyadic_edges(delta, eps_min)
    if len(edges) < 2:
        return DivergenceResult(INCONCLUSIVE, "unresolved", edges[1:], np.zeros(0), float("nan"), 0.0, delta)
    r, w = _log_panels(edges)
    norms = _ring_norms(Kt, z0, r.ravel(), n_theta).reshape(r.shape)
    bad = ~(norms > 0)
    frac = float(bad.mean())
    with np.errstate(all="ignore"):
        shells = np.where(bad, 0.0, w / np.where(bad, 1.0, norms)).sum(axis=1)
    partials = np.cumsum(shells)
    if frac >= 0.01:
        return DivergenceResult(INCONCLUSIVE, "unresolved", edges[1:], partials, float("nan"), frac, delta)
    levels = 1.0 + np.log(delta / np.sqrt(edges[:-1] * edges[1:]))
    cls, proj = _series_verdict(levels, shells, threshold)
    verdict = HOLDS if cls == "diverges" else INCONCLUSIVE
    return DivergenceResult(verdict, cls, edges[1:], partials, proj, frac, delta)


# ---------------------------------------------------------------------------
# Phi functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhiSpec:
    """Convex non-decreasing weight function Phi on [0, inf).

    kinds
      ``exp``           Phi = exp(alpha t)                       (alpha > 0)
      ``power``         Phi = t**p                                (p >= 1)
      ``log-composite`` Phi = exp(alpha t / log(e + t)**gamma)    (alpha > 0, gamma >= 0)
      ``table``         columns t and log_phi (= log Phi), linear interpolation of log Phi
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        k = self.kind
        if k == "exp" and not self.params.get("alpha", 1.0) > 0:
            raise InputError("exp Phi needs alpha > 0")
        elif k == "power" and not self.params.get("p", 2.0) >= 1:
            raise InputError("power Phi needs p >= 1")
        elif k == "log-composite":
            if not self.params.get("alpha", 1.0) > 0 or self.params.get("gamma", 1.0) < 0:
                raise InputError("log-composite Phi needs alpha > 0 and gamma >= 0")
        elif k == "table":
            t = np.asarray(self.params.get("t", []), float)
            lp = np.asarray(self.params.get("log_phi", []), float)
            if t.ndim != 1 or t.size < 4 or t.shape != lp.shape or np.any(np.diff(t) <= 0):
                raise InputError("table Phi needs increasing t and matching log_phi (>= 4 rows)")
            if np.any(np.diff(lp) < 0):
                raise InputError("table Phi must be non-decreasing")
        elif k not in ("exp", "power", "log-composite", "table"):
            raise InputError(f"unknown Phi kind {k!r}")
        if not self.is_convex():
            raise InputError(f"Phi {k} is not convex non-decreasing on the sampled range")

    @property
    def t_max(self) -> float:
        return float(self.params["t"][-1]) if self.kind == "table" else np.inf

    def H(self, t):
        """log Phi(t)."""
        t = np.asarray(t, float)
        k = self.kind
        with np.errstate(divide="ignore"):
            if k == "exp":
                return self.params.get("alpha", 1.0) * t
            if k == "power":
                return self.params.get("p", 2.0) * np.log(t)
            if k == "log-composite":
                a, g = self.params.get("alpha", 1.0), self.params.get("gamma", 1.0)
                return a * t / np.log(np.e + t) ** g
        return np.interp(t, self.params["t"], self.params["log_phi"])

    def dH(self, t):
        t = np.asarray(t, float)
        k = self.kind
        if k == "exp":
            return np.full_like(t, self.params.get("alpha", 1.0))
        if k == "power":
            return self.params.get("p", 2.0) / t
        if k == "log-composite":
            a, g = self.params.get("alpha", 1.0), self.params.get("gamma", 1.0)
            L = np.log(np.e + t)
            return a / L ** g - a * g * t / ((np.e + t) * L ** (g + 1))
        tt = np.asarray(self.params["t"], float)
        slopes = np.diff(self.params["log_phi"]) / np.diff(tt)
        idx = np.clip(np.searchsorted(tt, t, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def __call__(self, t):
        with np.errstate(over="ignore"):
            return np.exp(self.H(t))

    def H_inverse(self, eta):
        """Inverse of H on its increasing branch."""
        eta = np.asarray(eta, float)
        k = self.kind
        if k == "exp":
            return eta / self.params.get("alpha", 1.0)
        if k == "power":
            with np.errstate(over="ignore"):
                return np.exp(eta / self.params.get("p", 2.0))
        if k == "table":
            return np.interp(eta, self.params["log_phi"], self.params["t"], right=np.nan)
        out = np.empty(eta.shape)
        flat = out.ravel()
        for i, e in enumerate(eta.ravel()):
            flat[i] = _invert_increasing(self.H, e)
        return flat.reshape(eta.shape)

    def inverse(self, tau):
        """Phi^{-1}(tau), evaluated directly on Phi for representable tau."""
        tau = np.asarray(tau, float)
        k = self.kind
        if k == "exp":
            return np.log(tau) / self.params.get("alpha", 1.0)
        if k == "power":
            return tau ** (1.0 / self.params.get("p", 2.0))
        out = np.empty(tau.shape)
        flat = out.ravel()
        for i, v in enumerate(tau.ravel()):
            flat[i] = _invert_increasing(self, v)
        return flat.reshape(tau.shape)

    def is_convex(self, t_max: float = 50.0, n: int = 2001) -> bool:
        hi = min(t_max, self.t_max)
        t = np.linspace(0.0, hi, n)
        v = self(t)
        v = v[np.isfinite(v)]
        if len(v) < 3:
            return False
        scale = max(1.0, float(np.max(np.abs(v))))
        return bool(np.all(np.diff(v) >= -1e-12 * scale) and np.all(np.diff(v, 2) >= -1e-12 * scale))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                                              for k, v in self.params.items()}}


def _invert_increasing(fn, target: float) -> float:
    if not np.isfinite(target):
        return np.nan
    lo, hi = 0.0, 1.0
    while fn(hi) < target:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            return np.nan
    if fn(lo) >= target:
        return lo
    return optimize.brentq(lambda t: fn(t) - target, lo, hi, xtol=1e-14 * max(1.0, hi), rtol=1e-14, maxiter=500)


def phi_integral(K, phi: PhiSpec, region: Optional[np.ndarray] = None) -> float:
    """Cell-area quadrature of the integral of Phi(K) over the masked region.

    Returns ``inf`` when Phi(K) overflows the float range at any sample.
    """
    grid = K.grid
    sel = grid.mask.copy() if region is None else (grid.mask & np.asarray(region, bool))
    v = np.asarray(K.values)[sel]
    v = v[~np.isnan(v)]
    with np.errstate(over="ignore"):
        vals = phi(v)
    if np.any(~np.isfinite(vals)):
        return float("inf")
    return float(vals.sum() * grid.hx * grid.hy)


def phi_ring_partials(K, phi: PhiSpec, z0: complex, delta: float, eps_min: float):
    """Cell quadrature of Phi(K) over eps_k < |z - z0| < delta for dyadic eps_k."""
    grid = K.grid
    edges = _dyadic_edges(delta, eps_min)
    d = np.abs(grid.z - z0)
    out = []
    for e in edges[1:]:
        out.append(phi_integral(K, phi, (d > e) & (d < delta)))
    return edges[1:], np.asarray(out)


@dataclass
class PhiCriteriaResult:
    base: str
    verdicts: dict
    agree: bool

    def to_dict(self) -> dict:
        return {"base": self.base, "verdicts": dict(self.verdicts), "agree": self.agree}


def _block_increments(fn, x0: float, n_blocks: int, direction: int = 1, n_sub: int = 4):
    """Integrals of ``fn`` over blocks [x0 2^k, x0 2^(k+1)] (or halving blocks toward 0)."""
    if direction > 0:
        edges = x0 * 2.0 ** np.arange(n_blocks + 1)
    else:
        edges = x0 * 2.0 ** (-np.arange(n_blocks + 1))
    lo = np.minimum(edges[:-1], edges[1:])
    hi = np.maximum(edges[:-1], edges[1:])
    sub = np.linspace(0, 1, n_sub + 1)
    a = np.log(lo)[:, None] + (np.log(hi) - np.log(lo))[:, None] * sub[None, :-1]
    b = np.log(lo)[:, None] + (np.log(hi) - np.log(lo))[:, None] * sub[None, 1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    s = mid[..., None] + half[..., None] * _GL_X
    x = np.exp(s)
    with np.errstate(all="ignore"):
        vals = fn(x) * x
        vals = np.where(np.isfinite(vals), vals, np.where(np.isinf(vals), np.inf, 0.0))
        inc = (vals * half[..., None] * _GL_W).sum(axis=(1, 2))
    levels = np.log(np.sqrt(lo * hi)) * direction
    return levels, inc


def _stieltjes_increments(H, x0: float, n_blocks: int, n_sub: int = 256):
    """Riemann-Stieltjes sums of dH(t)/t over doubling blocks (midpoint tags)."""
    edges = x0 * 2.0 ** np.arange(n_blocks + 1)
    inc = np.empty(n_blocks)
    for k in range(n_blocks):
        t = np.geomspace(edges[k], edges[k + 1], n_sub + 1)
        tag = np.sqrt(t[:-1] * t[1:])
        inc[k] = float(np.sum(np.diff(H(t)) / tag))
    return np.log(np.sqrt(edges[:-1] * edges[1:])), inc


def _classify_improper(levels, inc, threshold: float = 10.0) -> str:
    inc = np.asarray(inc, float)
    if np.any(np.isinf(inc)):
        return "diverges"
    levels = np.asarray(levels, float)
    shift = 1.0 - levels[0]
    lv = levels + shift
    pos = inc > 0
    if not pos.any():
        return "converges"
    cls, _ = _series_verdict(lv, np.where(pos, inc, 0.0), threshold, level_limit=max(690.0, lv[-1]))
    if cls == "unresolved":
        # power-law decay faster than 1/level is summable
        lastn = inc[-6:]
        if np.all(lastn > 0):
            a = -np.polyfit(np.log(lv[-6:]), np.log(lastn), 1)[0]
            return "converges" if a > 1.5 else ("diverges" if a <= 1.0 else "inconclusive")
        return "inconclusive"
    return cls


def phi_divergence_criteria(phi: PhiSpec, delta: Optional[float] = None, n_blocks: int = 48) -> PhiCriteriaResult:
    """Classify the Phi growth condition and its five reformulations in terms of H = log Phi.

    Each integral is evaluated in its own variable over doubling blocks (or
    halving blocks toward 0 for the integral of H(1/t)), and the increments
    are classified as a diverging or converging series.  ``agree`` reports
    whether all six classifications coincide.
    """
    H = phi.H
    h0 = float(phi.H(0.0)) if phi.kind != "power" else -np.inf
    t_start = 1.0 if phi.kind != "table" else max(float(phi.params["t"][1]), 1e-12)
    if phi.kind == "table":
        t_end = phi.t_max
        n_blocks = int(np.floor(np.log2(t_end / t_start)))
        if n_blocks < 6:
            return PhiCriteriaResult("inconclusive", {}, False)
    # (base) integral of dtau/(tau Phi^{-1}(tau)), in the variable sigma = log tau
    sigma0 = max(np.log(delta) if delta else 0.0, (h0 if np.isfinite(h0) else 0.0)) + 1.0
    if phi.kind == "table":
        sig_end = float(phi.params["log_phi"][-1])
        nb_sig = int(np.floor(np.log2(sig_end / sigma0)))
    else:
        nb_sig = n_blocks
    res = {}
    if phi.kind == "table" and nb_sig < 6:
        res["tau_inverse"] = "inconclusive"
    else:
        def base_integrand(sig):
            # dtau/(tau Phi^{-1}(tau)) = dsigma / Phi^{-1}(e^sigma); Phi^{-1} evaluated on Phi
            # where e^sigma is representable and on log Phi beyond.
            small = sig < 700
            out = np.empty(sig.shape)
            if small.any():
                out[small] = 1.0 / phi.inverse(np.exp(sig[small]))
            if (~small).any():
                out[~small] = 1.0 / phi.H_inverse(sig[~small])
            return out
        lv, inc = _block_increments(base_integrand, sigma0, nb_sig)
        res["tau_inverse"] = _classify_improper(lv, inc)
    lv, inc = _block_increments(lambda t: phi.dH(t) / t, t_start, n_blocks)
    res["dH_over_t"] = _classify_improper(lv, inc)
    lv, inc = _stieltjes_increments(H, t_start, n_blocks)
    res["stieltjes"] = _classify_improper(lv, inc)
    lv, inc = _block_increments(lambda t: H(t) / t ** 2, t_start, n_blocks)
    res["H_over_t2"] = _classify_improper(lv, inc)
    d = 1.0 / t_start
    lv, inc = _block_increments(lambda t: H(1.0 / t), d, n_blocks, direction=-1)
    res["H_of_reciprocal"] = _classify_improper(lv, inc)
    eta0 = max(h0 if np.isfinite(h0) else 0.0, 0.0) + 1.0
    if phi.kind == "table":
        nb_eta = int(np.floor(np.log2(float(phi.params["log_phi"][-1]) / eta0)))
    else:
        nb_eta = n_blocks
    if nb_eta < 6:
        res["H_inverse"] = "inconclusive"
    else:
        lv, inc = _block_increments(lambda e: 1.0 / phi.H_inverse(e), eta0, nb_eta)
        res["H_inverse"] = _classify_improper(lv, inc)
    base = res["tau_inverse"]
    agree = len(set(res.values())) == 1 and base != "inconclusive"
    return PhiCriteriaResult(base, res, agree)


# ---------------------------------------------------------------------------
# log-scale o(.) conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiFamily:
    """Weights psi_m(t) = 1/(t L_1(t) ... L_m(t)), L_1 = log(1/t), L_{k+1} = log L_k.

    depth 0 is psi = 1/t, depth 1 is 1/(t log(1/t)).  ``cutoff`` is eps0; every
    L_k must be positive on (0, cutoff).
    """

    depth: int = 0
    cutoff: float = 0.5

    def __post_init__(self):
        if self.depth < 0:
            raise InputError("psi depth must be >= 0")
        if self.depth >= 1 and not 0 < self.cutoff < _chain_bound(self.depth):
            raise InputError(f"cutoff must lie in (0, {_chain_bound(self.depth):.6g}) for depth {self.depth}")
        if self.depth == 0 and not self.cutoff > 0:
            raise InputError("cutoff must be positive")

    def _chain(self, t):
        t = np.asarray(t, float)
        L = [np.log(1.0 / t)]
        for _ in range(self.depth - 1):
            L.append(np.log(L[-1]))
        return L

    def __call__(self, t):
        t = np.asarray(t, float)
        out = 1.0 / t
        if self.depth >= 1:
            for Lk in self._chain(t):
                out = out / Lk
        return out

    def _log_top(self, t):
        if self.depth == 0:
            return np.log(1.0 / np.asarray(t, float))
        return np.log(self._chain(t)[-1])

    def I(self, eps):
        """Closed form of the integral of psi over (eps, cutoff)."""
        return self._log_top(eps) - self._log_top(self.cutoff)


def _chain_bound(depth: int) -> float:
    """Largest t with every iterated logarithm L_1..L_depth of 1/t positive."""
    if depth <= 1:
        return 1.0
    # L_m > 0  <=>  L_{m-1} > 1  <=>  ... <=>  1/t > exp^{(m-1)}(0) iterated exponential
    x = 1.0
    for _ in range(depth - 2):
        x = np.exp(x)
    return float(np.exp(-x))


@dataclass
class LogScaleResult:
    verdict: str
    eps: np.ndarray
    integrals: np.ndarray
    I: np.ndarray
    ratios: np.ndarray
    psi_depth: int

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "psi_depth": self.psi_depth, "eps": self.eps.tolist(),
                "integrals": self.integrals.tolist(), "I": self.I.tolist(), "ratios": self.ratios.tolist()}


def log_scale_condition(Kt, z0: complex, psi: PsiFamily, min_cells: float = 2.0,
                        min_levels: int = 8, noise: float = 0.1, n_theta: Optional[int] = None) -> LogScaleResult:
    """Ratio of the ring integral of K^T psi**2 to I(eps)**2 at dyadic eps below the cutoff.

    ``holds`` when the ratio decreases (each step at most ``1 + noise`` times the
    previous) over at least ``min_levels`` dyadic radii and ends below 0.2 times
    its initial value; ``fails`` when it ends above its initial value (at least
    three radii); otherwise ``inconclusive``.
    """
    z0 = complex(z0)
    eps_min = _resolution_floor(Kt.grid, min_cells)
    eps, partial, _ = _ring_integral_partials(Kt, z0, lambda r: psi(r) ** 2, psi.cutoff, eps_min, n_theta)
    Ie = psi.I(eps)
    with np.errstate(all="ignore"):
        ratios = partial / Ie ** 2
    if len(ratios) >= 3 and (not np.isfinite(ratios[-1]) or ratios[-1] > ratios[0]):
        verdict = FAILS
    elif len(ratios) < min_levels:
        verdict = INCONCLUSIVE
    elif np.all(ratios[1:] <= (1 + noise) * ratios[:-1]) and ratios[-1] < 0.2 * ratios[0]:
        verdict = HOLDS
    else:
        verdict = INCONCLUSIVE
    return LogScaleResult(verdict, eps, partial, Ie, ratios, psi.depth)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class ReportConfig:
    """Tunable settings of ``condition_report``."""

    eps0: Optional[float] = None           # outer radius; default half the domain extent from z0
    exclusion_cells: float = 2.0
    disc_min_cells: float = 3.0
    circle_min_cells: float = 2.0
    margin: float = 0.1
    divergence_threshold: float = 10.0
    phi: PhiSpec = field(default_factory=lambda: PhiSpec("exp", {"alpha": 1.0}))
    psi_depths: tuple = (0, 1)
    dominator: Optional[RealField] = None


@dataclass
class ConditionReport:
    points: list
    per_point: list
    routes: list
    overall_route: str

    def to_dict(self) -> dict:
        return {"points": [[complex(p).real, complex(p).imag] for p in self.points],
                "per_point": self.per_point, "routes": self.routes, "overall_route": self.overall_route}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "x", "y", "criterion", "verdict"])
        for k, (p, rec) in enumerate(zip(self.points, self.per_point)):
            p = complex(p)
            for name in ("fmo", "mean_bound", "kt_oscillation", "log_average", "divergence", "phi"):
                w.writerow([k, repr(p.real), repr(p.imag), name, rec[name]["verdict"]])
            for name, res in sorted(rec["log_scale"].items()):
                w.writerow([k, repr(p.real), repr(p.imag), f"log_scale_{name}", res["verdict"]])
            w.writerow([k, repr(p.real), repr(p.imag), "route", self.routes[k]])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _point_report(mu: MuField, z0: complex, cfg: ReportConfig) -> tuple[dict, str]:
    grid = mu.grid
    Kt = tangent_dilatation(mu, z0, cfg.exclusion_cells)
    eps0 = cfg.eps0 if cfg.eps0 is not None else 0.5 * _domain_extent(grid, z0)
    eps_grid = default_eps_grid(grid, eps0, cfg.disc_min_cells)
    rec = {"z0": [z0.real, z0.imag], "eps0": eps0}

    # FMO route: domination by a user field of finite mean oscillation, or the mean bound of K^T
    kt_fmo = fmo_indicator(Kt, z0, eps_grid, eps0, cfg.margin)
    rec["mean_bound"] = {"verdict": kt_fmo.sufficient_verdict, "means": kt_fmo.means.tolist()}
    rec["kt_oscillation"] = {"verdict": kt_fmo.verdict, "oscillation": kt_fmo.oscillation.tolist()}
    if cfg.dominator is not None:
        Q = cfg.dominator
        near = grid.mask & (np.abs(grid.z - z0) < eps0) & np.isfinite(Kt.values)
        dominated = bool(np.all(Kt.values[near] <= Q.values[near] * (1 + 1e-9) + 1e-12))
        q_fmo = fmo_indicator(Q, z0, eps_grid, eps0, cfg.margin)
        fmo_v = q_fmo.verdict if dominated else FAILS
        rec["fmo"] = {"verdict": fmo_v, "source": "dominator", "dominated": dominated,
                      "oscillation": q_fmo.oscillation.tolist()}
    else:
        rec["fmo"] = {"verdict": kt_fmo.sufficient_verdict, "source": "mean-bound"}
    rec["eps_discs"] = eps_grid.tolist()

    # log-average route: circle averages k(eps) = O(log 1/eps)
    circ_floor = _resolution_floor(grid, cfg.circle_min_cells)
    radii = default_eps_grid(grid, eps0, cfg.circle_min_cells)
    kav = []
    rr = []
    for r in radii:
        try:
            kav.append(circle_average(Kt, z0, r))
            rr.append(r)
        except InputError:
            break
    rr = np.asarray(rr)
    kav = np.asarray(kav)
    denom = np.maximum(np.log(1.0 / rr), 1.0) if len(rr) else rr
    lav_v = classify_bounded(rr, kav / denom, eps0, cfg.margin) if len(rr) else INCONCLUSIVE
    rec["log_average"] = {"verdict": lav_v, "radii": rr.tolist(), "averages": kav.tolist()}

    div = divergence_integral(Kt, z0, eps0, circ_floor, cfg.divergence_threshold)
    rec["divergence"] = div.to_dict()

    crit = phi_divergence_criteria(cfg.phi)
    eps_r, parts = phi_ring_partials(Kt, cfg.phi, z0, eps0, circ_floor)
    with np.errstate(invalid="ignore"):
        inc = np.diff(np.concatenate(([0.0], parts)))
    if np.any(np.isinf(parts)):
        finite = FAILS
    else:
        cls, _ = _series_verdict(np.arange(1, len(inc) + 1, dtype=float), inc, np.inf)
        finite = HOLDS if cls == "converges" else INCONCLUSIVE
    phi_v = HOLDS if (finite == HOLDS and crit.base == "diverges") else (FAILS if finite == FAILS else INCONCLUSIVE)
    rec["phi"] = {"verdict": phi_v, "integral_finite": finite, "growth_condition": crit.base,
                  "partials": parts.tolist(), "phi": cfg.phi.to_dict()}

    rec["log_scale"] = {}
    for depth in cfg.psi_depths:
        cutoff = min(eps0, 0.5 * _chain_bound(depth)) if depth >= 1 else eps0
        res = log_scale_condition(Kt, z0, PsiFamily(depth, cutoff), cfg.circle_min_cells)
        rec["log_scale"][f"psi{depth}"] = {"verdict": res.verdict, "ratios": res.ratios.tolist()}

    route = NONE_ESTABLISHED
    for name, key in zip(ROUTES, ("fmo", "log_average", "divergence", "phi")):
        if rec[key]["verdict"] == HOLDS:
            route = name
            break
    rec["route"] = route
    return rec, route


def condition_report(mu: MuField, points: Sequence[complex], config: Optional[ReportConfig] = None) -> ConditionReport:
    """Evaluate every criterion at each point and pick the first route that holds.

    Route priority: FMO, log-average, divergence, Phi.  ``none-established``
    means no route could be confirmed at the grid resolution; it is not a
    claim that the equation has no solution.  The overall route is the first
    route (same priority) that holds at every point.
    """
    cfg = config or ReportConfig()
    pts = [complex(p) for p in points]
    if not pts:
        raise InputError("condition_report needs at least one point")
    recs, routes = [], []
    for p in pts:
        rec, route = _point_report(mu, p, cfg)
        recs.append(rec)
        routes.append(route)
    overall = NONE_ESTABLISHED
    for name, key in zip(ROUTES, ("fmo", "log_average", "divergence", "phi")):
        if all(r[key]["verdict"] == HOLDS for r in recs):
            overall = name
            break
    return ConditionReport(pts, recs, routes, overall)
