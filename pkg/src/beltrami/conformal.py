"""Conformal maps of Jordan domains, the Schwarz integral, the Dirichlet
pipeline for the Beltrami equation and harmonic functions on an annulus.

Riemann map
-----------
For a Jordan curve with anchor w0 inside, R(w) = (w - w0) exp(G(w)) where G
is holomorphic with Re G = -log|w - w0| on the curve.  G is the Cauchy
integral of a real density sigma, found from a second-kind Nystrom system on
the curve (trapezoid rule in the curve parameter, spectrally accurate for
smooth curves).  Interior values use the barycentric form of the Cauchy
integral, which stays accurate up to the curve.

Dirichlet pipeline
------------------
f = h o R o F, where F is the disk solution of the Beltrami equation, R maps
the image F(D) onto the disk and h is the Schwarz integral of the boundary
data carried over by the boundary correspondence.  Other Jordan domains are
first pulled back to the disk with their own Riemann map.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .conditions import NONE_ESTABLISHED, ReportConfig, condition_report, sample_field
from .errors import InputError, NumericFailure, RouteNotEstablished
from .fields import ComplexMapField, GridSpec, MuField, RealField, _axis_derivative, disk_grid
from .solver import SolveResult, SolverConfig, _extend_nearest, solve_beltrami_disk


class AccuracyWarning(UserWarning):
    """A quadrature or series is used outside its accurate range."""


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------

MIN_BOUNDARY_SAMPLES = 64


def _segments_cross(p: np.ndarray) -> bool:
    """True when two non-adjacent edges of the closed polyline p intersect."""
    n = len(p)
    a = p
    b = np.roll(p, -1)
    d = b - a
    scale = np.abs(d).max()

    def orient(u, v, w):
        return ((v - u).conj() * (w - u)).imag

    chunk = max(1, 2_000_000 // n)
    idx = np.arange(n)
    for s in range(0, n, chunk):
        i = idx[s:s + chunk, None]
        j = idx[None, :]
        # each unordered pair once; skip shared vertices
        keep = (j > i + 1) & ~((i == 0) & (j == n - 1))
        if not keep.any():
            continue
        ai, bi = a[i], b[i]
        aj, bj = a[j], b[j]
        o1 = orient(ai, bi, aj)
        o2 = orient(ai, bi, bj)
        o3 = orient(aj, bj, ai)
        o4 = orient(aj, bj, bi)
        tol = 1e-14 * scale * scale
        hit = keep & (o1 * o2 <= tol) & (o3 * o4 <= tol)
        # collinear far-apart pairs have all four orientations ~0: check overlap
        col = hit & (np.abs(o1) <= tol) & (np.abs(o2) <= tol)
        if col.any():
            ii, jj = np.nonzero(col)
            ii = ii + s
            for u, v in zip(ii, jj):
                t = d[u] / abs(d[u])
                pa = ((a[v] - a[u]) * t.conjugate()).real
                pb = ((b[v] - a[u]) * t.conjugate()).real
                if max(pa, pb) < 0 or min(pa, pb) > abs(d[u]):
                    hit[u - s, v] = False
        if hit.any():
            return True
    return False


@dataclass(frozen=True, eq=False)
class JordanBoundary:
    """Closed polyline bounding a Jordan domain, positively oriented.

    A repeated closing sample is dropped; clockwise input is reversed.
    """

    samples: np.ndarray
    check_simple: bool = True

    def __post_init__(self):
        p = np.asarray(self.samples, complex).ravel().copy()
        if len(p) > 1 and abs(p[-1] - p[0]) <= 1e-14 * max(1.0, np.abs(p).max()):
            p = p[:-1]
        if len(p) < MIN_BOUNDARY_SAMPLES:
            raise InputError(f"boundary needs at least {MIN_BOUNDARY_SAMPLES} samples (got {len(p)})")
        if not np.all(np.isfinite(p)):
            raise InputError("boundary has non-finite samples")
        if np.any(np.abs(np.diff(np.append(p, p[0]))) == 0):
            raise InputError("boundary has repeated consecutive samples")
        area = 0.5 * (p.conj() * np.roll(p, -1)).imag.sum()
        if area == 0:
            raise InputError("boundary encloses no area")
        if area < 0:
            p = p[::-1].copy()
        if self.check_simple and _segments_cross(p):
            raise InputError("boundary self-intersection detected")
        p.setflags(write=False)
        object.__setattr__(self, "samples", p)

    @classmethod
    def circle(cls, n: int, radius: float = 1.0, center: complex = 0j) -> "JordanBoundary":
        t = 2 * np.pi * np.arange(n) / n
        return cls(center + radius * np.exp(1j * t))

    @classmethod
    def ellipse(cls, n: int, a: float, b: float, center: complex = 0j) -> "JordanBoundary":
        t = 2 * np.pi * np.arange(n) / n
        return cls(center + a * np.cos(t) + 1j * b * np.sin(t))

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def area(self) -> float:
        p = self.samples
        return float(0.5 * (p.conj() * np.roll(p, -1)).imag.sum())

    @property
    def centroid(self) -> complex:
        p = self.samples
        q = np.roll(p, -1)
        cr = (p.conj() * q).imag
        return complex(((p + q) * cr).sum() / (6 * self.area))

    @property
    def arclength(self) -> np.ndarray:
        """Cumulative length at each sample, with the closing length appended."""
        d = np.abs(np.diff(np.append(self.samples, self.samples[0])))
        return np.concatenate(([0.0], np.cumsum(d)))

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def tangents(self) -> np.ndarray:
        p = self.samples
        t = np.roll(p, -1) - np.roll(p, 1)
        return t / np.abs(t)

    def inward_normals(self) -> np.ndarray:
        return 1j * self.tangents()

    def is_unit_circle(self, tol: float = 1e-9) -> bool:
        return bool(np.abs(np.abs(self.samples) - 1).max() <= tol)

    def contains(self, pts) -> np.ndarray:
        """Even-odd test for points strictly inside."""
        pts = np.asarray(pts, complex)
        flat = pts.ravel()
        a = self.samples
        b = np.roll(a, -1)
        out = np.zeros(flat.shape, bool)
        chunk = max(1, 4_000_000 // len(a))
        for s in range(0, len(flat), chunk):
            z = flat[s:s + chunk, None]
            cond = (a.imag[None, :] > z.imag) != (b.imag[None, :] > z.imag)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = a.real + (z.imag - a.imag) * (b.real - a.real) / (b.imag - a.imag)
            out[s:s + chunk] = (cond & (z.real < xc)).sum(axis=1) % 2 == 1
        return out.reshape(pts.shape)

    def project(self, pts):
        """Nearest boundary point of each point: (edge index, edge fraction, distance)."""
        pts = np.asarray(pts, complex).ravel()
        a = self.samples
        d = np.roll(a, -1) - a
        dd = np.abs(d) ** 2
        idx = np.empty(len(pts), np.int64)
        frac = np.empty(len(pts))
        dist = np.empty(len(pts))
        chunk = max(1, 4_000_000 // len(a))
        for s in range(0, len(pts), chunk):
            z = pts[s:s + chunk, None]
            t = np.clip(((z - a) * d.conj()).real / dd, 0.0, 1.0)
            e = np.abs(a + t * d - z)
            k = np.argmin(e, axis=1)
            r = np.arange(len(k))
            idx[s:s + chunk] = k
            frac[s:s + chunk] = t[r, k]
            dist[s:s + chunk] = e[r, k]
        return idx, frac, dist

    def to_csv(self, path, phi: Optional[np.ndarray] = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for k, z in enumerate(self.samples):
                row = [repr(float(z.real)), repr(float(z.imag))]
                if phi is not None:
                    row.append(repr(float(phi[k])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        """Read x, y[, phi] rows; returns (boundary, BoundaryData or None).

        The polyline is closed implicitly.  Clockwise input is reversed
        together with its data.
        """
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(x) for x in rec])
                except ValueError:
                    if rows:
                        raise InputError(f"bad boundary row {rec!r}") from None
                    continue  # header line
        if not rows:
            raise InputError("boundary file has no rows")
        widths = {len(r) for r in rows}
        if widths not in ({2}, {3}):
            raise InputError("boundary rows need 2 or 3 columns consistently")
        arr = np.array(rows)
        z = arr[:, 0] + 1j * arr[:, 1]
        phi = arr[:, 2] if arr.shape[1] == 3 else None
        if len(z) > 1 and z[-1] == z[0]:
            z, phi = z[:-1], (phi[:-1] if phi is not None else None)
        area = 0.5 * (z.conj() * np.roll(z, -1)).imag.sum()
        if area < 0:
            z = z[::-1]
            phi = phi[::-1] if phi is not None else None
        b = cls(z)
        return b, (BoundaryData(b, phi) if phi is not None else None)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Real data at the boundary samples, linear in arclength between them."""

    boundary: JordanBoundary
    phi: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.phi, float).ravel().copy()
        if len(v) != self.boundary.n:
            raise InputError(f"boundary data has {len(v)} values for {self.boundary.n} samples")
        if not np.all(np.isfinite(v)):
            raise InputError("boundary data must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "phi", v)

    @classmethod
    def from_function(cls, boundary: JordanBoundary, func) -> "BoundaryData":
        return cls(boundary, np.real(func(boundary.samples)))

    def at(self, pts) -> np.ndarray:
        """Data at the nearest boundary point of each point."""
        pts = np.asarray(pts, complex)
        k, t, _ = self.boundary.project(pts)
        v = self.phi
        out = (1 - t) * v[k] + t * v[(k + 1) % len(v)]
        return out.reshape(pts.shape)


# ---------------------------------------------------------------------------
# smooth parametrisation of a sampled curve
# ---------------------------------------------------------------------------

class _Curve:
    """Periodic parametrisation t in [0, 2 pi) through the samples.

    Samples that are a smooth function of their index (fast Fourier decay)
    are interpolated trigonometrically; anything else gets a periodic cubic
    spline in chord length.
    """

    def __init__(self, samples: np.ndarray, spectral_tol: float = 1e-10):
        p = np.asarray(samples, complex)
        n = len(p)
        self.n = n
        c = np.fft.fft(p) / n
        k = np.fft.fftfreq(n, 1.0 / n)
        tail = np.abs(c[np.abs(k) > n / 4]).max() if n >= 8 else np.inf
        self.spectral = bool(tail <= spectral_tol * np.abs(c).sum())
        if self.spectral:
            self.coef = c
            self.freq = k
            self.sample_params = 2 * np.pi * np.arange(n) / n
        else:
            seg = np.abs(np.diff(np.append(p, p[0])))
            s = np.concatenate(([0.0], np.cumsum(seg)))
            s = 2 * np.pi * s / s[-1]
            self.spline = CubicSpline(s, np.append(p, p[0]), bc_type="periodic")
            self.sample_params = s[:-1]

    def eval(self, t, nu: int = 0) -> np.ndarray:
        t = np.asarray(t, float)
        if self.spectral:
            k = self.freq
            e = np.exp(1j * np.outer(t, k))
            return e @ (self.coef * (1j * k) ** nu)
        return self.spline(t, nu)

    def _resample(self, m: int, nu: int) -> np.ndarray:
        n = self.n
        if m <= n:
            t = 2 * np.pi * np.arange(m) / m
            return np.exp(1j * np.outer(t, self.freq)) @ (self.coef * (1j * self.freq) ** nu)
        big = np.zeros(m, complex)
        k = self.freq
        idx = np.where(k >= 0, k, m + k).astype(int)
        coef = self.coef.copy()
        if n % 2 == 0:
            # split the Nyquist mode symmetrically
            ny = n // 2
            j = int(np.nonzero(k == -ny)[0][0])
            half = coef[j] / 2
            coef[j] = half
            big[ny] += half * (1j * ny) ** nu
        big[idx] += coef * (1j * k) ** nu
        return np.fft.ifft(big) * m

    def sample(self, m: int):
        t = 2 * np.pi * np.arange(m) / m
        if self.spectral:
            return t, self._resample(m, 0), self._resample(m, 1)
        return t, self.spline(t), self.spline(t, 1)


def _periodic_derivative(v: np.ndarray) -> np.ndarray:
    n = len(v)
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0
    return np.fft.ifft(1j * k * np.fft.fft(v)).real


# ---------------------------------------------------------------------------
# Riemann map
# ---------------------------------------------------------------------------

def _cauchy_density(z: np.ndarray, dz: np.ndarray, w0: complex):
    """Real density sigma with Re G = -log|w - w0| on the curve, and Im G there."""
    m = len(z)
    dt = 2 * np.pi / m
    diff = z[None, :] - z[:, None]
    np.fill_diagonal(diff, 1.0)
    C = dz[None, :] * dt / (2j * np.pi * diff)
    np.fill_diagonal(C, 0.0)
    A = C.real.copy()
    A[np.diag_indices(m)] = 1.0 - C.real.sum(axis=1)
    rhs = -np.log(np.abs(z - w0))
    try:
        sigma = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("correspondence solve did not converge") from exc
    if not np.all(np.isfinite(sigma)):
        raise NumericFailure("correspondence solve did not converge")
    img = (C.imag * (sigma[None, :] - sigma[:, None])).sum(axis=1) - _periodic_derivative(sigma) / m
    return sigma, img


def _barycentric(z, dz, vals, w):
    """Cauchy integral of boundary values at interior points, barycentric form.

    Also returns, per point, the distance to the nearest node in units of
    that node's spacing; the sum is accurate when this exceeds a few units.
    """
    w = np.asarray(w, complex).ravel()
    out = np.empty(w.shape, complex)
    ratio = np.empty(w.shape)
    spacing = np.abs(dz) * (2 * np.pi / len(z))
    scale = np.abs(z).max() + 1.0
    chunk = max(1, 4_000_000 // len(z))
    for s in range(0, len(w), chunk):
        p = w[s:s + chunk, None]
        d = z[None, :] - p
        ad = np.abs(d)
        k = np.argmin(ad / spacing, axis=1)
        r = np.arange(len(k))
        ratio[s:s + chunk] = ad[r, k] / spacing[k]
        hit = ad[r, k] <= 1e-14 * scale
        d = np.where(ad <= 1e-14 * scale, 1.0, d)
        a = dz[None, :] / d
        v = (a @ vals) / a.sum(axis=1)
        v[hit] = vals[k[hit]]
        ratio[s:s + chunk][hit] = np.inf
        out[s:s + chunk] = v
    return out, ratio


def _trig_eval(coef: np.ndarray, freq: np.ndarray, t) -> np.ndarray:
    """sum_k coef_k e^{i freq_k t} for integer frequencies, by Horner in e^{it}."""
    t = np.asarray(t, float)
    freq = np.asarray(freq).astype(np.int64)
    lo = int(freq.min())
    dense = np.zeros(int(freq.max()) - lo + 1, complex)
    np.add.at(dense, freq - lo, coef)
    x = np.exp(1j * t)
    acc = np.zeros(t.shape, complex)
    for c in dense[::-1]:
        acc = acc * x + c
    return acc * np.exp(1j * lo * t)


def _fft_upsample(v: np.ndarray, m: int) -> np.ndarray:
    """Trigonometric interpolant of real periodic samples v at m >= len(v) uniform points."""
    n = len(v)
    c = np.fft.rfft(v)
    if n % 2 == 0:
        c[-1] /= 2  # Nyquist mode split symmetrically
    big = np.zeros(m // 2 + 1, complex)
    big[:len(c)] = c
    return np.fft.irfft(big, m) * (m / n)


def _periodic_coefficients(v: np.ndarray):
    n = len(v)
    c = np.fft.fft(v) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        # symmetric Nyquist split keeps real data real
        j = n // 2
        c = np.append(c, c[j] / 2)
        c[j] /= 2
        k = np.append(k, n // 2)
    return c, k


NEAR_BOUNDARY_SPACINGS = 4.0
MAX_REFINEMENT = 256


@dataclass(eq=False)
class RiemannMap:
    """Conformal map of a Jordan domain onto the unit disk, R(anchor) = 0, R'(anchor) > 0."""

    boundary: JordanBoundary
    anchor: complex
    nodes: np.ndarray
    tangents: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray                  # unwrapped boundary angles at the nodes
    conformality_residual: float
    params: np.ndarray = field(repr=False, default=None)
    _curve: Optional[_Curve] = field(repr=False, default=None)
    _g0: complex = 0j
    _inverse: Optional[np.ndarray] = field(repr=False, default=None)
    _refined: dict = field(repr=False, default_factory=dict)

    def _smooth(self) -> bool:
        return self._curve is not None and self._curve.spectral

    def angle_at(self, t, nu: int = 0) -> np.ndarray:
        """Image angle of the curve point with parameter t (nu = 1: its derivative)."""
        m = len(self.theta)
        base = 2 * np.pi * np.arange(m) / m
        resid = self.theta - base
        t = np.asarray(t, float)
        tm = np.mod(t, 2 * np.pi)
        if self._smooth():
            c, k = _periodic_coefficients(resid)
            v = _trig_eval(c * (1j * k) ** nu, k, tm).real
        else:
            cs = CubicSpline(np.append(base, 2 * np.pi), np.append(resid, resid[0]), bc_type="periodic")
            v = cs(tm, nu)
        return v + (1.0 if nu else t)

    def parameter_of_angle(self, beta, iterations: int = 30) -> np.ndarray:
        """Curve parameter whose image angle is beta (Newton with bisection fallback)."""
        beta = np.asarray(beta, float)
        m = len(self.theta)
        # dense table of the correspondence for the starting guess
        fine = 16 * m
        tf = 2 * np.pi * np.arange(fine) / fine
        if self._smooth():
            af = tf + _fft_upsample(self.theta - 2 * np.pi * np.arange(m) / m, fine)
        else:
            af = self.angle_at(tf)
        th_ext = np.concatenate((af - 2 * np.pi, af, af + 2 * np.pi, [af[0] + 4 * np.pi]))
        t_ext = np.concatenate((tf - 2 * np.pi, tf, tf + 2 * np.pi, [4 * np.pi]))
        shift = 2 * np.pi * np.floor((beta - self.theta[0]) / (2 * np.pi))
        b = beta - shift
        j = np.clip(np.searchsorted(th_ext, b) - 1, 0, len(th_ext) - 2)
        lo, hi = t_ext[j], t_ext[j + 1]
        t = np.interp(b, th_ext, t_ext)
        for _ in range(iterations):
            f = self.angle_at(t) - b
            lo = np.where(f < 0, t, lo)
            hi = np.where(f > 0, t, hi)
            tn = t - f / self.angle_at(t, 1)
            bad = ~((tn >= lo) & (tn <= hi))
            tn = np.where(bad, 0.5 * (lo + hi), tn)
            delta = np.abs(tn - t).max()
            t = tn
            if delta < 1e-10:  # quadratic convergence: the next error is far smaller
                break
        return t + shift

    @property
    def sample_angles(self) -> np.ndarray:
        """Image angles of the boundary samples (unwrapped, increasing)."""
        t = self._curve.sample_params
        if self._smooth() and len(self.nodes) % len(t) == 0:
            return self.theta[:: len(self.nodes) // len(t)].copy()
        return self.angle_at(t)

    def _level(self, u: int):
        """Nodes, tangents and density on u times as many nodes."""
        if u == 1:
            return self.nodes, self.tangents, self.sigma
        if u not in self._refined:
            m = len(self.nodes) * u
            _, z, dz = self._curve.sample(m)
            t = 2 * np.pi * np.arange(m) / m
            if self._smooth():
                sig = _fft_upsample(self.sigma, m)
            else:
                base = 2 * np.pi * np.arange(len(self.sigma)) / len(self.sigma)
                cs = CubicSpline(np.append(base, 2 * np.pi), np.append(self.sigma, self.sigma[0]),
                                 bc_type="periodic")
                sig = cs(t)
            self._refined[u] = (z, dz, sig)
        return self._refined[u]

    def _cauchy(self, w: np.ndarray) -> np.ndarray:
        G, ratio = _barycentric(self.nodes, self.tangents, self.sigma.astype(complex), w)
        idx = np.nonzero(ratio < NEAR_BOUNDARY_SPACINGS)[0]
        u = 1
        while idx.size and u < MAX_REFINEMENT:
            u *= 2
            z, dz, sig = self._level(u)
            g, r = _barycentric(z, dz, sig.astype(complex), w[idx])
            G[idx] = g
            idx = idx[r < NEAR_BOUNDARY_SPACINGS]
        return G

    def __call__(self, w) -> np.ndarray:
        w = np.asarray(w, complex)
        G = self._cauchy(w.ravel()).reshape(w.shape)
        return (w - self.anchor) * np.exp(G - 1j * self._g0.imag)

    def derivative_at_anchor(self) -> complex:
        return complex(np.exp(self._g0.real))

    def _inverse_coefficients(self, m: Optional[int] = None) -> np.ndarray:
        if self._inverse is not None:
            return self._inverse
        m = m or 2 * len(self.nodes)
        alpha = 2 * np.pi * np.arange(m) / m + self.theta[0]
        # invert theta(t) by interpolation, then Newton on the spline
        base = 2 * np.pi * np.arange(len(self.theta)) / len(self.theta)
        th_ext = np.concatenate((self.theta - 2 * np.pi, self.theta, self.theta + 2 * np.pi))
        t_ext = np.concatenate((base - 2 * np.pi, base, base + 2 * np.pi))
        t = np.interp(alpha, th_ext, t_ext)
        for _ in range(4):
            h = 1e-6
            f0 = self.angle_at(t) - alpha
            df = (self.angle_at(t + h) - self.angle_at(t - h)) / (2 * h)
            t = t - f0 / df
        pts = self._curve.eval(np.mod(t, 2 * np.pi))
        c = np.fft.fft(pts) / m
        # boundary samples start at angle theta[0]; shift to angle 0
        k = np.fft.fftfreq(m, 1.0 / m)
        c = c * np.exp(-1j * k * self.theta[0])
        self._inverse = c[: m // 2]
        return self._inverse

    def inverse(self, z) -> np.ndarray:
        """R^{-1} on the closed disk from the power series of the boundary correspondence."""
        c = self._inverse_coefficients()
        z = np.asarray(z, complex)
        out = np.zeros(z.shape, complex)
        for ck in c[::-1]:
            out = out * z + ck
        return out

    def inverse_derivative(self, z) -> np.ndarray:
        c = self._inverse_coefficients()
        k = np.arange(len(c))
        d = (c * k)[1:]
        z = np.asarray(z, complex)
        out = np.zeros(z.shape, complex)
        for ck in d[::-1]:
            out = out * z + ck
        return out


def _map_parts(curve: _Curve, m: int, anchor: complex):
    _, z, dz = curve.sample(m)
    sigma, img = _cauchy_density(z, dz, anchor)
    ind = (dz * (2 * np.pi / m) / (2j * np.pi * (z - anchor))).sum()
    if abs(ind - 1) > 1e-3:
        raise InputError("anchor lies outside the boundary")
    a = dz / (z - anchor)
    g0 = complex((a @ sigma) / a.sum())
    theta = np.angle(z - anchor) + img - g0.imag
    theta = np.unwrap(theta)
    if theta[0] > np.pi or theta[0] <= -np.pi:
        theta = theta - 2 * np.pi * np.round(theta[0] / (2 * np.pi))
    return z, dz, sigma, theta, g0


def riemann_map(boundary: JordanBoundary, anchor: Optional[complex] = None, n_nodes: Optional[int] = None,
                residual_check: bool = True) -> RiemannMap:
    """Riemann map of the domain inside ``boundary`` onto the unit disk.

    The anchor defaults to the area centroid.  ``conformality_residual`` is
    the largest difference, on a curve just inside the boundary and at the
    anchor, between this map and one computed with twice the nodes.
    """
    curve = _Curve(boundary.samples)
    w0 = complex(boundary.centroid if anchor is None else anchor)
    if not boundary.contains(np.array([w0]))[0]:
        raise InputError("anchor lies outside the boundary")
    m = int(n_nodes or (max(1024, boundary.n) if curve.spectral else max(1024, 2 * boundary.n)))
    if m < MIN_BOUNDARY_SAMPLES:
        raise InputError(f"riemann_map needs at least {MIN_BOUNDARY_SAMPLES} nodes")
    z, dz, sigma, theta, g0 = _map_parts(curve, m, w0)
    steps = np.diff(np.append(theta, theta[0] + 2 * np.pi))
    if np.any(steps <= 0) or abs(theta[-1] - theta[0] + steps[-1] - 2 * np.pi) > 1e-6:
        raise NumericFailure("correspondence solve did not converge")
    R = RiemannMap(boundary, w0, z, dz, sigma, theta, float("nan"), 2 * np.pi * np.arange(m) / m, curve, g0)
    if residual_check:
        z2, dz2, sigma2, theta2, g02 = _map_parts(curve, 2 * m, w0)
        R2 = RiemannMap(boundary, w0, z2, dz2, sigma2, theta2, float("nan"), None, curve, g02)
        k = np.linspace(0, m, min(m, 256), endpoint=False).astype(int)
        test = np.concatenate(([w0], w0 + 0.95 * (z[k] - w0)))
        R.conformality_residual = float(np.abs(R(test) - R2(test)).max())
    return R


# ---------------------------------------------------------------------------
# Schwarz integral
# ---------------------------------------------------------------------------

def _uniform_circle_values(phi) -> np.ndarray:
    if isinstance(phi, BoundaryData):
        b = phi.boundary
        if not b.is_unit_circle(1e-6):
            raise InputError("Schwarz integral needs data on the unit circle")
        n = b.n
        th = 2 * np.pi * np.arange(n) / n
        return phi.at(np.exp(1j * th))
    v = np.asarray(phi, float).ravel()
    if len(v) < 2 or not np.all(np.isfinite(v)):
        raise InputError("boundary values must be finite (at least 2)")
    return v


def schwarz_integral(phi, z, margin: float = 0.02, method: str = "trapezoid") -> np.ndarray:
    """Holomorphic h on the disk with Re h = phi on the circle and Im h(0) = 0.

    ``phi`` holds values at the angles 2 pi k / N (or is BoundaryData on the
    unit circle).  ``method="trapezoid"`` is the N-point trapezoid rule for
    (1/2 pi i) \\oint phi (zeta + z)/(zeta - z) dzeta/zeta, summed in closed
    form as c_0 + 2 sum_{m=1}^{N} c_m z^m / (1 - z^N) with the discrete
    Fourier coefficients c_m.  ``method="series"`` drops the aliased tail and
    is the exact extension of the trigonometric interpolant of phi, usable up
    to the circle.
    """
    v = _uniform_circle_values(phi)
    n = len(v)
    c = np.fft.fft(v) / n
    z = np.asarray(z, complex)
    r = np.abs(z)
    if np.any(r > 1 + 1e-12):
        raise InputError("Schwarz integral points must lie in the closed unit disk")
    scale = max(np.abs(v).max(), 1e-300)
    if method == "trapezoid":
        if np.any(r >= 1):
            raise InputError("trapezoid Schwarz integral needs |z| < 1")
        rmax = float(r.max()) if r.size else 0.0
        if rmax > 1 - margin or rmax ** n * scale > 1e-8 * scale:
            warnings.warn(f"Schwarz quadrature error up to {2 * rmax ** n * scale:.2e} "
                          f"(max |z| = {rmax:.4f}, {n} nodes)", AccuracyWarning, stacklevel=2)
        acc = np.zeros(z.shape, complex)
        for m in range(n, 0, -1):
            acc = (acc + c[m % n]) * z
        h = c[0] + 2 * acc / (1 - z ** n)
    elif method == "series":
        kmax = (n - 1) // 2
        coef = np.concatenate(([c[0]], 2 * c[1:kmax + 1]))
        if n % 2 == 0:
            coef = np.append(coef, c[n // 2])
        tail = np.abs(coef[len(coef) * 3 // 4:]).max() if len(coef) >= 4 else 0.0
        if r.size and r.max() > 1 - margin and tail > 1e-8 * scale:
            warnings.warn(f"boundary data not resolved by {n} nodes (tail {tail:.2e}); "
                          "values near the circle are inaccurate", AccuracyWarning, stacklevel=2)
        h = np.zeros(z.shape, complex)
        for ck in coef[::-1]:
            h = h * z + ck
    else:
        raise InputError(f"unknown Schwarz method {method!r}")
    return h - 1j * c[0].imag


# ---------------------------------------------------------------------------
# boundary error
# ---------------------------------------------------------------------------

def boundary_error_details(f: ComplexMapField, phi: BoundaryData, collar_width: float = 3) -> dict:
    """Boundary mismatch of Re f against phi.

    Re f is sampled along the inward normal of every boundary sample at
    depths (j + 1/2) h, j = 1..collar_width, inside the collar, and the
    boundary limit is extrapolated (polynomial of degree min(2, W - 1)).
    ``error`` is the largest |limit - phi|; ``collar_sup`` is the largest
    raw mismatch |Re f - phi| over the collar samples.
    """
    W = int(round(collar_width))
    if W < 2:
        raise InputError("collar must be at least 2 cells wide")
    g = f.grid
    h = g.h
    b = phi.boundary
    depth = (np.arange(1, W + 1) + 0.5) * h
    pts = b.samples[:, None] + depth[None, :] * b.inward_normals()[:, None]
    re = f.values.real
    vals = sample_field(g, np.where(g.mask, re, np.nan), pts.ravel()).reshape(pts.shape)
    deg = min(2, W - 1)
    ok = np.all(np.isfinite(vals), axis=1)
    if not ok.any():
        raise InputError("collar is not resolved by the grid")
    V = np.vander(depth, deg + 1)
    coef, *_ = np.linalg.lstsq(V, vals[ok].T, rcond=None)
    limit = coef[-1]
    err = np.abs(limit - phi.phi[ok])
    raw = np.abs(vals[ok] - phi.phi[ok, None])
    return {"error": float(err.max()), "collar_sup": float(raw.max()), "collar_width": W,
            "samples_used": int(ok.sum()), "samples": int(len(ok))}


def boundary_error(f: ComplexMapField, phi: BoundaryData, boundary: Optional[JordanBoundary] = None,
                   collar_width: float = 3) -> float:
    """Largest |Re f - phi| at the boundary, extrapolated from the collar (see boundary_error_details)."""
    if boundary is not None and boundary is not phi.boundary:
        phi = BoundaryData(boundary, phi.phi)
    return boundary_error_details(f, phi, collar_width)["error"]


# ---------------------------------------------------------------------------
# Dirichlet pipeline
# ---------------------------------------------------------------------------

@dataclass
class DirichletConfig:
    solver: SolverConfig = field(default_factory=SolverConfig)
    boundary_nodes: int = 1024
    collar_width: float = 3
    force: bool = False
    route_points: Optional[Sequence[complex]] = None
    report: Optional[ReportConfig] = None
    exclusion_radius: float = 0.05
    derivative_floor: float = 1e-3

    def __post_init__(self):
        if int(self.boundary_nodes) < MIN_BOUNDARY_SAMPLES:
            raise InputError(f"boundary_nodes must be at least {MIN_BOUNDARY_SAMPLES}")
        if self.collar_width < 2:
            raise InputError("collar must be at least 2 cells wide")

    def to_dict(self) -> dict:
        pts = None if self.route_points is None else [[complex(p).real, complex(p).imag] for p in self.route_points]
        return {"solver": self.solver.to_dict(), "boundary_nodes": int(self.boundary_nodes),
                "collar_width": self.collar_width, "force": bool(self.force), "route_points": pts,
                "exclusion_radius": self.exclusion_radius, "derivative_floor": self.derivative_floor}


@dataclass
class DirichletResult:
    f: ComplexMapField
    boundary_error: float
    collar_sup: float
    residual_relative: float
    jacobian_positive_fraction: float
    route: str
    riemann_residual: float
    solve: Optional[SolveResult] = None
    extras: dict = field(default_factory=dict)

    def diagnostics(self) -> dict:
        d = {"boundary_error": self.boundary_error, "collar_sup": self.collar_sup,
             "residual_relative": self.residual_relative,
             "jacobian_positive_fraction": self.jacobian_positive_fraction, "route": self.route,
             "riemann_residual": self.riemann_residual}
        if self.solve is not None:
            d["solver"] = self.solve.metadata()
        d.update(self.extras)
        return d


def _power_series(coef: np.ndarray, zeta: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    """sum_k coef_k zeta^k, truncating per radius band where |zeta|^k falls below tol."""
    zeta = np.asarray(zeta, complex)
    flat = zeta.ravel()
    out = np.empty(flat.shape, complex)
    r = np.abs(flat)
    done = np.zeros(flat.shape, bool)
    for edge in (0.5, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995, 0.999, np.inf):
        sel = ~done & (r <= edge)
        if not sel.any():
            continue
        rmax = min(r[sel].max(), 1.0)
        K = len(coef) if rmax >= 1 or rmax == 0 else min(len(coef), int(np.log(tol) / np.log(rmax)) + 2)
        K = max(K, 1)
        z = flat[sel]
        acc = np.zeros(z.shape, complex)
        for ck in coef[:K][::-1]:
            acc = acc * z + ck
        out[sel] = acc
        done |= sel
    return out.reshape(zeta.shape)


@dataclass(eq=False)
class DiskComposition:
    """Evaluator of h o R o F on the closed unit disk."""

    F: Callable
    R: RiemannMap
    coef: np.ndarray  # power series of h
    transplant_nodes: int = 0
    transplant_tail: float = 0.0

    def image(self, z) -> np.ndarray:
        """R(F(z)), pulled onto the closed disk."""
        g = self.R(self.F(np.asarray(z, complex)))
        r = np.abs(g)
        return np.where(r > 1, g / np.maximum(r, 1e-300), g)

    def h(self, zeta) -> np.ndarray:
        return _power_series(self.coef, zeta)

    def __call__(self, z) -> np.ndarray:
        return self.h(self.image(z))


MAX_TRANSPLANT_NODES = 1 << 16


def compose_dirichlet(F: Callable, F_boundary: Callable, phi_at_angle: Callable, n_nodes: int = 1024,
                      anchor: Optional[complex] = None, tail_tol: float = 1e-13) -> DiskComposition:
    """h o R o F for a homeomorphic disk solution F.

    ``F_boundary(theta)`` gives F on the unit circle, ``phi_at_angle(theta)``
    the boundary data at e^{i theta}.  R maps F(D) onto the disk (anchor at
    the centroid of the image unless given).  The data are carried to the
    image circle through the boundary correspondence: for uniform image
    angles beta the source angle is found by Newton's method on the
    interpolated correspondence.  The number of image angles is doubled from
    ``n_nodes`` until the Fourier tail of the transplanted data drops below
    ``tail_tol`` (crowding at strongly elongated images needs many modes) or
    stops decaying faster than algebraically (rough data).
    h is the Schwarz integral with Im h(0) = 0.
    """
    th = 2 * np.pi * np.arange(n_nodes) / n_nodes
    fb = np.asarray(F_boundary(th), complex)
    try:
        image = JordanBoundary(fb)
    except InputError as exc:
        raise NumericFailure(f"solution image is not a Jordan domain: {exc}") from exc
    if image.samples[0] != fb[0] or image.samples[1] != fb[1]:
        raise NumericFailure("solution reverses orientation on the boundary")
    R = riemann_map(image, anchor=anchor)
    # curve parameter -> source angle (identity for smooth samples)
    tp = R._curve.sample_params
    if R._curve.spectral:
        to_source = lambda t: t
    else:
        cs = CubicSpline(np.append(tp, 2 * np.pi), np.append(th - tp, 0.0), bc_type="periodic")
        to_source = lambda t: t + cs(np.mod(t, 2 * np.pi))
    a0 = float(R.theta[0])
    N = int(n_nodes)
    prev = np.inf
    data_limited = False
    while True:
        beta = a0 + 2 * np.pi * np.arange(N) / N
        psi = np.asarray(phi_at_angle(to_source(R.parameter_of_angle(beta))), float)
        c = np.fft.fft(psi) / N
        kmax = (N - 1) // 2
        scale = max(np.abs(c).max(), 1e-300)
        tail = float(np.abs(c[kmax * 3 // 4:kmax + 1]).max() / scale)
        if tail <= tail_tol or 2 * N > MAX_TRANSPLANT_NODES:
            break
        if tail > prev / 8:
            # algebraic decay: the data themselves are rough (e.g. piecewise
            # linear), more modes do not help
            data_limited = True
            break
        prev = tail
        N *= 2
    if tail > tail_tol and not data_limited:
        warnings.warn(f"transplanted boundary data not resolved by {N} modes (tail {tail:.1e})",
                      AccuracyWarning, stacklevel=2)
    # psi sampled from image angle a0: rotate the coefficients back to angle 0
    k = np.fft.fftfreq(N, 1.0 / N)
    c = c * np.exp(-1j * k * a0)
    coef = np.concatenate(([c[0].real], 2 * c[1:kmax + 1]))
    return DiskComposition(F, R, coef, N, tail)


def _route_points(mu: MuField, cfg: DirichletConfig):
    """User points, else the node of largest K (the most degenerate point).

    For constant K the node nearest the centre of the mask is used.
    """
    if cfg.route_points is not None:
        return [complex(p) for p in cfg.route_points]
    g = mu.grid
    K = np.where(g.mask, mu.K, -np.inf)
    if np.ptp(mu.K[g.mask]) <= 1e-12 * K.max():
        zc = g.z[g.mask].mean()
        d = np.where(g.mask, np.abs(g.z - zc), np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
    else:
        # nodes tied for the maximum surround a singular point between nodes
        top = g.mask & (mu.K >= K.max() * (1 - 1e-9))
        zt = g.z[top]
        if np.abs(zt - zt.mean()).max() <= 1.5 * g.h:
            return [complex(zt.mean())]
        i, j = np.unravel_index(np.argmax(K), K.shape)
    return [complex(g.z[i, j])]


def _check_route(mu: MuField, cfg: DirichletConfig) -> tuple[str, list]:
    pts = _route_points(mu, cfg)
    if not pts:
        return "not-checked", pts
    rep = condition_report(mu, pts, cfg.report)
    route = rep.overall_route
    if route == NONE_ESTABLISHED and not cfg.force:
        raise RouteNotEstablished("route not established")
    return route, pts


def _beltrami_residual(f: ComplexMapField, mu: MuField, exclude: list, radius: float, floor: float) -> float:
    fz, fzb = f.wirtinger()
    g = f.grid
    ok = g.mask & np.isfinite(fz) & np.isfinite(fzb)
    for p in exclude:
        ok &= np.abs(g.z - p) >= radius
    if not ok.any():
        return float("nan")
    a = np.abs(fz[ok])
    ok2 = np.zeros_like(ok)
    ok2[ok] = a > floor * np.median(a)
    r = fzb[ok2] - mu.values[ok2] * fz[ok2]
    return float(np.linalg.norm(r) / np.linalg.norm(fz[ok2]))


def _jacobian_fraction(f: ComplexMapField) -> float:
    fz, fzb = f.wirtinger()
    J = np.abs(fz) ** 2 - np.abs(fzb) ** 2
    ok = f.grid.mask & np.isfinite(J)
    return float((J[ok] > 0).mean()) if ok.any() else float("nan")


def _pullback_mu(mu: MuField, Q: RiemannMap, grid: GridSpec) -> MuField:
    z = grid.z[grid.mask]
    P = Q.inverse(z)
    dP = Q.inverse_derivative(z)
    # extend mu past the mask so that samples next to the boundary stay bilinear
    ext = _extend_nearest(np.where(mu.grid.mask, mu.values, np.nan))
    full = mu.grid.with_mask(np.ones_like(mu.grid.mask))
    m = sample_field(full, ext.real, P) + 1j * sample_field(full, ext.imag, P)
    m = np.where(np.isfinite(m), m, 0.0)
    vals = np.zeros(grid.z.shape, complex)
    vals[grid.mask] = m * np.conj(dP) / dP
    return MuField(grid, vals, degeneracy_threshold=mu.degeneracy_threshold, sanitize=True)


def dirichlet_solve(domain: JordanBoundary, mu: MuField, phi: BoundaryData,
                    config: Optional[DirichletConfig] = None) -> DirichletResult:
    """Regular solution of the Dirichlet problem Re f = phi for f_zbar = mu f_z in a Jordan domain.

    The unit disk is solved directly on ``mu.grid``.  Any other Jordan
    domain is mapped to the disk by its Riemann map Q, the coefficient is
    pulled back (mu(P) conj(P') / P' with P = Q^{-1}), and the disk result is
    evaluated at Q(w) on ``mu.grid``.
    """
    cfg = config or DirichletConfig()
    if phi.boundary is not domain:
        if phi.boundary.n != domain.n or not np.allclose(phi.boundary.samples, domain.samples):
            raise InputError("boundary data must live on the domain boundary")
    inside = mu.grid.mask & domain.contains(mu.grid.z)
    if inside.sum() < 0.9 * mu.grid.mask.sum():
        raise InputError("domain mask is not consistent with the boundary")
    route, pts = _check_route(mu, cfg)
    extras = {"route_points": [[p.real, p.imag] for p in pts]}
    if domain.is_unit_circle():
        disk_mu = mu
        Q = None
        phi_fn = lambda t: phi.at(np.exp(1j * np.asarray(t)))
    else:
        Q = riemann_map(domain)
        n = int(cfg.solver.resolution)
        disk_mu = _pullback_mu(mu, Q, disk_grid(n, 1.0))
        # disk angle -> boundary point of the domain, where phi is defined
        phi_fn = lambda t: phi.at(Q._curve.eval(np.mod(Q.parameter_of_angle(np.asarray(t)), 2 * np.pi)))
        extras["domain_map_residual"] = Q.conformality_residual
    sol = solve_beltrami_disk(disk_mu, cfg.solver)
    comp = compose_dirichlet(sol.evaluate, sol.boundary_values, phi_fn, int(cfg.boundary_nodes))
    g = mu.grid
    vals = np.full(g.z.shape, np.nan + 0j)
    zz = g.z[g.mask]
    if Q is None:
        vals[g.mask] = comp(zz)
    else:
        q = Q(zz)
        r = np.abs(q)
        vals[g.mask] = comp(np.where(r > 1, q / r, q))
    f = ComplexMapField(g, vals, provenance="composed")
    be = boundary_error_details(f, phi, cfg.collar_width)
    res = _beltrami_residual(f, mu, pts, cfg.exclusion_radius, cfg.derivative_floor)
    jac = _jacobian_fraction(f)
    return DirichletResult(f, be["error"], be["collar_sup"], res, jac, route, comp.R.conformality_residual,
                           sol, extras)


# ---------------------------------------------------------------------------
# annulus
# ---------------------------------------------------------------------------

def _circle_values(phi, n: Optional[int]) -> np.ndarray:
    if callable(phi):
        n = n or 256
        return np.asarray(phi(2 * np.pi * np.arange(n) / n), float) * np.ones(n)
    v = np.asarray(phi, float)
    if v.ndim == 0:
        return np.full(n or 256, float(v))
    return v.ravel()


@dataclass(eq=False)
class AnnulusHarmonic:
    """u = a0 + b0 log|w| + Re sum_{n>=1} 2 (A_n w^n + conj(B_n) w^{-n}) on r_in < |w| < 1."""

    r_in: float
    a0: float
    b0: float
    A: np.ndarray
    B: np.ndarray

    def _phi(self, w):
        """The (single-valued) holomorphic part a0 + 2 sum (A_n w^n + conj(B_n) w^{-n})."""
        w = np.asarray(w, complex)
        pos = np.zeros(w.shape, complex)
        for a in self.A[::-1]:
            pos = (pos + 2 * a) * w
        neg = np.zeros(w.shape, complex)
        for b in np.conj(self.B)[::-1]:
            neg = (neg + 2 * b) / w
        return self.a0 + pos + neg

    def _dphi(self, w):
        w = np.asarray(w, complex)
        n = np.arange(1, len(self.A) + 1)
        pos = np.zeros(w.shape, complex)
        for a in (2 * n * self.A)[::-1]:
            pos = pos * w + a
        neg = np.zeros(w.shape, complex)
        for b in (-2 * n * np.conj(self.B))[::-1]:
            neg = (neg + b) / w
        return pos + neg / w + self.b0 / w

    def __call__(self, w) -> np.ndarray:
        w = np.asarray(w, complex)
        return self._phi(w).real + self.b0 * np.log(np.abs(w))

    def gradient(self, w):
        """(u_x, u_y)."""
        d = self._dphi(w)
        return d.real, -d.imag

    def conjugate(self, w, theta=None) -> np.ndarray:
        """Harmonic conjugate with branch cut on the positive real axis, arg in [0, 2 pi)."""
        w = np.asarray(w, complex)
        t = np.mod(np.angle(w), 2 * np.pi) if theta is None else np.asarray(theta, float)
        return self._phi(w).imag + self.b0 * t

    def to_field(self, grid: GridSpec) -> RealField:
        return RealField(grid, np.where(grid.mask, self(grid.z), np.nan))


def annulus_harmonic_dirichlet(r_in: float, phi_in, phi_out, n_samples: Optional[int] = None) -> AnnulusHarmonic:
    """Harmonic u on r_in < |w| < 1 with u = phi_in on |w| = r_in and phi_out on |w| = 1.

    Data are values at the angles 2 pi k / N (or callables of the angle, or
    constants).  Each Fourier mode n != 0 solves a 2 x 2 system for the
    coefficients of r^|n| and r^-|n|; mode 0 is a0 + b0 log r.
    """
    if not 0 < r_in < 1:
        raise InputError("inner radius must lie in (0, 1)")
    po = _circle_values(phi_out, n_samples)
    pi_ = _circle_values(phi_in, n_samples or len(po))
    if len(pi_) != len(po):
        n = max(len(pi_), len(po))
        po = _circle_values(phi_out, n) if callable(phi_out) or np.ndim(phi_out) == 0 else po
        pi_ = _circle_values(phi_in, n) if callable(phi_in) or np.ndim(phi_in) == 0 else pi_
        if len(pi_) != len(po):
            raise InputError("inner and outer data need the same number of samples")
    n = len(po)
    if n < 4 or not (np.all(np.isfinite(po)) and np.all(np.isfinite(pi_))):
        raise InputError("annulus data must be finite with at least 4 samples")
    P = np.fft.fft(po) / n
    Q = np.fft.fft(pi_) / n
    kmax = (n - 1) // 2
    tail = max(np.abs(P[kmax * 3 // 4:kmax + 1]).max(), np.abs(Q[kmax * 3 // 4:kmax + 1]).max()) if kmax >= 4 else 0
    scale = max(np.abs(P).max(), np.abs(Q).max(), 1e-300)
    if tail > 1e-8 * scale:
        warnings.warn(f"annulus data not band-limited at {n} samples (tail {tail:.2e}); "
                      "series truncation error", AccuracyWarning, stacklevel=2)
    a0 = P[0].real
    b0 = (Q[0].real - a0) / np.log(r_in)
    A = np.zeros(kmax, complex)
    B = np.zeros(kmax, complex)
    for m in range(1, kmax + 1):
        # A + B = P_m ; A r^m + B r^-m = Q_m (coefficients of e^{i m theta})
        rm = r_in ** m
        det = 1 / rm - rm
        A[m - 1] = (P[m] / rm - Q[m]) / det
        B[m - 1] = (Q[m] - P[m] * rm) / det
    if n % 2 == 0 and (abs(P[n // 2]) > 1e-12 * scale or abs(Q[n // 2]) > 1e-12 * scale):
        warnings.warn("Nyquist mode of the annulus data is dropped", AccuracyWarning, stacklevel=2)
    return AnnulusHarmonic(float(r_in), float(a0), float(b0), A, B)


@dataclass
class MultiValuedSolution:
    base_branch: ComplexMapField
    period: float
    slit_jump_real: float
    slit_jump_imag: float
    r_in: float
    evaluator: Optional[Callable] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"period": self.period, "slit_jump_real": self.slit_jump_real,
                "slit_jump_imag": self.slit_jump_imag, "r_in": self.r_in}


def _radial_flux(grad, r: float, n: int) -> float:
    t = 2 * np.pi * np.arange(n) / n
    w = r * np.exp(1j * t)
    ux, uy = grad(w)
    return float((r * (ux * np.cos(t) + uy * np.sin(t))).mean() * 2 * np.pi)


def _field_gradient(u: RealField):
    g = u.grid
    ux = _axis_derivative(u.values, g.mask, g.hx, axis=1)
    uy = _axis_derivative(u.values, g.mask, g.hy, axis=0)

    def grad(w):
        return sample_field(g, ux, w), sample_field(g, uy, w)
    return grad


def conjugate_period(u, grid: Optional[GridSpec] = None, radius: Optional[float] = None,
                     n_quad: int = 512, tol: Optional[float] = None, r_in: Optional[float] = None,
                     n_path: int = 64) -> MultiValuedSolution:
    """Period of the harmonic conjugate of u and a base branch of h = u + i v.

    ``u`` is an AnnulusHarmonic (exact gradient) or a RealField on an
    annulus grid (difference quotients).  The period is the flux
    \\oint (-u_y dx + u_x dy) over the circle of radius ``radius`` (default
    mid-annulus), by the trapezoid rule.  It is recomputed with half the
    nodes and on two nearby circles; a spread above ``tol`` means u is
    under-resolved.  The base branch lives on the annulus slit along the
    positive real axis; Im h is obtained by integrating the conjugate
    differential from the slit point at the quadrature radius, radially
    along the slit and then along circles.
    """
    if isinstance(u, AnnulusHarmonic):
        grad = u.gradient
        rin = u.r_in
        tol = 1e-8 if tol is None else tol
        value = u
    elif isinstance(u, RealField):
        if r_in is None:
            zz = np.abs(u.grid.z[u.grid.mask])
            rin = float(zz.min())
        else:
            rin = float(r_in)
        grad = _field_gradient(u)
        tol = 1e-3 if tol is None else tol
        value = lambda w: sample_field(u.grid, u.values, w)
        grid = grid or u.grid
    else:
        raise InputError("conjugate_period needs an AnnulusHarmonic or a RealField")
    rm = 0.5 * (rin + 1.0) if radius is None else float(radius)
    if not rin < rm < 1:
        raise InputError("period circle must lie inside the annulus")
    per = _radial_flux(grad, rm, n_quad)
    width = 1.0 - rin
    checks = [_radial_flux(grad, rm, max(8, n_quad // 2)),
              _radial_flux(grad, rm - 0.2 * width, n_quad), _radial_flux(grad, rm + 0.2 * width, n_quad)]
    spread = max(abs(c - per) for c in checks)
    if not np.isfinite(per) or spread > tol * max(1.0, abs(per)):
        raise NumericFailure("period quadrature unstable")
    if grid is None:
        grid = disk_grid(256, 1.0, inner=rin)

    if isinstance(u, AnnulusHarmonic):
        def branch(w, theta=None):
            return u(w) + 1j * (u.conjugate(w, theta) - u.conjugate(np.array([rm + 0j]), np.array([0.0]))[0])
    else:
        gl_x, gl_w = np.polynomial.legendre.leggauss(n_path)

        def branch(w, theta=None):
            w = np.asarray(w, complex)
            r = np.abs(w)
            t = np.mod(np.angle(w), 2 * np.pi) if theta is None else np.asarray(theta, float)
            # radial leg along the slit from rm to r: dv = -u_y dx
            s = rm + (r[..., None] - rm) * 0.5 * (gl_x + 1)
            _, uy = grad(s.astype(complex).ravel())
            v = -(uy.reshape(s.shape) * gl_w).sum(-1) * 0.5 * (r - rm)
            # angular leg: dv = r u_r dtheta
            ang = t[..., None] * 0.5 * (gl_x + 1)
            pts = r[..., None] * np.exp(1j * ang)
            ux, uy = grad(pts.ravel())
            ur = ux.reshape(pts.shape) * np.cos(ang) + uy.reshape(pts.shape) * np.sin(ang)
            v = v + (r[..., None] * ur * gl_w).sum(-1) * 0.5 * t
            return value(w) + 1j * v

    zz = grid.z[grid.mask]
    vals = np.full(grid.z.shape, np.nan + 0j)
    vals[grid.mask] = branch(zz)
    # sampled gradients are undefined in the outermost cells; drop them from the branch
    mask = grid.mask & np.isfinite(vals)
    if mask.sum() < 0.5 * grid.mask.sum():
        raise NumericFailure("base branch undefined on most of the annulus")
    base = ComplexMapField(grid.with_mask(mask), vals, provenance="composed")
    rr = np.linspace(rin + 0.1 * width, 1 - 0.1 * width, 9)
    lo = branch(rr.astype(complex), np.zeros_like(rr))
    hi = branch(rr.astype(complex), np.full_like(rr, 2 * np.pi))
    jr = float(np.abs(hi.real - lo.real).max())
    ji = float(np.abs((hi.imag - lo.imag) - per).max())
    return MultiValuedSolution(base, float(per), jr, ji, rin, branch)
