"""Grids, coefficient fields, dilatations and discrete differential operators.

All fields live on a rectangular lattice of ``ny`` rows by ``nx`` columns.
Row ``i`` has ordinate ``origin.imag + i*hy`` and column ``j`` has abscissa
``origin.real + j*hx``; arrays are indexed ``[i, j]``.  A boolean mask marks
the samples inside the domain.  Values outside the mask are carried as NaN
(real fields) or NaN+NaN*j (complex fields) unless noted otherwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage, special
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import InputError, NumericFailure

MU_CAP = 1.0 - 1e-12
DEFAULT_EXCLUSION_CELLS = 2.0
DEFAULT_JACOBIAN_FLOOR = 1e-10
DEFAULT_DEGENERACY_THRESHOLD = 10.0

GRID_FORMAT = "beltrami-grid"
GRID_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSpec:
    """Rectangular sample lattice with a domain mask.

    Parameters
    ----------
    origin : complex
        Position of sample ``[0, 0]`` (lower-left corner).
    width, height : float
        Extent of the lattice; spacings are ``width/(nx-1)`` and ``height/(ny-1)``.
    nx, ny : int
        Sample counts, both at least 4.
    mask : ndarray of bool, shape (ny, nx), optional
        Samples inside the domain. Must be non-empty and 4-connected.
    """

    origin: complex
    width: float
    height: float
    nx: int
    ny: int
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise InputError("nx and ny must be integers")
        if self.nx < 4 or self.ny < 4:
            raise InputError(f"grid needs nx, ny >= 4 (got {self.nx}, {self.ny})")
        if not (np.isfinite(self.width) and np.isfinite(self.height)) or self.width <= 0 or self.height <= 0:
            raise InputError("grid extent must be positive and finite")
        object.__setattr__(self, "origin", complex(self.origin))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        if self.mask is None:
            m = np.ones((self.ny, self.nx), dtype=bool)
        else:
            m = np.array(self.mask, dtype=bool)
            if m.shape != (self.ny, self.nx):
                raise InputError(f"mask shape {m.shape} does not match grid ({self.ny}, {self.nx})")
        if not m.any():
            raise InputError("mask is empty")
        _, ncomp = ndimage.label(m)
        if ncomp != 1:
            raise InputError(f"mask is not connected ({ncomp} components under 4-connectivity)")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def hx(self) -> float:
        return self.width / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.height / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def x(self) -> np.ndarray:
        return self.origin.real + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin.imag + self.hy * np.arange(self.ny)

    @property
    def z(self) -> np.ndarray:
        return self.x[None, :] + 1j * self.y[:, None]

    def with_mask(self, mask) -> "GridSpec":
        return GridSpec(self.origin, self.width, self.height, self.nx, self.ny, mask)

    def index_of(self, z: complex) -> tuple[float, float]:
        """Fractional (row, column) position of a point."""
        z = complex(z)
        return ((z.imag - self.origin.imag) / self.hy, (z.real - self.origin.real) / self.hx)

    def node_at(self, z: complex, tol: float = 1e-9) -> Optional[tuple[int, int]]:
        """Indices of the lattice node at ``z`` (within ``tol`` cells), or None."""
        fi, fj = self.index_of(z)
        i, j = int(round(fi)), int(round(fj))
        if abs(fi - i) <= tol and abs(fj - j) <= tol and 0 <= i < self.ny and 0 <= j < self.nx:
            return i, j
        return None

    def to_dict(self) -> dict:
        return {
            "origin": [self.origin.real, self.origin.imag],
            "width": self.width,
            "height": self.height,
            "nx": self.nx,
            "ny": self.ny,
        }

    @classmethod
    def square(cls, n: int, half_width: float = 1.0, center: complex = 0j, mask=None) -> "GridSpec":
        """``n`` x ``n`` lattice covering the square of half side ``half_width``."""
        c = complex(center)
        return cls(c - half_width * (1 + 1j), 2 * half_width, 2 * half_width, n, n, mask)


def disk_grid(n: int, radius: float = 1.0, center: complex = 0j, inner: float = 0.0,
              pad: int = 0) -> GridSpec:
    """Square lattice with the disk ``|z - center| <= radius`` masked in.

    ``inner > 0`` removes the concentric disk of that radius, giving an annulus.
    ``pad`` extends the lattice by that many cells beyond the disk on each side
    while keeping the spacing ``2*radius/(n-1)``.
    """
    h = 2 * radius / (n - 1)
    half = radius + pad * h
    grid = GridSpec.square(n + 2 * pad, half, center)
    r = np.abs(grid.z - center)
    mask = r <= radius * (1 + 1e-12)
    if inner > 0:
        mask &= r > inner
    return grid.with_mask(mask)


def _as_grid_array(grid: GridSpec, values, dtype) -> np.ndarray:
    a = np.asarray(values, dtype=dtype)
    if a.ndim == 0:
        a = np.full((grid.ny, grid.nx), a, dtype=dtype)
    if a.shape != (grid.ny, grid.nx):
        raise InputError(f"value array shape {a.shape} does not match grid ({grid.ny}, {grid.nx})")
    return a


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MuField:
    """Complex Beltrami coefficient sampled on a grid.

    ``|mu| < 1`` is enforced at every masked sample.  With ``sanitize=True``
    moduli are capped at ``1 - 1e-12`` instead of rejected.
    """

    grid: GridSpec
    values: np.ndarray
    degeneracy_threshold: float = DEFAULT_DEGENERACY_THRESHOLD
    sanitize: bool = False
    exact_map: Optional["ComplexMapField"] = None

    def __post_init__(self):
        v = _as_grid_array(self.grid, self.values, complex).copy()
        m = self.grid.mask
        inside = v[m]
        if not np.all(np.isfinite(inside)):
            raise InputError("mu has non-finite values inside the mask")
        a = np.abs(inside)
        if self.sanitize:
            over = a > MU_CAP
            inside[over] *= MU_CAP / a[over]
            v[m] = inside
        elif np.any(a >= 1.0):
            raise InputError(f"|mu| >= 1 at {int(np.sum(a >= 1))} masked samples (max {a.max():.6g})")
        v[~m] = 0.0
        object.__setattr__(self, "values", _readonly(v))

    @property
    def K(self) -> np.ndarray:
        a = np.abs(self.values)
        return (1 + a) / (1 - a)

    @property
    def max_dilatation(self) -> float:
        return float(self.K[self.grid.mask].max())

    @property
    def degeneracy_flag(self) -> bool:
        return self.max_dilatation > self.degeneracy_threshold

    @classmethod
    def constant(cls, grid: GridSpec, k: complex, **kw) -> "MuField":
        return cls(grid, np.full((grid.ny, grid.nx), complex(k)), **kw)

    @classmethod
    def from_function(cls, grid: GridSpec, func, **kw) -> "MuField":
        z = grid.z
        v = np.zeros(z.shape, complex)
        m = grid.mask
        v[m] = func(z[m])
        return cls(grid, v, **kw)


@dataclass(frozen=True, eq=False)
class ComplexMapField:
    """Sampled map ``f``; derivatives are computed on demand and cached."""

    grid: GridSpec
    values: np.ndarray
    provenance: str = "analytic"

    def __post_init__(self):
        if self.provenance not in ("analytic", "solver", "composed"):
            raise InputError(f"unknown provenance {self.provenance!r}")
        v = _as_grid_array(self.grid, self.values, complex).copy()
        if not np.all(np.isfinite(v[self.grid.mask])):
            raise InputError("map has non-finite values inside the mask")
        v[~self.grid.mask] = np.nan
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "_cache", {})

    @classmethod
    def from_function(cls, grid: GridSpec, func, provenance: str = "analytic") -> "ComplexMapField":
        z = grid.z
        v = np.full(z.shape, np.nan + 0j)
        m = grid.mask
        v[m] = func(z[m])
        return cls(grid, v, provenance)

    def partials(self) -> tuple[np.ndarray, np.ndarray]:
        """(f_x, f_y) with NaN where no 2nd-order stencil fits in the mask."""
        if "xy" not in self._cache:
            fx = _axis_derivative(self.values, self.grid.mask, self.grid.hx, axis=1)
            fy = _axis_derivative(self.values, self.grid.mask, self.grid.hy, axis=0)
            bad = np.isnan(fx) | np.isnan(fy)
            fx[bad] = np.nan
            fy[bad] = np.nan
            self._cache["xy"] = (_readonly(fx), _readonly(fy))
        return self._cache["xy"]

    def wirtinger(self) -> tuple[np.ndarray, np.ndarray]:
        """(f_z, f_zbar) fields."""
        if "wirtinger" not in self._cache:
            fx, fy = self.partials()
            self._cache["wirtinger"] = (_readonly(0.5 * (fx - 1j * fy)), _readonly(0.5 * (fx + 1j * fy)))
        return self._cache["wirtinger"]

    def mu(self, sanitize: bool = True) -> MuField:
        """Complex dilatation f_zbar/f_z wherever defined (zero elsewhere)."""
        fz, fzb = self.wirtinger()
        with np.errstate(all="ignore"):
            q = fzb / fz
        ok = np.isfinite(q) & self.grid.mask
        v = np.where(ok, q, 0.0)
        return MuField(self.grid, v, sanitize=sanitize)


@dataclass(frozen=True, eq=False)
class DilatationField:
    """Real dilatation samples: ``kind='K'`` (>= 1) or ``kind='KT'`` (> 0)."""

    grid: GridSpec
    values: np.ndarray
    center: Optional[complex] = None
    kind: str = "KT"

    def __post_init__(self):
        if self.kind not in ("K", "KT"):
            raise InputError(f"unknown dilatation kind {self.kind!r}")
        v = _as_grid_array(self.grid, self.values, float).copy()
        v[~self.grid.mask] = np.nan
        inside = v[self.grid.mask]
        fin = inside[np.isfinite(inside)]
        if self.kind == "K" and np.any(fin < 1 - 1e-12):
            raise InputError("dilatation quotient below 1")
        if np.any(fin <= 0):
            raise InputError("dilatation must be positive")
        if self.center is not None:
            object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def from_radial(cls, grid: GridSpec, func, center: complex = 0j, kind: str = "KT") -> "DilatationField":
        """Field ``func(|z - center|)``; the center sample (if any) is left NaN."""
        r = np.abs(grid.z - center)
        v = np.full(r.shape, np.nan)
        m = grid.mask & (r > 0)
        with np.errstate(all="ignore"):
            v[m] = func(r[m])
        return cls(grid, v, center, kind)


@dataclass(frozen=True, eq=False)
class RealField:
    """Generic real samples (oscillation test functions, dominators, densities)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = _as_grid_array(self.grid, self.values, float).copy()
        v[~self.grid.mask] = np.nan
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "RealField":
        z = grid.z
        v = np.full(z.shape, np.nan)
        m = grid.mask
        with np.errstate(all="ignore"):
            v[m] = func(z[m])
        return cls(grid, v)


# ---------------------------------------------------------------------------
# radial profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Radial test map ``f(z) = rho(|z|) z/|z|`` with ``rho(1) = 1``.

    kinds
      ``power``          rho = r**alpha                (params: alpha > 0)
      ``log-degenerate`` rho = 1/(1 + log(1/r))
      ``exp-degenerate`` rho = exp(E1(a/r) - E1(a))  so that r rho'/rho = exp(-a/r)
                         (params: a > 0, default 1)
      ``custom-table``   params r, rho and optionally drho (tabulated, monotone)
    """

    kind: str
    params: dict = field(default_factory=dict)
    r_min: float = 1e-8

    def __post_init__(self):
        if not self.r_min > 0:
            raise InputError("r_min must be positive")
        k = self.kind
        if k == "power":
            if not self.params.get("alpha", 0) > 0:
                raise InputError("power profile needs alpha > 0")
        elif k == "exp-degenerate":
            if not self.params.get("a", 1.0) > 0:
                raise InputError("exp-degenerate profile needs a > 0")
        elif k == "log-degenerate":
            pass
        elif k == "custom-table":
            r = np.asarray(self.params.get("r", []), float)
            rho = np.asarray(self.params.get("rho", []), float)
            if r.ndim != 1 or r.size < 4 or r.shape != rho.shape:
                raise InputError("custom-table needs matching r and rho columns with >= 4 rows")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(rho) <= 0):
                raise InputError("custom-table r and rho must be strictly increasing")
            if abs(r[-1] - 1) > 1e-12 or abs(rho[-1] - 1) > 1e-12:
                raise InputError("custom-table must end at r = 1 with rho(1) = 1")
            if "drho" in self.params:
                d = np.asarray(self.params["drho"], float)
                if d.shape != r.shape or np.any(d <= 0):
                    raise InputError("custom-table drho must be positive and match r")
                interp = CubicHermiteSpline(r, rho, d)
            else:
                interp = PchipInterpolator(r, rho)
            object.__setattr__(self, "_interp", interp)
        else:
            raise InputError(f"unknown radial profile kind {k!r}")

    @property
    def has_derivative(self) -> bool:
        return self.kind != "custom-table" or "drho" in self.params

    def rho(self, r):
        r = np.asarray(r, float)
        k = self.kind
        if k == "power":
            return r ** self.params["alpha"]
        if k == "log-degenerate":
            return 1.0 / (1.0 + np.log(1.0 / r))
        if k == "exp-degenerate":
            a = self.params.get("a", 1.0)
            with np.errstate(over="ignore"):
                return np.exp(special.exp1(a / r) - special.exp1(a))
        return self._interp(r)

    def stretch(self, r):
        """Logarithmic derivative ``r rho'(r)/rho(r)``."""
        r = np.asarray(r, float)
        k = self.kind
        if k == "power":
            return np.full_like(r, float(self.params["alpha"]))
        if k == "log-degenerate":
            return 1.0 / (1.0 + np.log(1.0 / r))
        if k == "exp-degenerate":
            return np.exp(-self.params.get("a", 1.0) / r)
        if not self.has_derivative:
            raise InputError("custom-table profile has no derivative column; rho' unavailable")
        return r * self._interp(r, 1) / self._interp(r)

    def drho(self, r):
        r = np.asarray(r, float)
        return self.stretch(r) * self.rho(r) / r

    def map_values(self, z):
        z = np.asarray(z, complex)
        r = np.abs(z)
        out = np.zeros_like(z)
        nz = r > 0
        out[nz] = self.rho(r[nz]) * z[nz] / r[nz]
        return out

    def map_field(self, grid: GridSpec) -> ComplexMapField:
        return ComplexMapField.from_function(grid, self.map_values, "analytic")

    def mu_values(self, z):
        """``((q-1)/(q+1)) z/zbar`` with ``q`` the stretch; radii below r_min use r_min."""
        z = np.asarray(z, complex)
        r = np.abs(z)
        q = self.stretch(np.maximum(r, self.r_min))
        m = (q - 1) / (q + 1)
        out = np.zeros_like(z)
        nz = r > 0
        out[nz] = m[nz] * (z[nz] / r[nz]) ** 2
        return out

    def dilatation(self, r):
        """K_mu as a function of radius."""
        q = self.stretch(np.maximum(np.asarray(r, float), self.r_min))
        return np.maximum(q, 1 / q)

    def tangent_dilatation_origin(self, r):
        """K^T_mu(z, 0) = rho/(r rho') as a function of radius."""
        return 1.0 / self.stretch(np.maximum(np.asarray(r, float), self.r_min))


def mu_of_radial_profile(profile: RadialProfile, grid: GridSpec, sanitize: bool = False) -> MuField:
    """Beltrami coefficient of the radial map ``rho(r) z/r`` sampled on ``grid``.

    The exact map is attached as ``exact_map``.  Samples with ``|z| < r_min``
    use the coefficient modulus at ``r_min``; the sample at ``z = 0`` (if any)
    gets ``mu = 0``.
    """
    if not profile.has_derivative:
        raise InputError("custom-table profile has no derivative column; rho' unavailable")
    z = grid.z
    v = np.zeros(z.shape, complex)
    m = grid.mask
    v[m] = profile.mu_values(z[m])
    return MuField(grid, v, sanitize=sanitize, exact_map=profile.map_field(grid))


# ---------------------------------------------------------------------------
# dilatations
# ---------------------------------------------------------------------------

def dilatation_quotient(mu: MuField) -> DilatationField:
    """K_mu = (1+|mu|)/(1-|mu|)."""
    return DilatationField(mu.grid, mu.K, None, "K")


def _exclusion_mask(grid: GridSpec, z0: complex, exclusion_cells: float) -> np.ndarray:
    d = np.abs(grid.z - z0)
    if exclusion_cells > 0:
        return d < exclusion_cells * grid.h
    if grid.node_at(z0) is not None and grid.mask[grid.node_at(z0)]:
        raise InputError("z0 coincides with a masked sample and no exclusion radius is given")
    return d == 0


def tangent_dilatation(mu: MuField, z0: complex, exclusion_cells: float = DEFAULT_EXCLUSION_CELLS) -> DilatationField:
    """K^T_mu(z, z0) = |1 - ((zbar - z0bar)/(z - z0)) mu|^2 / (1 - |mu|^2).

    Samples within ``exclusion_cells`` grid spacings of ``z0`` are NaN.
    """
    z0 = complex(z0)
    grid = mu.grid
    excl = _exclusion_mask(grid, z0, exclusion_cells)
    dz = grid.z - z0
    with np.errstate(all="ignore"):
        w = np.conj(dz) / dz
        v = np.abs(1 - w * mu.values) ** 2 / (1 - np.abs(mu.values) ** 2)
    v[excl] = np.nan
    return DilatationField(grid, v, z0, "KT")


# ---------------------------------------------------------------------------
# discrete derivatives
# ---------------------------------------------------------------------------

def _axis_derivative(v: np.ndarray, valid: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered 2nd-order differences, one-sided 2nd-order at mask edges, NaN otherwise."""
    vv = np.moveaxis(np.where(valid, v, 0), axis, -1)
    ok = np.moveaxis(valid, axis, -1)
    n = vv.shape[-1]
    pv = np.zeros(vv.shape[:-1] + (n + 4,), dtype=vv.dtype)
    pk = np.zeros(ok.shape[:-1] + (n + 4,), dtype=bool)
    pv[..., 2:-2] = vv
    pk[..., 2:-2] = ok

    def s(a, k):
        return a[..., 2 + k: 2 + k + n]

    out = np.full(vv.shape, np.nan, dtype=np.result_type(vv.dtype, float))
    cen = ok & s(pk, 1) & s(pk, -1)
    fwd = ok & ~cen & s(pk, 1) & s(pk, 2)
    bwd = ok & ~cen & ~fwd & s(pk, -1) & s(pk, -2)
    out[cen] = (s(pv, 1) - s(pv, -1))[cen] / (2 * h)
    out[fwd] = (-3 * vv + 4 * s(pv, 1) - s(pv, 2))[fwd] / (2 * h)
    out[bwd] = (3 * vv - 4 * s(pv, -1) + s(pv, -2))[bwd] / (2 * h)
    return np.moveaxis(out, -1, axis)


@dataclass(frozen=True)
class StencilEstimate:
    """Directional derivative at a point from several stencils.

    ``value`` comes from the centred Wirtinger derivatives at the point;
    ``forward``, ``backward`` and ``central`` are difference quotients of the
    (bilinearly sampled) map along the direction with step ``step``.
    ``consistent`` says the one-sided quotients agree with each other and
    with ``value`` to within ``tolerance``, the discrete stand-in for
    differentiability at the point.
    """

    value: complex
    step: float
    order: int
    forward: complex = complex("nan")
    backward: complex = complex("nan")
    central: complex = complex("nan")
    consistent: bool = False
    tolerance: float = float("nan")


def _interp_at(grid: GridSpec, arrays, z: complex):
    """Values of node arrays at ``z``: exact at nodes, bilinear between nodes."""
    node = grid.node_at(z)
    if node is not None:
        vals = [a[node] for a in arrays]
    else:
        fi, fj = grid.index_of(z)
        i0, j0 = int(np.floor(fi)), int(np.floor(fj))
        if i0 < 0 or j0 < 0 or i0 + 1 >= grid.ny or j0 + 1 >= grid.nx:
            raise InputError("stencil leaves the mask: point outside the grid")
        ti, tj = fi - i0, fj - j0
        wts = ((i0, j0, (1 - ti) * (1 - tj)), (i0 + 1, j0, ti * (1 - tj)),
               (i0, j0 + 1, (1 - ti) * tj), (i0 + 1, j0 + 1, ti * tj))
        vals = [sum(w * a[i, j] for i, j, w in wts) for a in arrays]
    if not all(np.isfinite(v) for v in vals):
        raise InputError(f"stencil leaves the mask at z = {complex(z)}")
    return vals


def wirtinger_at(f: ComplexMapField, z: complex) -> tuple[complex, complex]:
    fz, fzb = f.wirtinger()
    a, b = _interp_at(f.grid, (fz, fzb), z)
    return complex(a), complex(b)


def directional_derivative_estimate(f: ComplexMapField, z: complex, omega: complex,
                                    rel_tol: float = 0.05) -> StencilEstimate:
    omega = complex(omega)
    if abs(abs(omega) - 1) > 1e-12:
        raise InputError("direction omega must have unit modulus")
    fz, fzb = wirtinger_at(f, z)
    value = fz * omega + fzb * omega.conjugate()
    t = f.grid.h
    try:
        (f0,) = _interp_at(f.grid, (f.values,), z)
        (fp,) = _interp_at(f.grid, (f.values,), z + t * omega)
        (fm,) = _interp_at(f.grid, (f.values,), z - t * omega)
    except InputError:
        return StencilEstimate(value, t, 2)
    fwd = (fp - f0) / t
    bwd = (f0 - fm) / t
    cen = (fp - fm) / (2 * t)
    # one-sided quotients differ by O(h |f''|) for smooth maps
    tol = rel_tol * max(abs(value), abs(cen), 1e-300)
    ok = abs(fwd - bwd) <= tol and abs(cen - value) <= tol
    return StencilEstimate(complex(value), t, 2, complex(fwd), complex(bwd), complex(cen), bool(ok), float(tol))


def directional_derivative(f: ComplexMapField, z: complex, omega: complex) -> complex:
    """Finite-difference estimate of lim (f(z + t omega) - f(z))/t = f_z omega + f_zbar conj(omega)."""
    return directional_derivative_estimate(f, z, omega).value


def tangent_derivative(f: ComplexMapField, z: complex, z0: complex) -> complex:
    """i (w0 f_z - conj(w0) f_zbar) with w0 = (z - z0)/|z - z0|."""
    z, z0 = complex(z), complex(z0)
    if z == z0:
        raise InputError("tangent derivative undefined at z = z0")
    w0 = (z - z0) / abs(z - z0)
    fz, fzb = wirtinger_at(f, z)
    return 1j * (w0 * fz - w0.conjugate() * fzb)


def jacobian(f: ComplexMapField) -> np.ndarray:
    """|f_z|^2 - |f_zbar|^2 at every sample with a valid stencil (NaN elsewhere)."""
    fz, fzb = f.wirtinger()
    return np.abs(fz) ** 2 - np.abs(fzb) ** 2


def _jacobian_scale(f: ComplexMapField) -> float:
    if "jscale" not in f._cache:
        J = jacobian(f)
        f._cache["jscale"] = float(np.nanmax(np.abs(J))) if np.any(np.isfinite(J)) else 0.0
    return f._cache["jscale"]


def geometric_tangent_dilatation(f: ComplexMapField, z: complex, z0: complex,
                                 jacobian_floor: float = DEFAULT_JACOBIAN_FLOOR) -> float:
    """|d_T f(z)|^2 / |J_f(z)|.

    Raises NumericFailure("degenerate Jacobian") when ``|J_f(z)|`` is at most
    ``jacobian_floor`` times the largest ``|J_f|`` over the field.
    """
    z, z0 = complex(z), complex(z0)
    fz, fzb = wirtinger_at(f, z)
    J = abs(fz) ** 2 - abs(fzb) ** 2
    if abs(J) <= jacobian_floor * _jacobian_scale(f):
        raise NumericFailure(f"degenerate Jacobian at z = {z}")
    dT = tangent_derivative(f, z, z0)
    return abs(dT) ** 2 / abs(J)


def geometric_tangent_dilatation_field(f: ComplexMapField, z0: complex,
                                       jacobian_floor: float = DEFAULT_JACOBIAN_FLOOR,
                                       exclusion_cells: float = DEFAULT_EXCLUSION_CELLS) -> DilatationField:
    """Vectorised |d_T f|^2/|J_f| over the grid; degenerate or excluded samples are NaN."""
    z0 = complex(z0)
    grid = f.grid
    fz, fzb = f.wirtinger()
    dz = grid.z - z0
    with np.errstate(all="ignore"):
        w0 = dz / np.abs(dz)
        dT = 1j * (w0 * fz - np.conj(w0) * fzb)
        J = np.abs(fz) ** 2 - np.abs(fzb) ** 2
        v = np.abs(dT) ** 2 / np.abs(J)
    bad = ~(np.abs(J) > jacobian_floor * _jacobian_scale(f)) | _exclusion_mask(grid, z0, max(exclusion_cells, 1e-300))
    v[bad] = np.nan
    return DilatationField(grid, v, z0, "KT")


# ---------------------------------------------------------------------------
# grid files
# ---------------------------------------------------------------------------

def mask_rle(mask: np.ndarray) -> list[int]:
    """Run lengths of the flattened (row-major) mask, starting with a False run."""
    flat = np.asarray(mask, bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def mask_from_rle(runs, shape) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs) or sum(runs) != shape[0] * shape[1]:
        raise InputError("mask run-length encoding does not match the grid size")
    vals = np.arange(len(runs)) % 2 == 1
    return np.repeat(vals, runs).reshape(shape)


FieldLike = Union[MuField, ComplexMapField, DilatationField, RealField]


def _field_kind(fld) -> tuple[str, str]:
    if isinstance(fld, MuField):
        return "mu", "complex"
    if isinstance(fld, ComplexMapField):
        return "map", "complex"
    if isinstance(fld, DilatationField):
        return "dilatation", "real"
    if isinstance(fld, RealField):
        return "real", "real"
    raise InputError(f"cannot serialise {type(fld).__name__}")


def write_grid_file(path, fld: FieldLike) -> None:
    """JSON header line followed by little-endian float64 samples (row-major, re/im interleaved)."""
    name, vkind = _field_kind(fld)
    header = {
        "format": GRID_FORMAT,
        "version": GRID_FORMAT_VERSION,
        "field": name,
        "value_kind": vkind,
        "grid": fld.grid.to_dict(),
        "mask_rle": mask_rle(fld.grid.mask),
    }
    if name == "map":
        header["provenance"] = fld.provenance
    if name == "dilatation":
        header["dilatation_kind"] = fld.kind
        header["center"] = None if fld.center is None else [fld.center.real, fld.center.imag]
    vals = np.asarray(fld.values)
    if vkind == "complex":
        data = np.ascontiguousarray(vals, dtype="<c16").view("<f8")
    else:
        data = np.ascontiguousarray(vals, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes(order="C"))


def read_grid_file(path) -> FieldLike:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InputError(f"{path}: missing grid header")
    try:
        header = json.loads(raw[:nl].decode())
        if header.get("format") != GRID_FORMAT:
            raise InputError(f"{path}: not a {GRID_FORMAT} file")
        g = header["grid"]
        shape = (int(g["ny"]), int(g["nx"]))
        mask = mask_from_rle(header["mask_rle"], shape)
        grid = GridSpec(complex(*g["origin"]), float(g["width"]), float(g["height"]),
                        shape[1], shape[0], mask)
        vkind = header["value_kind"]
        name = header["field"]
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed grid header ({exc})") from exc
    per = 2 if vkind == "complex" else 1
    body = raw[nl + 1:]
    if len(body) != 8 * per * shape[0] * shape[1]:
        raise InputError(f"{path}: payload has {len(body)} bytes, expected {8 * per * shape[0] * shape[1]}")
    data = np.frombuffer(body, dtype="<f8").astype(float)
    if per == 2:
        data = data.view(complex)
    values = data.reshape(shape)
    if name == "mu":
        return MuField(grid, values)
    if name == "map":
        return ComplexMapField(grid, values, header.get("provenance", "analytic"))
    if name == "dilatation":
        c = header.get("center")
        return DilatationField(grid, values, None if c is None else complex(*c), header.get("dilatation_kind", "KT"))
    if name == "real":
        return RealField(grid, values)
    raise InputError(f"{path}: unknown field type {name!r}")


def export_csv(path, fld: FieldLike) -> None:
    """Plot-ready CSV of the masked samples: x, y and the value (re, im for complex)."""
    grid = fld.grid
    z = grid.z[grid.mask]
    v = np.asarray(fld.values)[grid.mask]
    if np.iscomplexobj(v):
        cols = np.column_stack([z.real, z.imag, v.real, v.imag])
        head = "x,y,re,im"
    else:
        cols = np.column_stack([z.real, z.imag, v])
        head = "x,y,value"
    np.savetxt(path, cols, delimiter=",", header=head, comments="", fmt="%.17g")
