"""Homeomorphic solutions of f_zbar = mu f_z on the unit disk by sparse least squares.

Discretisation
--------------
Unknowns are complex node values on the lattice of the coefficient field,
extended by a few ghost cells beyond the unit circle.  Each lattice cell
carries one box-scheme equation at its centre

    cell mean of (f_zbar - mu f_z) = 0

for bilinear f and bilinear mu (the coefficient is continued outside the disk
by nearest values).  The map is the principal solution of the coefficient extended by
zero outside the disk: bilinear samples of f on the unit circle are matched
to a truncated exterior expansion a z + b + sum_k c_k z**-k whose
coefficients are extra unknowns.  Together with f(0) = 0 and f(1) = 1 this
makes the solution unique; affine and radial oracle maps are reproduced.

A square lattice leaves an error with fourfold angular structure, strong when
mu is singular at a point.  By default every level is therefore solved twice,
on lattices rotated by +22.5 and -22.5 degrees (the rotated coefficient is
e^{-2ia} mu(e^{ia} w), sampled bilinearly), and the two maps are averaged:
the angular modes 4 (mod 8) change sign between the two and cancel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from .errors import InputError, NumericFailure
from .fields import ComplexMapField, GridSpec, MuField, RealField, MU_CAP


GHOST_WEIGHT = 1e-3


@dataclass(frozen=True)
class SolverConfig:
    resolution: int = 256
    truncation_levels: tuple = ()
    normalization: tuple = (0j, 1 + 0j)
    regularization_weight: float = 0.0
    max_residual: float = 1e-2
    exterior_terms: int = 64
    circle_samples_per_cell: float = 4.0
    rotation_average: bool = True

    def __post_init__(self):
        if int(self.resolution) < 64:
            raise InputError("resolution must be at least 64")
        lv = tuple(float(x) for x in self.truncation_levels)
        if any(x < 1 for x in lv):
            raise InputError("truncation levels must be at least 1")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise InputError("truncation levels must be strictly increasing")
        object.__setattr__(self, "truncation_levels", lv)
        if not self.regularization_weight >= 0:
            raise InputError("regularization weight must be non-negative")
        if not self.max_residual > 0:
            raise InputError("max_residual must be positive")
        norm = tuple(complex(z) for z in self.normalization)
        if len(norm) != 2 or norm[0] == norm[1]:
            raise InputError("normalization needs two distinct points")
        object.__setattr__(self, "normalization", norm)

    def to_dict(self) -> dict:
        return {"resolution": int(self.resolution), "truncation_levels": list(self.truncation_levels),
                "normalization": [[z.real, z.imag] for z in self.normalization],
                "regularization_weight": self.regularization_weight, "max_residual": self.max_residual,
                "exterior_terms": self.exterior_terms,
                "circle_samples_per_cell": self.circle_samples_per_cell,
                "rotation_average": bool(self.rotation_average)}


@dataclass
class SolveResult:
    f: ComplexMapField
    residual_l2: float
    jacobian_min: float
    jacobian_positive_fraction: float
    level_differences: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    regularization_weight: float = 0.0
    accepted: bool = True
    mu: Optional[MuField] = None
    lattices: list = field(default_factory=list, repr=False)

    def evaluate(self, z) -> np.ndarray:
        """The solution at arbitrary points: lattice interpolation for |z| < 1,
        the fitted exterior expansion (conformal there) for |z| >= 1."""
        if not self.lattices:
            raise InputError("solution carries no lattice data")
        z = np.asarray(z, complex)
        flat = z.ravel()
        out = sum(lat.evaluate(flat) for lat in self.lattices) / len(self.lattices)
        return out.reshape(z.shape)

    def boundary_values(self, theta) -> np.ndarray:
        """Values on the unit circle at angles theta (exterior expansion)."""
        return self.evaluate(np.exp(1j * np.asarray(theta, float)))

    def metadata(self) -> dict:
        return {"residual_l2": self.residual_l2, "jacobian_min": self.jacobian_min,
                "jacobian_positive_fraction": self.jacobian_positive_fraction,
                "level_differences": list(self.level_differences), "levels": list(self.levels),
                "regularization_weight": self.regularization_weight, "accepted": self.accepted}


def truncate_mu(mu: MuField, n: float) -> MuField:
    """mu where K_mu <= n, zero elsewhere."""
    if not n >= 1:
        raise InputError("truncation level must be at least 1")
    v = mu.values
    K = mu.K
    out = np.where(np.isfinite(v) & (K <= n), v, np.where(np.isfinite(v), 0, v))
    return MuField(mu.grid, out, degeneracy_threshold=mu.degeneracy_threshold)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _bilinear_rows(origin: complex, h: float, nx: int, ny: int, pts: np.ndarray):
    """(row, col, weight) triples of bilinear interpolation on a padded lattice."""
    fx = (pts.real - origin.real) / h
    fy = (pts.imag - origin.imag) / h
    j0 = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    i0 = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
    tx = fx - j0
    ty = fy - i0
    rows, cols, w = [], [], []
    r = np.arange(len(pts))
    for di, dj, ww in ((0, 0, (1 - tx) * (1 - ty)), (0, 1, tx * (1 - ty)),
                       (1, 0, (1 - tx) * ty), (1, 1, tx * ty)):
        rows.append(r)
        cols.append((i0 + di) * nx + (j0 + dj))
        w.append(ww)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(w)


@dataclass
class _System:
    origin: complex
    h: float
    nx: int
    ny: int
    pad: int
    node_id: np.ndarray
    n_nodes: int
    cells: tuple
    mu_nodes: np.ndarray


def _extend_nearest(values: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if not bad.any():
        return values
    if bad.all():
        raise InputError("coefficient has no finite values")
    _, (ii, jj) = ndimage.distance_transform_edt(bad, return_indices=True)
    return values[ii, jj]


def _prepare(mu: MuField, pad: int = 4) -> _System:
    g = mu.grid
    if abs(g.hx - g.hy) > 1e-9 * g.hx:
        raise InputError("solver needs a square lattice (hx == hy)")
    h = g.hx
    nx, ny = g.nx + 2 * pad, g.ny + 2 * pad
    origin = g.origin - pad * h * (1 + 1j)
    vals = np.full((ny, nx), np.nan + 0j)
    inner = np.where(g.mask, mu.values, np.nan)
    vals[pad:pad + g.ny, pad:pad + g.nx] = inner
    mu_nodes = _extend_nearest(vals)
    x = origin.real + h * np.arange(nx)
    y = origin.imag + h * np.arange(ny)
    Z = x[None, :] + 1j * y[:, None]
    region = np.abs(Z) <= 1 + 2.0 * h
    cell_ok = region[:-1, :-1] & region[:-1, 1:] & region[1:, :-1] & region[1:, 1:]
    used = np.zeros_like(region)
    used[:-1, :-1] |= cell_ok
    used[:-1, 1:] |= cell_ok
    used[1:, :-1] |= cell_ok
    used[1:, 1:] |= cell_ok
    node_id = -np.ones((ny, nx), np.int64)
    node_id[used] = np.arange(used.sum())
    ci, cj = np.nonzero(cell_ok)
    return _System(origin, h, nx, ny, pad, node_id, int(used.sum()), (ci, cj), mu_nodes)


def _assemble(sysm: _System, mu_nodes: np.ndarray, cfg: SolverConfig):
    h, nx, ny = sysm.h, sysm.nx, sysm.ny
    ci, cj = sysm.cells
    nid = sysm.node_id
    corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
    dx = np.array([-1.0, 1.0, -1.0, 1.0])
    dy = np.array([-1.0, -1.0, 1.0, 1.0])
    ncell = len(ci)
    rows, cols, vals = [], [], []
    r = np.arange(ncell)
    m00, m01 = mu_nodes[ci, cj], mu_nodes[ci, cj + 1]
    m10, m11 = mu_nodes[ci + 1, cj], mu_nodes[ci + 1, cj + 1]
    # exact cell integral of (bilinear mu) * (derivative of bilinear f): f_x is
    # linear in y, so it pairs with mu weighted 2:1 towards its own row
    mu_row = [(2 * (m00 + m01) + (m10 + m11)) / 6, (2 * (m10 + m11) + (m00 + m01)) / 6]
    mu_col = [(2 * (m00 + m10) + (m01 + m11)) / 6, (2 * (m01 + m11) + (m00 + m10)) / 6]
    for k, (di, dj) in enumerate(corners):
        # h * cell mean of (f_zbar - mu f_z)
        coef = 0.25 * ((dx[k] + 1j * dy[k]) - (dx[k] * mu_row[di] - 1j * dy[k] * mu_col[dj]))
        rows.append(r)
        cols.append(nid[ci + di, cj + dj])
        vals.append(coef)
    n_f = sysm.n_nodes
    J = int(cfg.exterior_terms)
    n_c = J + 2
    # unit-circle samples matched to the exterior expansion
    M = int(np.ceil(cfg.circle_samples_per_cell * 2 * np.pi / h))
    M = max(M, 4 * n_c)
    th = 2 * np.pi * (np.arange(M) + 0.5) / M
    zeta = np.exp(1j * th)
    br, bc, bw = _bilinear_rows(sysm.origin, h, nx, ny, zeta)
    flat_to_id = nid.ravel()
    bc = flat_to_id[bc]
    if np.any(bc[bw > 0] < 0):
        raise NumericFailure("unit circle sample outside the assembled region")
    keep = bc >= 0
    wb = np.sqrt(2 * np.pi / M) / h
    rows.append(ncell + br[keep])
    cols.append(bc[keep])
    vals.append(wb * bw[keep].astype(complex))
    powers = np.concatenate([[1, 0], -np.arange(1, J + 1)])
    E = zeta[:, None] ** powers[None, :]
    rr, cc = np.meshgrid(np.arange(M), np.arange(n_c), indexing="ij")
    rows.append(ncell + rr.ravel())
    cols.append(n_f + cc.ravel())
    vals.append(-wb * E.ravel())
    nrow = ncell + M
    # ghost nodes outside the circle are only partly fixed by the box equations;
    # a weak second-difference penalty (zero on affine maps) removes the free modes
    Zn = sysm.origin + h * (np.arange(nx)[None, :] + 1j * np.arange(ny)[:, None])
    ghost = (nid >= 0) & (np.abs(Zn) > 1)
    for (di, dj) in ((0, 1), (1, 0)):
        a = nid[:ny - 2 * di, :nx - 2 * dj]
        b = nid[di:ny - di, dj:nx - dj]
        c = nid[2 * di:, 2 * dj:]
        gh = ghost[:ny - 2 * di, :nx - 2 * dj] | ghost[di:ny - di, dj:nx - dj] | ghost[2 * di:, 2 * dj:]
        sel = (a >= 0) & (b >= 0) & (c >= 0) & gh
        k = np.arange(sel.sum())
        for ids, w in ((a[sel], 1.0), (b[sel], -2.0), (c[sel], 1.0)):
            rows.append(nrow + k)
            cols.append(ids)
            vals.append(np.full(len(k), GHOST_WEIGHT * w, complex))
        nrow += len(k)
    if cfg.regularization_weight > 0:
        s = np.sqrt(cfg.regularization_weight)
        for (a, b) in (((0, 0), (0, 1)), ((1, 0), (1, 1)), ((0, 0), (1, 0)), ((0, 1), (1, 1))):
            rows.append(nrow + r)
            cols.append(nid[ci + a[0], cj + a[1]])
            vals.append(np.full(ncell, -s, complex))
            rows.append(nrow + r)
            cols.append(nid[ci + b[0], cj + b[1]])
            vals.append(np.full(ncell, s, complex))
            nrow += ncell
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nrow, n_f + n_c))
    return A, ncell


def _normalization_rows(sysm: _System, pts, n_unknowns: int):
    h = sysm.h
    rows = []
    for z in pts:
        z = complex(z)
        fx = (z.real - sysm.origin.real) / h
        fy = (z.imag - sysm.origin.imag) / h
        j0, i0 = int(np.floor(fx)), int(np.floor(fy))
        if fx == sysm.nx - 1:
            j0 -= 1
        if fy == sysm.ny - 1:
            i0 -= 1
        if not (0 <= i0 < sysm.ny - 1 and 0 <= j0 < sysm.nx - 1):
            raise InputError("normalization cell outside mask")
        ids = sysm.node_id[i0:i0 + 2, j0:j0 + 2]
        if np.any(ids < 0) or abs(z) > 1 + 1e-12:
            raise InputError("normalization cell outside mask")
        tx, ty = fx - j0, fy - i0
        w = np.array([[(1 - tx) * (1 - ty), tx * (1 - ty)], [(1 - tx) * ty, tx * ty]])
        row = np.zeros(n_unknowns, complex)
        np.add.at(row, ids.ravel(), w.ravel())
        rows.append(row)
    return sparse.csr_matrix(np.array(rows))


def _hpd_factor(N: sparse.csc_matrix):
    """Solver callable for Hermitian positive definite sparse N (sparse Cholesky, LU fallback)."""
    try:
        from cvxopt import cholmod, matrix, spmatrix
    except ImportError:  # pragma: no cover
        cholmod = None
    if cholmod is not None:
        Nl = sparse.tril(N).tocoo()
        M = spmatrix(matrix(Nl.data.astype(complex)), matrix(Nl.row.astype(int).tolist()),
                     matrix(Nl.col.astype(int).tolist()), Nl.shape, "z")
        cholmod.options["supernodal"] = 2
        try:
            F = cholmod.symbolic(M, uplo="L")
            cholmod.numeric(M, F)
        except ArithmeticError as exc:
            raise NumericFailure("system rank-deficient") from exc

        def solve(B):
            X = matrix(np.ascontiguousarray(B, complex))
            cholmod.solve(F, X)
            return np.array(X)
        return solve
    try:  # pragma: no cover
        lu = splu(N)
    except RuntimeError as exc:  # pragma: no cover
        raise NumericFailure("system rank-deficient") from exc
    return lambda B: lu.solve(np.asarray(B, complex))  # pragma: no cover


def _constrained_lsq(A, C, d, refine: int = 2) -> np.ndarray:
    """min ||A x|| subject to C x = d through the normal equations.

    N' = A^H A + C^H C is positive definite once C removes the kernel of A;
    the constraints follow from a small Schur step.  Squaring A costs digits,
    so a few correction steps use the residual A x itself (corrected
    semi-normal equations).
    """
    N = (A.conj().T @ A + C.conj().T @ C).tocsc()
    # exterior coefficients and node values scale very differently; equilibrate
    D = sparse.diags(1.0 / np.sqrt(N.diagonal().real))
    solve0 = _hpd_factor((D @ N @ D).tocsc())

    def solve(B):
        B = np.asarray(B, complex)
        return D @ solve0(D @ B).reshape(B.shape)
    Y = solve(C.conj().T.toarray())
    S = C @ Y
    try:
        x = Y @ np.linalg.solve(S, d)
        for _ in range(refine):
            u = -solve(A.conj().T @ (A @ x))
            x = x + u + Y @ np.linalg.solve(S, d - C @ x - C @ u)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure("system rank-deficient") from exc
    if not np.all(np.isfinite(x)) or np.abs(C @ x - d).max() > 1e-8:
        raise NumericFailure("system rank-deficient")
    return np.ravel(x)


ROTATION_ANGLE = np.pi / 8


def _solve_nodes(sysm: _System, mu_nodes: np.ndarray, cfg: SolverConfig, norm_pts):
    """Node values on the padded lattice (NaN on unused nodes) and the L2 norm
    of f_zbar - mu f_z over the cells centred inside the unit disk."""
    A, ncell = _assemble(sysm, mu_nodes, cfg)
    n = A.shape[1]
    C = _normalization_rows(sysm, norm_pts, n)
    x = _constrained_lsq(A, C, np.array([0.0, 1.0], complex))
    full = np.full(sysm.node_id.shape, np.nan + 0j)
    ok = sysm.node_id >= 0
    full[ok] = x[:sysm.n_nodes][sysm.node_id[ok]]
    # cell rows carry h * (f_zbar - mu f_z), so their 2-norm is the L2 norm
    ci, cj = sysm.cells
    zc = sysm.origin + sysm.h * ((cj + 0.5) + 1j * (ci + 0.5))
    rows = (A[:ncell] @ x)[np.abs(zc) < 1]
    return full, float(np.linalg.norm(rows)), x[sysm.n_nodes:].copy()


def _lattice_sample(values: np.ndarray, origin: complex, h: float, pts: np.ndarray) -> np.ndarray:
    coords = [(pts.imag - origin.imag) / h, (pts.real - origin.real) / h]
    return (ndimage.map_coordinates(values.real, coords, order=1, mode="nearest")
            + 1j * ndimage.map_coordinates(values.imag, coords, order=1, mode="nearest"))


@dataclass
class _Lattice:
    """One solved lattice: node values of g(w) = f(e^{ia} w) and the exterior coefficients."""
    angle: float
    origin: complex
    h: float
    values: np.ndarray
    exterior: np.ndarray

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        w = z * np.exp(-1j * self.angle)
        out = np.empty(w.shape, complex)
        inside = np.abs(w) <= 1
        out[inside] = _lattice_sample(self.values, self.origin, self.h, w[inside])
        wo = w[~inside]
        c = self.exterior
        # a w + b + sum_k c_k w^{-k}, Horner in 1/w
        tail = np.zeros(wo.shape, complex)
        for ck in c[:1:-1]:
            tail = (tail + ck) / wo
        out[~inside] = c[0] * wo + c[1] + tail
        return out


def _solve_level(mu: MuField, cfg: SolverConfig, sysm: Optional[_System] = None):
    sysm = sysm or _prepare(mu)
    g = mu.grid
    p = sysm.pad
    if not cfg.rotation_average:
        full, res, ext = _solve_nodes(sysm, sysm.mu_nodes, cfg, cfg.normalization)
        vals = full[p:p + g.ny, p:p + g.nx]
        lattices = [_Lattice(0.0, sysm.origin, sysm.h, full, ext)]
    else:
        Z = sysm.origin + sysm.h * (np.arange(sysm.nx)[None, :] + 1j * np.arange(sysm.ny)[:, None])
        vals = np.zeros(g.z.shape, complex)
        res2 = 0.0
        lattices = []
        for a in (ROTATION_ANGLE, -ROTATION_ANGLE):
            rot = np.exp(1j * a)
            # g(w) = f(e^{ia} w) solves g_wbar = e^{-2ia} mu(e^{ia} w) g_w
            mu_rot = _lattice_sample(sysm.mu_nodes, sysm.origin, sysm.h, Z * rot) / rot ** 2
            full, r, ext = _solve_nodes(sysm, mu_rot, cfg, [z / rot for z in cfg.normalization])
            lattices.append(_Lattice(a, sysm.origin, sysm.h, full, ext))
            vals += 0.5 * _lattice_sample(full, sysm.origin, sysm.h, g.z / rot)
            res2 += 0.5 * r * r
        res = float(np.sqrt(res2))
    vals = np.where(g.mask, vals, np.nan)
    return ComplexMapField(g, vals, provenance="solver"), res, lattices


def residual_field(f: ComplexMapField, mu: MuField) -> RealField:
    """|f_zbar - mu f_z| per node from the map's difference quotients (NaN without a stencil)."""
    if f.grid != mu.grid:
        raise InputError("map and coefficient must share a grid")
    fz, fzb = f.wirtinger()
    with np.errstate(invalid="ignore"):
        r = np.abs(fzb - mu.values * fz)
    return RealField(f.grid, np.where(f.grid.mask, r, np.nan))


def _jacobian_cells(f: ComplexMapField):
    g = f.grid
    v = f.values
    a, b, c, d = v[:-1, :-1], v[:-1, 1:], v[1:, :-1], v[1:, 1:]
    fx = ((b - a) + (d - c)) / (2 * g.hx)
    fy = ((c - a) + (d - b)) / (2 * g.hy)
    J = (np.conj(fx) * fy).imag
    m = g.mask
    cm = m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:] & np.isfinite(J)
    zc = (g.z[:-1, :-1] + g.z[1:, 1:]) / 2
    return J, cm, zc


def solve_beltrami_disk(mu: MuField, config: Optional[SolverConfig] = None) -> SolveResult:
    """Normalised solution of f_zbar = mu f_z on the unit disk.

    With truncation levels the coefficient is solved at each level (mu set
    to zero where K_mu exceeds the level) and the last level is returned;
    sup-norm differences between consecutive levels on 0.2 <= |z| <= 0.9 are
    reported.  Without levels mu is used as given and must stay away from 1.
    """
    cfg = config or SolverConfig()
    levels = list(cfg.truncation_levels)
    if np.nanmax(np.abs(mu.values[mu.grid.mask])) >= MU_CAP and not levels:
        raise InputError("|mu| reaches 1; give truncation levels")
    sysm = None
    maps, diffs = [], []
    zz = np.abs(mu.grid.z)
    ev = mu.grid.mask & (zz >= 0.2) & (zz <= 0.9)
    for lv in (levels or [None]):
        m = mu if lv is None else truncate_mu(mu, lv)
        if sysm is None:
            sysm = _prepare(m)
        else:
            sysm.mu_nodes = _prepare(m).mu_nodes
        f, res, lattices = _solve_level(m, cfg, sysm)
        if maps:
            diffs.append(float(np.nanmax(np.abs(f.values - maps[-1].values)[ev])))
        maps.append(f)
    f = maps[-1]
    m_last = mu if not levels else truncate_mu(mu, levels[-1])
    J, cm, _ = _jacobian_cells(f)
    jmin = float(J[cm].min())
    pos = float((J[cm] > 0).mean())
    return SolveResult(f, res, jmin, pos, diffs, levels, cfg.regularization_weight,
                       bool(res <= cfg.max_residual), m_last, lattices)


def convergence_study(mu: MuField, config: SolverConfig) -> dict:
    """Sup differences between consecutive truncation levels on 0.2 <= |z| <= 0.9."""
    if len(config.truncation_levels) < 2:
        raise InputError("convergence study needs at least two truncation levels")
    r = solve_beltrami_disk(mu, config)
    d = r.level_differences
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(d, d[1:])]
    return {"levels": list(config.truncation_levels), "differences": d, "ratios": ratios}


def regularity_diagnostics(result: SolveResult, exclusion_radius: float = 0.0, eps_inj: Optional[float] = None,
                           n_samples: int = 20000, seed: int = 0) -> dict:
    """Jacobian sign statistics and a sampled injectivity check of a solution.

    Cells whose centre lies within ``exclusion_radius`` of the origin are
    left out.  Injectivity: random pairs of nodes farther than 2h apart in
    the domain must map farther than ``eps_inj`` apart (default h/100 times
    the median image spacing ratio).
    """
    f = result.f
    g = f.grid
    J, cm, zc = _jacobian_cells(f)
    sel = cm & (np.abs(zc) >= exclusion_radius)
    Jv = J[sel]
    frac = float((Jv > 0).mean()) if Jv.size else float("nan")
    jmin_abs = float(np.abs(Jv).min()) if Jv.size else float("nan")
    vals = f.values[g.mask & np.isfinite(f.values)]
    pts = g.z[g.mask & np.isfinite(f.values)]
    rng = np.random.default_rng(seed)
    a = rng.integers(0, len(pts), n_samples)
    b = rng.integers(0, len(pts), n_samples)
    far = np.abs(pts[a] - pts[b]) > 2 * g.h
    if eps_inj is None:
        eps_inj = 1e-3 * g.h
    close = far & (np.abs(vals[a] - vals[b]) <= eps_inj)
    return {"jacobian_positive_fraction": frac, "jacobian_min_abs": jmin_abs,
            "jacobian_min": float(Jv.min()) if Jv.size else float("nan"),
            "injectivity_pairs": int(far.sum()), "injectivity_violations": int(close.sum()),
            "injective_on_samples": bool(close.sum() == 0), "exclusion_radius": exclusion_radius}
