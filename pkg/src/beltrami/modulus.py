"""Discrete extremal length: curve-family moduli, closed-form extremal densities and bounds.

Densities are piecewise constant on grid cells: the cell of node ``(i, j)`` is
the rectangle of size ``hx`` by ``hy`` centred at that node.  The line
integral of a density along a polyline is computed exactly from the lengths
of the polyline pieces inside each cell.

The modulus of a family is approximated by the convex program

    minimise  sum_c a_c rho_c**2   subject to   L rho >= 1,  rho >= 0

where each row of ``L`` holds the cell lengths of one sampled representative
curve.  The program is solved through its dual (a bound-constrained
quadratic problem in one multiplier per curve).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import csgraph

from .errors import InfeasibleError, InputError, NumericFailure
from .fields import ComplexMapField, DilatationField, GridSpec, MuField, RealField, tangent_dilatation


# ---------------------------------------------------------------------------
# polylines through cells
# ---------------------------------------------------------------------------

def polyline_cell_lengths(grid: GridSpec, pts: np.ndarray, curve_ids: Optional[np.ndarray] = None):
    """Exact lengths of polyline pieces per grid cell.

    ``pts`` holds the vertices of one polyline (1-D complex array) or of
    several polylines flattened with ``curve_ids`` giving the owner of each
    vertex (segments joining vertices of different curves are skipped).
    Returns (curve_index, flat_cell_index, length) triples with pieces
    outside the lattice reported with cell index -1.
    """
    pts = np.asarray(pts, complex)
    if curve_ids is None:
        curve_ids = np.zeros(len(pts), dtype=np.int64)
    a, b = pts[:-1], pts[1:]
    same = curve_ids[:-1] == curve_ids[1:]
    a, b, cid = a[same], b[same], curve_ids[:-1][same]
    # split long segments so each piece spans at most one cell per axis
    span = np.maximum(np.abs(b.real - a.real) / grid.hx, np.abs(b.imag - a.imag) / grid.hy)
    nsub = np.maximum(1, np.ceil(span / 0.9).astype(np.int64))
    if np.any(nsub > 1):
        rep = np.repeat(np.arange(len(a)), nsub)
        k = np.arange(len(rep)) - np.repeat(np.cumsum(nsub) - nsub, nsub)
        t0 = k / nsub[rep]
        t1 = (k + 1) / nsub[rep]
        d = b[rep] - a[rep]
        a, b, cid = a[rep] + t0 * d, a[rep] + t1 * d, cid[rep]
    ox, oy = grid.origin.real - 0.5 * grid.hx, grid.origin.imag - 0.5 * grid.hy
    ax, ay = (a.real - ox) / grid.hx, (a.imag - oy) / grid.hy
    bx, by = (b.real - ox) / grid.hx, (b.imag - oy) / grid.hy
    dx, dy = bx - ax, by - ay
    with np.errstate(divide="ignore", invalid="ignore"):
        kx = np.where(np.floor(ax) != np.floor(bx), np.maximum(np.floor(ax), np.floor(bx)), np.nan)
        ky = np.where(np.floor(ay) != np.floor(by), np.maximum(np.floor(ay), np.floor(by)), np.nan)
        tx = (kx - ax) / dx
        ty = (ky - ay) / dy
    tx = np.where(np.isfinite(tx), np.clip(tx, 0, 1), 1.0)
    ty = np.where(np.isfinite(ty), np.clip(ty, 0, 1), 1.0)
    t1 = np.minimum(tx, ty)
    t2 = np.maximum(tx, ty)
    seglen = np.abs(b - a)
    bounds = [(np.zeros_like(t1), t1), (t1, t2), (t2, np.ones_like(t1))]
    out_c, out_cell, out_len = [], [], []
    for lo, hi in bounds:
        ln = (hi - lo) * seglen
        keep = ln > 0
        if not keep.any():
            continue
        tm = 0.5 * (lo + hi)[keep]
        mx = ax[keep] + tm * dx[keep]
        my = ay[keep] + tm * dy[keep]
        j = np.floor(mx).astype(np.int64)
        i = np.floor(my).astype(np.int64)
        inside = (i >= 0) & (i < grid.ny) & (j >= 0) & (j < grid.nx)
        cell = np.where(inside, i * grid.nx + j, -1)
        out_c.append(cid[keep])
        out_cell.append(cell)
        out_len.append(ln[keep])
    if not out_c:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(out_c), np.concatenate(out_cell), np.concatenate(out_len)


def _rows_matrix(grid: GridSpec, curves: Sequence[np.ndarray], allowed: np.ndarray):
    """Sparse (curves x cells) matrix of in-cell lengths restricted to ``allowed`` cells.

    Also returns a flag per curve telling whether it leaves the lattice or
    crosses a forbidden cell.
    """
    if len(curves) == 0:
        return sparse.csr_matrix((0, grid.nx * grid.ny)), np.zeros(0, bool)
    lens = np.array([len(c) for c in curves])
    pts = np.concatenate(curves)
    ids = np.repeat(np.arange(len(curves)), lens)
    cid, cell, ln = polyline_cell_lengths(grid, pts, ids)
    bad = np.zeros(len(curves), bool)
    outside = cell < 0
    np.logical_or.at(bad, cid[outside], True)
    ok = ~outside
    cid, cell, ln = cid[ok], cell[ok], ln[ok]
    forb = ~allowed.ravel()[cell]
    np.logical_or.at(bad, cid[forb & (ln > 1e-12 * grid.h)], True)
    L = sparse.csr_matrix((ln, (cid, cell)), shape=(len(curves), grid.nx * grid.ny))
    L.sum_duplicates()
    return L, bad


# ---------------------------------------------------------------------------
# quadratic program
# ---------------------------------------------------------------------------

def solve_density_qp(L: sparse.csr_matrix, area: np.ndarray, tol: float = 1e-12, lam0=None,
                     dense_limit: int = 3000):
    """Minimise sum(area * rho**2) subject to L rho >= 1, rho >= 0.

    Solved through the dual: maximise sum(lam) - 1/4 |A^{-1/2} L^T lam|^2 over
    lam >= 0, with rho = L^T lam / (2 area).  Small systems first try the
    all-active solution of the normal equations.  Returns (rho, lam).
    """
    m = L.shape[0]
    if m == 0:
        return np.zeros(L.shape[1]), np.zeros(0)
    inv_a = 1.0 / area
    Lt = L.T.tocsr()

    def fg(lam):
        v = Lt @ lam
        w = v * inv_a
        f = 0.25 * float(v @ w) - lam.sum()
        g = 0.5 * (L @ w) - 1.0
        return f, g

    if m <= dense_limit:
        # all constraints active: (L A^-1 L^T) lam / 2 = 1; exact optimum when lam >= 0
        G = (L @ sparse.diags(inv_a) @ Lt).toarray()
        try:
            lam = 2.0 * linalg.solve(G, np.ones(m), assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            lam = None
        if lam is not None and np.all(np.isfinite(lam)) and lam.min() >= 0:
            return (Lt @ lam) * inv_a * 0.5, lam
        if lam is not None and np.all(np.isfinite(lam)) and lam0 is None:
            lam0 = np.maximum(lam, 0.0)
    if lam0 is None or len(lam0) != m:
        # uniform start scaled to the optimum along the ray
        x = np.ones(m)
        v = Lt @ x
        q = float(v @ (v * inv_a))
        lam0 = x * (2.0 * m / q if q > 0 else 1.0)
    res = optimize.minimize(fg, lam0, jac=True, method="L-BFGS-B", bounds=[(0, None)] * m,
                            options={"maxiter": 20000, "maxcor": 30, "ftol": tol, "gtol": 1e-10})
    lam = np.maximum(res.x, 0.0)
    rho = (Lt @ lam) * inv_a * 0.5
    return rho, lam


# ---------------------------------------------------------------------------
# families and densities
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CurveFamilySpec:
    """Curve family on a grid.

    ``kind='joining'``: all curves in the domain joining the cell sets E and F.
    ``kind='circles'``: the dashed lines S(z0, r) intersected with the domain,
    eps < r < eps0.

    ``domain`` optionally restricts the curves to a sub-mask of the grid
    (which need not be connected); it defaults to the grid mask.
    """

    kind: str
    grid: GridSpec
    E: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    z0: complex = 0j
    eps: float = 0.0
    eps0: float = 0.0
    domain: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (self.grid.ny, self.grid.nx)
        if self.domain is None:
            self.domain = self.grid.mask
        else:
            self.domain = np.asarray(self.domain, bool)
            if self.domain.shape != shape:
                raise InputError("domain must match the grid shape")
            if np.any(self.domain & ~self.grid.mask):
                raise InputError("domain must lie inside the grid mask")
        if self.kind == "joining":
            if self.E is None or self.F is None:
                raise InputError("joining family needs E and F cell sets")
            E = np.asarray(self.E, bool)
            F = np.asarray(self.F, bool)
            if E.shape != shape or F.shape != shape:
                raise InputError("E and F must match the grid shape")
            if not E.any() or not F.any():
                raise InfeasibleError("no representative: E or F contains no grid cell")
            if np.any(E & F):
                raise InputError("E and F must be disjoint")
            if np.any(E & ~self.domain) or np.any(F & ~self.domain):
                raise InputError("E and F must lie inside the domain")
            self.E, self.F = E, F
        elif self.kind == "circles":
            if not 0 < self.eps < self.eps0:
                raise InputError("circle family needs 0 < eps < eps0")
            self.z0 = complex(self.z0)
        else:
            raise InputError(f"unknown family kind {self.kind!r}")


def annulus_joining_family(n: int, r_in: float = 1.0, r_out: float = 2.0, pad: int = 3) -> CurveFamilySpec:
    """Joining family of the two boundary circles of the annulus r_in < |z| < r_out.

    E and F are the one-and-a-half-cell layers of nodes just inside the hole
    and just outside the outer circle; the density is free only on the
    annulus nodes.
    """
    h = 2 * r_out / (n - 1)
    grid = GridSpec.square(n + 2 * pad, r_out + pad * h)
    r = np.abs(grid.z)
    D = (r > r_in) & (r < r_out)
    E = (r <= r_in) & (r > r_in - 1.5 * h)
    F = (r >= r_out) & (r < r_out + 1.5 * h)
    grid = grid.with_mask(D | E | F)
    return CurveFamilySpec("joining", grid, E, F)


@dataclass(eq=False)
class AdmissibleDensity:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (self.grid.ny, self.grid.nx):
            raise InputError("density shape does not match the grid")
        if np.any(v[np.isfinite(v)] < 0):
            raise InputError("density must be non-negative")
        self.values = v

    def energy(self) -> float:
        v = np.nan_to_num(self.values)
        return float((v ** 2).sum() * self.grid.hx * self.grid.hy)

    def line_integrals(self, curves: Sequence[np.ndarray]) -> np.ndarray:
        L, _ = _rows_matrix(self.grid, curves, np.ones((self.grid.ny, self.grid.nx), bool))
        return L @ np.nan_to_num(self.values).ravel()

    def as_field(self) -> RealField:
        return RealField(self.grid, np.where(self.grid.mask, self.values, np.nan))


@dataclass
class ModulusResult:
    value: float
    density: Optional[AdmissibleDensity]
    n_representatives: int
    min_line_integral: float
    rounds: int = 0
    shortest_path_length: float = float("nan")
    status: str = "ok"
    history: list = field(default_factory=list)
    dropped_arcs: int = 0   # sub-resolution arcs left out of a circle family

    def to_dict(self) -> dict:
        return {"value": self.value, "n_representatives": self.n_representatives,
                "min_line_integral": self.min_line_integral, "rounds": self.rounds,
                "shortest_path_length": self.shortest_path_length, "status": self.status,
                "history": list(self.history), "dropped_arcs": self.dropped_arcs}


# ---------------------------------------------------------------------------
# graph for shortest paths
# ---------------------------------------------------------------------------

def _offsets(radius: int):
    out = []
    for a in range(-radius, radius + 1):
        for b in range(-radius, radius + 1):
            if (a, b) != (0, 0) and gcd(abs(a), abs(b)) == 1 and (b > 0 or (b == 0 and a > 0)):
                out.append((a, b))
    return out


class _PathGraph:
    """Lattice graph on allowed nodes with straight edges to neighbours within ``radius``.

    Edge weights are exact density line integrals of the straight segment
    between node centres.
    """

    def __init__(self, grid: GridSpec, allowed: np.ndarray, radius: int = 2):
        self.grid = grid
        ny, nx = grid.ny, grid.nx
        idx = np.arange(ny * nx).reshape(ny, nx)
        rows_u, rows_v, w_rows, w_cols, w_vals = [], [], [], [], []
        n_edges = 0
        for (a, b) in _offsets(radius):
            # edge from (i, j) to (i + b, j + a)
            seg = np.array([0j, a * grid.hx + 1j * b * grid.hy])
            local = GridSpec(complex(-(radius + 1) * grid.hx, -(radius + 1) * grid.hy),
                             2 * (radius + 1) * grid.hx, 2 * (radius + 1) * grid.hy,
                             2 * radius + 3, 2 * radius + 3)
            _, cell, ln = polyline_cell_lengths(local, seg)
            ci, cj = cell // local.nx - (radius + 1), cell % local.nx - (radius + 1)
            i0, i1 = max(0, -b, -ci.min()), min(ny, ny - b, ny - ci.max())
            j0, j1 = max(0, -a, -cj.min()), min(nx, nx - a, nx - cj.max())
            if i0 >= i1 or j0 >= j1:
                continue
            I, J = np.mgrid[i0:i1, j0:j1]
            ok = allowed[I, J] & allowed[I + b, J + a]
            for di, dj in zip(ci, cj):
                ok &= allowed[I + di, J + dj]
            I, J = I[ok], J[ok]
            u = idx[I, J]
            v = idx[I + b, J + a]
            k = np.arange(n_edges, n_edges + len(u))
            rows_u.append(u)
            rows_v.append(v)
            for (di, dj, l) in zip(ci, cj, ln):
                w_rows.append(k)
                w_cols.append(idx[I + di, J + dj])
                w_vals.append(np.full(len(k), l))
            n_edges += len(u)
        self.u = np.concatenate(rows_u)
        self.v = np.concatenate(rows_v)
        self.W = sparse.csr_matrix((np.concatenate(w_vals), (np.concatenate(w_rows), np.concatenate(w_cols))),
                                   shape=(n_edges, nx * ny))
        self.length = np.asarray(self.W.sum(axis=1)).ravel()
        self.n = nx * ny

    def shortest(self, rho: np.ndarray, sources: np.ndarray):
        w = self.W @ rho + 1e-12 * self.length
        G = sparse.csr_matrix((w, (self.u, self.v)), shape=(self.n, self.n))
        dist, pred, _ = csgraph.dijkstra(G, directed=False, indices=sources, min_only=True,
                                      return_predecessors=True)
        return dist, pred

    def path(self, pred: np.ndarray, target: int) -> list:
        out = [target]
        while pred[out[-1]] >= 0:
            out.append(pred[out[-1]])
        return out[::-1]


def _node_points(grid: GridSpec, nodes) -> np.ndarray:
    nodes = np.asarray(nodes)
    i, j = nodes // grid.nx, nodes % grid.nx
    return grid.origin.real + j * grid.hx + 1j * (grid.origin.imag + i * grid.hy)


# ---------------------------------------------------------------------------
# discrete modulus
# ---------------------------------------------------------------------------

def _lattice_potential(grid: GridSpec, allowed: np.ndarray, E: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Lattice potential: 5-point harmonic on the free nodes, 0 on E, 1 on F, reflecting elsewhere."""
    from scipy.sparse.linalg import spsolve
    ny, nx = grid.ny, grid.nx
    idx = -np.ones((ny, nx), np.int64)
    unk = allowed & ~E & ~F
    idx[unk] = np.arange(unk.sum())
    n = int(unk.sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    diag = np.zeros(n)
    for (di, dj, w) in ((0, 1, 1 / grid.hx ** 2), (0, -1, 1 / grid.hx ** 2),
                        (1, 0, 1 / grid.hy ** 2), (-1, 0, 1 / grid.hy ** 2)):
        I, J = np.nonzero(unk)
        I2, J2 = I + di, J + dj
        ok = (I2 >= 0) & (I2 < ny) & (J2 >= 0) & (J2 < nx)
        I, J, I2, J2 = I[ok], J[ok], I2[ok], J2[ok]
        ok = allowed[I2, J2]
        I, J, I2, J2 = I[ok], J[ok], I2[ok], J2[ok]
        k = idx[I, J]
        np.add.at(diag, k, w)
        nb = unk[I2, J2]
        rows.append(k[nb])
        cols.append(idx[I2[nb], J2[nb]])
        vals.append(np.full(nb.sum(), -w))
        np.add.at(rhs, k[~nb], w * F[I2[~nb], J2[~nb]])
    u = np.where(F, 1.0, 0.0)
    if n:
        A = sparse.csr_matrix((np.concatenate(vals + [diag]),
                               (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
                              shape=(n, n))
        u[unk] = spsolve(A.tocsc(), rhs)
    return np.where(allowed, u, np.nan)


def _level_crossings(grid: GridSpec, u: np.ndarray, level: float) -> np.ndarray:
    """Points where the bilinear potential crosses ``level`` on lattice edges."""
    out = []
    X, Y = np.meshgrid(grid.x, grid.y)
    for axis in (0, 1):
        if axis == 1:
            u0, u1, x0, y0, dx, dy = u[:, :-1], u[:, 1:], X[:, :-1], Y[:, :-1], grid.hx, 0.0
        else:
            u0, u1, x0, y0, dx, dy = u[:-1, :], u[1:, :], X[:-1, :], Y[:-1, :], 0.0, grid.hy
        with np.errstate(invalid="ignore"):
            hit = (u0 - level) * (u1 - level) < 0
            t = (level - u0[hit]) / (u1[hit] - u0[hit])
        out.append(x0[hit] + t * dx + 1j * (y0[hit] + t * dy))
    return np.concatenate(out)


def _flow_lines(grid: GridSpec, u: np.ndarray, E: np.ndarray, F: np.ndarray,
                levels=(0.25, 0.5, 0.75), step: float = 0.5) -> list:
    """Gradient lines of the potential traced from level-set seeds down to E and up to F.

    Lines that leave the domain or stall are discarded.
    """
    from .conditions import sample_field
    from .fields import _axis_derivative
    valid = np.isfinite(u)
    gx = _axis_derivative(u, valid, grid.hx, 1)
    gy = _axis_derivative(u, valid, grid.hy, 0)
    seeds = np.concatenate([_level_crossings(grid, u, c) for c in levels])
    if seeds.size == 0:
        return []
    ds = step * min(grid.hx, grid.hy)
    max_steps = int(6 * (grid.nx + grid.ny) / step)

    def direction(p):
        vx = sample_field(grid, gx, p)
        vy = sample_field(grid, gy, p)
        g = vx + 1j * vy
        a = np.abs(g)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(a > 0, g / a, np.nan)

    def node_in(p, S):
        i = np.rint((p.imag - grid.origin.imag) / grid.hy).astype(np.int64)
        j = np.rint((p.real - grid.origin.real) / grid.hx).astype(np.int64)
        ok = (i >= 0) & (i < grid.ny) & (j >= 0) & (j < grid.nx)
        out = np.zeros(len(p), bool)
        out[ok] = S[i[ok], j[ok]]
        return out

    halves = []
    for sgn, target in ((-1.0, E), (1.0, F)):
        p = seeds.copy()
        pts = [p.copy()]
        alive = np.ones(len(p), bool)
        reached = node_in(p, target)
        alive &= ~reached
        for _ in range(max_steps):
            if not alive.any():
                break
            q = p[alive]
            d1 = direction(q)
            d2 = direction(q + 0.5 * sgn * ds * d1)
            qn = q + sgn * ds * d2
            bad = ~np.isfinite(qn)
            qn = np.where(bad, q, qn)
            p = p.copy()
            p[alive] = qn
            idx = np.flatnonzero(alive)
            alive[idx[bad]] = False
            hit = node_in(qn, target) & ~bad
            reached[idx[hit]] = True
            alive[idx[hit]] = False
            pts.append(p.copy())
        halves.append((np.array(pts), reached))
    (back, rb), (fwd, rf) = halves
    lines = []
    for k in np.flatnonzero(rb & rf):
        b = back[:, k]
        f = fwd[:, k]
        b = b[np.r_[True, np.diff(b) != 0]]
        f = f[np.r_[True, np.diff(f) != 0]]
        lines.append(np.concatenate([b[::-1], f[1:]]))
    return lines


def _joining_modulus(fam: CurveFamilySpec, batch: int, max_rounds: int, tol: float, radius: int,
                     blowup: float, n_levels: int) -> ModulusResult:
    grid = fam.grid
    allowed = fam.domain
    free_flat = (allowed & ~fam.E & ~fam.F).ravel()
    area = np.full(grid.nx * grid.ny, grid.hx * grid.hy)
    graph = _PathGraph(grid, allowed, radius)
    sources = np.flatnonzero(fam.E.ravel())
    targets = np.flatnonzero(fam.F.ravel())
    drop_fixed = sparse.diags(free_flat.astype(float))

    dist, pred = graph.shortest(np.ones(grid.nx * grid.ny), sources)
    dt = dist[targets]
    if not np.any(np.isfinite(dt)):
        raise InfeasibleError("no representative: E and F lie in different components of the domain")
    probe, _ = _rows_matrix(grid, [_node_points(grid, graph.path(pred, targets[int(np.nanargmin(dt))]))], allowed)
    if (probe @ drop_fixed).sum() <= 1e-12 * grid.h:
        return ModulusResult(float("inf"), None, 1, 0.0, 0, 0.0,
                             "unbounded: a representative joins E and F without crossing free cells")

    # start from gradient lines of the lattice potential, which cover the domain
    u = _lattice_potential(grid, allowed, fam.E, fam.F)
    curves = _flow_lines(grid, u, fam.E, fam.F, levels=(np.arange(n_levels) + 0.5) / n_levels)
    L, bad = _rows_matrix(grid, curves, allowed)
    keep = ~bad & (np.asarray((L @ drop_fixed).sum(axis=1)).ravel() > 0)
    curves = [c for c, k in zip(curves, keep) if k]
    L = (L[np.flatnonzero(keep)] @ drop_fixed).tocsr()
    n_flow = len(curves)
    rho, lam = solve_density_qp(L, area)
    seen: set = set()
    history = []
    sp_len = float("nan")
    rounds = 0
    for rounds in range(max_rounds + 1):
        dist, pred = graph.shortest(rho, sources)
        dt = dist[targets]
        sp_len = float(np.min(dt))
        history.append({"round": rounds, "n_curves": len(curves), "shortest": sp_len,
                        "energy": float((area * rho ** 2).sum())})
        if sp_len >= 1 - tol or rounds == max_rounds:
            break
        new = []
        for t in np.argsort(dt):
            if dt[t] >= 1 - tol or len(new) >= batch:
                break
            p = graph.path(pred, targets[t])
            key = hash(tuple(p))
            if key in seen:
                continue
            seen.add(key)
            new.append(_node_points(grid, p))
        if not new:
            break
        Lnew, _ = _rows_matrix(grid, new, allowed)
        curves.extend(new)
        L = sparse.vstack([L, Lnew @ drop_fixed]).tocsr()
        rho, lam = solve_density_qp(L, area, lam0=np.concatenate([lam, np.zeros(len(new))]))
        if float((area * rho ** 2).sum()) > blowup:
            break
    li = L @ rho
    mn = float(li.min()) if len(li) else 0.0
    if not mn > 0:
        raise NumericFailure("density solve produced a non-admissible density")
    rho_c = rho / mn
    value = float((area * rho_c ** 2).sum())
    status = "ok"
    if value > blowup:
        value, status = float("inf"), "unbounded: modulus exceeds the blow-up threshold"
    res = ModulusResult(value, AdmissibleDensity(grid, rho_c.reshape(grid.ny, grid.nx)), len(curves), 1.0,
                        rounds, sp_len / mn, status, history)
    res.history.insert(0, {"flow_lines": n_flow})
    return res


def circle_family_curves(grid: GridSpec, z0: complex, eps: float, eps0: float,
                         n_radii: Optional[int] = None, n_theta: Optional[int] = None,
                         min_arc_cells: float = 4.0, mask: Optional[np.ndarray] = None,
                         return_dropped: bool = False):
    """Dashed lines S(z0, r) intersected with the domain, as lists of arcs.

    Returns (radii, arcs) where ``arcs[k]`` is a list of polylines (complex
    vertex arrays).  Arcs (or whole circles) shorter than ``min_arc_cells``
    cells are dropped and circles left without arcs are omitted;
    ``return_dropped`` appends the number of dropped arcs.
    """
    if n_radii is None:
        n_radii = int(max(16, np.ceil(8 * (eps0 - eps) / grid.h)))
    n_theta = n_theta or 4 * max(grid.nx, grid.ny)
    radii = eps + (eps0 - eps) * (np.arange(n_radii) + 0.5) / n_radii
    th = 2 * np.pi * np.arange(n_theta + 1) / n_theta
    out_r, out_arcs = [], []
    dropped = 0
    ms = grid.mask if mask is None else mask
    for r in radii:
        pts = z0 + r * np.exp(1j * th)
        fi = np.rint((pts.imag - grid.origin.imag) / grid.hy).astype(np.int64)
        fj = np.rint((pts.real - grid.origin.real) / grid.hx).astype(np.int64)
        ok = (fi >= 0) & (fi < grid.ny) & (fj >= 0) & (fj < grid.nx)
        inside = np.zeros(len(pts), bool)
        inside[ok] = ms[fi[ok], fj[ok]]
        arcs, nd = _runs(pts, inside, grid.h * min_arc_cells)
        dropped += nd
        if arcs:
            out_r.append(r)
            out_arcs.append(arcs)
    if return_dropped:
        return np.asarray(out_r), out_arcs, dropped
    return np.asarray(out_r), out_arcs


def _runs(pts, inside, min_len):
    """Maximal runs of consecutive inside vertices (closed curve, last == first).

    Returns (runs at least ``min_len`` long, number of shorter runs dropped).
    """
    n = len(pts) - 1
    ins = inside[:n]
    if ins.all():
        if np.abs(np.diff(pts)).sum() >= min_len:
            return [pts], 0
        return [], 1
    if not ins.any():
        return [], 0
    start = int(np.flatnonzero(~ins)[0])
    order = (np.arange(n) + start) % n
    arcs, cur = [], []
    for k in order:
        if ins[k]:
            cur.append(pts[k])
        elif cur:
            arcs.append(np.array(cur))
            cur = []
    if cur:
        arcs.append(np.array(cur))
    keep = [a for a in arcs if len(a) > 1 and np.abs(np.diff(a)).sum() >= min_len]
    return keep, len(arcs) - len(keep)


def _explicit_family_modulus(grid: GridSpec, members: Sequence[Sequence[np.ndarray]],
                             mask: Optional[np.ndarray] = None) -> ModulusResult:
    """Modulus of an explicit family whose members are unions of polylines."""
    flat, owner = [], []
    for k, arcs in enumerate(members):
        for a in arcs:
            flat.append(a)
            owner.append(k)
    if not flat:
        raise InfeasibleError("no representative: the family has no resolvable member")
    Larc, bad = _rows_matrix(grid, flat, grid.mask if mask is None else mask)
    owner = np.asarray(owner)
    S = sparse.csr_matrix((np.ones(len(owner)), (owner, np.arange(len(owner)))), shape=(len(members), len(owner)))
    L = (S @ Larc).tocsr()
    area = np.full(grid.nx * grid.ny, grid.hx * grid.hy)
    rho, _ = solve_density_qp(L, area)
    li = L @ rho
    mn = float(li.min())
    if mn <= 0:
        raise NumericFailure("density solve produced a non-admissible density")
    rho = rho / mn
    value = float((area * rho ** 2).sum())
    return ModulusResult(value, AdmissibleDensity(grid, rho.reshape(grid.ny, grid.nx)), len(members), 1.0)


def discrete_modulus(family: CurveFamilySpec, batch: int = 256, max_rounds: int = 1, tol: float = 1e-3,
                     neighbourhood: int = 2, blowup: float = 1e8, n_levels: int = 8) -> ModulusResult:
    """Modulus of a curve family from the discretised convex program.

    Joining families: the representatives start as gradient lines of the
    lattice potential (0 on E, 1 on F), seeded where the potential crosses
    ``n_levels`` evenly spaced levels; these cover the domain the way the
    extremal curves do.  Each of ``max_rounds`` refinement rounds then adds
    up to ``batch`` density-shortest lattice paths from E to F whose length is
    below ``1 - tol`` (straight edges to neighbours up to ``neighbourhood``
    cells away, exact in-cell lengths).  The shortest lattice path length
    under the final density is reported as a diagnostic.

    Circle families use every resolvable dashed line as a representative.

    The returned density is rescaled so that every sampled representative has
    line integral at least 1; the value is its energy.
    """
    if family.kind == "joining":
        return _joining_modulus(family, batch, max_rounds, tol, neighbourhood, blowup, n_levels)
    radii, arcs, dropped = circle_family_curves(family.grid, family.z0, family.eps, family.eps0,
                                                mask=family.domain, return_dropped=True)
    res = _explicit_family_modulus(family.grid, arcs, family.domain)
    res.dropped_arcs = dropped
    return res


# ---------------------------------------------------------------------------
# closed-form weighted problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedMinProblem:
    """Atoms (weight_i, phi_i) of a finite measure space and an exponent p > 1."""

    weights: tuple
    phi: tuple
    p: float

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        f = np.asarray(self.phi, float)
        if w.ndim != 1 or w.shape != f.shape or w.size == 0:
            raise InputError("weights and phi must be matching non-empty 1-D sequences")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InputError("weights must be positive and finite")
        if np.any(~np.isfinite(f)) or np.any(f <= 0):
            raise InputError("phi values must lie in (0, inf)")
        if not self.p > 1:
            raise InputError("exponent p must exceed 1")
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "phi", tuple(f.tolist()))

    @property
    def lam(self) -> float:
        return 1.0 / (self.p - 1.0)

    def functional(self, alpha) -> np.ndarray:
        """sum_i w_i phi_i alpha_i**p (vectorised over leading axes of alpha)."""
        a = np.asarray(alpha, float)
        return (np.asarray(self.weights) * np.asarray(self.phi) * a ** self.p).sum(axis=-1)

    def constraint(self, alpha) -> np.ndarray:
        return (np.asarray(self.weights) * np.asarray(alpha, float)).sum(axis=-1)


def weighted_inf_closed_form(problem: WeightedMinProblem) -> tuple[float, np.ndarray]:
    """Infimum of sum w phi alpha**p over alpha >= 0 with sum w alpha = 1, and its minimiser.

    I = (sum w phi**-lam)**(-1/lam) with lam = 1/(p-1); the minimiser is
    alpha0 = C phi**-lam with C = 1/(sum w phi**-lam).
    """
    w = np.asarray(problem.weights)
    f = np.asarray(problem.phi)
    lam = problem.lam
    # log-domain evaluation keeps extreme phi**-lam finite
    logs = -lam * np.log(f)
    mx = logs.max()
    s = float((w * np.exp(logs - mx)).sum())
    logS = np.log(s) + mx
    I = float(np.exp(-logS / lam))
    alpha0 = np.exp(logs - logS)
    return I, alpha0


def weighted_inf_sampled(problem: WeightedMinProblem, n_samples: int = 1000, rng=None) -> tuple[float, np.ndarray]:
    """Smallest functional value over random admissible alpha (brute-force check of the closed form).

    Half the samples are spread over the simplex sum w alpha = 1 (exponential
    draws, rescaled); the other half perturb the closed-form minimiser
    multiplicatively and rescale, probing its neighbourhood.
    """
    rng = np.random.default_rng(rng)
    w = np.asarray(problem.weights)
    _, a0 = weighted_inf_closed_form(problem)
    n1 = n_samples // 2
    spread = rng.exponential(size=(n1, w.size))
    near = a0 * np.exp(0.1 * rng.standard_normal((n_samples - n1, w.size)))
    alpha = np.vstack((spread, near))
    alpha /= (alpha * w).sum(axis=1, keepdims=True)
    vals = problem.functional(alpha)
    k = int(np.argmin(vals))
    return float(vals[k]), alpha[k]


# ---------------------------------------------------------------------------
# circle-family bounds
# ---------------------------------------------------------------------------

def _radial_nodes(eps: float, eps0: float, per_octave: int = 64):
    """Trapezoid nodes/weights in r for the log-uniform partition of [eps, eps0]."""
    n = int(max(8, np.ceil(per_octave * np.log2(eps0 / eps))))
    s = np.linspace(np.log(eps), np.log(eps0), n + 1)
    r = np.exp(s)
    ds = s[1] - s[0]
    w = np.full(n + 1, ds)
    w[0] = w[-1] = 0.5 * ds
    return r, w * r


def _ring_norm_profile(Kt, z0, r, n_theta=None):
    from .conditions import _ring_norms
    return _ring_norms(Kt, complex(z0), r, n_theta)


def circle_family_modulus_lower(Kt, z0: complex, eps: float, eps0: float,
                                per_octave: int = 64, n_theta: Optional[int] = None) -> float:
    """Trapezoid value of the integral of dr/||K^T||_1(z0, r) over (eps, eps0)."""
    if not 0 < eps < eps0:
        raise InputError("need 0 < eps < eps0")
    r, w = _radial_nodes(eps, eps0, per_octave)
    norms = _ring_norm_profile(Kt, z0, r, n_theta)
    bad = ~(norms > 0)
    if bad.mean() >= 0.01:
        raise InputError("ring norms unresolved on more than 1% of the radii")
    with np.errstate(divide="ignore"):
        inv = np.where(bad | np.isinf(norms), 0.0, 1.0 / np.where(bad, 1.0, norms))
    return float((w * inv).sum())


@dataclass
class Eta0Comparison:
    lhs: float
    rhs: float
    I: float
    holds: bool


class Eta0Problem:
    """Radial densities on eps < |z - z0| < eps0 for a fixed K^T field.

    Ring norms are computed once on a trapezoid partition in log r; candidate
    densities eta are evaluated on the same nodes, so the comparison with
    eta0 = 1/(I ||K^T||_1) is exact up to rounding.
    """

    def __init__(self, Kt, z0: complex, eps: float, eps0: float, per_octave: int = 64,
                 n_theta: Optional[int] = None):
        if not 0 < eps < eps0:
            raise InputError("need 0 < eps < eps0")
        self.r, self.w = _radial_nodes(eps, eps0, per_octave)
        norms = _ring_norm_profile(Kt, z0, self.r, n_theta)
        norms = np.where(norms > 0, norms, np.inf)
        self.norms = norms
        self.I = float((self.w / norms).sum())
        if not self.I > 0:
            raise InputError("I = 0: ring norms are infinite on the whole range")
        self.eta0 = 1.0 / (self.I * norms)

    def normalise(self, eta_vals: np.ndarray) -> np.ndarray:
        eta_vals = np.asarray(eta_vals, float)
        s = (eta_vals * self.w).sum(axis=-1, keepdims=True)
        if np.any(s <= 0):
            raise InputError("candidate eta has zero integral")
        return np.where(np.abs(s - 1) <= 1e-8, eta_vals, eta_vals / s)

    def energy(self, eta_vals: np.ndarray) -> np.ndarray:
        """Integral of K^T eta(|z - z0|)**2 over the ring (finite norms only)."""
        fin = np.isfinite(self.norms)
        e = np.asarray(eta_vals, float)
        return (np.where(fin, self.norms, 0.0) * self.w * e ** 2).sum(axis=-1) + \
            np.where(np.any((~fin) & (e > 0), axis=-1), np.inf, 0.0)


def eta0_optimality(Kt, z0: complex, eps: float, eps0: float, eta: Union[Callable, np.ndarray],
                    tol: float = 1e-8, problem: Optional[Eta0Problem] = None) -> Eta0Comparison:
    """Compare the ring energy of eta0 = 1/(I ||K^T||_1) with that of a candidate eta.

    ``eta`` is a function of r or an array of values on the partition nodes;
    it is rescaled to unit integral when needed.  Returns LHS (eta0, equal to
    1/I) and RHS (eta) with ``holds = LHS <= RHS + tol``.
    """
    pb = problem or Eta0Problem(Kt, z0, eps, eps0)
    vals = eta(pb.r) if callable(eta) else np.asarray(eta, float)
    vals = pb.normalise(vals)
    lhs = float(pb.energy(pb.eta0))
    rhs = float(pb.energy(vals))
    return Eta0Comparison(lhs, rhs, pb.I, lhs <= rhs + tol * max(1.0, abs(rhs)))


# ---------------------------------------------------------------------------
# image families
# ---------------------------------------------------------------------------

def _map_at(f: Union[ComplexMapField, Callable], pts: np.ndarray) -> np.ndarray:
    if callable(f) and not isinstance(f, ComplexMapField):
        return f(pts)
    from .conditions import sample_field
    re = sample_field(f.grid, f.values.real, pts)
    im = sample_field(f.grid, f.values.imag, pts)
    return re + 1j * im


@dataclass
class PushforwardReport:
    bound: float
    estimate: float
    holds: bool
    gap: float
    n_members: int
    status: str = "ok"

    def to_dict(self) -> dict:
        return {"bound": self.bound, "estimate": self.estimate, "holds": self.holds,
                "gap": self.gap, "n_members": self.n_members, "status": self.status}


def pushforward_modulus_check(f: Union[ComplexMapField, Callable], mu: MuField, z0: complex,
                              eps: float, eps0: float, image_n: Optional[int] = None,
                              rel_tol: float = 0.05, n_radii: Optional[int] = None) -> PushforwardReport:
    """Discrete modulus of the image of the circle family versus the ring-norm lower bound.

    ``f`` is a sampled map (bilinear interpolation at arc vertices) or a
    callable evaluating the map exactly.  The image family's modulus is
    computed on a lattice of ``image_n`` nodes per side covering the image
    polylines, with ``n_radii`` (default ``4 * image_n``) sampled circles.  ``holds`` is ``estimate >= bound * (1 - rel_tol)``.
    """
    z0 = complex(z0)
    grid = mu.grid
    Kt = tangent_dilatation(mu, z0)
    bound = circle_family_modulus_lower(Kt, z0, eps, eps0)
    n = image_n or max(grid.nx, grid.ny)
    radii, arcs = circle_family_curves(grid, z0, eps, eps0, n_radii=n_radii or 4 * n)
    img = []
    for member in arcs:
        im_arcs = [_map_at(f, a) for a in member]
        im_arcs = [a[np.isfinite(a)] for a in im_arcs]
        img.append([a for a in im_arcs if len(a) > 1])
    img = [m for m in img if m]
    if not img:
        return PushforwardReport(bound, float("nan"), False, float("nan"), 0, "inconclusive: no image members")
    allp = np.concatenate([np.concatenate(m) for m in img])
    lo = complex(allp.real.min(), allp.imag.min())
    hi = complex(allp.real.max(), allp.imag.max())
    side = max(hi.real - lo.real, hi.imag - lo.imag)
    h = side / (n - 5)
    center = 0.5 * (lo + hi)
    igrid = GridSpec.square(n, 0.5 * h * (n - 1), center)
    res = _explicit_family_modulus(igrid, img)
    est = res.value
    return PushforwardReport(bound, est, bool(est >= bound * (1 - rel_tol)), est - bound, len(img))
