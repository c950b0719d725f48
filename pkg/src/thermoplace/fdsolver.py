"""Finite-difference reference solver for the transformer heat equation.

The PDE is integrated with time in hours, so the volumetric heat capacity is
rho*cp/3600.  The source is affine in u, q = q0(x, t) - h_lin * u, and the
reaction part is treated implicitly: Crank-Nicolson in 1D (one tridiagonal
solve per step), Peaceman-Rachford ADI in 2D (two banded sweeps per step with
the reaction split evenly between the sweeps).  Boundary rows are pinned to
the Dirichlet values at each (half-)step's target time.

Unless told otherwise, the run starts from the steady state of the t=0
problem, which avoids an artificial start-up transient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import identity, kron, lil_matrix
from scipy.sparse.linalg import spsolve

from . import physics
from .errors import DegenerateReferenceError, DomainError, RangeError
from .physics import DriveSeries, PhysicsSpec


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid: nx nodes per axis on [0,1], nt steps to t_end."""

    nx: int
    nt: int
    t_end: float

    def __post_init__(self):
        if self.nx < 3:
            raise DomainError(f"nx must be >= 3, got {self.nx}")
        if self.nt < 1:
            raise DomainError(f"nt must be >= 1, got {self.nt}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.t_end / self.nt

    def xs(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nt + 1)


@dataclass(frozen=True)
class SourceTerm:
    """Affine heat source q(x, u, t) = q0(x, t) - h_lin * u.

    ``q0`` is called with the grid coordinate arrays and a time: q0(xs, t) in
    1D, q0(X, Y, t) in 2D.  The affine split is what lets the solver treat the
    u-dependence implicitly.
    """

    q0: Callable[..., np.ndarray]
    h_lin: float


def physics_source(spec: PhysicsSpec, drive: DriveSeries) -> SourceTerm:
    """The model's source with the convective u-term split out."""
    if spec.dim == 1:

        def q0(xs, t):
            s = drive.at(t)
            pk = spec.nu * s.kf**2 * physics.load_loss_spatial(xs, 1)
            return spec.p0 + pk + spec.h * s.ta

    else:

        def q0(X, Y, t):
            s = drive.at(t)
            # spatial load profile is uniform (=1) in 2D
            pk = spec.nu * s.kf**2
            return np.full(X.shape, spec.p0 + pk + spec.h * s.ta)

    return SourceTerm(q0=q0, h_lin=spec.h)


def drive_boundary_1d(spec: PhysicsSpec, drive: DriveSeries):
    """Boundary closure t -> (u(0,t), u(1,t)) built from the drive."""

    def bc(t):
        s = drive.at(t)
        return s.ta, s.to

    return bc


def drive_boundary_2d(spec: PhysicsSpec, drive: DriveSeries):
    """Boundary closure (x, y, t) -> value; corners take the x-edge value."""

    def bc(x, y, t):
        s = drive.at(t)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast(x, y).shape, s.tav)
        out = np.where(x <= physics.BOUNDARY_TOL, s.ta, out)
        out = np.where(x >= 1.0 - physics.BOUNDARY_TOL, s.to, out)
        return out if out.ndim else float(out)

    return bc


@dataclass(frozen=True)
class FieldSeries:
    """Temperature u on a space-time grid.

    ``values`` has shape (n_times, nx) in 1D and (n_times, nx, ny) in 2D with
    axes ordered (t, x[, y]).  Axes are strictly increasing and all values
    finite.
    """

    dim: int
    xs: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=float))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        expect = (self.times.shape[0],) + (self.xs.shape[0],) * self.dim
        if self.values.shape != expect:
            raise DomainError(
                f"values shape {self.values.shape} does not match axes {expect}"
            )
        if np.any(np.diff(self.xs) <= 0) or np.any(np.diff(self.times) <= 0):
            raise DomainError("grid axes must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field contains non-finite values")

    @property
    def t_first(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    def snapshot(self, t: float) -> np.ndarray:
        """Field at time t, linearly interpolated between stored levels."""
        t = float(t)
        if t < self.t_first or t > self.t_last:
            raise RangeError(f"t={t} outside [{self.t_first}, {self.t_last}]")
        i = int(np.searchsorted(self.times, t))
        if i < self.times.shape[0] and self.times[i] == t:
            return self.values[i]
        w = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1])
        return (1.0 - w) * self.values[i - 1] + w * self.values[i]

    def sample(self, x, t: float) -> float:
        return sample_series(self, x, t)


def _check_drive_coverage(drive: Optional[DriveSeries], grid: GridSpec,
                          need: bool) -> None:
    if not need:
        return
    if drive is None:
        raise DomainError("drive series required when source/boundary not overridden")
    if drive.t_first > 0.0 or drive.t_last < grid.t_end:
        raise RangeError(
            f"drive covers [{drive.t_first}, {drive.t_last}] but the run needs "
            f"[0, {grid.t_end}]"
        )


def _tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; rhs may have extra columns."""
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def _steady_1d(spec, src, xs, bc_lo, bc_hi):
    """Solve k u'' + q0 - h_lin u = 0 with pinned Dirichlet ends."""
    nx = xs.shape[0]
    dx2 = (xs[1] - xs[0]) ** 2
    diag = np.full(nx, 2.0 * spec.k / dx2 + src.h_lin)
    lower = np.full(nx, -spec.k / dx2)
    upper = np.full(nx, -spec.k / dx2)
    rhs = np.asarray(src.q0(xs, 0.0), dtype=float) * np.ones(nx)
    diag[0] = diag[-1] = 1.0
    upper[0] = lower[-1] = 0.0
    rhs[0], rhs[-1] = bc_lo, bc_hi
    return _tridiag_solve(lower, diag, upper, rhs)


def solve_1d(spec: PhysicsSpec, drive: Optional[DriveSeries], grid: GridSpec, *,
             source: Optional[SourceTerm] = None,
             boundary=None,
             initial=None) -> FieldSeries:
    """Crank-Nicolson integration of the 1D problem.

    ``source``/``boundary``/``initial`` override the physics closures (used by
    manufactured-solution and constant-field tests).  ``boundary`` is a
    callable t -> (left, right); ``initial`` an array, scalar, or callable on
    the node coordinates.  Default initial condition: steady state at t=0.
    """
    if spec.dim != 1:
        raise DomainError("solve_1d requires spec.dim == 1")
    _check_drive_coverage(drive, grid, source is None or boundary is None)
    src = source if source is not None else physics_source(spec, drive)
    bc = boundary if boundary is not None else drive_boundary_1d(spec, drive)
    xs = grid.xs()
    times = grid.times()
    nx = grid.nx
    dt, dx = grid.dt, grid.dx
    alpha = spec.rho_cp_hours

    lo0, hi0 = bc(0.0)
    if initial is None:
        u = _steady_1d(spec, src, xs, lo0, hi0)
    elif callable(initial):
        u = np.asarray(initial(xs), dtype=float) * np.ones(nx)
    else:
        u = np.asarray(initial, dtype=float) * np.ones(nx)
        u = u.copy()
    u[0], u[-1] = lo0, hi0

    # constant-coefficient CN matrix: (alpha/dt + h/2 + k/dx^2) on the diagonal
    lam = spec.k / (2.0 * dx * dx)
    diag = np.full(nx, alpha / dt + src.h_lin / 2.0 + 2.0 * lam)
    lower = np.full(nx, -lam)
    upper = np.full(nx, -lam)
    diag[0] = diag[-1] = 1.0
    upper[0] = lower[-1] = 0.0

    values = np.empty((grid.nt + 1, nx))
    values[0] = u
    q_old = np.asarray(src.q0(xs, times[0]), dtype=float) * np.ones(nx)
    for n in range(grid.nt):
        t_new = times[n + 1]
        q_new = np.asarray(src.q0(xs, t_new), dtype=float) * np.ones(nx)
        rhs = np.empty(nx)
        rhs[1:-1] = (
            (alpha / dt - src.h_lin / 2.0 - 2.0 * lam) * u[1:-1]
            + lam * (u[2:] + u[:-2])
            + 0.5 * (q_old[1:-1] + q_new[1:-1])
        )
        blo, bhi = bc(t_new)
        rhs[0], rhs[-1] = blo, bhi
        u = _tridiag_solve(lower, diag, upper, rhs)
        values[n + 1] = u
        q_old = q_new
    return FieldSeries(dim=1, xs=xs, times=times, values=values)


def _steady_2d(spec, src, xs, bc):
    """Sparse solve of k (uxx + uyy) + q0 - h_lin u = 0 at t=0."""
    nx = xs.shape[0]
    dx2 = (xs[1] - xs[0]) ** 2
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    n = nx * nx
    idx = np.arange(n).reshape(nx, nx)
    A = lil_matrix((n, n))
    rhs = np.asarray(src.q0(X, Y, 0.0), dtype=float).reshape(n).copy()
    interior = np.zeros((nx, nx), dtype=bool)
    interior[1:-1, 1:-1] = True
    for i in range(nx):
        for j in range(nx):
            r = idx[i, j]
            if interior[i, j]:
                A[r, r] = 4.0 * spec.k / dx2 + src.h_lin
                A[r, idx[i - 1, j]] = -spec.k / dx2
                A[r, idx[i + 1, j]] = -spec.k / dx2
                A[r, idx[i, j - 1]] = -spec.k / dx2
                A[r, idx[i, j + 1]] = -spec.k / dx2
            else:
                A[r, r] = 1.0
                rhs[r] = bc(X[i, j], Y[i, j], 0.0)
    return spsolve(A.tocsr(), rhs).reshape(nx, nx)


def _apply_boundary_2d(u, xs, bc, t):
    u[0, :] = bc(np.zeros_like(xs), xs, t)
    u[-1, :] = bc(np.ones_like(xs), xs, t)
    u[:, 0] = bc(xs, np.zeros_like(xs), t)
    u[:, -1] = bc(xs, np.ones_like(xs), t)
    # corners resolved by the x-edge rule
    u[0, 0] = bc(0.0, 0.0, t)
    u[0, -1] = bc(0.0, 1.0, t)
    u[-1, 0] = bc(1.0, 0.0, t)
    u[-1, -1] = bc(1.0, 1.0, t)
    return u


def solve_2d(spec: PhysicsSpec, drive: Optional[DriveSeries], grid: GridSpec, *,
             source: Optional[SourceTerm] = None,
             boundary=None,
             initial=None) -> FieldSeries:
    """Peaceman-Rachford ADI integration of the 2D problem.

    Each step does an x-implicit then a y-implicit banded sweep, with the
    reaction term -h_lin*u split evenly between the sweeps and the source
    evaluated at the step midpoint.  ``boundary`` is a callable (x, y, t);
    edges are pinned at each half-step.
    """
    if spec.dim != 2:
        raise DomainError("solve_2d requires spec.dim == 2")
    _check_drive_coverage(drive, grid, source is None or boundary is None)
    src = source if source is not None else physics_source(spec, drive)
    bc = boundary if boundary is not None else drive_boundary_2d(spec, drive)
    xs = grid.xs()
    times = grid.times()
    nx = grid.nx
    dt, dx = grid.dt, grid.dx
    alpha = spec.rho_cp_hours
    X, Y = np.meshgrid(xs, xs, indexing="ij")

    if initial is None:
        u = _steady_2d(spec, src, xs, bc)
    elif callable(initial):
        u = np.asarray(initial(X, Y), dtype=float) * np.ones((nx, nx))
    else:
        u = np.asarray(initial, dtype=float) * np.ones((nx, nx))
        u = u.copy()
    u = _apply_boundary_2d(u, xs, bc, 0.0)

    lam = spec.k * dt / (2.0 * alpha * dx * dx)
    mu = src.h_lin * dt / (4.0 * alpha)
    diag = np.full(nx, 1.0 + 2.0 * lam + mu)
    lower = np.full(nx, -lam)
    upper = np.full(nx, -lam)
    diag[0] = diag[-1] = 1.0
    upper[0] = lower[-1] = 0.0

    values = np.empty((grid.nt + 1, nx, nx))
    values[0] = u
    for n in range(grid.nt):
        t_mid = times[n] + dt / 2.0
        t_new = times[n + 1]
        qm = np.asarray(src.q0(X, Y, t_mid), dtype=float) * np.ones((nx, nx))
        half_src = dt * qm / (2.0 * alpha)

        # sweep 1: x implicit, y explicit; unknown columns indexed by y
        rhs = np.empty((nx, nx))
        rhs[:, 1:-1] = (
            (1.0 - mu) * u[:, 1:-1]
            + lam * (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2])
            + half_src[:, 1:-1]
        )
        rhs[0, :] = bc(np.zeros_like(xs), xs, t_mid)
        rhs[-1, :] = bc(np.ones_like(xs), xs, t_mid)
        ustar = np.empty((nx, nx))
        ustar[:, 1:-1] = _tridiag_solve(lower, diag, upper, rhs[:, 1:-1])
        ustar = _apply_boundary_2d(ustar, xs, bc, t_mid)

        # sweep 2: y implicit, x explicit
        rhs = np.empty((nx, nx))
        rhs[1:-1, :] = (
            (1.0 - mu) * ustar[1:-1, :]
            + lam * (ustar[2:, :] - 2.0 * ustar[1:-1, :] + ustar[:-2, :])
            + half_src[1:-1, :]
        )
        rhs[:, 0] = bc(xs, np.zeros_like(xs), t_new)
        rhs[:, -1] = bc(xs, np.ones_like(xs), t_new)
        u = np.empty((nx, nx))
        u[1:-1, :] = _tridiag_solve(lower, diag, upper, rhs[1:-1, :].T).T
        u = _apply_boundary_2d(u, xs, bc, t_new)
        values[n + 1] = u
    return FieldSeries(dim=2, xs=xs, times=times, values=values)


def solve(spec: PhysicsSpec, drive, grid, **kwargs) -> FieldSeries:
    """Dispatch on spec.dim."""
    return (solve_1d if spec.dim == 1 else solve_2d)(spec, drive, grid, **kwargs)


def relative_l2(a, b) -> float:
    """||a - b||_2 / ||b||_2 with b the reference; shapes must match."""
    a = a.values if isinstance(a, FieldSeries) else np.asarray(a, dtype=float)
    b = b.values if isinstance(b, FieldSeries) else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    nb = float(np.linalg.norm(b.ravel()))
    if nb == 0.0:
        raise DegenerateReferenceError("reference has zero norm")
    return float(np.linalg.norm((a - b).ravel()) / nb)


def _axis_weights(axis: np.ndarray, v: float):
    """Bracketing index and interpolation weight along one grid axis."""
    if v < axis[0] or v > axis[-1]:
        raise RangeError(f"coordinate {v} outside [{axis[0]}, {axis[-1]}]")
    i = int(np.searchsorted(axis, v))
    if i < axis.shape[0] and axis[i] == v:
        return i, min(i + 1, axis.shape[0] - 1), 0.0
    return i - 1, i, float((v - axis[i - 1]) / (axis[i] - axis[i - 1]))


def sample_series(f: FieldSeries, x, t: float) -> float:
    """Multilinear interpolation of the field at point x and time t."""
    snap = f.snapshot(t)
    if f.dim == 1:
        xv = float(np.asarray(x).reshape(()))
        i0, i1, w = _axis_weights(f.xs, xv)
        return float((1.0 - w) * snap[i0] + w * snap[i1])
    xv, yv = (float(v) for v in np.asarray(x, dtype=float).reshape(2))
    i0, i1, wx = _axis_weights(f.xs, xv)
    j0, j1, wy = _axis_weights(f.xs, yv)
    c0 = (1.0 - wy) * snap[i0, j0] + wy * snap[i0, j1]
    c1 = (1.0 - wy) * snap[i1, j0] + wy * snap[i1, j1]
    return float((1.0 - wx) * c0 + wx * c1)


def interp_snapshot(xs: np.ndarray, snap: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a single snapshot at (N, dim) points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if snap.ndim == 1:
        return np.interp(points[:, 0], xs, snap)
    out = np.empty(points.shape[0])
    for n, (xv, yv) in enumerate(points):
        i0, i1, wx = _axis_weights(xs, xv)
        j0, j1, wy = _axis_weights(xs, yv)
        c0 = (1.0 - wy) * snap[i0, j0] + wy * snap[i0, j1]
        c1 = (1.0 - wy) * snap[i1, j0] + wy * snap[i1, j1]
        out[n] = (1.0 - wx) * c0 + wx * c1
    return out


FIELD_CSV_HEADERS = {1: ["x", "t_hours", "u_c"], 2: ["x", "y", "t_hours", "u_c"]}


def write_field_csv(f: FieldSeries, path, times=None) -> None:
    """Write snapshots as CSV rows, row-major over space within each time level.

    ``times`` restricts the output to the listed time levels (values must lie
    on stored levels).
    """
    import csv as _csv

    if times is None:
        t_idx = range(f.times.shape[0])
    else:
        t_idx = []
        for t in times:
            hits = np.nonzero(np.isclose(f.times, t, rtol=0.0, atol=1e-9))[0]
            if hits.shape[0] == 0:
                raise RangeError(f"t={t} is not a stored time level")
            t_idx.append(int(hits[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(FIELD_CSV_HEADERS[f.dim])
        for ti in t_idx:
            tv = repr(float(f.times[ti]))
            if f.dim == 1:
                for i, xv in enumerate(f.xs):
                    w.writerow([repr(float(xv)), tv, repr(float(f.values[ti, i]))])
            else:
                for i, xv in enumerate(f.xs):
                    for j, yv in enumerate(f.xs):
                        w.writerow([repr(float(xv)), repr(float(yv)), tv,
                                    repr(float(f.values[ti, i, j]))])


def read_field_csv(path) -> FieldSeries:
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        r = _csv.reader(fh)
        header = next(r, None)
        if header == FIELD_CSV_HEADERS[1]:
            dim = 1
        elif header == FIELD_CSV_HEADERS[2]:
            dim = 2
        else:
            raise DomainError(f"bad field CSV header {header!r} in {path}")
        rows = [tuple(float(v) for v in row) for row in r if row]
    if not rows:
        raise DomainError(f"empty field CSV {path}")
    data = np.asarray(rows)
    xs = np.unique(data[:, 0])
    times = np.unique(data[:, dim])
    if dim == 1:
        values = np.full((times.shape[0], xs.shape[0]), np.nan)
        ti = np.searchsorted(times, data[:, 1])
        xi = np.searchsorted(xs, data[:, 0])
        values[ti, xi] = data[:, 2]
    else:
        ys = np.unique(data[:, 1])
        if not np.array_equal(ys, xs):
            raise DomainError("field CSV must use the same x and y axes")
        values = np.full((times.shape[0], xs.shape[0], xs.shape[0]), np.nan)
        ti = np.searchsorted(times, data[:, 2])
        xi = np.searchsorted(xs, data[:, 0])
        yi = np.searchsorted(xs, data[:, 1])
        values[ti, xi, yi] = data[:, 3]
    if np.any(np.isnan(values)):
        raise DomainError(f"field CSV {path} does not cover a full grid")
    return FieldSeries(dim=dim, xs=xs, times=times, values=values)
