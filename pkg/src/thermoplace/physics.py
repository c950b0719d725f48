"""Thermal model of a simplified unit-square (or unit-interval) transformer.

The solid is driven by a volumetric heat source

    q(x, t) = P0 + Pk(x, t) - h * (u(x, t) - Ta(t))

where the load loss splits into a temporal part nu * K(t)^2 and a spatial
profile (a sine bump in 1D, flat in 2D).  Boundary temperatures are the
measured ambient (x = 0) and top-oil (x = 1) temperatures; in 2D the
remaining edges sit at their average.

All powers are treated as already scaled to the nondimensional unit domain,
so Table-style parameter values are used verbatim.  Time is in hours
throughout the public API.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RangeError

#: tolerance for deciding that a coordinate lies on the domain boundary
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class PhysicsSpec:
    """Physical parameters of the heat-diffusion problem.

    Units: k W/(m K), rho kg/m^3, cp J/(kg K), h W/(m^2 K), p0 W, nu W.
    ``dim`` is the spatial dimension (1 or 2).
    """

    dim: int
    k: float = 50.0
    rho: float = 900.0
    cp: float = 2000.0
    h: float = 1000.0
    p0: float = 1500.0
    nu: float = 83000.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        for name in ("k", "rho", "cp", "h", "p0", "nu"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise DomainError(f"{name} must be strictly positive, got {value}")

    @property
    def rho_cp_hours(self) -> float:
        """Volumetric heat capacity with time measured in hours (rho*cp / 3600)."""
        return self.rho * self.cp / 3600.0


def default_spec(dim: int) -> PhysicsSpec:
    """Default parameter set; the convective coefficient doubles in 2D."""
    return PhysicsSpec(dim=dim, h=1000.0 if dim == 1 else 2000.0)


@dataclass(frozen=True)
class DriveSample:
    """Drive conditions at one instant: temperatures in degC, load in p.u."""

    ta: float
    to: float
    kf: float

    @property
    def tav(self) -> float:
        """Mean of ambient and top-oil temperature (the y-edge value in 2D)."""
        return (self.ta + self.to) / 2.0


@dataclass(frozen=True)
class DriveSeries:
    """Hourly measurement series: ambient/top-oil temperature and load factor."""

    t: np.ndarray
    ta: np.ndarray
    to: np.ndarray
    kf: np.ndarray

    def __post_init__(self):
        for name in ("t", "ta", "to", "kf"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.t.shape[0]
        if n < 2:
            raise DomainError("drive series needs at least 2 samples")
        for name in ("ta", "to", "kf"):
            if getattr(self, name).shape != (n,):
                raise DomainError(f"{name} length differs from t")
        if not np.all(np.diff(self.t) > 0):
            raise DomainError("sample times must be strictly increasing")
        if np.any(self.kf < 0):
            raise DomainError("load factor must be nonnegative")

    @property
    def t_first(self) -> float:
        return float(self.t[0])

    @property
    def t_last(self) -> float:
        return float(self.t[-1])

    def at(self, t: float) -> DriveSample:
        return drive_at(self, t)

    def at_many(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized linear interpolation; returns (ta, to, kf) arrays."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < self.t_first or ts.max() > self.t_last):
            raise RangeError(
                f"times outside drive range [{self.t_first}, {self.t_last}]"
            )
        return (
            np.interp(ts, self.t, self.ta),
            np.interp(ts, self.t, self.to),
            np.interp(ts, self.t, self.kf),
        )


def load_loss_spatial(x, dim: int):
    """Spatial load-loss profile on the unit domain.

    1D: 0.5*sin(3*pi*x) + 0.5 (peak 1 at x=1/6, zero at x=1/2); 2D: uniform 1.
    Accepts scalars or arrays; raises DomainError outside [0, 1]^dim.
    """
    if dim == 1:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise DomainError("x outside [0, 1]")
        out = np.clip(0.5 * np.sin(3.0 * np.pi * x) + 0.5, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out
    if dim == 2:
        xy = np.asarray(x, dtype=float)
        if xy.shape[-1] != 2:
            raise DomainError("2D point must have two coordinates")
        if np.any(xy < 0.0) or np.any(xy > 1.0):
            raise DomainError("point outside [0, 1]^2")
        out = np.ones(xy.shape[:-1], dtype=float)
        return float(out) if out.ndim == 0 else out
    raise DomainError(f"dim must be 1 or 2, got {dim}")


def load_loss_temporal(kf, nu: float):
    """Temporal load loss nu * K^2 in W; K must be nonnegative."""
    kf = np.asarray(kf, dtype=float)
    if np.any(kf < 0):
        raise DomainError("load factor must be nonnegative")
    out = nu * kf * kf
    return float(out) if out.ndim == 0 else out


def source_q(spec: PhysicsSpec, x, u, sample: DriveSample):
    """Heat source q = P0 + Pk(x,t) - h*(u - Ta); affine in u with slope -h."""
    pk = load_loss_temporal(sample.kf, spec.nu) * load_loss_spatial(x, spec.dim)
    out = spec.p0 + pk - spec.h * (np.asarray(u, dtype=float) - sample.ta)
    return float(out) if np.ndim(out) == 0 else out


def boundary_value(spec: PhysicsSpec, x, sample: DriveSample) -> float:
    """Dirichlet boundary temperature at a boundary point.

    1D: ambient at x=0, top-oil at x=1.  2D: ambient on the x=0 edge, top-oil
    on the x=1 edge, the average temperature on both y-edges; corners follow
    the x-edge rule.  Interior points raise DomainError.
    """
    if spec.dim == 1:
        x = float(np.asarray(x).reshape(()))
        if abs(x) <= BOUNDARY_TOL:
            return sample.ta
        if abs(x - 1.0) <= BOUNDARY_TOL:
            return sample.to
        raise DomainError(f"x={x} is not a 1D boundary point")
    xv, yv = (float(v) for v in np.asarray(x, dtype=float).reshape(2))
    for v in (xv, yv):
        if v < -BOUNDARY_TOL or v > 1.0 + BOUNDARY_TOL:
            raise DomainError(f"point ({xv}, {yv}) outside the unit square")
    if abs(xv) <= BOUNDARY_TOL:
        return sample.ta
    if abs(xv - 1.0) <= BOUNDARY_TOL:
        return sample.to
    if abs(yv) <= BOUNDARY_TOL or abs(yv - 1.0) <= BOUNDARY_TOL:
        return sample.tav
    raise DomainError(f"point ({xv}, {yv}) is not on the boundary")


def drive_at(series: DriveSeries, t: float) -> DriveSample:
    """Linear interpolation of the drive at time t (hours); no extrapolation.

    Queries at stored sample times reproduce the stored values exactly.
    """
    t = float(t)
    if t < series.t_first or t > series.t_last:
        raise RangeError(
            f"t={t} outside drive range [{series.t_first}, {series.t_last}]"
        )
    i = int(np.searchsorted(series.t, t))
    if i < series.t.shape[0] and series.t[i] == t:
        return DriveSample(float(series.ta[i]), float(series.to[i]), float(series.kf[i]))
    lo, hi = i - 1, i
    w = (t - series.t[lo]) / (series.t[hi] - series.t[lo])
    lerp = lambda a: float(a[lo] + w * (a[hi] - a[lo]))
    return DriveSample(lerp(series.ta), lerp(series.to), lerp(series.kf))


def synth_drive(seed: int, hours: int) -> DriveSeries:
    """Deterministic synthetic drive sampled hourly on t = 0..hours.

    Ambient follows a daily sinusoid inside [0, 15] degC plus noise, the load
    factor a daily profile clipped to [0.4, 1.0], and the top-oil temperature
    is ta + 30 + 15*kf, which keeps to > ta at every sample.
    """
    if int(hours) != hours or hours < 2:
        raise DomainError(f"hours must be an integer >= 2, got {hours}")
    hours = int(hours)
    rng = np.random.default_rng(seed)
    t = np.arange(hours + 1, dtype=float)
    ta = 7.5 + 6.0 * np.sin(2.0 * np.pi * (t - 15.0) / 24.0)
    ta = ta + 0.8 * rng.standard_normal(t.shape[0])
    kf = 0.70 + 0.25 * np.sin(2.0 * np.pi * (t - 18.0) / 24.0)
    kf = np.clip(kf + 0.04 * rng.standard_normal(t.shape[0]), 0.4, 1.0)
    to = ta + 30.0 + 15.0 * kf
    return DriveSeries(t=t, ta=ta, to=to, kf=kf)


DRIVE_CSV_HEADER = ["t_hours", "ta_c", "to_c", "k_pu"]


def write_drive_csv(series: DriveSeries, path) -> None:
    """Write a drive series as CSV (floats via repr, so round trips are exact)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(DRIVE_CSV_HEADER)
        for i in range(series.t.shape[0]):
            w.writerow(
                [repr(float(series.t[i])), repr(float(series.ta[i])),
                 repr(float(series.to[i])), repr(float(series.kf[i]))]
            )


def read_drive_csv(path) -> DriveSeries:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != DRIVE_CSV_HEADER:
            raise DomainError(f"bad drive CSV header {header!r} in {path}")
        cols = [[], [], [], []]
        for row in r:
            if not row:
                continue
            if len(row) != 4:
                raise DomainError(f"bad drive CSV row {row!r} in {path}")
            for c, v in zip(cols, row):
                c.append(float(v))
    return DriveSeries(t=cols[0], ta=cols[1], to=cols[2], kf=cols[3])
