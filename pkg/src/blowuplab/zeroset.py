"""Sublevel-set topology of a sampled potential and isolating subdomains.

Connectivity is axis adjacency only (2 neighbours in 1D, 4 in 2D).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

ZERO_TOL = 1e-12


class ZeroTouchesBoundary(RuntimeError):
    """The zero component of x0 meets the domain boundary at every threshold."""


def _edge_mask(shape) -> np.ndarray:
    edge = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[ax] = 0
        edge[tuple(idx)] = True
        idx[ax] = -1
        edge[tuple(idx)] = True
    return edge


def _structure(ndim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(ndim, 1)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Boolean subset of a grid."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def empty(cls, shape) -> "RegionMask":
        return cls(np.zeros(shape, dtype=bool))

    @classmethod
    def from_interval(cls, x: np.ndarray, lo: float, hi: float) -> "RegionMask":
        x = np.asarray(x)
        return cls((x >= lo) & (x <= hi))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask) if self.mask.ndim == 1 else np.argwhere(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def __bool__(self) -> bool:
        return bool(self.mask.any())

    @property
    def boundary(self) -> np.ndarray:
        """Mask nodes adjacent to a non-mask node or lying on the grid edge."""
        inner = ndimage.binary_erosion(self.mask, structure=_structure(self.mask.ndim), border_value=0)
        return self.mask & ~inner

    @property
    def boundary_indices(self) -> np.ndarray:
        b = self.boundary
        return np.flatnonzero(b) if b.ndim == 1 else np.argwhere(b)

    @property
    def is_connected(self) -> bool:
        _, n = ndimage.label(self.mask, structure=_structure(self.mask.ndim))
        return n == 1

    def distance_to_edge(self) -> int:
        """Smallest index distance from a mask node to the grid edge (1D)."""
        idx = np.flatnonzero(self.mask.ravel())
        if idx.size == 0:
            return -1
        n = self.mask.size
        return int(min(idx.min(), n - 1 - idx.max()))

    def contains(self, other: "RegionMask") -> bool:
        return bool(np.all(~other.mask | self.mask))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in np.atleast_2d(self.mask.astype(int)):
                w.writerow(row.tolist())
        return path

    @classmethod
    def from_csv(cls, path) -> "RegionMask":
        with open(path, newline="") as fh:
            rows = [[int(v) for v in r] for r in csv.reader(fh) if r]
        a = np.array(rows, dtype=bool)
        return cls(a[0] if a.shape[0] == 1 else a)


@dataclass(frozen=True, eq=False)
class ComponentDecomposition:
    threshold: float
    labels: np.ndarray  # -1 outside the sublevel set, 0..k-1 otherwise
    touches_boundary: tuple[bool, ...]

    @property
    def count(self) -> int:
        return len(self.touches_boundary)

    def component(self, label: int) -> RegionMask:
        return RegionMask(self.labels == label)

    def label_at(self, index) -> int:
        return int(self.labels[index])


def sublevel_components(V, threshold: float, boundary_mask=None, strict: bool = False) -> ComponentDecomposition:
    """Connected components of {V <= threshold} (or {V < threshold} when ``strict``).

    Parameters
    ----------
    V : array_like
        Potential sampled on a 1D or 2D grid.
    threshold : float
        Sublevel value.
    boundary_mask : array_like of bool, optional
        Nodes on the geometric boundary.  Defaults to the grid edge.
    """
    V = np.asarray(V, dtype=float)
    inside = V < threshold if strict else V <= threshold
    raw, n = ndimage.label(inside, structure=_structure(V.ndim))
    labels = raw.astype(np.int64) - 1
    edge = _edge_mask(V.shape) if boundary_mask is None else np.asarray(boundary_mask, dtype=bool)
    touched = np.zeros(n, dtype=bool)
    hit = labels[edge & inside]
    touched[hit] = True
    labels.setflags(write=False)
    return ComponentDecomposition(float(threshold), labels, tuple(bool(b) for b in touched))


def nesting_holds(V, thresholds, boundary_mask=None) -> bool:
    """Every component at a lower threshold lies inside exactly one at a higher one."""
    ts = sorted(float(t) for t in thresholds)
    decs = [sublevel_components(V, t, boundary_mask) for t in ts]
    for lo, hi in zip(decs[:-1], decs[1:]):
        for k in range(lo.count):
            parents = np.unique(hi.labels[lo.labels == k])
            if parents.size != 1 or parents[0] < 0:
                return False
    return True


@dataclass(frozen=True)
class IsolatingSubdomain:
    omega0: RegionMask
    eta: float
    m: int
    threshold: float

    def as_dict(self, x=None) -> dict:
        d = {"eta": self.eta, "m": self.m, "threshold": self.threshold, "nodes": self.omega0.count}
        if x is not None and self.omega0:
            xs = np.asarray(x)[self.omega0.mask]
            d["extent"] = [float(xs.min()), float(xs.max())]
        return d


def isolating_subdomain(V, x0, boundary_mask=None, m_max: int = 2**45,
                        zero_tol: float = ZERO_TOL) -> IsolatingSubdomain:
    """Neighbourhood of a zero of V whose boundary carries V >= eta > 0.

    Doubles m until the component of ``x0`` in {V <= 1/m} avoids the domain
    boundary and holds no zero of V outside the zero component of ``x0``,
    then returns the strict sublevel component {V < 1/m} of ``x0`` with
    ``eta`` the minimum of V over its boundary nodes.

    ``zero_tol`` is the largest |V(x0)| accepted as a zero; sampled data
    whose zero falls between nodes needs a value of order h^2 max|V''|.

    Raises
    ------
    ZeroTouchesBoundary
        When no admissible m is found before 1/m drops below the zero tolerance.
    """
    V = np.asarray(V, dtype=float)
    x0 = tuple(np.atleast_1d(x0)) if V.ndim > 1 else int(x0)
    if abs(V[x0]) > zero_tol:
        raise ValueError(f"V(x0) = {V[x0]:.3g} is not a zero")
    zeros = sublevel_components(V, zero_tol, boundary_mask)
    others = (zeros.labels >= 0) & (zeros.labels != zeros.label_at(x0))
    m = 1
    while m <= m_max:
        tau = 1.0 / m
        closed = sublevel_components(V, tau, boundary_mask)
        if not closed.touches_boundary[closed.label_at(x0)]:
            strict = sublevel_components(V, tau, boundary_mask, strict=True)
            omega0 = strict.component(strict.label_at(x0))
            eta = float(V[omega0.boundary].min())
            if eta > zero_tol and not np.any(omega0.mask & others):
                return IsolatingSubdomain(omega0, eta, m, tau)
        m *= 2
    raise ZeroTouchesBoundary("the zero component of x0 meets the boundary at every threshold")
