"""Tensor grids carrying the Monge-Ampere measure as midpoint quadrature weights."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, StrictConvexityError
from .geometry import ConvexPotential, ma_density, rho_bar_pairs

__all__ = [
    "DiscretizedDomain",
    "GridFunction",
    "build_grid",
    "integrate",
    "lp_norm",
    "inner",
    "read_grid_function",
    "write_grid_function",
]


@dataclass(eq=False)
class DiscretizedDomain:
    """Cell-midpoint nodes (row-major) and their ``mu`` weights.

    ``interior_mask_per_scale`` caches, per scale ``k``, the nodes whose
    three-hop neighbourhood under ``rho_bar < 2 * 2**-k`` avoids the
    boundary layer. That is the footprint of a row of ``S_k``.
    """

    potential: ConvexPotential
    resolution: int
    nodes: np.ndarray
    weights: np.ndarray
    spacing: np.ndarray
    interior_mask_per_scale: dict = field(default_factory=dict)
    _masks: dict = field(default_factory=dict, repr=False)
    _pairs: tuple | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def cell_size(self) -> float:
        return float(np.max(self.spacing))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def multi_index(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1)

    @property
    def boundary_mask(self) -> np.ndarray:
        mi = self.multi_index
        return np.any((mi == 0) | (mi == self.resolution - 1), axis=1)

    @property
    def center_index(self) -> int:
        return int(np.ravel_multi_index((self.resolution // 2,) * self.dim, self.shape))

    def nearest_node(self, x) -> int:
        x = self.potential.as_points(x)[0]
        return int(np.argmin(np.sum((self.nodes - x) ** 2, axis=1)))

    def pairs(self, cutoff: float):
        """Node pairs with ``rho_bar < cutoff`` as ``(rows, cols, values)``, cached."""
        if self._pairs is None or self._pairs[0] < cutoff:
            self._pairs = (cutoff, rho_bar_pairs(self.potential, self.nodes, cutoff))
        rows, cols, vals = self._pairs[1]
        if self._pairs[0] == cutoff:
            return rows, cols, vals
        keep = vals < cutoff
        return rows[keep], cols[keep], vals[keep]

    def interior_mask(self, k: int, hops: int = 3, reach: float = 2.0) -> np.ndarray:
        """Nodes more than ``hops`` steps of ``rho_bar < reach * 2**-k`` from the boundary."""
        key = (k, hops, reach)
        if key not in self._masks:
            rows, cols, _ = self.pairs(reach * 2.0**-k)
            adj = sp.csr_array((np.ones(rows.size), (rows, cols)), shape=(self.size, self.size))
            hit = self.boundary_mask.astype(float)
            for _ in range(hops):
                hit = np.minimum(adj @ hit, 1.0)
            mask = hit == 0
            self._masks[key] = mask
            if hops == 3 and reach == 2.0:
                self.interior_mask_per_scale[k] = mask
        return self._masks[key]


@dataclass
class GridFunction:
    """Values aligned with the nodes of a grid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def build_grid(pot: ConvexPotential, resolution: int) -> DiscretizedDomain:
    """Tensor grid of cell midpoints with weights ``det D^2 phi(node) * cell volume``."""
    resolution = int(resolution)
    if resolution < 16:
        raise ParameterError(f"resolution must be at least 16, got {resolution}")
    lo = np.asarray(pot.lower)
    hi = np.asarray(pot.upper)
    spacing = (hi - lo) / resolution
    axes = [lo[a] + spacing[a] * (np.arange(resolution) + 0.5) for a in range(pot.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    dens = np.atleast_1d(ma_density(pot, nodes))
    if not pot.allow_degenerate and np.any(dens <= 0):
        raise StrictConvexityError("non-positive Monge-Ampere density at a grid node")
    weights = dens * float(np.prod(spacing))
    return DiscretizedDomain(pot, resolution, nodes, weights, spacing)


def _values(grid, f):
    v = np.asarray(f, dtype=float)
    if v.shape != (grid.size,):
        raise ParameterError(f"grid function of length {v.shape} on a grid of {grid.size} nodes")
    return v


def integrate(grid: DiscretizedDomain, f) -> float:
    """``int f dmu`` as the weighted node sum."""
    return float(np.dot(_values(grid, f), grid.weights))


def inner(grid: DiscretizedDomain, f, g) -> float:
    return float(np.dot(_values(grid, f) * grid.weights, _values(grid, g)))


def lp_norm(grid: DiscretizedDomain, f, p) -> float:
    """Weighted ``L^p(mu)`` norm; ``p = inf`` is the max over nodes."""
    p = float(p)
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    v = np.abs(_values(grid, f))
    if np.isinf(p):
        return float(v.max(initial=0.0))
    if p == 1:
        return float(np.dot(v, grid.weights))
    if p == 2:
        return float(np.sqrt(np.dot(v * v, grid.weights)))
    scale = v.max(initial=0.0)
    if scale == 0:
        return 0.0
    return float(scale * np.dot((v / scale) ** p, grid.weights) ** (1.0 / p))


def write_grid_function(f, fh=None) -> str:
    """CSV with columns ``node_index,value``; returns the text if ``fh`` is None."""
    buf = io.StringIO(newline="") if fh is None else fh
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node_index", "value"])
    for i, v in enumerate(np.asarray(f, dtype=float)):
        writer.writerow([i, repr(float(v))])
    return buf.getvalue() if fh is None else ""


def read_grid_function(fh, size=None) -> GridFunction:
    """Parse the ``node_index,value`` CSV; missing indices are an error."""
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    reader = csv.reader(line for line in fh if not line.startswith("#"))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["node_index", "value"]:
        raise ParameterError("grid function CSV needs the header 'node_index,value'")
    pairs = [(int(r[0]), float(r[1])) for r in reader if r]
    n = size if size is not None else (max(i for i, _ in pairs) + 1 if pairs else 0)
    values = np.full(n, np.nan)
    for i, v in pairs:
        if not 0 <= i < n:
            raise ParameterError(f"node index {i} out of range")
        values[i] = v
    if np.isnan(values).any():
        raise ParameterError("grid function CSV is missing node indices")
    return GridFunction(values)
