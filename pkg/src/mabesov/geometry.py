"""Convex potentials, the symmetrized Bregman quasi-distance and its sections.

A strictly convex potential ``phi`` on an axis-aligned box generates

* the Bregman gap ``rho(x, y) = phi(y) - phi(x) - grad phi(x) . (y - x)``,
* its symmetrization ``rho_bar = (rho(x, y) + rho(y, x)) / 2``,
* sections ``S(x, t) = {y : rho_bar(x, y) < t}``, and
* the Monge-Ampere density ``det D^2 phi``.

Everything downstream (kernels, norms, operators) is built from these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DomainError,
    InsufficientDataError,
    ParameterError,
    StrictConvexityError,
)

__all__ = [
    "ConvexPotential",
    "SectionConstants",
    "POTENTIALS",
    "make_potential",
    "check_derivatives",
    "rho",
    "rho_bar",
    "rho_matrix",
    "rho_bar_matrix",
    "rho_bar_pairs",
    "ma_density",
    "section_members",
    "section_measure",
    "estimate_a0",
    "estimate_constants",
    "engulfing_violations",
]

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class ConvexPotential:
    """A smooth convex function on a box, with vectorized derivatives.

    ``phi``, ``grad`` and ``hess`` take an ``(m, dim)`` array and return
    arrays of shape ``(m,)``, ``(m, dim)`` and ``(m, dim, dim)``.
    """

    dim: int
    phi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    name: str = "custom"
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParameterError(f"dimension must be 1 or 2, got {self.dim}")
        lo = tuple(float(v) for v in np.broadcast_to(self.lower, (self.dim,)))
        hi = tuple(float(v) for v in np.broadcast_to(self.upper, (self.dim,)))
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ParameterError(f"empty domain box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def as_points(self, x) -> np.ndarray:
        """Coerce ``x`` to an ``(m, dim)`` float array."""
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(1, -1) if pts.shape[0] == self.dim else pts.reshape(-1, 1)
        if pts.shape[-1] != self.dim:
            raise ParameterError(f"points of dimension {pts.shape[-1]} for a {self.dim}D potential")
        return pts

    def contains(self, x) -> np.ndarray:
        pts = self.as_points(x)
        lo = np.asarray(self.lower) - _DOMAIN_SLACK
        hi = np.asarray(self.upper) + _DOMAIN_SLACK
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def require_inside(self, x) -> np.ndarray:
        pts = self.as_points(x)
        if not np.all(self.contains(pts)):
            raise DomainError(f"point(s) outside the domain box {self.lower}..{self.upper}")
        return pts

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.upper) + np.asarray(self.lower))


@dataclass
class SectionConstants:
    """Empirical structural constants of the section geometry."""

    a0: float
    theta: float
    doubling: float
    eps_reg: float
    sample_count: int
    details: dict = field(default_factory=dict)

    def as_rows(self):
        return [
            ("a0", self.a0),
            ("theta", self.theta),
            ("doubling", self.doubling),
            ("eps_reg", self.eps_reg),
            ("sample_count", self.sample_count),
        ]


# -- potential catalogue ------------------------------------------------------

def _quadratic(dim, lower, upper, allow_degenerate=False):
    def phi(x):
        return 0.5 * np.sum(x * x, axis=1)

    def grad(x):
        return np.array(x, dtype=float, copy=True)

    def hess(x):
        return np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim)).copy()

    return ConvexPotential(dim, phi, grad, hess, lower, upper, "quadratic", allow_degenerate)


def _quartic_reg(dim, lower, upper, allow_degenerate=False):
    def phi(x):
        return np.sum(0.5 * x**2 + x**4 / 12.0, axis=1)

    def grad(x):
        return x + x**3 / 3.0

    def hess(x):
        out = np.zeros((x.shape[0], dim, dim))
        idx = np.arange(dim)
        out[:, idx, idx] = 1.0 + x**2
        return out

    return ConvexPotential(dim, phi, grad, hess, lower, upper, "quartic_reg", allow_degenerate)


def _anisotropic2d(dim, lower, upper, allow_degenerate=False):
    if dim != 2:
        raise ParameterError("anisotropic2d is a 2D potential")

    def phi(x):
        return 0.5 * x[:, 0] ** 2 + 0.5 * x[:, 1] ** 2 + x[:, 1] ** 4 / 12.0

    def grad(x):
        return np.stack([x[:, 0], x[:, 1] + x[:, 1] ** 3 / 3.0], axis=1)

    def hess(x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0 + x[:, 1] ** 2
        return out

    return ConvexPotential(2, phi, grad, hess, lower, upper, "anisotropic2d", allow_degenerate)


def _quartic_pure(dim, lower, upper, allow_degenerate=False):
    if not allow_degenerate:
        raise StrictConvexityError(
            "quartic_pure has a degenerate Hessian at the origin; pass allow_degenerate=True"
        )

    def phi(x):
        return np.sum(x**4, axis=1)

    def grad(x):
        return 4.0 * x**3

    def hess(x):
        out = np.zeros((x.shape[0], dim, dim))
        idx = np.arange(dim)
        out[:, idx, idx] = 12.0 * x**2
        return out

    return ConvexPotential(dim, phi, grad, hess, lower, upper, "quartic_pure", True)


POTENTIALS = {
    "quadratic": (_quadratic, 1),
    "quartic_reg": (_quartic_reg, 1),
    "anisotropic2d": (_anisotropic2d, 2),
    "quartic_pure": (_quartic_pure, 1),
}


def make_potential(name, dim=None, lower=None, upper=None, allow_degenerate=False):
    """Build a catalogue potential by name.

    The default box is ``[-1, 1]^dim``.
    """
    try:
        factory, default_dim = POTENTIALS[name]
    except KeyError:
        raise ParameterError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}") from None
    dim = default_dim if dim is None else int(dim)
    lower = -1.0 if lower is None else lower
    upper = 1.0 if upper is None else upper
    return factory(dim, lower, upper, allow_degenerate=allow_degenerate)


def check_derivatives(pot: ConvexPotential, samples=50, seed=0, step=1e-4):
    """Max relative mismatch of ``grad``/``hess`` against centered differences of ``phi``."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(pot.lower) + 2 * step
    hi = np.asarray(pot.upper) - 2 * step
    pts = lo + (hi - lo) * rng.random((samples, pot.dim))
    g = pot.grad(pts)
    H = pot.hess(pts)
    g_fd = np.zeros_like(g)
    H_fd = np.zeros_like(H)
    eye = np.eye(pot.dim) * step
    for a in range(pot.dim):
        g_fd[:, a] = (pot.phi(pts + eye[a]) - pot.phi(pts - eye[a])) / (2 * step)
        H_fd[:, :, a] = (pot.grad(pts + eye[a]) - pot.grad(pts - eye[a])) / (2 * step)
    g_err = np.max(np.abs(g - g_fd) / np.maximum(np.abs(g), 1.0))
    H_err = np.max(np.abs(H - H_fd) / np.maximum(np.abs(H), 1.0))
    return float(max(g_err, H_err))


# -- Bregman gap and its symmetrization ---------------------------------------

def rho_matrix(pot: ConvexPotential, X, Y) -> np.ndarray:
    """``out[i, j] = rho(X[i], Y[j])``; exactly zero where ``X[i] == Y[j]``."""
    X = pot.as_points(X)
    Y = pot.as_points(Y)
    phiX, phiY, gX = pot.phi(X), pot.phi(Y), pot.grad(X)
    out = phiY[None, :] - phiX[:, None]
    for a in range(pot.dim):
        out -= gX[:, a, None] * (Y[None, :, a] - X[:, a, None])
    return out


def rho_bar_matrix(pot: ConvexPotential, X, Y) -> np.ndarray:
    """Symmetrized gap; ``rho_bar_matrix(X, Y) == rho_bar_matrix(Y, X).T`` bitwise."""
    out = 0.5 * (rho_matrix(pot, X, Y) + rho_matrix(pot, Y, X).T)
    np.maximum(out, 0.0, out=out)
    return out


def rho(pot: ConvexPotential, x, y) -> float:
    """Bregman gap of ``phi`` between two points of the domain."""
    x = pot.require_inside(x)
    y = pot.require_inside(y)
    return float(rho_matrix(pot, x, y)[0, 0])


def rho_bar(pot: ConvexPotential, x, y) -> float:
    x = pot.require_inside(x)
    y = pot.require_inside(y)
    return float(rho_bar_matrix(pot, x, y)[0, 0])


def rho_bar_pairs(pot: ConvexPotential, nodes, cutoff, block=256):
    """All node pairs with ``rho_bar < cutoff`` as COO triplets ``(rows, cols, values)``.

    The diagonal is always included (value 0).
    """
    nodes = pot.as_points(nodes)
    n = nodes.shape[0]
    rows, cols, vals = [], [], []
    for start in range(0, n, block):
        stop = min(start + block, n)
        rb = rho_bar_matrix(pot, nodes[start:stop], nodes)
        r, c = np.nonzero(rb < cutoff)
        rows.append(r + start)
        cols.append(c)
        vals.append(rb[r, c])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def ma_density(pot: ConvexPotential, x) -> float | np.ndarray:
    """Monge-Ampere density ``det D^2 phi``; scalar for a single point."""
    pts = pot.require_inside(x)
    det = np.linalg.det(pot.hess(pts))
    if not pot.allow_degenerate and np.any(det <= 0):
        raise StrictConvexityError("Hessian determinant is not positive")
    if not pot.allow_degenerate:
        # Positive determinant alone misses negative-definite 2x2 Hessians.
        if pot.dim == 2 and np.any(pot.hess(pts)[:, 0, 0] <= 0):
            raise StrictConvexityError("Hessian is not positive definite")
    det = np.maximum(det, 0.0)
    single = np.ndim(x) <= 1 and pts.shape[0] == 1
    return float(det[0]) if single else det


# -- sections on a grid -------------------------------------------------------

def section_members(grid, pot: ConvexPotential, x, t) -> np.ndarray:
    """Indices of grid nodes ``j`` with ``rho_bar(x, node_j) < t``."""
    if not t > 0:
        raise ParameterError(f"section height must be positive, got {t}")
    x = pot.require_inside(x)
    return np.flatnonzero(rho_bar_matrix(pot, x, grid.nodes)[0] < t)


def section_measure(grid, pot: ConvexPotential, x, t) -> float:
    return float(np.sum(grid.weights[section_members(grid, pot, x, t)]))


def _boundary_rho_scale(grid, pot):
    c = grid.nodes[[grid.center_index]]
    return float(np.min(rho_bar_matrix(pot, c, grid.nodes[grid.boundary_mask])))


def estimate_a0(grid, pot: ConvexPotential, samples=2000, seed=0) -> float:
    """Largest sampled ratio ``rho_bar(x, y) / (rho_bar(x, z) + rho_bar(z, y))``."""
    rng = np.random.default_rng(seed)
    n = grid.size
    ix, iy, iz = (rng.integers(0, n, samples) for _ in range(3))
    keep = ix != iy
    ix, iy, iz = ix[keep], iy[keep], iz[keep]
    X, Y, Z = grid.nodes[ix], grid.nodes[iy], grid.nodes[iz]

    def pair(P, Q):
        return 0.5 * (_rho_rows(pot, P, Q) + _rho_rows(pot, Q, P))

    num = pair(X, Y)
    den = pair(X, Z) + pair(Z, Y)
    ratio = num / np.maximum(den, np.finfo(float).tiny)
    return float(max(1.0, np.max(ratio)))


def _rho_rows(pot, P, Q):
    """Elementwise ``rho(P[m], Q[m])``."""
    return pot.phi(Q) - pot.phi(P) - np.sum(pot.grad(P) * (Q - P), axis=1)


def estimate_constants(grid, pot: ConvexPotential, samples=2000, seed=0, min_members=None):
    """Estimate the quasi-triangle, engulfing, doubling and regularity constants.

    Parameters
    ----------
    grid : DiscretizedDomain
    pot : ConvexPotential
    samples : int
        Number of random draws per constant (at least 100).
    seed : int
    min_members : int, optional
        Smallest section (in nodes) accepted by the doubling estimate.
        Defaults to 200 nodes in 1D and 50 in 2D, capped at ``3/8`` of the
        nodes per axis (1D) or a sixteenth of all nodes (2D) on coarse grids.

    Returns
    -------
    SectionConstants
    """
    if samples < 100:
        raise ParameterError(f"need at least 100 samples, got {samples}")
    if min_members is None:
        min_members = min(200, 3 * grid.resolution // 8) if pot.dim == 1 else min(50, grid.size // 16)
    rng = np.random.default_rng(seed)
    a0 = estimate_a0(grid, pot, samples, seed)

    nodes, w = grid.nodes, grid.weights
    boundary = grid.boundary_mask
    t_hi = _boundary_rho_scale(grid, pot) / 4.0
    t_lo = t_hi / 64.0

    # engulfing: smallest tau with S(y, t) inside S(x, tau t), for x in S(y, t)
    taus = []
    for s in range(samples):
        iy = rng.integers(grid.size)
        t = math.exp(rng.uniform(math.log(t_lo), math.log(t_hi)))
        row = rho_bar_matrix(pot, nodes[[iy]], nodes)[0]
        members = np.flatnonzero(row < t)
        if members.size < 3 or boundary[members].any() or boundary[row < 2 * t].any():
            continue
        if s % 2 == 0:
            ix = members[np.argmax(row[members])]
        else:
            ix = rng.choice(members)
        rx = rho_bar_matrix(pot, nodes[[ix]], nodes[members])[0]
        taus.append(np.max(rx) / t)
    if len(taus) < 10:
        raise InsufficientDataError(f"only {len(taus)} interior sections for the engulfing constant")
    # strict inclusion in the open section S(x, theta t) at the maximizer
    theta = float(max(1.0, np.max(taus)) * (1 + 1e-9))

    ratios = []
    lo_c = grid.nodes.min(axis=0)
    hi_c = grid.nodes.max(axis=0)
    quarter = 0.25 * (hi_c - lo_c)
    central = np.all(np.abs(nodes - grid.nodes[grid.center_index]) <= quarter + 1e-12, axis=1)
    central_idx = np.flatnonzero(central)
    for _ in range(samples):
        ix = rng.choice(central_idx)
        t = math.exp(rng.uniform(math.log(t_hi / 8.0), math.log(t_hi)))
        row = rho_bar_matrix(pot, nodes[[ix]], nodes)[0]
        small = row < t
        big = row < 2 * t
        if small.sum() < min_members or boundary[big].any():
            continue
        ratios.append(w[big].sum() / w[small].sum())
    if len(ratios) < 10:
        raise InsufficientDataError(f"only {len(ratios)} interior sections for the doubling constant")
    doubling = float(np.max(ratios))

    eps_reg, n_reg = _fit_regularity(grid, pot, samples, rng)
    if n_reg < 10:
        raise InsufficientDataError(f"only {n_reg} triples for the regularity fit")

    return SectionConstants(
        a0=a0,
        theta=theta,
        doubling=doubling,
        eps_reg=eps_reg,
        sample_count=samples,
        details={"engulfing_samples": len(taus), "doubling_samples": len(ratios), "regularity_samples": n_reg},
    )


def _fit_regularity(grid, pot, samples, rng):
    """Fit ``|rho_bar(x,y) - rho_bar(x',y)| ~ rho_bar(x,x')^e (rho_bar(x,y)+rho_bar(x',y))^(1-e)``.

    Two-stage least squares; the second stage drops residuals above the
    95th percentile of the first.
    """
    nodes = grid.nodes
    xs, ys = [], []
    for _ in range(samples):
        ix, iy = rng.integers(grid.size, size=2)
        row = rho_bar_matrix(pot, nodes[[ix]], nodes)[0]
        if row[iy] <= 0:
            continue
        level = row[iy] * math.exp(rng.uniform(math.log(1e-4), math.log(1e-1)))
        cand = np.flatnonzero((row > 0) & (row < level))
        if cand.size == 0:
            continue
        ixp = rng.choice(cand)
        a = row[ixp]
        d_xy = row[iy]
        d_xpy = rho_bar_matrix(pot, nodes[[ixp]], nodes[[iy]])[0, 0]
        delta = abs(d_xy - d_xpy)
        b = d_xy + d_xpy
        if delta <= 0 or b <= 0:
            continue
        xs.append(math.log(a) - math.log(b))
        ys.append(math.log(delta) - math.log(b))
    if len(xs) < 10:
        return float("nan"), len(xs)
    X = np.asarray(xs)
    Y = np.asarray(ys)
    slope, icpt = np.polyfit(X, Y, 1)
    resid = np.abs(Y - (slope * X + icpt))
    keep = resid <= np.percentile(resid, 95)
    slope, _ = np.polyfit(X[keep], Y[keep], 1)
    return float(np.clip(slope, 1e-6, 1.0)), len(xs)


def engulfing_violations(grid, pot: ConvexPotential, theta, samples=500, seed=1) -> int:
    """Count sampled ``x in S(y, t)`` with ``S(y, t)`` not inside ``S(x, theta t)``.

    Only sections with ``S(y, theta t)`` clear of the boundary are tested.
    """
    rng = np.random.default_rng(seed)
    nodes, boundary = grid.nodes, grid.boundary_mask
    t_hi = _boundary_rho_scale(grid, pot) / 4.0
    bad = 0
    for _ in range(samples):
        iy = rng.integers(grid.size)
        t = math.exp(rng.uniform(math.log(t_hi / 64), math.log(t_hi)))
        row = rho_bar_matrix(pot, nodes[[iy]], nodes)[0]
        members = np.flatnonzero(row < t)
        if members.size == 0 or boundary[row < theta * t].any():
            continue
        ix = rng.choice(members)
        rx = rho_bar_matrix(pot, nodes[[ix]], nodes[members])[0]
        bad += int(np.any(rx >= theta * t))
    return bad
