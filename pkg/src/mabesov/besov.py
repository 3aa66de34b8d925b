"""Besov norms built from the Littlewood-Paley blocks of an approximation to the identity."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .approx_id import build_stack
from .errors import AdmissibilityError, DegenerateInputError, ParameterError, StructuralError
from .measure_grid import inner, lp_norm

__all__ = [
    "BesovParams",
    "LPDecomposition",
    "conjugate",
    "check_admissible",
    "decompose",
    "besov_norm",
    "lq_norm",
    "column_norm_check",
    "norm_equivalence",
    "equivalence_experiment",
    "duality_pairing_check",
    "lp_frame_constants",
    "lp_synthesis",
    "besov_csv",
    "equivalence_csv",
]


def _exponent(v, name):
    v = float(v)
    if not v >= 1:
        raise ParameterError(f"{name} must lie in [1, inf], got {v}")
    return v


@dataclass(frozen=True)
class BesovParams:
    alpha: float
    p: float
    q: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "p", _exponent(self.p, "p"))
        object.__setattr__(self, "q", _exponent(self.q, "q"))

    def dual(self) -> "BesovParams":
        """``(-alpha, p', q')``."""
        return BesovParams(-self.alpha, conjugate(self.p), conjugate(self.q))


def conjugate(p: float) -> float:
    p = float(p)
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


def check_admissible(stack, params: BesovParams, eps=None):
    """Reject ``|alpha| >= eps / 4``; ``eps`` defaults to the stack's fitted exponent."""
    eps = stack.eps_fit if eps is None else eps
    if not abs(params.alpha) < eps / 4:
        raise AdmissibilityError(
            f"|alpha| = {abs(params.alpha):.6g} is not below eps/4 = {eps / 4:.6g} (measured eps = {eps:.6g})")


def lq_norm(values, q) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0:
        return 0.0
    if math.isinf(q):
        return float(v.max())
    top = v.max()
    if top == 0:
        return 0.0
    return float(top * np.sum((v / top) ** q) ** (1.0 / q))


@dataclass
class LPDecomposition:
    """Blocks ``D_k f`` with the weighted block norms ``2**(k alpha) ||D_k f||_p``."""

    blocks: dict
    params: BesovParams
    block_norms: dict
    norm: float

    def recompute(self, grid) -> float:
        a, p, q = self.params.alpha, self.params.p, self.params.q
        return lq_norm([2.0 ** (k * a) * lp_norm(grid, b, p) for k, b in sorted(self.blocks.items())], q)


def decompose(stack, f, params: BesovParams, check=True) -> LPDecomposition:
    if check:
        check_admissible(stack, params)
    f = np.asarray(f, dtype=float)
    blocks = stack.blocks(f)
    bn = {k: 2.0 ** (k * params.alpha) * lp_norm(stack.grid, b, params.p) for k, b in blocks.items()}
    return LPDecomposition(blocks, params, bn, lq_norm([bn[k] for k in stack.scales], params.q))


def besov_norm(stack, f, params: BesovParams, check=True) -> float:
    """``l^q`` over the stack's scales of ``2**(k alpha) ||D_k f||_{L^p(mu)}``."""
    if check:
        check_admissible(stack, params)
    a, p = params.alpha, params.p
    return lq_norm([2.0 ** (k * a) * lp_norm(stack.grid, stack.D(k, f), p) for k in stack.scales], params.q)


def _sample_nodes(grid, points):
    return [grid.nearest_node(x) for x in points]


def default_column_points(pot, count=5):
    """Fixed physical points spread over the central half of the box."""
    c = pot.center
    half = pot.widths / 4
    ts = np.linspace(-1, 1, count)
    if pot.dim == 1:
        return [c + t * half for t in ts]
    return [c + np.array([t, s]) * half for t in ts[::2] for s in ts[::2]]


@dataclass
class ColumnNormReport:
    """Rows ``(k, node, ratio)`` and their maximum."""

    rows: list
    max_ratio: float

    def max_over(self, scales) -> float:
        vals = [r for k, _, r in self.rows if k in scales]
        return max(vals) if vals else float("nan")


def column_norm_check(stack, params: BesovParams, samples=None, scales=None, points=None) -> ColumnNormReport:
    """Ratios ``||D_k(x, .)||_B / (2**(k alpha) V_k(x)**(1/p - 1))``.

    Base points are fixed physical locations (``points``, default
    :func:`default_column_points` or ``samples`` of them) so that runs at two
    resolutions look at the same columns. Only points inside the scale's
    interior mask are used.
    """
    check_admissible(stack, params)
    grid = stack.grid
    pot = grid.potential
    if points is None:
        points = default_column_points(pot, 5 if samples is None else samples)
    nodes = _sample_nodes(grid, points)
    scales = stack.scales if scales is None else [k for k in scales if k in stack.D_matrices]
    expo = 1.0 / params.p - 1.0
    rows = []
    for k in scales:
        D = kernels.dense(stack.D_matrices[k])
        V = stack.V(k)
        interior = grid.interior_mask(k)
        for x in nodes:
            if not interior[x]:
                continue
            col = D[x]
            num = besov_norm(stack, col, params, check=False)
            den = 2.0 ** (k * params.alpha) * V[x] ** expo
            rows.append((k, x, float(num / den)))
    return ColumnNormReport(rows, max((r for _, _, r in rows), default=float("nan")))


def _same_grid(stackA, stackB):
    ga, gb = stackA.grid, stackB.grid
    if ga is gb:
        return
    if ga.nodes.shape != gb.nodes.shape or not np.array_equal(ga.nodes, gb.nodes) or not np.array_equal(ga.weights, gb.weights):
        raise StructuralError("the two stacks live on different grids")


def norm_equivalence(stackA, stackB, f, params: BesovParams):
    """``(||f||_A / ||f||_B, ||f||_B / ||f||_A)``."""
    _same_grid(stackA, stackB)
    check_admissible(stackA, params)
    check_admissible(stackB, params)
    a = besov_norm(stackA, f, params, check=False)
    b = besov_norm(stackB, f, params, check=False)
    if a == 0 or b == 0:
        raise DegenerateInputError("f has zero Besov norm for one of the stacks")
    return a / b, b / a


def alternate_stack(stack, r1=0.8):
    """Stack on the same grid and scales with plateau ``r1`` instead of the default profile."""
    from .approx_id import BumpProfile

    grid = stack.grid
    return build_stack(grid, grid.potential, stack.k_min, stack.k_max,
                       profile=BumpProfile(r1=r1, r2=stack.profile.r2), a0=stack.a0)


@dataclass
class EquivalenceReport:
    rows: list
    K: float


def equivalence_experiment(stackA, stackB, params: BesovParams, ensemble=50, seed=0) -> EquivalenceReport:
    """Ratios over an ensemble of in-band functions of ``stackA``; ``K`` is the largest ratio."""
    rng = np.random.default_rng(seed)
    fs = stackA.in_band_noise(rng, count=ensemble)
    rows = []
    for s in range(ensemble):
        ab, ba = norm_equivalence(stackA, stackB, fs[:, s], params)
        rows.append((s, ab, ba))
    return EquivalenceReport(rows, max(max(ab, ba) for _, ab, ba in rows))


@dataclass
class DualityReport:
    constant: float
    ratios: np.ndarray
    lp_constant: float


def duality_pairing_check(stack, params: BesovParams, ensemble_size=100, seed=0) -> DualityReport:
    """Largest ``|<f, g>| / (||f||_{alpha,p,q} ||g||_{-alpha,p',q'})`` over in-band pairs.

    Pairs are correlated, ``g = c f + sqrt(1 - c**2) f'`` with ``c`` uniform on
    ``[-1, 1]``, so the ensemble covers aligned as well as generic pairs.
    ``lp_constant`` is the largest ``||f||_2**2 / ||f||_{0,2,2}**2`` over the
    same ``f``, the lower Littlewood-Paley frame constant.
    """
    check_admissible(stack, params)
    dual = params.dual()
    rng = np.random.default_rng(seed)
    F = stack.in_band_noise(rng, count=ensemble_size)
    G = stack.in_band_noise(rng, count=ensemble_size)
    c = rng.uniform(-1.0, 1.0, ensemble_size)
    lp = BesovParams(0.0, 2, 2)
    ratios, frame = [], []
    for s in range(ensemble_size):
        f = F[:, s]
        g = c[s] * f + math.sqrt(1 - c[s] ** 2) * G[:, s]
        den = besov_norm(stack, f, params, check=False) * besov_norm(stack, g, dual, check=False)
        if den == 0:
            continue
        ratios.append(abs(inner(stack.grid, f, g)) / den)
        frame.append(lp_norm(stack.grid, f, 2) ** 2 / besov_norm(stack, f, lp, check=False) ** 2)
    ratios = np.asarray(ratios)
    return DualityReport(float(ratios.max()), ratios, float(max(frame)))


def lp_frame_constants(stack, ensemble=20, seed=0):
    """``(upper, lower)`` for ``sum_k ||D_k f||_2**2`` against ``||f||_2**2``.

    ``upper`` is the exact bound ``||sum_k D_k D_k||_2``; ``lower`` is the
    smallest quotient over an ensemble of in-band functions.
    """
    from .calderon import op_norm

    grid = stack.grid
    w = stack.weights
    Q = sum(kernels.compose(stack.D_matrices[k], w, stack.D_matrices[k]) for k in stack.scales)
    upper = op_norm(grid, Q, 2)
    band = stack.in_band_noise(np.random.default_rng(seed), count=ensemble)
    params = BesovParams(0.0, 2, 2)
    lower = min(besov_norm(stack, band[:, s], params, check=False) ** 2 / lp_norm(grid, band[:, s], 2) ** 2
                for s in range(ensemble))
    return float(upper), float(lower)


def lp_synthesis(stack, gk: dict, params: BesovParams):
    """``g = sum_k D_k g_k`` and ``||g||_B / ||{2**(k alpha) ||g_k||_p}||_{l^q}``."""
    check_admissible(stack, params)
    grid = stack.grid
    seq = []
    g = np.zeros(grid.size)
    for k, v in sorted(gk.items()):
        if k not in stack.D_matrices:
            raise ParameterError(f"scale {k} is outside the stack's range {stack.k_min}..{stack.k_max}")
        v = np.asarray(v, dtype=float)
        g += stack.D(k, v)
        seq.append(2.0 ** (k * params.alpha) * lp_norm(grid, v, params.p))
    den = lq_norm(seq, params.q)
    if den == 0:
        raise DegenerateInputError("every g_k vanishes")
    return g, besov_norm(stack, g, params, check=False) / den


def _num(v):
    v = float(v)
    return "inf" if math.isinf(v) else repr(v)


def besov_csv(decomps) -> str:
    """Rows ``alpha,p,q,k,block_norm,total_norm`` for a list of decompositions."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "p", "q", "k", "block_norm", "total_norm"])
    for d in decomps:
        for k in sorted(d.block_norms):
            w.writerow([_num(d.params.alpha), _num(d.params.p), _num(d.params.q), k,
                        _num(d.block_norms[k]), _num(d.norm)])
    return buf.getvalue()


def equivalence_csv(report: EquivalenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "ratio_ab", "ratio_ba"])
    for s, ab, ba in report.rows:
        w.writerow([s, _num(ab), _num(ba)])
    return buf.getvalue()
