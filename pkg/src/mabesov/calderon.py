"""Operator algebra of the Littlewood-Paley blocks.

On a finite scale range the blocks telescope to ``P = S_kmax - S_{kmin-1}``,
so ``sum_{j,k} D_j D_k = P P =: I_range`` plays the role of the identity.
``T_N`` keeps the products with ``|j - k| <= N`` and ``R_N = I_range - T_N``
the rest. When ``||R_N||_2 < 1`` the Neumann series ``sum_m R_N^m`` inverts
``I - R_N`` and yields the discrete reproducing formula

    f  ~  sum_k T_N^{-1} D_k^N D_k f,   D_k^N = sum_{|i| <= N} D_{k+i}.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DegenerateInputError, DivergenceError, InsufficientDataError, ParameterError
from .measure_grid import lp_norm

__all__ = [
    "OperatorNormTable",
    "CalderonOperator",
    "op_norm",
    "almost_orthogonality_table",
    "assemble_TN",
    "band_identity",
    "neumann_series",
    "apply_TN_inverse",
    "reproduce",
    "find_N0",
    "reproduction_sweep",
]

POWER_ITERATIONS = 200
POWER_RTOL = 1e-8


def op_norm(grid, A, p, seed=0) -> float:
    """Norm of the kernel operator ``A`` on ``L^p(mu)`` for ``p`` in ``{1, 2, inf}``.

    ``p = 2`` uses power iteration on the normal operator in the weighted
    inner product, started from a fixed-seed vector.
    """
    p = float(p)
    w = grid.weights
    if p == 1:
        col = abs(A).T @ w if sp.issparse(A) else np.abs(A).T @ w
        return float(np.max(col, initial=0.0))
    if np.isinf(p):
        row = abs(A) @ w if sp.issparse(A) else np.abs(A) @ w
        return float(np.max(row, initial=0.0))
    if p != 2:
        raise ParameterError(f"operator norms are computed for p in {{1, 2, inf}} only, got {p}")
    sw = np.sqrt(w)
    B = sp.diags_array(sw) @ A @ sp.diags_array(sw) if sp.issparse(A) else sw[:, None] * A * sw[None, :]
    Bt = B.T
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_ITERATIONS):
        u = Bt @ (B @ v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 0.0
        v = u / new
        if abs(new - lam) <= POWER_RTOL * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


@dataclass
class OperatorNormTable:
    """``entries[(j, k, p)] = ||D_j D_k||_{p -> p}`` with a geometric envelope fit.

    ``fitted_eps`` is the least-squares decay rate of ``log2(entry)`` in
    ``|j - k|`` over ``|j - k| >= 2``; ``fitted_C`` is the smallest constant
    placing every fitted pair under ``C 2**(-|j-k| eps)``. Both are keyed by
    ``p`` in ``fits``; the attributes hold the values for the first ``p``.
    """

    entries: dict
    fitted_eps: float
    fitted_C: float
    fits: dict = field(default_factory=dict)

    def envelope_violations(self, p, slack=0.10) -> float:
        """Fraction of all pairs exceeding the envelope by more than ``slack``."""
        eps, C = self.fits[p]
        keys = [key for key in self.entries if key[2] == p]
        bad = sum(self.entries[key] > (1 + slack) * C * 2.0 ** (-abs(key[0] - key[1]) * eps) for key in keys)
        return bad / len(keys)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "k", "p", "norm"])
        for (j, k, p), v in sorted(self.entries.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1])):
            w.writerow([j, k, _p_label(p), repr(float(v))])
        return buf.getvalue()


def _p_label(p):
    return "inf" if np.isinf(p) else repr(float(p)) if p != int(p) else str(int(p))


def almost_orthogonality_table(stack, p=(1, 2, np.inf)) -> OperatorNormTable:
    """All ``||D_j D_k||_p`` over the stack's scales, with the decay fit per ``p``."""
    ps = [p] if np.isscalar(p) else list(p)
    if len(stack.scales) < 4:
        raise InsufficientDataError(f"need at least 4 scales, got {len(stack.scales)}")
    grid = stack.grid
    w = stack.weights
    entries = {}
    for j in stack.scales:
        for k in stack.scales:
            prod = kernels.dense(kernels.compose(stack.D_matrices[j], w, stack.D_matrices[k]))
            for q in ps:
                entries[(j, k, float(q))] = op_norm(grid, prod, q)
    fits = {}
    for q in ps:
        q = float(q)
        pts = [(abs(j - k), v) for (j, k, qq), v in entries.items() if qq == q and abs(j - k) >= 2 and v > 0]
        d = np.array([a for a, _ in pts], dtype=float)
        y = np.log2([v for _, v in pts])
        slope, _ = np.polyfit(d, y, 1)
        eps = float(-slope)
        C = float(np.max(2.0 ** (y + d * eps)))
        fits[q] = (eps, C)
    first = float(ps[0])
    return OperatorNormTable(entries, fits[first][0], fits[first][1], fits)


def _check_N(stack, N):
    N = int(N)
    limit = (stack.k_max - stack.k_min) / 2
    if N < 1 or N > limit:
        raise ParameterError(f"N must satisfy 1 <= N <= (k_max - k_min)/2 = {limit}, got {N}")
    return N


def band_identity(stack):
    """``I_range = (S_kmax - S_{kmin-1})^2``, the identity seen by a finite band."""
    P = kernels.as_csr(stack.S_matrices[stack.k_max] - stack.S_matrices[stack.k_min - 1])
    return kernels.compose(P, stack.weights, P)


def _DN(stack, k, N):
    ks = [j for j in range(k - N, k + N + 1) if j in stack.D_matrices]
    return kernels.as_csr(sum(stack.D_matrices[j] for j in ks))


def assemble_TN(stack, N):
    """``T_N = sum_{|j-k| <= N} D_j D_k`` over the stack's scales."""
    N = _check_N(stack, N)
    w = stack.weights
    out = None
    for k in stack.scales:
        term = kernels.compose(stack.D_matrices[k], w, _DN(stack, k, N))
        out = term if out is None else out + term
    return kernels.symmetrize(out)


@dataclass(eq=False)
class CalderonOperator:
    """``T_N``, ``R_N = I_range - T_N`` and the Neumann inverse for one ``N``."""

    N: int
    stack: object
    neumann_terms: int = 500
    residual_tol: float = 1e-10
    TN: object = None
    RN: object = None
    I_range: object = None
    _rn_norm2: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.N = _check_N(self.stack, self.N)
        if self.I_range is None:
            self.I_range = band_identity(self.stack)
        if self.TN is None:
            self.TN = assemble_TN(self.stack, self.N)
        if self.RN is None:
            self.RN = kernels.as_csr(self.I_range - self.TN)

    @property
    def rn_norm2(self) -> float:
        if self._rn_norm2 is None:
            self._rn_norm2 = op_norm(self.stack.grid, self.RN, 2)
        return self._rn_norm2

    def apply_TN(self, f):
        return kernels.apply(self.TN, self.stack.weights, f)

    def apply_RN(self, f):
        return kernels.apply(self.RN, self.stack.weights, f)


def neumann_series(apply_R, grid, f, max_terms, tol):
    """Partial sums of ``sum_m R^m f`` until the increment drops below ``tol ||f||_2``.

    Returns ``(sum, terms_used)``. Raises :class:`DivergenceError` once the
    increment norm fails to decrease over five consecutive terms.
    """
    f = np.asarray(f, dtype=float)
    total = f.copy()
    inc = f
    scale = lp_norm(grid, f, 2)
    if scale == 0:
        return total, 0
    history = [scale]
    for m in range(1, max_terms + 1):
        inc = apply_R(inc)
        total += inc
        size = lp_norm(grid, inc, 2)
        history.append(size)
        if size < tol * scale:
            return total, m
        last = history[-6:]
        if len(last) == 6 and all(b >= a for a, b in zip(last, last[1:])):
            raise DivergenceError(f"Neumann increments stopped decreasing after {m} terms")
    return total, max_terms


def apply_TN_inverse(calderon: CalderonOperator, f, check_contraction=True):
    """``(I - R_N)^{-1} f`` by the Neumann series."""
    if check_contraction and calderon.rn_norm2 >= 1:
        raise DivergenceError(f"||R_N||_2 = {calderon.rn_norm2:.4g} >= 1 for N = {calderon.N}; increase N")
    out, _ = neumann_series(calderon.apply_RN, calderon.stack.grid, f, calderon.neumann_terms, calderon.residual_tol)
    return out


@dataclass
class Reproduction:
    reconstruction: np.ndarray
    residual: float
    neumann_terms_used: int
    rn_norm2: float


def reproduce(calderon: CalderonOperator, f) -> Reproduction:
    """Reconstruct ``f`` as ``sum_k T_N^{-1} D_k^N D_k f`` and compare with ``I_range f``."""
    stack = calderon.stack
    grid = stack.grid
    f = np.asarray(f, dtype=float)
    target = kernels.apply(calderon.I_range, stack.weights, f)
    size = lp_norm(grid, target, 2)
    if size == 0:
        raise DegenerateInputError("the in-band part of f vanishes")
    if calderon.rn_norm2 >= 1:
        raise DivergenceError(f"||R_N||_2 = {calderon.rn_norm2:.4g} >= 1 for N = {calderon.N}")
    # sum_k D_k^N D_k = T_N, applied block by block.
    synth = np.zeros_like(f)
    for k in stack.scales:
        synth += kernels.apply(_DN(stack, k, calderon.N), stack.weights, stack.D(k, f))
    recon, used = neumann_series(calderon.apply_RN, grid, synth, calderon.neumann_terms, calderon.residual_tol)
    residual = lp_norm(grid, target - recon, 2) / size
    return Reproduction(recon, float(residual), used, calderon.rn_norm2)


def find_N0(stack, N_max=None):
    """Smallest admissible ``N`` with ``||R_N||_2 < 1``, or ``None``."""
    limit = int((stack.k_max - stack.k_min) // 2)
    N_max = limit if N_max is None else min(N_max, limit)
    I_range = band_identity(stack)
    for N in range(1, N_max + 1):
        if CalderonOperator(N, stack, I_range=I_range).rn_norm2 < 1:
            return N
    return None


def reproduction_sweep(stack, f, Ns, neumann_terms=500, residual_tol=1e-10):
    """Rows ``(N, residual, neumann_terms_used, rn_norm2)``; ``N`` beyond the admissible range is skipped."""
    I_range = band_identity(stack)
    limit = (stack.k_max - stack.k_min) / 2
    rows = []
    for N in Ns:
        if N < 1 or N > limit:
            continue
        op = CalderonOperator(N, stack, neumann_terms, residual_tol, I_range=I_range)
        try:
            rep = reproduce(op, f)
        except DivergenceError:
            rows.append((N, float("nan"), 0, op.rn_norm2))
            continue
        rows.append((N, rep.residual, rep.neumann_terms_used, rep.rn_norm2))
    return rows


def reproduction_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "residual", "neumann_terms_used", "rn_norm2"])
    for N, res, used, rn in rows:
        w.writerow([N, repr(float(res)), used, repr(float(rn))])
    return buf.getvalue()
