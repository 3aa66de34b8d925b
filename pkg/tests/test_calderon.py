import math

import numpy as np
import pytest
import scipy.sparse as sp

from mabesov import kernels
from mabesov.calderon import (
    CalderonOperator,
    almost_orthogonality_table,
    apply_TN_inverse,
    assemble_TN,
    band_identity,
    find_N0,
    neumann_series,
    op_norm,
    reproduce,
    reproduction_csv,
    reproduction_sweep,
)
from mabesov.errors import DegenerateInputError, DivergenceError, InsufficientDataError, ParameterError
from mabesov.measure_grid import inner, lp_norm


@pytest.fixture(scope="module")
def table512(quad512):
    return almost_orthogonality_table(quad512)


@pytest.fixture(scope="module")
def ops512(quad512):
    I = band_identity(quad512)
    return {N: CalderonOperator(N, quad512, I_range=I) for N in range(1, 6)}


def test_op_norm_identity_kernel(quad_small):
    grid = quad_small.grid
    A = sp.diags_array(1.0 / grid.weights).tocsr()
    for p in (1, 2, math.inf):
        assert op_norm(grid, A, p) == pytest.approx(1.0, rel=1e-8)
        assert op_norm(grid, kernels.dense(A), p) == pytest.approx(1.0, rel=1e-8)
        assert op_norm(grid, sp.csr_array(A.shape), p) == 0.0


def test_op_norm_scaling_and_dense_oracle(quad_small):
    grid = quad_small.grid
    D = quad_small.D_matrices[4]
    sw = np.sqrt(grid.weights)
    oracle = np.linalg.norm(sw[:, None] * kernels.dense(D) * sw[None, :], 2)
    assert op_norm(grid, D, 2) == pytest.approx(oracle, rel=1e-6)
    for p in (1, 2, math.inf):
        assert op_norm(grid, -3 * D, p) == pytest.approx(3 * op_norm(grid, D, p), rel=1e-7)


def test_op_norm_rejects_other_p(quad_small):
    with pytest.raises(ParameterError):
        op_norm(quad_small.grid, quad_small.D_matrices[3], 3)


def test_table_duality_exact(table512, quad512):
    for j in quad512.scales:
        for k in quad512.scales:
            assert table512.entries[(j, k, 1.0)] == pytest.approx(table512.entries[(k, j, math.inf)], rel=1e-12)


def test_table_shape(table512, quad512):
    for p in (1.0, 2.0, math.inf):
        eps, C = table512.fits[p]
        assert eps > 0.5 and np.isfinite(C)
        diag = [table512.entries[(k, k, p)] for k in quad512.scales]
        off = [v for (j, k, q), v in table512.entries.items() if q == p and abs(j - k) >= 3]
        assert max(off) < min(diag)
    header, first = table512.to_csv().splitlines()[:2]
    assert header == "j,k,p,norm" and first.split(",")[2] == "1"


def test_table_needs_four_scales(quad_small):
    from mabesov import build_stack

    s = build_stack(quad_small.grid, quad_small.grid.potential, 3, 5)
    with pytest.raises(InsufficientDataError):
        almost_orthogonality_table(s)


def test_full_band_sum_is_band_identity(quad256):
    w = quad256.weights
    total = sum(kernels.dense(kernels.compose(quad256.D_matrices[j], w, quad256.D_matrices[k]))
                for j in quad256.scales for k in quad256.scales)
    assert np.max(np.abs(total - kernels.dense(band_identity(quad256)))) < 1e-10


def test_TN_symmetric_and_self_adjoint(ops512, quad512, rng):
    grid = quad512.grid
    f, g = rng.standard_normal((2, grid.size))
    for op in ops512.values():
        assert abs(op.TN - op.TN.T).max() < 1e-12
        for apply in (op.apply_TN, op.apply_RN):
            lhs, rhs = inner(grid, apply(f), g), inner(grid, f, apply(g))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_N_invariant(quad512):
    with pytest.raises(ParameterError):
        assemble_TN(quad512, 0)
    with pytest.raises(ParameterError):
        CalderonOperator(6, quad512)


def test_rn_norm_decreasing(ops512):
    norms = [ops512[N].rn_norm2 for N in range(1, 6)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[0] < 1


def test_rn_contracts_on_vectors(ops512, quad512, rng):
    grid = quad512.grid
    f = rng.standard_normal(grid.size)
    for op in ops512.values():
        assert lp_norm(grid, op.apply_RN(f), 2) <= op.rn_norm2 * lp_norm(grid, f, 2) * (1 + 1e-6)


def test_find_N0(quad512):
    assert find_N0(quad512) == 1


def test_neumann_inverse_identity(ops512, quad512, rng):
    grid = quad512.grid
    f = quad512.in_band_noise(rng)
    op = ops512[2]
    u = apply_TN_inverse(op, f)
    back = u - op.apply_RN(u)
    assert lp_norm(grid, back - f, 2) <= 1e-9 * lp_norm(grid, f, 2)


def test_neumann_convergence_iff_contraction(ops512, quad512, rng):
    grid = quad512.grid
    f = rng.standard_normal(grid.size)
    good = ops512[1]
    assert good.rn_norm2 < 1
    apply_TN_inverse(good, f)
    bad = CalderonOperator(1, quad512, TN=good.TN, RN=kernels.as_csr(3.0 * good.RN), I_range=good.I_range)
    assert bad.rn_norm2 >= 1
    with pytest.raises(DivergenceError):
        apply_TN_inverse(bad, f)
    with pytest.raises(DivergenceError):
        apply_TN_inverse(bad, f, check_contraction=False)


def test_neumann_series_scalar_cases(quad_small):
    grid = quad_small.grid
    f = np.ones(grid.size)
    total, terms = neumann_series(lambda v: 0.5 * v, grid, f, 200, 1e-12)
    assert np.allclose(total, 2 * f) and terms < 60
    with pytest.raises(DivergenceError):
        neumann_series(lambda v: 1.0 * v, grid, f, 200, 1e-12)
    assert neumann_series(lambda v: v, grid, np.zeros(grid.size), 10, 1e-12)[1] == 0


def test_reproduction_residuals(quad512, rng):
    f = quad512.in_band_noise(np.random.default_rng(0))
    rows = reproduction_sweep(quad512, f, range(1, 8))
    assert [r[0] for r in rows] == [1, 2, 3, 4, 5]
    res = [r[1] for r in rows]
    assert res[2] < 0.05
    assert all(b <= a + 1e-6 for a, b in zip(res, res[1:]))
    text = reproduction_csv(rows)
    assert text.splitlines()[0] == "N,residual,neumann_terms_used,rn_norm2"


def test_band_limited_input_reproduces_better(ops512, quad512):
    white = np.random.default_rng(1).standard_normal(quad512.grid.size)
    k0 = quad512.scales[len(quad512.scales) // 2]
    banded = quad512.D(k0, white)
    for N in (1, 2, 3):
        assert reproduce(ops512[N], banded).residual < reproduce(ops512[N], white).residual


def test_residual_refinement_stable(quad256, quad512):
    f256 = quad256.in_band_noise(np.random.default_rng(0))
    f512 = quad512.in_band_noise(np.random.default_rng(0))
    a = reproduction_sweep(quad256, f256, [1, 2, 3])
    b = reproduction_sweep(quad512, f512, [1, 2, 3])
    for ra, rb in zip(a, b):
        assert 1 / 1.5 <= rb[1] / ra[1] <= 1.5


def test_reproduce_zero_input(ops512, quad512):
    with pytest.raises(DegenerateInputError):
        reproduce(ops512[1], np.zeros(quad512.grid.size))
