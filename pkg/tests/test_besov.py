import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mabesov.besov import (
    BesovParams,
    alternate_stack,
    besov_csv,
    besov_norm,
    check_admissible,
    column_norm_check,
    conjugate,
    decompose,
    duality_pairing_check,
    equivalence_csv,
    equivalence_experiment,
    lp_frame_constants,
    lp_synthesis,
    lq_norm,
    norm_equivalence,
)
from mabesov.errors import AdmissibilityError, DegenerateInputError, ParameterError, StructuralError

INF = math.inf


def triples(stack):
    e = stack.eps_fit
    return [BesovParams(0, 2, 2), BesovParams(e / 8, 1, 1), BesovParams(-e / 8, INF, INF)]


def test_params_validation_and_dual():
    with pytest.raises(ParameterError):
        BesovParams(0, 0.5, 2)
    d = BesovParams(0.1, 1, 4).dual()
    assert d == BesovParams(-0.1, INF, 4 / 3)
    assert conjugate(2) == 2 and conjugate(INF) == 1


def test_admissibility_message_cites_eps(quad_small):
    with pytest.raises(AdmissibilityError, match="measured eps = 0.5"):
        check_admissible(quad_small, BesovParams(0.2, 2, 2))
    check_admissible(quad_small, BesovParams(0.12, 2, 2))


def test_constant_has_zero_norm(quad512):
    c = np.full(quad512.grid.size, 3.7)
    for pr in triples(quad512):
        assert besov_norm(quad512, c, pr) <= 1e-9


def test_homogeneity_exact(quad512, rng):
    f = quad512.in_band_noise(rng)
    for pr in triples(quad512):
        assert besov_norm(quad512, 2 * f, pr) == 2 * besov_norm(quad512, f, pr)


def test_triangle_inequality(quad256):
    rng = np.random.default_rng(5)
    F = quad256.in_band_noise(rng, count=100)
    G = quad256.in_band_noise(rng, count=100)
    for pr in triples(quad256):
        for s in range(100):
            f, g = F[:, s], G[:, s]
            lhs = besov_norm(quad256, f + g, pr)
            assert lhs <= (besov_norm(quad256, f, pr) + besov_norm(quad256, g, pr)) * (1 + 1e-12)


def test_decomposition_recomputes(quad256, rng):
    f = quad256.in_band_noise(rng)
    for pr in triples(quad256):
        d = decompose(quad256, f, pr)
        assert d.recompute(quad256.grid) == pytest.approx(d.norm, rel=1e-12)
        assert d.norm == pytest.approx(besov_norm(quad256, f, pr), rel=1e-12)
    text = besov_csv([decompose(quad256, f, pr) for pr in triples(quad256)])
    lines = text.splitlines()
    assert lines[0] == "alpha,p,q,k,block_norm,total_norm"
    assert lines[-1].split(",")[1] == "inf"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=12), st.floats(1, 8), st.floats(1, 8))
def test_lq_monotone_in_q(vals, q1, q2):
    lo, hi = sorted((q1, q2))
    assert lq_norm(vals, hi) <= lq_norm(vals, lo) * (1 + 1e-12) + 1e-300
    assert lq_norm(vals, INF) <= lq_norm(vals, hi) * (1 + 1e-12) + 1e-300


def test_zero_norm_implies_zero_blocks(quad256, rng):
    f = quad256.in_band_noise(rng)
    pr = BesovParams(0, 2, 2)
    d = decompose(quad256, f, pr)
    assert d.norm > 0
    assert decompose(quad256, np.zeros_like(f), pr).norm == 0


def test_self_equivalence(quad256, rng):
    f = quad256.in_band_noise(rng)
    assert norm_equivalence(quad256, quad256, f, BesovParams(0, 2, 2)) == (1.0, 1.0)


def test_equivalence_scale_invariant(quad256, rng):
    other = alternate_stack(quad256)
    f = quad256.in_band_noise(rng)
    pr = BesovParams(0, 2, 2)
    a = norm_equivalence(quad256, other, f, pr)
    b = norm_equivalence(quad256, other, 5 * f, pr)
    assert a == pytest.approx(b, rel=1e-12)


def test_equivalence_mismatched_grids(quad256, quad512, rng):
    with pytest.raises(StructuralError):
        norm_equivalence(quad256, quad512, np.zeros(256), BesovParams(0, 2, 2))


def test_equivalence_zero(quad256):
    with pytest.raises(DegenerateInputError):
        norm_equivalence(quad256, quad256, np.zeros(quad256.grid.size), BesovParams(0, 2, 2))


def test_equivalence_constant(quad256):
    rep = equivalence_experiment(quad256, alternate_stack(quad256), BesovParams(0, 2, 2), ensemble=20)
    assert 1 <= rep.K <= 10
    assert equivalence_csv(rep).splitlines()[0] == "sample,ratio_ab,ratio_ba"


def test_column_norm_p1_independent_of_volume(quad256):
    e = quad256.eps_fit
    rep = column_norm_check(quad256, BesovParams(e / 8, 1, 1))
    assert np.isfinite(rep.max_ratio) and rep.max_ratio > 0
    assert len({k for k, _, _ in rep.rows}) >= 3


def test_lp_frame_and_duality(quad256):
    upper, lower = lp_frame_constants(quad256)
    assert 0 < lower <= upper <= 1 + 1e-9
    rep = duality_pairing_check(quad256, BesovParams(0, 2, 2), ensemble_size=50)
    # Cauchy-Schwarz with the lower frame constant
    assert rep.constant <= rep.lp_constant * (1 + 1e-9)
    assert rep.lp_constant == pytest.approx(1 / lower, rel=0.25)
    assert rep.lp_constant / 4 <= rep.constant <= 4 * rep.lp_constant


def test_synthesis(quad256, rng):
    f = quad256.in_band_noise(rng)
    pr = BesovParams(0, 2, 2)
    gk = {k: quad256.D(k, f) for k in quad256.scales}
    g, ratio = lp_synthesis(quad256, gk, pr)
    assert np.isfinite(ratio)
    expected = sum(quad256.D(k, quad256.D(k, f)) for k in quad256.scales)
    assert np.allclose(g, expected)
    _, ratio2 = lp_synthesis(quad256, {k: 3 * v for k, v in gk.items()}, pr)
    assert ratio2 == pytest.approx(ratio, rel=1e-12)
    with pytest.raises(DegenerateInputError):
        lp_synthesis(quad256, {k: 0 * v for k, v in gk.items()}, pr)
    with pytest.raises(ParameterError):
        lp_synthesis(quad256, {99: f}, pr)


def test_single_block_synthesis_bounded_by_orthogonality(quad256, rng):
    from mabesov.calderon import almost_orthogonality_table

    table = almost_orthogonality_table(quad256, p=2)
    pr = BesovParams(0, 2, 2)
    k0 = quad256.scales[len(quad256.scales) // 2]
    v = rng.standard_normal(quad256.grid.size)
    _, ratio = lp_synthesis(quad256, {k0: v}, pr)
    bound = math.sqrt(sum(table.entries[(j, k0, 2.0)] ** 2 for j in quad256.scales))
    assert ratio <= bound * (1 + 1e-6)
